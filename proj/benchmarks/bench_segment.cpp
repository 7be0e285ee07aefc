#include <benchmark/benchmark.h>

#include <cipherpipe/segmenter.hpp>
#include <cipherpipe/synth_cipher.hpp>

using namespace cipherpipe;

namespace {

SynthCipher page(int letters, WidthMode mode) {
  std::vector<int> plain;
  for (int i = 0; i < letters; ++i) plain.push_back((i * 7) % 22);
  SynthOptions o;
  o.seed = 5;
  o.glyphs.mode = mode;
  return synth_cipher(plain, english_alphabet(), o);
}

void BM_SegmentRow(benchmark::State& state) {
  const auto s = page(40, WidthMode::variable);
  const auto bands = segment_rows(s.rendered.page, 3, 1);
  const SegmentationParams p;
  for (auto _ : state) benchmark::DoNotOptimize(segment_row(s.rendered.page, bands.front(), p));
}
BENCHMARK(BM_SegmentRow)->Unit(benchmark::kMillisecond);

void BM_SegmentPage(benchmark::State& state) {
  const auto mode = state.range(0) ? WidthMode::variable : WidthMode::fixed;
  const auto s = page(653, mode);
  const SegmentationParams p;
  for (auto _ : state) benchmark::DoNotOptimize(segment_page(s.rendered.page, p));
  state.SetLabel(to_string(mode));
}
BENCHMARK(BM_SegmentPage)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
