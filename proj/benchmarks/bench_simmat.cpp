#include <benchmark/benchmark.h>

#include <cipherpipe/glyph_features.hpp>
#include <cipherpipe/synth_cipher.hpp>

using namespace cipherpipe;

namespace {

std::vector<GlyphImage> glyphs(int count) {
  GlyphSetOptions o;
  o.count = count;
  o.mode = WidthMode::variable;
  o.seed = 11;
  std::vector<GlyphImage> out;
  for (const auto& g : make_glyph_set(o).glyphs) out.push_back(normalize_glyph(g));
  return out;
}

void BM_SimmatPair(benchmark::State& state) {
  const auto g = glyphs(2);
  for (auto _ : state) benchmark::DoNotOptimize(simmat_similarity(g[0], g[1]));
}
BENCHMARK(BM_SimmatPair)->Unit(benchmark::kMillisecond);

// Distinct glyphs only; repeated instances are deduplicated by the extractor.
void BM_SimmatMatrix(benchmark::State& state) {
  const auto g = glyphs(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(simmat_features(g));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SimmatMatrix)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond)
    ->Complexity(benchmark::oNSquared);

void BM_Rawpixel(benchmark::State& state) {
  const auto g = glyphs(32);
  for (auto _ : state) benchmark::DoNotOptimize(rawpixel_features(g, 5));
}
BENCHMARK(BM_Rawpixel)->Unit(benchmark::kMillisecond);

}  // namespace
