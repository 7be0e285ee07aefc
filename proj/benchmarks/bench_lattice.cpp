#include <benchmark/benchmark.h>

#include <cipherpipe/char_lm.hpp>
#include <cipherpipe/lattice.hpp>
#include <cipherpipe/noisy_channel.hpp>

#include <random>

using namespace cipherpipe;

namespace {

const NGramLM& model(int order) {
  static const auto load = [](int n) {
    std::vector<std::string> texts;
    for (const char* f : {"train_01.txt", "train_02.txt", "train_03.txt"}) {
      texts.push_back(read_text_file(std::string(CIPHERPIPE_DATA_DIR) + "/corpus/english/" + f));
    }
    return lm_train_text(texts, english_alphabet(), n, 0.01);
  };
  static const NGramLM bigram = load(2);
  static const NGramLM trigram = load(3);
  return order == 2 ? bigram : trigram;
}

RowMatrix emissions(Eigen::Index T, int V) {
  Rng rng(3);
  std::normal_distribution<double> z(0.0, 2.0);
  RowMatrix e(T, V);
  for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = z(rng);
  return e;
}

void BM_ForwardBackward(benchmark::State& state) {
  const auto& lm = model(static_cast<int>(state.range(0)));
  const LmLattice lattice(lm, 1.0);
  const auto e = emissions(653, lm.letters());
  for (auto _ : state) benchmark::DoNotOptimize(lattice.forward_backward(e));
  state.SetLabel(state.range(0) == 2 ? "bigram" : "trigram");
}
BENCHMARK(BM_ForwardBackward)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_Viterbi(benchmark::State& state) {
  const auto& lm = model(static_cast<int>(state.range(0)));
  const LmLattice lattice(lm, 3.0);
  const auto e = emissions(653, lm.letters());
  for (auto _ : state) benchmark::DoNotOptimize(lattice.viterbi(e));
  state.SetLabel(state.range(0) == 2 ? "bigram" : "trigram");
}
BENCHMARK(BM_Viterbi)->Arg(2)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_ChannelEmRestart(benchmark::State& state) {
  Rng rng(9);
  std::uniform_int_distribution<int> pick(0, 21);
  Transcription t;
  t.K = 22;
  for (int i = 0; i < 653; ++i) t.ids.push_back(pick(rng));
  const LmLattice lattice(model(2), 1.0);
  const auto init = ChannelMatrix::random(26, 22, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(channel_em_from(t, lattice, init, 20, 0.0));
}
BENCHMARK(BM_ChannelEmRestart)->Unit(benchmark::kMillisecond);

}  // namespace
