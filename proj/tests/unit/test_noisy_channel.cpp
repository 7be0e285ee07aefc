#include <doctest.h>

#include <cipherpipe/common.hpp>
#include <cipherpipe/alphabet.hpp>
#include <cipherpipe/char_lm.hpp>
#include <cipherpipe/eval_metrics.hpp>
#include <cipherpipe/lattice.hpp>
#include <cipherpipe/noisy_channel.hpp>
#include <cipherpipe/synth_cipher.hpp>

#include <cmath>
#include <filesystem>
#include <random>

using namespace cipherpipe;

namespace {

std::vector<std::string> training_texts() {
  std::vector<std::string> texts;
  const std::string dir = std::string(CIPHERPIPE_DATA_DIR) + "/corpus/english/";
  for (const char* f : {"train_01.txt", "train_02.txt", "train_03.txt", "train_04.txt"}) {
    texts.push_back(read_text_file(dir + f));
  }
  return texts;
}

const NGramLM& english_bigram() {
  static const NGramLM lm = lm_train_text(training_texts(), english_alphabet(), 2, 0.1);
  return lm;
}

// Simple substitution of a heldout passage: letter e -> symbol rank of e.
struct Toy {
  std::vector<int> plain;
  Transcription t;
  std::vector<int> letter_to_symbol;
};

Toy toy_cipher(std::size_t length) {
  const auto en = english_alphabet();
  const auto held = en.normalize(read_text_file(std::string(CIPHERPIPE_DATA_DIR) +
                                                "/corpus/english/heldout.txt"));
  Toy toy;
  toy.plain.assign(held.begin(), held.begin() + static_cast<std::ptrdiff_t>(length));
  toy.letter_to_symbol.assign(26, -1);
  int K = 0;
  for (int e : toy.plain) {
    if (toy.letter_to_symbol[e] < 0) toy.letter_to_symbol[e] = K++;
  }
  for (int e : toy.plain) toy.t.ids.push_back(toy.letter_to_symbol[e]);
  toy.t.K = K;
  return toy;
}

}  // namespace

TEST_CASE("channel constructors keep rows normalised") {
  Rng rng(1);
  CHECK(ChannelMatrix::uniform(4, 3).rows_normalized());
  for (double conc : {0.1, 1.0, 10.0}) {
    const auto ch = ChannelMatrix::random(5, 7, conc, rng);
    CHECK(ch.rows_normalized());
    CHECK((ch.p.array() >= 0).all());
  }
  const auto m = ChannelMatrix::from_mapping({2, -1, 0}, 3);
  CHECK(m.p(0, 2) == 1.0);
  CHECK(m.p(1, 1) == doctest::Approx(1.0 / 3));
  CHECK(m.rows_normalized());
}

TEST_CASE("one-symbol cipher gives a column of ones") {
  const Transcription t{{0, 0, 0, 0, 0}, 1};
  ChannelEmOptions o;
  o.restarts = 2;
  const auto r = channel_em(t, english_bigram(), o);
  CHECK(r.channel.cols() == 1);
  for (int e = 0; e < r.channel.rows(); ++e) CHECK(r.channel.p(e, 0) == doctest::Approx(1.0));
}

TEST_CASE("identity channel decodes the inverted transcription") {
  const auto toy = toy_cipher(80);
  const auto ch = ChannelMatrix::from_mapping(toy.letter_to_symbol, toy.t.K);
  // Unused letters must not be able to emit anything.
  ChannelMatrix hard = ch;
  for (int e = 0; e < 26; ++e) {
    if (toy.letter_to_symbol[e] < 0) hard.p.row(e).setZero();
  }
  const auto r = viterbi_decode(toy.t, english_bigram(), hard);
  CHECK(r.plaintext == toy.plain);
}

TEST_CASE("EM from the gold channel does not lose likelihood") {
  const auto toy = toy_cipher(300);
  const auto& lm = english_bigram();
  const auto gold = ChannelMatrix::from_mapping(toy.letter_to_symbol, toy.t.K);
  const double before = channel_log_likelihood(toy.t, lm, gold);
  const LmLattice lattice(lm, 1.0);
  const auto r = channel_em_from(toy.t, lattice, gold, 30, 0.0);
  CHECK(r.log_likelihood >= before - 1e-9 * std::abs(before));
  CHECK(r.channel.rows_normalized());
}

TEST_CASE("EM trace is monotone and rows stay normalised") {
  const auto toy = toy_cipher(200);
  const auto& lm = english_bigram();
  for (int order : {2, 3}) {
    const auto model = order == 2 ? lm : lm_train_text(training_texts(), english_alphabet(), 3, 0.1);
    for (double exponent : {1.0, 2.0}) {
      ChannelEmOptions o;
      o.restarts = 3;
      o.max_iters = 25;
      o.lm_exponent = exponent;
      reset_em_audit();
      const auto r = channel_em(toy.t, model, o);
      CHECK(r.channel.rows_normalized());
      CHECK(em_audit().violations == 0);
      CHECK(em_audit().runs >= 3);
      CHECK(r.restarts.size() == 3);
    }
  }
}

TEST_CASE("viterbi output scores at least the gold plaintext") {
  const auto toy = toy_cipher(250);
  const auto& lm = english_bigram();
  ChannelEmOptions o;
  o.restarts = 4;
  o.max_iters = 60;
  const auto em = channel_em(toy.t, lm, o);
  for (double exponent : {1.0, 3.0}) {
    const auto r = viterbi_decode(toy.t, lm, em.channel, exponent);
    const LmLattice lattice(lm, exponent);
    const auto emis = channel_log_emissions(toy.t, em.channel);
    CHECK(r.score >= lattice.path_score(toy.plain, emis) - 1e-9);
    CHECK(r.score == doctest::Approx(lattice.path_score(r.plaintext, emis)));
  }
}

TEST_CASE("restarts are reproducible and the best one wins") {
  const auto toy = toy_cipher(150);
  ChannelEmOptions o;
  o.restarts = 5;
  o.max_iters = 20;
  o.seed = 42;
  const auto a = channel_em(toy.t, english_bigram(), o);
  const auto b = channel_em(toy.t, english_bigram(), o);
  CHECK(a.log_likelihood == b.log_likelihood);
  CHECK(a.channel.p == b.channel.p);
  for (const auto& r : a.restarts) CHECK(r.log_likelihood <= a.log_likelihood);
}

TEST_CASE("gold NED is recorded per restart") {
  const auto toy = toy_cipher(150);
  ChannelEmOptions o;
  o.restarts = 3;
  o.max_iters = 20;
  o.gold = toy.plain;
  const auto r = channel_em(toy.t, english_bigram(), o);
  for (const auto& rec : r.restarts) {
    REQUIRE(rec.ned.has_value());
    CHECK(*rec.ned >= 0.0);
  }
}

TEST_CASE("gold transcription input deciphers a long passage") {
  // Bigram model on four training files and 653 letters; random restarts
  // need a few dozen tries to find the good basin.
  const auto toy = toy_cipher(653);
  Decipher3Options o;
  o.em.restarts = 60;
  o.em.seed = 3;
  const auto r = decipher3(toy.t, english_bigram(), o);
  CHECK(ned(r.result.plaintext, toy.plain) <= 0.25);
}

TEST_CASE("seeded trigram run starts from the bigram channel") {
  const auto toy = toy_cipher(120);
  const auto tri = lm_train_text(training_texts(), english_alphabet(), 3, 0.1);
  Decipher3Options o;
  o.em.restarts = 1;
  o.em.max_iters = 10;
  ChannelEmOptions seed;
  seed.restarts = 2;
  seed.max_iters = 10;
  const auto r = decipher3_seeded(toy.t, tri, english_bigram(), o, seed);
  CHECK(r.em.restarts.size() == 1);
  const auto bi_only = channel_em(toy.t, english_bigram(), seed);
  const auto direct = channel_em_from(toy.t, LmLattice(tri, 1.0), bi_only.channel, 10, o.em.tol);
  CHECK(r.em.log_likelihood == doctest::Approx(direct.log_likelihood));

  const auto other = lm_train_text(training_texts(), Alphabet("abc", U"abc"), 2, 0.1);
  CHECK_THROWS_AS(decipher3_seeded(toy.t, tri, other, o, seed), Error);
}

TEST_CASE("channel JSON round trip and input checks") {
  Rng rng(5);
  const auto ch = ChannelMatrix::random(26, 4, 1.0, rng);
  const auto path = std::filesystem::temp_directory_path() / "cipherpipe_channel_rt.json";
  write_channel(path, ch, english_alphabet());
  const auto back = read_channel(path);
  CHECK((back.p - ch.p).cwiseAbs().maxCoeff() < 1e-15);
  std::filesystem::remove(path);

  ChannelEmOptions o;
  CHECK_THROWS_AS(channel_em(Transcription{{}, 3}, english_bigram(), o), Error);
  CHECK_THROWS_AS(channel_em(Transcription{{0, 3}, 3}, english_bigram(), o), Error);
  o.init = ChannelMatrix::uniform(26, 2);
  CHECK_THROWS_AS(channel_em(Transcription{{0, 1, 2}, 3}, english_bigram(), o), Error);
}

TEST_CASE("homophonic transcription runs through the same machinery") {
  const auto en = english_alphabet();
  const auto toy = toy_cipher(200);
  std::vector<int> used(toy.plain.begin(), toy.plain.end());
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());
  const auto freq = unigram_frequencies(std::vector<std::vector<int>>{toy.plain}, 26);
  const auto key = make_key(used, 26, static_cast<int>(used.size()) + 6, KeyMode::homophonic, 3, freq);
  const Transcription t{encipher(toy.plain, key, 4), key.symbols};
  ChannelEmOptions o;
  o.restarts = 2;
  o.max_iters = 20;
  const auto r = channel_em(t, english_bigram(), o);
  CHECK(r.channel.cols() == key.symbols);
  CHECK(r.channel.rows_normalized());
}
