#include <doctest.h>

#include <cipherpipe/common.hpp>
#include <cipherpipe/eval_metrics.hpp>

#include <random>

using namespace cipherpipe;

namespace {

std::vector<int> random_ids(Rng& rng, int n, int types) {
  std::uniform_int_distribution<int> pick(0, types - 1);
  std::vector<int> v(static_cast<std::size_t>(n));
  for (int& x : v) x = pick(rng);
  return v;
}

}  // namespace

TEST_CASE("edit distance and NED basics") {
  const std::vector<int> empty;
  const std::vector<int> abc{0, 1, 2};
  CHECK(edit_distance(empty, abc) == 3);
  CHECK(edit_distance(abc, abc) == 0);
  CHECK(edit_distance(std::vector<int>{0, 2}, abc) == 1);
  CHECK(edit_distance(U"kitten", U"sitting") == 3);
  CHECK(ned("sitting", "kitten") == doctest::Approx(3.0 / 6));
  CHECK(ned("\xc3\xa4" "b", "ab") == doctest::Approx(0.5));
  CHECK_THROWS_AS(ned(abc, empty), Error);
}

TEST_CASE("alignment reproduces the distance") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_ids(rng, std::uniform_int_distribution<int>(0, 9)(rng), 3);
    const auto b = random_ids(rng, std::uniform_int_distribution<int>(0, 9)(rng), 3);
    std::size_t cost = 0, hyp_seen = 0, ref_seen = 0;
    for (const auto& p : align(a, b)) {
      if (p.op != AlignOp::match) ++cost;
      if (p.hyp_pos >= 0) ++hyp_seen;
      if (p.ref_pos >= 0) ++ref_seen;
      if (p.op == AlignOp::match) CHECK(a[p.hyp_pos] == b[p.ref_pos]);
    }
    CHECK(cost == edit_distance(a, b));
    CHECK(hyp_seen == a.size());
    CHECK(ref_seen == b.size());
  }
}

TEST_CASE("parse_symbols") {
  const auto s = parse_symbols("c0 c1  c0\nc2");
  CHECK(s.types == std::vector<std::string>{"c0", "c1", "c2"});
  CHECK(s.ids == std::vector<int>{0, 1, 0, 2});
  const auto chars = parse_symbols("abca");
  CHECK(chars.types.size() == 3);
  CHECK(chars.ids == std::vector<int>{0, 1, 2, 0});
  CHECK(parse_symbols("  ").ids.empty());
}

TEST_CASE("NEDoA worked example") {
  const auto autos = parse_symbols("c0 c1 c2 c3 c3 c4 c5 c3 c6 c6 c7 c8");
  const auto gold = parse_symbols("z o d i a c k i l l e r");
  const int G = static_cast<int>(gold.types.size());
  for (auto method : {NedoaMethod::em, NedoaMethod::exhaustive}) {
    if (method == NedoaMethod::exhaustive) {
      CHECK_THROWS_AS(nedoa(autos.ids, gold.ids, G, {method}), Error);
      continue;
    }
    const auto r = nedoa(autos.ids, gold.ids, G);
    CHECK(r.score == doctest::Approx(1.0 / 12).epsilon(1e-9));
    const auto report = nedoa_report(r, autos.ids, gold, autos.types);
    CHECK(report["mapping"]["c0"] == "z");
    CHECK(report["mapping"]["c3"] == "i");
    CHECK(report["mapping"]["c6"] == "l");
    CHECK(report["mapping"]["c8"] == "r");
    CHECK(report["confusion"]["c3"]["i"] == 2);
    CHECK(report["confusion"]["c3"]["a"] == 1);
  }
}

TEST_CASE("NEDoA is invariant to relabelling and bounded by the identity map") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto gold = random_ids(rng, 30, 4);
    auto autos = gold;
    for (auto& a : autos) {
      if (std::bernoulli_distribution(0.2)(rng)) a = std::uniform_int_distribution<int>(0, 5)(rng);
    }
    const std::vector<int> perm{3, 5, 0, 1, 4, 2};
    std::vector<int> relabelled;
    for (int a : autos) relabelled.push_back(perm[a]);
    NedoaOptions ex;
    ex.method = NedoaMethod::exhaustive;
    const auto r1 = nedoa(autos, gold, 4, ex);
    const auto r2 = nedoa(relabelled, gold, 4, ex);
    CHECK(r1.score == doctest::Approx(r2.score));
    // Identity map where the ids fit inside the gold types.
    std::vector<int> clipped;
    for (int a : autos) clipped.push_back(a < 4 ? a : 0);
    CHECK(r1.score <= ned(clipped, gold) + 1e-12);
    CHECK(ned(apply_mapping(autos, r1.mapping), gold) == doctest::Approx(r1.score));
  }
}

TEST_CASE("NEDoA EM trace never increases") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto gold = random_ids(rng, 40, 6);
    const auto autos = random_ids(rng, 40, 9);
    const auto r = nedoa(autos, gold, 6);
    for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1] + 1e-12);
    CHECK(r.score <= r.trace.back() + 1e-12);
  }
}

TEST_CASE("apply_mapping") {
  CHECK(apply_mapping(std::vector<int>{0, 2, 2}, std::vector<int>{5, -1, 1}) ==
        std::vector<int>{5, 1, 1});
  CHECK_THROWS_AS(apply_mapping(std::vector<int>{3}, std::vector<int>{0}), Error);
}
