#include <doctest.h>

#include <cipherpipe/common.hpp>
#include <cipherpipe/glyph_features.hpp>
#include <cipherpipe/synth_cipher.hpp>

#include <filesystem>
#include <random>

using namespace cipherpipe;

namespace {

Grid random_grid(Rng& rng, int r, int c, double density) {
  Grid g(r, c);
  std::bernoulli_distribution ink(density);
  for (double& v : g.values) v = ink(rng) ? 1.0 : 0.0;
  return g;
}

// Maximum over every offset at which the grids overlap, written out directly.
double brute_correlation(const Grid& a, const Grid& b) {
  double best = -1e300;
  for (int u = -(a.rows - 1); u < b.rows; ++u) {
    for (int v = -(a.cols - 1); v < b.cols; ++v) {
      double s = 0;
      for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) {
          const int bi = i + u, bj = j + v;
          if (bi >= 0 && bj >= 0 && bi < b.rows && bj < b.cols) s += a(i, j) * b(bi, bj);
        }
      }
      best = std::max(best, s);
    }
  }
  return best;
}

std::vector<GlyphImage> synth_glyphs(int count, std::uint64_t seed) {
  GlyphSetOptions o;
  o.count = count;
  o.seed = seed;
  const auto set = make_glyph_set(o);
  std::vector<GlyphImage> out;
  for (const auto& g : set.glyphs) out.push_back(normalize_glyph(g));
  return out;
}

}  // namespace

TEST_CASE("normalize_glyph sizes") {
  Grid same(105, 105);
  same(50, 50) = 1.0;
  CHECK(normalize_glyph(same).grid == same);

  Grid big(210, 210, 1.0);
  const auto half = normalize_glyph(big).grid;
  CHECK(half.rows == 105);
  CHECK(half(0, 0) == doctest::Approx(1.0));

  // 50 x 100 (w x h) scales by 1.05 to 52.5 -> 52 columns, centred.
  Grid tall(100, 50, 1.0);
  const auto g = normalize_glyph(tall).grid;
  int first = -1, last = -1;
  for (int c = 0; c < 105; ++c) {
    if (g(52, c) > 0.5) {
      if (first < 0) first = c;
      last = c;
    }
  }
  CHECK(last - first + 1 == 52);
  CHECK(first == (105 - 52) / 2);
}

TEST_CASE("normalize_glyph is idempotent") {
  for (const auto& g : synth_glyphs(6, 3)) {
    CHECK(normalize_glyph(g.grid).grid == g.grid);
  }
}

TEST_CASE("correlation matches brute force on toy grids") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int ra = std::uniform_int_distribution<int>(1, 5)(rng);
    const int ca = std::uniform_int_distribution<int>(1, 5)(rng);
    const Grid a = random_grid(rng, ra, ca, 0.5);
    const Grid b = random_grid(rng, std::uniform_int_distribution<int>(ra, 7)(rng),
                               std::uniform_int_distribution<int>(ca, 7)(rng), 0.5);
    CHECK(max_cross_correlation(a, b) == doctest::Approx(brute_correlation(a, b)));
    CHECK(max_cross_correlation(a, b) == max_cross_correlation(b, a));
  }
}

TEST_CASE("simmat similarity properties") {
  const auto glyphs = synth_glyphs(5, 9);
  GlyphImage blank{Grid(kGlyphSize, kGlyphSize), std::nullopt};
  for (const auto& a : glyphs) {
    CHECK(simmat_similarity(blank, a) == 0.0);
    double self_sq = 0;
    for (double v : a.grid.values) self_sq += v * v;
    CHECK(simmat_similarity(a, a) >= self_sq - 1e-9);
    for (const auto& b : glyphs) CHECK(simmat_similarity(a, b) == simmat_similarity(b, a));
  }
}

TEST_CASE("simmat similarity ignores translation of b") {
  Rng rng(23);
  Grid a(kGlyphSize, kGlyphSize);
  Grid b(kGlyphSize, kGlyphSize);
  for (int i = 40; i < 60; ++i) {
    for (int j = 45; j < 55; ++j) {
      a(i, j) = 1.0;
      if ((i + j) % 3) b(i, j) = 1.0;
    }
  }
  const GlyphImage ga{a, std::nullopt};
  const double base = simmat_similarity(ga, GlyphImage{b, std::nullopt});
  for (int trial = 0; trial < 5; ++trial) {
    const int du = std::uniform_int_distribution<int>(-30, 30)(rng);
    const int dv = std::uniform_int_distribution<int>(-30, 30)(rng);
    Grid moved(kGlyphSize, kGlyphSize);
    for (int i = 0; i < kGlyphSize; ++i) {
      for (int j = 0; j < kGlyphSize; ++j) {
        if (b(i, j) > 0) moved(i + du, j + dv) = b(i, j);
      }
    }
    CHECK(simmat_similarity(ga, GlyphImage{moved, std::nullopt}) == doctest::Approx(base));
  }
}

TEST_CASE("simmat feature matrix") {
  auto glyphs = synth_glyphs(4, 12);
  const auto one = simmat_features(std::span(glyphs.data(), 1));
  CHECK(one.rows.rows() == 1);
  CHECK(one.rows(0, 0) == simmat_similarity(glyphs[0], glyphs[0]));

  const auto f = simmat_features(glyphs);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) CHECK(f.rows(i, j) == simmat_similarity(glyphs[i], glyphs[j]));
  }

  glyphs.push_back(glyphs[1]);
  const auto g = simmat_features(glyphs);
  CHECK(g.rows.row(1) == g.rows.row(4));
}

TEST_CASE("rawpixel features") {
  Grid half(kGlyphSize, kGlyphSize);
  for (int i = 0; i < kGlyphSize; ++i) {
    for (int j = 0; j < 21; ++j) half(i, j) = 1.0;
  }
  const std::vector<GlyphImage> g{{half, std::nullopt}, {Grid(kGlyphSize, kGlyphSize), std::nullopt}};
  const auto whole = rawpixel_features(g, 105);
  CHECK(whole.dim() == 1);
  CHECK(whole.rows(0, 0) == doctest::Approx(21.0 / 105.0));
  CHECK(whole.rows(1, 0) == 0.0);

  const auto blocks = rawpixel_features(g, 21);
  CHECK(blocks.dim() == 25);
  CHECK(blocks.rows(0, 0) == doctest::Approx(1.0));
  CHECK(blocks.rows(0, 1) == doctest::Approx(0.0));
  CHECK(blocks.rows.row(1).isZero());

  CHECK(rawpixel_features(g, 10).dim() == 121);
}

TEST_CASE("feature file round trip and count check") {
  const auto glyphs = synth_glyphs(3, 4);
  const auto f = rawpixel_features(glyphs, 15);
  const auto path = std::filesystem::temp_directory_path() / "cipherpipe_features_rt.json";
  export_features(path, f);
  const auto back = import_features(path, 3);
  CHECK(back.rows == f.rows);
  CHECK(back.extractor == ExtractorTag::external);
  CHECK_THROWS_AS(import_features(path, 4), Error);
  std::filesystem::remove(path);
}

TEST_CASE("pca keeps the leading structure") {
  Rng rng(31);
  std::normal_distribution<double> n(0.0, 1.0);
  FeatureMatrix f;
  f.rows.resize(40, 6);
  for (int i = 0; i < 40; ++i) {
    const double t = n(rng);
    for (int j = 0; j < 6; ++j) f.rows(i, j) = t * (j + 1) + 0.01 * n(rng);
  }
  const auto r = pca_reduce(f, 2);
  CHECK(r.dim() == 2);
  CHECK(r.count() == 40);
  const double var0 = (r.rows.col(0).array() - r.rows.col(0).mean()).square().sum();
  const double var1 = (r.rows.col(1).array() - r.rows.col(1).mean()).square().sum();
  CHECK(var0 > 100 * var1);
  const auto again = pca_reduce(f, 2);
  CHECK(again.rows == r.rows);
}
