#include "oracles.hpp"

#include <cipherpipe/alphabet.hpp>
#include <cipherpipe/char_lm.hpp>
#include <cipherpipe/common.hpp>
#include <cipherpipe/eval_metrics.hpp>
#include <cipherpipe/lattice.hpp>
#include <cipherpipe/page_model.hpp>
#include <cipherpipe/segmenter.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

namespace cipherpipe::oracle {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double gauss(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

PageBitmap random_band_page(Rng& rng, int W, int H) {
  PageBitmap page(W, H);
  std::uniform_int_distribution<int> n_strokes(0, W / 3);
  const int strokes = n_strokes(rng);
  for (int s = 0; s < strokes; ++s) {
    const int x0 = std::uniform_int_distribution<int>(0, W - 1)(rng);
    const int w = std::uniform_int_distribution<int>(1, 3)(rng);
    const int y0 = std::uniform_int_distribution<int>(0, H - 1)(rng);
    const int h = std::uniform_int_distribution<int>(1, H)(rng);
    const int lean = std::uniform_int_distribution<int>(-1, 1)(rng);
    for (int y = y0; y < std::min(H, y0 + h); ++y) {
      const int shift = lean * (y - y0) / 3;
      for (int x = x0 + shift; x < x0 + shift + w; ++x) {
        if (x >= 0 && x < W) page.set(x, y, true);
      }
    }
  }
  std::bernoulli_distribution speck(0.03);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (speck(rng)) page.set(x, y, true);
    }
  }
  return page;
}

// Fewest ink pixels any admissible curve crosses at column x.
int min_ink_at(const PageBitmap& page, const RowBand& band, int x,
               const std::vector<CutCurve>& family) {
  int best = std::numeric_limits<int>::max();
  for (CutCurve c : family) {
    c.anchor = x;
    int ink = 0;
    for (int y = 0; y < band.height(); ++y) {
      const int cx = static_cast<int>(std::lround(c.anchor + c.slope * y + c.cubic * y * y * y));
      if (cx >= 0 && cx < page.width() && page.ink(cx, band.y_top + y)) ++ink;
    }
    best = std::min(best, ink);
  }
  return best;
}

std::size_t naive_edit(const std::vector<int>& a, std::size_t i, const std::vector<int>& b,
                       std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const std::size_t sub = naive_edit(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  const std::size_t del = naive_edit(a, i + 1, b, j) + 1;
  const std::size_t ins = naive_edit(a, i, b, j + 1) + 1;
  return std::min({sub, del, ins});
}

std::size_t dp_edit(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      d[i][j] = std::min({d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1), d[i - 1][j] + 1,
                          d[i][j - 1] + 1});
    }
  }
  return d[a.size()][b.size()];
}

std::vector<int> random_seq(Rng& rng, int len, int types) {
  std::uniform_int_distribution<int> pick(0, types - 1);
  std::vector<int> s(static_cast<std::size_t>(len));
  for (int& v : s) v = pick(rng);
  return s;
}

NGramLM random_lm(Rng& rng, int order) {
  const Alphabet abc("abc", U"abc");
  std::vector<std::vector<int>> seqs;
  for (int i = 0; i < 4; ++i) seqs.push_back(random_seq(rng, 12, 3));
  const double delta = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
  return lm_train(seqs, abc, order, delta);
}

RowMatrix random_emissions(Rng& rng, int T, int V) {
  std::uniform_real_distribution<double> u(-6.0, 0.0);
  RowMatrix e(T, V);
  for (int t = 0; t < T; ++t) {
    for (int v = 0; v < V; ++v) e(t, v) = u(rng);
  }
  return e;
}

// Calls f(sequence) for every sequence of length T over V letters.
void for_each_sequence(int T, int V, const std::function<void(const std::vector<int>&)>& f) {
  std::vector<int> s(static_cast<std::size_t>(T), 0);
  while (true) {
    f(s);
    int k = 0;
    for (; k < T; ++k) {
      if (++s[k] < V) break;
      s[k] = 0;
    }
    if (k == T) return;
  }
}

double enumerated_score(const NGramLM& lm, double exponent, const RowMatrix& em,
                        const std::vector<int>& s) {
  double score = exponent * lm_logprob(lm, s);
  for (std::size_t t = 0; t < s.size(); ++t) score += em(static_cast<Eigen::Index>(t), s[t]);
  return score;
}

std::string summary(const Report& r) {
  std::ostringstream out;
  out << r.agree << "/" << r.cases << " agree, " << r.violations << " violations, worst "
      << r.worst;
  return out.str();
}

}  // namespace

Report segment_row_vs_enumeration(int cases, std::uint64_t seed) {
  Report r{"segment_row vs enumeration"};
  r.cases = cases;
  Rng rng(seed);
  for (int c = 0; c < cases; ++c) {
    const int W = std::uniform_int_distribution<int>(6, 40)(rng);
    const int H = std::uniform_int_distribution<int>(3, 12)(rng);
    const PageBitmap page = random_band_page(rng, W, H);
    SegmentationParams p;
    p.phi1 = std::uniform_real_distribution<double>(1.0, 2.6)(rng);
    p.sigma1 = std::uniform_real_distribution<double>(0.3, 0.45)(rng);
    p.sigma2 = std::uniform_real_distribution<double>(1.0, 8.0)(rng);
    p.p = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
    const RowBand band{0, H};

    const auto fast = segment_row(page, band, p);

    // Reference: every set of interior cuts, scored from scratch.
    const double mu_w = W / p.phi1;
    const int w_lo = std::max(1, static_cast<int>(std::ceil(mu_w - 3.0 * p.sigma2 - 1e-9)));
    int w_hi = static_cast<int>(std::floor(mu_w + 3.0 * p.sigma2 + 1e-9));
    int lo = w_lo;
    if (w_hi < lo) lo = w_hi = std::max(1, static_cast<int>(std::lround(mu_w)));
    const int m_lo = std::max(1, static_cast<int>(std::floor(p.phi1 - 3.0 * p.sigma1)));
    const int m_hi = std::max(m_lo, static_cast<int>(std::ceil(p.phi1 + 3.0 * p.sigma1)));
    const auto family = curve_family(p, W, H);
    std::vector<int> ink(static_cast<std::size_t>(W) + 1, 0);
    for (int x = 1; x < W; ++x) ink[x] = min_ink_at(page, band, x, family);
    const double log_p = std::log(p.p);
    const double log_q = std::log1p(-p.p);

    double best = kNegInf;
    std::vector<int> cuts;
    std::function<void(int)> extend = [&](int from) {
      // Close the row at W.
      {
        const int m = static_cast<int>(cuts.size()) + 1;
        const int w = W - from;
        if (m >= m_lo && m <= m_hi && w >= lo && w <= w_hi) {
          double s = gauss(m, p.phi1, p.sigma1);
          int prev = 0;
          for (int x : cuts) {
            s += gauss(x - prev, mu_w, p.sigma2) + ink[x] * log_q + log_p;
            prev = x;
          }
          s += gauss(W - prev, mu_w, p.sigma2) + log_p;
          best = std::max(best, s);
        }
      }
      if (static_cast<int>(cuts.size()) + 1 >= m_hi) return;
      for (int x = from + lo; x < W && x - from <= w_hi; ++x) {
        cuts.push_back(x);
        extend(x);
        cuts.pop_back();
      }
    };
    extend(0);

    if (best == kNegInf) {
      if (fast.fallback) ++r.agree;
      continue;
    }
    if (fast.fallback) continue;
    // The returned cut set must also score what the DP claims.
    double rescored = gauss(fast.m(), p.phi1, p.sigma1);
    int prev = 0;
    for (const auto& cut : fast.cuts) {
      const int x = cut.curve.anchor;
      rescored += gauss(x - prev, mu_w, p.sigma2) + (x == W ? 0 : ink[x]) * log_q + log_p;
      prev = x;
    }
    const double gap = std::max(std::abs(fast.objective - best), std::abs(rescored - best));
    r.worst = std::max(r.worst, gap);
    if (fast.objective > best + 1e-9) ++r.violations;
    if (gap <= 1e-9) ++r.agree;
  }
  r.pass = r.agree == r.cases && r.violations == 0;
  r.detail = summary(r);
  return r;
}

Report nedoa_em_vs_exhaustive(int cases, std::uint64_t seed) {
  Report r{"NEDoA EM vs exhaustive"};
  r.cases = cases;
  Rng rng(seed);
  for (int c = 0; c < cases; ++c) {
    const int K = std::uniform_int_distribution<int>(1, 6)(rng);
    const int G = std::uniform_int_distribution<int>(1, 6)(rng);
    const int n = std::uniform_int_distribution<int>(1, 10)(rng);
    const int m = std::uniform_int_distribution<int>(1, 10)(rng);
    const auto hyp = random_seq(rng, n, K);
    const auto gold = random_seq(rng, m, G);

    // Reference: every map from the K cluster ids to the G gold types.
    double ref = std::numeric_limits<double>::infinity();
    std::vector<int> map(static_cast<std::size_t>(K), 0);
    while (true) {
      std::vector<int> mapped(hyp.size());
      for (std::size_t i = 0; i < hyp.size(); ++i) mapped[i] = map[hyp[i]];
      ref = std::min(ref, static_cast<double>(dp_edit(mapped, gold)) / gold.size());
      int k = 0;
      for (; k < K; ++k) {
        if (++map[k] < G) break;
        map[k] = 0;
      }
      if (k == K) break;
    }

    NedoaOptions o;
    o.restarts = 20;
    o.seed = derive_seed(seed, static_cast<std::uint64_t>(c));
    const auto em = nedoa(hyp, gold, G, o);
    const double gap = em.score - ref;
    if (gap < -1e-12) ++r.violations;
    if (std::abs(gap) <= 1e-12) ++r.agree;
    r.worst = std::max(r.worst, gap);
  }
  r.pass = r.violations == 0 && r.agree >= static_cast<int>(std::ceil(0.95 * r.cases));
  r.detail = summary(r);
  return r;
}

Report forward_vs_enumeration(int cases, std::uint64_t seed) {
  Report r{"forward vs enumeration"};
  r.cases = cases;
  Rng rng(seed);
  for (int c = 0; c < cases; ++c) {
    const int order = c % 2 == 0 ? 2 : 3;
    const NGramLM lm = random_lm(rng, order);
    const double exponent = c % 3 == 0 ? 1.0 : std::uniform_real_distribution<double>(0.5, 3.0)(rng);
    const int T = std::uniform_int_distribution<int>(1, 6)(rng);
    const RowMatrix em = random_emissions(rng, T, 3);

    double max_score = kNegInf;
    std::vector<double> scores;
    for_each_sequence(T, 3, [&](const std::vector<int>& s) {
      scores.push_back(enumerated_score(lm, exponent, em, s));
      max_score = std::max(max_score, scores.back());
    });
    double sum = 0.0;
    for (double s : scores) sum += std::exp(s - max_score);
    const double ref = max_score + std::log(sum);

    const LmLattice lattice(lm, exponent);
    const double fast = lattice.log_likelihood(em);
    // Relative error of the probabilities themselves.
    const double rel = std::abs(std::expm1(fast - ref));
    r.worst = std::max(r.worst, rel);
    if (rel <= 1e-9) ++r.agree;
  }
  r.pass = r.agree == r.cases;
  r.detail = summary(r);
  return r;
}

Report viterbi_vs_enumeration(int cases, std::uint64_t seed) {
  Report r{"viterbi vs enumeration"};
  r.cases = cases;
  Rng rng(seed);
  for (int c = 0; c < cases; ++c) {
    const int order = c % 2 == 0 ? 2 : 3;
    const NGramLM lm = random_lm(rng, order);
    const double exponent = c % 3 == 0 ? 1.0 : 3.0;
    const int T = std::uniform_int_distribution<int>(1, 6)(rng);
    const RowMatrix em = random_emissions(rng, T, 3);
    double best = kNegInf;
    for_each_sequence(T, 3, [&](const std::vector<int>& s) {
      best = std::max(best, enumerated_score(lm, exponent, em, s));
    });
    double score = 0.0;
    const auto path = LmLattice(lm, exponent).viterbi(em, &score);
    const double gap = std::max(std::abs(score - best),
                                std::abs(enumerated_score(lm, exponent, em, path) - best));
    r.worst = std::max(r.worst, gap);
    if (score > best + 1e-9) ++r.violations;
    if (gap <= 1e-9) ++r.agree;
  }
  r.pass = r.agree == r.cases && r.violations == 0;
  r.detail = summary(r);
  return r;
}

Report edit_distance_vs_recursion(int cases, std::uint64_t seed) {
  Report r{"edit distance vs recursion"};
  r.cases = cases;
  Rng rng(seed);
  for (int c = 0; c < cases; ++c) {
    const int types = std::uniform_int_distribution<int>(1, 4)(rng);
    const auto a = random_seq(rng, std::uniform_int_distribution<int>(0, 7)(rng), types);
    const auto b = random_seq(rng, std::uniform_int_distribution<int>(0, 7)(rng), types);
    const std::size_t ref = naive_edit(a, 0, b, 0);
    const std::size_t fast = edit_distance(a, b);
    const double gap = std::abs(static_cast<double>(fast) - static_cast<double>(ref));
    r.worst = std::max(r.worst, gap);
    if (fast == ref) ++r.agree;
  }
  r.pass = r.agree == r.cases;
  r.detail = summary(r);
  return r;
}

}  // namespace cipherpipe::oracle
