#include "cipherpipe/segmenter.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>

#include "cipherpipe/common.hpp"
#include "cipherpipe/parallel.hpp"

namespace cipherpipe {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_gaussian(double x, double mean, double sigma) {
  const double z = (x - mean) / sigma;
  return -0.5 * z * z - std::log(sigma) -
         0.5 * std::log(2.0 * std::numbers::pi);
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const char* what) {
  if (!j.is_object()) throw Error(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) {
      throw Error(std::string("unknown key '") + key + "' in " + what);
    }
  }
}

nlohmann::json curve_params_json(const CutCurve& c) {
  switch (c.kind) {
    case CurveKind::vertical: return nlohmann::json::array();
    case CurveKind::slant: return nlohmann::json::array({c.slope});
    case CurveKind::cubic: return nlohmann::json::array({c.cubic, c.slope});
  }
  return nlohmann::json::array();
}

CutCurve curve_from_json(const std::string& kind, const nlohmann::json& params,
                         int anchor) {
  const CurveKind k = curve_kind_from_string(kind);
  switch (k) {
    case CurveKind::vertical:
      return CutCurve::vertical(anchor);
    case CurveKind::slant:
      if (params.size() != 1) throw Error("slant curve needs one parameter");
      return CutCurve::slant(anchor, params.at(0).get<double>());
    case CurveKind::cubic:
      if (params.size() != 2) throw Error("cubic curve needs two parameters");
      return CutCurve::cubic_curve(anchor, params.at(0).get<double>(),
                                   params.at(1).get<double>());
  }
  return CutCurve::vertical(anchor);
}

}  // namespace

void SegmentationParams::validate() const {
  if (!(phi1 > 0)) throw Error("phi1 must be positive", "segment");
  if (!(sigma1 > 0)) throw Error("sigma1 must be positive", "segment");
  if (!(sigma2 > 0)) throw Error("sigma2 must be positive", "segment");
  if (!(p > 0 && p < 1)) throw Error("p must lie in (0, 1)", "segment");
  if (!(width_window_sigmas > 0) || !(count_window_sigmas > 0)) {
    throw Error("search windows must be positive", "segment");
  }
  if (min_gap < 1 || min_ink < 1) {
    throw Error("min_gap and min_ink must be >= 1", "segment");
  }
}

nlohmann::json to_json(const SegmentationParams& p) {
  nlohmann::json curves = {{"slants", p.curves.slants},
                           {"cubic_a", p.curves.cubic_a},
                           {"cubic_b", p.curves.cubic_b}};
  if (p.curves.max_deviation) curves["max_deviation"] = *p.curves.max_deviation;
  return {{"phi1", p.phi1},
          {"sigma1", p.sigma1},
          {"sigma2", p.sigma2},
          {"p", p.p},
          {"width_window_sigmas", p.width_window_sigmas},
          {"count_window_sigmas", p.count_window_sigmas},
          {"min_gap", p.min_gap},
          {"min_ink", p.min_ink},
          {"curves", curves}};
}

SegmentationParams segmentation_params_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"phi1", "sigma1", "sigma2", "p", "width_window_sigmas",
              "count_window_sigmas", "min_gap", "min_ink", "curves"},
             "segmentation params");
  SegmentationParams p;
  p.phi1 = j.value("phi1", p.phi1);
  p.sigma1 = j.value("sigma1", p.sigma1);
  p.sigma2 = j.value("sigma2", p.sigma2);
  p.p = j.value("p", p.p);
  p.width_window_sigmas = j.value("width_window_sigmas", p.width_window_sigmas);
  p.count_window_sigmas = j.value("count_window_sigmas", p.count_window_sigmas);
  p.min_gap = j.value("min_gap", p.min_gap);
  p.min_ink = j.value("min_ink", p.min_ink);
  if (j.contains("curves")) {
    const auto& c = j.at("curves");
    check_keys(c, {"slants", "cubic_a", "cubic_b", "max_deviation"},
               "curve family");
    p.curves.slants = c.value("slants", p.curves.slants);
    p.curves.cubic_a = c.value("cubic_a", p.curves.cubic_a);
    p.curves.cubic_b = c.value("cubic_b", p.curves.cubic_b);
    if (c.contains("max_deviation") && !c.at("max_deviation").is_null()) {
      p.curves.max_deviation = c.at("max_deviation").get<double>();
    }
  }
  p.validate();
  return p;
}

std::vector<RowBand> segment_rows(const PageBitmap& page, int min_gap,
                                  int min_ink) {
  const auto profile = row_ink_profile(page);
  std::vector<RowBand> bands;
  int start = -1;
  int last_inky = -1;
  for (int y = 0; y < page.height(); ++y) {
    if (profile[y] < min_ink) continue;
    if (start < 0) {
      start = y;
    } else if (y - last_inky - 1 >= min_gap) {
      bands.push_back({start, last_inky + 1});
      start = y;
    }
    last_inky = y;
  }
  if (start >= 0) bands.push_back({start, last_inky + 1});
  return bands;
}

std::vector<CutCurve> curve_family(const SegmentationParams& params,
                                   int page_width, int band_height) {
  const double bound = params.curves.max_deviation.value_or(
      params.mean_width(page_width) / 4.0);
  auto by_magnitude = [](std::vector<double> v) {
    std::stable_sort(v.begin(), v.end(), [](double a, double b) {
      return std::abs(a) < std::abs(b);
    });
    return v;
  };

  std::vector<CutCurve> family{CutCurve::vertical(0)};
  auto admit = [&](const CutCurve& c) {
    if (c.max_displacement(band_height) <= bound + 1e-9) family.push_back(c);
  };
  for (double b : by_magnitude(params.curves.slants)) {
    if (b != 0.0) admit(CutCurve::slant(0, b));
  }
  for (double a : by_magnitude(params.curves.cubic_a)) {
    for (double b : by_magnitude(params.curves.cubic_b)) {
      if (a != 0.0) admit(CutCurve::cubic_curve(0, a, b));
    }
  }
  return family;
}

namespace {

std::pair<CutCurve, int> best_in_family(const PageBitmap& page,
                                        const RowBand& band, int x,
                                        const std::vector<CutCurve>& family) {
  CutCurve best = CutCurve::vertical(x);
  int best_ink = std::numeric_limits<int>::max();
  for (CutCurve c : family) {
    c.anchor = x;
    const int ink = ink_on_curve(page, band, c);
    if (ink < best_ink) {
      best = c;
      best_ink = ink;
      if (ink == 0) break;
    }
  }
  return {best, best_ink};
}

}  // namespace

std::pair<CutCurve, int> best_curve_at(const PageBitmap& page,
                                       const RowBand& band, int x,
                                       const SegmentationParams& params) {
  return best_in_family(page, band, x,
                        curve_family(params, page.width(), band.height()));
}

RowObjective::RowObjective(const SegmentationParams& p, int row_width)
    : mean_width(p.mean_width(row_width)), params(&p) {
  const double spread = p.width_window_sigmas * p.sigma2;
  min_width = std::max(1, static_cast<int>(std::ceil(mean_width - spread - 1e-9)));
  max_width = static_cast<int>(std::floor(mean_width + spread + 1e-9));
  if (max_width < min_width) {
    min_width = max_width = std::max(1, static_cast<int>(std::lround(mean_width)));
  }
  const double count_spread = p.count_window_sigmas * p.sigma1;
  min_count = std::max(1, static_cast<int>(std::floor(p.phi1 - count_spread)));
  max_count = std::max(min_count,
                       static_cast<int>(std::ceil(p.phi1 + count_spread)));
}

double RowObjective::count_term(int m) const {
  return log_gaussian(m, params->phi1, params->sigma1);
}

double RowObjective::width_term(int w) const {
  return log_gaussian(w, mean_width, params->sigma2);
}

double RowObjective::ink_term(int b) const {
  return b * std::log1p(-params->p) + std::log(params->p);
}

RowSegmentation segment_row(const PageBitmap& page, const RowBand& band,
                            const SegmentationParams& params) {
  params.validate();
  const int W = page.width();
  if (band.y_top < 0 || band.y_bottom > page.height() || band.height() < 1) {
    throw Error("row band outside page", "segment");
  }
  const RowObjective obj(params, W);
  const auto family = curve_family(params, W, band.height());

  // Chosen curve and its ink at every interior column; the right edge is blank.
  std::vector<Cut> at(W + 1);
  for (int x = 1; x < W; ++x) {
    auto [curve, ink] = best_in_family(page, band, x, family);
    at[x] = {curve, ink};
  }
  at[W] = {CutCurve::vertical(W), 0};

  std::vector<double> width_score(obj.max_width + 1, kNegInf);
  for (int w = obj.min_width; w <= obj.max_width; ++w) {
    width_score[w] = obj.width_term(w);
  }

  const int max_m = obj.max_count;
  const std::size_t stride = static_cast<std::size_t>(W) + 1;
  std::vector<double> score((max_m + 1) * stride, kNegInf);
  std::vector<int> back((max_m + 1) * stride, 0);
  score[0] = 0.0;
  for (int k = 1; k <= max_m; ++k) {
    const double* prev = &score[(k - 1) * stride];
    double* cur = &score[k * stride];
    int* bp = &back[k * stride];
    for (int pos = k * obj.min_width; pos <= W; ++pos) {
      double best = kNegInf;
      int arg = 0;
      const int w_hi = std::min(obj.max_width, pos);
      for (int w = obj.min_width; w <= w_hi; ++w) {
        const double s = prev[pos - w];
        if (s == kNegInf) continue;
        const double cand = s + width_score[w];
        if (cand > best) {
          best = cand;
          arg = w;
        }
      }
      if (best != kNegInf) {
        cur[pos] = best + obj.ink_term(at[pos].ink);
        bp[pos] = arg;
      }
    }
  }

  RowSegmentation result;
  result.band = band;
  double best_total = kNegInf;
  int best_m = 0;
  for (int m = obj.min_count; m <= max_m; ++m) {
    const double s = score[m * stride + W];
    if (s == kNegInf) continue;
    const double total = s + obj.count_term(m);
    if (total > best_total) {
      best_total = total;
      best_m = m;
    }
  }

  if (best_m == 0) {
    // Uniform cuts at the mean width.
    const int m = std::max(1, static_cast<int>(std::lround(params.phi1)));
    result.fallback = true;
    double total = obj.count_term(m);
    int prev_x = 0;
    for (int i = 1; i <= m; ++i) {
      const int x = i == m ? W : static_cast<int>(std::lround(double(i) * W / m));
      if (x <= prev_x) continue;
      result.cuts.push_back(at[x]);
      total += obj.width_term(x - prev_x) + obj.ink_term(at[x].ink);
      prev_x = x;
    }
    result.objective = total;
    return result;
  }

  result.objective = best_total;
  std::vector<int> positions;
  int pos = W;
  for (int k = best_m; k >= 1; --k) {
    positions.push_back(pos);
    pos -= back[k * stride + pos];
  }
  std::reverse(positions.begin(), positions.end());
  for (int x : positions) result.cuts.push_back(at[x]);
  return result;
}

nlohmann::json to_json(const Manifest& manifest) {
  auto out = nlohmann::json::array();
  for (const Cell& c : manifest) {
    out.push_back({{"row_index", c.row_index},
                   {"x_start", c.x_start},
                   {"x_end", c.x_end},
                   {"y_top", c.y_top},
                   {"y_bottom", c.y_bottom},
                   {"curve_kind", to_string(c.left.kind)},
                   {"curve_params", curve_params_json(c.left)},
                   {"right_curve_kind", to_string(c.right.kind)},
                   {"right_curve_params", curve_params_json(c.right)}});
  }
  return out;
}

Manifest manifest_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error("manifest must be a JSON array", "segment");
  Manifest out;
  out.reserve(j.size());
  for (const auto& e : j) {
    Cell c;
    c.row_index = e.at("row_index").get<int>();
    c.x_start = e.at("x_start").get<int>();
    c.x_end = e.at("x_end").get<int>();
    c.y_top = e.at("y_top").get<int>();
    c.y_bottom = e.at("y_bottom").get<int>();
    c.left = curve_from_json(e.at("curve_kind").get<std::string>(),
                             e.value("curve_params", nlohmann::json::array()),
                             c.x_start);
    c.right = curve_from_json(e.value("right_curve_kind", std::string("vertical")),
                              e.value("right_curve_params", nlohmann::json::array()),
                              c.x_end);
    if (c.x_end <= c.x_start || c.y_bottom <= c.y_top) {
      throw Error("manifest cell has empty extent", "segment");
    }
    out.push_back(c);
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest '" + path.string() + "'");
  out << to_json(m).dump(1) << '\n';
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read manifest '" + path.string() + "'");
  return manifest_from_json(nlohmann::json::parse(in));
}

namespace {

template <typename Fn>
void for_each_cell_pixel(const PageBitmap& page, const Cell& cell, Fn&& fn) {
  for (int y = std::max(0, cell.y_top); y < std::min(page.height(), cell.y_bottom);
       ++y) {
    const int ly = y - cell.y_top;
    const int lo = std::max(0, cell.left.x_at(ly));
    const int hi = std::min(page.width(), cell.right.x_at(ly));
    for (int x = lo; x < hi; ++x) fn(x, y);
  }
}

}  // namespace

std::optional<PageBitmap> extract_cell(const PageBitmap& page, const Cell& cell) {
  int x0 = std::numeric_limits<int>::max(), y0 = x0, x1 = -1, y1 = -1;
  for_each_cell_pixel(page, cell, [&](int x, int y) {
    if (!page.ink(x, y)) return;
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  });
  if (x1 < 0) return std::nullopt;
  PageBitmap out(x1 - x0 + 1, y1 - y0 + 1);
  for_each_cell_pixel(page, cell, [&](int x, int y) {
    if (page.ink(x, y)) out.set(x - x0, y - y0, true);
  });
  return out;
}

PageSegmentation segment_page(const PageBitmap& page,
                              const SegmentationParams& params) {
  params.validate();
  PageSegmentation out;
  const auto bands = segment_rows(page, params.min_gap, params.min_ink);
  out.rows.resize(bands.size());
  parallel_for(bands.size(), [&](std::size_t i) {
    out.rows[i] = segment_row(page, bands[i], params);
  });

  for (std::size_t r = 0; r < out.rows.size(); ++r) {
    const auto& row = out.rows[r];
    if (row.fallback) {
      out.warnings.push_back("row " + std::to_string(r) +
                             ": no feasible segmentation, used uniform cuts");
      spdlog::warn("segment: {}", out.warnings.back());
    }
    CutCurve left = CutCurve::vertical(0);
    for (const Cut& cut : row.cuts) {
      Cell cell{static_cast<int>(r), left.anchor, cut.curve.anchor,
                row.band.y_top, row.band.y_bottom, left, cut.curve};
      bool inked = false;
      for_each_cell_pixel(page, cell, [&](int x, int y) {
        inked = inked || page.ink(x, y);
      });
      if (inked) out.cells.push_back(cell);
      left = cut.curve;
    }
  }
  return out;
}

}  // namespace cipherpipe
