#include "cipherpipe/glyph_features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>

#include "cipherpipe/common.hpp"
#include "cipherpipe/parallel.hpp"

namespace cipherpipe {
namespace {

// Rounds num/den to the nearest integer, ties to even.
int div_round_half_even(long num, long den) {
  long q = num / den;
  const long rem = num % den;
  if (2 * rem > den || (2 * rem == den && (q % 2) != 0)) ++q;
  return static_cast<int>(q);
}

bool grid_less(const Grid& a, const Grid& b) {
  if (a.rows != b.rows) return a.rows < b.rows;
  if (a.cols != b.cols) return a.cols < b.cols;
  return std::lexicographical_compare(a.values.begin(), a.values.end(),
                                      b.values.begin(), b.values.end());
}

int fft_friendly(int n) {
  for (int m = std::max(1, n);; ++m) {
    int r = m;
    for (int f : {2, 3, 5, 7}) {
      while (r % f == 0) r /= f;
    }
    if (r == 1) return m;
  }
}

double correlation_at(const Grid& a, const Grid& b, int u, int v) {
  const int i0 = std::max(0, -u), i1 = std::min(a.rows, b.rows - u);
  const int j0 = std::max(0, -v), j1 = std::min(a.cols, b.cols - v);
  double sum = 0.0;
  for (int i = i0; i < i1; ++i) {
    const double* ar = &a.values[static_cast<std::size_t>(i) * a.cols];
    const double* br = &b.values[static_cast<std::size_t>(i + u) * b.cols + v];
    for (int j = j0; j < j1; ++j) sum += ar[j] * br[j];
  }
  return sum;
}

struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};
using RealBuffer = std::unique_ptr<double[], FftwFree>;
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

RealBuffer alloc_real(std::size_t n) {
  return RealBuffer(static_cast<double*>(fftw_malloc(sizeof(double) * n)));
}
ComplexBuffer alloc_complex(std::size_t n) {
  return ComplexBuffer(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
}

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// Full-mode correlation of grids with fixed operand shapes, via r2c/c2r FFTs
// over a zero-padded canvas large enough to avoid wrap-around.
class CorrelationEngine {
 public:
  CorrelationEngine(int a_rows, int a_cols, int b_rows, int b_cols)
      : ar_(a_rows), ac_(a_cols), br_(b_rows), bc_(b_cols),
        nr_(fft_friendly(a_rows + b_rows - 1)),
        nc_(fft_friendly(a_cols + b_cols - 1)),
        spectrum_size_(static_cast<std::size_t>(nr_) * (nc_ / 2 + 1)) {
    auto real = alloc_real(real_size());
    auto spec = alloc_complex(spectrum_size_);
    std::lock_guard lock(planner_mutex());
    forward_ = fftw_plan_dft_r2c_2d(nr_, nc_, real.get(), spec.get(),
                                    FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_2d(nr_, nc_, spec.get(), real.get(),
                                    FFTW_ESTIMATE);
  }
  ~CorrelationEngine() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }
  CorrelationEngine(const CorrelationEngine&) = delete;
  CorrelationEngine& operator=(const CorrelationEngine&) = delete;

  std::size_t real_size() const {
    return static_cast<std::size_t>(nr_) * nc_;
  }

  ComplexBuffer spectrum(const Grid& g) const {
    auto real = alloc_real(real_size());
    std::fill(real.get(), real.get() + real_size(), 0.0);
    for (int i = 0; i < g.rows; ++i) {
      for (int j = 0; j < g.cols; ++j) {
        real[static_cast<std::size_t>(i) * nc_ + j] = g(i, j);
      }
    }
    auto spec = alloc_complex(spectrum_size_);
    fftw_execute_dft_r2c(forward_, real.get(), spec.get());
    return spec;
  }

  // a must be the canonical first operand (see max_cross_correlation).
  double max_correlation(const Grid& a, const fftw_complex* sa, const Grid& b,
                         const fftw_complex* sb) const {
    double energy_a = 0.0, energy_b = 0.0;
    for (double v : a.values) energy_a += v * v;
    for (double v : b.values) energy_b += v * v;
    if (energy_a == 0.0 || energy_b == 0.0) return 0.0;

    auto product = alloc_complex(spectrum_size_);
    for (std::size_t k = 0; k < spectrum_size_; ++k) {
      const std::complex<double> x(sa[k][0], -sa[k][1]);
      const std::complex<double> y(sb[k][0], sb[k][1]);
      const auto z = x * y;
      product[k][0] = z.real();
      product[k][1] = z.imag();
    }
    auto out = alloc_real(real_size());
    fftw_execute_dft_c2r(inverse_, product.get(), out.get());
    const double scale = 1.0 / static_cast<double>(real_size());

    auto value_at = [&](int u, int v) {
      const int r = (u % nr_ + nr_) % nr_;
      const int c = (v % nc_ + nc_) % nc_;
      return out[static_cast<std::size_t>(r) * nc_ + c] * scale;
    };
    double approx_max = -std::numeric_limits<double>::infinity();
    for (int u = -(ar_ - 1); u <= br_ - 1; ++u) {
      for (int v = -(ac_ - 1); v <= bc_ - 1; ++v) {
        approx_max = std::max(approx_max, value_at(u, v));
      }
    }
    // Re-evaluate near-maximal offsets exactly so the result does not carry
    // FFT rounding.
    const double slack = 1e-9 * std::sqrt(energy_a * energy_b) + 1e-12;
    double exact = -std::numeric_limits<double>::infinity();
    for (int u = -(ar_ - 1); u <= br_ - 1; ++u) {
      for (int v = -(ac_ - 1); v <= bc_ - 1; ++v) {
        if (value_at(u, v) >= approx_max - slack) {
          exact = std::max(exact, correlation_at(a, b, u, v));
        }
      }
    }
    return exact;
  }

 private:
  int ar_, ac_, br_, bc_;
  int nr_, nc_;
  std::size_t spectrum_size_;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

}  // namespace

Grid grid_from_bitmap(const PageBitmap& bitmap) {
  Grid g(bitmap.height(), bitmap.width());
  for (int y = 0; y < bitmap.height(); ++y) {
    for (int x = 0; x < bitmap.width(); ++x) g(y, x) = bitmap.ink(x, y) ? 1.0 : 0.0;
  }
  return g;
}

GlyphImage normalize_glyph(const Grid& cell) {
  if (cell.rows < 1 || cell.cols < 1) {
    throw Error("cannot normalise a zero-area glyph", "features");
  }
  const int longest = std::max(cell.rows, cell.cols);
  const int nh = std::max(1, div_round_half_even(long(cell.rows) * kGlyphSize, longest));
  const int nw = std::max(1, div_round_half_even(long(cell.cols) * kGlyphSize, longest));
  const double scale = static_cast<double>(kGlyphSize) / longest;
  const int top = (kGlyphSize - nh) / 2;
  const int left = (kGlyphSize - nw) / 2;

  auto source = [&](int i, int n) {
    const double s = (i + 0.5) / scale - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(n - 1));
  };

  GlyphImage out{Grid(kGlyphSize, kGlyphSize, 0.0), std::nullopt};
  for (int r = 0; r < nh; ++r) {
    const double sy = source(r, cell.rows);
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, cell.rows - 1);
    const double fy = sy - y0;
    for (int c = 0; c < nw; ++c) {
      const double sx = source(c, cell.cols);
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, cell.cols - 1);
      const double fx = sx - x0;
      const double v = (1 - fy) * ((1 - fx) * cell(y0, x0) + fx * cell(y0, x1)) +
                       fy * ((1 - fx) * cell(y1, x0) + fx * cell(y1, x1));
      out.grid(top + r, left + c) = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

GlyphImage normalize_glyph(const PageBitmap& cell) {
  return normalize_glyph(grid_from_bitmap(cell));
}

std::vector<GlyphImage> glyphs_from_manifest(const PageBitmap& page,
                                             const Manifest& manifest) {
  std::vector<GlyphImage> glyphs(manifest.size());
  parallel_for(manifest.size(), [&](std::size_t i) {
    auto bitmap = extract_cell(page, manifest[i]);
    if (!bitmap) {
      throw Error("manifest cell " + std::to_string(i) + " contains no ink",
                  "features");
    }
    glyphs[i] = normalize_glyph(*bitmap);
    glyphs[i].source_cell = static_cast<int>(i);
  });
  return glyphs;
}

double max_cross_correlation(const Grid& a, const Grid& b) {
  const bool swap = grid_less(b, a);
  const Grid& first = swap ? b : a;
  const Grid& second = swap ? a : b;
  if (first.values.empty() || second.values.empty()) return 0.0;
  CorrelationEngine engine(first.rows, first.cols, second.rows, second.cols);
  const auto sa = engine.spectrum(first);
  const auto sb = engine.spectrum(second);
  return engine.max_correlation(first, sa.get(), second, sb.get());
}

double simmat_similarity(const GlyphImage& a, const GlyphImage& b) {
  return max_cross_correlation(a.grid, b.grid);
}

const char* to_string(ExtractorTag tag) noexcept {
  switch (tag) {
    case ExtractorTag::simmat: return "simmat";
    case ExtractorTag::external: return "external";
    case ExtractorTag::rawpixel: return "rawpixel";
  }
  return "external";
}

ExtractorTag extractor_from_string(const std::string& name) {
  if (name == "simmat") return ExtractorTag::simmat;
  if (name == "external" || name == "snn") return ExtractorTag::external;
  if (name == "rawpixel") return ExtractorTag::rawpixel;
  throw Error("unknown feature extractor '" + name + "'", "features");
}

FeatureMatrix simmat_features(std::span<const GlyphImage> glyphs) {
  const std::size_t n = glyphs.size();
  if (n == 0) throw Error("simmat needs at least one glyph", "features");
  for (const auto& g : glyphs) {
    if (g.grid.rows != glyphs[0].grid.rows || g.grid.cols != glyphs[0].grid.cols) {
      throw Error("simmat glyphs must share one size", "features");
    }
  }

  // Group identical images; `order` is sorted canonically so the first
  // operand of every pair below is the canonical one.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return grid_less(glyphs[x].grid, glyphs[y].grid);
  });
  std::vector<std::size_t> unique_of(n);
  std::vector<std::size_t> representatives;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t idx = order[k];
    if (representatives.empty() ||
        !(glyphs[representatives.back()].grid == glyphs[idx].grid)) {
      representatives.push_back(idx);
    }
    unique_of[idx] = representatives.size() - 1;
  }

  const std::size_t u = representatives.size();
  const Grid& shape = glyphs[0].grid;
  CorrelationEngine engine(shape.rows, shape.cols, shape.rows, shape.cols);
  std::vector<ComplexBuffer> spectra(u);
  parallel_for(u, [&](std::size_t k) {
    spectra[k] = engine.spectrum(glyphs[representatives[k]].grid);
  });

  Eigen::MatrixXd uniq(u, u);
  parallel_for(u, [&](std::size_t i) {
    const Grid& gi = glyphs[representatives[i]].grid;
    for (std::size_t j = i; j < u; ++j) {
      const Grid& gj = glyphs[representatives[j]].grid;
      uniq(i, j) = engine.max_correlation(gi, spectra[i].get(), gj,
                                          spectra[j].get());
    }
  });
  for (std::size_t i = 0; i < u; ++i) {
    for (std::size_t j = 0; j < i; ++j) uniq(i, j) = uniq(j, i);
  }

  FeatureMatrix out{Eigen::MatrixXd(n, n), ExtractorTag::simmat};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.rows(i, j) = uniq(unique_of[i], unique_of[j]);
    }
  }
  return out;
}

FeatureMatrix rawpixel_features(std::span<const GlyphImage> glyphs, int block) {
  if (block < 1) throw Error("rawpixel block must be >= 1", "features");
  if (glyphs.empty()) throw Error("rawpixel needs at least one glyph", "features");
  const int rows = glyphs[0].grid.rows, cols = glyphs[0].grid.cols;
  const int nbr = (rows + block - 1) / block;
  const int nbc = (cols + block - 1) / block;
  FeatureMatrix out{Eigen::MatrixXd(glyphs.size(), nbr * nbc),
                    ExtractorTag::rawpixel};
  for (std::size_t g = 0; g < glyphs.size(); ++g) {
    const Grid& grid = glyphs[g].grid;
    if (grid.rows != rows || grid.cols != cols) {
      throw Error("rawpixel glyphs must share one size", "features");
    }
    for (int bi = 0; bi < nbr; ++bi) {
      for (int bj = 0; bj < nbc; ++bj) {
        const int r1 = std::min(rows, (bi + 1) * block);
        const int c1 = std::min(cols, (bj + 1) * block);
        double sum = 0.0;
        for (int r = bi * block; r < r1; ++r) {
          for (int c = bj * block; c < c1; ++c) sum += grid(r, c);
        }
        out.rows(g, bi * nbc + bj) = sum / ((r1 - bi * block) * (c1 - bj * block));
      }
    }
  }
  return out;
}

FeatureMatrix pca_reduce(const FeatureMatrix& features, int dims) {
  if (dims < 1) throw Error("PCA dimension must be >= 1", "features");
  const Eigen::MatrixXd centered =
      features.rows.rowwise() - features.rows.colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered,
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  const int keep = std::min<int>(dims, static_cast<int>(svd.matrixV().cols()));
  Eigen::MatrixXd basis = svd.matrixV().leftCols(keep);
  for (int k = 0; k < keep; ++k) {
    Eigen::Index arg = 0;
    basis.col(k).cwiseAbs().maxCoeff(&arg);
    if (basis(arg, k) < 0) basis.col(k) *= -1.0;
  }
  return {centered * basis, features.extractor};
}

nlohmann::json to_json(const FeatureMatrix& f) {
  nlohmann::json vectors = nlohmann::json::array();
  for (Eigen::Index i = 0; i < f.count(); ++i) {
    std::vector<double> row(f.dim());
    for (Eigen::Index j = 0; j < f.dim(); ++j) row[j] = f.rows(i, j);
    vectors.push_back(std::move(row));
  }
  return {{"dim", f.dim()},
          {"count", f.count()},
          {"extractor", to_string(f.extractor)},
          {"vectors", std::move(vectors)}};
}

FeatureMatrix features_from_json(const nlohmann::json& j, ExtractorTag tag) {
  if (!j.is_object() || !j.contains("vectors") || !j.at("vectors").is_array()) {
    throw Error("feature file is malformed: missing 'vectors'", "features");
  }
  const auto& vectors = j.at("vectors");
  const std::size_t n = vectors.size();
  const long dim = j.contains("dim") ? j.at("dim").get<long>()
                   : n > 0          ? static_cast<long>(vectors.at(0).size())
                                    : 0;
  if (j.contains("count") && j.at("count").get<std::size_t>() != n) {
    throw Error("feature file declares count " +
                    std::to_string(j.at("count").get<std::size_t>()) +
                    " but holds " + std::to_string(n) + " vectors",
                "features");
  }
  if (dim < 1) throw Error("feature dimension must be >= 1", "features");
  if (j.contains("extractor")) {
    tag = extractor_from_string(j.at("extractor").get<std::string>());
  }
  FeatureMatrix out{Eigen::MatrixXd(n, dim), tag};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = vectors.at(i);
    if (!v.is_array() || static_cast<long>(v.size()) != dim) {
      throw Error("feature vector " + std::to_string(i) +
                      " does not have dimension " + std::to_string(dim),
                  "features");
    }
    for (long k = 0; k < dim; ++k) out.rows(i, k) = v.at(k).get<double>();
  }
  return out;
}

void export_features(const std::filesystem::path& path, const FeatureMatrix& f) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write features '" + path.string() + "'", "features");
  out << to_json(f).dump() << '\n';
}

FeatureMatrix import_features(const std::filesystem::path& path,
                              std::size_t manifest_cells) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read features '" + path.string() + "'", "features");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("feature file is malformed: " + std::string(e.what()), "features");
  }
  FeatureMatrix f = features_from_json(j, ExtractorTag::external);
  f.extractor = ExtractorTag::external;
  if (static_cast<std::size_t>(f.count()) != manifest_cells) {
    throw Error("feature file has " + std::to_string(f.count()) +
                    " vectors but the manifest has " +
                    std::to_string(manifest_cells) + " cells",
                "features");
  }
  return f;
}

}  // namespace cipherpipe
