#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cipherpipe/page_model.hpp"
#include "cipherpipe/segmenter.hpp"

namespace cipherpipe {

inline constexpr int kGlyphSize = 105;

/// Row-major gray grid, values in [0, 1] with 1 = ink.
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(int r, int c, double fill = 0.0)
      : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, fill) {}

  double operator()(int r, int c) const noexcept {
    return values[static_cast<std::size_t>(r) * cols + c];
  }
  double& operator()(int r, int c) noexcept {
    return values[static_cast<std::size_t>(r) * cols + c];
  }
  friend bool operator==(const Grid&, const Grid&) = default;
};

Grid grid_from_bitmap(const PageBitmap& bitmap);

/// One glyph scaled onto a kGlyphSize x kGlyphSize canvas.
struct GlyphImage {
  Grid grid;
  std::optional<int> source_cell;  ///< index into the segmentation manifest
};

/// Scales so the larger side becomes 105 (bilinear, aspect preserved, sizes
/// rounded half-to-even) and centres the result on a blank canvas.
GlyphImage normalize_glyph(const PageBitmap& cell);
GlyphImage normalize_glyph(const Grid& cell);

/// Extracts and normalises every manifest cell; blank cells are an error.
std::vector<GlyphImage> glyphs_from_manifest(const PageBitmap& page,
                                             const Manifest& manifest);

/// Maximum over every offset (u, v) at which the grids overlap of
/// sum_{i,j} a(i, j) * b(i + u, j + v), out-of-range terms being zero. Exact in its operands' order: the
/// pair is put into a canonical order first so s(a, b) == s(b, a) bit for bit.
double max_cross_correlation(const Grid& a, const Grid& b);
double simmat_similarity(const GlyphImage& a, const GlyphImage& b);

enum class ExtractorTag { simmat, external, rawpixel };
const char* to_string(ExtractorTag tag) noexcept;
ExtractorTag extractor_from_string(const std::string& name);

struct FeatureMatrix {
  Eigen::MatrixXd rows;  ///< n x d
  ExtractorTag extractor = ExtractorTag::simmat;

  Eigen::Index count() const noexcept { return rows.rows(); }
  Eigen::Index dim() const noexcept { return rows.cols(); }
};

/// Row i holds s(x_i, x_j) for every j. Identical glyph images share one
/// correlation pass.
FeatureMatrix simmat_features(std::span<const GlyphImage> glyphs);

/// Block-average pooling to ceil(105 / block)^2 values per glyph; the last
/// block in each direction may be truncated.
FeatureMatrix rawpixel_features(std::span<const GlyphImage> glyphs, int block);

/// Projection onto the top `dims` principal components (deterministic signs).
FeatureMatrix pca_reduce(const FeatureMatrix& features, int dims);

/// Shared feature-file schema: {dim, count, vectors: [[...], ...]}.
nlohmann::json to_json(const FeatureMatrix& features);
FeatureMatrix features_from_json(const nlohmann::json& j,
                                 ExtractorTag tag = ExtractorTag::external);
void export_features(const std::filesystem::path& path,
                     const FeatureMatrix& features);
/// Loads an external feature file and checks it against the manifest length.
FeatureMatrix import_features(const std::filesystem::path& path,
                              std::size_t manifest_cells);

}  // namespace cipherpipe
