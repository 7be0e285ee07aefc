#pragma once

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cipherpipe/page_model.hpp"

namespace cipherpipe {

/// Candidate cutting curves tried at every column. Slopes are x-displacement
/// per y-pixel; a cubic is x = anchor + b*y + a*y^3.
struct CurveFamily {
  std::vector<double> slants{0.05, -0.05, 0.1, -0.1, 0.2, -0.2};
  std::vector<double> cubic_a{1e-5, -1e-5, 1e-4, -1e-4};
  std::vector<double> cubic_b{0.05, -0.05, 0.1, -0.1};
  /// Largest allowed |x(y) - anchor| inside a band. Unset means
  /// (W / phi1) / 4 with W the page width.
  std::optional<double> max_deviation;
};

struct SegmentationParams {
  double phi1 = 40.0;    ///< mean characters per row
  double sigma1 = 2.0;   ///< std of characters per row
  double sigma2 = 5.0;   ///< std of character width (px)
  double p = 0.5;        ///< geometric success probability for cut ink
  CurveFamily curves;
  double width_window_sigmas = 3.0;
  double count_window_sigmas = 3.0;
  int min_gap = 3;  ///< blank rows needed between text lines
  int min_ink = 1;  ///< a row with fewer ink pixels counts as blank

  void validate() const;
  double mean_width(int row_width) const { return row_width / phi1; }
};

nlohmann::json to_json(const SegmentationParams& params);
SegmentationParams segmentation_params_from_json(const nlohmann::json& j);

/// One cut point with the curve chosen there and the ink it crosses.
struct Cut {
  CutCurve curve;
  int ink = 0;
  friend bool operator==(const Cut&, const Cut&) = default;
};

/// Segmentation of one band. `cuts` holds c_1..c_m; the last cut sits at the
/// band's right edge (x = W) and is implicit in the objective. Cell i spans
/// [c_{i-1}, c_i) with c_0 = 0.
struct RowSegmentation {
  RowBand band;
  std::vector<Cut> cuts;
  double objective = 0.0;
  bool fallback = false;

  int m() const noexcept { return static_cast<int>(cuts.size()); }
};

/// Gap detection on the row ink profile.
std::vector<RowBand> segment_rows(const PageBitmap& page, int min_gap,
                                  int min_ink);

/// Ordered candidate family for a band: vertical first, then slants and then
/// cubics, each by increasing parameter magnitude. Members whose displacement
/// exceeds the deviation bound are dropped.
std::vector<CutCurve> curve_family(const SegmentationParams& params,
                                   int page_width, int band_height);

/// Family member at anchor x with the fewest ink pixels; ties go to the
/// earliest (simplest) member.
std::pair<CutCurve, int> best_curve_at(const PageBitmap& page,
                                       const RowBand& band, int x,
                                       const SegmentationParams& params);

/// Score pieces of the row objective, exposed so tests can rescore any cut
/// set independently of the dynamic program.
struct RowObjective {
  double mean_width;
  int min_width;
  int max_width;
  int min_count;
  int max_count;
  const SegmentationParams* params;

  explicit RowObjective(const SegmentationParams& p, int row_width);
  double count_term(int m) const;
  double width_term(int w) const;
  double ink_term(int b) const;
  bool width_allowed(int w) const { return w >= min_width && w <= max_width; }
  bool count_allowed(int m) const { return m >= min_count && m <= max_count; }
};

/// Viterbi search over (position, characters emitted) for the cut set
/// maximising log N(m; phi1, sigma1) + sum_i [log N(w_i; W/phi1, sigma2) +
/// log Geom(b_i; p)].
RowSegmentation segment_row(const PageBitmap& page, const RowBand& band,
                            const SegmentationParams& params);

/// One glyph cell in reading order. The left/right curves bound the cell;
/// `curve` fields hold the left cut, `right_*` the right cut.
struct Cell {
  int row_index = 0;
  int x_start = 0;
  int x_end = 0;
  int y_top = 0;
  int y_bottom = 0;
  CutCurve left;
  CutCurve right;

  friend bool operator==(const Cell&, const Cell&) = default;
};

using Manifest = std::vector<Cell>;

nlohmann::json to_json(const Manifest& manifest);
Manifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

struct PageSegmentation {
  std::vector<RowSegmentation> rows;
  Manifest cells;
  std::vector<std::string> warnings;
};

/// Rows, then cells per row. Cells that contain no ink are left out of the
/// manifest (trailing blank space on short lines).
PageSegmentation segment_page(const PageBitmap& page,
                              const SegmentationParams& params);

/// Ink between the cell's curves, cropped to its ink bounding box. Returns
/// nullopt for a blank cell.
std::optional<PageBitmap> extract_cell(const PageBitmap& page, const Cell& cell);

}  // namespace cipherpipe
