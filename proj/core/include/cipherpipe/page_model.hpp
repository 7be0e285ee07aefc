#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cipherpipe {

/// 8-bit grayscale raster, row-major, 0 = black.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Binary page raster. Origin is the upper-left corner, x grows rightward and
/// y downward; `true` is ink.
class PageBitmap {
 public:
  PageBitmap(int width, int height);
  PageBitmap(int width, int height, std::vector<std::uint8_t> ink);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  bool ink(int x, int y) const noexcept {
    return pixels_[static_cast<std::size_t>(y) * width_ + x] != 0;
  }
  /// Out-of-range reads are blank.
  bool ink_or_blank(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_ && ink(x, y);
  }
  void set(int x, int y, bool value) noexcept {
    pixels_[static_cast<std::size_t>(y) * width_ + x] = value ? 1 : 0;
  }

  std::size_t ink_count() const noexcept;
  const std::vector<std::uint8_t>& raw() const noexcept { return pixels_; }

  friend bool operator==(const PageBitmap&, const PageBitmap&) = default;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> pixels_;
};

/// Horizontal strip [y_top, y_bottom) of a page holding one text line.
struct RowBand {
  int y_top = 0;
  int y_bottom = 0;

  int height() const noexcept { return y_bottom - y_top; }
  friend bool operator==(const RowBand&, const RowBand&) = default;
};

enum class CurveKind { vertical, slant, cubic };

const char* to_string(CurveKind kind) noexcept;
CurveKind curve_kind_from_string(const std::string& name);

/// Cutting curve through a row band, in row-local coordinates:
///   x(y) = anchor + slope * y + cubic * y^3,   y = 0 at the band top.
/// A vertical curve has slope = cubic = 0; a slant has cubic = 0.
struct CutCurve {
  CurveKind kind = CurveKind::vertical;
  int anchor = 0;
  double slope = 0.0;
  double cubic = 0.0;

  static CutCurve vertical(int x) { return {CurveKind::vertical, x, 0.0, 0.0}; }
  static CutCurve slant(int x, double b) { return {CurveKind::slant, x, b, 0.0}; }
  static CutCurve cubic_curve(int x, double a, double b) {
    return {CurveKind::cubic, x, b, a};
  }

  /// Rasterised column at row-local y, rounded to the nearest integer.
  int x_at(int local_y) const noexcept;
  /// Largest |x(y) - anchor| over a band of the given height.
  double max_displacement(int band_height) const noexcept;

  friend bool operator==(const CutCurve&, const CutCurve&) = default;
};

/// Reads a PNG (gray or RGB; colour is reduced to luminance).
GrayImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const GrayImage& image);

/// Pixel is ink iff its gray value < threshold.
PageBitmap binarize(const GrayImage& image, int threshold = 128);
GrayImage to_gray(const PageBitmap& page);

PageBitmap load_page(const std::filesystem::path& path, int threshold = 128);
void save_page(const std::filesystem::path& path, const PageBitmap& page);

/// Ink pixels visited by the curve between the band's top and bottom rows,
/// one pixel per row. Rows where the curve leaves the page count as blank.
/// Throws if the anchor is outside [0, width).
int ink_on_curve(const PageBitmap& page, const RowBand& band,
                 const CutCurve& curve);

/// Element y is the number of ink pixels in pixel row y.
std::vector<int> row_ink_profile(const PageBitmap& page);

}  // namespace cipherpipe
