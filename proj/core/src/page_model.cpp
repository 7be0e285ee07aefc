#include "cipherpipe/page_model.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "cipherpipe/common.hpp"

namespace cipherpipe {

PageBitmap::PageBitmap(int width, int height)
    : width_(width), height_(height) {
  if (width < 1 || height < 1) {
    throw Error("page dimensions must be positive", "page");
  }
  pixels_.assign(static_cast<std::size_t>(width) * height, 0);
}

PageBitmap::PageBitmap(int width, int height, std::vector<std::uint8_t> ink)
    : width_(width), height_(height), pixels_(std::move(ink)) {
  if (width < 1 || height < 1) {
    throw Error("page dimensions must be positive", "page");
  }
  if (pixels_.size() != static_cast<std::size_t>(width) * height) {
    throw Error("pixel buffer does not match page dimensions", "page");
  }
  for (auto& p : pixels_) p = p ? 1 : 0;
}

std::size_t PageBitmap::ink_count() const noexcept {
  return static_cast<std::size_t>(
      std::count(pixels_.begin(), pixels_.end(), std::uint8_t{1}));
}

const char* to_string(CurveKind kind) noexcept {
  switch (kind) {
    case CurveKind::vertical: return "vertical";
    case CurveKind::slant: return "slant";
    case CurveKind::cubic: return "cubic";
  }
  return "vertical";
}

CurveKind curve_kind_from_string(const std::string& name) {
  if (name == "vertical") return CurveKind::vertical;
  if (name == "slant") return CurveKind::slant;
  if (name == "cubic") return CurveKind::cubic;
  throw Error("unknown curve kind '" + name + "'", "segment");
}

int CutCurve::x_at(int local_y) const noexcept {
  const double y = local_y;
  return static_cast<int>(std::lround(anchor + slope * y + cubic * y * y * y));
}

double CutCurve::max_displacement(int band_height) const noexcept {
  double worst = 0.0;
  for (int y = 0; y < band_height; ++y) {
    const double dy = y;
    worst = std::max(worst, std::abs(slope * dy + cubic * dy * dy * dy));
  }
  return worst;
}

GrayImage read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw Error("cannot read image '" + path.string() + "': " + image.message,
                "page");
  }
  image.format = PNG_FORMAT_GRAY;
  GrayImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  if (out.width < 1 || out.height < 1) {
    png_image_free(&image);
    throw Error("image '" + path.string() + "' has zero area", "page");
  }
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error("cannot decode image '" + path.string() + "': " + msg, "page");
  }
  return out;
}

void write_png(const std::filesystem::path& path, const GrayImage& gray) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(gray.width);
  image.height = static_cast<png_uint_32>(gray.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0,
                               gray.pixels.data(), 0, nullptr)) {
    throw Error("cannot write image '" + path.string() + "': " + image.message,
                "page");
  }
}

PageBitmap binarize(const GrayImage& image, int threshold) {
  std::vector<std::uint8_t> ink(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), ink.begin(),
                 [threshold](std::uint8_t g) { return g < threshold ? 1 : 0; });
  return PageBitmap(image.width, image.height, std::move(ink));
}

GrayImage to_gray(const PageBitmap& page) {
  GrayImage out{page.width(), page.height(), {}};
  out.pixels.resize(page.raw().size());
  std::transform(page.raw().begin(), page.raw().end(), out.pixels.begin(),
                 [](std::uint8_t v) { return v ? 0 : 255; });
  return out;
}

PageBitmap load_page(const std::filesystem::path& path, int threshold) {
  return binarize(read_png(path), threshold);
}

void save_page(const std::filesystem::path& path, const PageBitmap& page) {
  write_png(path, to_gray(page));
}

int ink_on_curve(const PageBitmap& page, const RowBand& band,
                 const CutCurve& curve) {
  if (curve.anchor < 0 || curve.anchor >= page.width()) {
    throw Error("curve anchor " + std::to_string(curve.anchor) +
                    " outside page width " + std::to_string(page.width()),
                "segment");
  }
  int count = 0;
  for (int y = band.y_top; y < band.y_bottom; ++y) {
    if (page.ink_or_blank(curve.x_at(y - band.y_top), y)) ++count;
  }
  return count;
}

std::vector<int> row_ink_profile(const PageBitmap& page) {
  std::vector<int> profile(page.height(), 0);
  const auto& raw = page.raw();
  for (int y = 0; y < page.height(); ++y) {
    const auto row = raw.begin() + static_cast<std::ptrdiff_t>(y) * page.width();
    profile[y] = static_cast<int>(std::accumulate(row, row + page.width(), 0));
  }
  return profile;
}

}  // namespace cipherpipe
