#include "rodeo/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <memory>
#include <string>

#include <png.h>

#include "rodeo/error.hpp"
#include "rodeo/protocols.hpp"

namespace rodeo::plot {

Canvas::Canvas(int width, int height, Rgb background) : width_(width), height_(height) {
  require(width > 0 && height > 0, ErrorCode::invalid_input, "canvas size must be positive");
  pixels_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < pixels_.size(); i += 3) {
    pixels_[i] = background.r;
    pixels_[i + 1] = background.g;
    pixels_[i + 2] = background.b;
  }
}

Rgb Canvas::at(int x, int y) const {
  require(x >= 0 && y >= 0 && x < width_ && y < height_, ErrorCode::invalid_input, "pixel outside canvas");
  const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  pixels_[i] = c.r;
  pixels_[i + 1] = c.g;
  pixels_[i + 2] = c.b;
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = std::max(0, y0); y < std::min(height_, y1); ++y) {
    for (int x = std::max(0, x0); x < std::min(width_, x1); ++x) set(x, y, c);
  }
}

void Canvas::hline(int x0, int x1, int y, Rgb c) { fill_rect(x0, y, x1 + 1, y + 1, c); }
void Canvas::vline(int x, int y0, int y1, Rgb c) { fill_rect(x, y0, x + 1, y1 + 1, c); }

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw Error(ErrorCode::io, std::string("libpng: ") + msg); }
void png_warn(png_structp, png_const_charp) {}

}  // namespace

void write_png(const std::filesystem::path& path, const Canvas& canvas) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  require(f != nullptr, ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  require(png != nullptr, ErrorCode::io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  try {
    require(info != nullptr, ErrorCode::io, "png_create_info_struct failed");
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(canvas.width()), static_cast<png_uint_32>(canvas.height()), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const auto* base = canvas.pixels().data();
    for (int y = 0; y < canvas.height(); ++y) {
      png_write_row(png, const_cast<png_bytep>(base + static_cast<std::size_t>(y) * canvas.width() * 3));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

Canvas read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  require(f != nullptr, ErrorCode::io, "cannot open '" + path.string() + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  require(png != nullptr, ErrorCode::io, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  try {
    require(info != nullptr, ErrorCode::io, "png_create_info_struct failed");
    png_init_io(png, f.get());
    png_read_info(png, info);
    require(png_get_color_type(png, info) == PNG_COLOR_TYPE_RGB && png_get_bit_depth(png, info) == 8,
            ErrorCode::parse, "only 8-bit RGB PNGs are supported");
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    Canvas c(w, h);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int x = 0; x < w; ++x) c.set(x, y, {row[x * 3u], row[x * 3u + 1], row[x * 3u + 2]});
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return c;
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
}

Canvas auroc_bars(const protocols::ResultsTable& table) {
  std::vector<std::string> splits, exposures;
  for (const auto& r : table.rows) {
    if (std::find(splits.begin(), splits.end(), r.split) == splits.end()) splits.push_back(r.split);
    if (std::find(exposures.begin(), exposures.end(), r.exposure) == exposures.end()) exposures.push_back(r.exposure);
  }
  require(!splits.empty(), ErrorCode::invalid_input, "nothing to plot");
  // light/dark pairs per exposure source
  const Rgb palette[][2] = {{{158, 202, 225}, {33, 113, 181}},
                            {{253, 208, 162}, {217, 72, 1}},
                            {{199, 233, 192}, {35, 139, 69}},
                            {{218, 218, 235}, {106, 81, 163}}};
  const int bar = 10, gap = 18, margin = 30, plot_h = 240;
  const int per_group = static_cast<int>(exposures.size()) * 2 * bar;
  const int width = 2 * margin + static_cast<int>(splits.size()) * (per_group + gap);
  const int height = plot_h + 2 * margin;
  Canvas c(width, height);
  const int y0 = margin + plot_h;
  for (int q = 0; q <= 4; ++q) c.hline(margin, width - margin, y0 - q * plot_h / 4, {225, 225, 225});
  for (std::size_t s = 0; s < splits.size(); ++s) {
    int x = margin + gap / 2 + static_cast<int>(s) * (per_group + gap);
    for (std::size_t e = 0; e < exposures.size(); ++e) {
      const auto* r = table.find(splits[s], exposures[e]);
      const auto& pal = palette[e % 4];
      for (int which = 0; which < 2; ++which, x += bar) {
        if (!r || !r->ok()) continue;
        const double v = std::clamp(which == 0 ? r->clean_auroc : r->robust_auroc, 0.0, 1.0);
        c.fill_rect(x, y0 - static_cast<int>(v * plot_h + 0.5), x + bar - 1, y0, pal[which]);
      }
    }
  }
  c.hline(margin, width - margin, y0, {0, 0, 0});
  c.vline(margin, margin, y0, {0, 0, 0});
  return c;
}

}  // namespace rodeo::plot
