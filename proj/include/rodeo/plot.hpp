#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace rodeo::protocols {
struct ResultsTable;
}

namespace rodeo::plot {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

/// RGB raster, origin top-left.
class Canvas {
 public:
  Canvas(int width, int height, Rgb background = {255, 255, 255});

  int width() const { return width_; }
  int height() const { return height_; }
  Rgb at(int x, int y) const;
  void set(int x, int y, Rgb c);
  /// Clipped to the canvas; empty when x1 <= x0 or y1 <= y0.
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
  void hline(int x0, int x1, int y, Rgb c);
  void vline(int x, int y0, int y1, Rgb c);

  const std::vector<std::uint8_t>& pixels() const { return pixels_; }

 private:
  int width_, height_;
  std::vector<std::uint8_t> pixels_;
};

void write_png(const std::filesystem::path& path, const Canvas& canvas);
/// Width, height and RGB pixels of an 8-bit RGB PNG.
Canvas read_png(const std::filesystem::path& path);

/// Grouped bars, one group per split: clean then robust AUROC for each
/// exposure source. Light shade = clean, dark = robust; y axis 0..1 with
/// gridlines every 0.25.
Canvas auroc_bars(const protocols::ResultsTable& table);

}  // namespace rodeo::plot
