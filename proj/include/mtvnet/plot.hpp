#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace mtvnet {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

/// RGB raster with a few drawing primitives and a 5x7 bitmap font.
class Canvas {
 public:
  Canvas(int width, int height, Rgb background = {255, 255, 255});

  int width() const { return width_; }
  int height() const { return height_; }
  Rgb at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }

  void set(int x, int y, Rgb c);
  void line(int x0, int y0, int x1, int y1, Rgb c, int thickness = 1);
  void rect(int x0, int y0, int x1, int y1, Rgb c);  // outline, inclusive corners
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
  /// Upper-case text; unknown glyphs draw as blanks. Returns the end x.
  int text(int x, int y, const std::string& s, Rgb c, int scale = 1);

  const std::vector<Rgb>& pixels() const { return pixels_; }

 private:
  int width_, height_;
  std::vector<Rgb> pixels_;
};

void write_png(const Canvas& canvas, const std::filesystem::path& path);

struct Series {
  std::string name;
  std::vector<double> x, y;
};

/// Line chart with markers. log2 x-axis when `log_x`; y axis linear from 0.
Canvas line_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                  const std::string& y_label, bool log_x = false, int width = 720, int height = 480);

/// Heatmap of a 2D tensor (rows = first axis) with a red outline around the
/// given cell range [r0, r1) x [c0, c1). Each cell becomes `cell` pixels.
Canvas heatmap(const torch::Tensor& values, int r0, int r1, int c0, int c1, int cell = 8);

}  // namespace mtvnet
