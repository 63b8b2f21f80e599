#include "mtvnet/plot.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

#include "mtvnet/io_util.hpp"

namespace mtvnet {

namespace {

using Glyph = std::array<std::uint8_t, 7>;

const std::map<char, Glyph>& font() {
  static const std::map<char, Glyph> f = {
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'A', {0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {'^', {0x04, 0x0A, 0x11, 0x00, 0x00, 0x00, 0x00}}, {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}}, {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}}, {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
      {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}}, {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
      {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
  };
  return f;
}

constexpr std::array<Rgb, 6> kPalette = {{{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {255, 127, 14},
                                          {148, 103, 189}, {140, 86, 75}}};

std::string compact(double v) {
  char buf[32];
  const double a = std::fabs(v);
  if (a != 0.0 && (a >= 1e5 || a < 1e-2)) {
    std::snprintf(buf, sizeof buf, "%.1E", v);
  } else if (a >= 100 || std::floor(v) == v) {
    std::snprintf(buf, sizeof buf, "%.0f", v);
  } else {
    std::snprintf(buf, sizeof buf, "%.2f", v);
  }
  return buf;
}

// Matplotlib-like "hot" ramp for t in [0, 1].
Rgb hot(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto ch = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
  return {ch(t * 2.5), ch((t - 0.4) * 2.5), ch((t - 0.8) * 5.0)};
}

}  // namespace

Canvas::Canvas(int width, int height, Rgb background)
    : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height, background) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("canvas size must be positive");
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  pixels_[static_cast<std::size_t>(y) * width_ + x] = c;
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb c, int thickness) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  const int half = thickness / 2;
  while (true) {
    for (int oy = -half; oy <= half; ++oy)
      for (int ox = -half; ox <= half; ++ox) set(x0 + ox, y0 + oy, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Canvas::rect(int x0, int y0, int x1, int y1, Rgb c) {
  line(x0, y0, x1, y0, c);
  line(x1, y0, x1, y1, c);
  line(x1, y1, x0, y1, c);
  line(x0, y1, x0, y0, c);
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
}

int Canvas::text(int x, int y, const std::string& s, Rgb c, int scale) {
  const auto& f = font();
  for (char raw : s) {
    const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
    auto it = f.find(ch);
    if (it != f.end()) {
      for (int row = 0; row < 7; ++row)
        for (int col = 0; col < 5; ++col)
          if (it->second[row] & (0x10 >> col)) fill_rect(x + col * scale, y + row * scale, x + col * scale + scale - 1,
                                                         y + row * scale + scale - 1, c);
    }
    x += 6 * scale;
  }
  return x;
}

void write_png(const Canvas& canvas, const std::filesystem::path& path) {
  std::vector<std::uint8_t> rgb;
  rgb.reserve(canvas.pixels().size() * 3);
  for (const auto& p : canvas.pixels()) {
    rgb.push_back(p.r);
    rgb.push_back(p.g);
    rgb.push_back(p.b);
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(canvas.width());
  image.height = static_cast<png_uint_32>(canvas.height());
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("png encoding failed: ") + image.message);
  }
  std::vector<std::uint8_t> bytes(size);
  if (!png_image_write_to_memory(&image, bytes.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("png encoding failed: ") + image.message);
  }
  atomic_write(path, [&](std::ostream& out) {
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(size));
  });
}

Canvas line_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                  const std::string& y_label, bool log_x, int width, int height) {
  Canvas cv(width, height);
  const int left = 80, right = 190, top = 40, bottom = 60;
  const int x0 = left, x1 = width - right, y0 = height - bottom, y1 = top;
  const Rgb black{0, 0, 0}, grey{220, 220, 220};

  auto tx = [&](double x) { return log_x ? std::log2(x) : x; };
  double xmin = INFINITY, xmax = -INFINITY, ymax = 0;
  std::set<double> xs;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, tx(s.x[i]));
      xmax = std::max(xmax, tx(s.x[i]));
      ymax = std::max(ymax, s.y[i]);
      xs.insert(s.x[i]);
    }
  }
  if (!std::isfinite(xmin)) {
    xmin = 0;
    xmax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax <= 0) ymax = 1;
  ymax *= 1.05;
  auto px = [&](double x) { return x0 + static_cast<int>(std::lround((tx(x) - xmin) / (xmax - xmin) * (x1 - x0))); };
  auto py = [&](double y) { return y0 - static_cast<int>(std::lround(y / ymax * (y0 - y1))); };

  for (int k = 0; k <= 5; ++k) {
    const double v = ymax * k / 5.0;
    cv.line(x0, py(v), x1, py(v), grey);
    const auto label = compact(v);
    cv.text(x0 - 8 - 6 * static_cast<int>(label.size()), py(v) - 3, label, black);
  }
  for (double x : xs) {
    cv.line(px(x), y0, px(x), y0 + 5, black);
    const auto label = compact(x);
    cv.text(px(x) - 3 * static_cast<int>(label.size()), y0 + 10, label, black);
  }
  cv.line(x0, y0, x1, y0, black);
  cv.line(x0, y0, x0, y1, black);
  cv.text(x0, 12, title, black, 2);
  cv.text((x0 + x1) / 2 - 3 * static_cast<int>(x_label.size()), height - 22, x_label, black);
  cv.text(8, top - 16, y_label, black);

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const Rgb col = kPalette[si % kPalette.size()];
    for (std::size_t i = 0; i + 1 < s.x.size(); ++i) cv.line(px(s.x[i]), py(s.y[i]), px(s.x[i + 1]), py(s.y[i + 1]), col, 2);
    for (std::size_t i = 0; i < s.x.size(); ++i) cv.fill_rect(px(s.x[i]) - 3, py(s.y[i]) - 3, px(s.x[i]) + 3, py(s.y[i]) + 3, col);
    const int ly = top + 10 + static_cast<int>(si) * 16;
    cv.fill_rect(x1 + 15, ly, x1 + 27, ly + 6, col);
    cv.text(x1 + 33, ly, s.name, black);
  }
  return cv;
}

Canvas heatmap(const torch::Tensor& values, int r0, int r1, int c0, int c1, int cell) {
  if (values.dim() != 2) throw std::invalid_argument("heatmap expects a 2D tensor");
  auto v = values.detach().to(torch::kFloat64).contiguous();
  const int rows = static_cast<int>(v.size(0)), cols = static_cast<int>(v.size(1));
  const double lo = v.min().item<double>();
  const double hi = v.max().item<double>();
  const double span = hi > lo ? hi - lo : 1.0;
  auto a = v.accessor<double, 2>();
  Canvas cv(cols * cell, rows * cell);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      cv.fill_rect(c * cell, r * cell, c * cell + cell - 1, r * cell + cell - 1, hot((a[r][c] - lo) / span));
  const Rgb red{255, 0, 0};
  const int bx0 = c0 * cell, by0 = r0 * cell, bx1 = c1 * cell - 1, by1 = r1 * cell - 1;
  cv.rect(bx0, by0, bx1, by1, red);
  cv.rect(bx0 + 1, by0 + 1, bx1 - 1, by1 - 1, red);
  return cv;
}

}  // namespace mtvnet
