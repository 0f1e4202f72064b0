#include "c3r/plot.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "c3r/png_io.hpp"
#include "c3r/tensor.hpp"

namespace c3r {
namespace {

using Rgb = std::array<uint8_t, 3>;

constexpr int kWidth = 640, kHeight = 400;
constexpr int kLeft = 70, kRight = 20, kTop = 30, kBottom = 60;
constexpr Rgb kWhite{255, 255, 255}, kBlack{0, 0, 0}, kGrey{200, 200, 200};
constexpr Rgb kPalette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
                            {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};

// 5x7 glyphs, one byte per row, low 5 bits used (MSB = leftmost column).
const std::map<char, std::array<uint8_t, 7>>& font() {
  static const std::map<char, std::array<uint8_t, 7>> f = {
      {'0', {14, 17, 19, 21, 25, 17, 14}}, {'1', {4, 12, 4, 4, 4, 4, 14}},     {'2', {14, 17, 1, 2, 4, 8, 31}},
      {'3', {31, 2, 4, 2, 1, 17, 14}},     {'4', {2, 6, 10, 18, 31, 2, 2}},    {'5', {31, 16, 30, 1, 1, 17, 14}},
      {'6', {6, 8, 16, 30, 17, 17, 14}},   {'7', {31, 1, 2, 4, 8, 8, 8}},      {'8', {14, 17, 17, 14, 17, 17, 14}},
      {'9', {14, 17, 17, 15, 1, 2, 12}},   {'A', {14, 17, 17, 31, 17, 17, 17}}, {'B', {30, 17, 17, 30, 17, 17, 30}},
      {'C', {14, 17, 16, 16, 16, 17, 14}}, {'D', {28, 18, 17, 17, 17, 18, 28}}, {'E', {31, 16, 16, 30, 16, 16, 31}},
      {'F', {31, 16, 16, 30, 16, 16, 16}}, {'G', {14, 17, 16, 23, 17, 17, 15}}, {'H', {17, 17, 17, 31, 17, 17, 17}},
      {'I', {14, 4, 4, 4, 4, 4, 14}},      {'J', {7, 2, 2, 2, 2, 18, 12}},      {'K', {17, 18, 20, 24, 20, 18, 17}},
      {'L', {16, 16, 16, 16, 16, 16, 31}}, {'M', {17, 27, 21, 21, 17, 17, 17}}, {'N', {17, 17, 25, 21, 19, 17, 17}},
      {'O', {14, 17, 17, 17, 17, 17, 14}}, {'P', {30, 17, 17, 30, 16, 16, 16}}, {'Q', {14, 17, 17, 17, 21, 18, 13}},
      {'R', {30, 17, 17, 30, 20, 18, 17}}, {'S', {15, 16, 16, 14, 1, 1, 30}},   {'T', {31, 4, 4, 4, 4, 4, 4}},
      {'U', {17, 17, 17, 17, 17, 17, 14}}, {'V', {17, 17, 17, 17, 17, 10, 4}},  {'W', {17, 17, 17, 21, 21, 21, 10}},
      {'X', {17, 17, 10, 4, 10, 17, 17}},  {'Y', {17, 17, 10, 4, 4, 4, 4}},     {'Z', {31, 1, 2, 4, 8, 16, 31}},
      {'.', {0, 0, 0, 0, 0, 12, 12}},      {'-', {0, 0, 0, 31, 0, 0, 0}},       {'+', {0, 4, 4, 31, 4, 4, 0}},
      {'_', {0, 0, 0, 0, 0, 0, 31}},       {':', {0, 12, 12, 0, 12, 12, 0}},    {'/', {1, 1, 2, 4, 8, 16, 16}},
      {'(', {2, 4, 8, 8, 8, 4, 2}},        {')', {8, 4, 2, 2, 2, 4, 8}},        {'=', {0, 0, 31, 0, 31, 0, 0}},
      {'[', {14, 8, 8, 8, 8, 8, 14}},      {']', {14, 2, 2, 2, 2, 2, 14}},      {'%', {24, 25, 2, 4, 8, 19, 3}},
      {',', {0, 0, 0, 0, 12, 4, 8}},       {' ', {0, 0, 0, 0, 0, 0, 0}}};
  return f;
}

class Canvas {
 public:
  Canvas() : img_{kWidth, kHeight, 3, std::vector<uint8_t>(static_cast<size_t>(kWidth) * kHeight * 3, 255)} {}

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= kWidth || y >= kHeight) return;
    auto* p = &img_.pixels[(static_cast<size_t>(y) * kWidth + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
  void rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
      for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
  }
  void line(int x0, int y0, int x1, int y1, Rgb c) {
    const int n = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
    for (int i = 0; i <= n; ++i)
      set(x0 + static_cast<int>(std::lround(static_cast<double>(x1 - x0) * i / n)),
          y0 + static_cast<int>(std::lround(static_cast<double>(y1 - y0) * i / n)), c);
  }
  void text(int x, int y, const std::string& s, Rgb c) {
    for (char ch : s) {
      const auto it = font().find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
      if (it != font().end())
        for (int r = 0; r < 7; ++r)
          for (int col = 0; col < 5; ++col)
            if (it->second[static_cast<size_t>(r)] & (16 >> col)) set(x + col, y + r, c);
      x += 6;
    }
  }
  static int text_width(const std::string& s) { return static_cast<int>(s.size()) * 6; }
  void save(const std::string& path) const { write_png(path, img_); }

 private:
  Image8 img_;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, std::abs(v) >= 100 || (v != 0 && std::abs(v) < 0.01) ? "%.2g" : "%.3g", v);
  return buf;
}

struct Axes {
  double lo, hi;
  int y_of(double v) const {
    const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
    return kHeight - kBottom - static_cast<int>(std::lround(t * (kHeight - kTop - kBottom)));
  }
};

Axes draw_frame(Canvas& cv, const std::string& title, double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  Axes ax{lo - pad, hi + pad};
  cv.text((kWidth - Canvas::text_width(title)) / 2, 10, title, kBlack);
  for (int i = 0; i <= 4; ++i) {
    const double v = ax.lo + (ax.hi - ax.lo) * i / 4;
    const int y = ax.y_of(v);
    cv.line(kLeft, y, kWidth - kRight, y, kGrey);
    cv.text(kLeft - 6 - Canvas::text_width(fmt(v)), y - 3, fmt(v), kBlack);
  }
  cv.line(kLeft, kTop, kLeft, kHeight - kBottom, kBlack);
  cv.line(kLeft, kHeight - kBottom, kWidth - kRight, kHeight - kBottom, kBlack);
  return ax;
}

}  // namespace

void plot_lines(const std::string& path, const std::string& title, const std::vector<Series>& series) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, xlo = lo, xhi = -lo;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("plot_lines: x/y length mismatch in '" + s.name + "'");
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      lo = std::min(lo, s.y[i]);
      hi = std::max(hi, s.y[i]);
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
    }
  }
  if (!std::isfinite(lo)) throw ConfigError("plot_lines: no finite data");
  Canvas cv;
  const Axes ax = draw_frame(cv, title, lo, hi);
  const double xspan = xhi > xlo ? xhi - xlo : 1.0;
  auto x_of = [&](double x) { return kLeft + static_cast<int>(std::lround((x - xlo) / xspan * (kWidth - kLeft - kRight))); };
  cv.text(kLeft - 3, kHeight - kBottom + 6, fmt(xlo), kBlack);
  cv.text(kWidth - kRight - Canvas::text_width(fmt(xhi)), kHeight - kBottom + 6, fmt(xhi), kBlack);
  for (size_t si = 0; si < series.size(); ++si) {
    const Rgb c = kPalette[si % std::size(kPalette)];
    const auto& s = series[si];
    for (size_t i = 1; i < s.x.size(); ++i)
      if (std::isfinite(s.y[i - 1]) && std::isfinite(s.y[i]))
        cv.line(x_of(s.x[i - 1]), ax.y_of(s.y[i - 1]), x_of(s.x[i]), ax.y_of(s.y[i]), c);
    const int ly = kHeight - kBottom + 22 + static_cast<int>(si % 3) * 10;
    const int lx = kLeft + static_cast<int>(si / 3) * 180;
    cv.rect(lx, ly + 2, lx + 8, ly + 4, c);
    cv.text(lx + 12, ly, s.name, kBlack);
  }
  cv.save(path);
}

void plot_bars(const std::string& path, const std::string& title, const std::vector<std::pair<std::string, double>>& bars) {
  if (bars.empty()) throw ConfigError("plot_bars: no data");
  double lo = 0, hi = 0;
  for (const auto& [_, v] : bars) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Canvas cv;
  const Axes ax = draw_frame(cv, title, lo, hi);
  const int slot = (kWidth - kLeft - kRight) / static_cast<int>(bars.size());
  for (size_t i = 0; i < bars.size(); ++i) {
    const int x0 = kLeft + static_cast<int>(i) * slot + slot / 5, x1 = kLeft + static_cast<int>(i + 1) * slot - slot / 5;
    cv.rect(x0, ax.y_of(0), x1, ax.y_of(bars[i].second), kPalette[i % std::size(kPalette)]);
    const auto label = bars[i].first.substr(0, static_cast<size_t>(std::max(1, slot / 6)));
    cv.text(x0 + (x1 - x0 - Canvas::text_width(label)) / 2, kHeight - kBottom + 6 + static_cast<int>(i % 2) * 10, label, kBlack);
    cv.text(x0, ax.y_of(bars[i].second) - 10, fmt(bars[i].second), kBlack);
  }
  cv.save(path);
}

void plot_distributions(const std::string& path, const std::string& title,
                        const std::vector<std::pair<std::string, std::vector<double>>>& groups) {
  if (groups.empty()) throw ConfigError("plot_distributions: no data");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [_, v] : groups)
    for (double x : v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  if (!std::isfinite(lo)) throw ConfigError("plot_distributions: no finite data");
  Canvas cv;
  const Axes ax = draw_frame(cv, title, lo, hi);
  const int slot = (kWidth - kLeft - kRight) / static_cast<int>(groups.size());
  auto quantile = [](const std::vector<double>& s, double q) {
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto i = static_cast<size_t>(std::floor(pos));
    const size_t j = std::min(i + 1, s.size() - 1);
    return s[i] + (pos - static_cast<double>(i)) * (s[j] - s[i]);
  };
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    auto s = groups[gi].second;
    if (s.empty()) continue;
    std::sort(s.begin(), s.end());
    const Rgb c = kPalette[gi % std::size(kPalette)];
    const int x0 = kLeft + static_cast<int>(gi) * slot + slot / 4, x1 = kLeft + static_cast<int>(gi + 1) * slot - slot / 4;
    const int xm = (x0 + x1) / 2;
    cv.line(xm, ax.y_of(s.front()), xm, ax.y_of(s.back()), kBlack);
    cv.rect(x0, ax.y_of(quantile(s, 0.25)), x1, ax.y_of(quantile(s, 0.75)), c);
    cv.line(x0, ax.y_of(quantile(s, 0.5)), x1, ax.y_of(quantile(s, 0.5)), kBlack);
    const auto label = groups[gi].first.substr(0, static_cast<size_t>(std::max(1, slot / 6)));
    cv.text(xm - Canvas::text_width(label) / 2, kHeight - kBottom + 6 + static_cast<int>(gi % 2) * 10, label, kBlack);
  }
  cv.save(path);
}

}  // namespace c3r
