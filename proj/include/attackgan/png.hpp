#pragma once

// Minimal line-plot rasterizer on top of libpng. Plotted series are also
// written as text chunks so a plot can be checked against its source data.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <png.h>

#include "attackgan/checkpoint.hpp"

namespace attackgan {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 255) {}

  void set(long x, long y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(width) || y >= static_cast<long>(height)) return;
    const std::size_t i = (static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)) * 3;
    rgb[i] = c[0];
    rgb[i + 1] = c[1];
    rgb[i + 2] = c[2];
  }

  void line(long x0, long y0, long x1, long y1, std::array<std::uint8_t, 3> c, int thickness = 1) {
    const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    for (;;) {
      for (int ox = 0; ox < thickness; ++ox)
        for (int oy = 0; oy < thickness; ++oy) set(x0 + ox, y0 + oy, c);
      if (x0 == x1 && y0 == y1) break;
      const long e2 = 2 * err;
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
};

namespace detail {

struct PngBuffer {
  std::vector<unsigned char> bytes;
  std::size_t pos = 0;
};

inline void png_error_fn(png_structp, png_const_charp msg) { throw Error("report", std::string("libpng: ") + msg); }
inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

inline std::vector<unsigned char> encode_png(const Image& img, const std::map<std::string, std::string>& text = {}) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw Error("report", "cannot create PNG writer");
  png_infop info = png_create_info_struct(png);
  detail::PngBuffer buf;
  try {
    if (!info) throw Error("report", "cannot create PNG info");
    png_set_write_fn(
        png, &buf,
        [](png_structp p, png_bytep data, png_size_t len) {
          auto* b = static_cast<detail::PngBuffer*>(png_get_io_ptr(p));
          b->bytes.insert(b->bytes.end(), data, data + len);
        },
        nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<std::string> keys, values;
    for (const auto& [k, v] : text) keys.push_back(k), values.push_back(v);
    std::vector<png_text> chunks(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
      chunks[i] = png_text{};
      chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
      chunks[i].key = keys[i].data();
      chunks[i].text = values[i].data();
      chunks[i].text_length = values[i].size();
    }
    if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
    png_write_info(png, info);
    for (std::size_t y = 0; y < img.height; ++y) {
      png_write_row(png, const_cast<png_bytep>(img.rgb.data() + y * img.width * 3));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return std::move(buf.bytes);
}

/// Text chunks of a PNG file, keyed by keyword.
inline std::map<std::string, std::string> read_png_text(const std::filesystem::path& path) {
  detail::PngBuffer buf{detail::read_file_bytes(path, "report"), 0};
  if (buf.bytes.size() < 8 || png_sig_cmp(buf.bytes.data(), 0, 8) != 0) throw Error("report", path.string() + " is not a PNG");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw Error("report", "cannot create PNG reader");
  png_infop info = png_create_info_struct(png);
  png_infop end = png_create_info_struct(png);
  std::map<std::string, std::string> out;
  try {
    if (!info || !end) throw Error("report", "cannot create PNG info");
    png_set_read_fn(png, &buf, [](png_structp p, png_bytep data, png_size_t len) {
      auto* b = static_cast<detail::PngBuffer*>(png_get_io_ptr(p));
      if (b->pos + len > b->bytes.size()) png_error(p, "unexpected end of file");
      std::copy_n(b->bytes.data() + b->pos, len, data);
      b->pos += len;
    });
    png_read_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
    png_textp chunks = nullptr;
    int n = 0;
    png_get_text(png, info, &chunks, &n);
    for (int i = 0; i < n; ++i) out[chunks[i].key] = std::string(chunks[i].text, chunks[i].text_length);
  } catch (...) {
    png_destroy_read_struct(&png, &info, &end);
    throw;
  }
  png_destroy_read_struct(&png, &info, &end);
  return out;
}

inline constexpr std::array<std::array<std::uint8_t, 3>, 6> kPalette{{
    {31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {255, 127, 14}, {148, 103, 189}, {140, 86, 75}}};

/// Encodes x/y pairs as "x,y;x,y" with six decimals.
inline std::string format_series(const Series& s) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.6f,%.6f", i ? ";" : "", s.x[i], s.y[i]);
    out += buf;
  }
  return out;
}

inline Series parse_series(const std::string& label, const std::string& text) {
  Series s{label, {}, {}};
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto end = std::min(text.find(';', pos), text.size());
    const std::string pair = text.substr(pos, end - pos);
    const auto comma = pair.find(',');
    if (comma == std::string::npos) throw Error("report", "malformed series text");
    s.x.push_back(std::stod(pair.substr(0, comma)));
    s.y.push_back(std::stod(pair.substr(comma + 1)));
    pos = end + 1;
  }
  return s;
}

/// Renders the series on shared axes and writes a PNG whose tEXt chunks hold
/// the title and each series ("series:<label>").
inline void write_line_plot(const std::filesystem::path& path, const std::string& title, const std::vector<Series>& series,
                            std::size_t width = 640, std::size_t height = 400) {
  Image img(width, height);
  const long left = 50, right = static_cast<long>(width) - 20, top = 20, bottom = static_cast<long>(height) - 40;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series) {
    for (double v : s.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
    for (double v : s.y) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  ymin = std::min(ymin, 0.0);
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return left + std::lround((x - xmin) / (xmax - xmin) * static_cast<double>(right - left)); };
  auto py = [&](double y) { return bottom - std::lround((y - ymin) / (ymax - ymin) * static_cast<double>(bottom - top)); };
  const std::array<std::uint8_t, 3> axis{0, 0, 0}, grid{225, 225, 225};
  for (int k = 1; k <= 4; ++k) {
    const long y = bottom - (bottom - top) * k / 4;
    img.line(left, y, right, y, grid);
  }
  img.line(left, bottom, right, bottom, axis);
  img.line(left, top, left, bottom, axis);
  std::map<std::string, std::string> text{{"Title", title},
                                          {"y-range", format_series({"", {ymin}, {ymax}})}};
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const auto color = kPalette[i % kPalette.size()];
    for (std::size_t j = 0; j + 1 < s.x.size(); ++j) img.line(px(s.x[j]), py(s.y[j]), px(s.x[j + 1]), py(s.y[j + 1]), color, 2);
    if (s.x.size() == 1) img.line(px(s.x[0]) - 2, py(s.y[0]), px(s.x[0]) + 2, py(s.y[0]), color, 2);
    text["series:" + s.label] = format_series(s);
  }
  detail::write_file_bytes(path, encode_png(img, text), "report");
}

}  // namespace attackgan
