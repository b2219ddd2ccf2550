#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "stx/errors.hpp"

namespace stx {

/// RGB byte image, one pixel per board tile.
struct Image {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> rgb;  // rows*cols*3, row-major

  std::array<std::uint8_t, 3> at(int r, int c) const {
    const std::size_t base = 3 * (static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c));
    return {rgb[base], rgb[base + 1], rgb[base + 2]};
  }
  void set(int r, int c, std::uint8_t red, std::uint8_t green, std::uint8_t blue) {
    const std::size_t base = 3 * (static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c));
    rgb[base] = red;
    rgb[base + 1] = green;
    rgb[base + 2] = blue;
  }
  bool operator==(const Image&) const = default;
};

inline Image make_image(int rows, int cols) {
  Image img;
  img.rows = rows;
  img.cols = cols;
  img.rgb.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * 3, 0);
  return img;
}

/// Binary PPM (P6).
inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValueError("write_ppm: cannot open " + path);
  out << "P6\n" << img.cols << " " << img.rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw ValueError("write_ppm: write failed for " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValueError("read_ppm: cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255) throw ValueError("read_ppm: unsupported format in " + path);
  in.get();  // single whitespace after header
  Image img = make_image(h, w);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw ValueError("read_ppm: truncated file " + path);
  return img;
}

}  // namespace stx
