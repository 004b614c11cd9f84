#pragma once

#include <string>
#include <vector>

#include "craniofit/geometry.hpp"

namespace craniofit {

// Interleaved RGB image, values nominally in [0, 1].
struct rgb_image {
  int                 width  = 0;
  int                 height = 0;
  std::vector<double> pixels;  // (y * width + x) * 3 + channel

  rgb_image() = default;
  rgb_image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0.0) {}

  double&       at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double        at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::size_t   pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

// Binary mask: 1 = pixel known, 0 = pixel missing.
struct mask_image {
  int                       width  = 0;
  int                       height = 0;
  std::vector<std::uint8_t> values;

  mask_image() = default;
  mask_image(int w, int h, std::uint8_t fill = 1)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t  at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Binary PPM (P6) / PGM (P5), 8 bits per sample. Colour values are clamped
// to [0, 1] and quantized on write.
void       write_ppm(const rgb_image& image, const std::string& path);
rgb_image  read_ppm(const std::string& path);
void       write_pgm(const mask_image& mask, const std::string& path);
mask_image read_pgm(const std::string& path);

// Grayscale dump of a depth buffer: near = bright, empty = black.
void write_depth_pgm(const std::vector<double>& depth, int width, int height, const std::string& path);

}  // namespace craniofit
