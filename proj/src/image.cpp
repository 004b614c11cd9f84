#include "craniofit/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>

#include "craniofit/error.hpp"

namespace craniofit {

namespace {

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Reads a P5/P6 header, skipping comments; returns (width, height).
std::pair<int, int> read_header(std::istream& in, const std::string& magic, const std::string& path) {
  auto next_token = [&]() {
    std::string token;
    while (in >> token) {
      if (token[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return token;
    }
    throw_parse(path + ": truncated header");
  };
  if (next_token() != magic) throw_parse(path + ": expected " + magic + " header");
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w <= 0 || h <= 0) throw_parse(path + ": non-positive image size");
  if (maxval != 255) throw_parse(path + ": only 8-bit images are supported");
  in.get();  // single whitespace before raster
  return {w, h};
}

}  // namespace

void write_ppm(const rgb_image& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_io("cannot open " + path + " for writing");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<char> raster(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), raster.begin(),
      [](double v) { return static_cast<char>(quantize(v)); });
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out) throw_io("failed writing " + path);
}

rgb_image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("cannot open " + path);
  const auto [w, h] = read_header(in, "P6", path);
  rgb_image         image(w, h);
  std::vector<char> raster(image.pixels.size());
  in.read(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!in) throw_parse(path + ": truncated raster");
  for (std::size_t i = 0; i < raster.size(); ++i) {
    image.pixels[i] = static_cast<std::uint8_t>(raster[i]) / 255.0;
  }
  return image;
}

void write_pgm(const mask_image& mask, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_io("cannot open " + path + " for writing");
  out << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  std::vector<char> raster(mask.values.size());
  std::transform(mask.values.begin(), mask.values.end(), raster.begin(),
      [](std::uint8_t v) { return static_cast<char>(v ? 255 : 0); });
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out) throw_io("failed writing " + path);
}

mask_image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("cannot open " + path);
  const auto [w, h] = read_header(in, "P5", path);
  mask_image        mask(w, h);
  std::vector<char> raster(mask.values.size());
  in.read(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!in) throw_parse(path + ": truncated raster");
  for (std::size_t i = 0; i < raster.size(); ++i) {
    mask.values[i] = static_cast<std::uint8_t>(raster[i]) >= 128 ? 1 : 0;
  }
  return mask;
}

void write_depth_pgm(const std::vector<double>& depth, int width, int height, const std::string& path) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto d : depth) {
    if (!std::isfinite(d)) continue;
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_io("cannot open " + path + " for writing");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  for (auto d : depth) {
    char v = 0;
    if (std::isfinite(d)) {
      const double t = hi > lo ? (hi - d) / (hi - lo) : 1.0;
      v = static_cast<char>(std::lround(40 + 215 * t));
    }
    out.put(v);
  }
}

}  // namespace craniofit
