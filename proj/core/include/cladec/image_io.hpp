#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cladec::image {

/// 8-bit interleaved RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  bool operator==(const RgbImage&) const = default;
};

std::string encode_ppm(const RgbImage& img);
std::string encode_png(const RgbImage& img);

/// Format chosen by extension: .png, otherwise binary PPM.
void write_image(const std::filesystem::path& path, const RgbImage& img);

RgbImage decode_ppm(const std::string& bytes);

/// Draws upper-case text with a 3x5 bitmap font scaled by `scale`.
void draw_text(RgbImage& img, int x, int y, const std::string& text, int scale,
               std::uint8_t r, std::uint8_t g, std::uint8_t b);
int text_width(const std::string& text, int scale);

}  // namespace cladec::image
