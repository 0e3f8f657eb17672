#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace polyreg::motion {

/// Dense optical flow, (u, v) per pixel interleaved, row-major, pixel units.
struct FlowMap {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // 2 * width * height

  FlowMap() = default;
  FlowMap(int w, int h);
  float u(int x, int y) const { return data[2 * (static_cast<std::size_t>(y) * width + x)]; }
  float v(int x, int y) const { return data[2 * (static_cast<std::size_t>(y) * width + x) + 1]; }
  bool operator==(const FlowMap&) const = default;
};

struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c);
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

/// Middlebury .flo: float 202021.25, int32 width, int32 height, then
/// interleaved float32 (u, v), all little-endian.
inline constexpr float kFloTag = 202021.25f;

FlowMap read_flo(const std::string& path);
void write_flo(const FlowMap& flow, const std::string& path);

/// Binary PGM (P5) / PPM (P6), maxval 255.
Image read_pnm(const std::string& path);
void write_pnm(const Image& image, const std::string& path);

}  // namespace polyreg::motion
