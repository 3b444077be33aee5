#ifndef RLQ_IMAGE_HPP_
#define RLQ_IMAGE_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace rlq {

/// 8-bit RGB image, row-major interleaved.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // height * width * 3

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  bool operator==(const Image& other) const = default;
};

/// Validates the degradation-engine input contract (height >= 16, width >= 8,
/// buffer size consistent). Throws std::invalid_argument.
void validate_image(const Image& img);

// Minimal PNG codec (8-bit RGB/RGBA, non-interlaced). Deterministic output:
// fixed filter strategy and zlib settings.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

}  // namespace rlq

#endif  // RLQ_IMAGE_HPP_
