#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace vitforge {

/// Interleaved H x W x C float image.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Half-pixel-centre bilinear resampling with edge clamping. Returns an
/// exact copy when the size is unchanged.
Image resize_bilinear(const Image& src, std::size_t height, std::size_t width);

/// Replicates a single channel to `channels`, or drops trailing channels
/// (alpha) when the source has more.
Image convert_channels(const Image& src, std::size_t channels);

class ImageDecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decodes PPM/PGM (P2, P3, P5, P6), and PNG/JPEG when built with libpng and
/// libjpeg. Values are returned on the 0..255 scale.
Image read_image(const std::filesystem::path& path);

/// Writes binary PPM (3 channels) or PGM (1 channel) from [0, 1] values.
void write_pnm(const std::filesystem::path& path, const Image& image);

bool is_supported_image(const std::filesystem::path& path);

}  // namespace vitforge
