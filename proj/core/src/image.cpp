#include "vitforge/image.hpp"

#include <algorithm>
#include <cmath>

namespace vitforge {

Image resize_bilinear(const Image& src, std::size_t height, std::size_t width) {
  if (height == src.height && width == src.width) return src;
  Image dst(height, width, src.channels);
  const double sy = static_cast<double>(src.height) / static_cast<double>(height);
  const double sx = static_cast<double>(src.width) / static_cast<double>(width);
  const auto max_y = static_cast<double>(src.height - 1);
  const auto max_x = static_cast<double>(src.width - 1);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = src.at(y0, x0, c) * (1.0 - wx) + src.at(y0, x1, c) * wx;
        const double bottom = src.at(y1, x0, c) * (1.0 - wx) + src.at(y1, x1, c) * wx;
        dst.at(y, x, c) = static_cast<float>(top * (1.0 - wy) + bottom * wy);
      }
    }
  }
  return dst;
}

Image convert_channels(const Image& src, std::size_t channels) {
  if (src.channels == channels) return src;
  Image dst(src.height, src.width, channels);
  for (std::size_t y = 0; y < src.height; ++y) {
    for (std::size_t x = 0; x < src.width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        dst.at(y, x, c) = src.channels == 1 ? src.at(y, x, 0) : src.at(y, x, std::min(c, src.channels - 1));
      }
    }
  }
  return dst;
}

}  // namespace vitforge
