#include <algorithm>
#include <cmath>
#include <numbers>

#include "vitforge/dataset.hpp"

namespace vitforge {

bool AugmentSpec::is_identity() const {
  return !horizontal_flip && rotation_degrees == 0.0 && zoom_fraction == 0.0 && width_shift_fraction == 0.0 &&
         height_shift_fraction == 0.0;
}

AffineParams sample_affine(const AugmentSpec& spec, std::size_t height, std::size_t width, Rng& rng) {
  // Every draw happens unconditionally so the stream does not depend on which
  // magnitudes are enabled.
  const bool flip = rng.bernoulli(0.5);
  const double rot = rng.uniform(-1.0, 1.0);
  const double zoom = rng.uniform(-1.0, 1.0);
  const double sx = rng.uniform(-1.0, 1.0);
  const double sy = rng.uniform(-1.0, 1.0);
  AffineParams p;
  p.flip = spec.horizontal_flip && flip;
  p.rotation_degrees = rot * spec.rotation_degrees;
  p.zoom = 1.0 + zoom * spec.zoom_fraction;
  p.shift_x = sx * spec.width_shift_fraction * static_cast<double>(width);
  p.shift_y = sy * spec.height_shift_fraction * static_cast<double>(height);
  return p;
}

Image apply_affine(const Image& image, const AffineParams& params) {
  Image out(image.height, image.width, image.channels);
  const double cx = static_cast<double>(image.width) / 2.0;
  const double cy = static_cast<double>(image.height) / 2.0;
  const double theta = params.rotation_degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double inv_zoom = 1.0 / params.zoom;
  const auto max_x = static_cast<double>(image.width - 1);
  const auto max_y = static_cast<double>(image.height - 1);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx - params.shift_x;
      const double dy = static_cast<double>(y) + 0.5 - cy - params.shift_y;
      // Inverse rotation and zoom back into source coordinates.
      const double ux = (c * dx + s * dy) * inv_zoom;
      const double uy = (-s * dx + c * dy) * inv_zoom;
      double src_x = std::clamp(cx + ux - 0.5, 0.0, max_x);
      const double src_y = std::clamp(cy + uy - 0.5, 0.0, max_y);
      if (params.flip) src_x = max_x - src_x;
      const auto x0 = static_cast<std::size_t>(src_x);
      const auto y0 = static_cast<std::size_t>(src_y);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const std::size_t y1 = std::min(y0 + 1, image.height - 1);
      const double wx = src_x - static_cast<double>(x0);
      const double wy = src_y - static_cast<double>(y0);
      for (std::size_t ch = 0; ch < image.channels; ++ch) {
        const double top = image.at(y0, x0, ch) * (1.0 - wx) + image.at(y0, x1, ch) * wx;
        const double bottom = image.at(y1, x0, ch) * (1.0 - wx) + image.at(y1, x1, ch) * wx;
        out.at(y, x, ch) = static_cast<float>(std::clamp(top * (1.0 - wy) + bottom * wy, 0.0, 1.0));
      }
    }
  }
  return out;
}

LabeledImage augment(const LabeledImage& image, const AugmentSpec& spec, Rng& rng) {
  if (spec.is_identity()) return image;
  const AffineParams params = sample_affine(spec, image.pixels.height, image.pixels.width, rng);
  return {apply_affine(image.pixels, params), image.label, image.source_path};
}

}  // namespace vitforge
