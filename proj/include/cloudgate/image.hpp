#pragma once

#include <cstddef>
#include <vector>

namespace cloudgate {

/// Planar (channel-major) float image, shape channels x height x width.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }

  friend bool operator==(const Image&, const Image&) = default;
};

}  // namespace cloudgate
