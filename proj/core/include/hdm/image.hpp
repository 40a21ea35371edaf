#pragma once

#include <cstddef>
#include <vector>

namespace hdm {

// Planar C x H x W float image, pixel values nominally in [-1, 1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  bool empty() const { return data.empty(); }
  bool operator==(const Image&) const = default;
};

}  // namespace hdm
