#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace spinecade {

/// Dense 2D raster, x-fastest storage. Used for slices, gradients and patch
/// planes; T is int16_t for raw slices and float/double for derived data.
template <class T>
class Image2D {
 public:
  Image2D() = default;
  Image2D(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  size_t size() const { return data_.size(); }

  T& operator()(int x, int y) { return data_[idx(x, y)]; }
  const T& operator()(int x, int y) const { return data_[idx(x, y)]; }

  /// Replicate-edge read: coordinates are clamped to the valid range.
  T at_clamped(int x, int y) const {
    x = std::clamp(x, 0, width_ - 1);
    y = std::clamp(y, 0, height_ - 1);
    return data_[idx(x, y)];
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(const Image2D& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

  friend bool operator==(const Image2D& a, const Image2D& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ &&
           a.data_ == b.data_;
  }

 private:
  size_t idx(int x, int y) const {
    return static_cast<size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

}  // namespace spinecade
