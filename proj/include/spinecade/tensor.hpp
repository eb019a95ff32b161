#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace spinecade {

/// Dense NCHW tensor. Fully-connected activations use h = w = 1.
template <class T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<size_t>(n_) * c_ * h_ * w_, T{}) {}

  size_t size() const { return v.size(); }
  size_t sample_size() const { return static_cast<size_t>(c) * h * w; }

  T* sample(int i) { return v.data() + sample_size() * i; }
  const T* sample(int i) const { return v.data() + sample_size() * i; }

  T& at(int in_, int ic, int iy, int ix) {
    return v[((static_cast<size_t>(in_) * c + ic) * h + iy) * w + ix];
  }
  const T& at(int in_, int ic, int iy, int ix) const {
    return v[((static_cast<size_t>(in_) * c + ic) * h + iy) * w + ix];
  }

  void zero() { std::fill(v.begin(), v.end(), T{}); }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

}  // namespace spinecade
