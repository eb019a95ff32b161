#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "spinecade/error.hpp"
#include "spinecade/rng.hpp"
#include "spinecade/tensor.hpp"
#include "spinecade/threads.hpp"

namespace spinecade {

struct PatchSet;  // patch.hpp

enum class LayerKind : uint8_t {
  conv = 0,
  max_pool = 1,
  fully_connected = 2,
  relu = 3,
  dropout = 4,
  softmax = 5,
};

/// Per-sample activation shape (channels, height, width).
struct Shape {
  int c = 0, h = 0, w = 0;
  int flat() const { return c * h * w; }
  bool operator==(const Shape&) const = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int in_channels = 0, out_channels = 0, kernel_size = 0, stride = 1,
      padding = 0;            // conv
  int window = 0, pool_stride = 0;  // max_pool
  int in_dim = 0, out_dim = 0;      // fully_connected
  double keep_prob = 1.0;           // dropout

  static LayerSpec conv(int in_ch, int out_ch, int k, int stride = 1,
                        int padding = 0) {
    LayerSpec s;
    s.kind = LayerKind::conv;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel_size = k;
    s.stride = stride;
    s.padding = padding;
    return s;
  }
  static LayerSpec max_pool(int window, int stride) {
    LayerSpec s;
    s.kind = LayerKind::max_pool;
    s.window = window;
    s.pool_stride = stride;
    return s;
  }
  static LayerSpec fully_connected(int in_dim, int out_dim) {
    LayerSpec s;
    s.kind = LayerKind::fully_connected;
    s.in_dim = in_dim;
    s.out_dim = out_dim;
    return s;
  }
  static LayerSpec relu() {
    LayerSpec s;
    s.kind = LayerKind::relu;
    return s;
  }
  static LayerSpec dropout(double keep_prob) {
    LayerSpec s;
    s.kind = LayerKind::dropout;
    s.keep_prob = keep_prob;
    return s;
  }
  static LayerSpec softmax() {
    LayerSpec s;
    s.kind = LayerKind::softmax;
    return s;
  }
};

namespace detail {

template <class T>
class Layer {
 public:
  explicit Layer(const LayerSpec& spec) : spec_(spec) {}
  virtual ~Layer() = default;

  const LayerSpec& spec() const { return spec_; }

  /// Validates the input shape, remembers it, and returns the output shape.
  virtual Shape bind(Shape in) = 0;
  virtual void init_params(Rng&) {}

  virtual Tensor<T> forward(const Tensor<T>& x, bool training,
                            Rng* dropout_rng, int threads) = 0;
  /// Consumes state stashed by the latest forward; weight gradients
  /// accumulate into the layer's grad tensors.
  virtual Tensor<T> backward(const Tensor<T>& dy, int threads) = 0;

  virtual std::vector<Tensor<T>*> params() { return {}; }
  virtual std::vector<Tensor<T>*> grads() { return {}; }
  /// Parallel to params(): true where weight decay applies (not biases).
  virtual std::vector<bool> decay_mask() { return {}; }

 protected:
  LayerSpec spec_;
  Shape in_{};
};

template <class T>
class ConvLayer final : public Layer<T> {
 public:
  using Layer<T>::spec_;
  using Layer<T>::in_;
  explicit ConvLayer(const LayerSpec& s) : Layer<T>(s) {}

  Shape bind(Shape in) override {
    const auto& s = spec_;
    if (in.c != s.in_channels)
      fail(Errc::shape_mismatch, "conv expects " +
                                     std::to_string(s.in_channels) +
                                     " input channels, got " +
                                     std::to_string(in.c));
    if (s.kernel_size < 1 || s.stride < 1 || s.padding < 0)
      fail(Errc::shape_mismatch, "bad conv geometry");
    const int oh = (in.h + 2 * s.padding - s.kernel_size) / s.stride + 1;
    const int ow = (in.w + 2 * s.padding - s.kernel_size) / s.stride + 1;
    if (oh < 1 || ow < 1)
      fail(Errc::shape_mismatch, "conv output would be empty");
    in_ = in;
    out_ = Shape{s.out_channels, oh, ow};
    weight_ = Tensor<T>(s.out_channels, s.in_channels, s.kernel_size,
                        s.kernel_size);
    bias_ = Tensor<T>(s.out_channels, 1, 1, 1);
    wgrad_ = weight_;
    bgrad_ = bias_;
    return out_;
  }

  void init_params(Rng& rng) override {
    const double fan_in = static_cast<double>(spec_.in_channels) *
                          spec_.kernel_size * spec_.kernel_size;
    const double sigma = std::sqrt(2.0 / fan_in);
    for (auto& w : weight_.v) w = static_cast<T>(rng.normal() * sigma);
    bias_.zero();
  }

  Tensor<T> forward(const Tensor<T>& x, bool, Rng*, int threads) override {
    x_ = x;
    Tensor<T> y(x.n, out_.c, out_.h, out_.w);
    parallel_for(static_cast<size_t>(x.n), threads, [&](size_t n0, size_t n1) {
      for (size_t n = n0; n < n1; ++n) forward_sample(x, y, static_cast<int>(n));
    });
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, int threads) override {
    Tensor<T> dx(x_.n, in_.c, in_.h, in_.w);
    const int workers = std::max(1, std::min<int>(threads, x_.n));
    std::vector<Tensor<T>> wpart(workers), bpart(workers);
    for (int t = 0; t < workers; ++t) {
      wpart[t] = Tensor<T>(weight_.n, weight_.c, weight_.h, weight_.w);
      bpart[t] = Tensor<T>(bias_.n, 1, 1, 1);
    }
    const size_t chunk =
        (static_cast<size_t>(x_.n) + workers - 1) / workers;
    parallel_for(static_cast<size_t>(workers), workers,
                 [&](size_t t0, size_t t1) {
                   for (size_t t = t0; t < t1; ++t) {
                     const size_t lo = t * chunk;
                     const size_t hi =
                         std::min<size_t>(x_.n, lo + chunk);
                     for (size_t n = lo; n < hi; ++n)
                       backward_sample(dy, dx, wpart[t], bpart[t],
                                       static_cast<int>(n));
                   }
                 });
    for (int t = 0; t < workers; ++t) {
      for (size_t i = 0; i < wgrad_.size(); ++i) wgrad_.v[i] += wpart[t].v[i];
      for (size_t i = 0; i < bgrad_.size(); ++i) bgrad_.v[i] += bpart[t].v[i];
    }
    return dx;
  }

  std::vector<Tensor<T>*> params() override { return {&weight_, &bias_}; }
  std::vector<Tensor<T>*> grads() override { return {&wgrad_, &bgrad_}; }
  std::vector<bool> decay_mask() override { return {true, false}; }

 private:
  // ox range keeping ix = ox*stride + (kx - padding) inside [0, in_w).
  std::pair<int, int> ox_bounds(int kx) const {
    const int s = spec_.stride, off = kx - spec_.padding;
    int lo = 0;
    if (off < 0) lo = (-off + s - 1) / s;
    int hi = (in_.w - 1 - off) / s;
    hi = std::min(hi, out_.w - 1);
    return {lo, hi};
  }

  void forward_sample(const Tensor<T>& x, Tensor<T>& y, int n) {
    const int k = spec_.kernel_size, s = spec_.stride, p = spec_.padding;
    for (int oc = 0; oc < out_.c; ++oc) {
      T* yrow0 = &y.at(n, oc, 0, 0);
      const T b = bias_.v[oc];
      for (int i = 0; i < out_.h * out_.w; ++i) yrow0[i] = b;
      for (int ic = 0; ic < in_.c; ++ic) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const T wv = weight_.at(oc, ic, ky, kx);
            const auto [ox0, ox1] = ox_bounds(kx);
            for (int oy = 0; oy < out_.h; ++oy) {
              const int iy = oy * s + ky - p;
              if (iy < 0 || iy >= in_.h) continue;
              const T* xr = &x.at(n, ic, iy, 0);
              T* yr = &y.at(n, oc, oy, 0);
              const int off = kx - p;
              if (s == 1) {
                for (int ox = ox0; ox <= ox1; ++ox)
                  yr[ox] += wv * xr[ox + off];
              } else {
                for (int ox = ox0; ox <= ox1; ++ox)
                  yr[ox] += wv * xr[ox * s + off];
              }
            }
          }
        }
      }
    }
  }

  void backward_sample(const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>& dw,
                       Tensor<T>& db, int n) {
    const int k = spec_.kernel_size, s = spec_.stride, p = spec_.padding;
    for (int oc = 0; oc < out_.c; ++oc) {
      const T* dyr0 = &dy.at(n, oc, 0, 0);
      T acc = T{};
      for (int i = 0; i < out_.h * out_.w; ++i) acc += dyr0[i];
      db.v[oc] += acc;
      for (int ic = 0; ic < in_.c; ++ic) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const T wv = weight_.at(oc, ic, ky, kx);
            T wg = T{};
            const auto [ox0, ox1] = ox_bounds(kx);
            const int off = kx - p;
            for (int oy = 0; oy < out_.h; ++oy) {
              const int iy = oy * s + ky - p;
              if (iy < 0 || iy >= in_.h) continue;
              const T* xr = &x_.at(n, ic, iy, 0);
              T* dxr = &dx.at(n, ic, iy, 0);
              const T* dyr = &dy.at(n, oc, oy, 0);
              for (int ox = ox0; ox <= ox1; ++ox) {
                const int ix = ox * s + off;
                wg += dyr[ox] * xr[ix];
                dxr[ix] += wv * dyr[ox];
              }
            }
            dw.at(oc, ic, ky, kx) += wg;
          }
        }
      }
    }
  }

  Shape out_{};
  Tensor<T> weight_, bias_, wgrad_, bgrad_;
  Tensor<T> x_;
};

template <class T>
class MaxPoolLayer final : public Layer<T> {
 public:
  using Layer<T>::spec_;
  using Layer<T>::in_;
  explicit MaxPoolLayer(const LayerSpec& s) : Layer<T>(s) {}

  Shape bind(Shape in) override {
    if (spec_.window < 1 || spec_.pool_stride < 1)
      fail(Errc::shape_mismatch, "bad pool geometry");
    if (in.h < spec_.window || in.w < spec_.window)
      fail(Errc::shape_mismatch, "pool window larger than input");
    in_ = in;
    out_ = Shape{in.c, (in.h - spec_.window) / spec_.pool_stride + 1,
                 (in.w - spec_.window) / spec_.pool_stride + 1};
    return out_;
  }

  Tensor<T> forward(const Tensor<T>& x, bool, Rng*, int threads) override {
    Tensor<T> y(x.n, out_.c, out_.h, out_.w);
    argmax_.assign(y.size(), 0);
    n_ = x.n;
    parallel_for(static_cast<size_t>(x.n), threads, [&](size_t n0, size_t n1) {
      const int win = spec_.window, s = spec_.pool_stride;
      for (size_t n = n0; n < n1; ++n) {
        for (int c = 0; c < out_.c; ++c) {
          for (int oy = 0; oy < out_.h; ++oy) {
            for (int ox = 0; ox < out_.w; ++ox) {
              T best{};
              int best_idx = -1;
              for (int ky = 0; ky < win; ++ky) {
                const int iy = oy * s + ky;
                for (int kx = 0; kx < win; ++kx) {
                  const int ix = ox * s + kx;
                  const T v = x.at(static_cast<int>(n), c, iy, ix);
                  if (best_idx < 0 || v > best) {
                    best = v;
                    best_idx = iy * in_.w + ix;
                  }
                }
              }
              y.at(static_cast<int>(n), c, oy, ox) = best;
              argmax_[(((n * out_.c) + c) * out_.h + oy) * out_.w + ox] =
                  best_idx;
            }
          }
        }
      }
    });
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, int threads) override {
    Tensor<T> dx(n_, in_.c, in_.h, in_.w);
    parallel_for(static_cast<size_t>(n_), threads, [&](size_t n0, size_t n1) {
      for (size_t n = n0; n < n1; ++n) {
        for (int c = 0; c < out_.c; ++c) {
          T* dxp = &dx.at(static_cast<int>(n), c, 0, 0);
          for (int oy = 0; oy < out_.h; ++oy)
            for (int ox = 0; ox < out_.w; ++ox) {
              const size_t oi =
                  (((n * out_.c) + c) * out_.h + oy) * out_.w + ox;
              dxp[argmax_[oi]] += dy.v[oi];
            }
        }
      }
    });
    return dx;
  }

 private:
  Shape out_{};
  std::vector<int> argmax_;
  int n_ = 0;
};

template <class T>
class ReluLayer final : public Layer<T> {
 public:
  using Layer<T>::in_;
  explicit ReluLayer(const LayerSpec& s) : Layer<T>(s) {}

  Shape bind(Shape in) override {
    in_ = in;
    return in;
  }

  Tensor<T> forward(const Tensor<T>& x, bool, Rng*, int threads) override {
    Tensor<T> y = x;
    mask_.assign(x.size(), 0);
    parallel_for(x.size(), threads, [&](size_t i0, size_t i1) {
      for (size_t i = i0; i < i1; ++i) {
        if (x.v[i] > T{}) {
          mask_[i] = 1;
        } else {
          y.v[i] = T{};
        }
      }
    });
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, int threads) override {
    Tensor<T> dx = dy;
    parallel_for(dy.size(), threads, [&](size_t i0, size_t i1) {
      for (size_t i = i0; i < i1; ++i)
        if (!mask_[i]) dx.v[i] = T{};
    });
    return dx;
  }

 private:
  std::vector<uint8_t> mask_;
};

template <class T>
class DropoutLayer final : public Layer<T> {
 public:
  using Layer<T>::spec_;
  using Layer<T>::in_;
  explicit DropoutLayer(const LayerSpec& s) : Layer<T>(s) {
    if (!(s.keep_prob > 0.0 && s.keep_prob <= 1.0))
      fail(Errc::shape_mismatch, "dropout keep_prob must be in (0,1]");
  }

  Shape bind(Shape in) override {
    in_ = in;
    return in;
  }

  Tensor<T> forward(const Tensor<T>& x, bool training, Rng* rng,
                    int threads) override {
    const double keep = spec_.keep_prob;
    active_ = training && keep < 1.0;
    if (!active_) return x;
    // Masks come off the stream sequentially so results do not depend on
    // thread scheduling.
    mask_.assign(x.size(), T{});
    const T inv = static_cast<T>(1.0 / keep);
    for (size_t i = 0; i < x.size(); ++i)
      mask_[i] = rng->uniform() < keep ? inv : T{};
    Tensor<T> y = x;
    parallel_for(x.size(), threads, [&](size_t i0, size_t i1) {
      for (size_t i = i0; i < i1; ++i) y.v[i] *= mask_[i];
    });
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, int threads) override {
    if (!active_) return dy;
    Tensor<T> dx = dy;
    parallel_for(dy.size(), threads, [&](size_t i0, size_t i1) {
      for (size_t i = i0; i < i1; ++i) dx.v[i] *= mask_[i];
    });
    return dx;
  }

 private:
  std::vector<T> mask_;
  bool active_ = false;
};

template <class T>
class FullyConnectedLayer final : public Layer<T> {
 public:
  using Layer<T>::spec_;
  using Layer<T>::in_;
  explicit FullyConnectedLayer(const LayerSpec& s) : Layer<T>(s) {}

  Shape bind(Shape in) override {
    if (in.flat() != spec_.in_dim)
      fail(Errc::shape_mismatch,
           "fully-connected expects " + std::to_string(spec_.in_dim) +
               " inputs, got " + std::to_string(in.flat()));
    in_ = in;
    weight_ = Tensor<T>(spec_.out_dim, spec_.in_dim, 1, 1);
    bias_ = Tensor<T>(spec_.out_dim, 1, 1, 1);
    wgrad_ = weight_;
    bgrad_ = bias_;
    return Shape{spec_.out_dim, 1, 1};
  }

  void init_params(Rng& rng) override {
    const double sigma = std::sqrt(2.0 / spec_.in_dim);
    for (auto& w : weight_.v) w = static_cast<T>(rng.normal() * sigma);
    bias_.zero();
  }

  Tensor<T> forward(const Tensor<T>& x, bool, Rng*, int threads) override {
    x_ = x;
    const int d_in = spec_.in_dim, d_out = spec_.out_dim;
    Tensor<T> y(x.n, d_out, 1, 1);
    parallel_for(static_cast<size_t>(x.n), threads, [&](size_t n0, size_t n1) {
      for (size_t n = n0; n < n1; ++n) {
        const T* xp = x.sample(static_cast<int>(n));
        T* yp = y.sample(static_cast<int>(n));
        for (int o = 0; o < d_out; ++o) {
          const T* wp = &weight_.v[static_cast<size_t>(o) * d_in];
          T acc = bias_.v[o];
          for (int i = 0; i < d_in; ++i) acc += wp[i] * xp[i];
          yp[o] = acc;
        }
      }
    });
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, int threads) override {
    const int d_in = spec_.in_dim, d_out = spec_.out_dim;
    Tensor<T> dx(x_.n, in_.c, in_.h, in_.w);
    const int workers = std::max(1, std::min<int>(threads, x_.n));
    std::vector<Tensor<T>> wpart(workers), bpart(workers);
    for (int t = 0; t < workers; ++t) {
      wpart[t] = Tensor<T>(d_out, d_in, 1, 1);
      bpart[t] = Tensor<T>(d_out, 1, 1, 1);
    }
    const size_t chunk = (static_cast<size_t>(x_.n) + workers - 1) / workers;
    parallel_for(static_cast<size_t>(workers), workers,
                 [&](size_t t0, size_t t1) {
                   for (size_t t = t0; t < t1; ++t) {
                     const size_t lo = t * chunk;
                     const size_t hi = std::min<size_t>(x_.n, lo + chunk);
                     for (size_t n = lo; n < hi; ++n) {
                       const T* xp = x_.sample(static_cast<int>(n));
                       const T* dyp = dy.sample(static_cast<int>(n));
                       T* dxp = dx.sample(static_cast<int>(n));
                       for (int o = 0; o < d_out; ++o) {
                         const T g = dyp[o];
                         const T* wp = &weight_.v[static_cast<size_t>(o) * d_in];
                         T* wg = &wpart[t].v[static_cast<size_t>(o) * d_in];
                         for (int i = 0; i < d_in; ++i) {
                           wg[i] += g * xp[i];
                           dxp[i] += g * wp[i];
                         }
                         bpart[t].v[o] += g;
                       }
                     }
                   }
                 });
    for (int t = 0; t < workers; ++t) {
      for (size_t i = 0; i < wgrad_.size(); ++i) wgrad_.v[i] += wpart[t].v[i];
      for (size_t i = 0; i < bgrad_.size(); ++i) bgrad_.v[i] += bpart[t].v[i];
    }
    return dx;
  }

  std::vector<Tensor<T>*> params() override { return {&weight_, &bias_}; }
  std::vector<Tensor<T>*> grads() override { return {&wgrad_, &bgrad_}; }
  std::vector<bool> decay_mask() override { return {true, false}; }

 private:
  Tensor<T> weight_, bias_, wgrad_, bgrad_;
  Tensor<T> x_;
};

template <class T>
class SoftmaxLayer final : public Layer<T> {
 public:
  using Layer<T>::in_;
  explicit SoftmaxLayer(const LayerSpec& s) : Layer<T>(s) {}

  Shape bind(Shape in) override {
    if (in.h != 1 || in.w != 1)
      fail(Errc::shape_mismatch, "softmax expects a flat input");
    if (in.c < 2) fail(Errc::shape_mismatch, "softmax needs >= 2 classes");
    in_ = in;
    return in;
  }

  Tensor<T> forward(const Tensor<T>& x, bool, Rng*, int threads) override {
    Tensor<T> y = x;
    parallel_for(static_cast<size_t>(x.n), threads, [&](size_t n0, size_t n1) {
      for (size_t n = n0; n < n1; ++n) {
        T* row = y.sample(static_cast<int>(n));
        T m = row[0];
        for (int c = 1; c < in_.c; ++c) m = std::max(m, row[c]);
        T sum = T{};
        for (int c = 0; c < in_.c; ++c) {
          row[c] = std::exp(row[c] - m);
          sum += row[c];
        }
        for (int c = 0; c < in_.c; ++c) row[c] /= sum;
      }
    });
    y_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, int threads) override {
    Tensor<T> dx = dy;
    parallel_for(static_cast<size_t>(dy.n), threads,
                 [&](size_t n0, size_t n1) {
                   for (size_t n = n0; n < n1; ++n) {
                     const T* yp = y_.sample(static_cast<int>(n));
                     const T* dyp = dy.sample(static_cast<int>(n));
                     T* dxp = dx.sample(static_cast<int>(n));
                     T dot = T{};
                     for (int c = 0; c < in_.c; ++c) dot += dyp[c] * yp[c];
                     for (int c = 0; c < in_.c; ++c)
                       dxp[c] = yp[c] * (dyp[c] - dot);
                   }
                 });
    return dx;
  }

 private:
  Tensor<T> y_;
};

template <class T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::conv: return std::make_unique<ConvLayer<T>>(s);
    case LayerKind::max_pool: return std::make_unique<MaxPoolLayer<T>>(s);
    case LayerKind::fully_connected:
      return std::make_unique<FullyConnectedLayer<T>>(s);
    case LayerKind::relu: return std::make_unique<ReluLayer<T>>(s);
    case LayerKind::dropout: return std::make_unique<DropoutLayer<T>>(s);
    case LayerKind::softmax: return std::make_unique<SoftmaxLayer<T>>(s);
  }
  fail(Errc::shape_mismatch, "unknown layer kind");
}

}  // namespace detail

/// A trainable network: an ordered layer stack ending in softmax.
/// Instantiated with T = float for the pipeline; the gradient tests run the
/// identical code with T = double.
template <class T>
class Model {
 public:
  Model(Shape input, std::vector<LayerSpec> specs, uint64_t seed)
      : input_(input), specs_(std::move(specs)), init_seed_(seed),
        dropout_rng_(derive_seed(seed, "dropout")) {
    if (specs_.empty() || specs_.back().kind != LayerKind::softmax)
      fail(Errc::shape_mismatch, "network must end with a softmax layer");
    Shape shape = input_;
    for (const auto& s : specs_) {
      layers_.push_back(detail::make_layer<T>(s));
      shape = layers_.back()->bind(shape);  // shape-check pass
    }
    out_classes_ = shape.c;
    Rng init_rng(derive_seed(seed, "init"));
    for (auto& l : layers_) l->init_params(init_rng);
  }

  Shape input_shape() const { return input_; }
  int num_classes() const { return out_classes_; }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  uint64_t init_seed() const { return init_seed_; }

  /// Reseeds the dropout stream; call before training for reproducibility.
  void reset_dropout(uint64_t seed) { dropout_rng_ = Rng(seed); }

  bool training_mode() const { return training_mode_; }
  void set_training_mode(bool on) { training_mode_ = on; }

  /// Full pass including the final softmax; each output row is a probability
  /// distribution over the classes. Dropout fires only when training is on.
  Tensor<T> forward(const Tensor<T>& x, bool training = false,
                    int threads = 1) {
    check_input(x);
    Tensor<T> a = x;
    for (auto& l : layers_)
      a = l->forward(a, training, &dropout_rng_, threads);
    return a;
  }

  /// Mean softmax cross-entropy of the batch, computed from log-softmax for
  /// stability. No gradients.
  double loss(const Tensor<T>& x, const std::vector<int>& labels,
              int threads = 1, bool training = false) {
    Tensor<T> logits = forward_logits(x, training, threads);
    return loss_from_logits(logits, labels);
  }

  /// Backpropagates mean cross-entropy; afterwards grads() holds the per
  /// parameter gradients. Returns the loss; optionally exposes the softmax
  /// probabilities and the per-sample losses of this pass.
  double backward(const Tensor<T>& x, const std::vector<int>& labels,
                  int threads = 1, bool training = true,
                  Tensor<T>* probs_out = nullptr,
                  std::vector<double>* sample_losses_out = nullptr) {
    check_labels(labels, x.n);
    for (auto& l : layers_)
      for (auto* g : l->grads()) g->zero();

    Tensor<T> logits = forward_logits(x, training, threads);
    const double loss_value = loss_from_logits(logits, labels);
    if (sample_losses_out) {
      sample_losses_out->resize(logits.n);
      for (int n = 0; n < logits.n; ++n)
        (*sample_losses_out)[n] = sample_loss(logits, labels, n);
    }

    // Fused softmax + cross-entropy gradient: (p - onehot) / N.
    Tensor<T> grad(logits.n, logits.c, 1, 1);
    if (probs_out) *probs_out = Tensor<T>(logits.n, logits.c, 1, 1);
    const double inv_n = 1.0 / logits.n;
    for (int n = 0; n < logits.n; ++n) {
      const T* z = logits.sample(n);
      T* g = grad.sample(n);
      double m = z[0];
      for (int c = 1; c < logits.c; ++c) m = std::max<double>(m, z[c]);
      double sum = 0.0;
      for (int c = 0; c < logits.c; ++c) sum += std::exp(double(z[c]) - m);
      for (int c = 0; c < logits.c; ++c) {
        const double p = std::exp(double(z[c]) - m) / sum;
        if (probs_out) probs_out->sample(n)[c] = static_cast<T>(p);
        g[c] = static_cast<T>((p - (labels[n] == c ? 1.0 : 0.0)) * inv_n);
      }
    }

    Tensor<T> d = grad;
    for (size_t i = layers_.size() - 1; i-- > 0;)
      d = layers_[i]->backward(d, threads);
    return loss_value;
  }

  std::vector<Tensor<T>*> params() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }
  std::vector<Tensor<T>*> grads() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_)
      for (auto* g : l->grads()) out.push_back(g);
    return out;
  }
  std::vector<bool> decay_mask() {
    std::vector<bool> out;
    for (auto& l : layers_)
      for (const bool d : l->decay_mask()) out.push_back(d);
    return out;
  }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.n < 1 || x.c != input_.c || x.h != input_.h || x.w != input_.w)
      fail(Errc::shape_mismatch, "input tensor does not match network input");
  }
  void check_labels(const std::vector<int>& labels, int n) const {
    if (static_cast<int>(labels.size()) != n)
      fail(Errc::shape_mismatch, "one label per sample required");
    for (const int l : labels)
      if (l < 0 || l >= out_classes_)
        fail(Errc::shape_mismatch, "label out of range");
  }

  Tensor<T> forward_logits(const Tensor<T>& x, bool training, int threads) {
    check_input(x);
    Tensor<T> a = x;
    for (size_t i = 0; i + 1 < layers_.size(); ++i)
      a = layers_[i]->forward(a, training, &dropout_rng_, threads);
    return a;
  }

  static double sample_loss(const Tensor<T>& logits,
                            const std::vector<int>& labels, int n) {
    const T* z = logits.sample(n);
    double m = z[0];
    for (int c = 1; c < logits.c; ++c) m = std::max<double>(m, z[c]);
    double sum = 0.0;
    for (int c = 0; c < logits.c; ++c) sum += std::exp(double(z[c]) - m);
    return m + std::log(sum) - double(z[labels[n]]);
  }

  double loss_from_logits(const Tensor<T>& logits,
                          const std::vector<int>& labels) const {
    double total = 0.0;
    for (int n = 0; n < logits.n; ++n) total += sample_loss(logits, labels, n);
    return total / logits.n;
  }

  Shape input_;
  std::vector<LayerSpec> specs_;
  std::vector<std::unique_ptr<detail::Layer<T>>> layers_;
  int out_classes_ = 0;
  uint64_t init_seed_ = 0;
  Rng dropout_rng_;
  bool training_mode_ = false;
};

using ConvNetModel = Model<float>;

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;       // in [0,1)
  int batch_size = 32;
  int epochs = 1;
  double weight_decay = 0.0;
  uint64_t seed = 1;
  int threads = 1;
};

struct TrainHistory {
  std::vector<double> mean_loss;       // per epoch
  std::vector<double> train_accuracy;  // per epoch
};

/// Mini-batch SGD with momentum and weight decay over shuffled batches.
/// Deterministic for a fixed (seed, thread count).
TrainHistory train(ConvNetModel& model, const PatchSet& dataset,
                   const TrainConfig& cfg);

void save_train_log(const TrainHistory& h, const std::filesystem::path& path);

/// Named reference architectures (input 3x64x64):
///  - "paper64": 5 conv + 3 fully-connected + softmax, first conv 5x5
///    stride 1, dropout 0.5 after the first fully-connected stage.
///  - "tiny64": a small desk-scale net for CPU runs.
std::vector<LayerSpec> make_architecture(const std::string& name);
Shape architecture_input(const std::string& name);

/// Checkpoint: magic "CNET", version, input shape, layer-spec table, f32
/// weight payloads, trailing CRC32 over everything before it.
void save_model(const ConvNetModel& model, const std::filesystem::path& path);
ConvNetModel load_model(const std::filesystem::path& path);

}  // namespace spinecade
