// Parameter containers and the small layer zoo the model is built from.
#pragma once

#include <string>
#include <vector>

#include "slotvae/autodiff.hpp"
#include "slotvae/rng.hpp"
#include "slotvae/tensor.hpp"

namespace slotvae::nn {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor<T>(value.shape());
  }
  void zero_grad() { grad.fill(T(0)); }
  int64_t numel() const { return value.numel(); }
};

template <typename T>
using ParamRefs = std::vector<Parameter<T>*>;

template <typename T>
ad::Var<T> pleaf(ad::Tape<T>& tp, Parameter<T>& p) {
  return tp.leaf_shared_grad(p.value, p.grad);
}

template <typename T>
Tensor<T> xavier_uniform(Rng& rng, Shape shape, int64_t fan_in, int64_t fan_out) {
  Tensor<T> t(std::move(shape));
  const double limit = std::sqrt(6.0 / (double)(fan_in + fan_out));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = (T)rng.uniform(-limit, limit);
  return t;
}

template <typename T>
Tensor<T> uniform_init(Rng& rng, Shape shape, double limit) {
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = (T)rng.uniform(-limit, limit);
  return t;
}

template <typename T>
struct Linear {
  Parameter<T> w, b;
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, int64_t in, int64_t out, Rng& rng, bool bias = true)
      : has_bias(bias) {
    w = Parameter<T>(name + ".w", xavier_uniform<T>(rng, {out, in}, in, out));
    if (bias) b = Parameter<T>(name + ".b", Tensor<T>({out}));
  }

  ad::Var<T> apply(ad::Tape<T>& tp, const ad::Var<T>& x) {
    return ad::linear(x, pleaf(tp, w), has_bias ? pleaf(tp, b) : ad::Var<T>{});
  }
  void collect(ParamRefs<T>& out) {
    out.push_back(&w);
    if (has_bias) out.push_back(&b);
  }
};

template <typename T>
struct Conv2d {
  Parameter<T> w, b;
  int64_t stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(const std::string& name, int64_t cin, int64_t cout, int64_t k, int64_t stride_,
         int64_t pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    w = Parameter<T>(name + ".w", xavier_uniform<T>(rng, {cout, cin, k, k}, cin * k * k, cout * k * k));
    b = Parameter<T>(name + ".b", Tensor<T>({cout}));
  }

  ad::Var<T> apply(ad::Tape<T>& tp, const ad::Var<T>& x) {
    return ad::conv2d(x, pleaf(tp, w), pleaf(tp, b), stride, pad);
  }
  void collect(ParamRefs<T>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <typename T>
struct Deconv2d {
  Parameter<T> w, b;
  int64_t stride = 2, pad = 2, out_pad = 1;

  Deconv2d() = default;
  Deconv2d(const std::string& name, int64_t cin, int64_t cout, int64_t k, int64_t stride_,
           int64_t pad_, int64_t out_pad_, Rng& rng)
      : stride(stride_), pad(pad_), out_pad(out_pad_) {
    w = Parameter<T>(name + ".w", xavier_uniform<T>(rng, {cin, cout, k, k}, cin * k * k, cout * k * k));
    b = Parameter<T>(name + ".b", Tensor<T>({cout}));
  }

  ad::Var<T> apply(ad::Tape<T>& tp, const ad::Var<T>& x) {
    return ad::deconv2d(x, pleaf(tp, w), pleaf(tp, b), stride, pad, out_pad);
  }
  void collect(ParamRefs<T>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

// Gate order r, z, n (reset, update, candidate).
template <typename T>
struct GRUCell {
  Parameter<T> wx, bx, wh, bh;
  int64_t hidden = 0;

  GRUCell() = default;
  GRUCell(const std::string& name, int64_t in, int64_t hidden_, Rng& rng) : hidden(hidden_) {
    const double lim = 1.0 / std::sqrt((double)hidden);
    wx = Parameter<T>(name + ".wx", uniform_init<T>(rng, {3 * hidden, in}, lim));
    bx = Parameter<T>(name + ".bx", uniform_init<T>(rng, {3 * hidden}, lim));
    wh = Parameter<T>(name + ".wh", uniform_init<T>(rng, {3 * hidden, hidden}, lim));
    bh = Parameter<T>(name + ".bh", uniform_init<T>(rng, {3 * hidden}, lim));
  }

  // x: [R, In], h: [R, H] -> [R, H]
  ad::Var<T> apply(ad::Tape<T>& tp, const ad::Var<T>& x, const ad::Var<T>& h) {
    using namespace ad;
    Var<T> gx = linear(x, pleaf(tp, wx), pleaf(tp, bx));
    Var<T> gh = linear(h, pleaf(tp, wh), pleaf(tp, bh));
    Var<T> r = sigmoid(add(slice(gx, -1, 0, hidden), slice(gh, -1, 0, hidden)));
    Var<T> z = sigmoid(add(slice(gx, -1, hidden, hidden), slice(gh, -1, hidden, hidden)));
    Var<T> n = tanh_(add(slice(gx, -1, 2 * hidden, hidden),
                         mul(r, slice(gh, -1, 2 * hidden, hidden))));
    // h' = (1-z)*n + z*h
    return add(mul(add_scalar(neg(z), T(1)), n), mul(z, h));
  }
  void collect(ParamRefs<T>& out) {
    out.push_back(&wx);
    out.push_back(&bx);
    out.push_back(&wh);
    out.push_back(&bh);
  }
};

// Soft position embedding: learned linear map of a fixed 4-channel
// normalized coordinate grid (x, y, 1-x, 1-y), added to a [B, H*W, D]
// feature tensor. The same parameters serve any grid size.
template <typename T>
struct PosEmbed {
  Linear<T> proj;

  PosEmbed() = default;
  PosEmbed(const std::string& name, int64_t dim, Rng& rng) : proj(name + ".proj", 4, dim, rng) {}

  static Tensor<T> grid(int64_t h, int64_t w) {
    Tensor<T> g({h * w, 4});
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const T fy = h > 1 ? (T)y / (T)(h - 1) : T(0.5);
        const T fx = w > 1 ? (T)x / (T)(w - 1) : T(0.5);
        T* row = g.data() + (y * w + x) * 4;
        row[0] = fx;
        row[1] = fy;
        row[2] = T(1) - fx;
        row[3] = T(1) - fy;
      }
    return g;
  }

  // features: [B, H*W, D]
  ad::Var<T> apply(ad::Tape<T>& tp, const ad::Var<T>& features, int64_t h, int64_t w) {
    ad::Var<T> g = tp.leaf(grid(h, w));
    ad::Var<T> emb = proj.apply(tp, g);  // [H*W, D]
    return ad::add(features, emb);
  }
  void collect(ParamRefs<T>& out) { proj.collect(out); }
};

template <typename T>
struct LayerNorm {
  Parameter<T> gamma, beta;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int64_t dim, Rng&) {
    gamma = Parameter<T>(name + ".gamma", Tensor<T>::full({dim}, T(1)));
    beta = Parameter<T>(name + ".beta", Tensor<T>({dim}));
  }

  ad::Var<T> apply(ad::Tape<T>& tp, const ad::Var<T>& x) {
    using namespace ad;
    const int64_t D = x.shape().back();
    Var<T> mean = scale(sum_axis(x, -1, true), T(1) / (T)D);
    Var<T> xc = sub(x, mean);
    Var<T> var = scale(sum_axis(square(xc), -1, true), T(1) / (T)D);
    Var<T> xhat = div(xc, sqrt_(add_scalar(var, (T)eps)));
    return add(mul(xhat, pleaf(tp, gamma)), pleaf(tp, beta));
  }
  void collect(ParamRefs<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

}  // namespace slotvae::nn
