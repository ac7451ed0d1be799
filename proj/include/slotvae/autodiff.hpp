// Reverse-mode autodiff over Tensor<T>. A Tape owns nodes in creation
// order, so reverse creation order is a valid topological order for the
// backward sweep. Gradients accumulate, which is what makes shared
// parameter groups (one group, several call sites) come out right.
#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>

#include "slotvae/kernels.hpp"
#include "slotvae/tensor.hpp"

namespace slotvae::ad {

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error("autodiff: " + msg);
}

template <typename T>
class Tape;

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // lazily allocated; for parameter leaves aliases Parameter::grad
  bool requires_grad = false;
  std::function<void()> backward;
  Tape<T>* tape = nullptr;

  Tensor<T>& ensure_grad() {
    if (!grad.defined()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
struct Var {
  Node<T>* n = nullptr;

  bool defined() const { return n != nullptr; }
  const Tensor<T>& val() const { return n->value; }
  const Shape& shape() const { return n->value.shape(); }
  int64_t dim(int i) const { return n->value.dim(i); }
  int64_t numel() const { return n->value.numel(); }
  Tape<T>& tape() const { return *n->tape; }
};

template <typename T>
class Tape {
 public:
  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    Node<T>* node = new_node();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var<T>{node};
  }

  // Leaf whose grad buffer is shared with external storage (parameters).
  Var<T> leaf_shared_grad(Tensor<T> value, Tensor<T> grad) {
    Node<T>* node = new_node();
    node->value = std::move(value);
    node->grad = std::move(grad);
    node->requires_grad = true;
    return Var<T>{node};
  }

  Node<T>* new_node() {
    nodes_.emplace_back(std::make_unique<Node<T>>());
    nodes_.back()->tape = this;
    return nodes_.back().get();
  }

  void backward(const Var<T>& loss) {
    check(loss.numel() == 1, "backward seed must be scalar");
    loss.n->ensure_grad().fill(T(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>* node = it->get();
      if (node->backward && node->grad.defined()) node->backward();
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::deque<std::unique_ptr<Node<T>>> nodes_;
};

// ---------- broadcasting machinery ----------

// numpy-style right-aligned broadcast of b against a (and vice versa).
struct BroadcastPlan {
  Shape out;
  std::vector<int64_t> sa, sb;  // strides into a and b per out dim (0 where broadcast)
};

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  const int nd = (int)std::max(a.size(), b.size());
  p.out.assign(nd, 1);
  std::vector<int64_t> da(nd, 1), db(nd, 1);
  for (int i = 0; i < nd; ++i) {
    int64_t va = (i < nd - (int)a.size()) ? 1 : a[i - (nd - a.size())];
    int64_t vb = (i < nd - (int)b.size()) ? 1 : b[i - (nd - b.size())];
    if (va != vb && va != 1 && vb != 1)
      throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " vs " +
                                  shape_str(b));
    p.out[i] = std::max(va, vb);
    da[i] = va;
    db[i] = vb;
  }
  p.sa.assign(nd, 0);
  p.sb.assign(nd, 0);
  int64_t ra = 1, rb = 1;
  for (int i = nd - 1; i >= 0; --i) {
    p.sa[i] = (da[i] == 1 && p.out[i] != 1) ? 0 : ra;
    p.sb[i] = (db[i] == 1 && p.out[i] != 1) ? 0 : rb;
    ra *= da[i];
    rb *= db[i];
  }
  return p;
}

// Applies fn(out_index, a_index, b_index) over the broadcast iteration space.
template <typename F>
void broadcast_iter(const BroadcastPlan& p, F&& fn) {
  const int nd = (int)p.out.size();
  std::vector<int64_t> idx(nd, 0);
  int64_t total = shape_numel(p.out);
  int64_t ia = 0, ib = 0;
  for (int64_t i = 0; i < total; ++i) {
    fn(i, ia, ib);
    for (int d = nd - 1; d >= 0; --d) {
      idx[d]++;
      ia += p.sa[d];
      ib += p.sb[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.sa[d] * p.out[d];
      ib -= p.sb[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

namespace detail {

template <typename T, typename FwdSame, typename FwdBc>
Tensor<T> binary_forward(const Tensor<T>& a, const Tensor<T>& b, FwdSame&& same, FwdBc&& bc) {
  if (a.same_shape(b)) {
    Tensor<T> out(a.shape());
    same(a, b, out);
    return out;
  }
  BroadcastPlan p = broadcast_plan(a.shape(), b.shape());
  Tensor<T> out(p.out);
  bc(p, a, b, out);
  return out;
}

}  // namespace detail

// ---------- elementwise binary ops ----------

template <typename T, typename FSame, typename FBc, typename Bwd>
Var<T> binary_op(const Var<T>& a, const Var<T>& b, FSame&& fsame, FBc&& fbc, Bwd&& bwd) {
  Tape<T>& tp = a.tape();
  Node<T>* out = tp.new_node();
  out->value = detail::binary_forward<T>(a.val(), b.val(), fsame, fbc);
  out->requires_grad = a.n->requires_grad || b.n->requires_grad;
  if (out->requires_grad) {
    Node<T>* an = a.n;
    Node<T>* bn = b.n;
    out->backward = [an, bn, out, bwd]() { bwd(an, bn, out); };
  }
  return Var<T>{out};
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary_op<T>(
      a, b,
      [](const Tensor<T>& x, const Tensor<T>& y, Tensor<T>& o) {
        const T* px = x.data();
        const T* py = y.data();
        T* po = o.data();
        const int64_t n = o.numel();
#pragma omp parallel for simd schedule(static)
        for (int64_t i = 0; i < n; ++i) po[i] = px[i] + py[i];
      },
      [](const BroadcastPlan& p, const Tensor<T>& x, const Tensor<T>& y, Tensor<T>& o) {
        broadcast_iter(p, [&](int64_t i, int64_t ia, int64_t ib) { o[i] = x[ia] + y[ib]; });
      },
      [](Node<T>* an, Node<T>* bn, Node<T>* out) {
        if (an->value.same_shape(out->value) && bn->value.same_shape(out->value)) {
          if (an->requires_grad) {
            T* g = an->ensure_grad().data();
            const T* og = out->grad.data();
            for (int64_t i = 0; i < out->grad.numel(); ++i) g[i] += og[i];
          }
          if (bn->requires_grad) {
            T* g = bn->ensure_grad().data();
            const T* og = out->grad.data();
            for (int64_t i = 0; i < out->grad.numel(); ++i) g[i] += og[i];
          }
          return;
        }
        BroadcastPlan p = broadcast_plan(an->value.shape(), bn->value.shape());
        if (an->requires_grad) {
          Tensor<T>& g = an->ensure_grad();
          broadcast_iter(p, [&](int64_t i, int64_t ia, int64_t) { g[ia] += out->grad[i]; });
        }
        if (bn->requires_grad) {
          Tensor<T>& g = bn->ensure_grad();
          broadcast_iter(p, [&](int64_t i, int64_t, int64_t ib) { g[ib] += out->grad[i]; });
        }
      });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary_op<T>(
      a, b,
      [](const Tensor<T>& x, const Tensor<T>& y, Tensor<T>& o) {
        const T* px = x.data();
        const T* py = y.data();
        T* po = o.data();
        const int64_t n = o.numel();
#pragma omp parallel for simd schedule(static)
        for (int64_t i = 0; i < n; ++i) po[i] = px[i] - py[i];
      },
      [](const BroadcastPlan& p, const Tensor<T>& x, const Tensor<T>& y, Tensor<T>& o) {
        broadcast_iter(p, [&](int64_t i, int64_t ia, int64_t ib) { o[i] = x[ia] - y[ib]; });
      },
      [](Node<T>* an, Node<T>* bn, Node<T>* out) {
        BroadcastPlan p = broadcast_plan(an->value.shape(), bn->value.shape());
        if (an->requires_grad) {
          Tensor<T>& g = an->ensure_grad();
          broadcast_iter(p, [&](int64_t i, int64_t ia, int64_t) { g[ia] += out->grad[i]; });
        }
        if (bn->requires_grad) {
          Tensor<T>& g = bn->ensure_grad();
          broadcast_iter(p, [&](int64_t i, int64_t, int64_t ib) { g[ib] -= out->grad[i]; });
        }
      });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary_op<T>(
      a, b,
      [](const Tensor<T>& x, const Tensor<T>& y, Tensor<T>& o) {
        const T* px = x.data();
        const T* py = y.data();
        T* po = o.data();
        const int64_t n = o.numel();
#pragma omp parallel for simd schedule(static)
        for (int64_t i = 0; i < n; ++i) po[i] = px[i] * py[i];
      },
      [](const BroadcastPlan& p, const Tensor<T>& x, const Tensor<T>& y, Tensor<T>& o) {
        broadcast_iter(p, [&](int64_t i, int64_t ia, int64_t ib) { o[i] = x[ia] * y[ib]; });
      },
      [](Node<T>* an, Node<T>* bn, Node<T>* out) {
        BroadcastPlan p = broadcast_plan(an->value.shape(), bn->value.shape());
        if (an->requires_grad) {
          Tensor<T>& g = an->ensure_grad();
          broadcast_iter(p, [&](int64_t i, int64_t ia, int64_t ib) {
            g[ia] += out->grad[i] * bn->value[ib];
          });
        }
        if (bn->requires_grad) {
          Tensor<T>& g = bn->ensure_grad();
          broadcast_iter(p, [&](int64_t i, int64_t ia, int64_t ib) {
            g[ib] += out->grad[i] * an->value[ia];
          });
        }
      });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return binary_op<T>(
      a, b,
      [](const Tensor<T>& x, const Tensor<T>& y, Tensor<T>& o) {
        for (int64_t i = 0; i < o.numel(); ++i) o[i] = x[i] / y[i];
      },
      [](const BroadcastPlan& p, const Tensor<T>& x, const Tensor<T>& y, Tensor<T>& o) {
        broadcast_iter(p, [&](int64_t i, int64_t ia, int64_t ib) { o[i] = x[ia] / y[ib]; });
      },
      [](Node<T>* an, Node<T>* bn, Node<T>* out) {
        BroadcastPlan p = broadcast_plan(an->value.shape(), bn->value.shape());
        if (an->requires_grad) {
          Tensor<T>& g = an->ensure_grad();
          broadcast_iter(p, [&](int64_t i, int64_t ia, int64_t ib) {
            g[ia] += out->grad[i] / bn->value[ib];
          });
        }
        if (bn->requires_grad) {
          Tensor<T>& g = bn->ensure_grad();
          broadcast_iter(p, [&](int64_t i, int64_t ia, int64_t ib) {
            const T bv = bn->value[ib];
            g[ib] -= out->grad[i] * an->value[ia] / (bv * bv);
          });
        }
      });
}

// ---------- elementwise unary ops ----------

template <typename T, typename FF, typename FB>
Var<T> unary_op(const Var<T>& a, FF&& fwd, FB&& dfdx_from_xy) {
  Tape<T>& tp = a.tape();
  Node<T>* out = tp.new_node();
  out->value = Tensor<T>(a.shape());
  {
    const T* px = a.val().data();
    T* po = out->value.data();
    const int64_t n = out->value.numel();
#pragma omp parallel for simd schedule(static)
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  }
  out->requires_grad = a.n->requires_grad;
  if (out->requires_grad) {
    Node<T>* an = a.n;
    out->backward = [an, out, dfdx_from_xy]() {
      T* g = an->ensure_grad().data();
      const T* og = out->grad.data();
      const T* px = an->value.data();
      const T* py = out->value.data();
      const int64_t n = out->grad.numel();
      for (int64_t i = 0; i < n; ++i) g[i] += og[i] * dfdx_from_xy(px[i], py[i]);
    };
  }
  return Var<T>{out};
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return unary_op<T>(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary_op<T>(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh_(const Var<T>& a) {
  return unary_op<T>(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

// Numerically stable softplus: log(1+exp(x)) = max(x,0) + log1p(exp(-|x|))
template <typename T>
Var<T> softplus(const Var<T>& a) {
  return unary_op<T>(
      a, [](T x) { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); },
      [](T x, T) { return T(1) / (T(1) + std::exp(-x)); });
}

template <typename T>
Var<T> exp_(const Var<T>& a) {
  return unary_op<T>(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log_(const Var<T>& a) {
  return unary_op<T>(
      a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> sqrt_(const Var<T>& a) {
  return unary_op<T>(
      a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(1) / (T(2) * y); });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return unary_op<T>(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return unary_op<T>(
      a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
  return unary_op<T>(
      a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  return unary_op<T>(
      a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

// ---------- shape ops ----------

template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
  Tape<T>& tp = a.tape();
  Node<T>* out = tp.new_node();
  out->value = a.val().reshape(std::move(s));
  out->requires_grad = a.n->requires_grad;
  if (out->requires_grad) {
    Node<T>* an = a.n;
    out->backward = [an, out]() {
      T* g = an->ensure_grad().data();
      const T* og = out->grad.data();
      for (int64_t i = 0; i < out->grad.numel(); ++i) g[i] += og[i];
    };
  }
  return Var<T>{out};
}

// Materialized swap of two axes.
template <typename T>
Var<T> swap_axes(const Var<T>& a, int ax0, int ax1) {
  const Shape& s = a.shape();
  const int nd = (int)s.size();
  check(ax0 >= 0 && ax0 < nd && ax1 >= 0 && ax1 < nd, "swap_axes: bad axes");
  if (ax0 == ax1) return a;
  if (ax0 > ax1) std::swap(ax0, ax1);
  Shape so = s;
  std::swap(so[ax0], so[ax1]);

  auto do_swap = [nd, ax0, ax1](const Tensor<T>& src, const Shape& sin, Tensor<T>& dst) {
    std::vector<int64_t> in_strides(nd, 1);
    for (int d = nd - 2; d >= 0; --d) in_strides[d] = in_strides[d + 1] * sin[d + 1];
    std::vector<int64_t> out_shape = sin;
    std::swap(out_shape[ax0], out_shape[ax1]);
    std::vector<int64_t> perm_strides(nd);
    for (int d = 0; d < nd; ++d) perm_strides[d] = in_strides[d];
    std::swap(perm_strides[ax0], perm_strides[ax1]);
    std::vector<int64_t> idx(nd, 0);
    const int64_t total = src.numel();
    int64_t src_off = 0;
    for (int64_t i = 0; i < total; ++i) {
      dst[i] = src[src_off];
      for (int d = nd - 1; d >= 0; --d) {
        idx[d]++;
        src_off += perm_strides[d];
        if (idx[d] < out_shape[d]) break;
        src_off -= perm_strides[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  };

  Tape<T>& tp = a.tape();
  Node<T>* out = tp.new_node();
  out->value = Tensor<T>(so);
  do_swap(a.val(), s, out->value);
  out->requires_grad = a.n->requires_grad;
  if (out->requires_grad) {
    Node<T>* an = a.n;
    Shape so_copy = so;
    out->backward = [an, out, do_swap, so_copy]() {
      Tensor<T> tmp(an->value.shape());
      do_swap(out->grad, so_copy, tmp);
      T* g = an->ensure_grad().data();
      for (int64_t i = 0; i < tmp.numel(); ++i) g[i] += tmp[i];
    };
  }
  return Var<T>{out};
}

template <typename T>
Var<T> slice(const Var<T>& a, int axis, int64_t start, int64_t len) {
  const Shape& s = a.shape();
  const int nd = (int)s.size();
  if (axis < 0) axis += nd;
  check(axis >= 0 && axis < nd && start >= 0 && start + len <= s[axis], "slice: out of range");
  Shape so = s;
  so[axis] = len;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (int d = axis + 1; d < nd; ++d) inner *= s[d];
  const int64_t n_ax = s[axis];

  Tape<T>& tp = a.tape();
  Node<T>* out = tp.new_node();
  out->value = Tensor<T>(so);
  for (int64_t o = 0; o < outer; ++o)
    std::copy(a.val().data() + (o * n_ax + start) * inner,
              a.val().data() + (o * n_ax + start + len) * inner,
              out->value.data() + o * len * inner);
  out->requires_grad = a.n->requires_grad;
  if (out->requires_grad) {
    Node<T>* an = a.n;
    out->backward = [an, out, outer, inner, n_ax, start, len]() {
      T* g = an->ensure_grad().data();
      const T* og = out->grad.data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < len * inner; ++j)
          g[(o * n_ax + start) * inner + j] += og[o * len * inner + j];
    };
  }
  return Var<T>{out};
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  check(!parts.empty(), "concat: empty");
  const Shape& s0 = parts[0].shape();
  const int nd = (int)s0.size();
  if (axis < 0) axis += nd;
  int64_t cat_dim = 0;
  for (const auto& p : parts) cat_dim += p.dim(axis);
  Shape so = s0;
  so[axis] = cat_dim;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[d];
  for (int d = axis + 1; d < nd; ++d) inner *= s0[d];

  Tape<T>& tp = parts[0].tape();
  Node<T>* out = tp.new_node();
  out->value = Tensor<T>(so);
  bool req = false;
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t n_ax = p.dim(axis);
    for (int64_t o = 0; o < outer; ++o)
      std::copy(p.val().data() + o * n_ax * inner, p.val().data() + (o + 1) * n_ax * inner,
                out->value.data() + (o * cat_dim + off) * inner);
    off += n_ax;
    req = req || p.n->requires_grad;
  }
  out->requires_grad = req;
  if (req) {
    std::vector<Node<T>*> pn;
    std::vector<int64_t> sizes;
    for (const auto& p : parts) {
      pn.push_back(p.n);
      sizes.push_back(p.dim(axis));
    }
    out->backward = [pn, sizes, out, outer, inner, cat_dim]() {
      const T* og = out->grad.data();
      int64_t off = 0;
      for (size_t k = 0; k < pn.size(); ++k) {
        if (pn[k]->requires_grad) {
          T* g = pn[k]->ensure_grad().data();
          for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < sizes[k] * inner; ++j)
              g[o * sizes[k] * inner + j] += og[(o * cat_dim + off) * inner + j];
        }
        off += sizes[k];
      }
    };
  }
  return Var<T>{out};
}

// z[B,D] tiled to [B,D,h,w] (spatial broadcast).
template <typename T>
Var<T> broadcast_spatial(const Var<T>& z, int64_t h, int64_t w) {
  check(z.shape().size() == 2, "broadcast_spatial expects [B,D]");
  const int64_t B = z.dim(0), D = z.dim(1);
  Tape<T>& tp = z.tape();
  Node<T>* out = tp.new_node();
  out->value = Tensor<T>({B, D, h, w});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t d = 0; d < D; ++d) {
      const T v = z.val()[b * D + d];
      T* row = out->value.data() + (b * D + d) * h * w;
      std::fill(row, row + h * w, v);
    }
  out->requires_grad = z.n->requires_grad;
  if (out->requires_grad) {
    Node<T>* zn = z.n;
    out->backward = [zn, out, B, D, h, w]() {
      T* g = zn->ensure_grad().data();
      const T* og = out->grad.data();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t d = 0; d < D; ++d) {
          T s = 0;
          const T* row = og + (b * D + d) * h * w;
          for (int64_t i = 0; i < h * w; ++i) s += row[i];
          g[b * D + d] += s;
        }
    };
  }
  return Var<T>{out};
}

// ---------- reductions ----------

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  Tape<T>& tp = a.tape();
  Node<T>* out = tp.new_node();
  // fixed pairwise-free serial sum: deterministic accumulation order
  T s = 0;
  const T* px = a.val().data();
  for (int64_t i = 0; i < a.numel(); ++i) s += px[i];
  out->value = Tensor<T>::scalar(s);
  out->requires_grad = a.n->requires_grad;
  if (out->requires_grad) {
    Node<T>* an = a.n;
    out->backward = [an, out]() {
      const T og = out->grad[0];
      T* g = an->ensure_grad().data();
      for (int64_t i = 0; i < an->value.numel(); ++i) g[i] += og;
    };
  }
  return Var<T>{out};
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return scale(sum_all(a), T(1) / (T)a.numel());
}

template <typename T>
Var<T> sum_axis(const Var<T>& a, int axis, bool keepdim) {
  const Shape& s = a.shape();
  const int nd = (int)s.size();
  if (axis < 0) axis += nd;
  check(axis >= 0 && axis < nd, "sum_axis: bad axis");
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (int d = axis + 1; d < nd; ++d) inner *= s[d];
  const int64_t n_ax = s[axis];
  Shape so;
  for (int d = 0; d < nd; ++d) {
    if (d == axis) {
      if (keepdim) so.push_back(1);
    } else {
      so.push_back(s[d]);
    }
  }
  if (so.empty()) so.push_back(1);

  Tape<T>& tp = a.tape();
  Node<T>* out = tp.new_node();
  out->value = Tensor<T>(so);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      T acc = 0;
      for (int64_t j = 0; j < n_ax; ++j) acc += a.val()[(o * n_ax + j) * inner + i];
      out->value[o * inner + i] = acc;
    }
  out->requires_grad = a.n->requires_grad;
  if (out->requires_grad) {
    Node<T>* an = a.n;
    out->backward = [an, out, outer, inner, n_ax]() {
      T* g = an->ensure_grad().data();
      const T* og = out->grad.data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < n_ax; ++j)
          for (int64_t i = 0; i < inner; ++i) g[(o * n_ax + j) * inner + i] += og[o * inner + i];
    };
  }
  return Var<T>{out};
}

// ---------- softmax ----------

template <typename T>
Var<T> softmax(const Var<T>& a, int axis) {
  const Shape& s = a.shape();
  const int nd = (int)s.size();
  if (axis < 0) axis += nd;
  check(axis >= 0 && axis < nd, "softmax: bad axis");
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (int d = axis + 1; d < nd; ++d) inner *= s[d];
  const int64_t n_ax = s[axis];

  Tape<T>& tp = a.tape();
  Node<T>* out = tp.new_node();
  out->value = Tensor<T>(s);
  kernels::softmax_forward(a.val().data(), out->value.data(), outer, n_ax, inner);
  out->requires_grad = a.n->requires_grad;
  if (out->requires_grad) {
    Node<T>* an = a.n;
    out->backward = [an, out, outer, inner, n_ax]() {
      kernels::softmax_backward(out->value.data(), out->grad.data(), an->ensure_grad().data(),
                                outer, n_ax, inner);
    };
  }
  return Var<T>{out};
}

// ---------- linear algebra ----------

// y[...,Out] = x[...,In] * w[Out,In]^T + b
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const Shape& xs = x.shape();
  const int64_t In = xs.back();
  const int64_t Out = w.dim(0);
  check(w.dim(1) == In, "linear: weight/input mismatch");
  const int64_t R = x.numel() / In;

  Tape<T>& tp = x.tape();
  Node<T>* out = tp.new_node();
  Shape so = xs;
  so.back() = Out;
  out->value = Tensor<T>(so);
  kernels::gemm<T>(false, true, R, Out, In, T(1), x.val().data(), w.val().data(), T(0),
                   out->value.data());
  if (b.defined()) {
    T* po = out->value.data();
    const T* pb = b.val().data();
    for (int64_t r = 0; r < R; ++r)
      for (int64_t o = 0; o < Out; ++o) po[r * Out + o] += pb[o];
  }
  out->requires_grad =
      x.n->requires_grad || w.n->requires_grad || (b.defined() && b.n->requires_grad);
  if (out->requires_grad) {
    Node<T>* xn = x.n;
    Node<T>* wn = w.n;
    Node<T>* bn = b.defined() ? b.n : nullptr;
    out->backward = [xn, wn, bn, out, R, In, Out]() {
      const T* og = out->grad.data();
      if (xn->requires_grad)
        kernels::gemm<T>(false, false, R, In, Out, T(1), og, wn->value.data(), T(1),
                         xn->ensure_grad().data());
      if (wn->requires_grad)
        kernels::gemm<T>(true, false, Out, In, R, T(1), og, xn->value.data(), T(1),
                         wn->ensure_grad().data());
      if (bn && bn->requires_grad) {
        T* g = bn->ensure_grad().data();
        for (int64_t r = 0; r < R; ++r)
          for (int64_t o = 0; o < Out; ++o) g[o] += og[r * Out + o];
      }
    };
  }
  return Var<T>{out};
}

// c[B,M,N] = a[B,M,K] * b[B,K,N]
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
  check(a.shape().size() == 3 && b.shape().size() == 3, "bmm expects 3-D");
  const int64_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  check(b.dim(0) == B && b.dim(1) == K, "bmm: shape mismatch");

  Tape<T>& tp = a.tape();
  Node<T>* out = tp.new_node();
  out->value = Tensor<T>({B, M, N});
  for (int64_t i = 0; i < B; ++i)
    kernels::gemm<T>(false, false, M, N, K, T(1), a.val().data() + i * M * K,
                     b.val().data() + i * K * N, T(0), out->value.data() + i * M * N);
  out->requires_grad = a.n->requires_grad || b.n->requires_grad;
  if (out->requires_grad) {
    Node<T>* an = a.n;
    Node<T>* bn = b.n;
    out->backward = [an, bn, out, B, M, K, N]() {
      const T* og = out->grad.data();
      if (an->requires_grad) {
        T* g = an->ensure_grad().data();
        for (int64_t i = 0; i < B; ++i)
          kernels::gemm<T>(false, true, M, K, N, T(1), og + i * M * N, bn->value.data() + i * K * N,
                           T(1), g + i * M * K);
      }
      if (bn->requires_grad) {
        T* g = bn->ensure_grad().data();
        for (int64_t i = 0; i < B; ++i)
          kernels::gemm<T>(true, false, K, N, M, T(1), an->value.data() + i * M * K, og + i * M * N,
                           T(1), g + i * K * N);
      }
    };
  }
  return Var<T>{out};
}

// ---------- convolutions ----------

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride, int64_t pad) {
  check(x.shape().size() == 4 && w.shape().size() == 4, "conv2d expects 4-D x and w");
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = w.dim(0), k = w.dim(2);
  check(w.dim(1) == Cin && w.dim(3) == k, "conv2d: weight shape");
  const int64_t Ho = kernels::conv_out_dim(H, k, stride, pad);
  const int64_t Wo = kernels::conv_out_dim(W, k, stride, pad);

  Tape<T>& tp = x.tape();
  Node<T>* out = tp.new_node();
  out->value = Tensor<T>({B, Cout, Ho, Wo});
  kernels::conv2d_forward(x.val().data(), w.val().data(), b.defined() ? b.val().data() : nullptr,
                          out->value.data(), B, Cin, H, W, Cout, k, stride, pad);
  out->requires_grad =
      x.n->requires_grad || w.n->requires_grad || (b.defined() && b.n->requires_grad);
  if (out->requires_grad) {
    Node<T>* xn = x.n;
    Node<T>* wn = w.n;
    Node<T>* bn = b.defined() ? b.n : nullptr;
    out->backward = [xn, wn, bn, out, B, Cin, H, W, Cout, k, stride, pad]() {
      kernels::conv2d_backward(
          xn->value.data(), wn->value.data(), out->grad.data(),
          xn->requires_grad ? xn->ensure_grad().data() : nullptr,
          wn->requires_grad ? wn->ensure_grad().data() : nullptr,
          (bn && bn->requires_grad) ? bn->ensure_grad().data() : nullptr, B, Cin, H, W, Cout, k,
          stride, pad);
    };
  }
  return Var<T>{out};
}

template <typename T>
Var<T> deconv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int64_t stride, int64_t pad,
                int64_t out_pad) {
  check(x.shape().size() == 4 && w.shape().size() == 4, "deconv2d expects 4-D x and w");
  const int64_t B = x.dim(0), Cin = x.dim(1), Hi = x.dim(2), Wi = x.dim(3);
  const int64_t Cout = w.dim(1), k = w.dim(2);
  check(w.dim(0) == Cin && w.dim(3) == k, "deconv2d: weight shape");
  const int64_t Ho = kernels::deconv_out_dim(Hi, k, stride, pad, out_pad);
  const int64_t Wo = kernels::deconv_out_dim(Wi, k, stride, pad, out_pad);

  Tape<T>& tp = x.tape();
  Node<T>* out = tp.new_node();
  out->value = Tensor<T>({B, Cout, Ho, Wo});
  kernels::deconv2d_forward(x.val().data(), w.val().data(), b.defined() ? b.val().data() : nullptr,
                            out->value.data(), B, Cin, Hi, Wi, Cout, k, stride, pad, out_pad);
  out->requires_grad =
      x.n->requires_grad || w.n->requires_grad || (b.defined() && b.n->requires_grad);
  if (out->requires_grad) {
    Node<T>* xn = x.n;
    Node<T>* wn = w.n;
    Node<T>* bn = b.defined() ? b.n : nullptr;
    out->backward = [xn, wn, bn, out, B, Cin, Hi, Wi, Cout, k, stride, pad, out_pad]() {
      kernels::deconv2d_backward(
          xn->value.data(), wn->value.data(), out->grad.data(),
          xn->requires_grad ? xn->ensure_grad().data() : nullptr,
          wn->requires_grad ? wn->ensure_grad().data() : nullptr,
          (bn && bn->requires_grad) ? bn->ensure_grad().data() : nullptr, B, Cin, Hi, Wi, Cout, k,
          stride, pad, out_pad);
    };
  }
  return Var<T>{out};
}

}  // namespace slotvae::ad
