#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include <cblas.h>

#include "cdm/errors.hpp"
#include "cdm/tensor.hpp"

namespace cdm::nn {

namespace detail {

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k,
                 const float* a, int lda, const float* b, int ldb, float* c,
                 int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0f, a, lda, b,
              ldb, 0.0f, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k,
                 const double* a, int lda, const double* b, int ldb, double* c,
                 int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0, a, lda, b,
              ldb, 0.0, c, ldc);
}

}  // namespace detail

// Convolution weights, no bias storage by construction. Weight layout is
// (out_c, in_c, k, k), row-major, stored flat as a (out_c*in_c*k*k,) vector.
template <typename T>
struct ConvLayer {
  int out_c = 0, in_c = 0, k = 1;
  std::vector<T> weights;

  ConvLayer() = default;
  ConvLayer(int oc, int ic, int ks)
      : out_c(oc), in_c(ic), k(ks),
        weights(static_cast<size_t>(oc) * ic * ks * ks, T(0)) {
    if (ks % 2 == 0) throw ConfigError("conv kernel size must be odd");
  }
  size_t param_count() const { return weights.size(); }
};

namespace detail {

// Replicate-pad (C,H,W) into (C, H+2p, W+2p).
template <typename T>
Tensor<T> pad_replicate(const Tensor<T>& x, int p) {
  Tensor<T> out(x.c, x.h + 2 * p, x.w + 2 * p);
  for (int c = 0; c < x.c; ++c)
    for (int y = 0; y < out.h; ++y) {
      const int ys = std::clamp(y - p, 0, x.h - 1);
      for (int xx = 0; xx < out.w; ++xx) {
        const int xs = std::clamp(xx - p, 0, x.w - 1);
        out.at(c, y, xx) = x.at(c, ys, xs);
      }
    }
  return out;
}

// Adjoint of pad_replicate: border gradients fold back onto the clamped
// source pixel.
template <typename T>
Tensor<T> pad_replicate_adjoint(const Tensor<T>& gpad, int p, int h, int w) {
  Tensor<T> out(gpad.c, h, w);
  for (int c = 0; c < gpad.c; ++c)
    for (int y = 0; y < gpad.h; ++y) {
      const int ys = std::clamp(y - p, 0, h - 1);
      for (int xx = 0; xx < gpad.w; ++xx) {
        const int xs = std::clamp(xx - p, 0, w - 1);
        out.at(c, ys, xs) += gpad.at(c, y, xx);
      }
    }
  return out;
}

// im2col over a padded input: rows indexed by (ic, ky, kx), columns by
// output pixel.
template <typename T>
std::vector<T> im2col(const Tensor<T>& xpad, int k, int h, int w) {
  const size_t hw = static_cast<size_t>(h) * w;
  std::vector<T> cols(static_cast<size_t>(xpad.c) * k * k * hw);
  size_t row = 0;
  for (int c = 0; c < xpad.c; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, ++row) {
        T* dst = &cols[row * hw];
        for (int y = 0; y < h; ++y) {
          const T* src = &xpad.data[(static_cast<size_t>(c) * xpad.h + y + ky) *
                                        xpad.w +
                                    kx];
          for (int x = 0; x < w; ++x) dst[static_cast<size_t>(y) * w + x] = src[x];
        }
      }
  return cols;
}

template <typename T>
Tensor<T> col2im_add(const std::vector<T>& gcols, int c_in, int k, int h,
                     int w, int ph, int pw) {
  const size_t hw = static_cast<size_t>(h) * w;
  Tensor<T> gpad(c_in, ph, pw);
  size_t row = 0;
  for (int c = 0; c < c_in; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, ++row) {
        const T* src = &gcols[row * hw];
        for (int y = 0; y < h; ++y) {
          T* dst = &gpad.data[(static_cast<size_t>(c) * ph + y + ky) * pw + kx];
          for (int x = 0; x < w; ++x) dst[x] += src[static_cast<size_t>(y) * w + x];
        }
      }
  return gpad;
}

}  // namespace detail

// Stride-1 cross-correlation with replicate padding; output spatial size
// equals input. Cross-correlation convention (no kernel flip).
template <typename T>
Tensor<T> conv2d_same(const Tensor<T>& x, const ConvLayer<T>& layer) {
  if (x.c != layer.in_c)
    throw DimensionError("conv2d_same: input has " + std::to_string(x.c) +
                         " channels, layer expects " +
                         std::to_string(layer.in_c));
  const int p = layer.k / 2;
  const Tensor<T> xpad = detail::pad_replicate(x, p);
  const auto cols = detail::im2col(xpad, layer.k, x.h, x.w);
  const int hw = x.h * x.w;
  const int kk = layer.in_c * layer.k * layer.k;
  Tensor<T> y(layer.out_c, x.h, x.w);
  detail::gemm(false, false, layer.out_c, hw, kk, layer.weights.data(), kk,
               cols.data(), hw, y.data.data(), hw);
  return y;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  Tensor<T> y = x;
  for (T& v : y.data)
    if (v < T(0)) v *= slope;
  return y;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  int c = 0;
  for (const auto* p : parts) {
    if (p->h != parts[0]->h || p->w != parts[0]->w)
      throw DimensionError("concat_channels: spatial dimensions differ");
    c += p->c;
  }
  Tensor<T> out(c, parts[0]->h, parts[0]->w);
  size_t off = 0;
  for (const auto* p : parts) {
    std::copy(p->data.begin(), p->data.end(), out.data.begin() + off);
    off += p->size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reverse-mode tape over the op set above plus the Mahalanobis pooling head.

template <typename T>
class Tape {
 public:
  using Id = int;

  Id input(Tensor<T> t, bool requires_grad = false) {
    return push(Op::Input, {}, std::move(t), requires_grad);
  }

  Id conv2d(Id x, Id w, int out_c, int in_c, int k) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    if (static_cast<size_t>(out_c) * in_c * k * k != wv.size())
      throw DimensionError("conv2d: weight tensor size mismatch");
    ConvLayer<T> layer(out_c, in_c, k);
    layer.weights = wv.data;
    Tensor<T> y = conv2d_same(xv, layer);
    Id id = push(Op::Conv, {x, w}, std::move(y),
                 nodes_[x].requires_grad || nodes_[w].requires_grad);
    nodes_[id].k = k;
    nodes_[id].out_c = out_c;
    nodes_[id].in_c = in_c;
    return id;
  }

  Id leaky_relu(Id x, T slope) {
    Tensor<T> y = nn::leaky_relu(value(x), slope);
    Id id = push(Op::LRelu, {x}, std::move(y), nodes_[x].requires_grad);
    nodes_[id].slope = slope;
    return id;
  }

  Id concat(const std::vector<Id>& parts) {
    std::vector<const Tensor<T>*> ptrs;
    bool rg = false;
    for (Id p : parts) {
      ptrs.push_back(&value(p));
      rg = rg || nodes_[p].requires_grad;
    }
    return push(Op::Concat, parts, concat_channels(ptrs), rg);
  }

  Id sub(Id a, Id b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (!av.same_shape(bv)) throw DimensionError("sub: shape mismatch");
    Tensor<T> y = av;
    for (size_t i = 0; i < y.size(); ++i) y.data[i] -= bv.data[i];
    return push(Op::Sub, {a, b}, std::move(y),
                nodes_[a].requires_grad || nodes_[b].requires_grad);
  }

  Id sum(Id x) {
    T s(0);
    for (T v : value(x).data) s += v;
    return push(Op::Sum, {x}, Tensor<T>::flat(1, s), nodes_[x].requires_grad);
  }

  // Mean over pixels of sqrt(d^T (L L^T) d + eps), where d is the (C,H,W)
  // per-pixel difference and ltri holds the C*(C+1)/2 lower-triangle
  // entries of L row by row. eps > 0 guards the square-root gradient at
  // d = 0 during training; eps = 0 gives the exact inference value.
  Id mahalanobis_mean(Id d, Id ltri, T eps) {
    const Tensor<T>& dv = value(d);
    const Tensor<T>& lv = value(ltri);
    const int c = dv.c;
    if (lv.size() != static_cast<size_t>(c) * (c + 1) / 2)
      throw DimensionError("mahalanobis_mean: triangle size mismatch");
    const int hw = dv.h * dv.w;
    Tensor<T> norms(1, dv.h, dv.w);
    std::vector<T> u(c);
    for (int px = 0; px < hw; ++px) {
      // u = L^T d: u[j] = sum_{i >= j} L[i][j] d[i]
      for (int j = 0; j < c; ++j) u[j] = T(0);
      size_t idx = 0;
      for (int i = 0; i < c; ++i) {
        const T di = dv.data[static_cast<size_t>(i) * hw + px];
        for (int j = 0; j <= i; ++j, ++idx) u[j] += lv.data[idx] * di;
      }
      T s(0);
      for (int j = 0; j < c; ++j) s += u[j] * u[j];
      norms.data[px] = std::sqrt(s + eps);
    }
    T mean(0);
    for (int px = 0; px < hw; ++px) mean += norms.data[px];
    mean /= static_cast<T>(hw);
    Id id = push(Op::Mahal, {d, ltri}, Tensor<T>::flat(1, mean),
                 nodes_[d].requires_grad || nodes_[ltri].requires_grad);
    nodes_[id].saved = std::move(norms);
    nodes_[id].eps = eps;
    return id;
  }

  const Tensor<T>& value(Id id) const { return nodes_.at(id).value; }

  // Per-pixel norms recorded by mahalanobis_mean.
  const Tensor<T>& saved(Id id) const { return nodes_.at(id).saved; }

  const Tensor<T>& grad(Id id) const {
    if (!ran_backward_)
      throw Error("Tape::grad called before backward");
    return nodes_.at(id).grad;
  }

  // Reverse sweep from a scalar node, seeding d(loss)/d(node) = seed.
  void backward(Id loss, T seed = T(1)) {
    if (nodes_.empty() || loss < 0 || loss >= static_cast<Id>(nodes_.size()))
      throw Error("Tape::backward: no recorded forward pass for this node");
    if (value(loss).size() != 1)
      throw Error("Tape::backward: loss must be scalar");
    for (auto& n : nodes_) {
      n.grad = Tensor<T>(n.value.c, n.value.h, n.value.w);
    }
    nodes_[loss].grad.data[0] = seed;
    for (Id id = loss; id >= 0; --id) backward_node(id);
    ran_backward_ = true;
  }

 private:
  enum class Op { Input, Conv, LRelu, Concat, Sub, Sum, Mahal };

  struct Node {
    Op op;
    std::vector<Id> inputs;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> saved;
    bool requires_grad = false;
    T slope = T(0);
    T eps = T(0);
    int k = 0, out_c = 0, in_c = 0;
  };

  Id push(Op op, std::vector<Id> inputs, Tensor<T> v, bool rg) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(v);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
  }

  void backward_node(Id id) {
    Node& n = nodes_[id];
    if (!n.requires_grad && n.op != Op::Input) return;
    const Tensor<T>& gy = n.grad;
    switch (n.op) {
      case Op::Input:
        break;
      case Op::Conv: {
        Node& xn = nodes_[n.inputs[0]];
        Node& wn = nodes_[n.inputs[1]];
        const int k = n.k, p = k / 2;
        const Tensor<T>& x = xn.value;
        const int hw = x.h * x.w;
        const int kk = n.in_c * k * k;
        const Tensor<T> xpad = detail::pad_replicate(x, p);
        const auto cols = detail::im2col(xpad, k, x.h, x.w);
        if (wn.requires_grad) {
          // gW = gY * cols^T
          std::vector<T> gw(static_cast<size_t>(n.out_c) * kk);
          detail::gemm(false, true, n.out_c, kk, hw, gy.data.data(), hw,
                       cols.data(), hw, gw.data(), kk);
          for (size_t i = 0; i < gw.size(); ++i) wn.grad.data[i] += gw[i];
        }
        if (xn.requires_grad) {
          std::vector<T> gcols(static_cast<size_t>(kk) * hw);
          detail::gemm(true, false, kk, hw, n.out_c, wn.value.data.data(), kk,
                       gy.data.data(), hw, gcols.data(), hw);
          Tensor<T> gpad = detail::col2im_add(gcols, n.in_c, k, x.h, x.w,
                                              xpad.h, xpad.w);
          Tensor<T> gx = detail::pad_replicate_adjoint(gpad, p, x.h, x.w);
          for (size_t i = 0; i < gx.size(); ++i) xn.grad.data[i] += gx.data[i];
        }
        break;
      }
      case Op::LRelu: {
        Node& xn = nodes_[n.inputs[0]];
        if (!xn.requires_grad) break;
        for (size_t i = 0; i < gy.size(); ++i)
          xn.grad.data[i] +=
              gy.data[i] * (xn.value.data[i] > T(0) ? T(1) : n.slope);
        break;
      }
      case Op::Concat: {
        size_t off = 0;
        for (Id pid : n.inputs) {
          Node& pn = nodes_[pid];
          if (pn.requires_grad)
            for (size_t i = 0; i < pn.value.size(); ++i)
              pn.grad.data[i] += gy.data[off + i];
          off += pn.value.size();
        }
        break;
      }
      case Op::Sub: {
        Node& an = nodes_[n.inputs[0]];
        Node& bn = nodes_[n.inputs[1]];
        if (an.requires_grad)
          for (size_t i = 0; i < gy.size(); ++i) an.grad.data[i] += gy.data[i];
        if (bn.requires_grad)
          for (size_t i = 0; i < gy.size(); ++i) bn.grad.data[i] -= gy.data[i];
        break;
      }
      case Op::Sum: {
        Node& xn = nodes_[n.inputs[0]];
        if (!xn.requires_grad) break;
        const T g = gy.data[0];
        for (size_t i = 0; i < xn.value.size(); ++i) xn.grad.data[i] += g;
        break;
      }
      case Op::Mahal: {
        Node& dn = nodes_[n.inputs[0]];
        Node& ln = nodes_[n.inputs[1]];
        const Tensor<T>& dv = dn.value;
        const Tensor<T>& lv = ln.value;
        const int c = dv.c;
        const int hw = dv.h * dv.w;
        const T gmean = gy.data[0] / static_cast<T>(hw);
        std::vector<T> u(c), gu(c);
        for (int px = 0; px < hw; ++px) {
          size_t idx = 0;
          for (int j = 0; j < c; ++j) u[j] = T(0);
          for (int i = 0; i < c; ++i) {
            const T di = dv.data[static_cast<size_t>(i) * hw + px];
            for (int j = 0; j <= i; ++j, ++idx) u[j] += lv.data[idx] * di;
          }
          const T norm = n.saved.data[px];
          const T scale = norm > T(0) ? gmean / norm : T(0);
          for (int j = 0; j < c; ++j) gu[j] = scale * u[j];
          idx = 0;
          for (int i = 0; i < c; ++i) {
            const T di = dv.data[static_cast<size_t>(i) * hw + px];
            T gdi(0);
            for (int j = 0; j <= i; ++j, ++idx) {
              if (ln.requires_grad) ln.grad.data[idx] += di * gu[j];
              gdi += lv.data[idx] * gu[j];
            }
            if (dn.requires_grad)
              dn.grad.data[static_cast<size_t>(i) * hw + px] += gdi;
          }
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

// ---------------------------------------------------------------------------
// Adam.

template <typename T>
struct AdamState {
  std::vector<T> m, v;
  long step = 0;
  T lr = T(1e-3);
  T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);

  explicit AdamState(size_t n, T lr_ = T(1e-3))
      : m(n, T(0)), v(n, T(0)), lr(lr_) {}
};

// Standard Adam update with bias correction. Throws on non-finite
// gradients, naming the parameter index.
template <typename T>
void adam_step(std::vector<T>& params, const std::vector<T>& grads,
               AdamState<T>& state, const std::string& name = "params") {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw DimensionError("adam_step: shape mismatch for " + name);
  ++state.step;
  const T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
  const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    if (!std::isfinite(g))
      throw NumericError("adam_step: non-finite gradient in " + name +
                         " at index " + std::to_string(i));
    state.m[i] = state.beta1 * state.m[i] + (T(1) - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (T(1) - state.beta2) * g * g;
    const T mhat = state.m[i] / bc1;
    const T vhat = state.v[i] / bc2;
    params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

}  // namespace cdm::nn
