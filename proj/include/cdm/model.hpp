#pragma once

#include <random>
#include <vector>

#include "cdm/classical.hpp"
#include "cdm/image.hpp"
#include "cdm/nn.hpp"

namespace cdm {

// Learnable CD metric: a two-branch convolutional coordinate transform
// (1x1 and 11x11 front-end filters, three 1x1 head layers, LReLU between,
// no biases) followed by a per-pixel Mahalanobis distance with a learnable
// lower-triangular factor, mean-pooled over pixels.
//
// The quadratic form is parameterized directly by its inverse-covariance
// factor: M = L L^T, so the local distance is ||L^T d||_2. This spans the
// same PSD family as learning the covariance and inverting it, without
// the per-step inversion.
template <typename T>
struct CdNetParams {
  static constexpr int kFeatureChannels = 12;
  static constexpr int kTriangleSize =
      kFeatureChannels * (kFeatureChannels + 1) / 2;  // 78

  nn::ConvLayer<T> branch1x1{32, 3, 1};
  nn::ConvLayer<T> branch11x11{32, 3, 11};
  nn::ConvLayer<T> head1{32, 64, 1};
  nn::ConvLayer<T> head2{16, 32, 1};
  nn::ConvLayer<T> head3{kFeatureChannels, 16, 1};
  // Lower triangle of L, row by row: L[0][0], L[1][0], L[1][1], ...
  std::vector<T> metric_l;
  T lrelu_slope = T(0.01);

  size_t transform_param_count() const {
    return branch1x1.param_count() + branch11x11.param_count() +
           head1.param_count() + head2.param_count() + head3.param_count();
  }
  size_t metric_param_count() const { return metric_l.size(); }

  std::vector<nn::ConvLayer<T>*> conv_layers() {
    return {&branch1x1, &branch11x11, &head1, &head2, &head3};
  }
  std::vector<const nn::ConvLayer<T>*> conv_layers() const {
    return {&branch1x1, &branch11x11, &head1, &head2, &head3};
  }
};

// Fan-in-scaled uniform initialization of the transform; L starts at the
// identity. Expected parameter counts (96 + 11616 + 2048 + 512 + 192 =
// 14464 transform, 78 metric) are asserted at construction.
template <typename T = float>
CdNetParams<T> build_cdnet(unsigned seed) {
  CdNetParams<T> p;
  std::mt19937 rng(seed);
  for (auto* layer : p.conv_layers()) {
    const double bound =
        1.0 / std::sqrt(static_cast<double>(layer->in_c) * layer->k * layer->k);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : layer->weights) w = static_cast<T>(dist(rng));
  }
  p.metric_l.assign(CdNetParams<T>::kTriangleSize, T(0));
  for (int i = 0; i < CdNetParams<T>::kFeatureChannels; ++i)
    p.metric_l[static_cast<size_t>(i) * (i + 1) / 2 + i] = T(1);
  if (p.transform_param_count() != 14464 || p.metric_param_count() != 78)
    throw Error("CD-Net parameter count mismatch");
  return p;
}

namespace detail {

template <typename T>
nn::Tensor<T> image_to_tensor(const ImageBuf& img) {
  nn::Tensor<T> t(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t.at(c, y, x) = static_cast<T>(img.at(y, x, c));
  return t;
}

template <typename T>
ImageBuf tensor_to_image(const nn::Tensor<T>& t) {
  ImageBuf img(t.h, t.w, t.c);
  for (int c = 0; c < t.c; ++c)
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x)
        img.at(y, x, c) = static_cast<float>(t.at(c, y, x));
  return img;
}

}  // namespace detail

// Inference-path coordinate transform: (3,H,W) -> (12,H,W).
template <typename T>
nn::Tensor<T> cdnet_transform(const nn::Tensor<T>& x,
                              const CdNetParams<T>& p) {
  const auto z1 = nn::conv2d_same(x, p.branch1x1);
  const auto z2 = nn::conv2d_same(x, p.branch11x11);
  auto z = nn::concat_channels<T>({&z1, &z2});
  z = nn::leaky_relu(z, p.lrelu_slope);
  z = nn::conv2d_same(z, p.head1);
  z = nn::leaky_relu(z, p.lrelu_slope);
  z = nn::conv2d_same(z, p.head2);
  z = nn::leaky_relu(z, p.lrelu_slope);
  return nn::conv2d_same(z, p.head3);
}

// H x W x 3 unit-interval sRGB image -> H x W x 12 feature image.
template <typename T>
ImageBuf cdnet_transform_image(const ImageBuf& img, const CdNetParams<T>& p) {
  if (img.channels != 3)
    throw DimensionError("cdnet transform expects a 3-channel image");
  return detail::tensor_to_image(
      cdnet_transform(detail::image_to_tensor<T>(img), p));
}

// Per-pixel ||L^T (fa - fb)||_2 over feature tensors, mean pooled.
// Exact (unguarded) square root: inference path.
template <typename T>
CdMap cdnet_local_cd(const nn::Tensor<T>& fa, const nn::Tensor<T>& fb,
                     const CdNetParams<T>& p) {
  if (!fa.same_shape(fb))
    throw DimensionError("cdnet_local_cd: feature dimensions differ");
  if (fa.c != CdNetParams<T>::kFeatureChannels)
    throw DimensionError("cdnet_local_cd: expected 12 feature channels");
  const int c = fa.c;
  const int hw = fa.h * fa.w;
  CdMap out;
  out.values = ImageBuf(fa.h, fa.w, 1);
  double sum = 0.0;
  std::vector<T> u(c);
  for (int px = 0; px < hw; ++px) {
    for (int j = 0; j < c; ++j) u[j] = T(0);
    size_t idx = 0;
    for (int i = 0; i < c; ++i) {
      const T di = fa.data[static_cast<size_t>(i) * hw + px] -
                   fb.data[static_cast<size_t>(i) * hw + px];
      for (int j = 0; j <= i; ++j, ++idx) u[j] += p.metric_l[idx] * di;
    }
    T s(0);
    for (int j = 0; j < c; ++j) s += u[j] * u[j];
    const double d = std::sqrt(static_cast<double>(s));
    out.values.data[px] = static_cast<float>(d);
    sum += d;
  }
  out.mean = sum / hw;
  return out;
}

template <typename T>
CdMap cdnet_local_cd(const ImageBuf& fa, const ImageBuf& fb,
                     const CdNetParams<T>& p) {
  return cdnet_local_cd(detail::image_to_tensor<T>(fa),
                        detail::image_to_tensor<T>(fb), p);
}

// Overall CD between two sRGB images: transform both, Mahalanobis map,
// mean. Symmetric under argument swap by construction.
template <typename T>
CdMap cdnet_overall_cd(const ImageBuf& a, const ImageBuf& b,
                       const CdNetParams<T>& p) {
  if (!a.same_dims(b))
    throw DimensionError("cdnet_overall_cd: input dimensions differ");
  const auto fa = cdnet_transform(detail::image_to_tensor<T>(a), p);
  const auto fb = cdnet_transform(detail::image_to_tensor<T>(b), p);
  return cdnet_local_cd(fa, fb, p);
}

// ---------------------------------------------------------------------------
// Training graph: the same forward pass recorded on a tape.

template <typename T>
struct CdNetGraph {
  typename nn::Tape<T>::Id img_a, img_b;  // inputs
  typename nn::Tape<T>::Id w_b1, w_b11, w_h1, w_h2, w_h3, w_l;  // parameters
  typename nn::Tape<T>::Id delta_e;  // scalar prediction
};

// Records forward(overall_cd) on the tape. `eps` guards the square-root
// gradient (use ~1e-12 for training, 0 for exactness checks away from
// d = 0). Set want_input_grads to differentiate with respect to img_b
// (reference recovery).
template <typename T>
CdNetGraph<T> cdnet_record(nn::Tape<T>& tape, const CdNetParams<T>& p,
                           const nn::Tensor<T>& a, const nn::Tensor<T>& b,
                           T eps, bool want_param_grads = true,
                           bool want_input_grads = false) {
  using Id = typename nn::Tape<T>::Id;
  CdNetGraph<T> g;
  auto weight_input = [&](const nn::ConvLayer<T>& layer) {
    nn::Tensor<T> t = nn::Tensor<T>::flat(static_cast<int>(layer.param_count()));
    t.data = layer.weights;
    return tape.input(std::move(t), want_param_grads);
  };
  g.img_a = tape.input(a, want_input_grads);
  g.img_b = tape.input(b, want_input_grads);
  g.w_b1 = weight_input(p.branch1x1);
  g.w_b11 = weight_input(p.branch11x11);
  g.w_h1 = weight_input(p.head1);
  g.w_h2 = weight_input(p.head2);
  g.w_h3 = weight_input(p.head3);
  {
    nn::Tensor<T> t = nn::Tensor<T>::flat(CdNetParams<T>::kTriangleSize);
    t.data = p.metric_l;
    g.w_l = tape.input(std::move(t), want_param_grads);
  }

  auto transform = [&](Id img) {
    Id z1 = tape.conv2d(img, g.w_b1, 32, 3, 1);
    Id z2 = tape.conv2d(img, g.w_b11, 32, 3, 11);
    Id z = tape.concat({z1, z2});
    z = tape.leaky_relu(z, p.lrelu_slope);
    z = tape.conv2d(z, g.w_h1, 32, 64, 1);
    z = tape.leaky_relu(z, p.lrelu_slope);
    z = tape.conv2d(z, g.w_h2, 16, 32, 1);
    z = tape.leaky_relu(z, p.lrelu_slope);
    return tape.conv2d(z, g.w_h3, CdNetParams<T>::kFeatureChannels, 16, 1);
  };
  const Id fa = transform(g.img_a);
  const Id fb = transform(g.img_b);
  const Id d = tape.sub(fa, fb);
  g.delta_e = tape.mahalanobis_mean(d, g.w_l, eps);
  return g;
}

}  // namespace cdm
