#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include "cdm/classical.hpp"
#include "cdm/image.hpp"
#include "cdm/model.hpp"
#include "cdm/nn.hpp"

namespace cdm {

// Scalar metric over an image pair.
using ImageMetric = std::function<double(const ImageBuf&, const ImageBuf&)>;

// Metric that also supplies d(metric)/d(y) when grad_y is non-null.
using GradImageMetric =
    std::function<double(const ImageBuf& x, const ImageBuf& y, ImageBuf* grad_y)>;

namespace detail {

// 3x3 Jacobian of sRGB -> CIELAB at a pixel.
inline void srgb_to_lab_jacobian(const RgbColor& c, const WhitePoint& w,
                                 double jac[3][3]) {
  const double lin[3] = {srgb_to_linear(c.r), srgb_to_linear(c.g),
                         srgb_to_linear(c.b)};
  auto dlin = [](double v) {
    v = std::clamp(v, 0.0, 1.0);
    return v <= 0.04045 ? 1.0 / 12.92
                        : (2.4 / 1.055) * std::pow((v + 0.055) / 1.055, 1.4);
  };
  const double dl[3] = {dlin(c.r), dlin(c.g), dlin(c.b)};
  const XyzColor xyz = linear_rgb_to_xyz(lin[0], lin[1], lin[2]);
  auto df = [](double t) {
    constexpr double delta = 6.0 / 29.0;
    constexpr double delta3 = delta * delta * delta;
    return t > delta3 ? std::cbrt(t) / (3.0 * t) : 1.0 / (3.0 * delta * delta);
  };
  const double dfx = df(xyz.x / w.xn) / w.xn;
  const double dfy = df(xyz.y / w.yn) / w.yn;
  const double dfz = df(xyz.z / w.zn) / w.zn;
  // dLab/dXYZ rows composed with XYZ = M * linear and linear' = dl.
  for (int k = 0; k < 3; ++k) {
    const double dx = detail::kSrgbToXyz[0][k] * dl[k];
    const double dy = detail::kSrgbToXyz[1][k] * dl[k];
    const double dz = detail::kSrgbToXyz[2][k] * dl[k];
    jac[0][k] = 116.0 * dfy * dy;
    jac[1][k] = 500.0 * (dfx * dx - dfy * dy);
    jac[2][k] = 200.0 * (dfy * dy - dfz * dz);
  }
}

}  // namespace detail

// Mean per-pixel CIELAB Euclidean distance with an analytic gradient with
// respect to the second image. The per-pixel objective is convex, which
// makes this the reference metric for the recovery probe.
inline GradImageMetric de76_pixel_mean_metric(const WhitePoint& w = d65_white()) {
  return [w](const ImageBuf& x, const ImageBuf& y, ImageBuf* grad_y) {
    if (!x.same_dims(y))
      throw DimensionError("de76 metric: dimensions differ");
    if (grad_y) *grad_y = ImageBuf(y.height, y.width, 3);
    const double inv_n = 1.0 / (static_cast<double>(x.height) * x.width);
    double sum = 0.0;
    for (int py = 0; py < x.height; ++py)
      for (int px = 0; px < x.width; ++px) {
        const RgbColor cx{x.at(py, px, 0), x.at(py, px, 1), x.at(py, px, 2)};
        const RgbColor cy{y.at(py, px, 0), y.at(py, px, 1), y.at(py, px, 2)};
        const LabColor lx = srgb_to_lab(cx, w);
        const LabColor ly = srgb_to_lab(cy, w);
        const double d[3] = {ly.l - lx.l, ly.a - lx.a, ly.b - lx.b};
        const double norm =
            std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        sum += norm;
        if (grad_y && norm > 0.0) {
          double jac[3][3];
          detail::srgb_to_lab_jacobian(cy, w, jac);
          for (int k = 0; k < 3; ++k) {
            double g = 0.0;
            for (int r = 0; r < 3; ++r) g += jac[r][k] * d[r] / norm;
            grad_y->at(py, px, k) = static_cast<float>(g * inv_n);
          }
        }
      }
    return sum * inv_n;
  };
}

// CD-Net overall CD with input gradients obtained from the tape.
template <typename T = float>
GradImageMetric cdnet_grad_metric(CdNetParams<T> params) {
  return [params = std::move(params)](const ImageBuf& x, const ImageBuf& y,
                                      ImageBuf* grad_y) {
    if (!grad_y) return cdnet_overall_cd(x, y, params).mean;
    nn::Tape<T> tape;
    const auto graph = cdnet_record<T>(
        tape, params, detail::image_to_tensor<T>(x),
        detail::image_to_tensor<T>(y), T(1e-12),
        /*want_param_grads=*/false, /*want_input_grads=*/true);
    const double value = tape.value(graph.delta_e).data[0];
    tape.backward(graph.delta_e);
    *grad_y = detail::tensor_to_image(tape.grad(graph.img_b));
    return value;
  };
}

// ---------------------------------------------------------------------------
// Reference image recovery (projected adaptive-moment descent on pixels).

struct RecoveryConfig {
  int steps = 2000;
  double step_size = 1e-2;
  // Step size is multiplied by decay_factor every decay_interval steps so
  // the iterates settle instead of orbiting the minimizer.
  double decay_factor = 0.5;
  int decay_interval = 400;
  double convergence_delta_e = 0.0;  // stop early below this CD (0 = off)

  void validate() const {
    if (steps <= 0 || step_size <= 0)
      throw ConfigError("recovery config: steps and step size must be positive");
  }
};

struct RecoveryResult {
  ImageBuf recovered;
  std::vector<double> trajectory;  // per-step CD values
};

inline RecoveryResult recover_reference(const GradImageMetric& metric,
                                        const ImageBuf& x, const ImageBuf& y0,
                                        const RecoveryConfig& cfg = {}) {
  cfg.validate();
  if (!x.same_dims(y0))
    throw DimensionError("recover_reference: dimensions differ");
  RecoveryResult res;
  res.recovered = y0;
  std::vector<float> pixels = res.recovered.data;
  nn::AdamState<float> adam(pixels.size(),
                            static_cast<float>(cfg.step_size));
  ImageBuf grad;
  for (int step = 0; step < cfg.steps; ++step) {
    res.recovered.data = pixels;
    const double value = metric(x, res.recovered, &grad);
    res.trajectory.push_back(value);
    if (cfg.convergence_delta_e > 0 && value < cfg.convergence_delta_e) break;
    for (float g : grad.data)
      if (!std::isfinite(g))
        throw NumericError("recover_reference: non-finite gradient at step " +
                           std::to_string(step));
    adam.lr = static_cast<float>(
        cfg.step_size *
        std::pow(cfg.decay_factor, step / std::max(cfg.decay_interval, 1)));
    nn::adam_step(pixels, grad.data, adam, "pixels");
    for (float& p : pixels) p = std::clamp(p, 0.0f, 1.0f);  // projection
  }
  res.recovered.data = pixels;
  return res;
}

// ---------------------------------------------------------------------------
// Triangle-inequality sampling.

struct TripletReport {
  long triplets_tested = 0;
  long violation_count = 0;
  double max_violation_margin = 0.0;  // dE(x,z) - dE(x,y) - dE(y,z)
  double tolerance = 1e-6;
};

// Seeded sampling of same-content triplets; pairwise distances are cached
// so repeated pairs cost one metric evaluation.
inline TripletReport triangle_probe(
    const ImageMetric& metric,
    const std::vector<std::vector<ImageBuf>>& content_groups, long samples,
    unsigned seed, double tolerance = 1e-6) {
  std::vector<size_t> eligible;
  for (size_t g = 0; g < content_groups.size(); ++g)
    if (content_groups[g].size() >= 3) eligible.push_back(g);
  if (eligible.empty())
    throw ConfigError("triangle_probe: no content group has >= 3 images");

  std::mt19937 rng(seed);
  std::map<std::tuple<size_t, size_t, size_t>, double> cache;
  auto dist = [&](size_t g, size_t i, size_t j) {
    if (i > j) std::swap(i, j);
    const auto key = std::make_tuple(g, i, j);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const double d = metric(content_groups[g][i], content_groups[g][j]);
    cache.emplace(key, d);
    return d;
  };

  TripletReport rep;
  rep.tolerance = tolerance;
  std::uniform_int_distribution<size_t> pick_group(0, eligible.size() - 1);
  for (long s = 0; s < samples; ++s) {
    const size_t g = eligible[pick_group(rng)];
    const size_t n = content_groups[g].size();
    std::uniform_int_distribution<size_t> pick(0, n - 1);
    size_t i = pick(rng), j = pick(rng), k = pick(rng);
    while (j == i) j = pick(rng);
    while (k == i || k == j) k = pick(rng);
    const double margin = dist(g, i, k) - dist(g, i, j) - dist(g, j, k);
    ++rep.triplets_tested;
    if (margin > tolerance) {
      ++rep.violation_count;
      rep.max_violation_margin = std::max(rep.max_violation_margin, margin);
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Metric-axiom sampling.

struct AxiomReport {
  long pairs_tested = 0;
  long negativity_failures = 0;   // dE < 0
  long symmetry_failures = 0;     // |dE(x,y) - dE(y,x)| > tol
  long identity_failures = 0;     // dE(x,x) > tol
  double tolerance = 1e-6;
};

using PairSampler = std::function<std::pair<ImageBuf, ImageBuf>(std::mt19937&)>;

inline AxiomReport axiom_probe(const ImageMetric& metric,
                               const PairSampler& sampler, long count,
                               unsigned seed, double tolerance = 1e-6) {
  std::mt19937 rng(seed);
  AxiomReport rep;
  rep.tolerance = tolerance;
  for (long i = 0; i < count; ++i) {
    auto [x, y] = sampler(rng);
    const double dxy = metric(x, y);
    const double dyx = metric(y, x);
    const double dxx = metric(x, x);
    ++rep.pairs_tested;
    if (dxy < 0.0 || dyx < 0.0 || dxx < 0.0) ++rep.negativity_failures;
    if (std::abs(dxy - dyx) > tolerance) ++rep.symmetry_failures;
    if (dxx > tolerance) ++rep.identity_failures;
  }
  return rep;
}

inline PairSampler random_image_sampler(int height, int width) {
  return [height, width](std::mt19937& rng) {
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    ImageBuf a(height, width, 3), b(height, width, 3);
    for (auto& v : a.data) v = dist(rng);
    for (auto& v : b.data) v = dist(rng);
    return std::make_pair(std::move(a), std::move(b));
  };
}

}  // namespace cdm
