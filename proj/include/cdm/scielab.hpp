#pragma once

#include <cmath>
#include <vector>

#include "cdm/colorspace.hpp"
#include "cdm/errors.hpp"
#include "cdm/image.hpp"

namespace cdm {

// Spatial pre-filter applied before per-pixel CD formulas: CIELAB ->
// opponent channels -> per-channel low-pass -> back to CIELAB.
//
// The kernel constants are the three-Gaussian-mixture parameterization of
// the original S-CIELAB distribution (Zhang & Wandell). Each component
// halfwidth is the full width at half maximum in degrees of visual angle.
//
// The default pixels_per_degree corresponds to a 4096-pixel-wide 31.1"
// display viewed from one meter: one pixel subtends
// atan((0.7899 m / 4096) / 1 m) = 0.01105 deg, i.e. 90.5 px/deg.
struct ScielabConfig {
  double pixels_per_degree = 90.5;
  // Tail mass at which each Gaussian component is truncated before
  // renormalization to unit sum.
  double tail_mass = 1e-4;
};

namespace detail {

// XYZ -> opponent {luminance, red-green, blue-yellow}.
inline constexpr double kXyzToOpp[3][3] = {
    {0.2787336, 0.7218031, -0.1065520},
    {-0.4487736, 0.2898056, 0.0771569},
    {0.0859513, -0.5899859, 0.5011089},
};

// Inverse of kXyzToOpp.
inline constexpr double kOppToXyz[3][3] = {
    {0.97959616044562814, -1.5347157012664407, 0.44459764330437401},
    {1.1889779067423238, 0.76435495751799387, 0.13512574791125836},
    {1.2318333139247291, 1.1631592597636515, 2.0784075888008569},
};

struct GaussComponent {
  double weight;
  double halfwidth_deg;  // FWHM in degrees
};

inline const std::vector<GaussComponent>& opponent_mixture(int channel) {
  static const std::vector<GaussComponent> lum = {
      {0.921, 0.0283}, {0.105, 0.133}, {-0.108, 4.336}};
  static const std::vector<GaussComponent> rg = {{0.531, 0.0392},
                                                 {0.330, 0.494}};
  static const std::vector<GaussComponent> by = {{0.488, 0.0536},
                                                 {0.371, 0.386}};
  switch (channel) {
    case 0: return lum;
    case 1: return rg;
    default: return by;
  }
}

// Unit-sum 1-D Gaussian kernel truncated where the tail mass drops below
// `tail_mass` of the total.
inline std::vector<double> gaussian_kernel_1d(double sigma_px,
                                              double tail_mass) {
  int radius = 1;
  // Two-sided tail of a normal: erfc(r / (sigma*sqrt(2))).
  while (std::erfc((radius + 0.5) / (sigma_px * std::sqrt(2.0))) > tail_mass)
    ++radius;
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i / sigma_px) * (i / sigma_px));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable convolution of one channel plane with replicate padding.
inline void convolve_separable(const std::vector<double>& src, int h, int w,
                               const std::vector<double>& kernel,
                               std::vector<double>* tmp,
                               std::vector<double>* dst) {
  const int radius = static_cast<int>(kernel.size()) / 2;
  tmp->assign(src.size(), 0.0);
  dst->assign(src.size(), 0.0);
  // Rows.
  for (int y = 0; y < h; ++y) {
    const double* row = &src[static_cast<size_t>(y) * w];
    double* out = &(*tmp)[static_cast<size_t>(y) * w];
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        int xs = x + i;
        xs = xs < 0 ? 0 : (xs >= w ? w - 1 : xs);
        acc += kernel[i + radius] * row[xs];
      }
      out[x] = acc;
    }
  }
  // Columns.
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        int ys = y + i;
        ys = ys < 0 ? 0 : (ys >= h ? h - 1 : ys);
        acc += kernel[i + radius] * (*tmp)[static_cast<size_t>(ys) * w + x];
      }
      (*dst)[static_cast<size_t>(y) * w + x] = acc;
    }
  }
}

inline double fwhm_deg_to_sigma_px(double fwhm_deg, double ppd) {
  return fwhm_deg * ppd / (2.0 * std::sqrt(2.0 * std::log(2.0)));
}

}  // namespace detail

// Support (full width in pixels) of the widest kernel component of any
// opponent channel for this config.
inline int scielab_kernel_support(const ScielabConfig& cfg) {
  if (cfg.pixels_per_degree <= 0)
    throw ConfigError("pixels_per_degree must be positive");
  int support = 1;
  for (int ch = 0; ch < 3; ++ch)
    for (const auto& comp : detail::opponent_mixture(ch)) {
      const double sigma =
          detail::fwhm_deg_to_sigma_px(comp.halfwidth_deg, cfg.pixels_per_degree);
      const auto k = detail::gaussian_kernel_1d(sigma, cfg.tail_mass);
      support = std::max(support, static_cast<int>(k.size()));
    }
  return support;
}

// Double-precision core of the prefilter: filters a row-major vector of
// Lab colors in place. Used by scielab_prefilter and by image_cd, which
// keeps the whole map pipeline in double.
inline void scielab_prefilter_lab(std::vector<LabColor>& labs, int height,
                                  int width, const ScielabConfig& cfg,
                                  const WhitePoint& w = d65_white()) {
  if (labs.size() != static_cast<size_t>(height) * width)
    throw DimensionError("scielab_prefilter: size mismatch");
  const int support = scielab_kernel_support(cfg);
  if (height < support || width < support)
    throw DimensionError("image smaller than S-CIELAB kernel support (" +
                         std::to_string(support) + " px)");

  const size_t n = labs.size();
  std::vector<std::vector<double>> opp(3, std::vector<double>(n));
  for (size_t i = 0; i < n; ++i) {
    const XyzColor xyz = lab_to_xyz(labs[i], w);
    for (int ch = 0; ch < 3; ++ch)
      opp[ch][i] = detail::kXyzToOpp[ch][0] * xyz.x +
                   detail::kXyzToOpp[ch][1] * xyz.y +
                   detail::kXyzToOpp[ch][2] * xyz.z;
  }

  std::vector<double> tmp, comp_out;
  for (int ch = 0; ch < 3; ++ch) {
    const auto& mixture = detail::opponent_mixture(ch);
    double weight_sum = 0.0;
    std::vector<double> acc(n, 0.0);
    for (const auto& comp : mixture) {
      const double sigma = detail::fwhm_deg_to_sigma_px(comp.halfwidth_deg,
                                                        cfg.pixels_per_degree);
      const auto k = detail::gaussian_kernel_1d(sigma, cfg.tail_mass);
      detail::convolve_separable(opp[ch], height, width, k, &tmp, &comp_out);
      for (size_t i = 0; i < n; ++i) acc[i] += comp.weight * comp_out[i];
      weight_sum += comp.weight;
    }
    // Normalize the mixture to unit DC gain.
    for (size_t i = 0; i < n; ++i) opp[ch][i] = acc[i] / weight_sum;
  }

  for (size_t i = 0; i < n; ++i) {
    XyzColor xyz;
    xyz.x = detail::kOppToXyz[0][0] * opp[0][i] +
            detail::kOppToXyz[0][1] * opp[1][i] +
            detail::kOppToXyz[0][2] * opp[2][i];
    xyz.y = detail::kOppToXyz[1][0] * opp[0][i] +
            detail::kOppToXyz[1][1] * opp[1][i] +
            detail::kOppToXyz[1][2] * opp[2][i];
    xyz.z = detail::kOppToXyz[2][0] * opp[0][i] +
            detail::kOppToXyz[2][1] * opp[1][i] +
            detail::kOppToXyz[2][2] * opp[2][i];
    labs[i] = xyz_to_lab(xyz, w);
  }
}

// Applies the S-CIELAB low-pass to a CIELAB-encoded image. Dimensions are
// preserved; a constant image is an exact fixed point (replicate padding,
// unit DC gain).
inline ImageBuf scielab_prefilter(const ImageBuf& img, const ScielabConfig& cfg,
                                  const WhitePoint& w = d65_white()) {
  if (img.channels != 3)
    throw DimensionError("scielab_prefilter expects a 3-channel Lab image");
  std::vector<LabColor> labs(static_cast<size_t>(img.height) * img.width);
  for (size_t i = 0; i < labs.size(); ++i)
    labs[i] = {img.data[i * 3], img.data[i * 3 + 1], img.data[i * 3 + 2]};
  scielab_prefilter_lab(labs, img.height, img.width, cfg, w);
  ImageBuf out(img.height, img.width, 3);
  for (size_t i = 0; i < labs.size(); ++i) {
    out.data[i * 3] = static_cast<float>(labs[i].l);
    out.data[i * 3 + 1] = static_cast<float>(labs[i].a);
    out.data[i * 3 + 2] = static_cast<float>(labs[i].b);
  }
  return out;
}

}  // namespace cdm
