#pragma once

#include <algorithm>
#include <cmath>

#include "cdm/errors.hpp"

namespace cdm {

struct RgbColor {
  double r = 0, g = 0, b = 0;  // gamma-encoded sRGB, [0,1]
};

struct XyzColor {
  double x = 0, y = 0, z = 0;  // reference white has y = 100
};

struct LabColor {
  double l = 0, a = 0, b = 0;
};

struct LchColor {
  double l = 0, c = 0, h = 0;  // h in degrees, [0, 360)
};

struct WhitePoint {
  double xn, yn, zn;
};

namespace detail {

// sRGB primaries under D65, scaled so that Y(white) = 100.
inline constexpr double kSrgbToXyz[3][3] = {
    {41.23907992659595, 35.75843393838780, 18.04807884018343},
    {21.26390058715104, 71.51686787677559, 7.21923153607337},
    {1.93308187155918, 11.91947797946259, 95.05321522496607},
};

// Exact inverse of kSrgbToXyz so the round trip closes to double precision.
inline constexpr double kXyzToSrgb[3][3] = {
    {0.0324096994190452153, -0.0153738317757009402, -0.0049861076029300332},
    {-0.00969243636280880255, 0.0187596750150772068, 0.000415550574071756648},
    {0.000556300796969937225, -0.00203976958888976451, 0.0105697151424287844},
};

}  // namespace detail

// D65 tristimulus values computed from the sRGB matrix itself, so that
// (1,1,1) maps exactly to L*=100, a*=b*=0.
inline WhitePoint d65_white() {
  const auto& m = detail::kSrgbToXyz;
  return {m[0][0] + m[0][1] + m[0][2], m[1][0] + m[1][1] + m[1][2],
          m[2][0] + m[2][1] + m[2][2]};
}

// sRGB EOTF. Out-of-range inputs are clamped to [0,1]; when `clipped` is
// given it is incremented for each clamped input.
inline double srgb_to_linear(double c, long* clipped = nullptr) {
  if (c < 0.0 || c > 1.0) {
    if (clipped) ++*clipped;
    c = std::clamp(c, 0.0, 1.0);
  }
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double l, long* clipped = nullptr) {
  if (l < 0.0 || l > 1.0) {
    if (clipped) ++*clipped;
    l = std::clamp(l, 0.0, 1.0);
  }
  return l <= 0.0031308 ? 12.92 * l : 1.055 * std::pow(l, 1.0 / 2.4) - 0.055;
}

inline XyzColor linear_rgb_to_xyz(double r, double g, double b) {
  const auto& m = detail::kSrgbToXyz;
  return {m[0][0] * r + m[0][1] * g + m[0][2] * b,
          m[1][0] * r + m[1][1] * g + m[1][2] * b,
          m[2][0] * r + m[2][1] * g + m[2][2] * b};
}

// Inverse of linear_rgb_to_xyz; output may fall outside [0,1] for
// out-of-gamut colors and is not clamped here.
inline void xyz_to_linear_rgb(const XyzColor& c, double* r, double* g,
                              double* b) {
  const auto& m = detail::kXyzToSrgb;
  *r = m[0][0] * c.x + m[0][1] * c.y + m[0][2] * c.z;
  *g = m[1][0] * c.x + m[1][1] * c.y + m[1][2] * c.z;
  *b = m[2][0] * c.x + m[2][1] * c.y + m[2][2] * c.z;
}

namespace detail {

inline double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  constexpr double delta3 = delta * delta * delta;
  return t > delta3 ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

inline double lab_f_inv(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta ? t * t * t : 3.0 * delta * delta * (t - 4.0 / 29.0);
}

}  // namespace detail

inline LabColor xyz_to_lab(const XyzColor& c, const WhitePoint& w = d65_white()) {
  const double fx = detail::lab_f(c.x / w.xn);
  const double fy = detail::lab_f(c.y / w.yn);
  const double fz = detail::lab_f(c.z / w.zn);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

inline XyzColor lab_to_xyz(const LabColor& c, const WhitePoint& w = d65_white()) {
  const double fy = (c.l + 16.0) / 116.0;
  const double fx = fy + c.a / 500.0;
  const double fz = fy - c.b / 200.0;
  return {w.xn * detail::lab_f_inv(fx), w.yn * detail::lab_f_inv(fy),
          w.zn * detail::lab_f_inv(fz)};
}

inline LabColor srgb_to_lab(const RgbColor& c, const WhitePoint& w = d65_white()) {
  return xyz_to_lab(linear_rgb_to_xyz(srgb_to_linear(c.r), srgb_to_linear(c.g),
                                      srgb_to_linear(c.b)),
                    w);
}

// Lab -> sRGB; out-of-gamut channels are clamped at the encode step and
// counted into `clipped` when given.
inline RgbColor lab_to_srgb(const LabColor& c, const WhitePoint& w = d65_white(),
                            long* clipped = nullptr) {
  double r, g, b;
  xyz_to_linear_rgb(lab_to_xyz(c, w), &r, &g, &b);
  return {linear_to_srgb(r, clipped), linear_to_srgb(g, clipped),
          linear_to_srgb(b, clipped)};
}

inline LchColor lab_to_lch(const LabColor& c) {
  const double chroma = std::hypot(c.a, c.b);
  double h = 0.0;
  if (chroma > 0.0) {
    h = std::atan2(c.b, c.a) * 180.0 / M_PI;
    if (h < 0.0) h += 360.0;
    if (h >= 360.0) h -= 360.0;
  }
  return {c.l, chroma, h};
}

// Calibration curve mapping a grayscale grade level to a perceptual CD in
// CIELAB units.
inline double grade_to_delta_v(double g) {
  if (!(g >= 0.0 && g <= 4.0))
    throw ConfigError("grade level out of range [0,4]: " + std::to_string(g));
  return 1.6036 * std::exp(0.5391 * g) - 1.2943;
}

}  // namespace cdm
