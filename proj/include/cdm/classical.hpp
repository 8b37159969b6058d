#pragma once

#include <cmath>
#include <optional>
#include <variant>

#include "cdm/colorspace.hpp"
#include "cdm/errors.hpp"
#include "cdm/image.hpp"
#include "cdm/scielab.hpp"

namespace cdm {

// CIELAB 1976 Euclidean distance.
inline double delta_e76(const LabColor& p, const LabColor& q) {
  return std::sqrt((p.l - q.l) * (p.l - q.l) + (p.a - q.a) * (p.a - q.a) +
                   (p.b - q.b) * (p.b - q.b));
}

struct Cie94Weights {
  double kl = 1.0, kc = 1.0, kh = 1.0;
};

// CIE94 with graphic-arts constants (K1 = 0.045, K2 = 0.015). The
// reference chroma is taken from the first argument, which makes the
// formula asymmetric.
inline double delta_e94(const LabColor& p, const LabColor& q,
                        const Cie94Weights& w = {}) {
  if (w.kl <= 0 || w.kc <= 0 || w.kh <= 0)
    throw ConfigError("CIE94 weights must be positive");
  const double c1 = std::hypot(p.a, p.b);
  const double c2 = std::hypot(q.a, q.b);
  const double dl = p.l - q.l;
  const double dc = c1 - c2;
  const double da = p.a - q.a;
  const double db = p.b - q.b;
  const double dh2 = da * da + db * db - dc * dc;
  const double sl = 1.0;
  const double sc = 1.0 + 0.045 * c1;
  const double sh = 1.0 + 0.015 * c1;
  const double term_l = dl / (w.kl * sl);
  const double term_c = dc / (w.kc * sc);
  const double term_h2 = std::max(dh2, 0.0) / (w.kh * sh * w.kh * sh);
  return std::sqrt(term_l * term_l + term_c * term_c + term_h2);
}

// CMC(l:c). Asymmetric: the first argument is the reference.
inline double delta_e_cmc(const LabColor& p, const LabColor& q, double l = 2.0,
                          double c = 1.0) {
  if (l <= 0 || c <= 0) throw ConfigError("CMC ratio weights must be positive");
  const double c1 = std::hypot(p.a, p.b);
  const double c2 = std::hypot(q.a, q.b);
  const double dl = p.l - q.l;
  const double dc = c1 - c2;
  const double da = p.a - q.a;
  const double db = p.b - q.b;
  const double dh2 = std::max(da * da + db * db - dc * dc, 0.0);

  double h1 = std::atan2(p.b, p.a) * 180.0 / M_PI;
  if (h1 < 0) h1 += 360.0;

  const double sl = p.l < 16.0 ? 0.511
                               : 0.040975 * p.l / (1.0 + 0.01765 * p.l);
  const double sc = 0.0638 * c1 / (1.0 + 0.0131 * c1) + 0.638;
  const double t =
      (h1 >= 164.0 && h1 <= 345.0)
          ? 0.56 + std::abs(0.2 * std::cos((h1 + 168.0) * M_PI / 180.0))
          : 0.36 + std::abs(0.4 * std::cos((h1 + 35.0) * M_PI / 180.0));
  const double c1_4 = c1 * c1 * c1 * c1;
  const double f = std::sqrt(c1_4 / (c1_4 + 1900.0));
  const double sh = sc * (f * t + 1.0 - f);

  const double term_l = dl / (l * sl);
  const double term_c = dc / (c * sc);
  return std::sqrt(term_l * term_l + term_c * term_c + dh2 / (sh * sh));
}

struct Ciede2000Factors {
  double kl = 1.0, kc = 1.0, kh = 1.0;
};

// CIEDE2000: a*-axis rescaling via G, primed chroma/hue, S and T
// weighting functions, and the R_T hue-rotation term. Symmetric in p, q.
inline double ciede2000(const LabColor& p, const LabColor& q,
                        const Ciede2000Factors& k = {}) {
  if (k.kl <= 0 || k.kc <= 0 || k.kh <= 0)
    throw ConfigError("CIEDE2000 parametric factors must be positive");
  constexpr double deg2rad = M_PI / 180.0;
  constexpr double pow25_7 = 6103515625.0;  // 25^7

  const double c1 = std::hypot(p.a, p.b);
  const double c2 = std::hypot(q.a, q.b);
  const double c_bar = 0.5 * (c1 + c2);
  const double c_bar7 = std::pow(c_bar, 7.0);
  const double g = 0.5 * (1.0 - std::sqrt(c_bar7 / (c_bar7 + pow25_7)));

  const double a1p = (1.0 + g) * p.a;
  const double a2p = (1.0 + g) * q.a;
  const double c1p = std::hypot(a1p, p.b);
  const double c2p = std::hypot(a2p, q.b);

  auto hue_deg = [](double a, double b) {
    if (a == 0.0 && b == 0.0) return 0.0;
    double h = std::atan2(b, a) / deg2rad;
    return h < 0.0 ? h + 360.0 : h;
  };
  const double h1p = hue_deg(a1p, p.b);
  const double h2p = hue_deg(a2p, q.b);

  const double dlp = q.l - p.l;
  const double dcp = c2p - c1p;

  double dhp = 0.0;
  if (c1p * c2p != 0.0) {
    dhp = h2p - h1p;
    if (dhp > 180.0) dhp -= 360.0;
    else if (dhp < -180.0) dhp += 360.0;
  }
  const double dHp =
      2.0 * std::sqrt(c1p * c2p) * std::sin(0.5 * dhp * deg2rad);

  const double l_bar = 0.5 * (p.l + q.l);
  const double cp_bar = 0.5 * (c1p + c2p);

  double hp_bar = h1p + h2p;
  if (c1p * c2p != 0.0) {
    const double diff = std::abs(h1p - h2p);
    if (diff > 180.0) {
      if (h1p + h2p < 360.0) hp_bar = (h1p + h2p + 360.0) / 2.0;
      else hp_bar = (h1p + h2p - 360.0) / 2.0;
    } else {
      hp_bar = 0.5 * (h1p + h2p);
    }
  }

  const double t = 1.0 - 0.17 * std::cos((hp_bar - 30.0) * deg2rad) +
                   0.24 * std::cos(2.0 * hp_bar * deg2rad) +
                   0.32 * std::cos((3.0 * hp_bar + 6.0) * deg2rad) -
                   0.20 * std::cos((4.0 * hp_bar - 63.0) * deg2rad);

  const double dtheta =
      30.0 * std::exp(-((hp_bar - 275.0) / 25.0) * ((hp_bar - 275.0) / 25.0));
  const double cp_bar7 = std::pow(cp_bar, 7.0);
  const double rc = 2.0 * std::sqrt(cp_bar7 / (cp_bar7 + pow25_7));
  const double rt = -std::sin(2.0 * dtheta * deg2rad) * rc;

  const double lm50 = (l_bar - 50.0) * (l_bar - 50.0);
  const double sl = 1.0 + 0.015 * lm50 / std::sqrt(20.0 + lm50);
  const double sc = 1.0 + 0.045 * cp_bar;
  const double sh = 1.0 + 0.015 * cp_bar * t;

  const double vl = dlp / (k.kl * sl);
  const double vc = dcp / (k.kc * sc);
  const double vh = dHp / (k.kh * sh);
  return std::sqrt(vl * vl + vc * vc + vh * vh + rt * vc * vh);
}

// Formula selector for per-pixel image CDs.
struct CdFormula {
  enum class Kind { DE76, CIE94, CMC, CIEDE2000 } kind = Kind::CIEDE2000;
  Cie94Weights cie94;
  double cmc_l = 2.0, cmc_c = 1.0;
  Ciede2000Factors de2000;

  double operator()(const LabColor& p, const LabColor& q) const {
    switch (kind) {
      case Kind::DE76: return delta_e76(p, q);
      case Kind::CIE94: return delta_e94(p, q, cie94);
      case Kind::CMC: return delta_e_cmc(p, q, cmc_l, cmc_c);
      case Kind::CIEDE2000: return ciede2000(p, q, de2000);
    }
    return 0.0;
  }
};

// H x W per-pixel CD raster plus its mean.
struct CdMap {
  ImageBuf values;  // 1-channel
  double mean = 0.0;
};

inline ImageBuf srgb_image_to_lab(const ImageBuf& img,
                                  const WhitePoint& w = d65_white()) {
  if (img.channels != 3)
    throw DimensionError("expected a 3-channel sRGB image");
  ImageBuf lab(img.height, img.width, 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const LabColor c = srgb_to_lab(
          {img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)}, w);
      lab.at(y, x, 0) = static_cast<float>(c.l);
      lab.at(y, x, 1) = static_cast<float>(c.a);
      lab.at(y, x, 2) = static_cast<float>(c.b);
    }
  return lab;
}

// Per-pixel CD of two sRGB images, optionally S-CIELAB pre-filtered,
// mean-pooled into CdMap.mean. The Lab pipeline stays in double end to
// end; only the output raster is stored as float.
inline CdMap image_cd(const ImageBuf& a, const ImageBuf& b, const CdFormula& f,
                      const std::optional<ScielabConfig>& spatial = std::nullopt,
                      const WhitePoint& w = d65_white()) {
  if (!a.same_dims(b))
    throw DimensionError("image_cd: input dimensions differ");
  if (a.channels != 3)
    throw DimensionError("image_cd: expected 3-channel sRGB images");
  const size_t n = static_cast<size_t>(a.height) * a.width;
  std::vector<LabColor> la(n), lb(n);
  for (size_t i = 0; i < n; ++i) {
    la[i] = srgb_to_lab(
        {a.data[i * 3], a.data[i * 3 + 1], a.data[i * 3 + 2]}, w);
    lb[i] = srgb_to_lab(
        {b.data[i * 3], b.data[i * 3 + 1], b.data[i * 3 + 2]}, w);
  }
  if (spatial) {
    scielab_prefilter_lab(la, a.height, a.width, *spatial, w);
    scielab_prefilter_lab(lb, a.height, a.width, *spatial, w);
  }
  CdMap out;
  out.values = ImageBuf(a.height, a.width, 1);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = f(la[i], lb[i]);
    out.values.data[i] = static_cast<float>(d);
    sum += d;
  }
  out.mean = sum / static_cast<double>(n);
  return out;
}

}  // namespace cdm
