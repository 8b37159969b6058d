#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "cdm/classical.hpp"
#include "cdm/model.hpp"
#include "cdm/probes.hpp"

using namespace cdm;

namespace {

ImageBuf random_image(int h, int w, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImageBuf img(h, w, 3);
  for (auto& v : img.data) v = u(rng);
  return img;
}

ImageBuf add_noise(const ImageBuf& img, double sigma, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> n(0.0f, static_cast<float>(sigma));
  ImageBuf out = img;
  for (auto& v : out.data) v = std::clamp(v + n(rng), 0.0f, 1.0f);
  return out;
}

}  // namespace

TEST_CASE("colorspace Jacobian matches finite differences") {
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  const WhitePoint w = d65_white();
  for (int trial = 0; trial < 50; ++trial) {
    double rgb[3] = {u(rng), u(rng), u(rng)};
    const RgbColor c{rgb[0], rgb[1], rgb[2]};
    double jac[3][3];
    detail::srgb_to_lab_jacobian(c, w, jac);
    const double h = 1e-7;
    for (int k = 0; k < 3; ++k) {
      double p[3] = {rgb[0], rgb[1], rgb[2]};
      double m[3] = {rgb[0], rgb[1], rgb[2]};
      p[k] += h;
      m[k] -= h;
      const LabColor lp = srgb_to_lab({p[0], p[1], p[2]}, w);
      const LabColor lm = srgb_to_lab({m[0], m[1], m[2]}, w);
      const double fd[3] = {(lp.l - lm.l) / (2 * h), (lp.a - lm.a) / (2 * h),
                            (lp.b - lm.b) / (2 * h)};
      for (int r = 0; r < 3; ++r)
        CHECK(jac[r][k] == Catch::Approx(fd[r]).epsilon(1e-5).margin(1e-6));
    }
  }
}

TEST_CASE("pixel-mean DE76 metric: value against a direct computation") {
  const auto metric = de76_pixel_mean_metric();
  const ImageBuf x = random_image(6, 7, 1);
  const ImageBuf y = random_image(6, 7, 2);
  const double got = metric(x, y, nullptr);
  const CdMap want = image_cd(x, y, CdFormula{.kind = CdFormula::Kind::DE76});
  CHECK(got == Catch::Approx(want.mean).margin(1e-6));
  CHECK(metric(x, x, nullptr) == 0.0);
  ImageBuf wrong(6, 8, 3);
  CHECK_THROWS_AS(metric(x, wrong, nullptr), DimensionError);
}

TEST_CASE("pixel-mean DE76 metric: gradient against finite differences") {
  const auto metric = de76_pixel_mean_metric();
  const ImageBuf x = random_image(4, 4, 3);
  ImageBuf y = random_image(4, 4, 4);
  ImageBuf grad;
  metric(x, y, &grad);
  REQUIRE(grad.same_dims(y));
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(y.size()) - 1);
  for (int trial = 0; trial < 30; ++trial) {
    const int i = pick(rng);
    const float orig = y.data[i];
    const double h = 1e-4;
    y.data[i] = orig + static_cast<float>(h);
    const double fp = metric(x, y, nullptr);
    y.data[i] = orig - static_cast<float>(h);
    const double fm = metric(x, y, nullptr);
    y.data[i] = orig;
    CHECK(grad.data[i] ==
          Catch::Approx((fp - fm) / (2 * h)).epsilon(1e-3).margin(1e-5));
  }
}

TEST_CASE("model metric input gradient agrees with finite differences") {
  const auto params = build_cdnet<float>(41);
  const auto metric = cdnet_grad_metric(params);
  const ImageBuf x = random_image(5, 5, 6);
  ImageBuf y = random_image(5, 5, 7);
  ImageBuf grad;
  const double val = metric(x, y, &grad);
  CHECK(val == Catch::Approx(cdnet_overall_cd(x, y, params).mean).margin(1e-5));
  std::mt19937 rng(8);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(y.size()) - 1);
  for (int trial = 0; trial < 15; ++trial) {
    const int i = pick(rng);
    const float orig = y.data[i];
    const float h = 1e-3f;
    y.data[i] = orig + h;
    const double fp = metric(x, y, nullptr);
    y.data[i] = orig - h;
    const double fm = metric(x, y, nullptr);
    y.data[i] = orig;
    CHECK(grad.data[i] ==
          Catch::Approx((fp - fm) / (2.0 * h)).epsilon(5e-2).margin(1e-4));
  }
}

TEST_CASE("recovery drives the CD toward zero on a small image") {
  const auto metric = de76_pixel_mean_metric();
  const ImageBuf ref = random_image(16, 16, 9);
  const ImageBuf init = add_noise(ref, 0.15, 10);
  RecoveryConfig cfg;
  cfg.steps = 400;
  const RecoveryResult res = recover_reference(metric, ref, init, cfg);
  REQUIRE_FALSE(res.trajectory.empty());
  CHECK(res.trajectory.back() < 0.1 * res.trajectory.front());
  // Recovered pixels stay inside the unit cube.
  for (float v : res.recovered.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("recovery stops early below the convergence threshold") {
  const auto metric = de76_pixel_mean_metric();
  const ImageBuf ref = random_image(8, 8, 11);
  RecoveryConfig cfg;
  cfg.steps = 100;
  cfg.convergence_delta_e = 1e9;  // already converged at step 0
  const RecoveryResult res = recover_reference(metric, ref, ref, cfg);
  CHECK(res.trajectory.size() == 1);
  RecoveryConfig bad;
  bad.steps = 0;
  CHECK_THROWS_AS(recover_reference(metric, ref, ref, bad), ConfigError);
}

TEST_CASE("triangle probe finds no violations for a true metric") {
  std::vector<std::vector<ImageBuf>> groups(2);
  for (int g = 0; g < 2; ++g)
    for (int i = 0; i < 5; ++i)
      groups[g].push_back(random_image(8, 8, 100 + g * 10 + i));
  const ImageMetric de76 = [](const ImageBuf& a, const ImageBuf& b) {
    return image_cd(a, b, CdFormula{.kind = CdFormula::Kind::DE76}).mean;
  };
  const TripletReport rep = triangle_probe(de76, groups, 500, 1);
  CHECK(rep.triplets_tested == 500);
  CHECK(rep.violation_count == 0);
}

TEST_CASE("triangle probe detects a planted violation") {
  // Three nearly collinear points (a gray ramp): squaring the distance
  // then violates the triangle inequality, since (2d)^2 > d^2 + d^2.
  std::vector<std::vector<ImageBuf>> groups(1);
  for (int i = 0; i < 3; ++i)
    groups[0].push_back(
        constant_image(6, 6, {0.3 + 0.1 * i, 0.3 + 0.1 * i, 0.3 + 0.1 * i}));
  const ImageMetric squared = [](const ImageBuf& a, const ImageBuf& b) {
    const double d = image_cd(a, b, CdFormula{.kind = CdFormula::Kind::DE76}).mean;
    return d * d;
  };
  const TripletReport rep = triangle_probe(squared, groups, 200, 2);
  CHECK(rep.violation_count > 0);
  CHECK(rep.max_violation_margin > rep.tolerance);
}

TEST_CASE("triangle probe is deterministic per seed") {
  std::vector<std::vector<ImageBuf>> groups(1);
  for (int i = 0; i < 6; ++i)
    groups[0].push_back(random_image(6, 6, 300 + i));
  const auto params = build_cdnet<float>(5);
  const ImageMetric m = [&](const ImageBuf& a, const ImageBuf& b) {
    return cdnet_overall_cd(a, b, params).mean;
  };
  const TripletReport a = triangle_probe(m, groups, 100, 7);
  const TripletReport b = triangle_probe(m, groups, 100, 7);
  CHECK(a.violation_count == b.violation_count);
  CHECK(a.max_violation_margin == b.max_violation_margin);
}

TEST_CASE("triangle probe needs a group of at least three images") {
  std::vector<std::vector<ImageBuf>> groups(1);
  groups[0].push_back(random_image(4, 4, 1));
  groups[0].push_back(random_image(4, 4, 2));
  const ImageMetric de76 = [](const ImageBuf& a, const ImageBuf& b) {
    return image_cd(a, b, CdFormula{.kind = CdFormula::Kind::DE76}).mean;
  };
  CHECK_THROWS_AS(triangle_probe(de76, groups, 10, 0), ConfigError);
}

TEST_CASE("axiom probe passes for a symmetric metric, fails for a rigged one") {
  const ImageMetric de76 = [](const ImageBuf& a, const ImageBuf& b) {
    return image_cd(a, b, CdFormula{.kind = CdFormula::Kind::DE76}).mean;
  };
  const AxiomReport good =
      axiom_probe(de76, random_image_sampler(6, 6), 50, 3);
  CHECK(good.pairs_tested == 50);
  CHECK(good.negativity_failures == 0);
  CHECK(good.symmetry_failures == 0);
  CHECK(good.identity_failures == 0);

  // Rigged metric: asymmetric and nonzero on identical inputs.
  const ImageMetric rigged = [](const ImageBuf& a, const ImageBuf& b) {
    return static_cast<double>(a.data[0]) - b.data[0] + 0.5;
  };
  const AxiomReport bad =
      axiom_probe(rigged, random_image_sampler(6, 6), 50, 3);
  CHECK(bad.symmetry_failures > 0);
  CHECK(bad.identity_failures == 50);
}

TEST_CASE("axiom probe is deterministic per seed") {
  const auto params = build_cdnet<float>(6);
  const ImageMetric m = [&](const ImageBuf& a, const ImageBuf& b) {
    return cdnet_overall_cd(a, b, params).mean;
  };
  const AxiomReport a = axiom_probe(m, random_image_sampler(5, 5), 20, 9);
  const AxiomReport b = axiom_probe(m, random_image_sampler(5, 5), 20, 9);
  CHECK(a.negativity_failures == b.negativity_failures);
  CHECK(a.symmetry_failures == b.symmetry_failures);
  CHECK(a.identity_failures == b.identity_failures);
}
