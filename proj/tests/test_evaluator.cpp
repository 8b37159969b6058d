#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "cdm/evaluator.hpp"

using namespace cdm;

namespace {

// Naive textbook oracles, written independently of the library versions.

double stress_oracle(const std::vector<double>& e, const std::vector<double>& v) {
  double ee = 0, ev = 0, vv = 0;
  for (size_t i = 0; i < e.size(); ++i) {
    ee += e[i] * e[i];
    ev += e[i] * v[i];
    vv += v[i] * v[i];
  }
  const double f = ee / ev;
  double num = 0;
  for (size_t i = 0; i < e.size(); ++i)
    num += (e[i] - f * v[i]) * (e[i] - f * v[i]);
  return 100.0 * std::sqrt(num / (f * f * vv));
}

double pearson_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n = a.size();
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double num = 0, da = 0, db = 0;
  for (size_t i = 0; i < n; ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    da += (a[i] - ma) * (a[i] - ma);
    db += (b[i] - mb) * (b[i] - mb);
  }
  return num / std::sqrt(da * db);
}

std::vector<double> ranks_oracle(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<double> r(n);
  for (size_t i = 0; i < n; ++i) {
    size_t less = 0, equal = 0;
    for (size_t j = 0; j < n; ++j) {
      less += x[j] < x[i];
      equal += x[j] == x[i];
    }
    // Average rank of the tie group, 1-based.
    r[i] = less + (equal + 1) / 2.0;
  }
  return r;
}

double srcc_oracle(const std::vector<double>& e, const std::vector<double>& v) {
  return pearson_oracle(ranks_oracle(e), ranks_oracle(v));
}

}  // namespace

TEST_CASE("STRESS, PLCC pieces, and SRCC agree with naive oracles") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.1, 30.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t n = 5 + trial % 60;
    std::vector<double> e(n), v(n);
    for (size_t i = 0; i < n; ++i) {
      e[i] = u(rng);
      v[i] = u(rng);
    }
    REQUIRE(stress(e, v) == Catch::Approx(stress_oracle(e, v)).margin(1e-10));
    REQUIRE(pearson(e, v) == Catch::Approx(pearson_oracle(e, v)).margin(1e-10));
    REQUIRE(srcc(e, v) == Catch::Approx(srcc_oracle(e, v)).margin(1e-10));
  }
}

TEST_CASE("STRESS is invariant to scaling the predictions") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  std::vector<double> e(50), v(50);
  for (size_t i = 0; i < 50; ++i) {
    e[i] = u(rng);
    v[i] = u(rng);
  }
  const double base = stress(e, v);
  for (double k : {0.1, 1.0, 17.0}) {
    std::vector<double> ke = e;
    for (double& x : ke) x *= k;
    CHECK(stress(ke, v) == Catch::Approx(base).margin(1e-9));
  }
}

TEST_CASE("STRESS is zero for perfectly proportional data") {
  const std::vector<double> v = {1, 2, 3, 4, 5};
  std::vector<double> e = v;
  for (double& x : e) x *= 2.5;
  CHECK(stress(e, v) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("STRESS guards degenerate inputs") {
  CHECK_THROWS_AS(stress({1.0}, {1.0}), ConfigError);
  CHECK_THROWS_AS(stress({1, 2}, {1, 2, 3}), ConfigError);
  // sum(E*V) ~ 0.
  CHECK_THROWS_AS(stress({1, -1}, {1, 1}), NumericError);
  CHECK_THROWS_AS(stress({1, 2}, {0, 0}), NumericError);
}

TEST_CASE("ties get average ranks") {
  const std::vector<double> x = {3.0, 1.0, 3.0, 2.0};
  const auto r = average_ranks(x);
  CHECK(r[0] == 3.5);
  CHECK(r[1] == 1.0);
  CHECK(r[2] == 3.5);
  CHECK(r[3] == 2.0);
}

TEST_CASE("SRCC is 1 for any monotone transform, -1 when reversed") {
  std::vector<double> e(30), v(30);
  for (int i = 0; i < 30; ++i) {
    e[i] = i * 0.7 + 1.0;
    v[i] = std::exp(0.1 * i);  // monotone nonlinear
  }
  CHECK(srcc(e, v) == Catch::Approx(1.0).margin(1e-12));
  std::reverse(v.begin(), v.end());
  CHECK(srcc(e, v) == Catch::Approx(-1.0).margin(1e-12));
}

TEST_CASE("logistic fit recovers parameters from clean logistic data") {
  const std::array<double, 4> eta = {9.0, 1.0, 5.0, 1.5};
  std::vector<double> e, v;
  for (int i = 0; i < 60; ++i) {
    const double x = 0.2 * i;
    e.push_back(x);
    v.push_back(detail::logistic_eval(eta, x));
  }
  const LogisticFit fit = fit_logistic(e, v);
  CHECK(fit.converged);
  for (size_t i = 0; i < e.size(); ++i)
    CHECK(fit.mapped[i] == Catch::Approx(v[i]).margin(1e-6));
  CHECK(plcc(e, v) == Catch::Approx(1.0).margin(1e-8));
}

TEST_CASE("PLCC with linearization beats raw Pearson on curved data") {
  std::vector<double> e, v;
  for (int i = 0; i < 80; ++i) {
    const double x = 0.1 * i;
    e.push_back(x);
    v.push_back(1.0 / (1.0 + std::exp(-(x - 4.0) / 0.6)));
  }
  const double linearized = plcc(e, v);
  const double raw = pearson(e, v);
  CHECK(linearized > raw);
  CHECK(linearized == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("logistic fit rejects constant predictions") {
  const std::vector<double> e(10, 3.0);
  std::vector<double> v(10);
  for (int i = 0; i < 10; ++i) v[i] = i;
  CHECK_THROWS_AS(fit_logistic(e, v), NumericError);
  CHECK_THROWS_AS(fit_logistic({1, 2, 3}, {1, 2, 3}), ConfigError);
}

TEST_CASE("evaluate groups pairs into aligned, non-aligned, and all") {
  std::vector<PairRecord> recs;
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(0.5, 10.0);
  for (int i = 0; i < 24; ++i) {
    PairRecord r;
    r.delta_v = u(rng);
    r.aligned = i % 2 == 0;
    r.content_id = "c";
    recs.push_back(r);
  }
  // Metric = noisy copy of the target.
  const auto reports = evaluate(
      [&](const PairRecord& r) { return r.delta_v * 1.3 + 0.01; }, recs,
      "near-perfect");
  REQUIRE(reports.size() == 3);
  CHECK(reports[0].subset == "aligned");
  CHECK(reports[1].subset == "non-aligned");
  CHECK(reports[2].subset == "all");
  CHECK(reports[0].pair_count == 12);
  CHECK(reports[1].pair_count == 12);
  CHECK(reports[2].pair_count == 24);
  for (const auto& rep : reports) {
    CHECK(rep.stress < 1.0);
    CHECK(rep.srcc == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("report CSV has one row per method-subset pair") {
  std::vector<PairRecord> recs;
  std::mt19937 rng(6);
  std::uniform_real_distribution<double> u(0.5, 10.0);
  for (int i = 0; i < 10; ++i) {
    PairRecord r;
    r.delta_v = u(rng);
    r.aligned = true;
    recs.push_back(r);
  }
  const auto reports =
      evaluate([&](const PairRecord& r) { return r.delta_v + 0.1; }, recs, "m");
  std::ostringstream os;
  write_reports_csv(os, reports);
  std::istringstream is(os.str());
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) ++lines;
  CHECK(lines == static_cast<int>(reports.size()) + 1);
}
