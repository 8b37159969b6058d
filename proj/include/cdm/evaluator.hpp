#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "cdm/dataset.hpp"
#include "cdm/errors.hpp"

namespace cdm {

// Scale correction factor F = sum(E^2) / sum(E*V).
inline double stress_scale_factor(const std::vector<double>& e,
                                  const std::vector<double>& v) {
  double ee = 0.0, ev = 0.0;
  for (size_t i = 0; i < e.size(); ++i) {
    ee += e[i] * e[i];
    ev += e[i] * v[i];
  }
  if (std::abs(ev) < 1e-12)
    throw NumericError("STRESS: degenerate denominator sum(E*V) ~ 0");
  return ee / ev;
}

// STRESS = 100 * sqrt(sum((E - F*V)^2) / (F^2 * sum(V^2))).
inline double stress(const std::vector<double>& e,
                     const std::vector<double>& v) {
  if (e.size() != v.size() || e.size() < 2)
    throw ConfigError("STRESS needs two equal-length vectors of size >= 2");
  double vv = 0.0;
  for (double x : v) vv += x * x;
  if (vv <= 0.0) throw NumericError("STRESS: ground truth is all zero");
  const double f = stress_scale_factor(e, v);
  double num = 0.0;
  for (size_t i = 0; i < e.size(); ++i)
    num += (e[i] - f * v[i]) * (e[i] - f * v[i]);
  return 100.0 * std::sqrt(num / (f * f * vv));
}

struct LogisticFit {
  std::array<double, 4> eta{};  // eta1..eta4
  std::vector<double> mapped;  // fitted curve values at the inputs
  bool converged = true;
  int iterations = 0;
};

namespace detail {

inline double logistic_eval(const std::array<double, 4>& eta, double e) {
  const double t = -(e - eta[2]) / std::abs(eta[3]);
  // Stable sigmoid.
  const double s = t >= 0 ? std::exp(-t) / (1.0 + std::exp(-t))
                          : 1.0 / (1.0 + std::exp(t));
  return (eta[0] - eta[1]) * s + eta[1];
}

// Solves the 4x4 SPD-ish system A x = b by Gaussian elimination with
// partial pivoting; returns false when singular.
inline bool solve4(std::array<std::array<double, 4>, 4> a,
                   std::array<double, 4> b, std::array<double, 4>* x) {
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-300) return false;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (int r = col + 1; r < 4; ++r) {
      const double m = a[r][col] / a[col][col];
      for (int c2 = col; c2 < 4; ++c2) a[r][c2] -= m * a[col][c2];
      b[r] -= m * b[col];
    }
  }
  for (int r = 3; r >= 0; --r) {
    double s = b[r];
    for (int c2 = r + 1; c2 < 4; ++c2) s -= a[r][c2] * (*x)[c2];
    (*x)[r] = s / a[r][r];
  }
  return true;
}

}  // namespace detail

// Least-squares fit of the four-parameter monotonic logistic
// V ~ (eta1-eta2)/(1+exp(-(E-eta3)/|eta4|)) + eta2 by damped Gauss-Newton
// (Levenberg-Marquardt), deterministic initialization eta1=max(V),
// eta2=min(V), eta3=median(E), eta4=std(E).
inline LogisticFit fit_logistic(const std::vector<double>& e,
                                const std::vector<double>& v,
                                int max_iter = 2000) {
  if (e.size() != v.size() || e.size() < 4)
    throw ConfigError("fit_logistic needs >= 4 samples");
  const double e_min = *std::min_element(e.begin(), e.end());
  const double e_max = *std::max_element(e.begin(), e.end());
  if (e_max - e_min <= 0.0)
    throw NumericError("fit_logistic: predictions are constant");

  const size_t n = e.size();
  LogisticFit fit;
  {
    std::vector<double> es = e;
    std::nth_element(es.begin(), es.begin() + n / 2, es.end());
    double mean = std::accumulate(e.begin(), e.end(), 0.0) / n;
    double var = 0.0;
    for (double x : e) var += (x - mean) * (x - mean);
    fit.eta = {*std::max_element(v.begin(), v.end()),
               *std::min_element(v.begin(), v.end()), es[n / 2],
               std::max(std::sqrt(var / n), 1e-6)};
  }

  auto residual_norm2 = [&](const std::array<double, 4>& eta) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double r = detail::logistic_eval(eta, e[i]) - v[i];
      s += r * r;
    }
    return s;
  };

  double lambda = 1e-3;
  double cost = residual_norm2(fit.eta);
  int it = 0;
  for (; it < max_iter; ++it) {
    // Build J^T J and J^T r.
    std::array<std::array<double, 4>, 4> jtj{};
    std::array<double, 4> jtr{};
    const double a4 = std::abs(fit.eta[3]);
    const double sgn4 = fit.eta[3] >= 0 ? 1.0 : -1.0;
    for (size_t i = 0; i < n; ++i) {
      const double t = -(e[i] - fit.eta[2]) / a4;
      const double s = t >= 0 ? std::exp(-t) / (1.0 + std::exp(-t))
                              : 1.0 / (1.0 + std::exp(t));
      const double amp = fit.eta[0] - fit.eta[1];
      const double ds = s * (1.0 - s);
      const std::array<double, 4> j = {
          s, 1.0 - s, -amp * ds / a4,
          -amp * ds * (e[i] - fit.eta[2]) / (a4 * a4) * sgn4};
      const double r = (amp * s + fit.eta[1]) - v[i];
      for (int p = 0; p < 4; ++p) {
        jtr[p] += j[p] * r;
        for (int q = 0; q < 4; ++q) jtj[p][q] += j[p] * j[q];
      }
    }
    bool stepped = false;
    for (int tries = 0; tries < 30 && !stepped; ++tries) {
      auto damped = jtj;
      for (int p = 0; p < 4; ++p)
        damped[p][p] += lambda * std::max(jtj[p][p], 1e-12);
      std::array<double, 4> delta;
      std::array<double, 4> neg_jtr;
      for (int p = 0; p < 4; ++p) neg_jtr[p] = -jtr[p];
      if (!detail::solve4(damped, neg_jtr, &delta)) {
        lambda *= 10.0;
        continue;
      }
      std::array<double, 4> trial = fit.eta;
      for (int p = 0; p < 4; ++p) trial[p] += delta[p];
      if (std::abs(trial[3]) < 1e-12) trial[3] = 1e-12;
      const double trial_cost = residual_norm2(trial);
      if (trial_cost <= cost) {
        const double rel = (cost - trial_cost) / std::max(cost, 1e-300);
        fit.eta = trial;
        cost = trial_cost;
        lambda = std::max(lambda * 0.1, 1e-12);
        stepped = true;
        if (rel < 1e-10) {
          fit.converged = true;
          fit.iterations = it + 1;
          fit.mapped.resize(n);
          for (size_t i = 0; i < n; ++i)
            fit.mapped[i] = detail::logistic_eval(fit.eta, e[i]);
          return fit;
        }
      } else {
        lambda *= 10.0;
      }
    }
    if (!stepped) break;  // cannot improve further
  }
  fit.converged = it < max_iter;  // best-so-far when the cap was hit
  fit.iterations = it;
  fit.mapped.resize(n);
  for (size_t i = 0; i < n; ++i)
    fit.mapped[i] = detail::logistic_eval(fit.eta, e[i]);
  return fit;
}

inline double pearson(const std::vector<double>& a,
                      const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw ConfigError("pearson needs two equal-length vectors of size >= 2");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0)
    throw NumericError("pearson: zero variance input");
  return sab / std::sqrt(saa * sbb);
}

// Pearson correlation, optionally after logistic linearization of the
// predictions.
inline double plcc(const std::vector<double>& e, const std::vector<double>& v,
                   bool linearize = true) {
  if (!linearize) return pearson(e, v);
  return pearson(fit_logistic(e, v).mapped, v);
}

// Average ranks (ties share the mean rank).
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) +
                     1.0;  // 1-based
    for (size_t k2 = i; k2 <= j; ++k2) ranks[order[k2]] = r;
    i = j + 1;
  }
  return ranks;
}

// Spearman correlation as Pearson on average ranks, which coincides with
// the 1 - 6*sum(d^2)/(M(M^2-1)) closed form when there are no ties.
inline double srcc(const std::vector<double>& e, const std::vector<double>& v) {
  if (e.size() != v.size() || e.size() < 2)
    throw ConfigError("srcc needs two equal-length vectors of size >= 2");
  return pearson(average_ranks(e), average_ranks(v));
}

// ---------------------------------------------------------------------------
// Report assembly.

struct EvalReport {
  std::string method;
  std::string subset;  // aligned | non-aligned | all
  size_t pair_count = 0;
  double stress = 0.0, plcc = 0.0, srcc = 0.0;
  std::array<double, 4> eta{};
  bool logistic_converged = true;
};

using PairMetric = std::function<double(const PairRecord&)>;

inline EvalReport evaluate_vectors(const std::vector<double>& e,
                                   const std::vector<double>& v,
                                   const std::string& method,
                                   const std::string& subset) {
  if (e.size() < 2)
    throw ConfigError("evaluate: subset '" + subset + "' has " +
                      std::to_string(e.size()) +
                      " pairs; need at least 2");
  EvalReport rep;
  rep.method = method;
  rep.subset = subset;
  rep.pair_count = e.size();
  rep.stress = stress(e, v);
  const LogisticFit fit = fit_logistic(e, v);
  rep.plcc = pearson(fit.mapped, v);
  rep.eta = fit.eta;
  rep.logistic_converged = fit.converged;
  rep.srcc = srcc(e, v);
  return rep;
}

// Computes the metric on every pair of `records` and reports STRESS /
// PLCC (logistic-linearized) / SRCC for the aligned, non-aligned, and
// combined subsets (skipping subsets that are empty or too small only if
// `skip_small` is set).
inline std::vector<EvalReport> evaluate(const PairMetric& metric,
                                        const std::vector<PairRecord>& records,
                                        const std::string& method,
                                        bool skip_small = true) {
  if (records.empty()) throw ConfigError("evaluate: empty record set");
  std::vector<double> e_all, v_all, e_al, v_al, e_non, v_non;
  for (const auto& r : records) {
    const double pred = metric(r);
    e_all.push_back(pred);
    v_all.push_back(r.delta_v);
    if (r.aligned) {
      e_al.push_back(pred);
      v_al.push_back(r.delta_v);
    } else {
      e_non.push_back(pred);
      v_non.push_back(r.delta_v);
    }
  }
  std::vector<EvalReport> out;
  auto add = [&](const std::vector<double>& e, const std::vector<double>& v,
                 const std::string& subset) {
    if (skip_small && e.size() < 4) return;
    out.push_back(evaluate_vectors(e, v, method, subset));
  };
  add(e_al, v_al, "aligned");
  add(e_non, v_non, "non-aligned");
  add(e_all, v_all, "all");
  if (out.empty())
    throw ConfigError("evaluate: no subset has enough pairs");
  return out;
}

inline void write_reports_csv(std::ostream& os,
                              const std::vector<EvalReport>& reports) {
  os << "method,subset,pairs,stress,plcc,srcc,eta1,eta2,eta3,eta4\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6g,%.6g,%.6g,%.6g",
                  r.stress, r.plcc, r.srcc, r.eta[0], r.eta[1], r.eta[2],
                  r.eta[3]);
    os << csv::quote_if_needed(r.method) << ',' << r.subset << ','
       << r.pair_count << ',' << buf << '\n';
  }
}

// Human-readable table: method rows, subset column groups.
inline void print_report_table(std::ostream& os,
                               const std::vector<EvalReport>& reports) {
  std::vector<std::string> methods;
  for (const auto& r : reports)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
  const char* subsets[] = {"aligned", "non-aligned", "all"};
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s", "Method");
  os << buf;
  for (const char* s : subsets) {
    std::snprintf(buf, sizeof buf, " | %-26s", s);
    os << buf;
  }
  os << "\n";
  std::snprintf(buf, sizeof buf, "%-16s", "");
  os << buf;
  for (int i = 0; i < 3; ++i) {
    std::snprintf(buf, sizeof buf, " | %8s %8s %8s", "STRESS", "PLCC", "SRCC");
    os << buf;
  }
  os << "\n";
  for (const auto& m : methods) {
    std::snprintf(buf, sizeof buf, "%-16s", m.c_str());
    os << buf;
    for (const char* s : subsets) {
      const EvalReport* found = nullptr;
      for (const auto& r : reports)
        if (r.method == m && r.subset == s) found = &r;
      if (found)
        std::snprintf(buf, sizeof buf, " | %8.3f %8.3f %8.3f", found->stress,
                      found->plcc, found->srcc);
      else
        std::snprintf(buf, sizeof buf, " | %8s %8s %8s", "-", "-", "-");
      os << buf;
    }
    os << "\n";
  }
}

}  // namespace cdm
