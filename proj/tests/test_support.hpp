#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "flowstop/opmode.hpp"
#include "flowstop/traffic.hpp"

namespace flowstop::testing {

inline GaussianMixtureSizes mixture(std::vector<double> means, std::vector<double> stds,
                                    std::vector<double> weights) {
  return {std::move(means), std::move(stds), std::move(weights)};
}

inline std::vector<ClassGeneratorSpec> desk_scale_specs() { return flowstop::desk_scale_specs(); }

/// Three loosely separated classes for small cascades.
inline std::vector<ClassGeneratorSpec> toy_specs() {
  return {
      {"a", mixture({200, 900}, {30, 60}, {0.6, 0.4}), 80.0, 1},
      {"b", mixture({500, 1200}, {40, 60}, {0.5, 0.5}), 160.0, 2},
      {"c", mixture({120, 1400}, {20, 30}, {0.3, 0.7}), 320.0, 3},
  };
}

/// Five heavily overlapping classes: same size components, slightly different
/// mixing weights and rates, so accuracy keeps improving with prefix length.
inline std::vector<ClassGeneratorSpec> overlapping_specs() {
  std::vector<ClassGeneratorSpec> out;
  for (int c = 0; c < 5; ++c) {
    const double w = 0.3 + 0.06 * c;
    out.push_back({"o" + std::to_string(c), mixture({300, 1100}, {60, 80}, {w, 1 - w}),
                   100.0 + 12.0 * c, static_cast<std::uint64_t>(40 + c)});
  }
  return out;
}

inline std::vector<ClassGeneratorSpec> mode_specs(const std::vector<std::string>& labels) {
  return mode_generator_specs(ModeAlphabet{labels});
}

// ---- Direct-summation oracles for the per-sequence statistics. ----
// Written independently of the library (full sort, two-pass sums in long
// double) so that the comparison is between two implementations.

/// Dimensionless shape statistics whose exact value can be 0 (e.g. n = 2
/// skewness); compared with an absolute floor of 1 on the scale.
inline double shape_floor(int fn) { return fn == 4 || fn == 5 || fn == 10 ? 1.0 : 1e-300; }

inline long double oracle_mean(const std::vector<double>& x) {
  long double s = 0;
  for (double v : x) s += v;
  return s / x.size();
}

inline long double oracle_median(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  return n % 2 ? static_cast<long double>(x[n / 2])
               : (static_cast<long double>(x[n / 2 - 1]) + x[n / 2]) / 2;
}

inline long double oracle_std(const std::vector<double>& x) {
  const long double mu = oracle_mean(x);
  long double s = 0;
  for (double v : x) s += (v - mu) * (v - mu);
  return std::sqrt(s / (x.size() - 1));
}

inline long double oracle_moment(const std::vector<double>& x, int power) {
  const long double sigma = oracle_std(x);
  if (sigma == 0) return 0;
  const long double mu = oracle_mean(x);
  long double s = 0;
  for (double v : x) s += std::pow((v - mu) / sigma, power);
  return s / x.size();
}

inline long double oracle_feature(int fn, const std::vector<double>& x) {
  switch (fn) {
    case 0:
      return oracle_mean(x);
    case 1:
      return oracle_median(x);
    case 2: {
      const long double med = oracle_median(x);
      std::vector<double> dev;
      for (double v : x) dev.push_back(static_cast<double>(std::fabs(v - med)));
      return oracle_median(dev);
    }
    case 3:
      return oracle_std(x);
    case 4:
      return oracle_moment(x, 3);
    case 5:
      return oracle_moment(x, 4);
    case 6:
      return *std::max_element(x.begin(), x.end());
    case 7:
      return *std::min_element(x.begin(), x.end());
    case 8:
    case 9: {
      long double s = 0;
      for (double v : x) s += static_cast<long double>(v) * v;
      s /= x.size();
      return fn == 9 ? std::sqrt(s) : s;
    }
    case 10: {
      const long double sigma = oracle_std(x);
      return sigma == 0 ? 0 : 3 * (oracle_mean(x) - oracle_median(x)) / sigma;
    }
    case 11: {
      const long double mu = oracle_mean(x);
      long double s = 0;
      for (double v : x) s += std::fabs(v - mu);
      return s / x.size();
    }
  }
  return NAN;
}

inline bool close_rel(double a, double b, double tol, double floor = 1e-300) {
  const double scale = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) <= tol * scale;
}

/// Spearman rank correlation (average ranks on ties).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t k = i;
      while (k + 1 < idx.size() && v[idx[k + 1]] == v[idx[i]]) ++k;
      const double avg = 0.5 * static_cast<double>(i + k) + 1.0;
      for (std::size_t t = i; t <= k; ++t) r[idx[t]] = avg;
      i = k + 1;
    }
    return r;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(da * db);
}

}  // namespace flowstop::testing
