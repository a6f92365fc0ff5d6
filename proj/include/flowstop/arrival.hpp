#pragma once

#include <span>
#include <string>
#include <vector>

#include "flowstop/traffic.hpp"

namespace flowstop {

/// Gaps at or below this are treated as capture ties when fitting.
inline constexpr double kMinInterArrival = 1e-9;

/// Per-class exponential inter-arrival rates (1/s).
struct ArrivalModel {
  std::vector<double> rates;
  std::vector<std::size_t> sample_counts;

  [[nodiscard]] double mean_inter_arrival(int cls) const {
    return 1.0 / rates.at(static_cast<std::size_t>(cls));
  }
  void validate() const;

  friend bool operator==(const ArrivalModel&, const ArrivalModel&) = default;
};

/// Maximum-likelihood rate count / sum for i.i.d. exponential gaps. Zero gaps
/// are clamped to kMinInterArrival first.
double fit_exponential_rate(std::span<const double> taus);

/// Exponential log-likelihood n ln(rate) - rate * sum(taus).
double exponential_log_likelihood(std::span<const double> taus, double rate);

/// Pools every gap of each class and fits its rate.
ArrivalModel class_rates(const LabeledDataset& ds);

/// Kolmogorov-Smirnov distance between the sample and Exp(rate).
double ks_statistic(std::span<const double> taus, double rate);

/// Cramer-von Mises omega^2 = 1/(12n) + sum ((2i-1)/(2n) - F(tau_(i)))^2.
double cvm_statistic(std::span<const double> taus, double rate);

/// Mean squared gap prediction error once p of n packets have been seen.
///
/// Both tails hold the n-p gaps that are still in the future at packet p
/// (gap i sits between packets i and i+1, so the window is tau_p .. tau_{n-1}).
/// Requires n > p and tails of exactly n-p entries.
double mse_arrival(std::span<const double> true_tail, std::span<const double> predicted_tail, int p,
                   int n);

struct FitReport {
  std::string label;
  std::size_t n = 0;
  double rate = 0.0;
  double ks = 0.0;
  double cvm = 0.0;
};

/// Per-class rate plus KS/CvM of the pooled gaps against the fitted law.
std::vector<FitReport> goodness_of_fit(const LabeledDataset& ds);

}  // namespace flowstop
