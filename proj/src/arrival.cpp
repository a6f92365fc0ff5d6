#include "flowstop/arrival.hpp"

#include <algorithm>
#include <cmath>

#include "flowstop/errors.hpp"

namespace flowstop {

namespace {

std::vector<double> sorted_copy(std::span<const double> taus) {
  std::vector<double> v(taus.begin(), taus.end());
  std::sort(v.begin(), v.end());
  return v;
}

void check_gof_inputs(std::span<const double> taus, double rate) {
  if (taus.empty()) throw ValidationError("goodness-of-fit needs at least one sample");
  if (!(rate > 0.0)) throw ValidationError("rate must be positive");
}

}  // namespace

void ArrivalModel::validate() const {
  if (rates.size() != sample_counts.size()) throw ValidationError("arrival model size mismatch");
  for (double r : rates) {
    if (!(r > 0.0) || !std::isfinite(r)) throw ValidationError("arrival rates must be positive");
  }
}

double fit_exponential_rate(std::span<const double> taus) {
  if (taus.empty()) throw ValidationError("cannot fit an exponential rate to no samples");
  double sum = 0.0;
  for (double t : taus) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw ValidationError("inter-arrivals must be >= 0");
    sum += std::max(t, kMinInterArrival);
  }
  return static_cast<double>(taus.size()) / sum;
}

double exponential_log_likelihood(std::span<const double> taus, double rate) {
  double sum = 0.0;
  for (double t : taus) sum += std::max(t, kMinInterArrival);
  return static_cast<double>(taus.size()) * std::log(rate) - rate * sum;
}

ArrivalModel class_rates(const LabeledDataset& ds) {
  const std::size_t classes = ds.class_alphabet.size();
  std::vector<std::vector<double>> pooled(classes);
  for (const auto& t : ds.traces) {
    auto& pool = pooled[static_cast<std::size_t>(ds.class_index(t.label))];
    pool.insert(pool.end(), t.inter_arrivals.begin(), t.inter_arrivals.end());
  }
  ArrivalModel model;
  for (std::size_t c = 0; c < classes; ++c) {
    if (pooled[c].empty()) {
      throw ValidationError("class '" + ds.class_alphabet[c] + "' has no inter-arrivals");
    }
    // Sorted so the floating-point sum does not depend on trace order.
    std::sort(pooled[c].begin(), pooled[c].end());
    model.rates.push_back(fit_exponential_rate(pooled[c]));
    model.sample_counts.push_back(pooled[c].size());
  }
  return model;
}

double ks_statistic(std::span<const double> taus, double rate) {
  check_gof_inputs(taus, rate);
  const auto v = sorted_copy(taus);
  const auto n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double F = -std::expm1(-rate * v[i]);
    const double above = static_cast<double>(i + 1) / n - F;
    const double below = F - static_cast<double>(i) / n;
    d = std::max({d, std::abs(above), std::abs(below)});
  }
  return d;
}

double cvm_statistic(std::span<const double> taus, double rate) {
  check_gof_inputs(taus, rate);
  const auto v = sorted_copy(taus);
  const auto n = static_cast<double>(v.size());
  double w2 = 1.0 / (12.0 * n);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double F = -std::expm1(-rate * v[i]);
    const double r = (2.0 * static_cast<double>(i + 1) - 1.0) / (2.0 * n) - F;
    w2 += r * r;
  }
  return w2;
}

double mse_arrival(std::span<const double> true_tail, std::span<const double> predicted_tail, int p,
                   int n) {
  if (n <= p) throw ValidationError("MSE window needs n > p");
  const auto window = static_cast<std::size_t>(n - p);
  if (true_tail.size() != window || predicted_tail.size() != window) {
    throw ValidationError("MSE tails must hold exactly n - p gaps");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    const double e = true_tail[i] - predicted_tail[i];
    acc += e * e;
  }
  return acc / static_cast<double>(window);
}

std::vector<FitReport> goodness_of_fit(const LabeledDataset& ds) {
  std::vector<std::vector<double>> pooled(ds.class_alphabet.size());
  for (const auto& t : ds.traces) {
    auto& dst = pooled[static_cast<std::size_t>(ds.class_index(t.label))];
    dst.insert(dst.end(), t.inter_arrivals.begin(), t.inter_arrivals.end());
  }
  std::vector<FitReport> out;
  for (std::size_t c = 0; c < pooled.size(); ++c) {
    if (pooled[c].empty()) continue;
    FitReport r;
    r.label = ds.class_alphabet[c];
    r.n = pooled[c].size();
    r.rate = fit_exponential_rate(pooled[c]);
    r.ks = ks_statistic(pooled[c], r.rate);
    r.cvm = cvm_statistic(pooled[c], r.rate);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace flowstop
