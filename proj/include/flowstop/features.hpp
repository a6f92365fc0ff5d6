#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "flowstop/errors.hpp"
#include "flowstop/traffic.hpp"

namespace flowstop {

/// The twelve per-sequence statistics, in the fixed V1..V12 order.
enum class FeatureFunction : int {
  kMean = 0,
  kMedian,
  kMedAD,
  kStd,
  kSkewness,
  kKurtosis,
  kMax,
  kMin,
  kMeanSquare,
  kRms,
  kPearsonSkewness,
  kMeanAbsDev,
};

inline constexpr int kNumFunctions = 12;
inline constexpr int kNumFeatures = 2 * kNumFunctions;

enum class Stream : int { kSize = 0, kInterArrival = 1 };

/// 1-based feature id. 1..12 are the functions over packet sizes, 13..24 the
/// same functions over inter-arrival gaps.
struct FeatureId {
  int index = 1;

  static FeatureId from_zero_based(int i) { return FeatureId{i + 1}; }
  [[nodiscard]] int zero_based() const { return index - 1; }
  [[nodiscard]] FeatureFunction function() const {
    return static_cast<FeatureFunction>((index - 1) % kNumFunctions);
  }
  [[nodiscard]] Stream stream() const {
    return index <= kNumFunctions ? Stream::kSize : Stream::kInterArrival;
  }
  [[nodiscard]] bool valid() const { return index >= 1 && index <= kNumFeatures; }
};

std::string_view function_name(FeatureFunction fn);
/// Column name used in CSV headers, e.g. "mean_size" or "mad_iat".
std::string feature_name(FeatureId id);
const std::array<std::string, kNumFeatures>& feature_names();

template <typename Scalar>
using FeatureVector = Eigen::Matrix<Scalar, kNumFeatures, 1>;
using FeatureRow = FeatureVector<double>;

namespace detail {

template <typename Scalar>
Scalar median_inplace(std::vector<Scalar>& v) {
  const std::size_t n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  const Scalar upper = *mid;
  if (n % 2 == 1) return upper;
  const Scalar lower = *std::max_element(v.begin(), mid);
  return (lower + upper) / Scalar(2);
}

template <typename Scalar>
Scalar mean(std::span<const Scalar> x) {
  Scalar sum(0);
  for (const Scalar v : x) sum += v;
  return sum / static_cast<Scalar>(x.size());
}

template <typename Scalar>
bool is_constant(std::span<const Scalar> x) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  return *lo == *hi;
}

// Sample standard deviation (N-1 denominator).
template <typename Scalar>
Scalar sample_std(std::span<const Scalar> x, Scalar mu) {
  Scalar ss(0);
  for (const Scalar v : x) ss += (v - mu) * (v - mu);
  return std::sqrt(ss / static_cast<Scalar>(x.size() - 1));
}

// (1/N) sum ((x - mean)/sigma)^power with the N-1 sigma; 0 when sigma vanishes.
template <typename Scalar>
Scalar standardized_moment(std::span<const Scalar> x, int power) {
  if (is_constant(x)) return Scalar(0);
  const Scalar mu = mean(x);
  const Scalar sigma = sample_std(x, mu);
  if (!(sigma > Scalar(0))) return Scalar(0);
  Scalar acc(0);
  for (const Scalar v : x) {
    const Scalar z = (v - mu) / sigma;
    acc += power == 3 ? z * z * z : z * z * z * z;
  }
  return acc / static_cast<Scalar>(x.size());
}

inline bool needs_two_samples(FeatureFunction fn) {
  return fn == FeatureFunction::kStd || fn == FeatureFunction::kSkewness ||
         fn == FeatureFunction::kKurtosis || fn == FeatureFunction::kPearsonSkewness;
}

}  // namespace detail

/// Evaluates one statistic over `samples`.
///
/// Follows the formulas literally: STD uses the N-1 denominator, the third and
/// fourth standardized moments use 1/N over that STD, and an even-length median
/// is the midpoint of the two central order statistics. Skewness, kurtosis and
/// Pearson skewness are 0 for a zero-spread sample.
template <typename Scalar>
Scalar compute_feature(FeatureFunction fn, std::span<const Scalar> samples) {
  if (samples.empty()) throw ValidationError("feature input must be non-empty");
  if (detail::needs_two_samples(fn) && samples.size() < 2) {
    throw ValidationError("feature needs at least two samples");
  }
  const auto n = static_cast<Scalar>(samples.size());
  switch (fn) {
    case FeatureFunction::kMean:
      return detail::mean(samples);
    case FeatureFunction::kMedian: {
      std::vector<Scalar> v(samples.begin(), samples.end());
      return detail::median_inplace(v);
    }
    case FeatureFunction::kMedAD: {
      std::vector<Scalar> v(samples.begin(), samples.end());
      const Scalar med = detail::median_inplace(v);
      for (std::size_t i = 0; i < samples.size(); ++i) v[i] = std::abs(samples[i] - med);
      return detail::median_inplace(v);
    }
    case FeatureFunction::kStd:
      if (detail::is_constant(samples)) return Scalar(0);
      return detail::sample_std(samples, detail::mean(samples));
    case FeatureFunction::kSkewness:
      return detail::standardized_moment(samples, 3);
    case FeatureFunction::kKurtosis:
      return detail::standardized_moment(samples, 4);
    case FeatureFunction::kMax:
      return *std::max_element(samples.begin(), samples.end());
    case FeatureFunction::kMin:
      return *std::min_element(samples.begin(), samples.end());
    case FeatureFunction::kMeanSquare:
    case FeatureFunction::kRms: {
      Scalar ms(0);
      for (const Scalar v : samples) ms += v * v;
      ms /= n;
      return fn == FeatureFunction::kRms ? std::sqrt(ms) : ms;
    }
    case FeatureFunction::kPearsonSkewness: {
      if (detail::is_constant(samples)) return Scalar(0);
      const Scalar mu = detail::mean(samples);
      const Scalar sigma = detail::sample_std(samples, mu);
      if (!(sigma > Scalar(0))) return Scalar(0);
      std::vector<Scalar> v(samples.begin(), samples.end());
      return Scalar(3) * (mu - detail::median_inplace(v)) / sigma;
    }
    case FeatureFunction::kMeanAbsDev: {
      if (detail::is_constant(samples)) return Scalar(0);
      const Scalar mu = detail::mean(samples);
      Scalar acc(0);
      for (const Scalar v : samples) acc += std::abs(v - mu);
      return acc / n;
    }
  }
  throw InvariantError("unknown feature function");
}

/// All 24 features of a prefix: V1..V12 over sizes, then V1..V12 over gaps.
FeatureRow feature_row(std::span<const double> sizes, std::span<const double> inter_arrivals);
FeatureRow feature_row(const Trace& prefix);

/// Computes only the features flagged in `mask` (others are left at 0). Each
/// selected feature is evaluated independently, so the cost scales with the
/// number of selected features.
FeatureRow feature_row_selected(const Trace& prefix, const std::array<bool, kNumFeatures>& mask);

struct DesignMatrix {
  Eigen::MatrixXd X;        // m x 24
  std::vector<int> labels;  // class indices into the dataset alphabet
};

/// Row i is the feature row of trace i's j-packet prefix.
DesignMatrix design_matrix(const LabeledDataset& ds, int j);

/// Mean computation time per statistic (microseconds).
struct FeatureCostProfile {
  std::array<double, kNumFunctions> micros{};
  int sample_size = 100;
  int reps = 0;  // 0 for the built-in reference table

  /// Reference timings measured at N = 100 on the original capture platform.
  static FeatureCostProfile reference();
  [[nodiscard]] double cost(FeatureFunction fn) const { return micros[static_cast<int>(fn)]; }
  [[nodiscard]] double cost(FeatureId id) const { return cost(id.function()); }
  /// Per-feature costs for all 24 columns (size and gap copies share a cost).
  [[nodiscard]] Eigen::VectorXd column_costs() const;
  void validate() const;
};

/// Times every statistic over a random sample of `sample_size` values.
/// The reps calls are split into ten batches; the reported value is the median
/// of the batch means. Requires reps >= 100.
FeatureCostProfile profile_feature_costs(int reps, int sample_size, std::uint64_t seed);

/// Wall time (microseconds, min over `trials`) to featurize every prefix with
/// the given mask.
double time_feature_generation(const std::vector<Trace>& prefixes,
                               const std::array<bool, kNumFeatures>& mask, int trials);

}  // namespace flowstop
