#include "flowstop/features.hpp"

#include <chrono>
#include <random>

namespace flowstop {

namespace {

constexpr std::array<std::string_view, kNumFunctions> kFunctionNames = {
    "mean", "median", "medad", "std", "skewness", "kurtosis",
    "max",  "min",    "ms",    "rms", "ps",       "mad"};

// Keeps the optimizer from discarding timed calls.
volatile double g_sink = 0.0;

}  // namespace

std::string_view function_name(FeatureFunction fn) {
  return kFunctionNames[static_cast<std::size_t>(fn)];
}

std::string feature_name(FeatureId id) {
  if (!id.valid()) throw RangeError("feature id out of range: " + std::to_string(id.index));
  return std::string(function_name(id.function())) +
         (id.stream() == Stream::kSize ? "_size" : "_iat");
}

const std::array<std::string, kNumFeatures>& feature_names() {
  static const auto names = [] {
    std::array<std::string, kNumFeatures> out;
    for (int i = 0; i < kNumFeatures; ++i) out[i] = feature_name(FeatureId::from_zero_based(i));
    return out;
  }();
  return names;
}

FeatureRow feature_row(std::span<const double> sizes, std::span<const double> inter_arrivals) {
  FeatureRow row;
  for (int f = 0; f < kNumFunctions; ++f) {
    const auto fn = static_cast<FeatureFunction>(f);
    row(f) = compute_feature(fn, sizes);
    row(f + kNumFunctions) = compute_feature(fn, inter_arrivals);
  }
  return row;
}

FeatureRow feature_row(const Trace& prefix) {
  if (prefix.length() < kMinPrefix) {
    throw RangeError("prefix shorter than " + std::to_string(kMinPrefix) + " packets");
  }
  return feature_row(std::span<const double>(prefix.sizes),
                     std::span<const double>(prefix.inter_arrivals));
}

FeatureRow feature_row_selected(const Trace& prefix, const std::array<bool, kNumFeatures>& mask) {
  FeatureRow row = FeatureRow::Zero();
  const std::span<const double> sizes(prefix.sizes);
  const std::span<const double> gaps(prefix.inter_arrivals);
  for (int i = 0; i < kNumFeatures; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const auto id = FeatureId::from_zero_based(i);
    row(i) = compute_feature(id.function(), id.stream() == Stream::kSize ? sizes : gaps);
  }
  return row;
}

DesignMatrix design_matrix(const LabeledDataset& ds, int j) {
  const int n = ds.trace_length();
  if (j < kMinPrefix || j > n) {
    throw RangeError("subset length " + std::to_string(j) + " outside [" +
                     std::to_string(kMinPrefix) + ", " + std::to_string(n) + "]");
  }
  DesignMatrix out;
  out.X.resize(static_cast<Eigen::Index>(ds.traces.size()), kNumFeatures);
  out.labels = ds.label_indices();
  for (std::size_t i = 0; i < ds.traces.size(); ++i) {
    const auto& t = ds.traces[i];
    const std::span<const double> sizes(t.sizes.data(), static_cast<std::size_t>(j));
    const std::span<const double> gaps(t.inter_arrivals.data(), static_cast<std::size_t>(j - 1));
    out.X.row(static_cast<Eigen::Index>(i)) = feature_row(sizes, gaps).transpose();
  }
  return out;
}

FeatureCostProfile FeatureCostProfile::reference() {
  FeatureCostProfile p;
  p.micros = {0.672, 4.365, 8.346, 1.608, 14.917, 14.095,
              0.464, 0.652, 1.147, 1.273, 8.011,  2.531};
  p.sample_size = 100;
  p.reps = 0;
  return p;
}

Eigen::VectorXd FeatureCostProfile::column_costs() const {
  Eigen::VectorXd c(kNumFeatures);
  for (int i = 0; i < kNumFeatures; ++i) c(i) = cost(FeatureId::from_zero_based(i));
  return c;
}

void FeatureCostProfile::validate() const {
  for (double m : micros) {
    if (!(m > 0.0) || !std::isfinite(m)) throw ValidationError("feature costs must be positive");
  }
}

FeatureCostProfile profile_feature_costs(int reps, int sample_size, std::uint64_t seed) {
  if (reps < 100) throw ValidationError("profiling needs reps >= 100");
  if (sample_size < 2) throw ValidationError("profiling needs sample_size >= 2");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> value(40.0, 1500.0);
  std::vector<double> sample(static_cast<std::size_t>(sample_size));
  for (auto& v : sample) v = value(rng);
  const std::span<const double> view(sample);

  constexpr int kBatches = 10;
  const int per_batch = reps / kBatches;

  FeatureCostProfile profile;
  profile.sample_size = sample_size;
  profile.reps = reps;
  for (int f = 0; f < kNumFunctions; ++f) {
    const auto fn = static_cast<FeatureFunction>(f);
    std::array<double, kBatches> batch_means{};
    for (int b = 0; b < kBatches; ++b) {
      const auto start = std::chrono::steady_clock::now();
      for (int r = 0; r < per_batch; ++r) g_sink = g_sink + compute_feature(fn, view);
      const auto stop = std::chrono::steady_clock::now();
      batch_means[static_cast<std::size_t>(b)] =
          std::chrono::duration<double, std::micro>(stop - start).count() / per_batch;
    }
    std::nth_element(batch_means.begin(), batch_means.begin() + kBatches / 2, batch_means.end());
    const double upper = batch_means[kBatches / 2];
    const double lower = *std::max_element(batch_means.begin(), batch_means.begin() + kBatches / 2);
    // Clock granularity can round a very cheap batch to zero.
    profile.micros[static_cast<std::size_t>(f)] = std::max(0.5 * (lower + upper), 1e-6);
  }
  return profile;
}

double time_feature_generation(const std::vector<Trace>& prefixes,
                               const std::array<bool, kNumFeatures>& mask, int trials) {
  double best = std::numeric_limits<double>::infinity();
  for (int t = 0; t < std::max(trials, 1); ++t) {
    const auto start = std::chrono::steady_clock::now();
    for (const auto& p : prefixes) g_sink = g_sink + feature_row_selected(p, mask).sum();
    const auto stop = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::micro>(stop - start).count());
  }
  return best;
}

}  // namespace flowstop
