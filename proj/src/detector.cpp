#include "flowstop/detector.hpp"

#include <cmath>
#include <map>

#include "flowstop/errors.hpp"
#include "flowstop/features.hpp"

namespace flowstop {

namespace {

Eigen::VectorXd distances_to(const Eigen::Ref<const Eigen::VectorXd>& query,
                             const Eigen::Ref<const Eigen::MatrixXd>& train) {
  if (train.cols() != query.size()) throw ValidationError("query/training dimension mismatch");
  return (train.rowwise() - query.transpose()).rowwise().norm();
}

Eigen::VectorXd weights_from_distances(const Eigen::VectorXd& d, double eta) {
  const Eigen::Index m = d.size();
  if (m == 0) throw ValidationError("no training rows to weight");
  const double mean_d = d.mean();
  if (!(mean_d > 0.0)) return Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  Eigen::VectorXd s(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double delta = (mean_d - d(i)) / mean_d;
    s(i) = 1.0 / (1.0 + std::exp(-eta * delta));
  }
  return s / s.sum();
}

int nearest_of(const Eigen::VectorXd& d, const std::vector<int>& labels) {
  int nearest = -1;
  double best = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const int cls = labels[static_cast<std::size_t>(i)];
    if (nearest < 0 || d(i) < best || (d(i) == best && cls < nearest)) {
      best = d(i);
      nearest = cls;
    }
  }
  return nearest;
}

int horizon_of(const CascadeModel& cascade, const DetectorConfig& config) {
  return config.horizon > 0 ? config.horizon : cascade.trace_length;
}

}  // namespace

void DetectorConfig::validate() const {
  if (!(eta > 0.0)) throw ValidationError("eta must be positive");
  if (!(beta >= 0.0)) throw ValidationError("beta must be >= 0");
  if (horizon < 0) throw ValidationError("horizon must be >= 0");
}

Eigen::VectorXd similarity_weights(const Eigen::Ref<const Eigen::VectorXd>& query,
                                   const Eigen::Ref<const Eigen::MatrixXd>& train, double eta) {
  if (!(eta > 0.0)) throw ValidationError("eta must be positive");
  return weights_from_distances(distances_to(query, train), eta);
}

Eigen::VectorXd similarity_weights(const Eigen::Ref<const Eigen::VectorXd>& query,
                                   const CascadeModel& cascade, int k, double eta) {
  const int j = cascade.grid_floor(k);
  if (j == 0) throw RangeError("no trained subset at or below " + std::to_string(k));
  return similarity_weights(query, cascade.at(j).train_features, eta);
}

int nearest_training_class(const Eigen::Ref<const Eigen::VectorXd>& standardized, const CascadeEntry& entry) {
  return nearest_of(distances_to(standardized, entry.train_features), entry.train_labels);
}

double expected_misclass_cost(const Eigen::Ref<const Eigen::VectorXd>& weights,
                              const CascadeModel& cascade, int j) {
  const auto& E = cascade.at(j).expected_cost;
  if (E.size() != weights.size()) throw ValidationError("weights do not match the training set");
  return weights.dot(E);
}

double time_cost(int k, int p, double rate, double beta) {
  if (p < k) throw ValidationError("time cost needs p >= k");
  if (!(rate > 0.0)) throw ValidationError("arrival rate must be positive");
  return beta * static_cast<double>(p - k + 1) / rate;
}

int CostCurve::argmin() const {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < total.size(); ++i) {
    if (total(i) < total(best)) best = i;
  }
  return first + static_cast<int>(best);
}

CostCurve total_cost_curve(const DetectorState& state, const CascadeModel& cascade,
                           const DetectorConfig& config) {
  if (state.k < cascade.min_prefix) throw ValidationError("cost curve needs k >= j_min");
  if (!state.evaluated()) throw ValidationError("state has no similarity weights yet");
  const int n = horizon_of(cascade, config);
  if (state.k > n) throw RangeError("k beyond the horizon");

  CostCurve curve;
  curve.first = state.k;
  const auto len = static_cast<Eigen::Index>(n - state.k + 1);
  curve.misclass.resize(len);
  curve.delay.resize(len);
  std::map<int, double> c1_at_subset;
  for (int p = state.k; p <= n; ++p) {
    const int g = cascade.grid_floor(std::min(p, cascade.trace_length));
    auto it = c1_at_subset.find(g);
    if (it == c1_at_subset.end()) {
      it = c1_at_subset.emplace(g, expected_misclass_cost(state.weights, cascade, g)).first;
    }
    const auto i = static_cast<Eigen::Index>(p - state.k);
    curve.misclass(i) = it->second;
    curve.delay(i) = time_cost(state.k, p, state.rate, config.beta);
  }
  curve.total = curve.misclass + curve.delay;
  return curve;
}

void force_detection(DetectorState& state, const CascadeModel& cascade) {
  (void)cascade;
  if (!state.evaluated()) throw ValidationError("cannot decide before the first trained prefix");
  Eigen::Index best = 0;
  state.confidence = state.class_probabilities.maxCoeff(&best);
  state.label = static_cast<int>(best);
  state.status = DetectionStatus::kDetected;
  state.stop_packet = state.k;
  state.stop_time_s =
      static_cast<double>(state.timestamps_us.back() - state.timestamps_us.front()) / 1e6;
}

void step(DetectorState& state, const PacketRecord& packet, const CascadeModel& cascade,
          const DetectorConfig& config) {
  if (state.status == DetectionStatus::kDetected) {
    throw ValidationError("flow '" + state.flow_key + "' has already been decided");
  }
  const int n = horizon_of(cascade, config);
  if (state.k + 1 > n) throw RangeError("flow exceeds the detection horizon");
  if (!state.timestamps_us.empty() && packet.timestamp_us < state.timestamps_us.back()) {
    throw OrderingError("packet timestamp goes backwards in flow '" + state.flow_key + "'");
  }
  if (packet.size < 1) throw ValidationError("packet size must be >= 1");

  if (!state.timestamps_us.empty()) {
    state.inter_arrivals.push_back(
        static_cast<double>(packet.timestamp_us - state.timestamps_us.back()) / 1e6);
  }
  state.sizes.push_back(static_cast<double>(packet.size));
  state.timestamps_us.push_back(packet.timestamp_us);
  state.k = static_cast<int>(state.sizes.size());

  if (state.k < cascade.min_prefix) return;
  const int g = cascade.grid_floor(std::min(state.k, cascade.trace_length));
  if (g == 0) return;

  const CascadeEntry& entry = cascade.at(g);
  const FeatureRow row = feature_row(std::span<const double>(state.sizes),
                                     std::span<const double>(state.inter_arrivals));
  state.subset = g;
  state.features = entry.model.standardization.apply(row);
  const Eigen::VectorXd d = distances_to(state.features, entry.train_features);
  state.weights = weights_from_distances(d, config.eta);

  state.nearest_class = nearest_of(d, entry.train_labels);
  state.rate = cascade.arrivals.rates.at(static_cast<std::size_t>(state.nearest_class));
  state.class_probabilities = predict_proba_standardized(entry.model, state.features);

  state.curve = total_cost_curve(state, cascade, config);
  // Waiting is free without a delay cost, so take the whole horizon.
  state.projected_stop = config.beta == 0.0 ? n : state.curve.argmin();
  if (state.projected_stop == state.k || state.k == n) {
    force_detection(state, cascade);
    state.forced = state.projected_stop != state.k;
  }
}

DetectionReport run_flow(const Trace& flow, const CascadeModel& cascade, const DetectorConfig& config,
                         bool keep_history) {
  config.validate();
  flow.validate();
  if (flow.length() < cascade.min_prefix) throw ValidationError("flow shorter than j_min");
  const int n = horizon_of(cascade, config);

  DetectorState state;
  DetectionReport report;
  std::int64_t ts = 0;
  const int last = std::min(flow.length(), n);
  for (int i = 0; i < last; ++i) {
    if (i > 0) ts += std::llround(flow.inter_arrivals[static_cast<std::size_t>(i - 1)] * 1e6);
    step(state, PacketRecord{"", ts, static_cast<std::int64_t>(flow.sizes[static_cast<std::size_t>(i)])},
         cascade, config);
    if (keep_history && state.evaluated()) {
      Eigen::Index top = 0;
      const double conf = state.class_probabilities.maxCoeff(&top);
      report.history.push_back(
          {state.k, state.status, state.projected_stop, conf, static_cast<int>(top), state.curve});
    }
    if (state.status == DetectionStatus::kDetected) break;
  }
  if (state.status != DetectionStatus::kDetected) {
    force_detection(state, cascade);
    state.forced = true;
  }
  report.label = state.label;
  report.confidence = state.confidence;
  report.stop_packet = state.stop_packet;
  report.stop_time_s = state.stop_time_s;
  report.forced = state.forced;
  return report;
}

}  // namespace flowstop
