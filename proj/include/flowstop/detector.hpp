#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "flowstop/learner.hpp"
#include "flowstop/traffic.hpp"

namespace flowstop {

struct DetectorConfig {
  double eta = 5.0;   // sigmoid sharpness of the similarity weights
  double beta = 1.0;  // delay cost per second of waiting; 0 waits for the horizon
  // Horizon of the stopping problem; 0 means the cascade's trace length.
  int horizon = 0;

  void validate() const;
};

/// Normalized sigmoid-of-closeness weights of a standardized query row against
/// every (standardized) training row. Uniform when all distances vanish.
Eigen::VectorXd similarity_weights(const Eigen::Ref<const Eigen::VectorXd>& query,
                                   const Eigen::Ref<const Eigen::MatrixXd>& train, double eta);

/// Same, against the training rows of the cascade's subset g(k).
Eigen::VectorXd similarity_weights(const Eigen::Ref<const Eigen::VectorXd>& query,
                                   const CascadeModel& cascade, int k, double eta);

/// Class of the training row nearest to a standardized query (lowest class on
/// equal distances).
int nearest_training_class(const Eigen::Ref<const Eigen::VectorXd>& standardized, const CascadeEntry& entry);

/// Similarity-weighted training expected cost at trained subset j.
double expected_misclass_cost(const Eigen::Ref<const Eigen::VectorXd>& weights,
                              const CascadeModel& cascade, int j);

/// beta * (p - k + 1) / rate: accumulated predicted gaps while waiting from k to p.
double time_cost(int k, int p, double rate, double beta);

/// Forecast total cost J(p) = C1(p) + C2(p) for p = first .. last.
struct CostCurve {
  int first = 0;
  Eigen::VectorXd misclass;  // C1 forecast
  Eigen::VectorXd delay;     // C2
  Eigen::VectorXd total;

  [[nodiscard]] int last() const { return first + static_cast<int>(total.size()) - 1; }
  /// Smallest p attaining the minimum of J.
  [[nodiscard]] int argmin() const;
};

enum class DetectionStatus { kDeferred, kDetected };

struct DetectorState {
  std::string flow_key;
  std::vector<double> sizes;
  std::vector<double> inter_arrivals;
  std::vector<std::int64_t> timestamps_us;
  int k = 0;

  // Populated once k reaches the first trained grid point.
  int subset = 0;  // g(k)
  Eigen::VectorXd features;  // standardized at subset g(k)
  Eigen::VectorXd weights;
  Eigen::VectorXd class_probabilities;
  int nearest_class = -1;
  double rate = 0.0;
  CostCurve curve;
  int projected_stop = 0;

  DetectionStatus status = DetectionStatus::kDeferred;
  int label = -1;
  double confidence = 0.0;
  int stop_packet = 0;       // p*
  double stop_time_s = 0.0;  // t_{p*} relative to the first packet
  bool forced = false;

  [[nodiscard]] bool evaluated() const { return subset > 0; }
};

/// J(p) for the state's current k under the frozen-weight forecast.
CostCurve total_cost_curve(const DetectorState& state, const CascadeModel& cascade,
                           const DetectorConfig& config);

/// Appends a packet and re-decides. Throws OrderingError for a timestamp
/// earlier than the previous packet, ValidationError when the state has already
/// decided, RangeError when the horizon is exceeded.
void step(DetectorState& state, const PacketRecord& packet, const CascadeModel& cascade,
          const DetectorConfig& config);

/// Commits to the current best label at the current packet.
void force_detection(DetectorState& state, const CascadeModel& cascade);

struct DecisionSnapshot {
  int k = 0;
  DetectionStatus status = DetectionStatus::kDeferred;
  int projected_stop = 0;
  double confidence = 0.0;
  int predicted = -1;
  CostCurve curve;
};

struct DetectionReport {
  int label = -1;
  double confidence = 0.0;
  int stop_packet = 0;
  double stop_time_s = 0.0;
  bool forced = false;
  std::vector<DecisionSnapshot> history;
};

/// Replays a flow packet by packet from its first packet until detection
/// (forced at the last packet when the flow ends first).
DetectionReport run_flow(const Trace& flow, const CascadeModel& cascade, const DetectorConfig& config,
                         bool keep_history = false);

}  // namespace flowstop
