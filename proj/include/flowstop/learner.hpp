#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "flowstop/arrival.hpp"
#include "flowstop/features.hpp"
#include "flowstop/traffic.hpp"

namespace flowstop {

inline constexpr int kFormatVersion = 1;

struct SolverConfig {
  double relative_tolerance = 1e-6;
  int max_iterations = 1000;
  double initial_step = 1.0;
  double backtrack_factor = 0.5;
  // Keep the per-iteration objective values (tests and diagnostics only).
  bool record_objective = false;
};

/// Z-score parameters fitted on a training design matrix. Columns whose spread
/// is zero are flagged constant and standardize to 0.
struct Standardization {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
  std::vector<bool> constant;

  static Standardization fit(const Eigen::Ref<const Eigen::MatrixXd>& X);
  [[nodiscard]] Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& row) const;
  [[nodiscard]] Eigen::MatrixXd apply_rows(const Eigen::Ref<const Eigen::MatrixXd>& X) const;
};

/// Penalties lambda_i = lambda0 * c_i / mean(c) for the 24 feature columns.
Eigen::VectorXd penalty_weights(const FeatureCostProfile& costs, double lambda0);

namespace logistic {

/// Mean binary cross-entropy of sigmoid(X w + b) against 0/1 targets.
double smooth_loss(const Eigen::Ref<const Eigen::MatrixXd>& X,
                   const Eigen::Ref<const Eigen::VectorXd>& targets,
                   const Eigen::Ref<const Eigen::VectorXd>& w, double b);

/// Gradient of `smooth_loss`; the last entry is d/db.
Eigen::VectorXd smooth_gradient(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                const Eigen::Ref<const Eigen::VectorXd>& targets,
                                const Eigen::Ref<const Eigen::VectorXd>& w, double b);

struct BinaryFit {
  Eigen::VectorXd w;
  double b = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective;  // filled when SolverConfig::record_objective
};

/// Minimizes smooth_loss + sum_i lambda_i |w_i| by proximal gradient descent
/// with backtracking. Coordinates listed in `frozen` stay at zero.
BinaryFit fit_l1_logistic(const Eigen::Ref<const Eigen::MatrixXd>& X,
                          const Eigen::Ref<const Eigen::VectorXd>& targets,
                          const Eigen::Ref<const Eigen::VectorXd>& lambda,
                          const std::vector<bool>& frozen, const SolverConfig& cfg);

}  // namespace logistic

/// One-vs-all classifier for a single prefix length.
struct SubsetModel {
  int j = 0;
  int num_classes = 0;
  // num_classes x 25: 24 feature weights on standardized inputs, then intercept.
  Eigen::MatrixXd weights;
  Standardization standardization;
  Eigen::VectorXd lambda;
  std::vector<int> selected_features;  // zero-based, sorted
  // Per-class objective traces; empty unless recorded. Not serialized.
  std::vector<std::vector<double>> objective_history;

  [[nodiscard]] Eigen::VectorXd raw_scores(const Eigen::Ref<const Eigen::VectorXd>& standardized) const;
  [[nodiscard]] std::array<bool, kNumFeatures> selection_mask() const;
};

/// Turns per-class logits into sigmoid scores normalized to sum to one.
Eigen::VectorXd normalized_class_probabilities(const Eigen::Ref<const Eigen::VectorXd>& logits);

SubsetModel train_subset(const Eigen::Ref<const Eigen::MatrixXd>& X, std::span<const int> labels,
                         int num_classes, const FeatureCostProfile& costs, double lambda0,
                         const SolverConfig& cfg = {});

Eigen::VectorXd predict_proba(const SubsetModel& model, const Eigen::Ref<const Eigen::VectorXd>& row);
Eigen::VectorXd predict_proba_standardized(const SubsetModel& model,
                                           const Eigen::Ref<const Eigen::VectorXd>& standardized);
/// Argmax class (lowest index on ties).
int predict_label(const SubsetModel& model, const Eigen::Ref<const Eigen::VectorXd>& row);

/// Per-row expected misclassification 1 - P(true class | row) under 0/1 loss.
Eigen::VectorXd expected_train_cost(const SubsetModel& model,
                                    const Eigen::Ref<const Eigen::MatrixXd>& X,
                                    std::span<const int> labels);

struct Metrics {
  int num_classes = 0;
  Eigen::MatrixXi confusion;  // rows = true, columns = predicted
  double accuracy = 0.0;
  Eigen::VectorXd precision;
  Eigen::VectorXd recall;
  Eigen::VectorXd f_measure;
  Eigen::VectorXd false_discovery_rate;
  Eigen::VectorXd false_negative_rate;
  Eigen::VectorXi support;

  [[nodiscard]] double macro_f_measure() const { return f_measure.mean(); }
};

/// Confusion-matrix metrics. Precision of a never-predicted class and recall of
/// an absent class are reported as 0.
Metrics compute_metrics(std::span<const int> predicted, std::span<const int> truth, int num_classes);

/// Trained model for one grid point plus everything delay-aware prediction
/// needs about the training set at that prefix length.
struct CascadeEntry {
  SubsetModel model;
  Eigen::VectorXd expected_cost;   // E^j per training trace
  Eigen::MatrixXd train_features;  // standardized design matrix
  std::vector<int> train_labels;
};

struct CascadeModel {
  int format_version = kFormatVersion;
  std::vector<std::string> class_alphabet;
  int trace_length = 0;
  int min_prefix = kMinPrefix;
  double lambda0 = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> grid;
  std::map<int, CascadeEntry> subsets;
  ArrivalModel arrivals;

  [[nodiscard]] int num_classes() const { return static_cast<int>(class_alphabet.size()); }
  [[nodiscard]] int num_train() const;
  /// Largest trained prefix length <= k, or 0 when k precedes the grid.
  [[nodiscard]] int grid_floor(int k) const;
  [[nodiscard]] const CascadeEntry& at(int j) const;
  void validate() const;
};

/// j_min, j_min+stride, ..., capped at n; n itself is always included.
std::vector<int> default_grid(int n, int stride = 5, int j_min = kMinPrefix);

struct CascadeOptions {
  double lambda0 = 1e-3;
  FeatureCostProfile costs = FeatureCostProfile::reference();
  SolverConfig solver;
  std::uint64_t seed = 0;
  int threads = 1;
};

CascadeModel train_cascade(const LabeledDataset& ds, const std::vector<int>& grid,
                           const CascadeOptions& options);

struct LambdaSelection {
  double lambda0 = 0.0;
  std::vector<double> candidates;
  std::vector<double> validation_accuracy;
};

/// log-spaced 1e-4 .. 1, six points.
std::vector<double> default_lambda_grid();

/// Picks lambda0 by mean validation accuracy over (up to 8 evenly spaced)
/// grid points. Ties go to the larger penalty.
LambdaSelection select_lambda0(const LabeledDataset& train, const LabeledDataset& validation,
                               const std::vector<int>& grid, const std::vector<double>& candidates,
                               const CascadeOptions& options);

Metrics evaluate(const CascadeModel& cascade, const LabeledDataset& ds, int j);

}  // namespace flowstop
