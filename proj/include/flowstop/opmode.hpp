#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "flowstop/features.hpp"
#include "flowstop/learner.hpp"
#include "flowstop/traffic.hpp"

namespace flowstop {

/// Ordered operation-mode labels (unique, at least two).
struct ModeAlphabet {
  std::vector<std::string> labels;

  static ModeAlphabet standard();  // Standby, Hover, Forward, Backward, Up, Down, Right, Left
  void validate() const;
};

inline constexpr int kDefaultModePrefix = 300;

/// Synthetic mode generators: each mode mixes three packet-size components in
/// its own proportions; all modes share `rate`, so only the size statistics
/// are informative.
std::vector<ClassGeneratorSpec> mode_generator_specs(const ModeAlphabet& alphabet, double rate = 120.0);

/// One-vs-all logistic regression on the j-prefix design matrix of a mode dataset.
SubsetModel train_opmode_lr(const LabeledDataset& ds, int j, double lambda0,
                            const FeatureCostProfile& costs = FeatureCostProfile::reference(),
                            const SolverConfig& solver = {});

struct ForestConfig {
  int trees = 100;
  int max_depth = 20;
  int features_per_split = 5;  // ceil(sqrt(24))
  bool bootstrap = true;
  int min_samples_split = 2;
  int threads = 1;
};

/// Flat binary tree. Internal nodes send x[feature] <= threshold to `left`.
struct DecisionTree {
  struct Node {
    int feature = -1;  // -1 for a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::vector<double> class_counts;  // leaves only
  };
  std::vector<Node> nodes;

  [[nodiscard]] int predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  [[nodiscard]] int depth() const;
};

struct ForestModel {
  int num_classes = 0;
  int num_features = 0;
  ForestConfig config;
  std::uint64_t seed = 0;
  std::vector<DecisionTree> trees;
  Eigen::VectorXd importance;  // normalized mean decrease in Gini impurity
  double oob_accuracy = 0.0;
  std::size_t oob_count = 0;

  [[nodiscard]] int predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

/// Random forest of Gini trees on an explicit matrix (any column count).
ForestModel train_forest(const Eigen::Ref<const Eigen::MatrixXd>& X, std::span<const int> labels,
                         int num_classes, const ForestConfig& cfg, std::uint64_t seed);

/// Random forest on the j-prefix design matrix of a mode dataset.
ForestModel train_random_forest(const LabeledDataset& ds, int j, const ForestConfig& cfg,
                                std::uint64_t seed);

/// The forest's Gini importance vector.
Eigen::VectorXd rf_feature_importance(const ForestModel& forest);

/// Majority vote over `votes` per-tree predictions (lowest class on ties).
int majority_vote(std::span<const int> votes, int num_classes);

/// Mean held-out accuracy of each candidate under repeated k-fold cross
/// validation; `best` is the first candidate with the highest mean.
struct TuningResult {
  std::vector<double> candidates;
  std::vector<double> mean_accuracy;
  double best = 0.0;
};

/// Stratified folds: each class's rows are shuffled and dealt round-robin.
std::vector<std::vector<int>> cv_folds(std::span<const int> labels, int folds, std::uint64_t seed);

TuningResult tune_opmode_lambda0(const DesignMatrix& dm, int num_classes, const std::vector<double>& candidates,
                                 int folds = 10, int repeats = 3, std::uint64_t seed = 0,
                                 const FeatureCostProfile& costs = FeatureCostProfile::reference());

TuningResult tune_forest_depth(const DesignMatrix& dm, int num_classes, const std::vector<int>& depths,
                               const ForestConfig& base, int folds = 10, int repeats = 3, std::uint64_t seed = 0);

/// Confusion matrix with per-class precision/FDR (columns), recall/FNR (rows)
/// and overall accuracy. Labels are matched by name against `alphabet`.
Metrics mode_confusion(std::span<const std::string> predicted, std::span<const std::string> truth,
                       const ModeAlphabet& alphabet);

}  // namespace flowstop
