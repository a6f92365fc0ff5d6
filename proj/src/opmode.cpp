#include "flowstop/opmode.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <memory>
#include <numeric>
#include <random>
#include <thread>

#include "flowstop/errors.hpp"

namespace flowstop {

namespace {

double gini(const std::vector<double>& counts, double n) {
  if (n <= 0.0) return 0.0;
  double s = 0.0;
  for (double c : counts) s += (c / n) * (c / n);
  return 1.0 - s;
}

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::Ref<const Eigen::MatrixXd>& X, std::span<const int> labels, int num_classes,
              const ForestConfig& cfg, std::uint64_t seed)
      : X_(X), labels_(labels), num_classes_(num_classes), cfg_(cfg), rng_(seed),
        gains_(Eigen::VectorXd::Zero(X.cols())) {}

  DecisionTree build(std::vector<int> rows) {
    DecisionTree tree;
    grow(tree, rows, 0);
    return tree;
  }

  [[nodiscard]] const Eigen::VectorXd& gains() const { return gains_; }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
  };

  std::vector<double> count(const std::vector<int>& rows) const {
    std::vector<double> c(static_cast<std::size_t>(num_classes_), 0.0);
    for (int r : rows) c[static_cast<std::size_t>(labels_[static_cast<std::size_t>(r)])] += 1.0;
    return c;
  }

  std::vector<int> candidate_features() {
    std::vector<int> all(static_cast<std::size_t>(X_.cols()));
    std::iota(all.begin(), all.end(), 0);
    const auto k = static_cast<std::size_t>(std::clamp<Eigen::Index>(cfg_.features_per_split, 1, X_.cols()));
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
      std::swap(all[i], all[pick(rng_)]);
    }
    all.resize(k);
    std::sort(all.begin(), all.end());
    return all;
  }

  Split best_split(const std::vector<int>& rows, const std::vector<double>& parent) {
    const auto n = static_cast<double>(rows.size());
    const double parent_impurity = gini(parent, n) * n;
    Split best;
    std::vector<std::pair<double, int>> column(rows.size());
    for (int f : candidate_features()) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        column[i] = {X_(rows[i], f), labels_[static_cast<std::size_t>(rows[i])]};
      }
      std::sort(column.begin(), column.end());
      std::vector<double> left(static_cast<std::size_t>(num_classes_), 0.0);
      std::vector<double> right = parent;
      for (std::size_t i = 0; i + 1 < column.size(); ++i) {
        left[static_cast<std::size_t>(column[i].second)] += 1.0;
        right[static_cast<std::size_t>(column[i].second)] -= 1.0;
        if (column[i].first == column[i + 1].first) continue;
        const auto nl = static_cast<double>(i + 1);
        const double nr = n - nl;
        const double gain = parent_impurity - nl * gini(left, nl) - nr * gini(right, nr);
        if (gain > best.gain + 1e-12) {
          double threshold = 0.5 * (column[i].first + column[i + 1].first);
          if (!(threshold < column[i + 1].first)) threshold = column[i].first;
          best = {f, threshold, gain};
        }
      }
    }
    return best;
  }

  int grow(DecisionTree& tree, const std::vector<int>& rows, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    const auto counts = count(rows);
    const bool pure = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }) <= 1;
    Split split;
    if (!pure && depth < cfg_.max_depth && static_cast<int>(rows.size()) >= cfg_.min_samples_split) {
      split = best_split(rows, counts);
    }
    if (split.feature < 0) {
      tree.nodes[static_cast<std::size_t>(id)].class_counts = counts;
      return id;
    }
    gains_(split.feature) += split.gain;
    std::vector<int> left_rows;
    std::vector<int> right_rows;
    for (int r : rows) (X_(r, split.feature) <= split.threshold ? left_rows : right_rows).push_back(r);
    const int left = grow(tree, left_rows, depth + 1);
    const int right = grow(tree, right_rows, depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = left;
    node.right = right;
    return id;
  }

  const Eigen::Ref<const Eigen::MatrixXd>& X_;
  std::span<const int> labels_;
  int num_classes_;
  const ForestConfig& cfg_;
  std::mt19937_64 rng_;
  Eigen::VectorXd gains_;
};

}  // namespace

ModeAlphabet ModeAlphabet::standard() {
  return {{"Standby", "Hover", "Forward", "Backward", "Up", "Down", "Right", "Left"}};
}

void ModeAlphabet::validate() const {
  if (labels.size() < 2) throw ValidationError("mode alphabet needs at least two labels");
  auto sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ValidationError("mode labels must be unique");
  }
}

std::vector<ClassGeneratorSpec> mode_generator_specs(const ModeAlphabet& alphabet, double rate) {
  alphabet.validate();
  static const std::vector<std::array<double, 3>> mixes = {
      {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.5, 0.5, 0},
      {0.5, 0, 0.5}, {0, 0.5, 0.5}, {0.34, 0.33, 0.33}, {0.7, 0.15, 0.15}};
  if (alphabet.labels.size() > mixes.size()) throw ValidationError("at most 8 synthetic modes");
  constexpr double centers[3] = {100, 600, 1400};
  std::vector<ClassGeneratorSpec> out;
  for (std::size_t c = 0; c < alphabet.labels.size(); ++c) {
    GaussianMixtureSizes sizes;
    for (std::size_t k = 0; k < 3; ++k) {
      if (mixes[c][k] == 0) continue;
      sizes.means.push_back(centers[k]);
      sizes.stds.push_back(20);
      sizes.weights.push_back(mixes[c][k]);
    }
    out.push_back({alphabet.labels[c], sizes, rate, 70 + c});
  }
  return out;
}

SubsetModel train_opmode_lr(const LabeledDataset& ds, int j, double lambda0,
                            const FeatureCostProfile& costs, const SolverConfig& solver) {
  ModeAlphabet{ds.class_alphabet}.validate();
  const DesignMatrix dm = design_matrix(ds, j);
  SubsetModel model =
      train_subset(dm.X, dm.labels, static_cast<int>(ds.class_alphabet.size()), costs, lambda0, solver);
  model.j = j;
  return model;
}

int DecisionTree::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    i = static_cast<std::size_t>(x(nodes[i].feature) <= nodes[i].threshold ? nodes[i].left : nodes[i].right);
  }
  const auto& c = nodes[i].class_counts;
  return static_cast<int>(std::max_element(c.begin(), c.end()) - c.begin());
}

int DecisionTree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    deepest = std::max(deepest, d[i]);
    if (nodes[i].feature >= 0) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return deepest;
}

int majority_vote(std::span<const int> votes, int num_classes) {
  std::vector<int> tally(static_cast<std::size_t>(num_classes), 0);
  for (int v : votes) ++tally[static_cast<std::size_t>(v)];
  return static_cast<int>(std::max_element(tally.begin(), tally.end()) - tally.begin());
}

int ForestModel::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  std::vector<int> votes;
  votes.reserve(trees.size());
  for (const auto& t : trees) votes.push_back(t.predict(x));
  return majority_vote(votes, num_classes);
}

ForestModel train_forest(const Eigen::Ref<const Eigen::MatrixXd>& X, std::span<const int> labels,
                         int num_classes, const ForestConfig& cfg, std::uint64_t seed) {
  if (static_cast<std::size_t>(X.rows()) != labels.size() || X.rows() == 0) {
    throw ValidationError("label/row mismatch");
  }
  if (!X.allFinite()) throw ValidationError("design matrix has non-finite entries");
  if (cfg.trees < 1 || cfg.max_depth < 0 || cfg.features_per_split < 1) {
    throw ValidationError("invalid forest configuration");
  }
  std::vector<int> present(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw ValidationError("label index out of range");
    present[static_cast<std::size_t>(y)] = 1;
  }
  if (std::accumulate(present.begin(), present.end(), 0) < 2) {
    throw ValidationError("training data contains a single class");
  }

  const auto m = static_cast<std::size_t>(X.rows());
  ForestModel forest;
  forest.num_classes = num_classes;
  forest.num_features = static_cast<int>(X.cols());
  forest.config = cfg;
  forest.seed = seed;
  forest.trees.resize(static_cast<std::size_t>(cfg.trees));
  std::vector<Eigen::VectorXd> tree_gains(static_cast<std::size_t>(cfg.trees));
  std::vector<std::vector<char>> in_bag(static_cast<std::size_t>(cfg.trees), std::vector<char>(m, 0));

  auto build = [&](std::size_t t) {
    std::mt19937_64 rng(mix_seed(seed, t));
    std::vector<int> rows(m);
    if (cfg.bootstrap) {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(m) - 1);
      for (auto& r : rows) r = pick(rng);
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    for (int r : rows) in_bag[t][static_cast<std::size_t>(r)] = 1;
    TreeBuilder builder(X, labels, num_classes, cfg, rng());
    forest.trees[t] = builder.build(std::move(rows));
    tree_gains[t] = builder.gains();
  };

  const auto workers = static_cast<std::size_t>(std::max(1, cfg.threads));
  if (workers == 1) {
    for (std::size_t t = 0; t < forest.trees.size(); ++t) build(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t t = next++; t < forest.trees.size(); t = next++) build(t);
      });
    }
    for (auto& th : pool) th.join();
  }

  forest.importance = Eigen::VectorXd::Zero(X.cols());
  for (const auto& g : tree_gains) {
    const double total = g.sum();
    if (total > 0.0) forest.importance += g / total;
  }
  const double total = forest.importance.sum();
  if (total > 0.0) forest.importance /= total;

  std::size_t correct = 0;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<int> votes;
    for (std::size_t t = 0; t < forest.trees.size(); ++t) {
      if (!in_bag[t][i]) votes.push_back(forest.trees[t].predict(X.row(static_cast<Eigen::Index>(i)).transpose()));
    }
    if (votes.empty()) continue;
    ++forest.oob_count;
    if (majority_vote(votes, num_classes) == labels[i]) ++correct;
  }
  forest.oob_accuracy =
      forest.oob_count > 0 ? static_cast<double>(correct) / static_cast<double>(forest.oob_count) : 0.0;
  return forest;
}

ForestModel train_random_forest(const LabeledDataset& ds, int j, const ForestConfig& cfg,
                                std::uint64_t seed) {
  const DesignMatrix dm = design_matrix(ds, j);
  return train_forest(dm.X, dm.labels, static_cast<int>(ds.class_alphabet.size()), cfg, seed);
}

Eigen::VectorXd rf_feature_importance(const ForestModel& forest) { return forest.importance; }

std::vector<std::vector<int>> cv_folds(std::span<const int> labels, int folds, std::uint64_t seed) {
  const auto rows = static_cast<int>(labels.size());
  if (folds < 2 || folds > rows) throw ValidationError("need 2 <= folds <= rows");
  std::vector<int> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return labels[static_cast<std::size_t>(a)] < labels[static_cast<std::size_t>(b)];
  });
  std::vector<std::vector<int>> out(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < order.size(); ++i) out[i % out.size()].push_back(order[i]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

namespace {

// fit(train rows, labels) returns a predictor over held-out rows.
template <class Fit>
double cv_accuracy(const DesignMatrix& dm, int folds, int repeats, std::uint64_t seed, Fit fit) {
  const auto rows = static_cast<int>(dm.X.rows());
  double hits = 0, total = 0;
  for (int r = 0; r < repeats; ++r) {
    const auto parts = cv_folds(dm.labels, folds, mix_seed(seed, static_cast<std::uint64_t>(r)));
    for (const auto& held : parts) {
      std::vector<bool> is_held(static_cast<std::size_t>(rows), false);
      for (int i : held) is_held[static_cast<std::size_t>(i)] = true;
      std::vector<int> keep;
      for (int i = 0; i < rows; ++i) {
        if (!is_held[static_cast<std::size_t>(i)]) keep.push_back(i);
      }
      Eigen::MatrixXd Xt(static_cast<Eigen::Index>(keep.size()), dm.X.cols());
      std::vector<int> yt;
      for (std::size_t k = 0; k < keep.size(); ++k) {
        Xt.row(static_cast<Eigen::Index>(k)) = dm.X.row(keep[k]);
        yt.push_back(dm.labels[static_cast<std::size_t>(keep[k])]);
      }
      const auto predict = fit(Xt, yt);
      for (int i : held) {
        hits += predict(dm.X.row(i).transpose()) == dm.labels[static_cast<std::size_t>(i)];
        total += 1;
      }
    }
  }
  return hits / total;
}

TuningResult pick_best(std::vector<double> candidates, std::vector<double> acc) {
  TuningResult t{std::move(candidates), std::move(acc), 0.0};
  const auto best = std::max_element(t.mean_accuracy.begin(), t.mean_accuracy.end());
  t.best = t.candidates[static_cast<std::size_t>(best - t.mean_accuracy.begin())];
  return t;
}

}  // namespace

TuningResult tune_opmode_lambda0(const DesignMatrix& dm, int num_classes, const std::vector<double>& candidates,
                                 int folds, int repeats, std::uint64_t seed, const FeatureCostProfile& costs) {
  if (candidates.empty()) throw ValidationError("no lambda0 candidates");
  std::vector<double> acc;
  for (double lambda0 : candidates) {
    acc.push_back(cv_accuracy(dm, folds, repeats, seed, [&](const Eigen::MatrixXd& X, const std::vector<int>& y) {
      auto m = std::make_shared<SubsetModel>(train_subset(X, y, num_classes, costs, lambda0));
      return [m](const Eigen::VectorXd& row) { return predict_label(*m, row); };
    }));
  }
  return pick_best(candidates, std::move(acc));
}

TuningResult tune_forest_depth(const DesignMatrix& dm, int num_classes, const std::vector<int>& depths,
                               const ForestConfig& base, int folds, int repeats, std::uint64_t seed) {
  if (depths.empty()) throw ValidationError("no depth candidates");
  std::vector<double> acc;
  for (int depth : depths) {
    ForestConfig cfg = base;
    cfg.max_depth = depth;
    acc.push_back(cv_accuracy(dm, folds, repeats, seed, [&](const Eigen::MatrixXd& X, const std::vector<int>& y) {
      auto f = std::make_shared<ForestModel>(train_forest(X, y, num_classes, cfg, seed));
      return [f](const Eigen::VectorXd& row) { return f->predict(row); };
    }));
  }
  return pick_best(std::vector<double>(depths.begin(), depths.end()), std::move(acc));
}

Metrics mode_confusion(std::span<const std::string> predicted, std::span<const std::string> truth,
                       const ModeAlphabet& alphabet) {
  alphabet.validate();
  if (predicted.size() != truth.size()) throw ValidationError("prediction/label length mismatch");
  const auto index = [&](const std::string& s) {
    const auto it = std::find(alphabet.labels.begin(), alphabet.labels.end(), s);
    if (it == alphabet.labels.end()) throw ValidationError("unknown mode label: " + s);
    return static_cast<int>(it - alphabet.labels.begin());
  };
  std::vector<int> p;
  std::vector<int> t;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    p.push_back(index(predicted[i]));
    t.push_back(index(truth[i]));
  }
  return compute_metrics(p, t, static_cast<int>(alphabet.labels.size()));
}

}  // namespace flowstop
