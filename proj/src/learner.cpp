#include "flowstop/learner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "flowstop/errors.hpp"

namespace flowstop {

namespace {

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

void check_finite(const Eigen::Ref<const Eigen::MatrixXd>& X) {
  if (!X.allFinite()) throw ValidationError("design matrix has non-finite entries");
}

std::vector<int> remap_labels(const LabeledDataset& ds, const std::vector<std::string>& alphabet) {
  std::vector<int> out;
  out.reserve(ds.traces.size());
  for (const auto& t : ds.traces) {
    const auto it = std::find(alphabet.begin(), alphabet.end(), t.label);
    if (it == alphabet.end()) throw ValidationError("label not in model alphabet: " + t.label);
    out.push_back(static_cast<int>(it - alphabet.begin()));
  }
  return out;
}

template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

Standardization Standardization::fit(const Eigen::Ref<const Eigen::MatrixXd>& X) {
  if (X.rows() < 1) throw ValidationError("cannot standardize an empty matrix");
  Standardization s;
  const auto m = static_cast<double>(X.rows());
  s.mean = X.colwise().mean().transpose();
  s.scale.resize(X.cols());
  s.constant.assign(static_cast<std::size_t>(X.cols()), false);
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    const double var = (X.col(c).array() - s.mean(c)).square().sum() / m;
    const double sd = std::sqrt(var);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(s.mean(c))))) {
      s.constant[static_cast<std::size_t>(c)] = true;
      s.scale(c) = 1.0;
    } else {
      s.scale(c) = sd;
    }
  }
  return s;
}

Eigen::VectorXd Standardization::apply(const Eigen::Ref<const Eigen::VectorXd>& row) const {
  Eigen::VectorXd out = (row - mean).cwiseQuotient(scale);
  for (std::size_t c = 0; c < constant.size(); ++c) {
    if (constant[c]) out(static_cast<Eigen::Index>(c)) = 0.0;
  }
  return out;
}

Eigen::MatrixXd Standardization::apply_rows(const Eigen::Ref<const Eigen::MatrixXd>& X) const {
  Eigen::MatrixXd out = (X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  for (std::size_t c = 0; c < constant.size(); ++c) {
    if (constant[c]) out.col(static_cast<Eigen::Index>(c)).setZero();
  }
  return out;
}

Eigen::VectorXd penalty_weights(const FeatureCostProfile& costs, double lambda0) {
  costs.validate();
  if (!(lambda0 >= 0.0)) throw ValidationError("lambda0 must be >= 0");
  const Eigen::VectorXd c = costs.column_costs();
  return lambda0 * c / c.mean();
}

namespace logistic {

double smooth_loss(const Eigen::Ref<const Eigen::MatrixXd>& X,
                   const Eigen::Ref<const Eigen::VectorXd>& targets,
                   const Eigen::Ref<const Eigen::VectorXd>& w, double b) {
  const Eigen::VectorXd z = (X * w).array() + b;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) acc += softplus(z(i)) - targets(i) * z(i);
  return acc / static_cast<double>(z.size());
}

Eigen::VectorXd smooth_gradient(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                const Eigen::Ref<const Eigen::VectorXd>& targets,
                                const Eigen::Ref<const Eigen::VectorXd>& w, double b) {
  const Eigen::VectorXd z = (X * w).array() + b;
  Eigen::VectorXd r(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) r(i) = sigmoid(z(i)) - targets(i);
  const double m = static_cast<double>(z.size());
  Eigen::VectorXd g(X.cols() + 1);
  g.head(X.cols()).noalias() = X.transpose() * r / m;
  g(X.cols()) = r.sum() / m;
  return g;
}

BinaryFit fit_l1_logistic(const Eigen::Ref<const Eigen::MatrixXd>& X,
                          const Eigen::Ref<const Eigen::VectorXd>& targets,
                          const Eigen::Ref<const Eigen::VectorXd>& lambda,
                          const std::vector<bool>& frozen, const SolverConfig& cfg) {
  const Eigen::Index d = X.cols();
  if (lambda.size() != d) throw ValidationError("penalty vector does not match feature count");
  if (targets.size() != X.rows() || X.rows() == 0) throw ValidationError("target/row mismatch");

  const auto penalty = [&](const Eigen::VectorXd& w) { return (lambda.array() * w.array().abs()).sum(); };

  // Start from the zero-weight optimum: intercept at the positive-class log-odds.
  const double frac = std::clamp(targets.mean(), 1e-12, 1.0 - 1e-12);
  BinaryFit fit;
  fit.w = Eigen::VectorXd::Zero(d);
  fit.b = std::log(frac / (1.0 - frac));

  double loss = smooth_loss(X, targets, fit.w, fit.b);
  double objective = loss + penalty(fit.w);
  if (cfg.record_objective) fit.objective.push_back(objective);

  double step = cfg.initial_step;
  Eigen::VectorXd w_next(d);
  for (int it = 0; it < cfg.max_iterations; ++it) {
    const Eigen::VectorXd grad = smooth_gradient(X, targets, fit.w, fit.b);
    double b_next = fit.b;
    double loss_next = loss;
    bool accepted = false;
    for (int tries = 0; tries < 200; ++tries) {
      for (Eigen::Index i = 0; i < d; ++i) {
        w_next(i) = frozen[static_cast<std::size_t>(i)]
                        ? 0.0
                        : soft_threshold(fit.w(i) - step * grad(i), step * lambda(i));
      }
      b_next = fit.b - step * grad(d);
      const Eigen::VectorXd dw = w_next - fit.w;
      const double db = b_next - fit.b;
      loss_next = smooth_loss(X, targets, w_next, b_next);
      const double model = loss + grad.head(d).dot(dw) + grad(d) * db +
                           (dw.squaredNorm() + db * db) / (2.0 * step);
      if (loss_next <= model + 1e-15 * std::abs(loss)) {
        accepted = true;
        break;
      }
      step *= cfg.backtrack_factor;
    }
    fit.iterations = it + 1;
    if (!accepted) {
      fit.converged = true;
      break;
    }
    const double objective_next = loss_next + penalty(w_next);
    if (objective_next > objective) {
      // Roundoff-level stall: keep the current iterate.
      fit.converged = true;
      break;
    }
    const double decrease = objective - objective_next;
    fit.w = w_next;
    fit.b = b_next;
    loss = loss_next;
    if (cfg.record_objective) fit.objective.push_back(objective_next);
    const double scale = std::max(std::abs(objective), std::numeric_limits<double>::min());
    objective = objective_next;
    if (decrease <= cfg.relative_tolerance * scale) {
      fit.converged = true;
      break;
    }
    step /= cfg.backtrack_factor;
  }
  return fit;
}

}  // namespace logistic

Eigen::VectorXd SubsetModel::raw_scores(const Eigen::Ref<const Eigen::VectorXd>& standardized) const {
  return weights.leftCols(kNumFeatures) * standardized + weights.col(kNumFeatures);
}

std::array<bool, kNumFeatures> SubsetModel::selection_mask() const {
  std::array<bool, kNumFeatures> mask{};
  for (int f : selected_features) mask[static_cast<std::size_t>(f)] = true;
  return mask;
}

Eigen::VectorXd normalized_class_probabilities(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  // Normalize in log space: log sigmoid(z) = -softplus(-z).
  Eigen::VectorXd log_scores(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) log_scores(i) = -softplus(-logits(i));
  const double top = log_scores.maxCoeff();
  Eigen::VectorXd p = (log_scores.array() - top).exp();
  return p / p.sum();
}

SubsetModel train_subset(const Eigen::Ref<const Eigen::MatrixXd>& X, std::span<const int> labels,
                         int num_classes, const FeatureCostProfile& costs, double lambda0,
                         const SolverConfig& cfg) {
  if (X.cols() != kNumFeatures) throw ValidationError("design matrix must have 24 columns");
  if (static_cast<std::size_t>(X.rows()) != labels.size()) throw ValidationError("label/row mismatch");
  check_finite(X);
  if (num_classes < 2) throw ValidationError("need at least two classes");
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw ValidationError("label index out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  const auto present = std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; });
  if (present < 2) throw ValidationError("training data contains a single class");
  for (int c : counts) {
    if (c < 2) throw ValidationError("every class needs at least two training rows");
  }

  SubsetModel model;
  model.num_classes = num_classes;
  model.standardization = Standardization::fit(X);
  model.lambda = penalty_weights(costs, lambda0);
  model.weights = Eigen::MatrixXd::Zero(num_classes, kNumFeatures + 1);
  const Eigen::MatrixXd Xs = model.standardization.apply_rows(X);

  Eigen::VectorXd targets(X.rows());
  for (int cls = 0; cls < num_classes; ++cls) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      targets(i) = labels[static_cast<std::size_t>(i)] == cls ? 1.0 : 0.0;
    }
    auto fit = logistic::fit_l1_logistic(Xs, targets, model.lambda, model.standardization.constant, cfg);
    model.weights.row(cls).head(kNumFeatures) = fit.w.transpose();
    model.weights(cls, kNumFeatures) = fit.b;
    if (cfg.record_objective) model.objective_history.push_back(std::move(fit.objective));
  }
  for (int f = 0; f < kNumFeatures; ++f) {
    if ((model.weights.col(f).array() != 0.0).any()) model.selected_features.push_back(f);
  }
  return model;
}

Eigen::VectorXd predict_proba_standardized(const SubsetModel& model,
                                           const Eigen::Ref<const Eigen::VectorXd>& standardized) {
  return normalized_class_probabilities(model.raw_scores(standardized));
}

Eigen::VectorXd predict_proba(const SubsetModel& model, const Eigen::Ref<const Eigen::VectorXd>& row) {
  if (!row.allFinite()) throw ValidationError("feature row has non-finite entries");
  return predict_proba_standardized(model, model.standardization.apply(row));
}

int predict_label(const SubsetModel& model, const Eigen::Ref<const Eigen::VectorXd>& row) {
  Eigen::Index best = 0;
  predict_proba(model, row).maxCoeff(&best);
  return static_cast<int>(best);
}

Eigen::VectorXd expected_train_cost(const SubsetModel& model,
                                    const Eigen::Ref<const Eigen::MatrixXd>& X,
                                    std::span<const int> labels) {
  if (static_cast<std::size_t>(X.rows()) != labels.size()) throw ValidationError("label/row mismatch");
  Eigen::VectorXd E(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= model.num_classes) throw ValidationError("label outside model alphabet");
    const Eigen::VectorXd p = predict_proba(model, X.row(i).transpose());
    // Mass on the wrong classes; summed explicitly so E stays in [0, 1].
    double wrong = 0.0;
    for (Eigen::Index c = 0; c < p.size(); ++c) {
      if (c != y) wrong += p(c);
    }
    E(i) = std::clamp(wrong, 0.0, 1.0);
  }
  return E;
}

Metrics compute_metrics(std::span<const int> predicted, std::span<const int> truth, int num_classes) {
  if (predicted.size() != truth.size()) throw ValidationError("prediction/label length mismatch");
  if (num_classes < 1) throw ValidationError("need at least one class");
  Metrics m;
  m.num_classes = num_classes;
  m.confusion = Eigen::MatrixXi::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    const int p = predicted[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes) {
      throw ValidationError("label outside alphabet");
    }
    ++m.confusion(t, p);
  }
  m.support = m.confusion.rowwise().sum();
  const Eigen::VectorXi predicted_count = m.confusion.colwise().sum().transpose();
  const int total = m.confusion.sum();
  m.accuracy = total > 0 ? static_cast<double>(m.confusion.trace()) / total : 0.0;
  m.precision.resize(num_classes);
  m.recall.resize(num_classes);
  m.f_measure.resize(num_classes);
  m.false_discovery_rate.resize(num_classes);
  m.false_negative_rate.resize(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    const double tp = m.confusion(c, c);
    const int col = predicted_count(c);
    const int row = m.support(c);
    m.precision(c) = col > 0 ? tp / col : 0.0;
    m.recall(c) = row > 0 ? tp / row : 0.0;
    m.false_discovery_rate(c) = col > 0 ? 1.0 - m.precision(c) : 0.0;
    m.false_negative_rate(c) = row > 0 ? 1.0 - m.recall(c) : 0.0;
    const double pr = m.precision(c) + m.recall(c);
    m.f_measure(c) = pr > 0.0 ? 2.0 * m.precision(c) * m.recall(c) / pr : 0.0;
  }
  return m;
}

int CascadeModel::num_train() const {
  return subsets.empty() ? 0 : static_cast<int>(subsets.begin()->second.train_labels.size());
}

int CascadeModel::grid_floor(int k) const {
  const auto it = std::upper_bound(grid.begin(), grid.end(), k);
  return it == grid.begin() ? 0 : *std::prev(it);
}

const CascadeEntry& CascadeModel::at(int j) const {
  const auto it = subsets.find(j);
  if (it == subsets.end()) throw RangeError("prefix length " + std::to_string(j) + " not trained");
  return it->second;
}

void CascadeModel::validate() const {
  if (format_version != kFormatVersion) throw ArtifactError("unsupported model format version");
  if (class_alphabet.size() < 2) throw ArtifactError("model needs at least two classes");
  if (grid.empty()) throw ArtifactError("model grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i > 0 && grid[i] <= grid[i - 1]) throw ArtifactError("model grid must be strictly increasing");
    if (grid[i] < min_prefix || grid[i] > trace_length) throw ArtifactError("grid point out of range");
    const auto it = subsets.find(grid[i]);
    if (it == subsets.end()) throw ArtifactError("grid point without a trained subset");
    const auto& e = it->second;
    if (e.model.num_classes != num_classes() || e.model.weights.rows() != num_classes() ||
        e.model.weights.cols() != kNumFeatures + 1) {
      throw ArtifactError("subset weight matrix has the wrong shape");
    }
    if (e.expected_cost.size() != e.train_features.rows() ||
        static_cast<std::size_t>(e.train_features.rows()) != e.train_labels.size() ||
        e.train_features.cols() != kNumFeatures) {
      throw ArtifactError("subset training tables are inconsistent");
    }
    if ((e.expected_cost.array() < 0.0).any() || (e.expected_cost.array() > 1.0).any()) {
      throw ArtifactError("expected cost outside [0, 1]");
    }
  }
  if (subsets.size() != grid.size()) throw ArtifactError("subsets not on the grid");
  if (arrivals.rates.size() != class_alphabet.size()) throw ArtifactError("arrival rates missing");
  arrivals.validate();
}

std::vector<int> default_grid(int n, int stride, int j_min) {
  if (stride < 1) throw ValidationError("grid stride must be >= 1");
  if (n < j_min) throw ValidationError("trace length shorter than the minimum prefix");
  std::vector<int> grid;
  for (int j = j_min; j <= n; j += stride) grid.push_back(j);
  if (grid.back() != n) grid.push_back(n);
  return grid;
}

CascadeModel train_cascade(const LabeledDataset& ds, const std::vector<int>& grid,
                           const CascadeOptions& options) {
  ds.validate();
  const int n = ds.trace_length();
  if (grid.empty()) throw ValidationError("empty training grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < kMinPrefix || grid[i] > n) throw RangeError("grid point outside [j_min, n]");
    if (i > 0 && grid[i] <= grid[i - 1]) throw ValidationError("grid must be strictly increasing");
  }

  CascadeModel cascade;
  cascade.class_alphabet = ds.class_alphabet;
  cascade.trace_length = n;
  cascade.lambda0 = options.lambda0;
  cascade.seed = options.seed;
  cascade.grid = grid;
  cascade.arrivals = class_rates(ds);

  std::vector<CascadeEntry> entries(grid.size());
  parallel_for(grid.size(), options.threads, [&](std::size_t g) {
    const DesignMatrix dm = design_matrix(ds, grid[g]);
    CascadeEntry e;
    e.model = train_subset(dm.X, dm.labels, cascade.num_classes(), options.costs, options.lambda0,
                           options.solver);
    e.model.j = grid[g];
    e.expected_cost = expected_train_cost(e.model, dm.X, dm.labels);
    e.train_features = e.model.standardization.apply_rows(dm.X);
    e.train_labels = dm.labels;
    entries[g] = std::move(e);
  });
  for (std::size_t g = 0; g < grid.size(); ++g) cascade.subsets.emplace(grid[g], std::move(entries[g]));
  return cascade;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 0; i < 6; ++i) grid.push_back(std::pow(10.0, -4.0 + 0.8 * i));
  return grid;
}

LambdaSelection select_lambda0(const LabeledDataset& train, const LabeledDataset& validation,
                               const std::vector<int>& grid, const std::vector<double>& candidates,
                               const CascadeOptions& options) {
  if (candidates.empty()) throw ValidationError("no lambda0 candidates");
  std::vector<int> probe;
  const std::size_t want = std::min<std::size_t>(8, grid.size());
  for (std::size_t i = 0; i < want; ++i) {
    const std::size_t idx = want == 1 ? grid.size() - 1 : i * (grid.size() - 1) / (want - 1);
    if (probe.empty() || probe.back() != grid[idx]) probe.push_back(grid[idx]);
  }

  LambdaSelection sel;
  sel.candidates = candidates;
  double best = -1.0;
  for (double lambda0 : candidates) {
    CascadeOptions opt = options;
    opt.lambda0 = lambda0;
    const CascadeModel model = train_cascade(train, probe, opt);
    double acc = 0.0;
    for (int j : probe) acc += evaluate(model, validation, j).accuracy;
    acc /= static_cast<double>(probe.size());
    sel.validation_accuracy.push_back(acc);
    if (acc >= best) {
      best = acc;
      sel.lambda0 = lambda0;
    }
  }
  return sel;
}

Metrics evaluate(const CascadeModel& cascade, const LabeledDataset& ds, int j) {
  const CascadeEntry& entry = cascade.at(j);
  const DesignMatrix dm = design_matrix(ds, j);
  const std::vector<int> truth = remap_labels(ds, cascade.class_alphabet);
  std::vector<int> predicted(truth.size());
  for (Eigen::Index i = 0; i < dm.X.rows(); ++i) {
    predicted[static_cast<std::size_t>(i)] = predict_label(entry.model, dm.X.row(i).transpose());
  }
  return compute_metrics(predicted, truth, cascade.num_classes());
}

}  // namespace flowstop
