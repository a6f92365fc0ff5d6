#include <doctest.h>

#include <cmath>
#include <random>

#include "flowstop/errors.hpp"
#include "flowstop/learner.hpp"
#include "test_support.hpp"

using namespace flowstop;

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Standardized-space model with the given logit intercepts and no weights.
SubsetModel intercept_model(const std::vector<double>& logits) {
  SubsetModel m;
  m.num_classes = static_cast<int>(logits.size());
  m.weights = Eigen::MatrixXd::Zero(m.num_classes, kNumFeatures + 1);
  for (int c = 0; c < m.num_classes; ++c) m.weights(c, kNumFeatures) = logits[static_cast<std::size_t>(c)];
  m.standardization.mean = Eigen::VectorXd::Zero(kNumFeatures);
  m.standardization.scale = Eigen::VectorXd::Ones(kNumFeatures);
  m.standardization.constant.assign(kNumFeatures, false);
  return m;
}

struct Instance {
  Eigen::MatrixXd X;
  std::vector<int> y;
};

// Two classes; column `informative` is shifted by +-gap, the rest is noise.
Instance two_class(std::size_t rows, int informative, double gap, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Instance out{Eigen::MatrixXd(static_cast<Eigen::Index>(rows), kNumFeatures), {}};
  for (std::size_t i = 0; i < rows; ++i) {
    const int cls = static_cast<int>(i % 2);
    out.y.push_back(cls);
    for (int f = 0; f < kNumFeatures; ++f) out.X(static_cast<Eigen::Index>(i), f) = noise(rng);
    out.X(static_cast<Eigen::Index>(i), informative) += cls ? gap : -gap;
  }
  return out;
}

double train_accuracy(const SubsetModel& m, const Instance& inst) {
  int hit = 0;
  for (Eigen::Index i = 0; i < inst.X.rows(); ++i) {
    hit += predict_label(m, inst.X.row(i).transpose()) == inst.y[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(hit) / static_cast<double>(inst.X.rows());
}

}  // namespace

TEST_CASE("standardization flags constant columns") {
  Eigen::MatrixXd X(3, 2);
  X << 1, 5, 2, 5, 3, 5;
  const auto s = Standardization::fit(X);
  CHECK(s.mean(0) == doctest::Approx(2.0));
  CHECK_FALSE(s.constant[0]);
  CHECK(s.constant[1]);
  const Eigen::MatrixXd Z = s.apply_rows(X);
  CHECK(Z.col(1).isZero());
  CHECK(Z.col(0).mean() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(Z.col(0).squaredNorm() / 3.0 == doctest::Approx(1.0));
}

TEST_CASE("penalty weights are proportional to cost") {
  const auto costs = FeatureCostProfile::reference();
  const Eigen::VectorXd lambda = penalty_weights(costs, 2.0);
  REQUIRE(lambda.size() == kNumFeatures);
  CHECK(lambda.mean() == doctest::Approx(2.0));
  CHECK(lambda(4) / lambda(0) == doctest::Approx(14.917 / 0.672));
  CHECK(penalty_weights(costs, 0.0).isZero());
  CHECK_THROWS_AS(penalty_weights(costs, -1.0), ValidationError);
}

TEST_CASE("smooth gradient matches central finite differences") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> g(0.0, 1.0);
  std::bernoulli_distribution coin(0.4);
  const double h = 1e-5;
  for (int inst = 0; inst < 20; ++inst) {
    const Eigen::Index rows = 10 + inst, cols = 3 + inst % 5;
    Eigen::MatrixXd X(rows, cols);
    Eigen::VectorXd t(rows), w(cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index c = 0; c < cols; ++c) X(i, c) = g(rng);
      t(i) = coin(rng) ? 1.0 : 0.0;
    }
    for (Eigen::Index c = 0; c < cols; ++c) w(c) = g(rng);
    const double b = g(rng);
    const Eigen::VectorXd grad = logistic::smooth_gradient(X, t, w, b);
    REQUIRE(grad.size() == cols + 1);
    for (Eigen::Index c = 0; c <= cols; ++c) {
      double fd;
      if (c < cols) {
        Eigen::VectorXd wp = w, wm = w;
        wp(c) += h;
        wm(c) -= h;
        fd = (logistic::smooth_loss(X, t, wp, b) - logistic::smooth_loss(X, t, wm, b)) / (2 * h);
      } else {
        fd = (logistic::smooth_loss(X, t, w, b + h) - logistic::smooth_loss(X, t, w, b - h)) / (2 * h);
      }
      CHECK(testing::close_rel(grad(c), fd, 1e-5, 1e-6));
    }
  }
}

TEST_CASE("proximal solver satisfies the soft-threshold optimality conditions") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int inst = 0; inst < 10; ++inst) {
    const Eigen::Index rows = 200, cols = 8;
    Eigen::MatrixXd X(rows, cols);
    Eigen::VectorXd t(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index c = 0; c < cols; ++c) X(i, c) = g(rng);
      t(i) = g(rng) + X(i, 0) - 0.5 * X(i, 1) > 0 ? 1.0 : 0.0;
    }
    Eigen::VectorXd lambda(cols);
    for (Eigen::Index c = 0; c < cols; ++c) lambda(c) = 0.005 * (1 + c);
    // Run to a tight optimum; the default stopping rule is a relative-decrease heuristic.
    SolverConfig cfg;
    cfg.relative_tolerance = 1e-12;
    cfg.max_iterations = 100'000;
    cfg.record_objective = true;
    const auto fit = logistic::fit_l1_logistic(X, t, lambda, std::vector<bool>(cols, false), cfg);
    CHECK(fit.converged);
    const Eigen::VectorXd grad = logistic::smooth_gradient(X, t, fit.w, fit.b);
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (fit.w(c) == 0.0) {
        CHECK(std::abs(grad(c)) <= lambda(c) + 1e-4);
      } else {
        CHECK(std::abs(grad(c) + lambda(c) * (fit.w(c) > 0 ? 1.0 : -1.0)) <= 1e-4);
      }
    }
    CHECK(std::abs(grad(cols)) <= 1e-4);
    for (std::size_t i = 1; i < fit.objective.size(); ++i) CHECK(fit.objective[i] <= fit.objective[i - 1]);
  }
}

TEST_CASE("frozen coordinates stay at zero") {
  const auto inst = two_class(60, 3, 2.0, 4);
  std::vector<bool> frozen(kNumFeatures, false);
  frozen[3] = true;
  Eigen::VectorXd t(inst.X.rows());
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = inst.y[static_cast<std::size_t>(i)];
  const auto fit = logistic::fit_l1_logistic(inst.X, t, Eigen::VectorXd::Zero(kNumFeatures), frozen, {});
  CHECK(fit.w(3) == 0.0);
}

TEST_CASE("unpenalized training separates separable data") {
  const auto inst = two_class(200, 7, 3.5, 1);
  const auto model = train_subset(inst.X, inst.y, 2, FeatureCostProfile::reference(), 0.0);
  CHECK(train_accuracy(model, inst) == 1.0);
  CHECK(model.weights.rows() == 2);
  CHECK(model.weights.cols() == kNumFeatures + 1);
}

TEST_CASE("huge penalty zeroes every weight and leaves log-odds intercepts") {
  const auto ds = generate_synthetic(testing::toy_specs(), 20, 30, 6);
  auto dm = design_matrix(ds, 30);
  // Unbalance the classes so that the log-odds differ.
  dm.X.conservativeResize(50, Eigen::NoChange);
  dm.labels.resize(50);
  const auto model = train_subset(dm.X, dm.labels, 3, FeatureCostProfile::reference(), 1e6);
  CHECK(model.weights.leftCols(kNumFeatures).isZero());
  CHECK(model.selected_features.empty());
  std::vector<int> count(3, 0);
  for (int y : dm.labels) ++count[static_cast<std::size_t>(y)];
  for (int c = 0; c < 3; ++c) {
    const double frac = count[static_cast<std::size_t>(c)] / 50.0;
    CHECK(model.weights(c, kNumFeatures) == doctest::Approx(std::log(frac / (1 - frac))).epsilon(1e-9));
  }
}

TEST_CASE("objective is non-increasing in every per-class solve") {
  const auto ds = generate_synthetic(testing::toy_specs(), 40, 50, 12);
  const auto dm = design_matrix(ds, 50);
  SolverConfig cfg;
  cfg.record_objective = true;
  const auto model = train_subset(dm.X, dm.labels, 3, FeatureCostProfile::reference(), 1e-3, cfg);
  REQUIRE(model.objective_history.size() == 3);
  for (const auto& h : model.objective_history) {
    REQUIRE(h.size() >= 2);
    for (std::size_t i = 1; i < h.size(); ++i) CHECK(h[i] <= h[i - 1]);
  }
}

TEST_CASE("costly duplicate is dropped before its cheap twin") {
  // Columns 0 (mean, cheap) and 4 (skewness, expensive) carry the same signal.
  std::mt19937_64 rng(9);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Eigen::Index rows = 300;
  Eigen::MatrixXd X(rows, kNumFeatures);
  std::vector<int> y;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const int cls = static_cast<int>(i % 2);
    y.push_back(cls);
    for (int f = 0; f < kNumFeatures; ++f) X(i, f) = noise(rng);
    const double signal = (cls ? 1.0 : -1.0) + noise(rng);
    X(i, 0) = signal + 0.01 * noise(rng);
    X(i, 4) = signal + 0.01 * noise(rng);
  }
  const auto costs = FeatureCostProfile::reference();
  double zero_cheap = -1, zero_costly = -1;
  for (double lambda0 = 1e-4; lambda0 < 10; lambda0 *= 1.25) {
    const auto m = train_subset(X, y, 2, costs, lambda0);
    const bool cheap = (m.weights.col(0).array() != 0).any();
    const bool costly = (m.weights.col(4).array() != 0).any();
    if (!costly && zero_costly < 0) zero_costly = lambda0;
    if (!cheap && zero_cheap < 0) zero_cheap = lambda0;
  }
  REQUIRE(zero_costly > 0);
  REQUIRE(zero_cheap > 0);
  CHECK(zero_costly < zero_cheap);
}

TEST_CASE("train_subset rejects bad input") {
  const auto inst = two_class(20, 0, 1.0, 2);
  const auto costs = FeatureCostProfile::reference();
  std::vector<int> one_class(20, 0);
  CHECK_THROWS_AS(train_subset(inst.X, one_class, 2, costs, 0.1), ValidationError);
  Eigen::MatrixXd bad = inst.X;
  bad(3, 3) = std::nan("");
  CHECK_THROWS_AS(train_subset(bad, inst.y, 2, costs, 0.1), ValidationError);
  CHECK_THROWS_AS(train_subset(inst.X, inst.y, 2, costs, -0.1), ValidationError);
}

TEST_CASE("class probabilities from one-vs-all scores") {
  const Eigen::VectorXd row = Eigen::VectorXd::Zero(kNumFeatures);
  const Eigen::VectorXd uniform = predict_proba(intercept_model({0.3, 0.3, 0.3, 0.3}), row);
  for (Eigen::Index c = 0; c < 4; ++c) CHECK(uniform(c) == doctest::Approx(0.25).epsilon(1e-15));

  const double l9 = std::log(0.9 / 0.1);
  const Eigen::VectorXd two = predict_proba(intercept_model({l9, -l9}), row);
  CHECK(two(0) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(two(1) == doctest::Approx(0.1).epsilon(1e-12));

  // Extreme logits do not underflow to a 0/0.
  const Eigen::VectorXd far = normalized_class_probabilities(Eigen::Vector2d(-900, -1000));
  CHECK(far.allFinite());
  CHECK(far.sum() == doctest::Approx(1.0));
}

TEST_CASE("probabilities sum to one and argmax ignores a common shift") {
  const auto ds = generate_synthetic(testing::toy_specs(), 30, 40, 21);
  const auto dm = design_matrix(ds, 40);
  const auto model = train_subset(dm.X, dm.labels, 3, FeatureCostProfile::reference(), 1e-3);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int r = 0; r < 10'000; ++r) {
    Eigen::VectorXd z(kNumFeatures);
    for (auto& v : z) v = g(rng);
    const Eigen::VectorXd p = predict_proba_standardized(model, z);
    REQUIRE(std::abs(p.sum() - 1.0) <= 1e-12);
    REQUIRE((p.array() >= 0).all());
    Eigen::Index a = 0, b = 0;
    p.maxCoeff(&a);
    const Eigen::VectorXd scores = model.raw_scores(z);
    normalized_class_probabilities(scores.array() + 1.7).maxCoeff(&b);
    REQUIRE(a == b);
  }
}

TEST_CASE("expected training cost") {
  const Eigen::MatrixXd X = Eigen::MatrixXd::Zero(2, kNumFeatures);
  // A model that is certain of class 0.
  const auto sure = intercept_model({40.0, -40.0});
  const std::vector<int> zero = {0, 0};
  const Eigen::VectorXd e0 = expected_train_cost(sure, X, zero);
  CHECK(e0(0) == doctest::Approx(0.0).epsilon(1e-12));

  const auto flat = intercept_model(std::vector<double>(9, 0.0));
  const std::vector<int> lab = {4, 8};
  const Eigen::VectorXd e9 = expected_train_cost(flat, X, lab);
  CHECK(e9(0) == doctest::Approx(8.0 / 9.0).epsilon(1e-14));
  CHECK(e9(1) == doctest::Approx(8.0 / 9.0).epsilon(1e-14));

  const std::vector<int> out_of_range = {0, 9};
  CHECK_THROWS_AS(expected_train_cost(flat, X, out_of_range), ValidationError);
}

TEST_CASE("expected training cost matches exhaustive enumeration") {
  // 4 traces, 2 classes; the true-label distribution is one-hot and C = [yhat != y].
  Instance inst = two_class(4, 2, 0.8, 13);
  SubsetModel m = intercept_model({0.2, -0.1});
  m.weights(0, 2) = 0.7;
  m.weights(1, 2) = -0.4;
  m.weights(1, 5) = 0.3;
  const Eigen::VectorXd E = expected_train_cost(m, inst.X, inst.y);
  for (Eigen::Index i = 0; i < 4; ++i) {
    const Eigen::VectorXd z = inst.X.row(i).transpose();
    const double s0 = sigmoid(m.weights.row(0).head(kNumFeatures).dot(z) + m.weights(0, kNumFeatures));
    const double s1 = sigmoid(m.weights.row(1).head(kNumFeatures).dot(z) + m.weights(1, kNumFeatures));
    const double p[2] = {s0 / (s0 + s1), s1 / (s0 + s1)};
    double oracle = 0;
    for (int y = 0; y < 2; ++y) {
      const double p_true = y == inst.y[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      for (int yhat = 0; yhat < 2; ++yhat) oracle += p_true * p[yhat] * (yhat != y ? 1.0 : 0.0);
    }
    CHECK(E(i) == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(E(i) >= 0.0);
    CHECK(E(i) <= 1.0);
  }
}

TEST_CASE("metrics on perfect and degenerate predictors") {
  const std::vector<int> truth = {0, 1, 0, 1, 2, 2};
  const Metrics perfect = compute_metrics(truth, truth, 3);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.confusion == Eigen::Matrix3i::Identity() * 2);
  CHECK(perfect.macro_f_measure() == 1.0);

  const std::vector<int> t2 = {0, 0, 1, 1};
  const std::vector<int> all0 = {0, 0, 0, 0};
  const Metrics m = compute_metrics(all0, t2, 2);
  CHECK(m.accuracy == 0.5);
  CHECK(m.recall(0) == 1.0);
  CHECK(m.recall(1) == 0.0);
  CHECK(m.precision(0) == 0.5);
  CHECK(m.precision(1) == 0.0);
  CHECK(m.false_negative_rate(1) == 1.0);
  CHECK(m.support(0) == 2);
  CHECK(m.confusion.rowwise().sum() == m.support);
}

TEST_CASE("default grid") {
  const auto g = default_grid(200);
  CHECK(g.size() == 40);
  CHECK(g.front() == 5);
  CHECK(g.back() == 200);
  CHECK(default_grid(12) == std::vector<int>{5, 10, 12});
  CHECK(default_grid(5) == std::vector<int>{5});
  CHECK_THROWS_AS(default_grid(4), ValidationError);
  const auto lg = default_lambda_grid();
  REQUIRE(lg.size() == 6);
  CHECK(lg.front() == doctest::Approx(1e-4));
  CHECK(lg.back() == doctest::Approx(1.0));
}

TEST_CASE("single-subset cascade") {
  const auto ds = generate_synthetic(testing::toy_specs(), 10, 20, 2);
  const auto cascade = train_cascade(ds, {5}, {});
  CHECK(cascade.subsets.size() == 1);
  CHECK(cascade.grid_floor(4) == 0);
  CHECK(cascade.grid_floor(5) == 5);
  CHECK(cascade.grid_floor(20) == 5);
  CHECK(cascade.num_train() == 30);
  CHECK(cascade.at(5).expected_cost.size() == 30);
  CHECK_THROWS_AS((void)cascade.at(10), RangeError);
  CHECK_THROWS_AS(train_cascade(ds, {4}, {}), RangeError);
  CHECK_THROWS_AS(train_cascade(ds, {21}, {}), RangeError);
}

TEST_CASE("cascade is deterministic and separates the desk preset classes") {
  const auto ds = generate_synthetic(testing::desk_scale_specs(), 60, 200, 5);
  const auto parts = split_dataset(ds, {0.5, 0.5}, 1);
  const std::vector<int> grid = {5, 50, 200};
  CascadeOptions opt;
  opt.threads = 2;
  const auto a = train_cascade(parts[0], grid, opt);
  const auto b = train_cascade(parts[0], grid, {});
  for (int j : grid) REQUIRE(a.at(j).model.weights == b.at(j).model.weights);
  CHECK(evaluate(a, parts[1], 200).macro_f_measure() >= 0.95);
}

TEST_CASE("accuracy rises and expected cost falls with prefix length") {
  const auto ds = generate_synthetic(testing::overlapping_specs(), 120, 200, 5);
  const auto parts = split_dataset(ds, {0.5, 0.5}, 1);
  const auto grid = default_grid(200);
  const auto cascade = train_cascade(parts[0], grid, {});
  std::vector<double> js, acc, mean_e;
  for (int j : grid) {
    js.push_back(j);
    acc.push_back(evaluate(cascade, parts[1], j).accuracy);
    mean_e.push_back(cascade.at(j).expected_cost.mean());
    CHECK(cascade.at(j).expected_cost.minCoeff() >= 0.0);
    CHECK(cascade.at(j).expected_cost.maxCoeff() <= 1.0);
  }
  CHECK(testing::spearman(js, acc) > 0.6);
  CHECK(testing::spearman(js, mean_e) < -0.6);
}

TEST_CASE("lambda selection picks from the candidate grid") {
  const auto ds = generate_synthetic(testing::toy_specs(), 40, 30, 8);
  const auto parts = split_dataset(ds, {0.7, 0.3}, 2);
  const auto sel = select_lambda0(parts[0], parts[1], default_grid(30), default_lambda_grid(), {});
  CHECK(sel.candidates.size() == 6);
  CHECK(sel.validation_accuracy.size() == 6);
  CHECK(std::find(sel.candidates.begin(), sel.candidates.end(), sel.lambda0) != sel.candidates.end());
}
