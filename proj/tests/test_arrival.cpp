#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "flowstop/arrival.hpp"
#include "flowstop/errors.hpp"
#include "test_support.hpp"

using namespace flowstop;

namespace {

std::vector<double> exp_draws(double rate, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> d(rate);
  std::vector<double> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

}  // namespace

TEST_CASE("rate MLE closed form") {
  const std::vector<double> taus = {2, 2, 2, 2};
  CHECK(fit_exponential_rate(taus) == 0.5);
  CHECK_THROWS_AS(fit_exponential_rate(std::vector<double>{}), ValidationError);
  CHECK_THROWS_AS(fit_exponential_rate(std::vector<double>{1.0, -1.0}), ValidationError);
  // Zero gaps are clamped, not rejected.
  CHECK(std::isfinite(fit_exponential_rate(std::vector<double>{0.0, 0.0})));
  CHECK(fit_exponential_rate(std::vector<double>{0.0, 0.0}) == doctest::Approx(1.0 / kMinInterArrival));
}

TEST_CASE("rate MLE scales inversely with the gaps") {
  const auto x = exp_draws(3.0, 50, 1);
  for (double c : {0.5, 4.0, 8.0}) {
    std::vector<double> y(x);
    for (auto& v : y) v *= c;
    CHECK(fit_exponential_rate(y) == doctest::Approx(fit_exponential_rate(x) / c).epsilon(1e-14));
  }
}

TEST_CASE("rate MLE covers the truth in repeated sampling") {
  // With 200 draws the MLE has standard error ~10/sqrt(200) = 0.71, so the
  // interval [9, 11] only holds about 84% of the time; +-1.96 SE holds ~95%.
  int inside_unit = 0, inside_se = 0;
  const double se = 10.0 / std::sqrt(200.0);
  for (std::uint64_t t = 0; t < 1000; ++t) {
    const double r = fit_exponential_rate(exp_draws(10.0, 200, 1000 + t));
    inside_unit += r >= 9.0 && r <= 11.0;
    inside_se += std::abs(r - 10.0) <= 1.96 * se;
  }
  CHECK(inside_unit >= 810);
  CHECK(inside_unit <= 880);
  CHECK(inside_se >= 930);
}

TEST_CASE("MLE strictly beats one-percent perturbations") {
  for (std::uint64_t t = 0; t < 50; ++t) {
    const auto x = exp_draws(0.5 + t, 20 + t, t);
    const double r = fit_exponential_rate(x);
    const double ll = exponential_log_likelihood(x, r);
    CHECK(ll > exponential_log_likelihood(x, r * 1.01));
    CHECK(ll > exponential_log_likelihood(x, r * 0.99));
  }
}

TEST_CASE("class rates recover generator truth") {
  const std::vector<ClassGeneratorSpec> specs = {
      {"slow", CategoricalSizes{{100, 200}, {0.5, 0.5}}, 50.0, 1},
      {"fast", CategoricalSizes{{100, 200}, {0.5, 0.5}}, 200.0, 2}};
  const auto ds = generate_synthetic(specs, 1000, 200, 7);
  const auto model = class_rates(ds);
  REQUIRE(model.rates.size() == 2);
  CHECK(std::abs(model.rates[0] / 50.0 - 1.0) < 0.02);
  CHECK(std::abs(model.rates[1] / 200.0 - 1.0) < 0.02);
  CHECK(model.sample_counts[0] == 1000u * 199u);
  CHECK(model.mean_inter_arrival(1) == doctest::Approx(1.0 / model.rates[1]));

  auto shuffled = ds;
  std::mt19937_64 rng(3);
  std::shuffle(shuffled.traces.begin(), shuffled.traces.end(), rng);
  CHECK(class_rates(shuffled) == model);
}

TEST_CASE("constant gaps give the reciprocal rate") {
  LabeledDataset ds;
  ds.class_alphabet = {"only"};
  ds.traces.push_back({"only", {1, 2, 3}, {0.25, 0.25}});
  ds.traces.push_back({"only", {1, 2, 3}, {0.25, 0.25}});
  CHECK(class_rates(ds).rates[0] == 4.0);
}

TEST_CASE("class without samples is rejected") {
  LabeledDataset ds;
  ds.class_alphabet = {"a", "b"};
  ds.traces.push_back({"a", {1, 2}, {0.1}});
  CHECK_THROWS_AS(class_rates(ds), ValidationError);
}

TEST_CASE("KS and CvM closed forms") {
  CHECK(ks_statistic(std::vector<double>{std::log(2.0)}, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
  // F(tau) = 0.25 at rate 1 means tau = -ln(0.75).
  const double tau = -std::log(0.75);
  CHECK(cvm_statistic(std::vector<double>{tau}, 1.0) == doctest::Approx(1.0 / 12 + 0.0625).epsilon(1e-14));
  CHECK(cvm_statistic(std::vector<double>{tau}, 1.0) == doctest::Approx(0.1458333333).epsilon(1e-9));
}

TEST_CASE("KS and CvM are invariant under joint rescaling") {
  const auto x = exp_draws(4.0, 300, 5);
  std::vector<double> y(x);
  for (auto& v : y) v *= 7.0;
  CHECK(ks_statistic(y, 4.0 / 7.0) == doctest::Approx(ks_statistic(x, 4.0)).epsilon(1e-12));
  CHECK(cvm_statistic(y, 4.0 / 7.0) == doctest::Approx(cvm_statistic(x, 4.0)).epsilon(1e-12));
  CHECK(ks_statistic(x, 4.0) >= 0.0);
  CHECK(ks_statistic(x, 4.0) <= 1.0);
}

TEST_CASE("self-fitted exponential samples pass the critical values") {
  int ks_ok = 0, cvm_ok = 0;
  const std::size_t n = 10'000;
  for (std::uint64_t t = 0; t < 100; ++t) {
    const auto x = exp_draws(25.0, n, 500 + t);
    const double r = fit_exponential_rate(x);
    ks_ok += ks_statistic(x, r) < 1.36 / std::sqrt(static_cast<double>(n));
    cvm_ok += cvm_statistic(x, r) < 0.461;
  }
  CHECK(ks_ok >= 90);
  CHECK(cvm_ok >= 90);
}

TEST_CASE("goodness-of-fit report per class") {
  const auto ds = generate_synthetic(testing::toy_specs(), 50, 100, 4);
  const auto rows = goodness_of_fit(ds);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].label == "a");
  CHECK(rows[0].n == 50u * 99u);
  CHECK(rows[2].rate == doctest::Approx(320.0).epsilon(0.05));
  for (const auto& r : rows) CHECK(r.ks < 1.36 / std::sqrt(static_cast<double>(r.n)) * 2);
}

TEST_CASE("arrival MSE") {
  const std::vector<double> truth = {1, 3};
  const std::vector<double> pred = {2, 2};
  CHECK(mse_arrival(truth, pred, 8, 10) == 1.0);
  CHECK(mse_arrival(truth, truth, 8, 10) == 0.0);
  CHECK_THROWS_AS(mse_arrival(truth, pred, 10, 10), ValidationError);
  CHECK_THROWS_AS(mse_arrival(truth, pred, 7, 10), ValidationError);
  const std::vector<double> other = {1, 3.5};
  CHECK(mse_arrival(truth, other, 8, 10) > 0.0);
}
