#include <doctest.h>

#include <random>

#include "gbt_oracles.hpp"
#include "i2e/error.hpp"
#include "support.hpp"

using namespace i2e;
using namespace i2e::gbt;
using namespace i2e::test;

TEST_CASE("a single depth-1 tree equals the exhaustive best stump") {
  CHECK(stump_oracle_gap(200) <= 1e-9);
  // A hand instance: the only useful cut separates {0, 1} from {2, 3}.
  const std::vector<float> x{0, 1, 2, 3};
  const std::vector<double> y{1, 1, 5, 5};
  const auto m = fit({x, 1}, y, std::nullopt, stump_params(0.0));
  REQUIRE(m.trees[0].nodes.size() == 3);
  CHECK(m.trees[0].nodes[0].threshold == 1.5);
  CHECK(m.predict({x, 1}) == std::vector<double>{1, 1, 5, 5});
}

TEST_CASE("base score is the weighted mean or its log-odds") {
  const std::vector<float> x{0, 1, 2, 3};
  const std::vector<double> y{0, 1, 1, 1}, w{3, 1, 1, 1};
  GbtParams p;
  p.n_estimators = 0;
  const auto logistic = fit({x, 1}, y, std::span<const double>(w), p);
  CHECK(logistic.base_score == doctest::Approx(0.0).epsilon(1e-12));
  p.objective = Objective::squared;
  const auto squared = fit({x, 1}, y, std::nullopt, p);
  CHECK(squared.base_score == doctest::Approx(0.75));
}

TEST_CASE("default hyperparameters: loss never increases and structural caps hold") {
  const GbtParams defaults;
  CHECK(defaults.n_estimators == 100);
  CHECK(defaults.learning_rate == 0.03);
  CHECK(defaults.max_depth == 9);
  CHECK(defaults.colsample_bytree == 0.7);
  CHECK(defaults.max_leaves == 100);

  const auto audit = default_params_audit();
  CHECK(audit.rounds == 400);
  CHECK(audit.loss_increases == 0);
  CHECK(audit.cap_violations == 0);
}

TEST_CASE("tight caps bind") {
  std::mt19937_64 rng(3);
  const auto in = random_instance(rng, 300, 6, false);
  GbtParams p;
  p.objective = Objective::squared;
  p.n_estimators = 5;
  p.max_leaves = 4;
  p.max_depth = 9;
  for (const auto& t : fit(in.matrix(), in.y, std::nullopt, p).trees) CHECK(t.leaf_count() <= 4);
  p.max_leaves = 100;
  p.max_depth = 2;
  for (const auto& t : fit(in.matrix(), in.y, std::nullopt, p).trees) {
    const auto shape = walk(t);
    REQUIRE(shape);
    CHECK(shape->depth <= 2);
  }
}

TEST_CASE("fitting is deterministic and the JSON model round trips") {
  std::mt19937_64 rng(5);
  const auto in = random_instance(rng, 200, 8, true);
  GbtParams p;
  p.n_estimators = 10;
  const auto a = fit(in.matrix(), in.y, std::nullopt, p);
  const auto b = fit(in.matrix(), in.y, std::nullopt, p);
  CHECK(a == b);
  p.seed = 9;
  CHECK_FALSE(fit(in.matrix(), in.y, std::nullopt, p) == a);

  test::TempDir dir("gbt");
  save_model(dir / "m.json", a);
  const auto back = load_model(dir / "m.json");
  CHECK(back.predict(in.matrix()) == a.predict(in.matrix()));
  for (double prob : a.predict(in.matrix())) {
    CHECK(prob > 0.0);
    CHECK(prob < 1.0);
  }
  std::vector<float> short_row(7);
  CHECK_THROWS_AS(a.margin(short_row), ShapeError);
}

TEST_CASE("invalid parameters and inputs are rejected") {
  GbtParams p;
  p.colsample_bytree = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  CHECK_THROWS_AS(GbtParams::from_json({{"n_estimators", 5}, {"depth", 3}}), ConfigError);
  CHECK_THROWS_AS(parse_objective("hinge"), ConfigError);
  const std::vector<float> x{0, 1};
  const std::vector<double> y{0, 1}, w{0, 0};
  CHECK_THROWS_AS(fit({x, 1}, y, std::span<const double>(w), GbtParams{}), DataError);
}
