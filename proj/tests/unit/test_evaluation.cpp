#include <doctest.h>

#include <cmath>

#include "backtest_oracles.hpp"
#include "i2e/error.hpp"

using namespace i2e;
using namespace i2e::eval;

namespace {

std::string sym(std::size_t i) { return test::stock_symbol(i); }

std::vector<Observation> day(Date d, const std::vector<double>& preds, const std::vector<double>& realized) {
  return test::day_of(d, preds, realized);
}

}  // namespace

TEST_CASE("hand-computed portfolio fixtures") {
  const Date d = make_date(2023, 3, 6);
  // Ranking D > A > C > B.
  const std::vector<Observation> obs{{d, "A", 0.6, 0.02},
                                     {d, "B", 0.1, -0.01},
                                     {d, "C", 0.3, 0.005},
                                     {d, "D", 0.9, 0.03}};
  const auto k1 = backtest(obs, 1);
  REQUIRE(k1.days.size() == 1);
  CHECK(k1.days[0].selection.longs == std::vector<std::string>{"D"});
  CHECK(k1.days[0].selection.shorts == std::vector<std::string>{"B"});
  CHECK(k1.days[0].portfolio_return == doctest::Approx((0.03 + 0.01) / 2).epsilon(1e-15));

  const auto k2 = backtest(obs, 2);
  CHECK(k2.days[0].selection.longs == std::vector<std::string>{"D", "A"});
  CHECK(k2.days[0].selection.shorts == std::vector<std::string>{"C", "B"});
  CHECK(k2.days[0].portfolio_return == doctest::Approx((0.03 + 0.02 - 0.005 + 0.01) / 4).epsilon(1e-15));

  // Fewer than 2k candidates skips the day.
  const auto d2 = make_date(2023, 3, 7);
  auto more = obs;
  more.push_back({d2, "A", 1.0, 0.01});
  const auto r = backtest(more, 1);
  CHECK(r.days.size() == 1);
  REQUIRE(r.skipped.size() == 1);
  CHECK(r.skipped[0].date == d2);
  CHECK_THROWS_AS(backtest(std::vector<Observation>{{d2, "A", 1.0, 0.01}}, 1), DataError);
  CHECK_THROWS_AS(backtest(obs, 0), ConfigError);
}

TEST_CASE("equal predictions break ties by ascending symbol") {
  const std::vector<Candidate> c{{"ZZ", 0.5}, {"AA", 0.5}, {"MM", 0.5}, {"BB", 0.5}};
  const auto s = daily_rank(c, 1);
  REQUIRE(s);
  CHECK(s->longs == std::vector<std::string>{"AA"});
  CHECK(s->shorts == std::vector<std::string>{"ZZ"});
  CHECK_THROWS_AS(rank_candidates(std::vector<Candidate>{{"A", 1}, {"A", 2}}), DataError);
  CHECK_THROWS_AS(rank_candidates(std::vector<Candidate>{{"A", 1}, {"B", std::nan("")}}), DataError);
  CHECK_FALSE(daily_rank(c, 3).has_value());
}

TEST_CASE("portfolio return needs a realized return for every selected symbol") {
  const DaySelection s{{"A"}, {"B"}};
  CHECK(*portfolio_return(s, {{"A", 0.04}, {"B", 0.02}}) == doctest::Approx(0.01));
  CHECK_FALSE(portfolio_return(s, {{"A", 0.04}}).has_value());
  CHECK_FALSE(portfolio_return(s, {{"A", 0.04}, {"B", std::nan("")}}).has_value());
  CHECK_THROWS_AS(portfolio_return(DaySelection{{"A"}, {}}, {}), DataError);
}

TEST_CASE("perfect foresight attains the exhaustive-search maximum") {
  CHECK(test::perfect_foresight_gap(60) <= 1e-15);
  // Hand day: best is long 0.05 and short -0.04 for k = 1.
  const std::vector<double> r{0.01, 0.05, -0.04, 0.0};
  CHECK(test::exhaustive_best(r, 1) == doctest::Approx(0.045));
  CHECK(backtest(day(make_date(2023, 2, 1), r, r), 1).days[0].portfolio_return == doctest::Approx(0.045));
}

TEST_CASE("rankings are invariant under strictly increasing transforms") {
  CHECK(test::transform_invariance_violations() == 0);
}

TEST_CASE("weekly aggregation follows ISO weeks across the year boundary") {
  std::vector<Observation> obs;
  const std::vector<Date> dates{make_date(2020, 12, 28), make_date(2020, 12, 31), make_date(2021, 1, 1),
                                make_date(2021, 1, 4), make_date(2021, 1, 8)};
  const std::vector<double> gains{0.01, 0.02, 0.03, 0.04, 0.06};
  for (std::size_t i = 0; i < dates.size(); ++i) {
    const auto o = day(dates[i], {1.0, 0.0}, {gains[i], -gains[i]});
    obs.insert(obs.end(), o.begin(), o.end());
  }
  const auto r = backtest(obs, 1);
  REQUIRE(r.weekly.size() == 2);
  CHECK(r.weekly[0].iso_year == 2020);
  CHECK(r.weekly[0].iso_week == 53);
  CHECK(r.weekly[0].first_day == make_date(2020, 12, 28));
  CHECK(r.weekly[0].days == 3);
  CHECK(r.weekly[0].mean_return == doctest::Approx(0.02));
  CHECK(r.weekly[1].iso_year == 2021);
  CHECK(r.weekly[1].iso_week == 1);
  CHECK(r.weekly[1].mean_return == doctest::Approx(0.05));
  CHECK(r.average_daily_return == doctest::Approx(0.032));
  CHECK(r.daily_csv().rfind("date,longs,shorts,return\n2020-12-28,S10,S11,", 0) == 0);
  CHECK(r.weekly_csv().rfind("iso_year,iso_week,first_day,days,mean_return\n2020,53,2020-12-28,3,", 0) == 0);
  CHECK(r.to_json().at("traded_days") == 5);
}

TEST_CASE("constant one-half predictor scores ln 2 on balanced labels") {
  std::vector<double> probs(1000, 0.5), labels(1000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<double>(i % 2);
  const auto m = classification_metrics(probs, labels);
  CHECK(std::abs(m.bce_loss - 0.6931) <= 1e-4);
  CHECK(m.bce_loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // Balanced class weights are 1, so the weighted loss is the same.
  CHECK(classification_metrics(probs, labels, 0.5, std::pair{1.0, 1.0}).bce_loss == doctest::Approx(std::log(2.0)));
}

TEST_CASE("classification metrics on a confusion-matrix fixture") {
  const std::vector<double> probs{0.9, 0.8, 0.2, 0.6, 0.1, 0.4};
  const std::vector<double> labels{1, 1, 1, 0, 0, 0};
  const auto m = classification_metrics(probs, labels);
  CHECK(m.tp == 2);
  CHECK(m.fn == 1);
  CHECK(m.fp == 1);
  CHECK(m.tn == 2);
  CHECK(m.accuracy == doctest::Approx(4.0 / 6));
  CHECK(m.precision == doctest::Approx(2.0 / 3));
  CHECK(m.recall == doctest::Approx(2.0 / 3));
  CHECK(m.f1 == doctest::Approx(2.0 / 3));
  double bce = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    bce -= labels[i] * std::log(probs[i]) + (1 - labels[i]) * std::log(1 - probs[i]);
  }
  CHECK(m.bce_loss == doctest::Approx(bce / 6).epsilon(1e-12));

  const auto weighted = classification_metrics(probs, labels, 0.5, std::pair{0.5, 2.0});
  double wbce = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    wbce -= labels[i] == 1 ? 2.0 * std::log(probs[i]) : 0.5 * std::log(1 - probs[i]);
  }
  CHECK(weighted.bce_loss == doctest::Approx(wbce / 6).epsilon(1e-12));
}

TEST_CASE("metric edge cases") {
  const std::vector<double> zeros(4, 0.1), labels{0, 1, 0, 1};
  const auto none = classification_metrics(zeros, labels);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);
  const std::vector<double> certain{0.0, 1.0, 0.0, 1.0};
  const auto perfect = classification_metrics(certain, labels);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.bce_loss < 1e-12);
  const auto wrong = classification_metrics(std::vector<double>{1.0, 0.0, 1.0, 0.0}, labels);
  CHECK(std::isfinite(wrong.bce_loss));
  CHECK_THROWS_AS(classification_metrics(std::vector<double>{1.2}, std::vector<double>{1}), DataError);
  CHECK_THROWS_AS(classification_metrics(std::vector<double>{0.2}, std::vector<double>{0.5}), DataError);
  CHECK_THROWS_AS(classification_metrics(std::vector<double>{0.2, 0.3}, std::vector<double>{1}), ShapeError);
  CHECK(mse(std::vector<double>{1, 2}, std::vector<double>{0, 4}) == 2.5);
  CHECK_THROWS_AS(mse(std::vector<double>{}, std::vector<double>{}), DataError);
}
