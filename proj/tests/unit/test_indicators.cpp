#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "i2e/indicators.hpp"
#include "indicator_oracles.hpp"

using namespace i2e;
using namespace i2e::test;

namespace {

constexpr double kTol = 1e-10;

void check_close(double actual, double expected, double tol = kTol) {
  CHECK(std::abs(actual - expected) <= tol * std::max(1.0, std::abs(expected)));
}

}  // namespace

TEST_CASE("intraday return examples and invalid open") {
  CHECK(intraday_return({make_date(2020, 1, 2), 10, 11, 10, 11, 1}) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(intraday_return({make_date(2020, 1, 2), 7, 7, 7, 7, 1}) == 0.0);
  CHECK(intraday_return({make_date(2020, 1, 2), 4, 4, 3, 3, 1}) == -0.25);
  CHECK_THROWS_AS(intraday_return({make_date(2020, 1, 2), 0, 1, 0, 1, 1}), DataError);
  CHECK_THROWS_AS(intraday_return({make_date(2020, 1, 2), -1, 1, -1, 1, 1}), DataError);
}

TEST_CASE("small hand examples") {
  const std::vector<double> c{1, 2, 3};
  const auto s = sma(c, 2);
  CHECK_FALSE(s[0].has_value());
  CHECK(*s[1] == 1.5);
  CHECK(*s[2] == 2.5);

  const auto e = ema(c, 2);
  CHECK(e[0] == 1.0);
  CHECK(e[1] == doctest::Approx(5.0 / 3.0).epsilon(1e-15));
  CHECK(e[2] == doctest::Approx(23.0 / 9.0).epsilon(1e-15));

  const std::vector<double> doubled{10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20};
  CHECK(*roc(doubled, 10)[10] == doctest::Approx(100.0));

  const std::vector<double> a{3, 4, 5}, b{2, 3, 4};
  for (double v : macd(a, b)) CHECK(v == 1.0);
  CHECK_THROWS_AS(macd(a, std::vector<double>{1, 2}), DataError);

  const std::vector<double> up{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  CHECK(*rsi(up, 14)[14] == 100.0);
}

TEST_CASE("every indicator matches its brute-force oracle on 1,000-bar random walks") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto s = test::random_walk("RW", 1000, seed);
    const auto c = test::closes_of(s);
    CAPTURE(seed);

    for (std::size_t t = 0; t < s.size(); ++t) {
      const auto& b = s.bars[t];
      check_close(intraday_return(b), (b.close - b.open) / b.open);
    }
    for (std::size_t n : {5u, 10u}) {
      const auto got = sma(c, n);
      const auto disp = disparity(c, n);
      for (std::size_t t = 0; t < c.size(); ++t) {
        REQUIRE(got[t].has_value() == (t + 1 >= n));
        REQUIRE(disp[t].has_value() == (t + 1 >= n));
        if (!got[t]) continue;
        check_close(*got[t], oracle_sma(c, t, n));
        check_close(*disp[t], 100.0 * c[t] / oracle_sma(c, t, n));
      }
    }
    for (std::size_t n : {10u, 12u, 26u}) {
      const auto got = ema(c, n);
      for (std::size_t t = 0; t < c.size(); ++t) check_close(got[t], oracle_ema(c, t, n));
    }
    const auto e12 = ema(c, 12), e26 = ema(c, 26);
    const auto m = macd(e12, e26);
    for (std::size_t t = 0; t < c.size(); ++t) {
      check_close(m[t], oracle_ema(c, t, 12) - oracle_ema(c, t, 26));
      CHECK(m[t] == e12[t] - e26[t]);
    }
    const auto k = stochastic_k(s.bars, 10);
    for (std::size_t t = 0; t < c.size(); ++t) {
      REQUIRE(k[t].has_value() == (t >= 9));
      if (k[t]) check_close(*k[t], oracle_stoch(s, t, 10));
    }
    const auto r = roc(c, 10);
    for (std::size_t t = 0; t < c.size(); ++t) {
      REQUIRE(r[t].has_value() == (t >= 10));
      if (r[t]) check_close(*r[t], 100.0 * (c[t] / c[t - 10] - 1.0));
    }
    const auto rs = rsi(c, 14);
    for (std::size_t t = 0; t < c.size(); ++t) {
      REQUIRE(rs[t].has_value() == (t >= 14));
      if (rs[t]) check_close(*rs[t], oracle_rsi(c, t, 14));
    }
    const auto ad = accdo(s.bars);
    CHECK_FALSE(ad[0].has_value());
    for (std::size_t t = 1; t < c.size(); ++t) {
      const auto& b = s.bars[t];
      check_close(*ad[t], (b.high - s.bars[t - 1].close) / (b.high - b.low));
    }
  }
  const auto suite = indicator_suite();
  CHECK(suite.worst <= kTol);
  CHECK(suite.comparisons > 50000);
}

TEST_CASE("sanitize substitutes %K and AccDO and rejects anything else") {
  FeatureRow row;
  row.date = make_date(2021, 3, 4);
  row.ema10 = row.ema12 = row.ema26 = row.ma5 = row.ma10 = row.close_lag10 = 10;
  row.disparity5 = row.disparity10 = 100;
  CHECK(sanitize(row) == row);
  CHECK(sanitize_violations() == 0);

  auto inf_k = row;
  inf_k.stoch_k = std::numeric_limits<double>::infinity();
  CHECK(sanitize(inf_k).stoch_k == 50.0);
  auto nan_k = row;
  nan_k.stoch_k = std::numeric_limits<double>::quiet_NaN();
  CHECK(sanitize(nan_k).stoch_k == 50.0);

  auto inf_a = row;
  inf_a.accdo = -std::numeric_limits<double>::infinity();
  CHECK(sanitize(inf_a).accdo == 0.0);

  auto bad = row;
  bad.rsi = std::numeric_limits<double>::quiet_NaN();
  try {
    sanitize(bad);
    FAIL("expected rejection");
  } catch (const FeatureRejected& e) {
    CHECK(e.field() == "rsi");
    CHECK(e.date() == row.date);
  }
}

TEST_CASE("constant-price windows take the neutral substitutions exactly") {
  const auto s = constant_series(60, 25.0);
  const auto f = compute_features(s);
  REQUIRE_FALSE(f.rows.empty());
  CHECK(f.rejected == 0);
  for (const auto& r : f.rows) {
    CHECK(r.stoch_k == 50.0);
    CHECK(r.accdo == 0.0);
    CHECK(r.rsi == 50.0);
    CHECK(r.macd == 0.0);
    CHECK(r.disparity5 == 100.0);
    CHECK(r.ema26 == 25.0);
    CHECK(r.roc == 0.0);
  }
  CHECK(constant_window_violations() == 0);
}

TEST_CASE("feature rows agree with the indicator oracles and hold the row invariants") {
  const auto s = test::random_walk("RW", 400, 11);
  const auto c = test::closes_of(s);
  const auto f = compute_features(s);
  REQUIRE(f.rows.size() == s.size() - feature_warmup({}));
  for (const auto& r : f.rows) {
    const auto t = static_cast<std::size_t>(
        std::find_if(s.bars.begin(), s.bars.end(), [&](const DailyBar& b) { return b.date == r.date; }) -
        s.bars.begin());
    REQUIRE(t < s.size());
    CHECK(r.macd == r.ema12 - r.ema26);
    check_close(r.ema10, oracle_ema(c, t, 10));
    check_close(r.ma5, oracle_sma(c, t, 5));
    check_close(r.ma10, oracle_sma(c, t, 10));
    check_close(r.stoch_k, oracle_stoch(s, t, 10));
    check_close(r.rsi, oracle_rsi(c, t, 14));
    CHECK(r.close_lag10 == c[t - 10]);
    CHECK(r.day_of_year == day_of_year(r.date));
    CHECK(r.rsi >= 0.0);
    CHECK(r.rsi <= 100.0);
    CHECK(r.stoch_k >= 0.0);
    CHECK(r.stoch_k <= 100.0);
    for (double v : r.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("appending future bars never changes earlier feature rows") {
  const auto full = test::random_walk("RW", 300, 5);
  const auto all_rows = compute_features(full).rows;
  for (std::size_t cut : {40u, 120u, 299u}) {
    TickerSeries prefix{full.symbol, {full.bars.begin(), full.bars.begin() + static_cast<long>(cut)}};
    const auto rows = compute_features(prefix).rows;
    REQUIRE(rows.size() <= all_rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i] == all_rows[i]);
  }
}

TEST_CASE("feature CSV round trip keeps the documented column order") {
  const auto f = compute_features(test::random_walk("RT", 80, 2));
  const auto text = features_to_csv(f);
  CHECK(text.rfind("date,intraday_return,ema10,ema12,ema26,stoch_k,roc,rsi,accdo,macd,disparity5,disparity10,"
                   "ma5,ma10,close_lag10,day_of_year\n",
                   0) == 0);
  const auto back = features_from_csv(text, "RT");
  REQUIRE(back.rows.size() == f.rows.size());
  for (std::size_t i = 0; i < f.rows.size(); ++i) CHECK(back.rows[i] == f.rows[i]);
}
