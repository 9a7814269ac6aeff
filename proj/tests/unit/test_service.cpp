#include <doctest.h>

#include <cmath>

#include <httplib.h>

#include "i2e/evaluation.hpp"
#include "i2e/text.hpp"
#include "service_fixture.hpp"

using namespace i2e;
using namespace i2e::service;
using nlohmann::json;

namespace {

using namespace i2e::test;

void check_record_schema(const json& r) {
  CHECK(r.size() == 7);
  for (const char* key : {"symbol", "predicted_return", "rank", "models", "ensemble", "as_of", "target_date"}) {
    CHECK(r.contains(key));
  }
  CHECK(r.at("models").size() == 3);
  const auto& m = r.at("models");
  const double mean = (m.at("transformer").get<double>() + m.at("lstm").get<double>() + m.at("gbt").get<double>()) / 3;
  CHECK(std::abs(r.at("ensemble").get<double>() - mean) <= 1e-9);
  CHECK(r.at("predicted_return") == r.at("ensemble"));
}

}  // namespace

TEST_CASE("next trading date skips weekends and holidays") {
  CHECK(next_trading_date(make_date(2023, 6, 30), {}) == make_date(2023, 7, 3));
  CHECK(next_trading_date(make_date(2023, 6, 30), {make_date(2023, 7, 3)}) == make_date(2023, 7, 4));
  CHECK(next_trading_date(make_date(2023, 7, 4), {}) == make_date(2023, 7, 5));
}

TEST_CASE("rank before any refresh is 409 and health reports cached data") {
  Fixture f;
  const auto r = f.service->rank(std::nullopt);
  CHECK(r.status == 409);
  CHECK(r.body.at("error") == "refresh required");
  const auto h = f.service->health();
  CHECK(h.status == 200);
  CHECK(h.body.size() == 3);
  CHECK(h.body.at("status") == "ok");
  CHECK(h.body.at("model_digests").size() == 3);
  CHECK(h.body.at("model_digests").at("transformer") == export_weights(*f.models.transformer).digest);
  CHECK(h.body.at("data_as_of") == format_date(f.upstream.full.at("T10").bars[kCached - 1].date));
}

TEST_CASE("refresh then rank matches the daily_rank oracle") {
  Fixture f;
  f.upstream.visible = kCached + 2;
  const auto r = f.service->refresh();
  CHECK(r.status == 200);
  CHECK(r.body.size() == 3);
  CHECK(r.body.at("updated") == kSymbols);
  CHECK(r.body.at("failed").empty());
  const Date as_of = f.upstream.today();
  CHECK(r.body.at("as_of") == format_date(as_of));

  const auto oracle = f.oracle_ensemble();
  std::vector<eval::Candidate> candidates;
  for (const auto& [sym, v] : oracle) candidates.push_back({sym, v});
  for (std::size_t k : {1u, 5u, 6u}) {
    CAPTURE(k);
    const auto res = f.service->rank(std::to_string(k));
    REQUIRE(res.status == 200);
    CHECK(res.body.size() == 3);
    CHECK(res.body.at("target_date") == format_date(next_trading_date(as_of, {})));
    const auto expected = eval::daily_rank(candidates, k);
    REQUIRE(res.body.at("top").size() == k);
    REQUIRE(res.body.at("bottom").size() == k);
    for (std::size_t i = 0; i < k; ++i) {
      const auto& top = res.body.at("top")[i];
      check_record_schema(top);
      CHECK(top.at("symbol") == expected->longs[i]);
      CHECK(top.at("rank") == i + 1);
      CHECK(top.at("as_of") == format_date(as_of));
      CHECK(res.body.at("bottom")[i].at("symbol") == expected->shorts[i]);
      CHECK(res.body.at("bottom")[i].at("rank") == kSymbols - k + i + 1);
      for (const auto& [sym, v] : oracle) {
        if (sym == top.at("symbol")) CHECK(std::abs(top.at("ensemble").get<double>() - v) <= 1e-9);
      }
    }
  }
  CHECK(f.service->rank(std::nullopt).body.at("top").size() == 5);
  CHECK(f.service->rank("5").body.dump() == f.service->rank("5").body.dump());
  CHECK(f.service->rank("0").status == 422);
  CHECK(f.service->rank("7").status == 422);
  CHECK(f.service->rank("2.5").status == 422);
  CHECK(f.service->rank("many").status == 422);
}

TEST_CASE("a second refresh without new bars reuses the snapshot") {
  Fixture f;
  f.upstream.visible = kCached + 1;
  REQUIRE(f.service->refresh().status == 200);
  const auto before = f.service->snapshot();
  const auto ranked = f.service->rank("3").body.dump();
  const auto again = f.service->refresh();
  CHECK(again.status == 200);
  CHECK(again.body.at("updated") == 0);
  CHECK(f.service->snapshot() == before);
  CHECK(f.service->rank("3").body.dump() == ranked);
}

TEST_CASE("new bars for some symbols recompute only those symbols") {
  Fixture f;
  REQUIRE(f.service->refresh().status == 200);
  const auto before = f.service->snapshot();
  const auto untouched_file = read_file(f.dir / "cache" / "T12.csv");
  f.upstream.extra = {{"T10", kCached + 2}, {"T11", kCached + 2}};
  f.upstream.visible = kCached + 2;
  f.upstream.failing = {"T12", "T13", "T14", "T15", "T16", "T17", "T18", "T19", "T20", "T21"};
  const auto r = f.service->refresh();
  CHECK(r.status == 200);
  CHECK(r.body.at("updated") == 2);
  CHECK(r.body.at("failed").size() == 10);
  CHECK(r.body.at("failed")[0].at("reason") == "HTTP 503");
  const auto after = f.service->snapshot();
  CHECK(after->bars.at("T10").size() == kCached + 2);
  CHECK(after->features.at("T10").rows.back().date == after->bars.at("T10").bars.back().date);
  CHECK(after->features.at("T12").rows == before->features.at("T12").rows);
  CHECK(read_file(f.dir / "cache" / "T12.csv") == untouched_file);
  // Only symbols that have the latest bar are ranked.
  CHECK(after->records.size() == 2);
}

TEST_CASE("all-symbol upstream failure is 502 with per-symbol errors") {
  Fixture f;
  f.upstream.visible = kCached + 1;
  f.upstream.failing = std::set<std::string>(f.symbols.begin(), f.symbols.end());
  auto r = f.service->refresh();
  CHECK(r.status == 502);
  CHECK(r.body.at("updated") == 0);
  CHECK(r.body.at("failed").size() == kSymbols);
  f.upstream.failing.clear();
  f.upstream.throw_all = true;
  r = f.service->refresh();
  CHECK(r.status == 502);
  CHECK(r.body.at("failed").size() == kSymbols);
  CHECK(f.service->rank("1").status == 409);
}

TEST_CASE("ticker history equals the feature cache and honours the range") {
  Fixture f;
  const auto full = f.service->ticker("T13", std::nullopt, std::nullopt);
  REQUIRE(full.status == 200);
  CHECK(full.body.size() == 3);
  const auto series = prefix(f.upstream.full.at("T13"), kCached);
  const auto rows = ticker_features(series).rows;
  REQUIRE(full.body.at("bars").size() == kCached);
  REQUIRE(full.body.at("indicators").size() == rows.size());
  const auto names = FeatureRow::names();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& got = full.body.at("indicators")[i];
    CHECK(got.at("date") == format_date(rows[i].date));
    const auto values = rows[i].values();
    for (std::size_t c = 0; c < values.size(); ++c) CHECK(got.at(names[c]).get<double>() == values[c]);
  }
  const auto& b0 = full.body.at("bars")[0];
  CHECK(b0.size() == 6);
  CHECK(b0.at("close").get<double>() == series.bars[0].close);

  const auto from = format_date(series.bars[300].date), to = format_date(series.bars[309].date);
  const auto window = f.service->ticker("T13", from, to);
  CHECK(window.body.at("bars").size() == 10);
  CHECK(window.body.at("bars")[0].at("date") == from);
  const auto empty = f.service->ticker("T13", to, from);
  CHECK(empty.status == 200);
  CHECK(empty.body.at("bars").empty());
  CHECK(empty.body.at("indicators").empty());
  CHECK(f.service->ticker("NOPE", std::nullopt, std::nullopt).status == 404);
  CHECK(f.service->ticker("T13", "2020-02-31", std::nullopt).status == 400);
}

TEST_CASE("HTTP endpoints round trip the JSON contract") {
  Fixture f;
  HttpServer server(*f.service);
  const int port = server.start("127.0.0.1", 0);
  httplib::Client client("127.0.0.1", port);

  auto res = client.Get("/api/v1/rank?k=2");
  REQUIRE(res);
  CHECK(res->status == 409);
  CHECK(json::parse(res->body) == f.service->rank("2").body);

  f.upstream.visible = kCached + 1;
  res = client.Post("/api/v1/refresh");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type").rfind("application/json", 0) == 0);
  CHECK(json::parse(res->body).at("updated") == kSymbols);

  res = client.Get("/api/v1/rank?k=2");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body) == f.service->rank("2").body);
  res = client.Get("/api/v1/rank?k=0");
  CHECK(res->status == 422);
  CHECK(json::parse(res->body).contains("error"));

  res = client.Get("/api/v1/tickers/T15?from=2016-01-01&to=2016-01-31");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body) == f.service->ticker("T15", "2016-01-01", "2016-01-31").body);
  res = client.Get("/api/v1/tickers/ZZZ");
  CHECK(res->status == 404);

  res = client.Get("/api/v1/health");
  REQUIRE(res);
  CHECK(json::parse(res->body) == f.service->health().body);
  res = client.Get("/api/v1/unknown");
  CHECK(res->status == 404);
  CHECK(json::parse(res->body).at("error") == "not found");
  server.stop();
}

TEST_CASE("concurrent reads during refresh never see a torn snapshot") {
  Fixture f;
  const auto r = stress_refresh(f);
  CHECK(r.refreshes == kBars - kCached - 1);
  CHECK(r.reads > 0);
  CHECK(r.torn == 0);
  CHECK(f.service->snapshot()->as_of == f.upstream.today());
}
