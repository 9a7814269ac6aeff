#pragma once

#include <atomic>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "i2e/error.hpp"
#include "i2e/service.hpp"
#include "support.hpp"

namespace i2e::test {

using nlohmann::json;
using service::Service;
using service::ServiceOptions;


inline constexpr std::size_t kSymbols = 12;
inline constexpr std::size_t kBars = 440;
inline constexpr std::size_t kCached = 420;

inline ModelConfig member(Backbone bb, std::uint64_t seed) {
  ModelConfig c;
  c.backbone = bb;
  c.blocks = 1;
  c.d_model = 8;
  c.heads = 2;
  c.ffn_hidden = 8;
  c.lstm_hidden = 4;
  c.head_widths = {8};
  c.task = Task::regression;
  c.seed = seed;
  return c;
}

inline TickerSeries prefix(const TickerSeries& s, std::size_t n) {
  return {s.symbol, {s.bars.begin(), s.bars.begin() + static_cast<long>(n)}};
}

// Upstream that reveals `visible` bars per symbol and can fail on demand.
struct Upstream {
  std::map<std::string, TickerSeries> full;
  std::atomic<std::size_t> visible{kCached};
  std::set<std::string> failing;
  bool throw_all = false;
  std::map<std::string, std::size_t> extra;  // per-symbol visible override

  Date today() const { return full.begin()->second.bars[visible - 1].date; }

  UniverseFetch fetch(const std::vector<std::string>& symbols, const DateRange& range) const {
    if (throw_all) throw UnavailableError("upstream down");
    UniverseFetch out;
    for (const auto& sym : symbols) {
      if (failing.count(sym)) {
        out.failed.push_back({sym, "HTTP 503"});
        continue;
      }
      const auto it = extra.find(sym);
      const auto n = it == extra.end() ? visible.load() : it->second;
      TickerSeries s{sym, {}};
      for (std::size_t i = 0; i < n; ++i) {
        if (range.contains(full.at(sym).bars[i].date)) s.bars.push_back(full.at(sym).bars[i]);
      }
      if (!s.empty()) out.universe.series_by_symbol[sym] = std::move(s);
    }
    return out;
  }
};

struct Fixture {
  test::TempDir dir{"service"};
  Upstream upstream;
  RegressionEnsemble models;
  std::vector<std::string> symbols;
  std::unique_ptr<Service> service;

  Fixture() {
    Universe u;
    for (std::size_t i = 0; i < kSymbols; ++i) {
      const std::string sym = "T" + std::to_string(10 + i);
      symbols.push_back(sym);
      upstream.full[sym] = test::random_walk(sym, kBars, 100 + i);
      u.series_by_symbol[sym] = prefix(upstream.full[sym], kCached);
    }
    MarketCache cache(dir / "cache");
    for (const auto& [_, s] : u.series_by_symbol) cache.store(s);

    const auto samples = build_universe_samples(u);
    models.scaler = fit_scaler(samples);
    const auto scaled = apply_scaler(models.scaler, samples);
    models.transformer = std::make_shared<Model<float>>(member(Backbone::transformer, 1));
    models.lstm = std::make_shared<Model<float>>(member(Backbone::lstm, 2));
    const auto x = flat_inputs(scaled);
    std::vector<double> y;
    for (const auto& s : scaled) y.push_back(s.target_return);
    gbt::GbtParams p;
    p.objective = gbt::Objective::squared;
    p.n_estimators = 5;
    p.max_depth = 3;
    models.gbt = std::make_shared<gbt::GbtModel>(gbt::fit({x, kFlatWidth}, y, std::nullopt, p));
    reset();
  }

  void reset() {
    ServiceOptions options;
    options.symbols = symbols;
    options.today = [this] { return upstream.today(); };
    service = std::make_unique<Service>(MarketCache(dir / "cache"), models, options,
                                        [this](const auto& s, const auto& r) { return upstream.fetch(s, r); });
  }

  // Independent ranking: latest windows of the visible bars, scaled and averaged directly.
  std::vector<std::pair<std::string, double>> oracle_ensemble() const {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& sym : symbols) {
      const auto s = prefix(upstream.full.at(sym), upstream.visible);
      const auto rows = ticker_features(s).rows;
      const auto w = latest_window(sym, rows, intraday_returns(s));
      if (!w) throw std::runtime_error("fixture: no window for " + sym);
      const std::vector<Sample> one{*w};
      const auto scaled = apply_scaler(models.scaler, one);
      const auto in = flat_inputs(scaled);
      const double t = models.scaler.inverse_target(models.transformer->predict(in)[0]);
      const double l = models.scaler.inverse_target(models.lstm->predict(in)[0]);
      const double g = models.scaler.inverse_target(models.gbt->predict({in, kFlatWidth})[0]);
      out.emplace_back(sym, (t + l + g) / 3.0);
    }
    return out;
  }
};

// A rank body is consistent when it belongs to exactly one snapshot.
inline bool rank_consistent(const json& body) {
  std::set<std::string> as_of, target;
  std::size_t expected_rank = 1;
  for (const auto& r : body.at("top")) {
    as_of.insert(r.at("as_of").get<std::string>());
    target.insert(r.at("target_date").get<std::string>());
    if (r.at("rank").get<std::size_t>() != expected_rank++) return false;
    const auto& m = r.at("models");
    const double mean = (m.at("transformer").get<double>() + m.at("lstm").get<double>() + m.at("gbt").get<double>()) / 3;
    if (std::abs(r.at("ensemble").get<double>() - mean) > 1e-9) return false;
  }
  for (const auto& r : body.at("bottom")) {
    as_of.insert(r.at("as_of").get<std::string>());
    target.insert(r.at("target_date").get<std::string>());
  }
  return as_of.size() == 1 && target.size() == 1 && *target.begin() == body.at("target_date");
}


/// Readers hammer rank, ticker and raw snapshots while refresh reveals one bar at a time.
/// Returns the number of reads that saw state from two different snapshots.
struct StressResult {
  std::size_t reads = 0;
  std::size_t refreshes = 0;
  std::size_t torn = 0;
};

inline StressResult stress_refresh(Fixture& f) {
  f.upstream.visible = kCached + 1;
  if (f.service->refresh().status != 200) throw std::runtime_error("stress: initial refresh failed");
  std::atomic<bool> done{false};
  std::atomic<std::size_t> reads{0}, torn{0};
  auto reader = [&](int which) {
    while (!done) {
      if (which == 0) {
        const auto r = f.service->rank("3");
        if (r.status != 200 || !rank_consistent(r.body)) ++torn;
      } else if (which == 1) {
        const auto r = f.service->ticker("T10", std::nullopt, std::nullopt);
        const auto& bars = r.body.at("bars");
        const auto& ind = r.body.at("indicators");
        if (r.status != 200 || bars.back().at("date") != ind.back().at("date")) ++torn;
      } else {
        const auto snap = f.service->snapshot();
        for (const auto& rec : snap->records) {
          if (rec.as_of != *snap->as_of || rec.target_date != snap->target_date) ++torn;
        }
        for (const auto& [sym, s] : snap->bars) {
          if (snap->features.at(sym).rows.back().date != s.bars.back().date) ++torn;
        }
      }
      ++reads;
    }
  };
  std::vector<std::thread> threads;
  for (int i = 0; i < 3; ++i) threads.emplace_back(reader, i);
  StressResult out;
  while (f.upstream.visible < kBars) {
    ++f.upstream.visible;
    if (f.service->refresh().status == 200) ++out.refreshes;
    std::this_thread::yield();
  }
  done = true;
  for (auto& t : threads) t.join();
  out.reads = reads;
  out.torn = torn;
  return out;
}

}  // namespace i2e::test
