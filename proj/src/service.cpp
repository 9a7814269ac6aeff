#include "i2e/service.hpp"

#include <algorithm>
#include <chrono>

#include <httplib.h>

#include "i2e/error.hpp"
#include "i2e/evaluation.hpp"
#include "i2e/text.hpp"

namespace i2e::service {

using nlohmann::json;

json PredictionRecord::to_json() const {
  return json{{"symbol", symbol},
              {"predicted_return", predicted_return},
              {"rank", rank},
              {"models", {{"transformer", transformer}, {"lstm", lstm}, {"gbt", gbt}}},
              {"ensemble", ensemble},
              {"as_of", format_date(as_of)},
              {"target_date", format_date(target_date)}};
}

Date next_trading_date(Date d, const std::vector<Date>& holidays) {
  Date next = d + std::chrono::days{1};
  while (is_weekend(next) || std::find(holidays.begin(), holidays.end(), next) != holidays.end()) {
    next += std::chrono::days{1};
  }
  return next;
}

Fetcher chart_fetcher(std::string base_url, std::size_t max_concurrency) {
  auto client = std::make_shared<ChartClient>(std::move(base_url));
  return [client, max_concurrency](const std::vector<std::string>& symbols, const DateRange& range) {
    return fetch_universe(*client, symbols, range, max_concurrency);
  };
}

namespace {

Response error(int status, const std::string& message) { return {status, json{{"error", message}}}; }

json date_or_null(const std::optional<Date>& d) { return d ? json(format_date(*d)) : json(nullptr); }

Date utc_today() {
  return std::chrono::floor<std::chrono::days>(std::chrono::system_clock::now());
}

}  // namespace

Service::Service(MarketCache cache, RegressionEnsemble models, ServiceOptions options, Fetcher fetcher)
    : cache_(std::move(cache)),
      models_(std::move(models)),
      options_(std::move(options)),
      fetcher_(std::move(fetcher)) {
  digests_ = models_.digests();
  std::sort(options_.symbols.begin(), options_.symbols.end());
  options_.symbols.erase(std::unique(options_.symbols.begin(), options_.symbols.end()), options_.symbols.end());
  publish(build_data_view(nullptr, options_.symbols));
}

std::shared_ptr<const Snapshot> Service::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

void Service::publish(std::shared_ptr<const Snapshot> snap) {
  std::lock_guard lock(snapshot_mutex_);
  snapshot_ = std::move(snap);
}

std::shared_ptr<Snapshot> Service::build_data_view(const std::shared_ptr<const Snapshot>& previous,
                                                   const std::vector<std::string>& changed) const {
  auto snap = previous ? std::make_shared<Snapshot>(*previous) : std::make_shared<Snapshot>();
  snap->has_predictions = false;
  snap->records.clear();
  for (const auto& symbol : changed) {
    auto series = cache_.load(symbol);
    if (!series || series->empty()) continue;
    snap->features[symbol] = ticker_features(*series, options_.features);
    snap->bars[symbol] = std::move(*series);
  }
  snap->as_of.reset();
  for (const auto& [_, series] : snap->bars) {
    if (!snap->as_of || series.bars.back().date > *snap->as_of) snap->as_of = series.bars.back().date;
  }
  return snap;
}

void Service::predict_into(Snapshot& snap) const {
  snap.records.clear();
  snap.has_predictions = false;
  if (!snap.as_of) return;
  std::vector<Sample> windows;
  for (const auto& [symbol, series] : snap.bars) {
    if (series.bars.back().date != *snap.as_of) continue;
    auto w = latest_window(symbol, snap.features.at(symbol).rows, intraday_returns(series));
    if (w) windows.push_back(std::move(*w));
  }
  if (windows.empty()) return;
  const auto scaled = apply_scaler(models_.scaler, windows);
  const auto outputs = models_.predict(scaled);

  snap.target_date = next_trading_date(*snap.as_of, options_.holidays);
  std::vector<eval::Candidate> candidates;
  std::map<std::string, RegressionEnsemble::Output> by_symbol;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    candidates.push_back({windows[i].symbol, outputs[i].ensemble});
    by_symbol[windows[i].symbol] = outputs[i];
  }
  const auto ranked = eval::rank_candidates(candidates);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& o = by_symbol.at(ranked[i].symbol);
    snap.records.push_back({ranked[i].symbol, o.ensemble, i + 1, o.transformer, o.lstm, o.gbt, o.ensemble,
                            *snap.as_of, snap.target_date});
  }
  snap.has_predictions = true;
}

Response Service::refresh() {
  std::lock_guard guard(refresh_mutex_);
  const auto previous = snapshot();
  const Date today = options_.today ? options_.today() : utc_today();

  Date first = today;
  for (const auto& symbol : options_.symbols) {
    auto it = previous->bars.find(symbol);
    const Date start = it == previous->bars.end() ? options_.history_start
                                                   : it->second.bars.back().date + std::chrono::days{1};
    first = std::min(first, start);
  }

  json failed = json::array();
  std::vector<std::string> changed;
  std::size_t succeeded = options_.symbols.size();
  if (!options_.symbols.empty() && first <= today) {
    UniverseFetch fetched;
    try {
      fetched = fetcher_(options_.symbols, {first, today});
    } catch (const Error& e) {
      fetched = {};
      for (const auto& s : options_.symbols) fetched.failed.push_back({s, e.what()});
    }
    for (const auto* list : {&fetched.unavailable, &fetched.failed}) {
      for (const auto& f : *list) failed.push_back({{"symbol", f.symbol}, {"reason", f.reason}});
    }
    succeeded = options_.symbols.size() - std::min(options_.symbols.size(), failed.size());
    if (succeeded == 0) {
      return {502, json{{"updated", 0}, {"failed", failed}, {"as_of", date_or_null(previous->as_of)}}};
    }
    for (const auto& [symbol, series] : fetched.universe.series_by_symbol) {
      if (cache_.append_newer(series) > 0) changed.push_back(symbol);
    }
  }

  if (changed.empty() && previous->has_predictions) {
    return {200, json{{"updated", 0}, {"failed", failed}, {"as_of", date_or_null(previous->as_of)}}};
  }
  auto next = build_data_view(previous, changed);
  predict_into(*next);
  if (!changed.empty()) cache_.write_manifest();
  const auto as_of = next->as_of;
  publish(std::move(next));
  return {200, json{{"updated", changed.size()}, {"failed", failed}, {"as_of", date_or_null(as_of)}}};
}

Response Service::rank(const std::optional<std::string>& k_text) const {
  const auto snap = snapshot();
  if (!snap->has_predictions) return error(409, "refresh required");
  long k = 5;
  if (k_text) {
    const auto parsed = parse_double(*k_text);
    if (!parsed || *parsed != static_cast<double>(static_cast<long>(*parsed))) {
      return error(422, "k must be an integer");
    }
    k = static_cast<long>(*parsed);
  }
  const auto n = static_cast<long>(snap->records.size());
  if (k < 1) return error(422, "k must be >= 1");
  if (2 * k > n) return error(422, "k must be at most " + std::to_string(n / 2) + " for " + std::to_string(n) + " symbols");

  json top = json::array(), bottom = json::array();
  for (long i = 0; i < k; ++i) top.push_back(snap->records[static_cast<std::size_t>(i)].to_json());
  for (long i = n - k; i < n; ++i) bottom.push_back(snap->records[static_cast<std::size_t>(i)].to_json());
  return {200, json{{"target_date", format_date(snap->target_date)}, {"top", top}, {"bottom", bottom}}};
}

Response Service::ticker(const std::string& symbol, const std::optional<std::string>& from,
                         const std::optional<std::string>& to) const {
  const auto snap = snapshot();
  const bool configured = std::binary_search(options_.symbols.begin(), options_.symbols.end(), symbol);
  const auto it = snap->bars.find(symbol);
  if (!configured && it == snap->bars.end()) return error(404, "unknown symbol " + symbol);

  DateRange range{Date::min(), Date::max()};
  try {
    if (from && !from->empty()) range.first = parse_date(*from);
    if (to && !to->empty()) range.last = parse_date(*to);
  } catch (const FormatError& e) {
    return error(400, e.what());
  }

  json bars = json::array(), indicators = json::array();
  if (it != snap->bars.end()) {
    for (const auto& b : it->second.bars) {
      if (!range.contains(b.date)) continue;
      bars.push_back({{"date", format_date(b.date)},
                      {"open", b.open},
                      {"high", b.high},
                      {"low", b.low},
                      {"close", b.close},
                      {"volume", b.volume}});
    }
    const auto names = FeatureRow::names();
    for (const auto& row : snap->features.at(symbol).rows) {
      if (!range.contains(row.date)) continue;
      json r{{"date", format_date(row.date)}};
      const auto values = row.values();
      for (std::size_t c = 0; c < values.size(); ++c) r[names[c]] = values[c];
      indicators.push_back(std::move(r));
    }
  }
  return {200, json{{"symbol", symbol}, {"bars", bars}, {"indicators", indicators}}};
}

Response Service::health() const {
  const auto snap = snapshot();
  return {200, json{{"status", "ok"}, {"model_digests", digests_}, {"data_as_of", date_or_null(snap->as_of)}}};
}

// ---------------------------------------------------------------------------

namespace {

void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_header("Access-Control-Allow-Origin", "*");
  res.set_content(r.body.dump(), "application/json; charset=utf-8");
}

std::optional<std::string> param(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  return req.get_param_value(key);
}

}  // namespace

HttpServer::HttpServer(Service& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  s.Post("/api/v1/refresh", [this](const httplib::Request&, httplib::Response& res) { send(res, service_.refresh()); });
  s.Get("/api/v1/rank", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.rank(param(req, "k")));
  });
  s.Get(R"(/api/v1/tickers/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.ticker(req.matches[1], param(req, "from"), param(req, "to")));
  });
  s.Get("/api/v1/health", [this](const httplib::Request&, httplib::Response& res) { send(res, service_.health()); });
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    send(res, {500, json{{"error", message}}});
  });
  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send(res, {res.status, json{{"error", "not found"}}});
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = server_->bind_to_any_port(host);
  } else if (!server_->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void HttpServer::listen(const std::string& host, int port) {
  if (!server_->listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::wait() {
  if (thread_.joinable()) thread_.join();
}

void HttpServer::stop() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace i2e::service
