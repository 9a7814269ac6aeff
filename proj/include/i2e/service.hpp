#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "i2e/market_data.hpp"
#include "i2e/pipeline.hpp"

namespace httplib {
class Server;
}

namespace i2e::service {

struct PredictionRecord {
  std::string symbol;
  double predicted_return = 0;  // raw space, equals `ensemble`
  std::size_t rank = 0;         // 1 = highest predicted return
  double transformer = 0;
  double lstm = 0;
  double gbt = 0;
  double ensemble = 0;
  Date as_of;
  Date target_date;

  nlohmann::json to_json() const;
};

/// Next weekday after `d` that is not a listed holiday.
Date next_trading_date(Date d, const std::vector<Date>& holidays);

/// Immutable view served to readers; replaced wholesale by refresh.
struct Snapshot {
  std::map<std::string, TickerSeries> bars;
  std::map<std::string, FeatureSet> features;
  std::optional<Date> as_of;  // latest bar date over the universe
  bool has_predictions = false;
  Date target_date;
  std::vector<PredictionRecord> records;  // rank order
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

/// Fetches bars for `symbols` within `range`.
using Fetcher = std::function<UniverseFetch(const std::vector<std::string>& symbols, const DateRange& range)>;

Fetcher chart_fetcher(std::string base_url, std::size_t max_concurrency);

struct ServiceOptions {
  std::vector<std::string> symbols;
  IndicatorConfig features;
  std::vector<Date> holidays;
  /// First date requested for symbols absent from the cache.
  Date history_start = make_date(2010, 1, 1);
  /// Last date requested by refresh.
  std::function<Date()> today;
};

class Service {
 public:
  Service(MarketCache cache, RegressionEnsemble models, ServiceOptions options, Fetcher fetcher);

  Response refresh();
  Response rank(const std::optional<std::string>& k) const;
  Response ticker(const std::string& symbol, const std::optional<std::string>& from,
                  const std::optional<std::string>& to) const;
  Response health() const;

  std::shared_ptr<const Snapshot> snapshot() const;

 private:
  std::shared_ptr<Snapshot> build_data_view(const std::shared_ptr<const Snapshot>& previous,
                                            const std::vector<std::string>& changed) const;
  void predict_into(Snapshot& snap) const;
  void publish(std::shared_ptr<const Snapshot> snap);

  MarketCache cache_;
  RegressionEnsemble models_;
  nlohmann::json digests_;
  ServiceOptions options_;
  Fetcher fetcher_;

  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const Snapshot> snapshot_;
  std::mutex refresh_mutex_;
};

/// HTTP front end over a Service.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  /// Blocks until the background server thread exits.
  void wait();
  void stop();

 private:
  Service& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace i2e::service
