#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "i2e/date.hpp"

namespace i2e {

/// One ticker-day of OHLCV data.
struct DailyBar {
  Date date;
  double open = 0;
  double high = 0;
  double low = 0;
  double close = 0;
  std::int64_t volume = 0;

  bool operator==(const DailyBar&) const = default;
};

/// True when prices are finite and positive, volume is non-negative and
/// low <= min(open, close), high >= max(open, close).
bool is_valid_bar(const DailyBar& bar);

/// Date-ascending bars of a single symbol, without duplicate dates.
struct TickerSeries {
  std::string symbol;
  std::vector<DailyBar> bars;

  bool empty() const { return bars.empty(); }
  std::size_t size() const { return bars.size(); }
};

struct Universe {
  std::map<std::string, TickerSeries> series_by_symbol;
  Date as_of{};

  std::size_t total_bars() const;
};

/// Sorts by date, drops invalid bars and duplicate dates (first occurrence wins).
/// Returns the number of bars removed.
std::size_t normalize_series(TickerSeries& series);

struct RowIssue {
  std::size_t row = 0;  // 1-based line number in the file
  std::string message;
};

struct CsvLoad {
  TickerSeries series;
  std::vector<RowIssue> issues;
};

/// Reads `date,open,high,low,close,volume`. Bad rows are collected in
/// `issues`; a FormatError is thrown for a bad header or when every row fails.
CsvLoad load_csv(const std::filesystem::path& path, const std::string& symbol);
CsvLoad parse_csv(const std::string& text, const std::string& symbol);
void write_csv(const std::filesystem::path& path, const TickerSeries& series);
std::string to_csv(const TickerSeries& series);

struct FetchResult {
  TickerSeries series;
  std::size_t dropped = 0;
};

/// Parses a chart endpoint response (parallel timestamp/OHLCV arrays) and
/// keeps the bars that fall within `range`.
FetchResult parse_chart_response(const std::string& symbol, const std::string& body,
                                 const DateRange& range);

/// Client for a Yahoo-Finance-compatible daily chart endpoint.
class ChartClient {
 public:
  explicit ChartClient(std::string base_url, int max_attempts = 3);

  /// Throws UnavailableError for symbols the source does not know and
  /// RetryableError once all attempts fail on transport or 5xx errors.
  FetchResult fetch_history(const std::string& symbol, const DateRange& range) const;

  const std::string& base_url() const { return base_url_; }

 private:
  std::string base_url_;
  int max_attempts_;
};

std::string chart_path(const std::string& symbol, const DateRange& range);

/// Keeps bars dated strictly more than 365 days after the first bar.
TickerSeries exclude_first_year(const TickerSeries& series);

/// Number of tickers with a bar on each date.
std::map<Date, std::size_t> coverage_histogram(const Universe& universe);

struct SymbolFailure {
  std::string symbol;
  std::string reason;
};

struct UniverseFetch {
  Universe universe;
  std::vector<SymbolFailure> unavailable;
  std::vector<SymbolFailure> failed;
  std::size_t dropped_bars = 0;
};

/// Fetches every symbol with at most `max_concurrency` requests in flight.
/// Unavailable symbols and symbols with empty history are left out of the universe.
UniverseFetch fetch_universe(const ChartClient& client, const std::vector<std::string>& symbols,
                             const DateRange& range, std::size_t max_concurrency);

/// `<dir>/<SYMBOL>.csv` per symbol plus `manifest.json`.
class MarketCache {
 public:
  explicit MarketCache(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path_for(const std::string& symbol) const;

  std::optional<TickerSeries> load(const std::string& symbol) const;
  void store(const TickerSeries& series) const;

  /// Appends bars strictly newer than the cached last date. Returns how many were added.
  std::size_t append_newer(const TickerSeries& fresh) const;

  std::vector<std::string> symbols() const;
  Universe load_universe() const;
  void write_manifest() const;

 private:
  std::filesystem::path dir_;
};

}  // namespace i2e
