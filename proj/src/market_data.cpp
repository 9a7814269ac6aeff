#include "i2e/market_data.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "i2e/error.hpp"
#include "i2e/text.hpp"

namespace i2e {

namespace fs = std::filesystem;
using nlohmann::json;

bool is_valid_bar(const DailyBar& b) {
  for (double p : {b.open, b.high, b.low, b.close}) {
    if (!std::isfinite(p) || p <= 0) return false;
  }
  if (b.volume < 0) return false;
  return b.low <= std::min(b.open, b.close) && b.high >= std::max(b.open, b.close) &&
         b.low <= b.high;
}

std::size_t Universe::total_bars() const {
  std::size_t n = 0;
  for (const auto& [_, s] : series_by_symbol) n += s.size();
  return n;
}

std::size_t normalize_series(TickerSeries& series) {
  auto& bars = series.bars;
  const std::size_t before = bars.size();
  std::stable_sort(bars.begin(), bars.end(),
                   [](const DailyBar& a, const DailyBar& b) { return a.date < b.date; });
  std::vector<DailyBar> kept;
  kept.reserve(bars.size());
  for (const auto& b : bars) {
    if (!is_valid_bar(b)) continue;
    if (!kept.empty() && kept.back().date == b.date) continue;
    kept.push_back(b);
  }
  bars = std::move(kept);
  return before - bars.size();
}

// ---------------------------------------------------------------------------
// CSV

namespace {

constexpr const char* kColumns[] = {"date", "open", "high", "low", "close", "volume"};

}  // namespace

CsvLoad parse_csv(const std::string& text, const std::string& symbol) {
  CsvLoad out;
  out.series.symbol = symbol;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(symbol + ": empty CSV");
  auto header = split(trim(line), ',');
  int index[6];
  for (int c = 0; c < 6; ++c) {
    auto it = std::find_if(header.begin(), header.end(),
                           [&](const std::string& h) { return trim(h) == kColumns[c]; });
    if (it == header.end()) {
      throw FormatError(symbol + ": missing column '" + kColumns[c] + "'");
    }
    index[c] = static_cast<int>(it - header.begin());
  }

  std::size_t row = 1;
  std::size_t data_rows = 0;
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty()) continue;
    ++data_rows;
    auto cells = split(line, ',');
    if (cells.size() != header.size()) {
      out.issues.push_back({row, "expected " + std::to_string(header.size()) + " fields"});
      continue;
    }
    DailyBar bar;
    try {
      bar.date = parse_date(trim(cells[index[0]]));
    } catch (const FormatError&) {
      out.issues.push_back({row, "unparsable date '" + cells[index[0]] + "'"});
      continue;
    }
    double values[4];
    bool ok = true;
    for (int c = 0; c < 4 && ok; ++c) {
      auto v = parse_double(trim(cells[index[c + 1]]));
      if (!v) {
        out.issues.push_back({row, std::string("unparsable ") + kColumns[c + 1]});
        ok = false;
      } else {
        values[c] = *v;
      }
    }
    if (!ok) continue;
    auto vol = parse_double(trim(cells[index[5]]));
    if (!vol || *vol < 0 || std::floor(*vol) != *vol) {
      out.issues.push_back({row, "unparsable volume"});
      continue;
    }
    bar.open = values[0];
    bar.high = values[1];
    bar.low = values[2];
    bar.close = values[3];
    bar.volume = static_cast<std::int64_t>(*vol);
    if (!is_valid_bar(bar)) {
      out.issues.push_back({row, "OHLC invariant violated; row dropped"});
      continue;
    }
    if (!out.series.bars.empty() && bar.date <= out.series.bars.back().date) {
      bool dup = std::any_of(out.series.bars.begin(), out.series.bars.end(),
                             [&](const DailyBar& b) { return b.date == bar.date; });
      if (dup) {
        out.issues.push_back({row, "duplicate date; row dropped"});
        continue;
      }
    }
    out.series.bars.push_back(bar);
  }
  if (data_rows > 0 && out.series.bars.empty()) {
    throw FormatError(symbol + ": every CSV row failed to parse");
  }
  normalize_series(out.series);
  return out;
}

CsvLoad load_csv(const fs::path& path, const std::string& symbol) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), symbol);
}

std::string to_csv(const TickerSeries& series) {
  std::string out = "date,open,high,low,close,volume\n";
  for (const auto& b : series.bars) {
    out += format_date(b.date);
    for (double p : {b.open, b.high, b.low, b.close}) {
      out += ',';
      out += format_double(p);
    }
    out += ',';
    out += std::to_string(b.volume);
    out += '\n';
  }
  return out;
}

void write_csv(const fs::path& path, const TickerSeries& series) {
  write_file_atomic(path, to_csv(series));
}

// ---------------------------------------------------------------------------
// Chart endpoint

FetchResult parse_chart_response(const std::string& symbol, const std::string& body,
                                 const DateRange& range) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::exception& e) {
    throw FormatError(symbol + ": invalid chart JSON: " + e.what());
  }
  const auto& chart = doc.at("chart");
  if (chart.contains("error") && !chart["error"].is_null()) {
    throw UnavailableError(symbol + ": " + chart["error"].dump());
  }
  const auto& results = chart.at("result");
  if (!results.is_array() || results.empty()) {
    throw UnavailableError(symbol + ": no chart result");
  }
  const auto& res = results.at(0);

  FetchResult out;
  out.series.symbol = symbol;
  if (!res.contains("timestamp") || res["timestamp"].is_null()) return out;
  const auto& ts = res.at("timestamp");
  const auto& quote = res.at("indicators").at("quote").at(0);
  auto field = [&](const char* name, std::size_t i) -> std::optional<double> {
    const auto& arr = quote.at(name);
    if (i >= arr.size() || arr[i].is_null()) return std::nullopt;
    return arr[i].get<double>();
  };
  for (std::size_t i = 0; i < ts.size(); ++i) {
    DailyBar bar;
    bar.date = date_from_epoch_seconds(ts[i].get<std::int64_t>());
    if (!range.contains(bar.date)) continue;
    auto o = field("open", i), h = field("high", i), l = field("low", i), c = field("close", i);
    auto v = field("volume", i);
    if (!o || !h || !l || !c) {
      ++out.dropped;
      continue;
    }
    bar.open = *o;
    bar.high = *h;
    bar.low = *l;
    bar.close = *c;
    bar.volume = v ? static_cast<std::int64_t>(*v) : 0;
    out.series.bars.push_back(bar);
  }
  out.dropped += normalize_series(out.series);
  return out;
}

std::string chart_path(const std::string& symbol, const DateRange& range) {
  return "/v8/finance/chart/" + url_encode(symbol) +
         "?period1=" + std::to_string(epoch_seconds(range.first)) +
         "&period2=" + std::to_string(epoch_seconds(range.last) + 86400) + "&interval=1d";
}

ChartClient::ChartClient(std::string base_url, int max_attempts)
    : base_url_(std::move(base_url)), max_attempts_(std::max(1, max_attempts)) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

FetchResult ChartClient::fetch_history(const std::string& symbol, const DateRange& range) const {
  if (symbol.empty()) throw DataError("empty symbol");
  if (range.empty()) return FetchResult{TickerSeries{symbol, {}}, 0};

  // Split "scheme://host:port/prefix" into the client origin and a path prefix.
  std::string origin = base_url_;
  std::string prefix;
  auto scheme_end = base_url_.find("://");
  auto path_start = base_url_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start != std::string::npos) {
    origin = base_url_.substr(0, path_start);
    prefix = base_url_.substr(path_start);
  }

  httplib::Client client(origin);
  client.set_connection_timeout(10);
  client.set_read_timeout(30);
  client.set_follow_location(true);
  httplib::Headers headers{{"User-Agent", "Mozilla/5.0 (i2e)"}};
  const std::string path = prefix + chart_path(symbol, range);

  std::string last_error;
  for (int attempt = 0; attempt < max_attempts_; ++attempt) {
    auto res = client.Get(path, headers);
    if (!res) {
      last_error = httplib::to_string(res.error());
    } else if (res->status == 404) {
      throw UnavailableError(symbol + ": not found at source");
    } else if (res->status >= 500 || res->status == 429) {
      last_error = "HTTP " + std::to_string(res->status);
    } else if (res->status != 200) {
      throw UnavailableError(symbol + ": HTTP " + std::to_string(res->status));
    } else {
      return parse_chart_response(symbol, res->body, range);
    }
    if (attempt + 1 < max_attempts_) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50 << attempt));
    }
  }
  throw RetryableError(symbol + ": " + last_error);
}

UniverseFetch fetch_universe(const ChartClient& client, const std::vector<std::string>& symbols,
                             const DateRange& range, std::size_t max_concurrency) {
  struct Slot {
    std::optional<FetchResult> result;
    std::string error;
    bool unavailable = false;
  };
  std::vector<Slot> slots(symbols.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < symbols.size(); i = next++) {
      try {
        slots[i].result = client.fetch_history(symbols[i], range);
      } catch (const UnavailableError& e) {
        slots[i].unavailable = true;
        slots[i].error = e.what();
      } catch (const Error& e) {
        slots[i].error = e.what();
      }
    }
  };
  const std::size_t n_workers = std::clamp<std::size_t>(max_concurrency, 1, std::max<std::size_t>(1, symbols.size()));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }

  UniverseFetch out;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    auto& slot = slots[i];
    if (slot.unavailable) {
      out.unavailable.push_back({symbols[i], slot.error});
    } else if (!slot.result) {
      out.failed.push_back({symbols[i], slot.error});
    } else if (slot.result->series.empty()) {
      out.unavailable.push_back({symbols[i], "no bars in range"});
    } else {
      out.dropped_bars += slot.result->dropped;
      out.universe.as_of = std::max(out.universe.as_of, slot.result->series.bars.back().date);
      out.universe.series_by_symbol[symbols[i]] = std::move(slot.result->series);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

TickerSeries exclude_first_year(const TickerSeries& series) {
  TickerSeries out{series.symbol, {}};
  if (series.bars.empty()) return out;
  const Date cutoff = series.bars.front().date + std::chrono::days{365};
  for (const auto& b : series.bars) {
    if (b.date > cutoff) out.bars.push_back(b);
  }
  return out;
}

std::map<Date, std::size_t> coverage_histogram(const Universe& universe) {
  std::map<Date, std::size_t> counts;
  for (const auto& [_, s] : universe.series_by_symbol) {
    for (const auto& b : s.bars) ++counts[b.date];
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Cache

MarketCache::MarketCache(fs::path dir) : dir_(std::move(dir)) {}

fs::path MarketCache::path_for(const std::string& symbol) const { return dir_ / (symbol + ".csv"); }

std::optional<TickerSeries> MarketCache::load(const std::string& symbol) const {
  auto p = path_for(symbol);
  if (!fs::exists(p)) return std::nullopt;
  return load_csv(p, symbol).series;
}

void MarketCache::store(const TickerSeries& series) const {
  fs::create_directories(dir_);
  write_csv(path_for(series.symbol), series);
}

std::size_t MarketCache::append_newer(const TickerSeries& fresh) const {
  auto cached = load(fresh.symbol);
  if (!cached) {
    store(fresh);
    return fresh.size();
  }
  std::size_t added = 0;
  for (const auto& b : fresh.bars) {
    if (cached->bars.empty() || b.date > cached->bars.back().date) {
      cached->bars.push_back(b);
      ++added;
    }
  }
  if (added > 0) store(*cached);
  return added;
}

std::vector<std::string> MarketCache::symbols() const {
  std::vector<std::string> out;
  if (!fs::exists(dir_)) return out;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.path().extension() == ".csv") out.push_back(entry.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Universe MarketCache::load_universe() const {
  Universe u;
  for (const auto& sym : symbols()) {
    auto s = load(sym);
    if (!s || s->empty()) continue;
    u.as_of = std::max(u.as_of, s->bars.back().date);
    u.series_by_symbol[sym] = std::move(*s);
  }
  return u;
}

void MarketCache::write_manifest() const {
  json entries = json::array();
  for (const auto& sym : symbols()) {
    auto s = load(sym);
    if (!s) continue;
    json e{{"symbol", sym}, {"rows", s->size()}};
    if (!s->empty()) {
      e["first"] = format_date(s->bars.front().date);
      e["last"] = format_date(s->bars.back().date);
    }
    entries.push_back(std::move(e));
  }
  write_file_atomic(dir_ / "manifest.json", json{{"symbols", entries}}.dump(2) + "\n");
}

}  // namespace i2e
