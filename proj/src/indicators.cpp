#include "i2e/indicators.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "i2e/text.hpp"

namespace i2e {

namespace {

constexpr std::array<const char*, kFeatureCount> kNames = {
    "intraday_return", "ema10",       "ema12", "ema26", "stoch_k",
    "roc",             "rsi",         "accdo", "macd",  "disparity5",
    "disparity10",     "ma5",         "ma10",  "close_lag10", "day_of_year"};

constexpr std::size_t kEmaLongWindow = 26;
constexpr std::size_t kCloseLag = 10;

std::vector<double> closes_of(std::span<const DailyBar> bars) {
  std::vector<double> out(bars.size());
  std::transform(bars.begin(), bars.end(), out.begin(), [](const DailyBar& b) { return b.close; });
  return out;
}

}  // namespace

std::array<double, kFeatureCount> FeatureRow::values() const {
  return {intraday_return, ema10,      ema12,       ema26, stoch_k, roc,  rsi,         accdo,
          macd,            disparity5, disparity10, ma5,   ma10,    close_lag10,
          static_cast<double>(day_of_year)};
}

FeatureRow FeatureRow::from_values(Date date, const std::array<double, kFeatureCount>& v) {
  FeatureRow r;
  r.date = date;
  r.intraday_return = v[0];
  r.ema10 = v[1];
  r.ema12 = v[2];
  r.ema26 = v[3];
  r.stoch_k = v[4];
  r.roc = v[5];
  r.rsi = v[6];
  r.accdo = v[7];
  r.macd = v[8];
  r.disparity5 = v[9];
  r.disparity10 = v[10];
  r.ma5 = v[11];
  r.ma10 = v[12];
  r.close_lag10 = v[13];
  r.day_of_year = static_cast<int>(v[14]);
  return r;
}

const std::array<const char*, kFeatureCount>& FeatureRow::names() { return kNames; }

double intraday_return(const DailyBar& bar) {
  if (!(bar.open > 0)) throw DataError("intraday_return: open must be positive");
  return (bar.close - bar.open) / bar.open;
}

IndicatorSeries sma(std::span<const double> closes, std::size_t n) {
  if (n == 0) throw DataError("sma: window must be >= 1");
  IndicatorSeries out(closes.size());
  for (std::size_t t = n - 1; t < closes.size(); ++t) {
    double sum = 0;
    for (std::size_t j = t + 1 - n; j <= t; ++j) sum += closes[j];
    out[t] = sum / static_cast<double>(n);
  }
  return out;
}

std::vector<double> ema(std::span<const double> closes, std::size_t n, bool sma_seed) {
  if (n == 0) throw DataError("ema: window must be >= 1");
  std::vector<double> out(closes.size());
  if (closes.empty()) return out;
  const double alpha = 2.0 / (static_cast<double>(n) + 1.0);
  std::size_t start = 0;
  if (sma_seed && closes.size() >= n) {
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      sum += closes[j];
      out[j] = sum / static_cast<double>(j + 1);
    }
    start = n - 1;
  } else {
    out[0] = closes[0];
  }
  for (std::size_t t = start + 1; t < closes.size(); ++t) {
    out[t] = alpha * closes[t] + (1.0 - alpha) * out[t - 1];
  }
  return out;
}

IndicatorSeries stochastic_k(std::span<const DailyBar> bars, std::size_t n) {
  if (n == 0) throw DataError("stochastic_k: window must be >= 1");
  IndicatorSeries out(bars.size());
  for (std::size_t t = n - 1; t < bars.size(); ++t) {
    double hh = bars[t].high;
    double ll = bars[t].low;
    for (std::size_t j = t + 1 - n; j < t; ++j) {
      hh = std::max(hh, bars[j].high);
      ll = std::min(ll, bars[j].low);
    }
    // hh == ll yields 0/0; sanitize() maps it to the neutral value.
    out[t] = 100.0 * (bars[t].close - ll) / (hh - ll);
  }
  return out;
}

IndicatorSeries roc(std::span<const double> closes, std::size_t n) {
  IndicatorSeries out(closes.size());
  for (std::size_t t = n; t < closes.size(); ++t) {
    out[t] = 100.0 * (closes[t] - closes[t - n]) / closes[t - n];
  }
  return out;
}

IndicatorSeries rsi(std::span<const double> closes, std::size_t n) {
  if (n == 0) throw DataError("rsi: window must be >= 1");
  IndicatorSeries out(closes.size());
  for (std::size_t t = n; t < closes.size(); ++t) {
    double gain = 0;
    double loss = 0;
    for (std::size_t j = t + 1 - n; j <= t; ++j) {
      double d = closes[j] - closes[j - 1];
      if (d > 0) gain += d;
      else loss -= d;
    }
    gain /= static_cast<double>(n);
    loss /= static_cast<double>(n);
    if (loss == 0) {
      out[t] = gain > 0 ? 100.0 : 50.0;
    } else {
      out[t] = 100.0 - 100.0 / (1.0 + gain / loss);
    }
  }
  return out;
}

IndicatorSeries accdo(std::span<const DailyBar> bars) {
  IndicatorSeries out(bars.size());
  for (std::size_t t = 1; t < bars.size(); ++t) {
    out[t] = (bars[t].high - bars[t - 1].close) / (bars[t].high - bars[t].low);
  }
  return out;
}

std::vector<double> macd(std::span<const double> ema12, std::span<const double> ema26) {
  if (ema12.size() != ema26.size()) {
    throw DataError("macd: length mismatch (" + std::to_string(ema12.size()) + " vs " +
                    std::to_string(ema26.size()) + ")");
  }
  std::vector<double> out(ema12.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ema12[i] - ema26[i];
  return out;
}

IndicatorSeries disparity(std::span<const double> closes, std::size_t n) {
  auto avg = sma(closes, n);
  IndicatorSeries out(closes.size());
  for (std::size_t t = 0; t < closes.size(); ++t) {
    if (avg[t]) out[t] = 100.0 * closes[t] / *avg[t];
  }
  return out;
}

FeatureRejected::FeatureRejected(std::string field, Date date)
    : DataError("non-finite " + field + " on " + format_date(date)),
      field_(std::move(field)),
      date_(date) {}

FeatureRow sanitize(FeatureRow row) {
  if (!std::isfinite(row.stoch_k)) row.stoch_k = 50.0;
  if (!std::isfinite(row.accdo)) row.accdo = 0.0;
  auto v = row.values();
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    if (!std::isfinite(v[i])) throw FeatureRejected(kNames[i], row.date);
  }
  return row;
}

std::size_t feature_warmup(const IndicatorConfig& c) {
  return std::max({std::size_t{9}, kEmaLongWindow - 1, c.stoch_window - 1, c.roc_lag, c.rsi_window,
                   std::size_t{1}, kCloseLag});
}

FeatureSet compute_features(const TickerSeries& series, const IndicatorConfig& config) {
  FeatureSet out;
  out.symbol = series.symbol;
  const auto& bars = series.bars;
  const std::size_t warm = feature_warmup(config);
  if (bars.size() <= warm) return out;

  auto closes = closes_of(bars);
  auto e10 = ema(closes, 10, config.ema_sma_seed);
  auto e12 = ema(closes, 12, config.ema_sma_seed);
  auto e26 = ema(closes, 26, config.ema_sma_seed);
  auto m = macd(e12, e26);
  auto k = stochastic_k(bars, config.stoch_window);
  auto rc = roc(closes, config.roc_lag);
  auto rs = rsi(closes, config.rsi_window);
  auto ad = accdo(bars);
  auto d5 = disparity(closes, 5);
  auto d10 = disparity(closes, 10);
  auto m5 = sma(closes, 5);
  auto m10 = sma(closes, 10);

  out.rows.reserve(bars.size() - warm);
  for (std::size_t t = warm; t < bars.size(); ++t) {
    FeatureRow r;
    r.date = bars[t].date;
    r.intraday_return = intraday_return(bars[t]);
    r.ema10 = e10[t];
    r.ema12 = e12[t];
    r.ema26 = e26[t];
    r.stoch_k = *k[t];
    r.roc = *rc[t];
    r.rsi = *rs[t];
    r.accdo = *ad[t];
    r.macd = m[t];
    r.disparity5 = *d5[t];
    r.disparity10 = *d10[t];
    r.ma5 = *m5[t];
    r.ma10 = *m10[t];
    r.close_lag10 = closes[t - kCloseLag];
    r.day_of_year = day_of_year(bars[t].date);
    try {
      out.rows.push_back(sanitize(r));
    } catch (const FeatureRejected&) {
      ++out.rejected;
    }
  }
  return out;
}

std::string features_to_csv(const FeatureSet& features) {
  std::string out = "date";
  for (auto* n : kNames) {
    out += ',';
    out += n;
  }
  out += '\n';
  for (const auto& r : features.rows) {
    out += format_date(r.date);
    auto v = r.values();
    for (std::size_t i = 0; i + 1 < kFeatureCount; ++i) {
      out += ',';
      out += format_double(v[i]);
    }
    out += ',';
    out += std::to_string(r.day_of_year);
    out += '\n';
  }
  return out;
}

FeatureSet features_from_csv(const std::string& text, const std::string& symbol) {
  FeatureSet out;
  out.symbol = symbol;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(symbol + ": empty feature file");
  auto header = split(trim(line), ',');
  if (header.size() != kFeatureCount + 1 || header[0] != "date") {
    throw FormatError(symbol + ": unexpected feature header");
  }
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    if (header[i + 1] != kNames[i]) throw FormatError(symbol + ": unexpected column " + header[i + 1]);
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != kFeatureCount + 1) {
      throw FormatError(symbol + ": feature row " + std::to_string(row) + " has wrong width");
    }
    std::array<double, kFeatureCount> v{};
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      auto d = parse_double(cells[i + 1]);
      if (!d) throw FormatError(symbol + ": bad value in feature row " + std::to_string(row));
      v[i] = *d;
    }
    out.rows.push_back(FeatureRow::from_values(parse_date(cells[0]), v));
  }
  return out;
}

void write_features(const std::filesystem::path& path, const FeatureSet& features) {
  write_file_atomic(path, features_to_csv(features));
}

FeatureSet read_features(const std::filesystem::path& path, const std::string& symbol) {
  return features_from_csv(read_file(path), symbol);
}

}  // namespace i2e
