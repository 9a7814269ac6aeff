#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "i2e/error.hpp"
#include "i2e/market_data.hpp"

namespace i2e {

inline constexpr std::size_t kFeatureCount = 15;

/// The fifteen per-day model features of one ticker-date, in channel order.
struct FeatureRow {
  Date date;
  double intraday_return = 0;
  double ema10 = 0;
  double ema12 = 0;
  double ema26 = 0;
  double stoch_k = 0;
  double roc = 0;
  double rsi = 0;
  double accdo = 0;
  double macd = 0;
  double disparity5 = 0;
  double disparity10 = 0;
  double ma5 = 0;
  double ma10 = 0;
  double close_lag10 = 0;
  int day_of_year = 1;

  std::array<double, kFeatureCount> values() const;
  static FeatureRow from_values(Date date, const std::array<double, kFeatureCount>& v);
  static const std::array<const char*, kFeatureCount>& names();

  bool operator==(const FeatureRow&) const = default;
};

/// Trailing-window output; nullopt marks warm-up positions.
using IndicatorSeries = std::vector<std::optional<double>>;

struct IndicatorConfig {
  std::size_t stoch_window = 10;
  std::size_t rsi_window = 14;
  std::size_t roc_lag = 10;
  /// Seed the EMA recurrence with the SMA of the first n closes instead of the first close.
  bool ema_sma_seed = false;
};

/// (close - open) / open. Throws DataError when open <= 0.
double intraday_return(const DailyBar& bar);

IndicatorSeries sma(std::span<const double> closes, std::size_t n);
std::vector<double> ema(std::span<const double> closes, std::size_t n, bool sma_seed = false);
IndicatorSeries stochastic_k(std::span<const DailyBar> bars, std::size_t n);
IndicatorSeries roc(std::span<const double> closes, std::size_t n = 10);
IndicatorSeries rsi(std::span<const double> closes, std::size_t n = 14);
IndicatorSeries accdo(std::span<const DailyBar> bars);
std::vector<double> macd(std::span<const double> ema12, std::span<const double> ema26);
IndicatorSeries disparity(std::span<const double> closes, std::size_t n);

/// Thrown by sanitize for a non-finite field other than stoch_k / accdo.
class FeatureRejected : public DataError {
 public:
  FeatureRejected(std::string field, Date date);
  const std::string& field() const { return field_; }
  Date date() const { return date_; }

 private:
  std::string field_;
  Date date_;
};

/// Non-finite stoch_k becomes 50, non-finite accdo becomes 0; any other
/// non-finite field rejects the row.
FeatureRow sanitize(FeatureRow row);

/// Index of the first bar at which every feature is defined.
std::size_t feature_warmup(const IndicatorConfig& config);

struct FeatureSet {
  std::string symbol;
  std::vector<FeatureRow> rows;
  std::size_t rejected = 0;
};

/// Sanitized feature rows for every bar past warm-up, date-ascending.
FeatureSet compute_features(const TickerSeries& series, const IndicatorConfig& config = {});

std::string features_to_csv(const FeatureSet& features);
FeatureSet features_from_csv(const std::string& text, const std::string& symbol);
void write_features(const std::filesystem::path& path, const FeatureSet& features);
FeatureSet read_features(const std::filesystem::path& path, const std::string& symbol);

}  // namespace i2e
