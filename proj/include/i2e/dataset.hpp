#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "i2e/indicators.hpp"
#include "i2e/market_data.hpp"

namespace i2e {

inline constexpr std::size_t kWindowDays = 10;
inline constexpr std::size_t kFlatWidth = kWindowDays * kFeatureCount;  // 150
inline constexpr std::size_t kScalerChannels = kFeatureCount + 1;      // features + target
inline constexpr double kReturnClip = 2.0;

using Window = std::array<double, kFlatWidth>;

/// Ten consecutive feature days (oldest first, row-major day-then-feature)
/// and the intraday return of the next trading day.
struct Sample {
  std::string symbol;
  Date anchor_date;
  Date target_date;
  Window window{};
  /// Clipped next-day return; in scaled space once a scaler has been applied.
  double target_return = 0;
  /// Unclipped, unscaled next-day return.
  double raw_return = 0;
  int target_label = 0;

  double at(std::size_t day, std::size_t feature) const { return window[day * kFeatureCount + feature]; }
  bool operator==(const Sample&) const = default;
};

struct DatedReturn {
  Date date;
  double value;
};

double clip_target(double r);

std::vector<DatedReturn> intraday_returns(const TickerSeries& series);

/// One sample per feature date t that has nine contiguous predecessors and a
/// following trading day. `returns` must list every trading day of the series.
std::vector<Sample> make_windows(const std::string& symbol, std::span<const FeatureRow> features,
                                 std::span<const DatedReturn> returns);

/// Inference window anchored at the last trading day of `returns`, with no target
/// (target fields zero, target_date equal to the anchor). Nullopt unless the last
/// ten trading days all have feature rows.
std::optional<Sample> latest_window(const std::string& symbol, std::span<const FeatureRow> features,
                                    std::span<const DatedReturn> returns);

/// First-year exclusion, indicators and windowing for one ticker.
std::vector<Sample> build_samples(const TickerSeries& series, const IndicatorConfig& config = {});

class MinMaxScaler {
 public:
  MinMaxScaler() = default;
  MinMaxScaler(std::array<double, kScalerChannels> mins, std::array<double, kScalerChannels> maxs);

  bool fitted() const { return fitted_; }
  const std::array<double, kScalerChannels>& mins() const { return mins_; }
  const std::array<double, kScalerChannels>& maxs() const { return maxs_; }

  double transform(std::size_t channel, double x) const;
  double inverse(std::size_t channel, double x) const;
  double inverse_target(double scaled) const { return inverse(kFeatureCount, scaled); }

  bool operator==(const MinMaxScaler&) const = default;

 private:
  void require_fitted() const;

  std::array<double, kScalerChannels> mins_{};
  std::array<double, kScalerChannels> maxs_{};
  bool fitted_ = false;
};

MinMaxScaler fit_scaler(std::span<const Sample> train);
std::vector<Sample> apply_scaler(const MinMaxScaler& scaler, std::span<const Sample> samples);
std::vector<Sample> invert_scaler(const MinMaxScaler& scaler, std::span<const Sample> samples);

struct SplitSpec {
  DateRange train;
  DateRange validation;
  DateRange test;

  /// Throws ConfigError unless the intervals are disjoint and ordered.
  void validate() const;
  static SplitSpec defaults();
};

struct Partitions {
  std::vector<Sample> train;
  std::vector<Sample> validation;
  std::vector<Sample> test;
};

/// Membership is decided by the target date; samples outside every interval are dropped.
Partitions split_by_date(std::span<const Sample> samples, const SplitSpec& spec);

/// Inverse-frequency weights N / (2 N_c) as (negative, positive).
std::pair<double, double> class_weights(std::span<const int> labels);

Window flatten_window(const Sample& sample);
std::array<std::array<double, kFeatureCount>, kWindowDays> unflatten_window(const Window& flat);

struct SynthParams {
  std::size_t n_stocks = 50;
  std::size_t n_days = 1500;
  std::uint64_t seed = 1;
  Date start = make_date(2018, 1, 1);
  double factor_ar = 0.5;
  double factor_vol = 0.01;
  /// Multiplier on the idiosyncratic noise; 0 makes every stock a scaled copy of the index.
  double noise_scale = 1.0;
  double idio_vol = 0.01;
  std::string index_symbol = "^SYNTH";
};

struct SynthMarket {
  Universe stocks;
  TickerSeries index;
};

/// Daily bars on weekdays. The index intraday return follows an AR(1) factor;
/// each stock's return is beta_i * factor + noise.
SynthMarket synth_market(const SynthParams& params);

struct DatasetFile {
  std::vector<Sample> samples;
  MinMaxScaler scaler;
};

/// Binary partition cache; see docs/formats.md for the byte layout.
void write_dataset(const std::filesystem::path& path, std::span<const Sample> samples,
                   const MinMaxScaler& scaler);
DatasetFile read_dataset(const std::filesystem::path& path);

}  // namespace i2e
