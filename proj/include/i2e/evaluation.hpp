#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "i2e/date.hpp"

namespace i2e::eval {

struct ClassificationMetrics {
  double accuracy = 0;
  double precision = 0;  // 0 when nothing is predicted positive
  double recall = 0;
  double f1 = 0;         // 0 when precision + recall == 0
  double bce_loss = 0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  nlohmann::json to_json() const;
};

/// Positive class is label 1. BCE is the class-weighted mean used in training
/// (unweighted when `class_weights` is empty).
ClassificationMetrics classification_metrics(std::span<const double> probs, std::span<const double> labels,
                                             double threshold = 0.5,
                                             std::optional<std::pair<double, double>> class_weights = {});

/// Mean squared error.
double mse(std::span<const double> preds, std::span<const double> targets);

struct Candidate {
  std::string symbol;
  double prediction = 0;
};

struct DaySelection {
  std::vector<std::string> longs;   // highest predictions, rank order
  std::vector<std::string> shorts;  // lowest predictions, rank order
};

/// Full ordering: descending prediction, ties by ascending symbol.
std::vector<Candidate> rank_candidates(std::span<const Candidate> candidates);

/// Top and bottom k of the ordering; nullopt when fewer than 2k candidates.
std::optional<DaySelection> daily_rank(std::span<const Candidate> candidates, std::size_t k);

/// (sum of long returns - sum of short returns) / (2k); nullopt when a leg has no realized return.
std::optional<double> portfolio_return(const DaySelection& selection,
                                       const std::vector<std::pair<std::string, double>>& realized);

/// One prediction made for `date` (the holding day) and the return realized on it.
struct Observation {
  Date date;
  std::string symbol;
  double prediction = 0;
  double realized = 0;
};

struct DayResult {
  Date date;
  DaySelection selection;
  double portfolio_return = 0;
};

struct SkippedDay {
  Date date;
  std::string reason;
};

struct WeeklyReturn {
  int iso_year = 0;
  int iso_week = 0;
  Date first_day;
  std::size_t days = 0;
  double mean_return = 0;
};

struct BacktestReport {
  std::size_t k = 0;
  std::vector<DayResult> days;
  std::vector<SkippedDay> skipped;
  double average_daily_return = 0;
  std::vector<WeeklyReturn> weekly;

  nlohmann::json to_json() const;
  /// `date,longs,shorts,return`; symbols joined with ';'.
  std::string daily_csv() const;
  /// `iso_year,iso_week,first_day,days,mean_return`.
  std::string weekly_csv() const;
};

/// Ranks each date's observations and holds the selection for that day.
/// Throws DataError when no day could be traded.
BacktestReport backtest(std::span<const Observation> observations, std::size_t k = 5);

}  // namespace i2e::eval
