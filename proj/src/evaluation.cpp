#include "i2e/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "i2e/error.hpp"
#include "i2e/text.hpp"

namespace i2e::eval {

using nlohmann::json;

json ClassificationMetrics::to_json() const {
  return json{{"accuracy", accuracy}, {"precision", precision}, {"recall", recall}, {"f1", f1},
              {"bce_loss", bce_loss}, {"tp", tp},               {"fp", fp},         {"tn", tn},
              {"fn", fn}};
}

ClassificationMetrics classification_metrics(std::span<const double> probs, std::span<const double> labels,
                                             double threshold, std::optional<std::pair<double, double>> class_weights) {
  if (probs.empty()) throw DataError("classification_metrics: empty input");
  if (probs.size() != labels.size()) throw ShapeError("classification_metrics: length mismatch");
  ClassificationMetrics m;
  double loss = 0;
  constexpr double eps = 1e-15;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    const double y = labels[i];
    if (!(p >= 0 && p <= 1)) throw DataError("classification_metrics: probability outside [0, 1]");
    if (y != 0.0 && y != 1.0) throw DataError("classification_metrics: labels must be 0 or 1");
    const bool pred = p > threshold;
    const bool pos = y == 1.0;
    if (pred && pos) ++m.tp;
    else if (pred) ++m.fp;
    else if (pos) ++m.fn;
    else ++m.tn;
    const double w = class_weights ? (pos ? class_weights->second : class_weights->first) : 1.0;
    const double pc = std::clamp(p, eps, 1.0 - eps);
    loss += -w * (y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
  }
  const double n = static_cast<double>(probs.size());
  m.accuracy = static_cast<double>(m.tp + m.tn) / n;
  m.precision = m.tp + m.fp == 0 ? 0.0 : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  m.recall = m.tp + m.fn == 0 ? 0.0 : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  m.f1 = m.precision + m.recall == 0 ? 0.0 : 2 * m.precision * m.recall / (m.precision + m.recall);
  m.bce_loss = loss / n;
  return m;
}

double mse(std::span<const double> preds, std::span<const double> targets) {
  if (preds.empty()) throw DataError("mse: empty input");
  if (preds.size() != targets.size()) throw ShapeError("mse: length mismatch");
  double s = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += (preds[i] - targets[i]) * (preds[i] - targets[i]);
  return s / static_cast<double>(preds.size());
}

std::vector<Candidate> rank_candidates(std::span<const Candidate> candidates) {
  std::vector<Candidate> out(candidates.begin(), candidates.end());
  std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    if (a.prediction != b.prediction) return a.prediction > b.prediction;
    return a.symbol < b.symbol;
  });
  std::set<std::string> seen;
  for (const auto& c : out) {
    if (std::isnan(c.prediction)) throw DataError("rank: NaN prediction for " + c.symbol);
    if (!seen.insert(c.symbol).second) throw DataError("rank: duplicate symbol " + c.symbol);
  }
  return out;
}

std::optional<DaySelection> daily_rank(std::span<const Candidate> candidates, std::size_t k) {
  if (candidates.size() < 2 * k) return std::nullopt;
  const auto ranked = rank_candidates(candidates);
  DaySelection s;
  for (std::size_t i = 0; i < k; ++i) s.longs.push_back(ranked[i].symbol);
  for (std::size_t i = ranked.size() - k; i < ranked.size(); ++i) s.shorts.push_back(ranked[i].symbol);
  return s;
}

std::optional<double> portfolio_return(const DaySelection& selection,
                                       const std::vector<std::pair<std::string, double>>& realized) {
  const std::size_t k = selection.longs.size();
  if (k == 0 || selection.shorts.size() != k) throw DataError("portfolio_return: need k >= 1 longs and k shorts");
  const auto lookup = [&](const std::string& s) -> std::optional<double> {
    for (const auto& [sym, r] : realized) {
      if (sym == s && std::isfinite(r)) return r;
    }
    return std::nullopt;
  };
  double total = 0;
  for (const auto& s : selection.longs) {
    auto r = lookup(s);
    if (!r) return std::nullopt;
    total += *r;
  }
  for (const auto& s : selection.shorts) {
    auto r = lookup(s);
    if (!r) return std::nullopt;
    total -= *r;
  }
  return total / static_cast<double>(2 * k);
}

BacktestReport backtest(std::span<const Observation> observations, std::size_t k) {
  if (k == 0) throw ConfigError("backtest: k must be >= 1");
  std::map<Date, std::vector<const Observation*>> by_date;
  for (const auto& o : observations) by_date[o.date].push_back(&o);

  BacktestReport report;
  report.k = k;
  for (const auto& [date, obs] : by_date) {
    std::vector<Candidate> candidates;
    std::vector<std::pair<std::string, double>> realized;
    for (const auto* o : obs) {
      candidates.push_back({o->symbol, o->prediction});
      realized.emplace_back(o->symbol, o->realized);
    }
    auto selection = daily_rank(candidates, k);
    if (!selection) {
      report.skipped.push_back({date, "only " + std::to_string(candidates.size()) + " candidates for k=" +
                                          std::to_string(k)});
      continue;
    }
    auto r = portfolio_return(*selection, realized);
    if (!r) {
      report.skipped.push_back({date, "missing realized return for a selected symbol"});
      continue;
    }
    report.days.push_back({date, std::move(*selection), *r});
  }
  if (report.days.empty()) throw DataError("backtest: no tradable days");

  double sum = 0;
  for (const auto& d : report.days) sum += d.portfolio_return;
  report.average_daily_return = sum / static_cast<double>(report.days.size());

  for (const auto& d : report.days) {
    const auto [year, week] = iso_week(d.date);
    if (report.weekly.empty() || report.weekly.back().iso_year != year || report.weekly.back().iso_week != week) {
      report.weekly.push_back({year, week, d.date, 0, 0.0});
    }
    auto& w = report.weekly.back();
    w.mean_return += d.portfolio_return;
    ++w.days;
  }
  for (auto& w : report.weekly) w.mean_return /= static_cast<double>(w.days);
  return report;
}

json BacktestReport::to_json() const {
  json jd = json::array();
  for (const auto& d : days) {
    jd.push_back({{"date", format_date(d.date)},
                  {"longs", d.selection.longs},
                  {"shorts", d.selection.shorts},
                  {"return", d.portfolio_return}});
  }
  json js = json::array();
  for (const auto& s : skipped) js.push_back({{"date", format_date(s.date)}, {"reason", s.reason}});
  json jw = json::array();
  for (const auto& w : weekly) {
    jw.push_back({{"iso_year", w.iso_year},
                  {"iso_week", w.iso_week},
                  {"first_day", format_date(w.first_day)},
                  {"days", w.days},
                  {"mean_return", w.mean_return}});
  }
  return json{{"k", k},
              {"traded_days", days.size()},
              {"average_daily_return", average_daily_return},
              {"days", jd},
              {"skipped", js},
              {"weekly", jw}};
}

std::string BacktestReport::daily_csv() const {
  std::string out = "date,longs,shorts,return\n";
  for (const auto& d : days) {
    out += format_date(d.date) + "," + join(d.selection.longs, ";") + "," + join(d.selection.shorts, ";") + "," +
           format_double(d.portfolio_return) + "\n";
  }
  return out;
}

std::string BacktestReport::weekly_csv() const {
  std::string out = "iso_year,iso_week,first_day,days,mean_return\n";
  for (const auto& w : weekly) {
    out += std::to_string(w.iso_year) + "," + std::to_string(w.iso_week) + "," + format_date(w.first_day) + "," +
           std::to_string(w.days) + "," + format_double(w.mean_return) + "\n";
  }
  return out;
}

}  // namespace i2e::eval
