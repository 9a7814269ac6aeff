#include "i2e/pipeline.hpp"

#include "i2e/digest.hpp"
#include "i2e/error.hpp"

namespace i2e {

FeatureSet ticker_features(const TickerSeries& series, const IndicatorConfig& config) {
  return compute_features(exclude_first_year(series), config);
}

std::vector<Sample> build_universe_samples(const Universe& universe, const IndicatorConfig& config) {
  std::vector<Sample> out;
  for (const auto& [symbol, series] : universe.series_by_symbol) {
    auto s = build_samples(series, config);
    out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return out;
}

std::vector<int> labels_of(std::span<const Sample> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.target_label);
  return out;
}

PreparedData prepare(std::span<const Sample> samples, const SplitSpec& split) {
  auto parts = split_by_date(samples, split);
  if (parts.train.empty()) throw DataError("prepare: training partition is empty");
  PreparedData out;
  out.scaler = fit_scaler(parts.train);
  out.class_weights = class_weights(labels_of(parts.train));
  out.scaled.train = apply_scaler(out.scaler, parts.train);
  out.scaled.validation = apply_scaler(out.scaler, parts.validation);
  out.scaled.test = apply_scaler(out.scaler, parts.test);
  return out;
}

TransferData transfer_data(const PreparedData& index, const PreparedData& stocks) {
  TransferData d;
  d.index_train = make_tensor_dataset(index.scaled.train, Task::classification);
  d.index_val = make_tensor_dataset(index.scaled.validation, Task::classification);
  d.index_weights = index.class_weights;
  d.stock_train = make_tensor_dataset(stocks.scaled.train, Task::classification);
  d.stock_val = make_tensor_dataset(stocks.scaled.validation, Task::classification);
  d.stock_weights = stocks.class_weights;
  return d;
}

std::vector<float> flat_inputs(std::span<const Sample> samples) {
  std::vector<float> out;
  out.reserve(samples.size() * kFlatWidth);
  for (const auto& s : samples) {
    for (double v : s.window) out.push_back(static_cast<float>(v));
  }
  return out;
}

std::vector<RegressionEnsemble::Output> RegressionEnsemble::predict(std::span<const Sample> scaled) const {
  if (!transformer || !lstm || !gbt) throw ConfigError("ensemble: all three models are required");
  for (const auto* m : {transformer.get(), lstm.get()}) {
    if (m->config().task != Task::regression) throw ConfigError("ensemble: network members must be regression models");
  }
  if (gbt->params.objective != gbt::Objective::squared) throw ConfigError("ensemble: gbt member must use squared loss");
  const auto inputs = flat_inputs(scaled);
  const auto t = transformer->predict(inputs);
  const auto l = lstm->predict(inputs);
  const auto g = gbt->predict({inputs, kFlatWidth});
  std::vector<Output> out(scaled.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].transformer = scaler.inverse_target(t[i]);
    out[i].lstm = scaler.inverse_target(l[i]);
    out[i].gbt = scaler.inverse_target(g[i]);
    out[i].ensemble = (out[i].transformer + out[i].lstm + out[i].gbt) / 3.0;
  }
  return out;
}

nlohmann::json RegressionEnsemble::digests() const {
  nlohmann::json j = nlohmann::json::object();
  if (transformer) j["transformer"] = export_weights(*transformer).digest;
  if (lstm) j["lstm"] = export_weights(*lstm).digest;
  if (gbt) j["gbt"] = sha256_hex(gbt->to_json().dump());
  return j;
}

}  // namespace i2e
