#pragma once

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "i2e/dataset.hpp"
#include "i2e/forecasters.hpp"
#include "i2e/gbt.hpp"

namespace i2e {

/// Feature rows as used for samples: first-year exclusion, then indicators.
FeatureSet ticker_features(const TickerSeries& series, const IndicatorConfig& config = {});

/// Samples of every ticker in symbol order.
std::vector<Sample> build_universe_samples(const Universe& universe, const IndicatorConfig& config = {});

/// Partitions scaled with a scaler fitted on the training partition only.
struct PreparedData {
  MinMaxScaler scaler;
  Partitions scaled;
  std::pair<double, double> class_weights;  // from training labels
};

PreparedData prepare(std::span<const Sample> samples, const SplitSpec& split);

std::vector<int> labels_of(std::span<const Sample> samples);

/// Index and stock data for the pretraining comparison, each with its own scaler.
TransferData transfer_data(const PreparedData& index, const PreparedData& stocks);

/// Row-major float copy of the flattened windows.
std::vector<float> flat_inputs(std::span<const Sample> samples);

/// The three regression models averaged for serving and backtests.
struct RegressionEnsemble {
  MinMaxScaler scaler;
  std::shared_ptr<const Model<float>> transformer;
  std::shared_ptr<const Model<float>> lstm;
  std::shared_ptr<const gbt::GbtModel> gbt;

  struct Output {
    double transformer = 0;  // raw return space
    double lstm = 0;
    double gbt = 0;
    double ensemble = 0;  // mean of the three
  };

  /// `scaled` must already be transformed with `scaler`.
  std::vector<Output> predict(std::span<const Sample> scaled) const;
  /// sha256 per member: weight blob for the networks, canonical JSON for the trees.
  nlohmann::json digests() const;
};

}  // namespace i2e
