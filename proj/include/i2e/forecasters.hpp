#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "i2e/dataset.hpp"
#include "i2e/layers.hpp"

namespace i2e {

enum class Backbone { transformer, lstm };
enum class Task { classification, regression };

std::string to_string(Backbone b);
std::string to_string(Task t);
Backbone parse_backbone(const std::string& s);
Task parse_task(const std::string& s);

struct ModelConfig {
  Backbone backbone = Backbone::transformer;
  std::size_t blocks = 4;  // encoder blocks or stacked LSTM layers
  std::vector<std::size_t> head_widths{128, 64, 32};
  Task task = Task::classification;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 128;
  std::size_t lstm_hidden = 64;
  std::uint64_t seed = 1;

  void validate() const;
  /// Same backbone kind and dimensions (task, seed and head may differ).
  bool same_backbone(const ModelConfig& other) const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

/// Encoder (transformer blocks or LSTM stack) + flattened dense head + one-node output.
template <class T>
class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore<T>& params() { return store_; }
  const nn::ParameterStore<T>& params() const { return store_; }

  /// x: [batch, 10, 15] -> output pre-activation [batch, 1].
  nn::Tensor<T> forward(const nn::Tensor<T>& x) const;
  /// Probability for classification, the (scaled) return for regression.
  std::vector<double> predict(std::span<const T> inputs, std::size_t batch_size = 256) const;

  /// Re-initializes the output layer for `task`. Returns false (no change) for the current task.
  bool swap_head(Task task);

  /// Marks every parameter outside the dense head as non-trainable.
  void freeze_backbone(bool frozen);

  /// Same configuration and parameter values in another precision.
  template <class U>
  Model<U> cast() const;

 private:
  ModelConfig config_;
  nn::Initializer init_;
  nn::ParameterStore<T> store_;
  nn::Dense<T> input_proj_;
  std::vector<T> positions_;
  std::vector<nn::TransformerBlock<T>> blocks_;
  nn::LayerNorm<T> final_norm_;
  std::vector<nn::LstmLayer<T>> lstm_;
  std::vector<nn::Dense<T>> head_;
  nn::Dense<T> out_;
  std::size_t swaps_ = 0;
};

/// Row-major float inputs [n, 150] and per-sample targets.
struct TensorDataset {
  std::vector<float> inputs;
  std::vector<float> targets;
  std::size_t size() const { return targets.size(); }
};

TensorDataset make_tensor_dataset(std::span<const Sample> samples, Task task);

enum class LossKind { weighted_bce, mse };

struct TrainSchedule {
  nn::AdamConfig adam;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  /// Seed of the per-epoch shuffling; shared across arms of a comparison.
  std::uint64_t data_seed = 1;
  bool freeze_backbone = false;
  nlohmann::json to_json() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  bool operator==(const EpochLog&) const = default;
};

struct TrainRun {
  ModelConfig config;
  std::string train_id;
  std::string val_id;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  std::string weights_digest;
  std::uint64_t seed = 0;
  TrainSchedule schedule;

  nlohmann::json to_json() const;
};

/// Loss of `model` on a dataset (same definition as the training objective).
double evaluate_loss(const Model<float>& model, const TensorDataset& data, LossKind loss,
                     std::optional<std::pair<double, double>> class_weights, std::size_t batch_size = 512);

/// Minibatch Adam with early stopping on validation loss; the best epoch's
/// weights are restored before returning.
TrainRun train(Model<float>& model, const TensorDataset& train_set, const TensorDataset& val_set, LossKind loss,
               std::optional<std::pair<double, double>> class_weights, const TrainSchedule& schedule,
               std::string train_id = "train", std::string val_id = "validation");

struct NamedArray {
  std::string name;
  nn::Shape shape;
  std::vector<float> values;
  bool operator==(const NamedArray&) const = default;
};

struct ModelWeights {
  int version = 1;
  ModelConfig config;
  std::vector<NamedArray> params;
  std::string digest;  // sha256 of the concatenated little-endian float blocks
};

ModelWeights export_weights(const Model<float>& model);
/// Requires the exact parameter name/shape set of `model`.
void import_weights(Model<float>& model, const ModelWeights& weights);
Model<float> model_from_weights(const ModelWeights& weights);

/// Copies every source parameter into `target`. Throws ConfigError if the
/// backbones differ or any name/shape does not match, listing the offenders.
void transfer_init(Model<float>& target, const ModelWeights& source);

/// Per-parameter sha256 of the raw values.
std::vector<std::pair<std::string, std::string>> parameter_digests(const Model<float>& model);

void save_weights(const std::filesystem::path& path, const ModelWeights& weights);
/// Verifies magic, version, length and digest; with `expected` also the config echo.
ModelWeights load_weights(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = {});

/// Per-sample arithmetic mean of k prediction vectors.
std::vector<double> ensemble_predict(const std::vector<std::vector<double>>& members);

/// Both arms of the index-pretraining comparison for one seed.
struct TransferComparison {
  TrainRun pretrain;
  TrainRun pretrained_finetune;
  TrainRun scratch;
  double pretrained_val_bce = 0;
  double scratch_val_bce = 0;
};

struct TransferData {
  TensorDataset index_train, index_val;
  std::pair<double, double> index_weights;
  TensorDataset stock_train, stock_val;
  std::pair<double, double> stock_weights;
};

/// Pretrains on the index, then fine-tunes it and a same-seed random
/// initialization on the stocks with identical data order.
TransferComparison compare_transfer(const ModelConfig& config, const TransferData& data,
                                    const TrainSchedule& pretrain_schedule,
                                    const TrainSchedule& finetune_schedule);

}  // namespace i2e
