#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace i2e::gbt {

enum class Objective { logistic, squared };

std::string to_string(Objective o);
Objective parse_objective(const std::string& s);

struct GbtParams {
  std::size_t n_estimators = 100;
  double learning_rate = 0.03;
  std::size_t max_depth = 9;
  double colsample_bytree = 0.7;
  std::size_t max_leaves = 100;
  Objective objective = Objective::logistic;
  std::uint64_t seed = 1;
  double lambda = 1.0;            // L2 penalty on leaf weights
  double min_child_weight = 1.0;  // minimum hessian sum per child

  void validate() const;
  nlohmann::json to_json() const;
  static GbtParams from_json(const nlohmann::json& j);
  bool operator==(const GbtParams&) const = default;
};

/// Row-major view of n rows by `cols` features.
struct FeatureMatrix {
  std::span<const float> values;
  std::size_t cols = 0;

  std::size_t rows() const { return cols == 0 ? 0 : values.size() / cols; }
  float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;
  int left = -1;
  int right = -1;
  double value = 0;  // leaf weight before the learning rate
  double gain = 0;
  std::size_t depth = 0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

/// Binary tree; node 0 is the root. Rows with x[feature] < threshold go left.
struct Tree {
  std::vector<TreeNode> nodes;
  std::vector<std::size_t> columns;  // sampled feature set, ascending

  double score(std::span<const float> row) const;
  std::size_t leaf_count() const;
  std::size_t depth() const;
  bool operator==(const Tree&) const = default;
};

struct GbtModel {
  GbtParams params;
  std::size_t n_features = 0;
  double base_score = 0;  // margin space
  std::vector<Tree> trees;
  std::vector<double> train_loss;  // weighted mean objective after 0..n rounds

  /// Margin: base + lr * sum of tree scores.
  double margin(std::span<const float> row) const;
  /// Probability (logistic) or raw value (squared).
  double predict_row(std::span<const float> row) const;
  std::vector<double> predict(const FeatureMatrix& x) const;

  nlohmann::json to_json() const;
  static GbtModel from_json(const nlohmann::json& j);
  bool operator==(const GbtModel&) const = default;
};

/// Weighted mean objective of margins `f` against `y`.
double objective_value(Objective obj, std::span<const double> f, std::span<const double> y,
                       std::span<const double> w);

GbtModel fit(const FeatureMatrix& x, std::span<const double> y, std::optional<std::span<const double>> weights,
             const GbtParams& params);

void save_model(const std::filesystem::path& path, const GbtModel& model);
GbtModel load_model(const std::filesystem::path& path);

}  // namespace i2e::gbt
