#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "i2e/tensor.hpp"

namespace i2e::nn {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

/// Ordered, uniquely named parameters of one model.
template <class T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> values);

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }
  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;
  std::size_t count() const;  // scalar count
  void zero_grad();

 private:
  std::vector<Parameter<T>> params_;
};

/// Seeded draws for weight initialization. Bit-stable across platforms.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  double uniform01() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  template <class T>
  std::vector<T> fan_in_uniform(std::size_t fan_in, std::size_t count) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> out(count);
    for (auto& v : out) v = static_cast<T>((2.0 * uniform01() - 1.0) * bound);
    return out;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

template <class T>
struct Dense {
  Tensor<T> weight;  // [d_in, d_out]
  Tensor<T> bias;    // [d_out]; a constant zero when built without bias

  Tensor<T> forward(const Tensor<T>& x) const { return dense(x, weight, bias); }
};

template <class T>
Dense<T> make_dense(ParameterStore<T>& store, Initializer& init, const std::string& name, std::size_t d_in,
                    std::size_t d_out, bool with_bias = true);

template <class T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

template <class T>
LayerNorm<T> make_layer_norm(ParameterStore<T>& store, const std::string& name, std::size_t d);

template <class T>
struct MultiHeadAttention {
  Dense<T> query, key, value, output;
  std::size_t heads = 1;

  /// x: [batch, seq, d_model].
  Tensor<T> forward(const Tensor<T>& x, std::vector<T>* weights = nullptr) const;
};

template <class T>
MultiHeadAttention<T> make_attention(ParameterStore<T>& store, Initializer& init, const std::string& name,
                                     std::size_t d_model, std::size_t heads);

template <class T>
struct FeedForward {
  Dense<T> hidden;
  Dense<T> output;

  Tensor<T> forward(const Tensor<T>& x) const { return output.forward(relu(hidden.forward(x))); }
};

/// Pre-norm encoder block: y = x + MHA(LN1(x)); out = y + FFN(LN2(y)).
template <class T>
struct TransformerBlock {
  LayerNorm<T> norm1;
  MultiHeadAttention<T> attn;
  LayerNorm<T> norm2;
  FeedForward<T> ffn;

  Tensor<T> forward(const Tensor<T>& x) const;
};

template <class T>
TransformerBlock<T> make_transformer_block(ParameterStore<T>& store, Initializer& init, const std::string& name,
                                           std::size_t d_model, std::size_t heads, std::size_t ffn_hidden);

template <class T>
struct LstmLayer {
  Tensor<T> wx;    // [d_in, 4h]
  Tensor<T> wh;    // [h, 4h]
  Tensor<T> bias;  // [4h]; forget-gate slice initialized to 1

  Tensor<T> forward(const Tensor<T>& x) const { return lstm(x, wx, wh, bias); }
};

template <class T>
LstmLayer<T> make_lstm(ParameterStore<T>& store, Initializer& init, const std::string& name, std::size_t d_in,
                       std::size_t hidden);

/// Sinusoidal table [seq_len, d_model]: sin on even columns, cos on odd columns.
/// Throws ShapeError for odd d_model.
template <class T>
std::vector<T> positional_encoding(std::size_t seq_len, std::size_t d_model);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over the trainable parameters of a store.
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::vector<Parameter<T>>& params);
  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Gradient norms below this are compared in absolute terms.
inline constexpr double kGradCheckFloor = 1e-7;

struct GradCheckResult {
  /// max over parameter tensors of ||analytic - numeric|| / max(||analytic||, ||numeric||, kGradCheckFloor)
  double max_rel_error = 0;
  /// max over elements of |a - n| / max(|a|, |n|, 1e-6); diagnostic only
  double max_elementwise_error = 0;
  std::string worst_parameter;
};

/// Compares reverse-mode gradients with central differences for every
/// trainable parameter. `loss_fn` must rebuild the graph on each call.
GradCheckResult gradient_check(const std::function<Tensor<double>()>& loss_fn,
                               std::vector<Parameter<double>>& params, double h = 1e-5);

}  // namespace i2e::nn
