#include "i2e/layers.hpp"

#include <algorithm>
#include <cmath>

#include "i2e/error.hpp"

namespace i2e::nn {

template <class T>
Tensor<T> ParameterStore<T>::add(const std::string& name, Shape shape, std::vector<T> values) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  auto t = Tensor<T>::leaf(std::move(shape), std::move(values), true);
  params_.push_back({name, t, true});
  return t;
}

template <class T>
Parameter<T>* ParameterStore<T>::find(const std::string& name) {
  auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
  return it == params_.end() ? nullptr : &*it;
}

template <class T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
  auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
  return it == params_.end() ? nullptr : &*it;
}

template <class T>
std::size_t ParameterStore<T>::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

template <class T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <class T>
Dense<T> make_dense(ParameterStore<T>& store, Initializer& init, const std::string& name, std::size_t d_in,
                    std::size_t d_out, bool with_bias) {
  Dense<T> d;
  d.weight = store.add(name + ".weight", {d_in, d_out}, init.fan_in_uniform<T>(d_in, d_in * d_out));
  d.bias = with_bias ? store.add(name + ".bias", {d_out}, std::vector<T>(d_out, T(0))) : Tensor<T>::zeros({d_out});
  return d;
}

template <class T>
LayerNorm<T> make_layer_norm(ParameterStore<T>& store, const std::string& name, std::size_t d) {
  LayerNorm<T> ln;
  ln.gain = store.add(name + ".gain", {d}, std::vector<T>(d, T(1)));
  ln.bias = store.add(name + ".bias", {d}, std::vector<T>(d, T(0)));
  return ln;
}

template <class T>
Tensor<T> MultiHeadAttention<T>::forward(const Tensor<T>& x, std::vector<T>* weights) const {
  auto q = query.forward(x);
  auto k = key.forward(x);
  auto v = value.forward(x);
  return output.forward(attention(q, k, v, heads, weights));
}

template <class T>
MultiHeadAttention<T> make_attention(ParameterStore<T>& store, Initializer& init, const std::string& name,
                                     std::size_t d_model, std::size_t heads) {
  if (heads == 0 || d_model % heads != 0) {
    throw ShapeError("attention: d_model " + std::to_string(d_model) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  MultiHeadAttention<T> a;
  a.query = make_dense(store, init, name + ".query", d_model, d_model);
  // A key bias shifts every score in a query row by the same amount; softmax cancels it.
  a.key = make_dense(store, init, name + ".key", d_model, d_model, false);
  a.value = make_dense(store, init, name + ".value", d_model, d_model);
  a.output = make_dense(store, init, name + ".output", d_model, d_model);
  a.heads = heads;
  return a;
}

template <class T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& x) const {
  auto y = add(x, attn.forward(norm1.forward(x)));
  return add(y, ffn.forward(norm2.forward(y)));
}

template <class T>
TransformerBlock<T> make_transformer_block(ParameterStore<T>& store, Initializer& init, const std::string& name,
                                           std::size_t d_model, std::size_t heads, std::size_t ffn_hidden) {
  TransformerBlock<T> b;
  b.norm1 = make_layer_norm(store, name + ".norm1", d_model);
  b.attn = make_attention(store, init, name + ".attn", d_model, heads);
  b.norm2 = make_layer_norm(store, name + ".norm2", d_model);
  b.ffn.hidden = make_dense(store, init, name + ".ffn.hidden", d_model, ffn_hidden);
  b.ffn.output = make_dense(store, init, name + ".ffn.output", ffn_hidden, d_model);
  return b;
}

template <class T>
LstmLayer<T> make_lstm(ParameterStore<T>& store, Initializer& init, const std::string& name, std::size_t d_in,
                       std::size_t hidden) {
  LstmLayer<T> l;
  l.wx = store.add(name + ".wx", {d_in, 4 * hidden}, init.fan_in_uniform<T>(hidden, d_in * 4 * hidden));
  l.wh = store.add(name + ".wh", {hidden, 4 * hidden}, init.fan_in_uniform<T>(hidden, hidden * 4 * hidden));
  std::vector<T> b(4 * hidden, T(0));
  std::fill(b.begin() + static_cast<std::ptrdiff_t>(hidden), b.begin() + static_cast<std::ptrdiff_t>(2 * hidden), T(1));
  l.bias = store.add(name + ".bias", {4 * hidden}, std::move(b));
  return l;
}

template <class T>
std::vector<T> positional_encoding(std::size_t seq_len, std::size_t d_model) {
  if (d_model % 2 != 0) throw ShapeError("positional_encoding: d_model must be even, got " + std::to_string(d_model));
  std::vector<T> pe(seq_len * d_model);
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d_model));
      pe[pos * d_model + 2 * i] = static_cast<T>(std::sin(angle));
      pe[pos * d_model + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

template <class T>
void Adam<T>::step(std::vector<Parameter<T>>& params) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t p = 0; p < params.size(); ++p) {
      m_[p].assign(params[p].tensor.size(), 0.0);
      v_[p].assign(params[p].tensor.size(), 0.0);
    }
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& param = params[p];
    if (!param.trainable) continue;
    auto g = param.tensor.grad();
    if (g.empty()) continue;
    auto w = param.tensor.mutable_values();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      const double update = config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
    }
  }
}

GradCheckResult gradient_check(const std::function<Tensor<double>()>& loss_fn,
                               std::vector<Parameter<double>>& params, double h) {
  for (auto& p : params) p.tensor.zero_grad();
  auto loss = loss_fn();
  if (!std::isfinite(loss.item())) throw DataError("gradient_check: non-finite loss");
  backward(loss);

  auto eval = [&] {
    const double v = loss_fn().item();
    if (!std::isfinite(v)) throw DataError("gradient_check: non-finite loss under perturbation");
    return v;
  };

  GradCheckResult out;
  for (auto& p : params) {
    if (!p.trainable) continue;
    std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    auto w = p.tensor.mutable_values();
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + h;
      const double up = eval();
      w[i] = saved - h;
      const double down = eval();
      w[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      const double elem = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      out.max_elementwise_error = std::max(out.max_elementwise_error, elem);
    }
    // Absolute floor: a gradient that is identically zero leaves only rounding noise in both estimates.
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), kGradCheckFloor});
    const double rel = std::sqrt(diff2) / denom;
    if (out.worst_parameter.empty() || rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst_parameter = p.name;
    }
  }
  return out;
}

#define I2E_INSTANTIATE(T)                                                                                \
  template class ParameterStore<T>;                                                                       \
  template class Adam<T>;                                                                                 \
  template struct MultiHeadAttention<T>;                                                                  \
  template struct TransformerBlock<T>;                                                                    \
  template Dense<T> make_dense<T>(ParameterStore<T>&, Initializer&, const std::string&, std::size_t,      \
                                  std::size_t, bool);                                                     \
  template LayerNorm<T> make_layer_norm<T>(ParameterStore<T>&, const std::string&, std::size_t);          \
  template MultiHeadAttention<T> make_attention<T>(ParameterStore<T>&, Initializer&, const std::string&,  \
                                                   std::size_t, std::size_t);                             \
  template TransformerBlock<T> make_transformer_block<T>(ParameterStore<T>&, Initializer&,                \
                                                         const std::string&, std::size_t, std::size_t,    \
                                                         std::size_t);                                    \
  template LstmLayer<T> make_lstm<T>(ParameterStore<T>&, Initializer&, const std::string&, std::size_t,   \
                                     std::size_t);                                                        \
  template std::vector<T> positional_encoding<T>(std::size_t, std::size_t);

I2E_INSTANTIATE(float)
I2E_INSTANTIATE(double)

#undef I2E_INSTANTIATE

}  // namespace i2e::nn
