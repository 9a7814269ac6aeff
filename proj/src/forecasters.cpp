#include "i2e/forecasters.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "i2e/digest.hpp"
#include "i2e/error.hpp"
#include "i2e/text.hpp"

namespace i2e {

using nlohmann::json;
using nn::Shape;
using nn::Tensor;

std::string to_string(Backbone b) { return b == Backbone::transformer ? "transformer" : "lstm"; }
std::string to_string(Task t) { return t == Task::classification ? "classification" : "regression"; }

Backbone parse_backbone(const std::string& s) {
  if (s == "transformer") return Backbone::transformer;
  if (s == "lstm") return Backbone::lstm;
  throw ConfigError("unknown backbone '" + s + "'");
}

Task parse_task(const std::string& s) {
  if (s == "classification") return Task::classification;
  if (s == "regression") return Task::regression;
  throw ConfigError("unknown task '" + s + "'");
}

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (blocks < 1) throw ConfigError("model: block count must be >= 1");
  if (head_widths.empty()) throw ConfigError("model: head needs at least one dense layer");
  for (auto w : head_widths) {
    if (w == 0) throw ConfigError("model: head widths must be positive");
  }
  if (backbone == Backbone::transformer) {
    if (d_model == 0 || d_model % 2 != 0) throw ConfigError("model: d_model must be positive and even");
    if (heads == 0 || d_model % heads != 0) throw ConfigError("model: d_model must be divisible by heads");
    if (ffn_hidden == 0) throw ConfigError("model: ffn_hidden must be positive");
  } else if (lstm_hidden == 0) {
    throw ConfigError("model: lstm_hidden must be positive");
  }
}

bool ModelConfig::same_backbone(const ModelConfig& o) const {
  if (backbone != o.backbone || blocks != o.blocks) return false;
  if (backbone == Backbone::transformer) {
    return d_model == o.d_model && heads == o.heads && ffn_hidden == o.ffn_hidden;
  }
  return lstm_hidden == o.lstm_hidden;
}

json ModelConfig::to_json() const {
  return json{{"backbone", to_string(backbone)}, {"blocks", blocks},         {"head_widths", head_widths},
              {"task", to_string(task)},         {"d_model", d_model},       {"heads", heads},
              {"ffn_hidden", ffn_hidden},        {"lstm_hidden", lstm_hidden}, {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  static const std::vector<std::string> known = {"backbone", "blocks", "head_widths", "task", "d_model",
                                                 "heads",    "ffn_hidden", "lstm_hidden", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("model config: unknown key '" + key + "'");
    }
  }
  try {
    if (j.contains("backbone")) c.backbone = parse_backbone(j["backbone"].get<std::string>());
    if (j.contains("blocks")) c.blocks = j["blocks"].get<std::size_t>();
    if (j.contains("head_widths")) c.head_widths = j["head_widths"].get<std::vector<std::size_t>>();
    if (j.contains("task")) c.task = parse_task(j["task"].get<std::string>());
    if (j.contains("d_model")) c.d_model = j["d_model"].get<std::size_t>();
    if (j.contains("heads")) c.heads = j["heads"].get<std::size_t>();
    if (j.contains("ffn_hidden")) c.ffn_hidden = j["ffn_hidden"].get<std::size_t>();
    if (j.contains("lstm_hidden")) c.lstm_hidden = j["lstm_hidden"].get<std::size_t>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Model

template <class T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)), init_(config_.seed) {
  config_.validate();
  std::size_t seq_width = 0;
  if (config_.backbone == Backbone::transformer) {
    const std::size_t d = config_.d_model;
    input_proj_ = nn::make_dense(store_, init_, "input.proj", kFeatureCount, d);
    positions_ = nn::positional_encoding<T>(kWindowDays, d);
    for (std::size_t i = 0; i < config_.blocks; ++i) {
      blocks_.push_back(nn::make_transformer_block(store_, init_, "blocks." + std::to_string(i), d, config_.heads,
                                                   config_.ffn_hidden));
    }
    final_norm_ = nn::make_layer_norm(store_, "final_norm", d);
    seq_width = d;
  } else {
    std::size_t d_in = kFeatureCount;
    for (std::size_t i = 0; i < config_.blocks; ++i) {
      lstm_.push_back(nn::make_lstm(store_, init_, "lstm." + std::to_string(i), d_in, config_.lstm_hidden));
      d_in = config_.lstm_hidden;
    }
    seq_width = config_.lstm_hidden;
  }
  std::size_t width = kWindowDays * seq_width;
  for (std::size_t i = 0; i < config_.head_widths.size(); ++i) {
    head_.push_back(nn::make_dense(store_, init_, "head.dense" + std::to_string(i), width, config_.head_widths[i]));
    width = config_.head_widths[i];
  }
  out_ = nn::make_dense(store_, init_, "head.out", width, 1);
}

template <class T>
Tensor<T> Model<T>::forward(const Tensor<T>& x) const {
  if (x.shape().size() != 3 || x.dim(1) != kWindowDays || x.dim(2) != kFeatureCount) {
    throw ShapeError("model input must be [batch, 10, 15], got " + nn::shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  Tensor<T> h;
  std::size_t width = 0;
  if (config_.backbone == Backbone::transformer) {
    h = input_proj_.forward(x);
    h = nn::add_broadcast(h, Tensor<T>::constant({kWindowDays, config_.d_model}, positions_));
    for (const auto& block : blocks_) h = block.forward(h);
    h = final_norm_.forward(h);
    width = kWindowDays * config_.d_model;
  } else {
    h = x;
    for (const auto& layer : lstm_) h = layer.forward(h);
    width = kWindowDays * config_.lstm_hidden;
  }
  h = nn::reshape(h, {batch, width});
  for (const auto& dense : head_) h = nn::relu(dense.forward(h));
  return out_.forward(h);
}

template <class T>
std::vector<double> Model<T>::predict(std::span<const T> inputs, std::size_t batch_size) const {
  if (inputs.size() % kFlatWidth != 0) throw ShapeError("predict: input size is not a multiple of 150");
  const std::size_t n = inputs.size() / kFlatWidth;
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t b = std::min(batch_size, n - start);
    std::vector<T> chunk(inputs.begin() + static_cast<std::ptrdiff_t>(start * kFlatWidth),
                         inputs.begin() + static_cast<std::ptrdiff_t>((start + b) * kFlatWidth));
    auto logits = forward(Tensor<T>::constant({b, kWindowDays, kFeatureCount}, std::move(chunk)));
    for (T z : logits.values()) {
      out.push_back(config_.task == Task::classification ? static_cast<double>(nn::stable_sigmoid(z))
                                                         : static_cast<double>(z));
    }
  }
  return out;
}

template <class T>
bool Model<T>::swap_head(Task task) {
  if (task == config_.task) return false;
  config_.task = task;
  ++swaps_;
  const std::size_t fan_in = out_.weight.dim(0);
  auto fresh = init_.fan_in_uniform<T>(fan_in, fan_in);
  auto w = out_.weight.mutable_values();
  std::copy(fresh.begin(), fresh.end(), w.begin());
  auto b = out_.bias.mutable_values();
  std::fill(b.begin(), b.end(), T(0));
  return true;
}

template <class T>
void Model<T>::freeze_backbone(bool frozen) {
  for (auto& p : store_.all()) {
    if (p.name.rfind("head.", 0) != 0) p.trainable = !frozen;
  }
}

template <class T>
template <class U>
Model<U> Model<T>::cast() const {
  Model<U> out(config_);
  auto& dst = out.params().all();
  const auto& src = store_.all();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto from = src[i].tensor.values();
    auto to = dst[i].tensor.mutable_values();
    for (std::size_t k = 0; k < from.size(); ++k) to[k] = static_cast<U>(from[k]);
    dst[i].trainable = src[i].trainable;
  }
  return out;
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;

// ---------------------------------------------------------------------------
// Training

TensorDataset make_tensor_dataset(std::span<const Sample> samples, Task task) {
  TensorDataset d;
  d.inputs.reserve(samples.size() * kFlatWidth);
  d.targets.reserve(samples.size());
  for (const auto& s : samples) {
    for (double v : s.window) d.inputs.push_back(static_cast<float>(v));
    d.targets.push_back(task == Task::classification ? static_cast<float>(s.target_label)
                                                     : static_cast<float>(s.target_return));
  }
  return d;
}

json TrainSchedule::to_json() const {
  return json{{"lr", adam.lr},           {"beta1", adam.beta1},         {"beta2", adam.beta2},
              {"eps", adam.eps},         {"batch_size", batch_size},    {"max_epochs", max_epochs},
              {"patience", patience},    {"data_seed", data_seed},      {"freeze_backbone", freeze_backbone}};
}

json TrainRun::to_json() const {
  json epochs_json = json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  }
  return json{{"config", config.to_json()},   {"train_id", train_id},       {"val_id", val_id},
              {"epochs", epochs_json},        {"best_epoch", best_epoch},   {"best_val_loss", best_val_loss},
              {"weights_digest", weights_digest}, {"seed", seed},         {"schedule", schedule.to_json()}};
}

namespace {

struct Batch {
  std::vector<float> x;
  std::vector<float> y;
  std::vector<float> w;
};

Batch gather(const TensorDataset& d, std::span<const std::size_t> idx,
             const std::optional<std::pair<double, double>>& cw) {
  Batch b;
  b.x.resize(idx.size() * kFlatWidth);
  b.y.resize(idx.size());
  if (cw) b.w.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(d.inputs.begin() + static_cast<std::ptrdiff_t>(idx[i] * kFlatWidth), kFlatWidth,
                b.x.begin() + static_cast<std::ptrdiff_t>(i * kFlatWidth));
    b.y[i] = d.targets[idx[i]];
    if (cw) b.w[i] = static_cast<float>(b.y[i] > 0.5f ? cw->second : cw->first);
  }
  return b;
}

Tensor<float> batch_loss(const Model<float>& model, const Batch& b, LossKind loss) {
  const std::size_t n = b.y.size();
  auto logits = model.forward(Tensor<float>::constant({n, kWindowDays, kFeatureCount}, b.x));
  if (loss == LossKind::weighted_bce) return nn::weighted_bce_with_logits<float>(logits, b.y, b.w);
  return nn::mse<float>(logits, b.y);
}

std::vector<std::vector<float>> snapshot(const Model<float>& model) {
  std::vector<std::vector<float>> out;
  for (const auto& p : model.params().all()) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void restore(Model<float>& model, const std::vector<std::vector<float>>& snap) {
  auto& params = model.params().all();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = params[i].tensor.mutable_values();
    std::copy(snap[i].begin(), snap[i].end(), v.begin());
  }
}

}  // namespace

double evaluate_loss(const Model<float>& model, const TensorDataset& data, LossKind loss,
                     std::optional<std::pair<double, double>> class_weights, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("evaluate_loss: empty dataset");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  double total = 0;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t b = std::min(batch_size, idx.size() - start);
    auto batch = gather(data, std::span(idx).subspan(start, b), class_weights);
    total += static_cast<double>(batch_loss(model, batch, loss).item()) * static_cast<double>(b);
  }
  return total / static_cast<double>(data.size());
}

TrainRun train(Model<float>& model, const TensorDataset& train_set, const TensorDataset& val_set, LossKind loss,
               std::optional<std::pair<double, double>> class_weights, const TrainSchedule& schedule,
               std::string train_id, std::string val_id) {
  if (train_set.size() == 0) throw DataError("train: empty training set");
  if (schedule.batch_size == 0 || schedule.max_epochs == 0) throw ConfigError("train: batch size and epochs must be positive");
  if (loss == LossKind::weighted_bce && !class_weights) {
    throw DataError("train: classification requires class weights");
  }
  const auto weights = loss == LossKind::weighted_bce ? class_weights : std::nullopt;

  TrainRun run;
  run.config = model.config();
  run.train_id = std::move(train_id);
  run.val_id = std::move(val_id);
  run.seed = model.config().seed;
  run.schedule = schedule;

  model.freeze_backbone(schedule.freeze_backbone);
  nn::Adam<float> optimizer(schedule.adam);
  std::mt19937_64 rng(schedule.data_seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  auto best = snapshot(model);
  double best_val = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double sum = 0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += schedule.batch_size, ++batch_no) {
      const std::size_t b = std::min(schedule.batch_size, order.size() - start);
      auto batch = gather(train_set, std::span(order).subspan(start, b), weights);
      model.params().zero_grad();
      auto l = batch_loss(model, batch, loss);
      if (!std::isfinite(l.item())) {
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(batch_no));
      }
      nn::backward(l);
      optimizer.step(model.params().all());
      sum += static_cast<double>(l.item()) * static_cast<double>(b);
    }
    EpochLog log{epoch, sum / static_cast<double>(train_set.size()), 0.0};
    log.val_loss = val_set.size() > 0 ? evaluate_loss(model, val_set, loss, weights) : log.train_loss;
    run.epochs.push_back(log);
    if (log.val_loss < best_val) {
      best_val = log.val_loss;
      run.best_epoch = epoch;
      best = snapshot(model);
    } else if (epoch - run.best_epoch >= schedule.patience) {
      break;
    }
  }
  restore(model, best);
  model.freeze_backbone(false);
  run.best_val_loss = best_val;
  run.weights_digest = export_weights(model).digest;
  return run;
}

// ---------------------------------------------------------------------------
// Weights

namespace {

constexpr char kWeightsMagic[4] = {'I', '2', 'E', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;

std::string data_blob(const std::vector<NamedArray>& params) {
  std::string blob;
  for (const auto& p : params) {
    blob.append(reinterpret_cast<const char*>(p.values.data()), p.values.size() * sizeof(float));
  }
  return blob;
}

}  // namespace

ModelWeights export_weights(const Model<float>& model) {
  ModelWeights w;
  w.version = kWeightsVersion;
  w.config = model.config();
  for (const auto& p : model.params().all()) {
    w.params.push_back({p.name, p.tensor.shape(), {p.tensor.values().begin(), p.tensor.values().end()}});
  }
  w.digest = sha256_hex(data_blob(w.params));
  return w;
}

void import_weights(Model<float>& model, const ModelWeights& weights) {
  auto& params = model.params().all();
  std::vector<std::string> problems;
  if (params.size() != weights.params.size()) {
    problems.push_back("parameter count " + std::to_string(weights.params.size()) + " vs " +
                       std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < std::min(params.size(), weights.params.size()); ++i) {
    if (params[i].name != weights.params[i].name || params[i].tensor.shape() != weights.params[i].shape) {
      problems.push_back(weights.params[i].name + nn::shape_str(weights.params[i].shape) + " vs " +
                         params[i].name + nn::shape_str(params[i].tensor.shape()));
    }
  }
  if (!problems.empty()) throw ConfigError("weights do not match model: " + join(problems, "; "));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = params[i].tensor.mutable_values();
    std::copy(weights.params[i].values.begin(), weights.params[i].values.end(), v.begin());
  }
}

Model<float> model_from_weights(const ModelWeights& weights) {
  Model<float> m(weights.config);
  import_weights(m, weights);
  return m;
}

void transfer_init(Model<float>& target, const ModelWeights& source) {
  if (!target.config().same_backbone(source.config)) {
    throw ConfigError("transfer_init: backbone mismatch (source " + source.config.to_json().dump() + ", target " +
                      target.config().to_json().dump() + ")");
  }
  std::vector<std::string> problems;
  for (const auto& sp : source.params) {
    auto* tp = target.params().find(sp.name);
    if (!tp) problems.push_back(sp.name + ": missing in target");
    else if (tp->tensor.shape() != sp.shape) {
      problems.push_back(sp.name + ": source " + nn::shape_str(sp.shape) + " vs target " +
                         nn::shape_str(tp->tensor.shape()));
    }
  }
  for (const auto& tp : target.params().all()) {
    bool present = std::any_of(source.params.begin(), source.params.end(),
                               [&](const NamedArray& a) { return a.name == tp.name; });
    if (!present) problems.push_back(tp.name + ": missing in source");
  }
  if (!problems.empty()) throw ConfigError("transfer_init: " + join(problems, "; "));
  for (const auto& sp : source.params) {
    auto v = target.params().find(sp.name)->tensor.mutable_values();
    std::copy(sp.values.begin(), sp.values.end(), v.begin());
  }
}

std::vector<std::pair<std::string, std::string>> parameter_digests(const Model<float>& model) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& p : model.params().all()) out.emplace_back(p.name, sha256_of(p.tensor.values()));
  return out;
}

void save_weights(const std::filesystem::path& path, const ModelWeights& weights) {
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (const auto& p : weights.params) {
    manifest.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}, {"count", p.values.size()}});
    offset += p.values.size() * sizeof(float);
  }
  const std::string blob = data_blob(weights.params);
  json header{{"format", "i2e-weights"},
              {"version", weights.version},
              {"config", weights.config.to_json()},
              {"digest_algorithm", "sha256"},
              {"digest", sha256_hex(blob)},
              {"data_bytes", blob.size()},
              {"parameters", manifest}};
  const std::string header_text = header.dump();
  std::string file(kWeightsMagic, sizeof kWeightsMagic);
  const std::uint32_t version = kWeightsVersion;
  const std::uint64_t header_len = header_text.size();
  file.append(reinterpret_cast<const char*>(&version), sizeof version);
  file.append(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  file += header_text;
  file += blob;
  write_file_atomic(path, file);
}

ModelWeights load_weights(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  const std::string file = read_file(path);
  const std::string where = path.string() + ": ";
  constexpr std::size_t prefix = sizeof kWeightsMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (file.size() < prefix || std::memcmp(file.data(), kWeightsMagic, sizeof kWeightsMagic) != 0) {
    throw FormatError(where + "not an i2e weight file");
  }
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  std::memcpy(&version, file.data() + 4, sizeof version);
  std::memcpy(&header_len, file.data() + 8, sizeof header_len);
  if (version != kWeightsVersion) throw FormatError(where + "unknown format version " + std::to_string(version));
  if (file.size() < prefix + header_len) throw FormatError(where + "truncated header");

  json header;
  try {
    header = json::parse(file.substr(prefix, header_len));
  } catch (const json::exception& e) {
    throw FormatError(where + "bad header: " + e.what());
  }
  const std::string blob = file.substr(prefix + header_len);
  if (blob.size() != header.at("data_bytes").get<std::size_t>()) throw FormatError(where + "truncated data");
  if (header.at("digest_algorithm") != "sha256") throw FormatError(where + "unsupported digest algorithm");
  const std::string digest = sha256_hex(blob);
  if (digest != header.at("digest").get<std::string>()) throw DigestError(where + "digest mismatch");

  ModelWeights w;
  w.version = static_cast<int>(version);
  w.config = ModelConfig::from_json(header.at("config"));
  w.digest = digest;
  for (const auto& entry : header.at("parameters")) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if (count != nn::numel(a.shape) || offset + count * sizeof(float) > blob.size()) {
      throw FormatError(where + "bad manifest entry for " + a.name);
    }
    a.values.resize(count);
    std::memcpy(a.values.data(), blob.data() + offset, count * sizeof(float));
    w.params.push_back(std::move(a));
  }
  if (expected && !(w.config == *expected)) {
    throw ConfigError(where + "config mismatch: file has " + w.config.to_json().dump() + ", expected " +
                      expected->to_json().dump());
  }
  return w;
}

std::vector<double> ensemble_predict(const std::vector<std::vector<double>>& members) {
  if (members.empty()) throw DataError("ensemble_predict: no members");
  const std::size_t n = members.front().size();
  for (const auto& m : members) {
    if (m.size() != n) throw DataError("ensemble_predict: member prediction counts differ");
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (const auto& m : members) s += m[i];
    out[i] = s / static_cast<double>(members.size());
  }
  return out;
}

TransferComparison compare_transfer(const ModelConfig& config, const TransferData& data,
                                    const TrainSchedule& pretrain_schedule,
                                    const TrainSchedule& finetune_schedule) {
  ModelConfig cls = config;
  cls.task = Task::classification;
  TransferComparison out;

  Model<float> source(cls);
  out.pretrain = train(source, data.index_train, data.index_val, LossKind::weighted_bce, data.index_weights,
                       pretrain_schedule, "index-train", "index-validation");
  const auto source_weights = export_weights(source);

  Model<float> pretrained(cls);
  transfer_init(pretrained, source_weights);
  out.pretrained_finetune = train(pretrained, data.stock_train, data.stock_val, LossKind::weighted_bce,
                                  data.stock_weights, finetune_schedule, "stock-train", "stock-validation");

  Model<float> scratch(cls);
  out.scratch = train(scratch, data.stock_train, data.stock_val, LossKind::weighted_bce, data.stock_weights,
                      finetune_schedule, "stock-train", "stock-validation");

  out.pretrained_val_bce = out.pretrained_finetune.best_val_loss;
  out.scratch_val_bce = out.scratch.best_val_loss;
  return out;
}

}  // namespace i2e
