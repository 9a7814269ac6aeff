#include "i2e/config.hpp"

#include <cstdlib>
#include <set>

#include "i2e/error.hpp"
#include "i2e/text.hpp"

namespace i2e {

using nlohmann::json;

namespace {

std::string to_string(DataSource s) {
  switch (s) {
    case DataSource::synthetic: return "synthetic";
    case DataSource::csv: return "csv";
    case DataSource::http: return "http";
  }
  return "?";
}

DataSource parse_source(const std::string& s) {
  if (s == "synthetic") return DataSource::synthetic;
  if (s == "csv") return DataSource::csv;
  if (s == "http") return DataSource::http;
  throw ConfigError("data.source must be synthetic, csv or http, got '" + s + "'");
}

// Reads one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + ": expected an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(dotted(key) + ": wrong type (" + j_.at(key).dump() + ")");
    }
  }

  void date(const std::string& key, Date& out) {
    std::string text;
    get(key, text);
    if (text.empty()) return;
    try {
      out = parse_date(text);
    } catch (const Error& e) {
      throw ConfigError(dotted(key) + ": " + e.what());
    }
  }

  std::optional<Section> child(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), dotted(key));
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown config key '" + dotted(key) + "'");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }
  std::string dotted(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

json range_json(const DateRange& r) { return {{"first", format_date(r.first)}, {"last", format_date(r.last)}}; }

void read_range(Section& s, DateRange& r) {
  s.date("first", r.first);
  s.date("last", r.last);
  s.finish();
}

json schedule_json(const TrainSchedule& t) {
  return {{"lr", t.adam.lr},
          {"beta1", t.adam.beta1},
          {"beta2", t.adam.beta2},
          {"eps", t.adam.eps},
          {"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs},
          {"patience", t.patience},
          {"freeze_backbone", t.freeze_backbone}};
}

void read_schedule(Section& s, TrainSchedule& t) {
  s.get("lr", t.adam.lr);
  s.get("beta1", t.adam.beta1);
  s.get("beta2", t.adam.beta2);
  s.get("eps", t.adam.eps);
  s.get("batch_size", t.batch_size);
  s.get("max_epochs", t.max_epochs);
  s.get("patience", t.patience);
  s.get("freeze_backbone", t.freeze_backbone);
  s.finish();
}

void validate_schedule(const TrainSchedule& t, const std::string& name) {
  if (!(t.adam.lr >= 0)) throw ConfigError(name + ".lr must be >= 0");
  if (!(t.adam.beta1 >= 0 && t.adam.beta1 < 1) || !(t.adam.beta2 >= 0 && t.adam.beta2 < 1)) {
    throw ConfigError(name + ": betas must be in [0, 1)");
  }
  if (!(t.adam.eps > 0)) throw ConfigError(name + ".eps must be > 0");
  if (t.batch_size == 0) throw ConfigError(name + ".batch_size must be >= 1");
  if (t.max_epochs == 0) throw ConfigError(name + ".max_epochs must be >= 1");
}

}  // namespace

RunConfig::RunConfig() {
  lstm.backbone = Backbone::lstm;
  apply_seed(seed);
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  transformer.seed = s;
  lstm.seed = s;
  pretrain.data_seed = s;
  finetune.data_seed = s + 1000;
  gbt.seed = s;
  data.synthetic.seed = s;
}

void RunConfig::validate() const {
  split.validate();
  transformer.validate();
  lstm.validate();
  if (transformer.backbone != Backbone::transformer) throw ConfigError("transformer: backbone must be transformer");
  if (lstm.backbone != Backbone::lstm) throw ConfigError("lstm: backbone must be lstm");
  validate_schedule(pretrain, "training.pretrain");
  validate_schedule(finetune, "training.finetune");
  gbt.validate();
  if (backtest_k == 0) throw ConfigError("backtest.k must be >= 1");
  if (service.port < 0 || service.port > 65535) throw ConfigError("service.port out of range");
  if (data.range.empty()) throw ConfigError("data.start is after data.end");
  if (data.max_concurrency == 0) throw ConfigError("data.max_concurrency must be >= 1");
  if (data.index_symbol.empty()) throw ConfigError("data.index_symbol must not be empty");
  switch (data.source) {
    case DataSource::csv:
      if (data.csv_dir.empty()) throw ConfigError("data.csv_dir is required for the csv source");
      break;
    case DataSource::http:
      if (data.symbols.empty()) throw ConfigError("data.symbols is required for the http source");
      break;
    case DataSource::synthetic:
      if (data.synthetic.n_stocks < 2 || data.synthetic.n_days < 200) {
        throw ConfigError("data.synthetic needs n_stocks >= 2 and n_days >= 200");
      }
      break;
  }
}

json RunConfig::to_json() const {
  const auto& sp = data.synthetic;
  json holidays = json::array();
  for (auto d : service.holidays) holidays.push_back(format_date(d));
  return json{
      {"seed", seed},
      {"paths", {{"out_dir", paths.out_dir.string()}, {"cache_dir", paths.cache().string()}}},
      {"data",
       {{"source", to_string(data.source)},
        {"base_url", data.base_url},
        {"csv_dir", data.csv_dir.string()},
        {"symbols", data.symbols},
        {"index_symbol", data.index_symbol},
        {"start", format_date(data.range.first)},
        {"end", format_date(data.range.last)},
        {"max_concurrency", data.max_concurrency},
        {"synthetic",
         {{"n_stocks", sp.n_stocks},
          {"n_days", sp.n_days},
          {"start", format_date(sp.start)},
          {"factor_ar", sp.factor_ar},
          {"factor_vol", sp.factor_vol},
          {"noise_scale", sp.noise_scale},
          {"idio_vol", sp.idio_vol}}}}},
      {"split",
       {{"train", range_json(split.train)},
        {"validation", range_json(split.validation)},
        {"test", range_json(split.test)}}},
      {"features",
       {{"stoch_window", features.stoch_window},
        {"rsi_window", features.rsi_window},
        {"roc_lag", features.roc_lag},
        {"ema_sma_seed", features.ema_sma_seed}}},
      {"transformer",
       {{"blocks", transformer.blocks},
        {"head_widths", transformer.head_widths},
        {"d_model", transformer.d_model},
        {"heads", transformer.heads},
        {"ffn_hidden", transformer.ffn_hidden}}},
      {"lstm", {{"blocks", lstm.blocks}, {"head_widths", lstm.head_widths}, {"lstm_hidden", lstm.lstm_hidden}}},
      {"training", {{"pretrain", schedule_json(pretrain)}, {"finetune", schedule_json(finetune)}}},
      {"gbt",
       {{"n_estimators", gbt.n_estimators},
        {"learning_rate", gbt.learning_rate},
        {"max_depth", gbt.max_depth},
        {"colsample_bytree", gbt.colsample_bytree},
        {"max_leaves", gbt.max_leaves},
        {"lambda", gbt.lambda},
        {"min_child_weight", gbt.min_child_weight}}},
      {"backtest", {{"k", backtest_k}}},
      {"service", {{"host", service.host}, {"port", service.port}, {"holidays", holidays}}},
  };
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  std::uint64_t seed = c.seed;
  root.get("seed", seed);

  if (auto s = root.child("paths")) {
    std::string out = c.paths.out_dir.string(), cache;
    s->get("out_dir", out);
    s->get("cache_dir", cache);
    s->finish();
    c.paths.out_dir = out;
    c.paths.cache_dir = cache;
  }
  if (auto s = root.child("data")) {
    std::string source = to_string(c.data.source), csv_dir;
    s->get("source", source);
    c.data.source = parse_source(source);
    s->get("base_url", c.data.base_url);
    s->get("csv_dir", csv_dir);
    c.data.csv_dir = csv_dir;
    s->get("symbols", c.data.symbols);
    s->get("index_symbol", c.data.index_symbol);
    s->date("start", c.data.range.first);
    s->date("end", c.data.range.last);
    s->get("max_concurrency", c.data.max_concurrency);
    if (auto syn = s->child("synthetic")) {
      auto& sp = c.data.synthetic;
      syn->get("n_stocks", sp.n_stocks);
      syn->get("n_days", sp.n_days);
      syn->date("start", sp.start);
      syn->get("factor_ar", sp.factor_ar);
      syn->get("factor_vol", sp.factor_vol);
      syn->get("noise_scale", sp.noise_scale);
      syn->get("idio_vol", sp.idio_vol);
      syn->finish();
    }
    s->finish();
  }
  if (auto s = root.child("split")) {
    if (auto r = s->child("train")) read_range(*r, c.split.train);
    if (auto r = s->child("validation")) read_range(*r, c.split.validation);
    if (auto r = s->child("test")) read_range(*r, c.split.test);
    s->finish();
  }
  if (auto s = root.child("features")) {
    s->get("stoch_window", c.features.stoch_window);
    s->get("rsi_window", c.features.rsi_window);
    s->get("roc_lag", c.features.roc_lag);
    s->get("ema_sma_seed", c.features.ema_sma_seed);
    s->finish();
  }
  if (auto s = root.child("transformer")) {
    s->get("blocks", c.transformer.blocks);
    s->get("head_widths", c.transformer.head_widths);
    s->get("d_model", c.transformer.d_model);
    s->get("heads", c.transformer.heads);
    s->get("ffn_hidden", c.transformer.ffn_hidden);
    s->finish();
  }
  if (auto s = root.child("lstm")) {
    s->get("blocks", c.lstm.blocks);
    s->get("head_widths", c.lstm.head_widths);
    s->get("lstm_hidden", c.lstm.lstm_hidden);
    s->finish();
  }
  if (auto s = root.child("training")) {
    if (auto t = s->child("pretrain")) read_schedule(*t, c.pretrain);
    if (auto t = s->child("finetune")) read_schedule(*t, c.finetune);
    s->finish();
  }
  if (auto s = root.child("gbt")) {
    s->get("n_estimators", c.gbt.n_estimators);
    s->get("learning_rate", c.gbt.learning_rate);
    s->get("max_depth", c.gbt.max_depth);
    s->get("colsample_bytree", c.gbt.colsample_bytree);
    s->get("max_leaves", c.gbt.max_leaves);
    s->get("lambda", c.gbt.lambda);
    s->get("min_child_weight", c.gbt.min_child_weight);
    s->finish();
  }
  if (auto s = root.child("backtest")) {
    s->get("k", c.backtest_k);
    s->finish();
  }
  if (auto s = root.child("service")) {
    s->get("host", c.service.host);
    s->get("port", c.service.port);
    std::vector<std::string> holidays;
    s->get("holidays", holidays);
    for (const auto& h : holidays) {
      try {
        c.service.holidays.push_back(parse_date(h));
      } catch (const Error& e) {
        throw ConfigError(std::string("service.holidays: ") + e.what());
      }
    }
    s->finish();
  }
  root.finish();
  c.apply_seed(seed);
  return c;
}

RunConfig resolve_config(const Overrides& o) {
  RunConfig c;
  if (o.config_path) {
    std::string text;
    try {
      text = read_file(*o.config_path);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(o.config_path->string() + ": " + e.what());
    }
    c = RunConfig::from_json(j);
  }
  if (const char* url = std::getenv("I2E_DATA_URL"); url && *url) c.data.base_url = url;
  if (const char* dir = std::getenv("I2E_CACHE_DIR"); dir && *dir) c.paths.cache_dir = dir;
  if (o.seed) c.apply_seed(*o.seed);
  if (o.out_dir) c.paths.out_dir = *o.out_dir;
  c.validate();
  return c;
}

}  // namespace i2e
