#include "i2e/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "i2e/config.hpp"
#include "i2e/digest.hpp"
#include "i2e/error.hpp"
#include "i2e/evaluation.hpp"
#include "i2e/pipeline.hpp"
#include "i2e/service.hpp"
#include "i2e/text.hpp"

namespace i2e::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

struct Context {
  RunConfig cfg;
  std::ostream& out;
  std::ostream& err;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

// ---- artifact layout --------------------------------------------------------

fs::path dataset_path(const RunConfig& c, const std::string& group, const std::string& part) {
  return c.paths.datasets() / (group + "_" + part + ".i2eds");
}

fs::path network_path(const RunConfig& c, const std::string& stem) { return c.paths.models() / (stem + ".i2ew"); }

fs::path gbt_path(const RunConfig& c, Task task) { return c.paths.models() / ("gbt_" + to_string(task) + ".json"); }

std::string display_path(const RunConfig& c, const fs::path& p) {
  const auto rel = p.lexically_normal().lexically_relative(c.paths.out_dir.lexically_normal());
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return p.generic_string();
}

/// Manifest of one command: resolved config and sha256 of every input and output file.
class Manifest {
 public:
  Manifest(const Context& ctx, std::string command) : ctx_(ctx), command_(std::move(command)) {}

  void input(const fs::path& p) { inputs_[display_path(ctx_.cfg, p)] = digest(p); }
  void output(const fs::path& p) { outputs_[display_path(ctx_.cfg, p)] = digest(p); }
  json& summary() { return summary_; }

  void write() const {
    const json j{{"command", command_},
                 {"config", ctx_.cfg.to_json()},
                 {"inputs", inputs_},
                 {"outputs", outputs_},
                 {"summary", summary_.is_null() ? json::object() : summary_}};
    fs::create_directories(ctx_.cfg.paths.manifests());
    write_file_atomic(ctx_.cfg.paths.manifests() / (command_ + ".json"), j.dump(2) + "\n");
  }

 private:
  static std::string digest(const fs::path& p) { return sha256_hex(read_file(p)); }

  const Context& ctx_;
  std::string command_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
  json summary_;
};

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  write_file_atomic(path, j.dump(2) + "\n");
}

void require_file(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw Error("missing " + p.string() + " (run `i2e " + hint + "` first)");
}

// ---- data access ------------------------------------------------------------

Universe stock_universe(const RunConfig& c) {
  auto u = MarketCache(c.paths.cache()).load_universe();
  u.series_by_symbol.erase(c.data.index_symbol);
  if (!c.data.symbols.empty()) {
    const std::set<std::string> wanted(c.data.symbols.begin(), c.data.symbols.end());
    std::erase_if(u.series_by_symbol, [&](const auto& kv) { return !wanted.contains(kv.first); });
  }
  if (u.series_by_symbol.empty()) throw Error("no stock series in " + c.paths.cache().string() + " (run `i2e ingest`)");
  return u;
}

TickerSeries index_series(const RunConfig& c) {
  auto s = MarketCache(c.paths.cache()).load(c.data.index_symbol);
  if (!s || s->empty()) throw Error("index " + c.data.index_symbol + " missing from cache (run `i2e ingest`)");
  return std::move(*s);
}

DatasetFile read_partition(Manifest& m, const RunConfig& c, const std::string& group, const std::string& part) {
  const auto p = dataset_path(c, group, part);
  require_file(p, "featurize");
  m.input(p);
  return read_dataset(p);
}

std::pair<double, double> train_weights(const DatasetFile& train) {
  const auto labels = labels_of(train.samples);
  return class_weights(labels);
}

Model<float> load_network(Manifest& m, const fs::path& p) {
  m.input(p);
  return model_from_weights(load_weights(p));
}

void save_network(Manifest& m, const fs::path& p, const Model<float>& model) {
  fs::create_directories(p.parent_path());
  save_weights(p, export_weights(model));
  m.output(p);
}

std::vector<double> labels_as_double(std::span<const Sample> samples) {
  std::vector<double> y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(s.target_label);
  return y;
}

std::vector<double> targets_of(std::span<const Sample> samples) {
  std::vector<double> y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(s.target_return);
  return y;
}

ModelConfig configured_backbone(const RunConfig& c, Backbone b) {
  return b == Backbone::transformer ? c.transformer : c.lstm;
}

std::vector<Backbone> backbones_for(const std::string& which) {
  if (which == "all") return {Backbone::transformer, Backbone::lstm};
  return {parse_backbone(which)};
}

// ---- commands ---------------------------------------------------------------

int cmd_ingest(Context& ctx) {
  const auto& c = ctx.cfg;
  Manifest m(ctx, "ingest");
  MarketCache cache(c.paths.cache());
  std::size_t stored = 0, bars = 0;
  json failures = json::array();

  switch (c.data.source) {
    case DataSource::synthetic: {
      auto p = c.data.synthetic;
      p.index_symbol = c.data.index_symbol;
      const auto market = synth_market(p);
      for (const auto& [_, s] : market.stocks.series_by_symbol) {
        cache.store(s);
        ++stored;
        bars += s.size();
      }
      cache.store(market.index);
      ++stored;
      bars += market.index.size();
      break;
    }
    case DataSource::csv: {
      std::vector<std::string> symbols = c.data.symbols;
      if (symbols.empty()) {
        for (const auto& e : fs::directory_iterator(c.data.csv_dir)) {
          if (e.path().extension() == ".csv") symbols.push_back(e.path().stem().string());
        }
      } else {
        symbols.push_back(c.data.index_symbol);
      }
      std::sort(symbols.begin(), symbols.end());
      symbols.erase(std::unique(symbols.begin(), symbols.end()), symbols.end());
      for (const auto& sym : symbols) {
        const auto path = c.data.csv_dir / (sym + ".csv");
        try {
          auto load = load_csv(path, sym);
          m.input(path);
          for (const auto& issue : load.issues) {
            ctx.err << sym << ": line " << issue.row << ": " << issue.message << "\n";
          }
          if (load.series.empty()) continue;
          cache.store(load.series);
          ++stored;
          bars += load.series.size();
        } catch (const Error& e) {
          failures.push_back({{"symbol", sym}, {"reason", e.what()}});
        }
      }
      break;
    }
    case DataSource::http: {
      std::vector<std::string> symbols = c.data.symbols;
      symbols.push_back(c.data.index_symbol);
      const ChartClient client(c.data.base_url);
      const auto fetched = fetch_universe(client, symbols, c.data.range, c.data.max_concurrency);
      for (const auto* list : {&fetched.unavailable, &fetched.failed}) {
        for (const auto& f : *list) failures.push_back({{"symbol", f.symbol}, {"reason", f.reason}});
      }
      for (const auto& [_, s] : fetched.universe.series_by_symbol) {
        if (cache.load(s.symbol)) {
          cache.append_newer(s);
        } else {
          cache.store(s);
        }
        ++stored;
        bars += s.size();
      }
      break;
    }
  }
  if (stored == 0) throw Error("no symbol could be ingested");
  cache.write_manifest();
  for (const auto& f : failures) {
    ctx.err << "warning: " << f["symbol"].get<std::string>() << ": " << f["reason"].get<std::string>() << "\n";
  }
  for (const auto& sym : cache.symbols()) m.output(cache.path_for(sym));
  m.summary() = {{"symbols", stored}, {"bars", bars}, {"failures", failures}};
  m.write();
  ctx.out << "ingested " << stored << " series (" << bars << " bars) into " << c.paths.cache().string() << "\n";
  return kExitOk;
}

int cmd_stats(Context& ctx) {
  const auto& c = ctx.cfg;
  Manifest m(ctx, "stats");
  const auto u = stock_universe(c);
  for (const auto& [sym, _] : u.series_by_symbol) m.input(MarketCache(c.paths.cache()).path_for(sym));
  const auto hist = coverage_histogram(u);

  std::string csv = "date,tickers\n";
  std::size_t peak = 0;
  for (const auto& [date, n] : hist) {
    csv += format_date(date) + "," + std::to_string(n) + "\n";
    peak = std::max(peak, n);
  }
  const auto path = c.paths.reports() / "coverage.csv";
  fs::create_directories(path.parent_path());
  write_file_atomic(path, csv);
  m.output(path);

  const auto bars = u.total_bars();
  m.summary() = {{"symbols", u.series_by_symbol.size()}, {"bars", bars}, {"dates", hist.size()}, {"max_tickers", peak}};
  m.write();
  ctx.out << "symbols " << u.series_by_symbol.size() << ", bars " << bars << ", dates " << hist.size();
  if (!hist.empty()) {
    ctx.out << " (" << format_date(hist.begin()->first) << " .. " << format_date(hist.rbegin()->first) << ")";
  }
  ctx.out << "\ncoverage histogram: " << path.string() << "\n";
  return kExitOk;
}

int cmd_featurize(Context& ctx) {
  const auto& c = ctx.cfg;
  Manifest m(ctx, "featurize");
  MarketCache cache(c.paths.cache());
  const auto stocks = stock_universe(c);
  const auto index = index_series(c);

  auto emit_features = [&](const TickerSeries& s) {
    m.input(cache.path_for(s.symbol));
    const auto path = c.paths.features() / (s.symbol + ".csv");
    fs::create_directories(path.parent_path());
    write_features(path, ticker_features(s, c.features));
    m.output(path);
  };
  for (const auto& [_, s] : stocks.series_by_symbol) emit_features(s);
  emit_features(index);

  json counts;
  auto emit_group = [&](const std::string& group, const std::vector<Sample>& samples) {
    const auto prepared = prepare(samples, c.split);
    const std::pair<const char*, const std::vector<Sample>*> parts[] = {
        {"train", &prepared.scaled.train}, {"validation", &prepared.scaled.validation}, {"test", &prepared.scaled.test}};
    for (const auto& [name, part] : parts) {
      const auto path = dataset_path(c, group, name);
      fs::create_directories(path.parent_path());
      write_dataset(path, *part, prepared.scaler);
      m.output(path);
      counts[group][name] = part->size();
    }
  };
  emit_group("stocks", build_universe_samples(stocks, c.features));
  emit_group("index", build_samples(index, c.features));

  m.summary() = {{"samples", counts}};
  m.write();
  for (const auto& group : {"stocks", "index"}) {
    ctx.out << pad(group, 8) << "train " << counts[group]["train"].get<std::size_t>() << ", validation "
            << counts[group]["validation"].get<std::size_t>() << ", test " << counts[group]["test"].get<std::size_t>()
            << "\n";
  }
  return kExitOk;
}

void print_run(std::ostream& out, const std::string& label, const TrainRun& run) {
  out << pad(label, 38) << "epochs " << run.epochs.size() << ", best epoch " << run.best_epoch << ", val loss "
      << fmt("%.4f", run.best_val_loss) << "\n";
}

int cmd_pretrain(Context& ctx, const std::string& which) {
  const auto& c = ctx.cfg;
  Manifest m(ctx, "pretrain");
  const auto train_file = read_partition(m, c, "index", "train");
  const auto val_file = read_partition(m, c, "index", "validation");
  const auto train_set = make_tensor_dataset(train_file.samples, Task::classification);
  const auto val_set = make_tensor_dataset(val_file.samples, Task::classification);
  const auto weights = train_weights(train_file);

  json runs;
  for (const auto b : backbones_for(which)) {
    auto mc = configured_backbone(c, b);
    mc.task = Task::classification;
    Model<float> model(mc);
    const auto run = train(model, train_set, val_set, LossKind::weighted_bce, weights, c.pretrain, "index-train",
                           "index-validation");
    const auto stem = "pretrained_" + to_string(b);
    save_network(m, network_path(c, stem), model);
    const auto report = c.paths.reports() / (stem + ".json");
    write_json(report, run.to_json());
    m.output(report);
    runs[to_string(b)] = {{"best_epoch", run.best_epoch}, {"best_val_loss", run.best_val_loss},
                          {"weights_digest", run.weights_digest}};
    print_run(ctx.out, "pretrain " + to_string(b) + " (index)", run);
  }
  m.summary() = runs;
  m.write();
  return kExitOk;
}

int cmd_finetune(Context& ctx, const std::string& from, const std::string& task_name, bool compare_scratch) {
  const auto& c = ctx.cfg;
  const Task task = parse_task(task_name);
  const fs::path source_path = from;
  if (!fs::exists(source_path)) throw ConfigError("--from-weights: no such file " + source_path.string());
  const auto source = load_weights(source_path);
  const auto backbone = source.config.backbone;
  const auto stem = "finetuned_" + to_string(backbone) + "_" + to_string(task);
  // One manifest per (backbone, task) so the four fine-tuning runs do not overwrite each other.
  Manifest m(ctx, "finetune_" + to_string(backbone) + "_" + to_string(task));
  m.input(source_path);
  if (!source.config.same_backbone(configured_backbone(c, backbone))) {
    throw ConfigError("--from-weights: backbone of " + source_path.string() + " differs from the configured " +
                      to_string(backbone));
  }

  const auto train_file = read_partition(m, c, "stocks", "train");
  const auto val_file = read_partition(m, c, "stocks", "validation");
  const auto train_set = make_tensor_dataset(train_file.samples, task);
  const auto val_set = make_tensor_dataset(val_file.samples, task);
  const auto loss = task == Task::classification ? LossKind::weighted_bce : LossKind::mse;
  const std::optional<std::pair<double, double>> weights =
      task == Task::classification ? std::optional(train_weights(train_file)) : std::nullopt;

  // Both arms are built identically so the swapped output layer gets the same initialization.
  auto make_arm = [&](bool transferred) {
    Model<float> model(source.config);
    if (transferred) transfer_init(model, source);
    model.swap_head(task);
    return model;
  };

  Model<float> model = make_arm(true);
  const auto run = train(model, train_set, val_set, loss, weights, c.finetune, "stock-train", "stock-validation");
  save_network(m, network_path(c, stem), model);
  print_run(ctx.out, "finetune " + to_string(backbone) + " " + to_string(task), run);

  json report{{"pretrained", run.to_json()}};
  m.summary() = {{"best_val_loss", run.best_val_loss}, {"weights_digest", run.weights_digest}};
  if (compare_scratch) {
    Model<float> scratch = make_arm(false);
    const auto srun = train(scratch, train_set, val_set, loss, weights, c.finetune, "stock-train", "stock-validation");
    print_run(ctx.out, "scratch " + to_string(backbone) + " " + to_string(task), srun);
    const double gap = srun.best_val_loss - run.best_val_loss;
    ctx.out << "validation loss: pretrained " << fmt("%.4f", run.best_val_loss) << ", scratch "
            << fmt("%.4f", srun.best_val_loss) << ", improvement " << fmt("%+.4f", gap) << "\n";
    report["scratch"] = srun.to_json();
    report["improvement"] = gap;
    m.summary()["scratch_val_loss"] = srun.best_val_loss;
  }
  const auto report_path = c.paths.reports() / (stem + ".json");
  write_json(report_path, report);
  m.output(report_path);
  m.write();
  return kExitOk;
}

std::vector<Task> tasks_for(const std::string& which) {
  if (which == "all") return {Task::classification, Task::regression};
  return {parse_task(which)};
}

std::vector<double> sample_weights(std::span<const Sample> samples, std::pair<double, double> w) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.target_label ? w.second : w.first);
  return out;
}

int cmd_train_gbt(Context& ctx, const std::string& which) {
  const auto& c = ctx.cfg;
  Manifest m(ctx, "train-gbt");
  const auto train_file = read_partition(m, c, "stocks", "train");
  const auto val_file = read_partition(m, c, "stocks", "validation");
  const auto x_train = flat_inputs(train_file.samples);
  const auto x_val = flat_inputs(val_file.samples);
  const gbt::FeatureMatrix train_x{x_train, kFlatWidth};
  const gbt::FeatureMatrix val_x{x_val, kFlatWidth};
  const auto weights = train_weights(train_file);

  json summary;
  for (const auto task : tasks_for(which)) {
    auto params = c.gbt;
    params.objective = task == Task::classification ? gbt::Objective::logistic : gbt::Objective::squared;
    gbt::GbtModel model;
    double val_loss = 0;
    if (task == Task::classification) {
      const auto y = labels_as_double(train_file.samples);
      const auto w = sample_weights(train_file.samples, weights);
      model = gbt::fit(train_x, y, std::span<const double>(w), params);
      const auto probs = model.predict(val_x);
      val_loss = eval::classification_metrics(probs, labels_as_double(val_file.samples), 0.5, weights).bce_loss;
    } else {
      const auto y = targets_of(train_file.samples);
      model = gbt::fit(train_x, y, std::nullopt, params);
      val_loss = eval::mse(model.predict(val_x), targets_of(val_file.samples));
    }
    const auto path = gbt_path(c, task);
    fs::create_directories(path.parent_path());
    gbt::save_model(path, model);
    m.output(path);
    summary[to_string(task)] = {{"trees", model.trees.size()},
                                {"final_train_loss", model.train_loss.back()},
                                {"val_loss", val_loss}};
    ctx.out << pad("gbt " + to_string(task), 24) << "trees " << model.trees.size() << ", train loss "
            << fmt("%.6f", model.train_loss.back()) << ", val " << (task == Task::classification ? "bce " : "mse ")
            << fmt("%.6f", val_loss) << "\n";
  }
  m.summary() = summary;
  m.write();
  return kExitOk;
}

/// Regression members present on disk, by name, with predictions in raw return space.
struct MemberPredictions {
  std::vector<std::string> names;
  std::map<std::string, std::vector<double>> raw;
};

MemberPredictions regression_predictions(Manifest& m, const RunConfig& c, const DatasetFile& part,
                                         const MinMaxScaler& scaler) {
  MemberPredictions out;
  const auto x = flat_inputs(part.samples);
  auto to_raw = [&](std::vector<double> scaled) {
    for (auto& v : scaled) v = scaler.inverse_target(v);
    return scaled;
  };
  for (const auto b : {Backbone::transformer, Backbone::lstm}) {
    const auto p = network_path(c, "finetuned_" + to_string(b) + "_regression");
    if (!fs::exists(p)) continue;
    const auto model = load_network(m, p);
    out.names.push_back(to_string(b));
    out.raw[to_string(b)] = to_raw(model.predict(x));
  }
  const auto gp = gbt_path(c, Task::regression);
  if (fs::exists(gp)) {
    m.input(gp);
    const auto model = gbt::load_model(gp);
    out.names.push_back("gbt");
    out.raw["gbt"] = to_raw(model.predict({x, kFlatWidth}));
  }
  if (out.names.size() == 3) {
    std::vector<std::vector<double>> members;
    for (const auto& n : out.names) members.push_back(out.raw[n]);
    out.names.push_back("ensemble");
    out.raw["ensemble"] = ensemble_predict(members);
  }
  return out;
}

int cmd_evaluate(Context& ctx) {
  const auto& c = ctx.cfg;
  Manifest m(ctx, "evaluate");
  const auto train_file = read_partition(m, c, "stocks", "train");
  const auto test_file = read_partition(m, c, "stocks", "test");
  const auto weights = train_weights(train_file);
  const auto labels = labels_as_double(test_file.samples);
  const auto x = flat_inputs(test_file.samples);

  json cls = json::object();
  std::vector<std::pair<std::string, eval::ClassificationMetrics>> rows;
  for (const auto b : {Backbone::transformer, Backbone::lstm}) {
    const auto p = network_path(c, "finetuned_" + to_string(b) + "_classification");
    if (!fs::exists(p)) continue;
    const auto model = load_network(m, p);
    rows.emplace_back(to_string(b), eval::classification_metrics(model.predict(x), labels, 0.5, weights));
  }
  if (const auto gp = gbt_path(c, Task::classification); fs::exists(gp)) {
    m.input(gp);
    const auto model = gbt::load_model(gp);
    rows.emplace_back("gbt", eval::classification_metrics(model.predict({x, kFlatWidth}), labels, 0.5, weights));
  }

  const auto preds = regression_predictions(m, c, test_file, test_file.scaler);
  if (rows.empty() && preds.names.empty()) throw Error("no trained models in " + c.paths.models().string());

  std::vector<double> raw_targets, scaled_targets = targets_of(test_file.samples);
  for (const auto& s : test_file.samples) raw_targets.push_back(clip_target(s.raw_return));
  json reg = json::object();

  ctx.out << "Classification (test, " << test_file.samples.size() << " samples)\n"
          << pad("model", 14) << pad("accuracy", 11) << pad("precision", 11) << pad("recall", 11) << pad("f1", 11)
          << "bce\n";
  for (const auto& [name, mt] : rows) {
    cls[name] = mt.to_json();
    ctx.out << pad(name, 14) << pad(fmt("%.4f", mt.accuracy), 11) << pad(fmt("%.4f", mt.precision), 11)
            << pad(fmt("%.4f", mt.recall), 11) << pad(fmt("%.4f", mt.f1), 11) << fmt("%.4f", mt.bce_loss) << "\n";
  }
  ctx.out << "\nRegression (test)\n" << pad("model", 14) << pad("mse_raw", 14) << "mse_scaled\n";
  for (const auto& name : preds.names) {
    const auto& raw = preds.raw.at(name);
    std::vector<double> scaled;
    for (double v : raw) scaled.push_back(test_file.scaler.transform(kFeatureCount, clip_target(v)));
    const double mse_raw = eval::mse(raw, raw_targets);
    const double mse_scaled = eval::mse(scaled, scaled_targets);
    reg[name] = {{"mse_raw", mse_raw}, {"mse_scaled", mse_scaled}};
    ctx.out << pad(name, 14) << pad(fmt("%.3e", mse_raw), 14) << fmt("%.3e", mse_scaled) << "\n";
  }

  const json report{{"samples", test_file.samples.size()}, {"classification", cls}, {"regression", reg}};
  const auto path = c.paths.reports() / "evaluation.json";
  write_json(path, report);
  m.output(path);
  m.summary() = report;
  m.write();
  return kExitOk;
}

int cmd_backtest(Context& ctx) {
  const auto& c = ctx.cfg;
  Manifest m(ctx, "backtest");
  const auto test_file = read_partition(m, c, "stocks", "test");
  const auto preds = regression_predictions(m, c, test_file, test_file.scaler);
  if (preds.names.empty()) throw Error("no regression models in " + c.paths.models().string() + " (run `i2e finetune --task regression` or `i2e train-gbt`)");

  json summary;
  ctx.out << "Backtest (test, top/bottom " << c.backtest_k << ")\n"
          << pad("model", 14) << pad("avg_daily_return", 20) << pad("days", 8) << "skipped\n";
  for (const auto& name : preds.names) {
    const auto& raw = preds.raw.at(name);
    std::vector<eval::Observation> obs;
    obs.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const auto& s = test_file.samples[i];
      obs.push_back({s.target_date, s.symbol, raw[i], s.raw_return});
    }
    const auto report = eval::backtest(obs, c.backtest_k);
    const auto stem = c.paths.reports() / ("backtest_" + name);
    write_json(fs::path(stem.string() + ".json"), report.to_json());
    write_file_atomic(fs::path(stem.string() + "_daily.csv"), report.daily_csv());
    write_file_atomic(fs::path(stem.string() + "_weekly.csv"), report.weekly_csv());
    for (const char* suffix : {".json", "_daily.csv", "_weekly.csv"}) m.output(fs::path(stem.string() + suffix));
    summary[name] = {{"average_daily_return", report.average_daily_return},
                     {"days", report.days.size()},
                     {"skipped", report.skipped.size()}};
    ctx.out << pad(name, 14) << pad(fmt("%.6f", report.average_daily_return), 20)
            << pad(std::to_string(report.days.size()), 8) << report.skipped.size() << "\n";
  }
  m.summary() = summary;
  m.write();
  return kExitOk;
}

RegressionEnsemble load_ensemble(Manifest& m, const RunConfig& c) {
  const auto train_path = dataset_path(c, "stocks", "train");
  require_file(train_path, "featurize");
  m.input(train_path);
  RegressionEnsemble e;
  e.scaler = read_dataset(train_path).scaler;
  auto net = [&](Backbone b) {
    const auto p = network_path(c, "finetuned_" + to_string(b) + "_regression");
    require_file(p, "finetune --task regression");
    return std::make_shared<const Model<float>>(load_network(m, p));
  };
  e.transformer = net(Backbone::transformer);
  e.lstm = net(Backbone::lstm);
  const auto gp = gbt_path(c, Task::regression);
  require_file(gp, "train-gbt");
  m.input(gp);
  e.gbt = std::make_shared<const gbt::GbtModel>(gbt::load_model(gp));
  return e;
}

service::ServiceOptions service_options(const RunConfig& c) {
  service::ServiceOptions o;
  if (c.data.source == DataSource::http) {
    o.symbols = c.data.symbols;
  } else {
    for (const auto& [sym, _] : stock_universe(c).series_by_symbol) o.symbols.push_back(sym);
  }
  o.features = c.features;
  o.holidays = c.service.holidays;
  o.history_start = c.data.range.first;
  return o;
}

service::Fetcher offline_fetcher() {
  return [](const std::vector<std::string>&, const DateRange&) { return UniverseFetch{}; };
}

int cmd_predict(Context& ctx) {
  const auto& c = ctx.cfg;
  Manifest m(ctx, "predict");
  auto options = service_options(c);
  for (const auto& sym : options.symbols) {
    if (const auto p = MarketCache(c.paths.cache()).path_for(sym); fs::exists(p)) m.input(p);
  }
  // Predict from the cache as it stands: nothing is requested past the latest cached bar.
  std::optional<Date> as_of;
  for (const auto& sym : options.symbols) {
    const auto s = MarketCache(c.paths.cache()).load(sym);
    if (s && !s->empty() && (!as_of || s->bars.back().date > *as_of)) as_of = s->bars.back().date;
  }
  if (!as_of) throw Error("no cached bars for the configured symbols");
  options.today = [d = *as_of] { return d; };
  service::Service svc(MarketCache(c.paths.cache()), load_ensemble(m, c), options, offline_fetcher());
  svc.refresh();
  const auto snap = svc.snapshot();
  if (!snap->has_predictions) throw Error("no symbol has a complete window ending " + format_date(*as_of));

  json records = json::array();
  for (const auto& r : snap->records) records.push_back(r.to_json());
  const json report{{"as_of", format_date(*snap->as_of)}, {"target_date", format_date(snap->target_date)},
                    {"records", records}};
  const auto path = c.paths.reports() / "predictions.json";
  write_json(path, report);
  m.output(path);
  m.summary() = {{"as_of", report["as_of"]}, {"target_date", report["target_date"]}, {"symbols", records.size()}};
  m.write();

  const std::size_t n = snap->records.size();
  const std::size_t k = std::min(c.backtest_k, n / 2);
  ctx.out << "Predictions for " << report["target_date"].get<std::string>() << " (as of "
          << report["as_of"].get<std::string>() << ", " << n << " symbols)\n"
          << pad("rank", 6) << pad("symbol", 12) << "predicted_return\n";
  auto row = [&](const service::PredictionRecord& r) {
    ctx.out << pad(std::to_string(r.rank), 6) << pad(r.symbol, 12) << fmt("%+.6f", r.predicted_return) << "\n";
  };
  for (std::size_t i = 0; i < k; ++i) row(snap->records[i]);
  if (k > 0) ctx.out << "...\n";
  for (std::size_t i = n - k; i < n; ++i) row(snap->records[i]);
  return kExitOk;
}

int cmd_serve(Context& ctx, std::optional<std::string> host, std::optional<int> port) {
  const auto& c = ctx.cfg;
  Manifest m(ctx, "serve");
  auto options = service_options(c);
  auto fetcher = c.data.source == DataSource::http ? service::chart_fetcher(c.data.base_url, c.data.max_concurrency)
                                                   : offline_fetcher();
  service::Service svc(MarketCache(c.paths.cache()), load_ensemble(m, c), std::move(options), std::move(fetcher));
  const std::string h = host.value_or(c.service.host);
  const int p = port.value_or(c.service.port);
  m.summary() = {{"host", h}, {"port", p}};
  m.write();
  service::HttpServer server(svc);
  const int bound = server.start(h, p);
  ctx.out << "serving on http://" << h << ":" << bound << "/api/v1/" << std::endl;
  server.wait();
  return kExitOk;
}

void add_globals(CLI::App& app, Globals& g) {
  app.add_option("--config", g.config, "JSON run configuration")->type_name("PATH");
  app.add_option("--seed", g.seed, "master seed; overrides the config and re-derives every seed")->type_name("N");
  app.add_option("--out", g.out, "output directory; overrides paths.out_dir")->type_name("DIR");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"i2e: index-to-equity transfer forecasting pipeline", "i2e"};
  app.require_subcommand(1);
  Globals g;
  add_globals(app, g);

  auto sub = [&](const char* name, const char* description) {
    auto* s = app.add_subcommand(name, description);
    add_globals(*s, g);
    return s;
  };

  sub("ingest", "fetch or generate daily bars into the cache");
  sub("stats", "coverage summary and per-date ticker histogram (CSV)");
  sub("featurize", "indicators, windows, splits and scaled dataset files");

  std::string pretrain_model = "all";
  sub("pretrain", "train classifiers on the index series")
      ->add_option("--model", pretrain_model, "transformer, lstm or all")
      ->check(CLI::IsMember({"transformer", "lstm", "all"}))
      ->capture_default_str();

  auto* finetune = sub("finetune", "fine-tune pretrained weights on the stock data");
  std::string from_weights, finetune_task = "classification";
  bool compare_scratch = false;
  finetune->add_option("--from-weights", from_weights, "source weight file (.i2ew)")->required()->type_name("PATH");
  finetune->add_option("--task", finetune_task, "classification or regression; regression swaps the output layer")
      ->check(CLI::IsMember({"classification", "regression"}))
      ->capture_default_str();
  finetune->add_flag("--compare-scratch", compare_scratch,
                     "also train a same-seed random initialization with the same schedule and report both");

  std::string gbt_task = "all";
  sub("train-gbt", "gradient boosted trees on the flattened windows")
      ->add_option("--task", gbt_task, "classification, regression or all")
      ->check(CLI::IsMember({"classification", "regression", "all"}))
      ->capture_default_str();

  sub("evaluate", "test-set classification and regression metrics");
  sub("backtest", "daily long/short backtest of the regression models on the test set");
  sub("predict", "rank every symbol for the next trading day from the cache");

  auto* serve = sub("serve", "HTTP service for refresh, ranking and ticker history");
  std::optional<std::string> host;
  std::optional<int> port;
  serve->add_option("--host", host, "bind address; overrides service.host");
  serve->add_option("--port", port, "TCP port; overrides service.port")->check(CLI::Range(0, 65535));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    if (!dynamic_cast<const CLI::CallForHelp*>(&e)) err << app.help();
    return kExitUsage;
  }

  auto* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  auto parsed = [&](const char* opt) { return app.count(opt) > 0 || chosen->count(opt) > 0; };

  try {
    Overrides o;
    if (parsed("--config")) o.config_path = g.config;
    if (parsed("--seed")) o.seed = g.seed;
    if (parsed("--out")) o.out_dir = g.out;
    Context ctx{resolve_config(o), out, err};

    if (name == "ingest") return cmd_ingest(ctx);
    if (name == "stats") return cmd_stats(ctx);
    if (name == "featurize") return cmd_featurize(ctx);
    if (name == "pretrain") return cmd_pretrain(ctx, pretrain_model);
    if (name == "finetune") return cmd_finetune(ctx, from_weights, finetune_task, compare_scratch);
    if (name == "train-gbt") return cmd_train_gbt(ctx, gbt_task);
    if (name == "evaluate") return cmd_evaluate(ctx);
    if (name == "backtest") return cmd_backtest(ctx);
    if (name == "predict") return cmd_predict(ctx);
    if (name == "serve") return cmd_serve(ctx, host, port);
    err << "unhandled subcommand " << name << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace i2e::cli
