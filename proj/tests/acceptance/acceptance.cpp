// Acceptance suite: one PASS/FAIL line per criterion, with the measured value
// next to its threshold. Pass criterion numbers to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "backtest_oracles.hpp"
#include "gbt_oracles.hpp"
#include "i2e/config.hpp"
#include "i2e/evaluation.hpp"
#include "i2e/pipeline.hpp"
#include "i2e/text.hpp"
#include "indicator_oracles.hpp"
#include "leakage.hpp"
#include "nn_checks.hpp"
#include "pipeline_run.hpp"
#include "service_fixture.hpp"
#include "support.hpp"

using namespace i2e;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigDir = I2E_CONFIG_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string num(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome gradient_fidelity() {
  Timer t;
  double worst = 0;
  std::string where;
  std::size_t cases = 0;
  for (const auto& which : test::gradient_components()) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto r = test::gradient_case(which, seed, 1e-5);
      ++cases;
      if (!(r.max_rel_error <= worst)) {
        worst = r.max_rel_error;
        where = which + "/" + r.worst_parameter;
      }
    }
  }
  const double s = t.seconds();
  return {worst < 1e-4 && s < 120.0,
          "max relative error " + num("%.2e", worst) + " (< 1e-4) at " + where + " over " + std::to_string(cases) +
              " cases in " + num("%.1f", s) + " s (< 120 s)"};
}

Outcome attention_invariants() {
  double rows = 0, oracle = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    rows = std::max(rows, test::attention_row_sum_error(seed));
    oracle = std::max(oracle, test::attention_oracle_error(seed));
  }
  return {rows <= 1e-6 && oracle <= 1e-5, "row-sum error " + num("%.2e", rows) + " (<= 1e-6), loop oracle error " +
                                              num("%.2e", oracle) + " (<= 1e-5)"};
}

Outcome indicator_oracles() {
  const auto suite = test::indicator_suite(5);
  const auto constant = test::constant_window_violations();
  const auto sanitize = test::sanitize_violations();
  return {suite.worst <= 1e-10 && constant == 0 && sanitize == 0,
          "max relative error " + num("%.2e", suite.worst) + " (<= 1e-10) over " + std::to_string(suite.comparisons) +
              " comparisons; constant-window violations " + std::to_string(constant) + ", sanitize violations " +
              std::to_string(sanitize)};
}

Outcome chance_anchor() {
  std::vector<double> probs(10000, 0.5), labels(10000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<double>(i % 2);
  const double bce = eval::classification_metrics(probs, labels).bce_loss;
  return {std::abs(bce - 0.6931) <= 1e-4, "constant 0.5 BCE " + num("%.6f", bce) + " (0.6931 +- 1e-4)"};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome directional_transfer() {
  Timer t;
  Overrides o;
  o.config_path = kConfigDir / "synthetic.json";
  const auto base = resolve_config(o);
  std::vector<double> pretrained, scratch;
  std::string per_seed;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    auto c = base;
    c.apply_seed(s);
    auto market = synth_market(c.data.synthetic);
    Universe index;
    index.series_by_symbol[market.index.symbol] = market.index;
    const auto idx = prepare(build_universe_samples(index, c.features), c.split);
    const auto stocks = prepare(build_universe_samples(market.stocks, c.features), c.split);
    const auto r = compare_transfer(c.transformer, transfer_data(idx, stocks), c.pretrain, c.finetune);
    pretrained.push_back(r.pretrained_val_bce);
    scratch.push_back(r.scratch_val_bce);
    per_seed += " s" + std::to_string(s) + "=" + num("%.4f", r.pretrained_val_bce) + "/" + num("%.4f", r.scratch_val_bce);
    std::fprintf(stderr, "  transfer seed %llu: pretrained %.4f scratch %.4f (%.0f s)\n",
                 static_cast<unsigned long long>(s), r.pretrained_val_bce, r.scratch_val_bce, t.seconds());
  }
  const double mp = median(pretrained), ms = median(scratch), s = t.seconds();
  return {mp <= ms - 0.005 && s < 600.0, "median validation BCE pretrained " + num("%.4f", mp) + " vs scratch " +
                                             num("%.4f", ms) + " (gap " + num("%+.4f", mp - ms) + ", need <= -0.005);" +
                                             per_seed + "; " + num("%.0f", s) + " s (< 600 s)"};
}

Outcome head_swap_isolation() {
  std::size_t bad = 0, swapped = 0;
  for (auto bb : {Backbone::transformer, Backbone::lstm}) {
    ModelConfig c;
    c.backbone = bb;
    c.blocks = 2;
    c.d_model = 8;
    c.heads = 2;
    c.ffn_hidden = 12;
    c.lstm_hidden = 6;
    c.head_widths = {16, 8};
    c.seed = 5;
    Model<float> m(c);
    const auto before = parameter_digests(m);
    m.swap_head(Task::regression);
    const auto after = parameter_digests(m);
    for (std::size_t i = 0; i < before.size(); ++i) {
      const bool changed = before[i].second != after[i].second;
      const bool output = before[i].first.rfind("head.out.", 0) == 0;
      if (changed) ++swapped;
      if (changed && !output) ++bad;
      if (before[i].first == "head.out.weight" && !changed) ++bad;
    }

    Model<float> source(c);
    auto other = c;
    other.seed = 77;
    Model<float> target(other);
    transfer_init(target, export_weights(source));
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> x(16 * kFlatWidth);
    for (auto& v : x) v = u(rng);
    if (target.predict(x) != source.predict(x)) ++bad;
  }
  return {bad == 0, "non-output digests changed or prediction mismatches: " + std::to_string(bad) +
                        "; output tensors changed: " + std::to_string(swapped)};
}

Outcome gbt_correctness() {
  const double gap = test::stump_oracle_gap(200);
  const auto audit = test::default_params_audit();
  return {gap <= 1e-9 && audit.loss_increases == 0 && audit.cap_violations == 0,
          "stump vs exhaustive oracle gap " + num("%.1e", gap) + " over 400 fits; default params: " +
              std::to_string(audit.loss_increases) + " loss increases in " + std::to_string(audit.rounds) +
              " rounds, " + std::to_string(audit.cap_violations) + " structural violations"};
}

Outcome backtest_oracle() {
  // Hand fixture: D > A > C > B.
  const Date d = make_date(2023, 3, 6);
  const std::vector<eval::Observation> obs{
      {d, "A", 0.6, 0.02}, {d, "B", 0.1, -0.01}, {d, "C", 0.3, 0.005}, {d, "D", 0.9, 0.03}};
  const double k1 = eval::backtest(obs, 1).days.at(0).portfolio_return;
  const double k2 = eval::backtest(obs, 2).days.at(0).portfolio_return;
  const bool hand = std::abs(k1 - 0.02) < 1e-15 && std::abs(k2 - 0.01375) < 1e-15;
  const double gap = test::perfect_foresight_gap(60);
  const auto moved = test::transform_invariance_violations();
  return {hand && gap <= 1e-15 && moved == 0,
          std::string("hand fixtures ") + (hand ? "match" : "differ") + "; perfect-foresight gap to exhaustive max " +
              num("%.1e", gap) + "; transform-invariance violations " + std::to_string(moved)};
}

Outcome leakage_guard() {
  const auto series = test::random_walk("LK", 700, 21, make_date(2014, 1, 6));
  const auto real = test::truncation_check(series, test::real_pipeline());
  const auto leaky = test::truncation_check(series, test::leaky_pipeline());
  return {real.mismatches == 0 && real.compared > 0 && leaky.mismatches > 0,
          "real pipeline " + std::to_string(real.mismatches) + " mismatches in " + std::to_string(real.compared) +
              " comparisons over " + std::to_string(real.cuts) + " cuts; injected shift caught " +
              std::to_string(leaky.mismatches) + " times"};
}

Outcome determinism() {
  test::TempDir dir("determinism");
  const auto config = kConfigDir / "tiny.json";
  for (const char* run : {"a", "b"}) {
    const auto steps = test::run_pipeline(config, dir / run);
    if (steps.empty() || steps.back().code != 0) {
      return {false, "pipeline run " + std::string(run) + " failed at " + steps.back().args.front() + ": " +
                         steps.back().err};
    }
  }
  std::size_t compared = 0, differing = 0;
  auto compare_dir = [&](const std::string& sub, const std::string& prefix) {
    for (const auto& e : fs::directory_iterator(dir / "a" / sub)) {
      const auto name = e.path().filename().string();
      if (name.rfind(prefix, 0) != 0) continue;
      ++compared;
      const auto other = dir / "b" / sub / name;
      if (!fs::exists(other) || read_file(e.path()) != read_file(other)) ++differing;
    }
  };
  compare_dir("models", "");
  compare_dir("reports", "backtest_");
  return {compared >= 20 && differing == 0, std::to_string(compared) + " weight files and backtest reports compared, " +
                                                std::to_string(differing) + " differ"};
}

Outcome service_contract() {
  test::Fixture f;
  std::size_t schema = 0;
  auto keys = [](const nlohmann::json& j) {
    std::set<std::string> k;
    for (const auto& [key, _] : j.items()) k.insert(key);
    return k;
  };
  using Keys = std::set<std::string>;
  if (keys(f.service->health().body) != Keys{"status", "model_digests", "data_as_of"}) ++schema;
  if (f.service->rank("3").status != 409) ++schema;
  f.upstream.visible = test::kCached + 1;
  const auto refresh = f.service->refresh();
  if (refresh.status != 200 || keys(refresh.body) != Keys{"updated", "failed", "as_of"}) ++schema;
  const auto rank = f.service->rank("6");
  if (rank.status != 200 || keys(rank.body) != Keys{"target_date", "top", "bottom"}) ++schema;
  const auto ticker = f.service->ticker("T11", std::nullopt, std::nullopt);
  if (ticker.status != 200 || !ticker.body.contains("bars") || !ticker.body.contains("indicators")) ++schema;
  if (f.service->ticker("NOPE", std::nullopt, std::nullopt).status != 404) ++schema;
  if (f.service->rank("0").status != 422) ++schema;

  double worst = 0;
  for (const auto* side : {&rank.body.at("top"), &rank.body.at("bottom")}) {
    for (const auto& r : *side) {
      if (keys(r) != Keys{"symbol", "predicted_return", "rank", "models", "ensemble", "as_of", "target_date"}) ++schema;
      const auto& m = r.at("models");
      const double mean =
          (m.at("transformer").get<double>() + m.at("lstm").get<double>() + m.at("gbt").get<double>()) / 3.0;
      worst = std::max(worst, std::abs(r.at("ensemble").get<double>() - mean));
    }
  }

  test::Fixture g;
  const auto stress = test::stress_refresh(g);
  return {schema == 0 && worst <= 1e-9 && stress.torn == 0 && stress.reads > 0,
          std::to_string(schema) + " schema violations; max |ensemble - mean| " + num("%.1e", worst) +
              " (<= 1e-9); " + std::to_string(stress.torn) + " torn reads in " + std::to_string(stress.reads) +
              " reads across " + std::to_string(stress.refreshes) + " refreshes"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "gradient fidelity", gradient_fidelity},
      {2, "attention invariants", attention_invariants},
      {3, "indicator oracle suite", indicator_oracles},
      {4, "chance anchor", chance_anchor},
      {5, "directional transfer", directional_transfer},
      {6, "head-swap isolation", head_swap_isolation},
      {7, "GBT correctness", gbt_correctness},
      {8, "backtest oracle", backtest_oracle},
      {9, "leakage guard", leakage_guard},
      {10, "determinism", determinism},
      {11, "service contract", service_contract},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Timer t;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("[%s] %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), t.seconds());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
