#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "i2e/digest.hpp"
#include "i2e/text.hpp"
#include "pipeline_run.hpp"
#include "support.hpp"

using namespace i2e;
using nlohmann::json;

namespace {

const std::filesystem::path kTiny = std::filesystem::path(I2E_CONFIG_DIR) / "tiny.json";

const std::vector<std::string> kSubcommands{"ingest",   "stats",    "featurize", "pretrain", "finetune",
                                            "train-gbt", "evaluate", "backtest",  "predict",  "serve"};

}  // namespace

TEST_CASE("usage errors exit with 2 and help exits with 0") {
  auto s = test::run_cli({});
  CHECK(s.code == cli::kExitUsage);
  CHECK(s.err.find("featurize") != std::string::npos);

  s = test::run_cli({"--help"});
  CHECK(s.code == cli::kExitOk);
  for (const auto& name : kSubcommands) CHECK(s.out.find(name) != std::string::npos);

  for (const auto& name : kSubcommands) {
    CAPTURE(name);
    s = test::run_cli({name, "--help"});
    CHECK(s.code == cli::kExitOk);
    CHECK(s.out.find("--config") != std::string::npos);
  }
  CHECK(test::run_cli({"frobnicate"}).code == cli::kExitUsage);
  CHECK(test::run_cli({"finetune"}).code == cli::kExitUsage);
  CHECK(test::run_cli({"pretrain", "--model", "gru"}).code == cli::kExitUsage);
  CHECK(test::run_cli({"train-gbt", "--task", "ranking"}).code == cli::kExitUsage);
  CHECK(test::run_cli({"serve", "--port", "70000"}).code == cli::kExitUsage);
  CHECK(test::run_cli({"stats", "--seed", "x"}).code == cli::kExitUsage);
}

TEST_CASE("configuration and argument errors exit with 2, runtime errors with 1") {
  test::TempDir dir("cli");
  const auto bad = dir / "bad.json";
  std::ofstream(bad) << R"({"gbt": {"depth": 3}})";
  auto s = test::run_cli({"stats", "--config", bad.string()});
  CHECK(s.code == cli::kExitUsage);
  CHECK(s.err.find("gbt.depth") != std::string::npos);
  CHECK(test::run_cli({"stats", "--config", (dir / "missing.json").string()}).code == cli::kExitUsage);

  s = test::run_cli({"evaluate", "--config", kTiny.string(), "--out", (dir / "empty").string()});
  CHECK(s.code == cli::kExitRuntime);
  CHECK(s.err.find("featurize") != std::string::npos);
  s = test::run_cli({"finetune", "--from-weights", (dir / "none.i2ew").string(), "--config", kTiny.string(), "--out",
                     (dir / "empty").string()});
  CHECK(s.code == cli::kExitUsage);
  CHECK(s.err.find("--from-weights") != std::string::npos);
}

TEST_CASE("the tiny pipeline runs end to end and records manifests") {
  test::TempDir dir("cli");
  const auto out = dir / "run";
  const auto steps = test::run_pipeline(kTiny, out);
  REQUIRE(steps.size() == 12);
  for (const auto& s : steps) {
    CAPTURE(s.args.front());
    CAPTURE(s.err);
    CHECK(s.code == cli::kExitOk);
  }

  for (const char* f : {"datasets/stocks_train.i2eds", "datasets/index_validation.i2eds",
                        "models/pretrained_transformer.i2ew", "models/pretrained_lstm.i2ew",
                        "models/finetuned_transformer_classification.i2ew", "models/finetuned_lstm_regression.i2ew",
                        "models/gbt_classification.json", "models/gbt_regression.json", "reports/coverage.csv",
                        "reports/evaluation.json", "reports/backtest_ensemble.json",
                        "reports/backtest_ensemble_weekly.csv", "reports/predictions.json"}) {
    CAPTURE(f);
    CHECK(std::filesystem::exists(out / f));
  }
  CHECK(read_file(out / "reports/coverage.csv").rfind("date,tickers\n", 0) == 0);

  // Every manifest digest matches the file on disk.
  std::size_t checked = 0;
  for (const auto& entry : std::filesystem::directory_iterator(out / "manifests")) {
    const auto m = json::parse(read_file(entry.path()));
    CHECK(m.at("config").at("seed") == 3);
    for (const auto& [rel, digest] : m.at("outputs").items()) {
      CAPTURE(rel);
      CHECK(sha256_hex(read_file(out / rel)) == digest.get<std::string>());
      ++checked;
    }
  }
  CHECK(checked > 20);

  const auto compare = json::parse(read_file(out / "reports/finetuned_transformer_classification.json"));
  CHECK(compare.contains("pretrained"));
  CHECK(compare.contains("scratch"));

  const auto predictions = json::parse(read_file(out / "reports/predictions.json"));
  CHECK(predictions.at("records").size() == 10);
  CHECK(steps.back().out.find("Predictions for") != std::string::npos);
  const auto& backtest = steps[10].out;
  for (const char* name : {"transformer", "lstm", "gbt", "ensemble"}) CHECK(backtest.find(name) != std::string::npos);

  // Backbone mismatch between the weight file and the configuration is a configuration error.
  const auto other = dir / "other.json";
  std::ofstream(other) << R"({"transformer": {"blocks": 2, "d_model": 8, "heads": 2, "ffn_hidden": 16, "head_widths": [16, 8]}})";
  const auto s = test::run_cli({"finetune", "--from-weights", (out / "models/pretrained_transformer.i2ew").string(),
                                "--config", other.string(), "--out", out.string()});
  CHECK(s.code == cli::kExitUsage);
}

TEST_CASE("--seed overrides the configured seed") {
  test::TempDir dir("cli");
  const auto s = test::run_cli({"ingest", "--config", kTiny.string(), "--out", (dir / "o").string(), "--seed", "8"});
  REQUIRE(s.code == cli::kExitOk);
  const auto m = json::parse(read_file(dir / "o" / "manifests" / "ingest.json"));
  CHECK(m.at("config").at("seed") == 8);
  CHECK(m.at("config").at("paths").at("out_dir") == (dir / "o").string());
}
