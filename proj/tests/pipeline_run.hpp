#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "i2e/cli.hpp"

namespace i2e::test {

struct Step {
  std::vector<std::string> args;
  int code = 0;
  std::string out, err;
};

inline Step run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Step s;
  s.code = cli::run(args, out, err);
  s.args = std::move(args);
  s.out = out.str();
  s.err = err.str();
  return s;
}

/// Every subcommand except serve, in pipeline order. Stops at the first failure.
inline std::vector<Step> run_pipeline(const std::filesystem::path& config, const std::filesystem::path& out,
                                      std::optional<std::uint64_t> seed = {}) {
  std::vector<std::string> common{"--config", config.string(), "--out", out.string()};
  if (seed) {
    common.push_back("--seed");
    common.push_back(std::to_string(*seed));
  }
  const auto models = out / "models";
  const std::vector<std::vector<std::string>> commands{
      {"ingest"},
      {"stats"},
      {"featurize"},
      {"pretrain"},
      {"finetune", "--from-weights", (models / "pretrained_transformer.i2ew").string(), "--compare-scratch"},
      {"finetune", "--from-weights", (models / "pretrained_lstm.i2ew").string(), "--compare-scratch"},
      {"finetune", "--from-weights", (models / "pretrained_transformer.i2ew").string(), "--task", "regression"},
      {"finetune", "--from-weights", (models / "pretrained_lstm.i2ew").string(), "--task", "regression"},
      {"train-gbt"},
      {"evaluate"},
      {"backtest"},
      {"predict"}};
  std::vector<Step> steps;
  for (auto args : commands) {
    args.insert(args.end(), common.begin(), common.end());
    steps.push_back(run_cli(std::move(args)));
    if (steps.back().code != 0) break;
  }
  return steps;
}

}  // namespace i2e::test
