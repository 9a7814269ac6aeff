#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "i2e/dataset.hpp"
#include "i2e/forecasters.hpp"
#include "i2e/gbt.hpp"

namespace i2e {

enum class DataSource { synthetic, csv, http };

struct PathsConfig {
  std::filesystem::path out_dir = "i2e-out";
  std::filesystem::path cache_dir;  // empty: <out_dir>/cache

  std::filesystem::path cache() const { return cache_dir.empty() ? out_dir / "cache" : cache_dir; }
  std::filesystem::path features() const { return out_dir / "features"; }
  std::filesystem::path datasets() const { return out_dir / "datasets"; }
  std::filesystem::path models() const { return out_dir / "models"; }
  std::filesystem::path reports() const { return out_dir / "reports"; }
  std::filesystem::path manifests() const { return out_dir / "manifests"; }
};

struct DataConfig {
  DataSource source = DataSource::synthetic;
  std::string base_url = "https://query1.finance.yahoo.com";
  std::filesystem::path csv_dir;
  std::vector<std::string> symbols;
  std::string index_symbol = "^GSPTSE";
  DateRange range{make_date(2010, 1, 1), make_date(2023, 12, 1)};
  std::size_t max_concurrency = 4;
  SynthParams synthetic;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<Date> holidays;
};

/// Fully resolved run configuration. Seeds of models, data order, GBT and the
/// synthetic market are all derived from `seed`.
struct RunConfig {
  std::uint64_t seed = 1;
  PathsConfig paths;
  DataConfig data;
  SplitSpec split = SplitSpec::defaults();
  IndicatorConfig features;
  ModelConfig transformer;
  ModelConfig lstm;
  TrainSchedule pretrain;
  TrainSchedule finetune;
  gbt::GbtParams gbt;
  std::size_t backtest_k = 5;
  ServiceConfig service;

  RunConfig();

  /// Re-derives every seed from `seed`.
  void apply_seed(std::uint64_t s);
  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys anywhere raise ConfigError naming the dotted path.
  static RunConfig from_json(const nlohmann::json& j);
};

struct Overrides {
  std::optional<std::filesystem::path> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
};

/// Defaults, then the config file, then I2E_DATA_URL / I2E_CACHE_DIR, then flags.
RunConfig resolve_config(const Overrides& overrides);

}  // namespace i2e
