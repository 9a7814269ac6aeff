#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "i2e/market_data.hpp"

namespace i2e::test {

/// Positive-price random-walk bars on consecutive weekdays.
inline TickerSeries random_walk(const std::string& symbol, std::size_t n, std::uint64_t seed,
                                Date start = make_date(2015, 1, 5)) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> step(0.0, 0.015);
  std::uniform_real_distribution<double> wick(0.0, 0.01);
  TickerSeries s{symbol, {}};
  double close = 50.0;
  Date d = start;
  for (std::size_t i = 0; i < n; ++i) {
    while (is_weekend(d)) d += std::chrono::days{1};
    const double open = close * (1.0 + step(rng) / 3);
    close = open * (1.0 + step(rng));
    const double high = std::max(open, close) * (1.0 + wick(rng));
    const double low = std::min(open, close) * (1.0 - wick(rng));
    s.bars.push_back({d, open, high, low, close, static_cast<std::int64_t>(1000 + 10 * (i % 7))});
    d += std::chrono::days{1};
  }
  return s;
}

inline std::vector<double> closes_of(const TickerSeries& s) {
  std::vector<double> out;
  for (const auto& b : s.bars) out.push_back(b.close);
  return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("i2e-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace i2e::test
