#include "i2e/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <unordered_map>

#include "i2e/text.hpp"

namespace i2e {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

double clip_target(double r) { return std::min(r, kReturnClip); }

std::vector<DatedReturn> intraday_returns(const TickerSeries& series) {
  std::vector<DatedReturn> out;
  out.reserve(series.size());
  for (const auto& b : series.bars) out.push_back({b.date, intraday_return(b)});
  return out;
}

std::vector<Sample> make_windows(const std::string& symbol, std::span<const FeatureRow> features,
                                 std::span<const DatedReturn> returns) {
  std::unordered_map<std::int64_t, std::size_t> day_index;
  day_index.reserve(returns.size());
  for (std::size_t i = 0; i < returns.size(); ++i) day_index[day_number(returns[i].date)] = i;

  std::vector<std::size_t> pos(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    auto it = day_index.find(day_number(features[i].date));
    if (it == day_index.end()) {
      throw DataError(symbol + ": feature date " + format_date(features[i].date) +
                      " has no trading day");
    }
    pos[i] = it->second;
  }

  std::vector<Sample> out;
  for (std::size_t i = kWindowDays - 1; i < features.size(); ++i) {
    const std::size_t target = pos[i] + 1;
    if (target >= returns.size()) break;
    // The window must cover ten consecutive trading days.
    if (pos[i] - pos[i + 1 - kWindowDays] != kWindowDays - 1) continue;

    Sample s;
    s.symbol = symbol;
    s.anchor_date = features[i].date;
    s.target_date = returns[target].date;
    for (std::size_t d = 0; d < kWindowDays; ++d) {
      auto v = features[i + 1 - kWindowDays + d].values();
      v[0] = clip_target(v[0]);
      std::copy(v.begin(), v.end(), s.window.begin() + static_cast<std::ptrdiff_t>(d * kFeatureCount));
    }
    s.raw_return = returns[target].value;
    s.target_return = clip_target(s.raw_return);
    s.target_label = s.raw_return > 0 ? 1 : 0;
    out.push_back(std::move(s));
  }
  return out;
}

std::optional<Sample> latest_window(const std::string& symbol, std::span<const FeatureRow> features,
                                    std::span<const DatedReturn> returns) {
  if (features.size() < kWindowDays || returns.size() < kWindowDays) return std::nullopt;
  const auto first_feature = features.size() - kWindowDays;
  const auto first_return = returns.size() - kWindowDays;
  for (std::size_t d = 0; d < kWindowDays; ++d) {
    if (features[first_feature + d].date != returns[first_return + d].date) return std::nullopt;
  }
  Sample s;
  s.symbol = symbol;
  s.anchor_date = features.back().date;
  s.target_date = s.anchor_date;
  for (std::size_t d = 0; d < kWindowDays; ++d) {
    auto v = features[first_feature + d].values();
    v[0] = clip_target(v[0]);
    std::copy(v.begin(), v.end(), s.window.begin() + static_cast<std::ptrdiff_t>(d * kFeatureCount));
  }
  return s;
}

std::vector<Sample> build_samples(const TickerSeries& series, const IndicatorConfig& config) {
  auto trimmed = exclude_first_year(series);
  auto features = compute_features(trimmed, config);
  auto returns = intraday_returns(trimmed);
  return make_windows(series.symbol, features.rows, returns);
}

// ---------------------------------------------------------------------------

MinMaxScaler::MinMaxScaler(std::array<double, kScalerChannels> mins,
                           std::array<double, kScalerChannels> maxs)
    : mins_(mins), maxs_(maxs), fitted_(true) {
  for (std::size_t c = 0; c < kScalerChannels; ++c) {
    if (!(maxs_[c] >= mins_[c])) throw DataError("scaler: max < min on channel " + std::to_string(c));
  }
}

void MinMaxScaler::require_fitted() const {
  if (!fitted_) throw DataError("scaler has not been fitted");
}

double MinMaxScaler::transform(std::size_t c, double x) const {
  require_fitted();
  const double range = maxs_[c] - mins_[c];
  if (range == 0) return 0.0;
  return (x - mins_[c]) / range;
}

double MinMaxScaler::inverse(std::size_t c, double x) const {
  require_fitted();
  const double range = maxs_[c] - mins_[c];
  if (range == 0) return mins_[c];
  return x * range + mins_[c];
}

MinMaxScaler fit_scaler(std::span<const Sample> train) {
  if (train.empty()) throw DataError("fit_scaler: empty training partition");
  std::array<double, kScalerChannels> lo;
  std::array<double, kScalerChannels> hi;
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (const auto& s : train) {
    for (std::size_t i = 0; i < kFlatWidth; ++i) {
      const std::size_t c = i % kFeatureCount;
      lo[c] = std::min(lo[c], s.window[i]);
      hi[c] = std::max(hi[c], s.window[i]);
    }
    lo[kFeatureCount] = std::min(lo[kFeatureCount], s.target_return);
    hi[kFeatureCount] = std::max(hi[kFeatureCount], s.target_return);
  }
  return MinMaxScaler(lo, hi);
}

std::vector<Sample> apply_scaler(const MinMaxScaler& scaler, std::span<const Sample> samples) {
  if (!scaler.fitted()) throw DataError("apply_scaler: scaler has not been fitted");
  std::vector<Sample> out(samples.begin(), samples.end());
  for (auto& s : out) {
    for (std::size_t i = 0; i < kFlatWidth; ++i) s.window[i] = scaler.transform(i % kFeatureCount, s.window[i]);
    s.target_return = scaler.transform(kFeatureCount, s.target_return);
  }
  return out;
}

std::vector<Sample> invert_scaler(const MinMaxScaler& scaler, std::span<const Sample> samples) {
  std::vector<Sample> out(samples.begin(), samples.end());
  for (auto& s : out) {
    for (std::size_t i = 0; i < kFlatWidth; ++i) s.window[i] = scaler.inverse(i % kFeatureCount, s.window[i]);
    s.target_return = scaler.inverse_target(s.target_return);
  }
  return out;
}

// ---------------------------------------------------------------------------

void SplitSpec::validate() const {
  for (const auto* r : {&train, &validation, &test}) {
    if (r->empty()) throw ConfigError("split interval is empty");
  }
  if (train.overlaps(validation) || train.overlaps(test) || validation.overlaps(test)) {
    throw ConfigError("split intervals overlap");
  }
  if (!(train.last < validation.first && validation.last < test.first)) {
    throw ConfigError("split intervals must be ordered train < validation < test");
  }
}

SplitSpec SplitSpec::defaults() {
  return SplitSpec{{make_date(2010, 1, 1), make_date(2021, 12, 31)},
                   {make_date(2022, 1, 1), make_date(2022, 12, 31)},
                   {make_date(2023, 1, 1), make_date(2023, 12, 1)}};
}

Partitions split_by_date(std::span<const Sample> samples, const SplitSpec& spec) {
  spec.validate();
  Partitions p;
  for (const auto& s : samples) {
    if (spec.train.contains(s.target_date)) p.train.push_back(s);
    else if (spec.validation.contains(s.target_date)) p.validation.push_back(s);
    else if (spec.test.contains(s.target_date)) p.test.push_back(s);
  }
  return p;
}

std::pair<double, double> class_weights(std::span<const int> labels) {
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("class_weights: labels must be 0 or 1");
    pos += static_cast<std::size_t>(y);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw DataError("class_weights: both classes must be present");
  const double n = static_cast<double>(labels.size());
  return {n / (2.0 * static_cast<double>(neg)), n / (2.0 * static_cast<double>(pos))};
}

Window flatten_window(const Sample& sample) { return sample.window; }

std::array<std::array<double, kFeatureCount>, kWindowDays> unflatten_window(const Window& flat) {
  std::array<std::array<double, kFeatureCount>, kWindowDays> out{};
  for (std::size_t d = 0; d < kWindowDays; ++d) {
    for (std::size_t f = 0; f < kFeatureCount; ++f) out[d][f] = flat[d * kFeatureCount + f];
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Date> weekdays_from(Date start, std::size_t n) {
  std::vector<Date> out;
  out.reserve(n);
  for (Date d = start; out.size() < n; d += std::chrono::days{1}) {
    if (!is_weekend(d)) out.push_back(d);
  }
  return out;
}

struct BarMaker {
  std::mt19937_64& rng;
  std::normal_distribution<double> normal{0.0, 1.0};
  std::uniform_real_distribution<double> unit{0.0, 1.0};

  DailyBar next(Date date, double prev_close, double ret) {
    DailyBar b;
    b.date = date;
    b.open = prev_close * (1.0 + 0.002 * normal(rng));
    b.close = b.open * (1.0 + ret);
    b.high = std::max(b.open, b.close) * (1.0 + 0.004 * std::abs(normal(rng)));
    b.low = std::min(b.open, b.close) * (1.0 - 0.004 * std::abs(normal(rng)));
    b.volume = static_cast<std::int64_t>(1000 + 100000 * unit(rng));
    return b;
  }
};

}  // namespace

SynthMarket synth_market(const SynthParams& p) {
  if (p.n_stocks < 2) throw DataError("synth_market: need at least 2 stocks");
  if (p.n_days < 200) throw DataError("synth_market: need at least 200 days");
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto dates = weekdays_from(p.start, p.n_days);
  auto bounded = [](double r) { return std::clamp(r, -0.5, 1.0); };

  std::vector<double> factor(p.n_days);
  const double innovation = p.factor_vol * std::sqrt(1.0 - p.factor_ar * p.factor_ar);
  double f = p.factor_vol * normal(rng);
  for (std::size_t t = 0; t < p.n_days; ++t) {
    if (t > 0) f = p.factor_ar * f + innovation * normal(rng);
    factor[t] = bounded(f);
  }

  BarMaker maker{rng};
  SynthMarket out;
  out.index.symbol = p.index_symbol;
  double close = 1000.0;
  for (std::size_t t = 0; t < p.n_days; ++t) {
    auto b = maker.next(dates[t], close, factor[t]);
    close = b.close;
    out.index.bars.push_back(b);
  }

  for (std::size_t i = 0; i < p.n_stocks; ++i) {
    char sym[16];
    std::snprintf(sym, sizeof sym, "S%03zu", i);
    const double beta = 0.5 + unit(rng);
    TickerSeries s{sym, {}};
    s.bars.reserve(p.n_days);
    double price = 10.0 + 90.0 * unit(rng);
    for (std::size_t t = 0; t < p.n_days; ++t) {
      const double r = bounded(beta * factor[t] + p.noise_scale * p.idio_vol * normal(rng));
      auto b = maker.next(dates[t], price, r);
      price = b.close;
      s.bars.push_back(b);
    }
    out.stocks.as_of = std::max(out.stocks.as_of, s.bars.back().date);
    out.stocks.series_by_symbol[sym] = std::move(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary partition cache

namespace {

constexpr char kDatasetMagic[6] = {'I', '2', 'E', 'D', 'S', '1'};
constexpr std::size_t kRecordFloats = 3 + kFlatWidth + 3;

template <class T>
void put(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}

  template <class T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) throw FormatError("dataset file is truncated");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    if (pos_ + n > data_.size()) throw FormatError("dataset file is truncated");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_dataset(const std::filesystem::path& path, std::span<const Sample> samples,
                   const MinMaxScaler& scaler) {
  std::vector<std::string> symbols;
  std::unordered_map<std::string, std::uint32_t> symbol_id;
  for (const auto& s : samples) {
    if (symbol_id.emplace(s.symbol, static_cast<std::uint32_t>(symbols.size())).second) {
      symbols.push_back(s.symbol);
    }
  }

  std::string buf(kDatasetMagic, sizeof kDatasetMagic);
  put<std::uint32_t>(buf, kWindowDays);
  put<std::uint32_t>(buf, kFeatureCount);
  put<std::uint64_t>(buf, samples.size());
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(symbols.size()));
  put<std::uint8_t>(buf, scaler.fitted() ? 1 : 0);
  for (double v : scaler.mins()) put<double>(buf, v);
  for (double v : scaler.maxs()) put<double>(buf, v);
  for (const auto& sym : symbols) {
    put<std::uint16_t>(buf, static_cast<std::uint16_t>(sym.size()));
    buf += sym;
  }
  for (const auto& s : samples) {
    put<float>(buf, static_cast<float>(symbol_id[s.symbol]));
    put<float>(buf, static_cast<float>(day_number(s.anchor_date)));
    put<float>(buf, static_cast<float>(day_number(s.target_date)));
    for (double v : s.window) put<float>(buf, static_cast<float>(v));
    put<float>(buf, static_cast<float>(s.target_return));
    put<float>(buf, static_cast<float>(s.raw_return));
    put<float>(buf, static_cast<float>(s.target_label));
  }
  write_file_atomic(path, buf);
}

DatasetFile read_dataset(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  Reader r(data);
  if (r.bytes(sizeof kDatasetMagic) != std::string(kDatasetMagic, sizeof kDatasetMagic)) {
    throw FormatError(path.string() + ": not an I2EDS1 dataset file");
  }
  if (r.get<std::uint32_t>() != kWindowDays || r.get<std::uint32_t>() != kFeatureCount) {
    throw FormatError(path.string() + ": unexpected window shape");
  }
  const auto n = r.get<std::uint64_t>();
  const auto n_symbols = r.get<std::uint32_t>();
  const bool fitted = r.get<std::uint8_t>() != 0;
  std::array<double, kScalerChannels> mins{};
  std::array<double, kScalerChannels> maxs{};
  for (auto& v : mins) v = r.get<double>();
  for (auto& v : maxs) v = r.get<double>();

  DatasetFile out;
  if (fitted) out.scaler = MinMaxScaler(mins, maxs);
  std::vector<std::string> symbols(n_symbols);
  for (auto& sym : symbols) sym = r.bytes(r.get<std::uint16_t>());

  out.samples.resize(n);
  for (auto& s : out.samples) {
    const auto id = static_cast<std::size_t>(r.get<float>());
    if (id >= symbols.size()) throw FormatError(path.string() + ": bad symbol index");
    s.symbol = symbols[id];
    s.anchor_date = from_day_number(static_cast<std::int64_t>(r.get<float>()));
    s.target_date = from_day_number(static_cast<std::int64_t>(r.get<float>()));
    for (auto& v : s.window) v = r.get<float>();
    s.target_return = r.get<float>();
    s.raw_return = r.get<float>();
    s.target_label = static_cast<int>(r.get<float>());
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
  static_assert(kRecordFloats == 156);
  return out;
}

}  // namespace i2e
