#include "i2e/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "i2e/error.hpp"
#include "i2e/text.hpp"

namespace i2e::gbt {

using nlohmann::json;

std::string to_string(Objective o) { return o == Objective::logistic ? "logistic" : "squared"; }

Objective parse_objective(const std::string& s) {
  if (s == "logistic") return Objective::logistic;
  if (s == "squared") return Objective::squared;
  throw ConfigError("unknown gbt objective '" + s + "'");
}

void GbtParams::validate() const {
  if (!(learning_rate > 0 && learning_rate <= 1)) throw ConfigError("gbt: learning_rate must be in (0, 1]");
  if (!(colsample_bytree > 0 && colsample_bytree <= 1)) throw ConfigError("gbt: colsample_bytree must be in (0, 1]");
  if (max_depth < 1) throw ConfigError("gbt: max_depth must be >= 1");
  if (max_leaves < 2) throw ConfigError("gbt: max_leaves must be >= 2");
  if (lambda < 0) throw ConfigError("gbt: lambda must be >= 0");
  if (min_child_weight < 0) throw ConfigError("gbt: min_child_weight must be >= 0");
}

json GbtParams::to_json() const {
  return json{{"n_estimators", n_estimators}, {"learning_rate", learning_rate},
              {"max_depth", max_depth},       {"colsample_bytree", colsample_bytree},
              {"max_leaves", max_leaves},     {"objective", to_string(objective)},
              {"seed", seed},                 {"lambda", lambda},
              {"min_child_weight", min_child_weight}};
}

GbtParams GbtParams::from_json(const json& j) {
  static const std::vector<std::string> known = {"n_estimators", "learning_rate", "max_depth",
                                                 "colsample_bytree", "max_leaves", "objective",
                                                 "seed", "lambda", "min_child_weight"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("gbt params: unknown key '" + key + "'");
    }
  }
  GbtParams p;
  try {
    if (j.contains("n_estimators")) p.n_estimators = j["n_estimators"].get<std::size_t>();
    if (j.contains("learning_rate")) p.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("max_depth")) p.max_depth = j["max_depth"].get<std::size_t>();
    if (j.contains("colsample_bytree")) p.colsample_bytree = j["colsample_bytree"].get<double>();
    if (j.contains("max_leaves")) p.max_leaves = j["max_leaves"].get<std::size_t>();
    if (j.contains("objective")) p.objective = parse_objective(j["objective"].get<std::string>());
    if (j.contains("seed")) p.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("lambda")) p.lambda = j["lambda"].get<double>();
    if (j.contains("min_child_weight")) p.min_child_weight = j["min_child_weight"].get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("gbt params: ") + e.what());
  }
  p.validate();
  return p;
}

double Tree::score(std::span<const float> row) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& n = nodes[i];
    i = static_cast<std::size_t>(static_cast<double>(row[static_cast<std::size_t>(n.feature)]) < n.threshold ? n.left
                                                                                                            : n.right);
  }
  return nodes[i].value;
}

std::size_t Tree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const auto& n) { return n.is_leaf(); }));
}

std::size_t Tree::depth() const {
  std::size_t d = 0;
  for (const auto& n : nodes) d = std::max(d, n.depth);
  return d;
}

double GbtModel::margin(std::span<const float> row) const {
  if (row.size() != n_features) {
    throw ShapeError("gbt: row has " + std::to_string(row.size()) + " features, model expects " +
                     std::to_string(n_features));
  }
  double s = 0;
  for (const auto& t : trees) s += t.score(row);
  return base_score + params.learning_rate * s;
}

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace

double GbtModel::predict_row(std::span<const float> row) const {
  const double m = margin(row);
  return params.objective == Objective::logistic ? sigmoid(m) : m;
}

std::vector<double> GbtModel::predict(const FeatureMatrix& x) const {
  if (x.cols != n_features) {
    throw ShapeError("gbt: input has " + std::to_string(x.cols) + " features, model expects " +
                     std::to_string(n_features));
  }
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = predict_row(x.values.subspan(r * x.cols, x.cols));
  return out;
}

json GbtModel::to_json() const {
  json jt = json::array();
  for (const auto& t : trees) {
    json feature = json::array(), threshold = json::array(), left = json::array(), right = json::array(),
         value = json::array(), gain = json::array(), depth = json::array();
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.value);
      gain.push_back(n.gain);
      depth.push_back(n.depth);
    }
    jt.push_back({{"columns", t.columns}, {"feature", feature}, {"threshold", threshold}, {"left", left},
                  {"right", right},       {"value", value},     {"gain", gain},           {"depth", depth}});
  }
  return json{{"format", "i2e-gbt"}, {"version", 1},        {"params", params.to_json()},
              {"n_features", n_features}, {"base_score", base_score}, {"train_loss", train_loss},
              {"trees", jt}};
}

GbtModel GbtModel::from_json(const json& j) {
  try {
    if (j.at("format") != "i2e-gbt") throw FormatError("gbt: not a model dump");
    if (j.at("version") != 1) throw FormatError("gbt: unknown version " + j.at("version").dump());
    GbtModel m;
    m.params = GbtParams::from_json(j.at("params"));
    m.n_features = j.at("n_features").get<std::size_t>();
    m.base_score = j.at("base_score").get<double>();
    m.train_loss = j.at("train_loss").get<std::vector<double>>();
    for (const auto& jt : j.at("trees")) {
      Tree t;
      t.columns = jt.at("columns").get<std::vector<std::size_t>>();
      const auto feature = jt.at("feature").get<std::vector<int>>();
      const auto threshold = jt.at("threshold").get<std::vector<double>>();
      const auto left = jt.at("left").get<std::vector<int>>();
      const auto right = jt.at("right").get<std::vector<int>>();
      const auto value = jt.at("value").get<std::vector<double>>();
      const auto gain = jt.at("gain").get<std::vector<double>>();
      const auto depth = jt.at("depth").get<std::vector<std::size_t>>();
      const std::size_t n = feature.size();
      if (n == 0 || threshold.size() != n || left.size() != n || right.size() != n || value.size() != n ||
          gain.size() != n || depth.size() != n) {
        throw FormatError("gbt: inconsistent node arrays");
      }
      for (std::size_t i = 0; i < n; ++i) {
        TreeNode node{feature[i], threshold[i], left[i], right[i], value[i], gain[i], depth[i]};
        if (!node.is_leaf()) {
          const auto in_range = [&](int c) { return c > static_cast<int>(i) && c < static_cast<int>(n); };
          if (!in_range(node.left) || !in_range(node.right) ||
              static_cast<std::size_t>(node.feature) >= m.n_features) {
            throw FormatError("gbt: bad node " + std::to_string(i));
          }
        }
        t.nodes.push_back(node);
      }
      m.trees.push_back(std::move(t));
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("gbt: malformed model: ") + e.what());
  }
}

double objective_value(Objective obj, std::span<const double> f, std::span<const double> y,
                       std::span<const double> w) {
  double total = 0, wsum = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double l = obj == Objective::squared ? 0.5 * (y[i] - f[i]) * (y[i] - f[i]) : softplus(f[i]) - y[i] * f[i];
    total += w[i] * l;
    wsum += w[i];
  }
  return total / wsum;
}

namespace {

using Index = std::uint32_t;

struct Split {
  bool valid = false;
  std::size_t column = 0;  // position within the sampled column list
  double threshold = 0;
  double gain = 0;
};

struct Work {
  int node = 0;
  std::size_t depth = 0;
  double g = 0, h = 0;
  std::vector<std::vector<Index>> sorted;  // node rows per sampled column, ascending by value
  Split best;
};

class TreeBuilder {
 public:
  TreeBuilder(const FeatureMatrix& x, const std::vector<double>& g, const std::vector<double>& h,
              const GbtParams& p)
      : x_(x), g_(g), h_(h), p_(p) {}

  Tree build(std::vector<std::size_t> columns, const std::vector<std::vector<Index>>& presorted) {
    Tree tree;
    tree.columns = std::move(columns);
    columns_ = &tree.columns;

    Work root;
    root.sorted.reserve(tree.columns.size());
    for (auto c : tree.columns) root.sorted.push_back(presorted[c]);
    for (Index r : root.sorted.front()) {
      root.g += g_[r];
      root.h += h_[r];
    }
    tree.nodes.push_back(leaf(root, 0));
    consider(root);

    std::vector<Work> open;
    open.push_back(std::move(root));
    std::size_t leaves = 1;
    while (leaves < p_.max_leaves) {
      auto pick = open.end();
      for (auto it = open.begin(); it != open.end(); ++it) {
        if (!it->best.valid) continue;
        if (pick == open.end() || it->best.gain > pick->best.gain ||
            (it->best.gain == pick->best.gain && it->node < pick->node)) {
          pick = it;
        }
      }
      if (pick == open.end()) break;
      Work parent = std::move(*pick);
      open.erase(pick);

      auto [left, right] = partition(parent);
      left.node = static_cast<int>(tree.nodes.size());
      right.node = left.node + 1;
      auto& pn = tree.nodes[static_cast<std::size_t>(parent.node)];
      pn.feature = static_cast<int>((*columns_)[parent.best.column]);
      pn.threshold = parent.best.threshold;
      pn.gain = parent.best.gain;
      pn.left = left.node;
      pn.right = right.node;
      pn.value = 0;
      tree.nodes.push_back(leaf(left, parent.depth + 1));
      tree.nodes.push_back(leaf(right, parent.depth + 1));
      ++leaves;
      for (Work* child : {&left, &right}) {
        child->depth = parent.depth + 1;
        consider(*child);
        if (child->best.valid) open.push_back(std::move(*child));
      }
    }
    return tree;
  }

 private:
  TreeNode leaf(const Work& w, std::size_t depth) const {
    TreeNode n;
    n.value = -w.g / (w.h + p_.lambda);
    n.depth = depth;
    return n;
  }

  double score(double g, double h) const { return g * g / (h + p_.lambda); }

  void consider(Work& w) const {
    w.best = {};
    if (w.depth >= p_.max_depth) return;
    const double parent = score(w.g, w.h);
    for (std::size_t c = 0; c < w.sorted.size(); ++c) {
      const auto& idx = w.sorted[c];
      const std::size_t f = (*columns_)[c];
      double gl = 0, hl = 0;
      for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
        gl += g_[idx[i]];
        hl += h_[idx[i]];
        const float a = x_.at(idx[i], f);
        const float b = x_.at(idx[i + 1], f);
        if (a == b) continue;
        const double hr = w.h - hl;
        if (hl < p_.min_child_weight || hr < p_.min_child_weight) continue;
        const double gain = 0.5 * (score(gl, hl) + score(w.g - gl, hr) - parent);
        if (gain > w.best.gain) {
          w.best = {true, c, 0.5 * (static_cast<double>(a) + static_cast<double>(b)), gain};
        }
      }
    }
  }

  std::pair<Work, Work> partition(const Work& parent) const {
    const std::size_t f = (*columns_)[parent.best.column];
    const double thr = parent.best.threshold;
    Work left, right;
    left.sorted.resize(parent.sorted.size());
    right.sorted.resize(parent.sorted.size());
    for (std::size_t c = 0; c < parent.sorted.size(); ++c) {
      for (Index r : parent.sorted[c]) {
        (static_cast<double>(x_.at(r, f)) < thr ? left : right).sorted[c].push_back(r);
      }
    }
    for (Index r : left.sorted.front()) {
      left.g += g_[r];
      left.h += h_[r];
    }
    for (Index r : right.sorted.front()) {
      right.g += g_[r];
      right.h += h_[r];
    }
    return {std::move(left), std::move(right)};
  }

  const FeatureMatrix& x_;
  const std::vector<double>& g_;
  const std::vector<double>& h_;
  const GbtParams& p_;
  const std::vector<std::size_t>* columns_ = nullptr;
};

}  // namespace

GbtModel fit(const FeatureMatrix& x, std::span<const double> y, std::optional<std::span<const double>> weights,
             const GbtParams& params) {
  params.validate();
  const std::size_t n = x.rows();
  if (n == 0 || x.cols == 0) throw DataError("gbt: empty training data");
  if (x.values.size() != n * x.cols) throw ShapeError("gbt: feature buffer is not rows x cols");
  if (y.size() != n) throw ShapeError("gbt: " + std::to_string(y.size()) + " targets for " + std::to_string(n) + " rows");
  if (weights && weights->size() != n) throw ShapeError("gbt: weight count differs from row count");
  for (float v : x.values) {
    if (!std::isfinite(v)) throw DataError("gbt: non-finite feature value");
  }
  for (double v : y) {
    if (!std::isfinite(v)) throw DataError("gbt: non-finite target");
    if (params.objective == Objective::logistic && v != 0.0 && v != 1.0) {
      throw DataError("gbt: logistic targets must be 0 or 1");
    }
  }
  std::vector<double> w(n, 1.0);
  if (weights) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!((*weights)[i] >= 0) || !std::isfinite((*weights)[i])) throw DataError("gbt: weights must be finite and >= 0");
      w[i] = (*weights)[i];
    }
  }
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(wsum > 0)) throw DataError("gbt: total weight is zero");

  GbtModel model;
  model.params = params;
  model.n_features = x.cols;
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += w[i] * y[i];
  mean /= wsum;
  if (params.objective == Objective::logistic) {
    const double p = std::clamp(mean, 1e-6, 1.0 - 1e-6);
    model.base_score = std::log(p / (1.0 - p));
  } else {
    model.base_score = mean;
  }

  std::vector<std::vector<Index>> presorted(x.cols);
  for (std::size_t c = 0; c < x.cols; ++c) {
    auto& idx = presorted[c];
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return x.at(a, c) < x.at(b, c); });
  }

  const std::vector<double> yv(y.begin(), y.end());
  std::vector<double> f(n, model.base_score), g(n), h(n);
  model.train_loss.push_back(objective_value(params.objective, f, yv, w));

  const std::size_t n_cols = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(params.colsample_bytree * static_cast<double>(x.cols) + 1e-9)));
  std::mt19937_64 rng(params.seed);
  std::vector<std::size_t> all(x.cols);

  for (std::size_t round = 0; round < params.n_estimators; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      if (params.objective == Objective::squared) {
        g[i] = w[i] * (f[i] - yv[i]);
        h[i] = w[i];
      } else {
        const double p = sigmoid(f[i]);
        g[i] = w[i] * (p - yv[i]);
        h[i] = w[i] * p * (1.0 - p);
      }
    }
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t i = 0; i < n_cols; ++i) std::swap(all[i], all[i + rng() % (x.cols - i)]);
    std::vector<std::size_t> columns(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_cols));
    std::sort(columns.begin(), columns.end());

    TreeBuilder builder(x, g, h, params);
    Tree tree = builder.build(std::move(columns), presorted);
    for (std::size_t i = 0; i < n; ++i) f[i] += params.learning_rate * tree.score(x.values.subspan(i * x.cols, x.cols));
    model.trees.push_back(std::move(tree));
    model.train_loss.push_back(objective_value(params.objective, f, yv, w));
  }
  return model;
}

void save_model(const std::filesystem::path& path, const GbtModel& model) {
  write_file_atomic(path, model.to_json().dump(1) + "\n");
}

GbtModel load_model(const std::filesystem::path& path) {
  try {
    return GbtModel::from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace i2e::gbt
