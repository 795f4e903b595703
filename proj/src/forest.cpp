#include "mus/forest.hpp"

#include "mus/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <limits>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>

namespace mus {

void FeatureMatrix::push_row(std::span<const double> row) {
  if (rows == 0 && cols == 0) cols = row.size();
  if (row.size() != cols) throw std::invalid_argument("FeatureMatrix::push_row: width mismatch");
  values.insert(values.end(), row.begin(), row.end());
  ++rows;
}

int ForestConfig::resolved_max_features(std::size_t d) const {
  if (max_features) return *max_features;
  return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));
}

void ForestConfig::validate(std::size_t d) const {
  if (n_trees < 1) throw std::invalid_argument("ForestConfig: n_trees must be >= 1");
  const int mf = resolved_max_features(d);
  if (mf < 1 || static_cast<std::size_t>(mf) > d) throw std::invalid_argument("ForestConfig: max_features out of [1, d]");
  if (max_depth && *max_depth < 0) throw std::invalid_argument("ForestConfig: max_depth must be >= 0");
  if (min_samples_leaf < 1) throw std::invalid_argument("ForestConfig: min_samples_leaf must be >= 1");
  if (threads < 0) throw std::invalid_argument("ForestConfig: threads must be >= 0");
}

DecisionTree DecisionTree::leaf(double p1) {
  DecisionTree t;
  t.feature = {-1};
  t.threshold = {0.0};
  t.left = {-1};
  t.right = {-1};
  t.value = {p1};
  return t;
}

int DecisionTree::depth() const {
  if (feature.empty()) return 0;
  std::function<int(int)> walk = [&](int node) -> int {
    if (feature[node] < 0) return 0;
    return 1 + std::max(walk(left[node]), walk(right[node]));
  };
  return walk(0);
}

double DecisionTree::predict(std::span<const double> x) const {
  int node = 0;
  while (feature[node] >= 0) {
    node = x[static_cast<std::size_t>(feature[node])] <= threshold[node] ? left[node] : right[node];
  }
  return value[node];
}

std::array<double, 2> balanced_class_weights(std::span<const int> y) {
  std::array<std::size_t, 2> counts{0, 0};
  for (int label : y) {
    if (label != 0 && label != 1) throw std::invalid_argument("labels must be 0 or 1");
    ++counts[label];
  }
  if (counts[0] == 0 || counts[1] == 0) throw std::invalid_argument("both classes must be present");
  const double n = static_cast<double>(y.size());
  return {n / (2.0 * counts[0]), n / (2.0 * counts[1])};
}

namespace {

std::uint64_t tree_seed(std::uint64_t seed, std::size_t tree) { return derive_seed(seed, static_cast<std::uint64_t>(tree)); }

// Sum of class-weighted Gini impurity over a node: W * (1 - sum p_c^2).
double weighted_gini(double w0, double w1) {
  const double total = w0 + w1;
  return total > 0.0 ? 2.0 * w0 * w1 / total : 0.0;
}

bool improves(double candidate, double best) {
  if (std::isinf(best)) return std::isfinite(candidate);
  return candidate < best - 1e-9 * std::max(1.0, std::abs(best));
}

class TreeBuilder {
public:
  TreeBuilder(const FeatureMatrix& x, std::span<const int> y, const std::vector<std::uint32_t>& multiplicity,
              const ForestConfig& config, std::array<double, 2> weights, std::uint64_t seed)
      : x_(x), y_(y), mult_(multiplicity), config_(config), weights_(weights), rng_(seed),
        max_features_(config.resolved_max_features(x.cols)) {
    for (std::size_t i = 0; i < mult_.size(); ++i)
      if (mult_[i] > 0) idx_.push_back(static_cast<std::uint32_t>(i));
    buf_.reserve(idx_.size());
    features_.resize(x.cols);
  }

  DecisionTree build() {
    grow(0, idx_.size(), 0);
    return std::move(tree_);
  }

private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double impurity = 0.0;
  };

  int grow(std::size_t begin, std::size_t end, int depth) {
    std::uint64_t c0 = 0, c1 = 0;
    for (std::size_t i = begin; i < end; ++i) (y_[idx_[i]] ? c1 : c0) += mult_[idx_[i]];
    const double w0 = c0 * weights_[0], w1 = c1 * weights_[1];

    const int node = static_cast<int>(tree_.feature.size());
    tree_.feature.push_back(-1);
    tree_.threshold.push_back(0.0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    tree_.value.push_back(w1 / (w0 + w1));

    const bool pure = c0 == 0 || c1 == 0;
    const bool capped = config_.max_depth && depth >= *config_.max_depth;
    const bool small = c0 + c1 < 2 * static_cast<std::uint64_t>(config_.min_samples_leaf);
    if (pure || capped || small) return node;

    const auto split = find_split(begin, end, c0, c1);
    if (split.feature < 0) return node;

    const auto f = static_cast<std::size_t>(split.feature);
    auto mid = std::stable_partition(idx_.begin() + static_cast<std::ptrdiff_t>(begin),
                                     idx_.begin() + static_cast<std::ptrdiff_t>(end),
                                     [&](std::uint32_t r) { return x_.at(r, f) <= split.threshold; });
    const auto cut = static_cast<std::size_t>(mid - idx_.begin());

    tree_.feature[node] = split.feature;
    tree_.threshold[node] = split.threshold;
    const int l = grow(begin, cut, depth + 1);
    tree_.left[node] = l;
    const int r = grow(cut, end, depth + 1);
    tree_.right[node] = r;
    return node;
  }

  // Draws features without replacement; looks at max_features of them and
  // keeps drawing past that only while no valid split has been found.
  Split find_split(std::size_t begin, std::size_t end, std::uint64_t c0, std::uint64_t c1) {
    for (std::size_t j = 0; j < features_.size(); ++j) features_[j] = static_cast<int>(j);
    Split best;
    best.impurity = std::numeric_limits<double>::infinity();
    const std::size_t d = features_.size();
    for (std::size_t k = 0; k < d; ++k) {
      if (static_cast<int>(k) >= max_features_ && best.feature >= 0) break;
      const std::size_t pick = k + rng_.index(d - k);
      std::swap(features_[k], features_[pick]);
      scan_feature(features_[k], begin, end, c0, c1, best);
    }
    return best;
  }

  void scan_feature(int feature, std::size_t begin, std::size_t end, std::uint64_t c0, std::uint64_t c1, Split& best) {
    const auto f = static_cast<std::size_t>(feature);
    buf_.clear();
    for (std::size_t i = begin; i < end; ++i) buf_.emplace_back(x_.at(idx_[i], f), idx_[i]);
    std::sort(buf_.begin(), buf_.end());
    if (buf_.front().first == buf_.back().first) return;

    const auto msl = static_cast<std::uint64_t>(config_.min_samples_leaf);
    std::uint64_t l0 = 0, l1 = 0;
    for (std::size_t i = 0; i + 1 < buf_.size(); ++i) {
      const auto row = buf_[i].second;
      (y_[row] ? l1 : l0) += mult_[row];
      const double v = buf_[i].first, next = buf_[i + 1].first;
      if (!(v < next)) continue;
      const std::uint64_t r0 = c0 - l0, r1 = c1 - l1;
      if (l0 + l1 < msl || r0 + r1 < msl) continue;
      const double impurity =
          weighted_gini(l0 * weights_[0], l1 * weights_[1]) + weighted_gini(r0 * weights_[0], r1 * weights_[1]);
      if (improves(impurity, best.impurity)) {
        double t = v + (next - v) / 2.0;
        if (!(t < next)) t = v;
        best = {feature, t, impurity};
      }
    }
  }

  const FeatureMatrix& x_;
  std::span<const int> y_;
  const std::vector<std::uint32_t>& mult_;
  const ForestConfig& config_;
  std::array<double, 2> weights_;
  Rng rng_;
  int max_features_;
  std::vector<std::uint32_t> idx_;
  std::vector<std::pair<double, std::uint32_t>> buf_;
  std::vector<int> features_;
  DecisionTree tree_;
};

void check_training_data(const FeatureMatrix& x, std::span<const int> y) {
  if (x.rows != y.size()) throw std::invalid_argument("fit_forest: X and y row counts differ");
  if (x.rows < 2) throw std::invalid_argument("fit_forest: need at least 2 samples");
  if (x.cols < 1) throw std::invalid_argument("fit_forest: need at least 1 feature");
  if (x.values.size() != x.rows * x.cols) throw std::invalid_argument("fit_forest: malformed feature matrix");
  for (double v : x.values)
    if (!std::isfinite(v)) throw std::invalid_argument("fit_forest: non-finite feature value");
  for (int label : y)
    if (label != 0 && label != 1) throw std::invalid_argument("fit_forest: labels must be 0 or 1");
  if (std::all_of(y.begin(), y.end(), [&](int v) { return v == y.front(); })) {
    throw std::invalid_argument("fit_forest: training labels contain a single class");
  }
}

using ResampleFn = std::function<std::vector<std::size_t>(std::size_t tree)>;

ForestModel fit_impl(const FeatureMatrix& x, std::span<const int> y, const ForestConfig& config,
                     const ResampleFn& resample) {
  check_training_data(x, y);
  config.validate(x.cols);

  ForestModel model;
  model.config = config;
  model.n_features = x.cols;
  model.n_train = x.rows;
  model.class_weights = config.balanced_class_weight ? balanced_class_weights(y) : std::array<double, 2>{1.0, 1.0};
  const auto n_trees = static_cast<std::size_t>(config.n_trees);
  model.trees.resize(n_trees);
  model.oob_indices.resize(n_trees);

  auto fit_one = [&](std::size_t t) {
    std::vector<std::uint32_t> mult(x.rows, 0);
    for (std::size_t r : resample(t)) {
      if (r >= x.rows) throw std::invalid_argument("fit_forest: resample index out of range");
      ++mult[r];
    }
    std::vector<std::uint32_t> oob;
    for (std::size_t i = 0; i < x.rows; ++i)
      if (mult[i] == 0) oob.push_back(static_cast<std::uint32_t>(i));
    if (oob.size() == x.rows) throw std::invalid_argument("fit_forest: empty resample");
    TreeBuilder builder(x, y, mult, config, model.class_weights, derive_seed(tree_seed(config.seed, t), "features"));
    model.trees[t] = builder.build();
    model.oob_indices[t] = std::move(oob);
  };

  unsigned workers = config.threads > 0 ? static_cast<unsigned>(config.threads) : std::thread::hardware_concurrency();
  workers = std::clamp<unsigned>(workers, 1u, static_cast<unsigned>(n_trees));
  if (workers == 1) {
    for (std::size_t t = 0; t < n_trees; ++t) fit_one(t);
    return model;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t t = next++; t < n_trees && !failed; t = next++) {
        try {
          fit_one(t);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return model;
}

}  // namespace

std::vector<std::size_t> stratified_resample(std::span<const int> y, std::uint64_t seed, std::size_t tree) {
  std::array<std::vector<std::size_t>, 2> members;
  for (std::size_t i = 0; i < y.size(); ++i) members[y[i] ? 1 : 0].push_back(i);
  Rng rng(derive_seed(tree_seed(seed, tree), "bootstrap"));
  std::vector<std::size_t> out;
  out.reserve(y.size());
  for (const auto& group : members)
    for (std::size_t k = 0; k < group.size(); ++k) out.push_back(group[rng.index(group.size())]);
  return out;
}

ForestModel fit_forest(const FeatureMatrix& x, std::span<const int> y, const ForestConfig& config) {
  std::vector<std::size_t> all;
  if (config.bootstrap == Bootstrap::none) {
    all.resize(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) all[i] = i;
  }
  return fit_impl(x, y, config, [&](std::size_t t) {
    return config.bootstrap == Bootstrap::none ? all : stratified_resample(y, config.seed, t);
  });
}

ForestModel fit_forest_with_resamples(const FeatureMatrix& x, std::span<const int> y, const ForestConfig& config,
                                      const std::vector<std::vector<std::size_t>>& resamples) {
  if (resamples.size() != static_cast<std::size_t>(config.n_trees)) {
    throw std::invalid_argument("fit_forest_with_resamples: need one resample per tree");
  }
  return fit_impl(x, y, config, [&](std::size_t t) { return resamples[t]; });
}

double predict_proba(const ForestModel& model, std::span<const double> x) {
  if (x.size() != model.n_features) {
    throw std::invalid_argument("predict_proba: expected " + std::to_string(model.n_features) + " features, got " +
                                std::to_string(x.size()));
  }
  if (model.trees.empty()) throw std::invalid_argument("predict_proba: empty forest");
  double sum = 0.0;
  for (const auto& tree : model.trees) sum += tree.predict(x);
  return std::clamp(sum / static_cast<double>(model.trees.size()), 0.0, 1.0);
}

std::vector<double> predict_proba(const ForestModel& model, const FeatureMatrix& x) {
  std::vector<double> out;
  out.reserve(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out.push_back(predict_proba(model, x.row(i)));
  return out;
}

std::vector<std::optional<double>> oob_probabilities(const ForestModel& model, const FeatureMatrix& x) {
  if (x.rows != model.n_train || x.cols != model.n_features) {
    throw std::invalid_argument("oob_probabilities: matrix does not match the training data shape");
  }
  std::vector<double> sum(x.rows, 0.0);
  std::vector<std::size_t> votes(x.rows, 0);
  for (std::size_t t = 0; t < model.trees.size(); ++t) {
    for (auto i : model.oob_indices[t]) {
      sum[i] += model.trees[t].predict(x.row(i));
      ++votes[i];
    }
  }
  std::vector<std::optional<double>> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    if (votes[i] > 0) out[i] = sum[i] / static_cast<double>(votes[i]);
  return out;
}

double oob_score(const ForestModel& model, const FeatureMatrix& x, std::span<const int> y) {
  if (y.size() != x.rows) throw std::invalid_argument("oob_score: X and y row counts differ");
  const auto probs = oob_probabilities(model, x);
  std::size_t scored = 0, correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!probs[i]) continue;
    ++scored;
    const int predicted = *probs[i] > 0.5 ? 1 : 0;
    if (predicted == y[i]) ++correct;
  }
  if (scored == 0) throw std::runtime_error("oob_score: no sample has an out-of-bag tree");
  return static_cast<double>(correct) / static_cast<double>(scored);
}

double oob_pair_fraction(const ForestModel& model) {
  if (model.trees.empty() || model.n_train == 0) return 0.0;
  std::size_t pairs = 0;
  for (const auto& oob : model.oob_indices) pairs += oob.size();
  return static_cast<double>(pairs) / (static_cast<double>(model.n_train) * static_cast<double>(model.trees.size()));
}

namespace {

constexpr int kForestFormatVersion = 1;

nlohmann::json config_to_json(const ForestConfig& c) {
  nlohmann::json j;
  j["n_trees"] = c.n_trees;
  j["max_features"] = c.max_features ? nlohmann::json(*c.max_features) : nlohmann::json(nullptr);
  j["class_weight"] = c.balanced_class_weight ? "balanced" : "none";
  j["bootstrap"] = c.bootstrap == Bootstrap::stratified ? "stratified" : "none";
  j["max_depth"] = c.max_depth ? nlohmann::json(*c.max_depth) : nlohmann::json(nullptr);
  j["min_samples_leaf"] = c.min_samples_leaf;
  j["seed"] = c.seed;
  return j;
}

ForestConfig config_from_json(const nlohmann::json& j) {
  ForestConfig c;
  c.n_trees = j.at("n_trees").get<int>();
  if (!j.at("max_features").is_null()) c.max_features = j.at("max_features").get<int>();
  c.balanced_class_weight = j.at("class_weight").get<std::string>() == "balanced";
  c.bootstrap = j.at("bootstrap").get<std::string>() == "stratified" ? Bootstrap::stratified : Bootstrap::none;
  if (!j.at("max_depth").is_null()) c.max_depth = j.at("max_depth").get<int>();
  c.min_samples_leaf = j.at("min_samples_leaf").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_forest(const ForestModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "mus-forest";
  j["version"] = kForestFormatVersion;
  j["config"] = config_to_json(model.config);
  j["n_features"] = model.n_features;
  j["n_train"] = model.n_train;
  j["class_weights"] = model.class_weights;
  auto& trees = j["trees"] = nlohmann::json::array();
  for (std::size_t t = 0; t < model.trees.size(); ++t) {
    const auto& tree = model.trees[t];
    trees.push_back({{"feature", tree.feature},
                     {"threshold", tree.threshold},
                     {"left", tree.left},
                     {"right", tree.right},
                     {"value", tree.value},
                     {"oob", t < model.oob_indices.size() ? model.oob_indices[t] : std::vector<std::uint32_t>{}}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write forest " + path.string());
  out << j.dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ForestModel load_forest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open forest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    if (j.value("format", "") != "mus-forest") throw std::runtime_error("not a forest file");
    if (!j.contains("version")) throw std::runtime_error("missing version field");
    if (j.at("version").get<int>() != kForestFormatVersion) throw std::runtime_error("unsupported version");
    ForestModel m;
    m.config = config_from_json(j.at("config"));
    m.n_features = j.at("n_features").get<std::size_t>();
    m.n_train = j.at("n_train").get<std::size_t>();
    m.class_weights = j.at("class_weights").get<std::array<double, 2>>();
    for (const auto& t : j.at("trees")) {
      DecisionTree tree;
      tree.feature = t.at("feature").get<std::vector<int>>();
      tree.threshold = t.at("threshold").get<std::vector<double>>();
      tree.left = t.at("left").get<std::vector<int>>();
      tree.right = t.at("right").get<std::vector<int>>();
      tree.value = t.at("value").get<std::vector<double>>();
      const auto n = tree.feature.size();
      if (n == 0 || tree.threshold.size() != n || tree.left.size() != n || tree.right.size() != n ||
          tree.value.size() != n) {
        throw std::runtime_error("inconsistent tree arrays");
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (tree.feature[i] >= static_cast<int>(m.n_features)) throw std::runtime_error("feature index out of range");
        if (tree.feature[i] >= 0 && (tree.left[i] <= static_cast<int>(i) || tree.right[i] <= static_cast<int>(i) ||
                                     tree.left[i] >= static_cast<int>(n) || tree.right[i] >= static_cast<int>(n))) {
          throw std::runtime_error("child index out of range");
        }
      }
      m.trees.push_back(std::move(tree));
      m.oob_indices.push_back(t.at("oob").get<std::vector<std::uint32_t>>());
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed forest file " + path.string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("malformed forest file " + path.string() + ": " + e.what());
  }
}

}  // namespace mus
