#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace mus {

/// Row-major n x d matrix of finite features.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t n, std::size_t d) : rows(n), cols(d), values(n * d, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
  void push_row(std::span<const double> row);
};

enum class Bootstrap { stratified, none };

struct ForestConfig {
  int n_trees = 1000;
  std::optional<int> max_features;  // default floor(sqrt(d))
  bool balanced_class_weight = true;
  Bootstrap bootstrap = Bootstrap::stratified;
  std::optional<int> max_depth;  // unlimited when empty
  int min_samples_leaf = 1;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency; output is identical for any value

  int resolved_max_features(std::size_t d) const;
  void validate(std::size_t d) const;
};

/// Flattened binary tree. Node i is a leaf when feature[i] < 0; otherwise
/// samples with x[feature] <= threshold go to left[i], the rest to right[i].
/// value[i] is the class-weighted fraction of class 1 at the node.
struct DecisionTree {
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left;
  std::vector<int> right;
  std::vector<double> value;

  static DecisionTree leaf(double p1);
  std::size_t node_count() const { return feature.size(); }
  int depth() const;
  double predict(std::span<const double> x) const;
  bool operator==(const DecisionTree&) const = default;
};

struct ForestModel {
  ForestConfig config;
  std::size_t n_features = 0;
  std::size_t n_train = 0;
  std::array<double, 2> class_weights{1.0, 1.0};
  std::vector<DecisionTree> trees;
  std::vector<std::vector<std::uint32_t>> oob_indices;  // per tree, sorted
};

/// w_c = n / (2 n_c). Throws when a class is absent.
std::array<double, 2> balanced_class_weights(std::span<const int> y);

/// CART forest with Gini impurity. Throws std::invalid_argument on n < 2,
/// a single class, non-finite features, or size mismatches.
ForestModel fit_forest(const FeatureMatrix& x, std::span<const int> y, const ForestConfig& config);

/// Same as fit_forest, but tree t is grown on the row indices resamples[t]
/// (duplicates allowed) instead of a drawn bootstrap.
ForestModel fit_forest_with_resamples(const FeatureMatrix& x, std::span<const int> y, const ForestConfig& config,
                                      const std::vector<std::vector<std::size_t>>& resamples);

/// Row indices of the stratified bootstrap that fit_forest draws for `tree`.
std::vector<std::size_t> stratified_resample(std::span<const int> y, std::uint64_t seed, std::size_t tree);

/// Probability of class 1: mean over trees of the leaf value.
double predict_proba(const ForestModel& model, std::span<const double> x);
std::vector<double> predict_proba(const ForestModel& model, const FeatureMatrix& x);

/// Per training row, the mean class-1 probability over trees where the row
/// was out of bag; empty when no tree left it out.
std::vector<std::optional<double>> oob_probabilities(const ForestModel& model, const FeatureMatrix& x);

/// Accuracy of OOB majority votes over rows with at least one OOB tree.
/// Throws std::runtime_error when no row has an OOB vote.
double oob_score(const ForestModel& model, const FeatureMatrix& x, std::span<const int> y);

/// Fraction of (row, tree) pairs in which the row is out of bag.
double oob_pair_fraction(const ForestModel& model);

void save_forest(const ForestModel& model, const std::filesystem::path& path);
ForestModel load_forest(const std::filesystem::path& path);

}  // namespace mus
