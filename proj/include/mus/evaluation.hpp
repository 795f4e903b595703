#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mus/autoencoder.hpp"
#include "mus/dataset.hpp"
#include "mus/forest.hpp"
#include "mus/screening.hpp"

namespace mus {

enum class FoldRole { training, validation, test };

/// Patient-level k-fold partition with a rotating role schedule: in round r
/// the test fold is r, the validation fold is (r + 1) mod k and the rest train.
struct FoldAssignment {
  int k = 5;
  std::map<std::string, int> fold_of;
  std::vector<std::vector<std::string>> folds;  // patient ids per fold, sorted

  int test_fold(int round) const { return round; }
  int validation_fold(int round) const { return (round + 1) % k; }
  FoldRole role(int fold, int round) const;
  std::vector<std::string> patients(FoldRole role, int round) const;
};

/// Stratified random partition: each class is shuffled and dealt round-robin,
/// so fold sizes and per-class counts differ by at most one.
/// Throws when either class has fewer than k patients.
FoldAssignment make_folds(const Cohort& cohort, int k, std::uint64_t seed);

/// Mann-Whitney AUROC with tie credit 1/2. Throws unless both classes occur.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Ratios with a zero denominator are left empty.
struct ConfusionMetrics {
  ConfusionCounts counts;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> f1;
};

ConfusionMetrics confusion_metrics(std::span<const int> decisions, std::span<const int> labels);

struct RocPoint {
  double threshold;  // decision rule: score >= threshold
  double fpr;
  double tpr;
};

/// (0,0) at threshold +inf, one point per distinct score (descending), and a
/// closing (1,1) at threshold -inf.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
double trapezoid_area(std::span<const RocPoint> curve);

/// CSV: threshold,fpr,tpr. Returns the written points.
std::vector<RocPoint> emit_roc(std::span<const double> scores, std::span<const int> labels,
                               const std::filesystem::path& path);

struct FoldMetrics {
  int fold = 0;
  std::size_t n_test = 0;
  std::size_t n_positive = 0;
  std::optional<double> auroc;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> f1;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"auroc", "sensitivity", "specificity", "accuracy", "precision", "f1"};
  return names;
}

std::optional<double> metric_value(const FoldMetrics& m, const std::string& name);

struct MetricsReport {
  std::string model;
  double threshold = 0.15;
  int run_length = 8;
  std::uint64_t seed = 0;
  std::vector<FoldMetrics> folds;
  std::vector<std::string> warnings;

  /// Arithmetic mean over the folds where the metric is defined.
  std::optional<double> mean(const std::string& metric) const;
};

void write_report_json(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport read_report_json(const std::filesystem::path& path);
/// CSV: model,fold,auroc,sensitivity,specificity,accuracy,precision,f1 with a closing "mean" row.
void write_report_csv(const MetricsReport& report, const std::filesystem::path& path);

enum class Pipeline { imaging, clinical };
std::string to_string(Pipeline p);

struct PipelineConfig {
  EncoderConfig encoder;
  TrainConfig train;
  ForestConfig slice_forest;
  ForestConfig clinical_forest;
  AggregationConfig aggregation;
  /// Upper bounds on slices used per round to fit the autoencoder and to
  /// monitor its validation loss (0 = use all). Subsets are seeded.
  std::size_t ae_train_slices = 0;
  std::size_t ae_val_slices = 0;
  /// Upper bound on labeled slices fed to the slice forest (0 = all);
  /// positives are always kept, negatives subsampled.
  std::size_t forest_slices = 0;
  int folds = 5;
};

/// Sorted row indices for a slice forest: every positive, plus a seeded
/// subset of negatives so the total is at most `budget` (0 = all rows).
std::vector<std::size_t> forest_rows(std::span<const int> labels, std::size_t budget, std::uint64_t seed);

struct RoundResult {
  int round = 0;
  std::vector<PatientScore> scores;
  std::vector<SlicePrediction> slice_predictions;  // imaging only
  std::optional<LossHistory> ae_history;           // imaging only
  std::optional<double> clinical_oob;              // clinical only
  std::vector<RocPoint> roc;                       // empty for a single-class test fold
};

struct CrossValidationResult {
  MetricsReport report;
  FoldAssignment folds;
  std::vector<RoundResult> rounds;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Patient-level cross-validation. With equal seeds, both pipelines see the
/// same FoldAssignment.
CrossValidationResult run_cross_validation(const Cohort& cohort, Pipeline pipeline, const PipelineConfig& config,
                                           std::uint64_t seed, const ProgressFn& progress = {});

}  // namespace mus
