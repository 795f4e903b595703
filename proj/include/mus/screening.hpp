#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mus/autoencoder.hpp"
#include "mus/dataset.hpp"
#include "mus/forest.hpp"

namespace mus {

struct SlicePrediction {
  std::string patient_id;
  int frame_index = 0;
  double probability = 0.0;
};

struct AggregationConfig {
  int run_length = 8;
  double slice_threshold = 0.15;

  void validate() const;
};

struct PatientScore {
  std::string patient_id;
  double score = 0.0;
  bool decision = false;
  bool ground_truth = false;
};

/// Clinical feature vector in canonical order (age, psa, volume, dre).
struct ClinicalFeatures {
  double age = 0.0;
  double psa = 0.0;
  double volume = 0.0;
  double dre = 0.0;

  std::array<double, 4> as_array() const { return {age, psa, volume, dre}; }
};

/// Throws std::invalid_argument naming the first missing field.
ClinicalFeatures clinical_features(const PatientRecord& record);

/// One probability per slice, in frame order.
std::vector<SlicePrediction> predict_slices(const Study& study, const AutoencoderWeights& weights,
                                            const ForestModel& slice_model);

/// Same, from precomputed features (rows aligned with study.slices).
std::vector<SlicePrediction> predict_slices(const Study& study, std::span<const FeatureVector> features,
                                            const ForestModel& slice_model);

/// Largest windowed minimum over all windows of `run_length` consecutive
/// probabilities; 0 when the sequence is shorter than the window.
double patient_score(std::span<const double> probabilities, int run_length);

bool classify_patient(double score, double threshold);

PatientScore score_patient(const std::vector<SlicePrediction>& predictions, const PatientRecord& record,
                           const AggregationConfig& config);

ForestModel fit_clinical(std::span<const PatientRecord> records, const ForestConfig& config);
double predict_clinical(const ForestModel& model, const PatientRecord& record);

FeatureMatrix clinical_matrix(std::span<const PatientRecord> records);
std::vector<int> clinical_labels(std::span<const PatientRecord> records);

/// CSV: patient_id,frame_index,probability
void write_slice_predictions_csv(const std::filesystem::path& path, std::span<const SlicePrediction> rows);
/// CSV: patient_id,score,decision,ground_truth
void write_patient_scores_csv(const std::filesystem::path& path, std::span<const PatientScore> rows);

}  // namespace mus
