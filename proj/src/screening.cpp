#include "mus/screening.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace mus {

void AggregationConfig::validate() const {
  if (run_length < 1) throw std::invalid_argument("AggregationConfig: run_length must be >= 1");
  if (!(slice_threshold > 0.0 && slice_threshold < 1.0)) {
    throw std::invalid_argument("AggregationConfig: slice_threshold must lie in (0, 1)");
  }
}

ClinicalFeatures clinical_features(const PatientRecord& r) {
  auto missing = [&](const char* field) {
    return std::invalid_argument("patient " + r.patient_id + ": missing clinical field '" + field + "'");
  };
  if (!r.age) throw missing("age");
  if (!r.psa) throw missing("psa");
  if (!r.prostate_volume) throw missing("volume");
  if (!r.dre) throw missing("dre");
  return {static_cast<double>(*r.age), *r.psa, *r.prostate_volume, static_cast<double>(*r.dre)};
}

std::vector<SlicePrediction> predict_slices(const Study& study, std::span<const FeatureVector> features,
                                            const ForestModel& slice_model) {
  if (study.slices.empty()) throw std::invalid_argument("predict_slices: study " + study.record.patient_id + " is empty");
  if (features.size() != study.slices.size()) throw std::invalid_argument("predict_slices: feature count mismatch");
  std::vector<SlicePrediction> out;
  out.reserve(features.size());
  std::vector<double> row(kFeatureDim);
  for (std::size_t i = 0; i < features.size(); ++i) {
    std::copy(features[i].values.begin(), features[i].values.end(), row.begin());
    out.push_back({study.record.patient_id, study.slices[i].frame_index, predict_proba(slice_model, row)});
  }
  return out;
}

std::vector<SlicePrediction> predict_slices(const Study& study, const AutoencoderWeights& weights,
                                            const ForestModel& slice_model) {
  if (study.slices.empty()) throw std::invalid_argument("predict_slices: study " + study.record.patient_id + " is empty");
  std::vector<const SliceImage*> ptrs;
  for (const auto& s : study.slices) ptrs.push_back(&s);
  const auto features = extract_features(ptrs, weights);
  return predict_slices(study, features, slice_model);
}

double patient_score(std::span<const double> probabilities, int run_length) {
  if (run_length < 1) throw std::invalid_argument("patient_score: run_length must be >= 1");
  const auto window = static_cast<std::size_t>(run_length);
  if (probabilities.size() < window) return 0.0;
  // Monotone deque of indices with increasing values: front is the window minimum.
  std::deque<std::size_t> q;
  double best = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    while (!q.empty() && probabilities[q.back()] >= probabilities[i]) q.pop_back();
    q.push_back(i);
    if (q.front() + window <= i) q.pop_front();
    if (i + 1 >= window) best = std::max(best, probabilities[q.front()]);
  }
  return best;
}

bool classify_patient(double score, double threshold) { return score >= threshold; }

PatientScore score_patient(const std::vector<SlicePrediction>& predictions, const PatientRecord& record,
                           const AggregationConfig& config) {
  config.validate();
  std::vector<double> probs;
  probs.reserve(predictions.size());
  for (const auto& p : predictions) probs.push_back(p.probability);
  const double score = patient_score(probs, config.run_length);
  return {record.patient_id, score, classify_patient(score, config.slice_threshold), record.cspca};
}

FeatureMatrix clinical_matrix(std::span<const PatientRecord> records) {
  FeatureMatrix x;
  for (const auto& r : records) {
    const auto f = clinical_features(r).as_array();
    x.push_row(f);
  }
  if (x.cols == 0) x.cols = 4;
  return x;
}

std::vector<int> clinical_labels(std::span<const PatientRecord> records) {
  std::vector<int> y;
  y.reserve(records.size());
  for (const auto& r : records) y.push_back(r.cspca ? 1 : 0);
  return y;
}

ForestModel fit_clinical(std::span<const PatientRecord> records, const ForestConfig& config) {
  const auto x = clinical_matrix(records);
  const auto y = clinical_labels(records);
  return fit_forest(x, y, config);
}

double predict_clinical(const ForestModel& model, const PatientRecord& record) {
  return predict_proba(model, clinical_features(record).as_array());
}

namespace {

std::string format_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

void write_slice_predictions_csv(const std::filesystem::path& path, std::span<const SlicePrediction> rows) {
  std::ostringstream os;
  os << "patient_id,frame_index,probability\n";
  for (const auto& r : rows) os << r.patient_id << ',' << r.frame_index << ',' << format_real(r.probability) << '\n';
  write_text(path, os.str());
}

void write_patient_scores_csv(const std::filesystem::path& path, std::span<const PatientScore> rows) {
  std::ostringstream os;
  os << "patient_id,score,decision,ground_truth\n";
  for (const auto& r : rows) {
    os << r.patient_id << ',' << format_real(r.score) << ',' << (r.decision ? 1 : 0) << ','
       << (r.ground_truth ? 1 : 0) << '\n';
  }
  write_text(path, os.str());
}

}  // namespace mus
