#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "mus/dataset.hpp"
#include "mus/rng.hpp"

namespace mus {

/// First quartile, median and third quartile of a marginal distribution.
struct Quartiles {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

struct ClassDistribution {
  Quartiles age;
  Quartiles psa;
  Quartiles volume;
  double dre_rate = 0.0;
};

/// Per-class marginals: medians, interquartile ranges and DRE-positive rates.
struct ClinicalDistributions {
  ClassDistribution positive{{66.0, 70.0, 74.0}, {5.8, 8.2, 13.1}, {31.5, 37.5, 49.4}, 0.494};
  ClassDistribution negative{{63.0, 69.0, 71.0}, {3.3, 5.7, 7.5}, {39.0, 47.1, 55.4}, 0.091};

  void validate() const;
};

struct PhantomConfig {
  int n_positive = 79;
  int n_negative = 66;
  int min_slices = 200;
  int max_slices = 300;
  int image_size = 256;
  /// Lesion runs are min_run_length + Poisson(extra_run_mean) slices long;
  /// the default extra mean keeps the median at the minimum.
  int min_run_length = 8;
  double extra_run_mean = 0.5;
  int exclusion_margin = 2;
  double lesion_contrast = 0.35;  // additive intensity; 0 makes lesions invisible
  double lesion_radius = 0.12;    // fraction of the image size
  double speckle_noise = 0.25;    // sd of the multiplicative speckle
  std::uint64_t seed = 42;

  void validate() const;
};

struct LesionTruth {
  bool has_lesion = false;
  int first_frame = -1;  // inclusive
  int last_frame = -1;   // inclusive
  int length() const { return has_lesion ? last_frame - first_frame + 1 : 0; }
};

struct SyntheticCohort {
  Cohort cohort;
  std::map<std::string, LesionTruth> truth;
};

/// Patient id of the i-th synthetic study ("P001", ...).
std::string synthetic_patient_id(int index);

/// Study i of the cohort; a pure function of (config, dists, i).
std::pair<Study, LesionTruth> generate_study(const PhantomConfig& config, const ClinicalDistributions& dists,
                                             int index);

SyntheticCohort generate_cohort(const PhantomConfig& config, const ClinicalDistributions& dists = {});

/// Clinical fields of one patient; patient_id is left empty.
PatientRecord sample_clinical(bool positive, const ClinicalDistributions& dists, Rng& rng);

/// Planted ground truth. Throws std::invalid_argument for studies that are
/// not part of the synthetic cohort.
LesionTruth lesion_oracle(const SyntheticCohort& synthetic, const Study& study);

/// CSV: patient_id,cspca,lesion_first_frame,lesion_last_frame
void write_truth_csv(const SyntheticCohort& synthetic, const std::filesystem::path& path);

}  // namespace mus
