#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mus {

/// One 2D frame of a sweep. Pixels are stored as 8-bit codes; the
/// grayscale intensity of a code is code / 255, always in [0, 1].
struct SliceImage {
  std::string patient_id;
  int frame_index = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> codes;

  float intensity(int row, int col) const {
    return static_cast<float>(codes[static_cast<std::size_t>(row) * width + col]) / 255.0f;
  }
};

enum class SliceLabel { positive, negative, excluded };

/// Manifest spelling: "pos", "neg", "excl".
std::string to_string(SliceLabel label);
SliceLabel parse_slice_label(const std::string& text);

struct PatientRecord {
  std::string patient_id;
  std::optional<int> age;                 // years
  std::optional<double> psa;              // ng/ml
  std::optional<int> dre;                 // 0 or 1
  std::optional<double> prostate_volume;  // ml
  bool cspca = false;
};

struct Study {
  PatientRecord record;
  std::vector<SliceImage> slices;
  std::vector<SliceLabel> labels;  // aligned with slices
};

struct Cohort {
  std::vector<Study> studies;
};

/// Manifest and study-structure errors carry the offending patient and field.
class ManifestError : public std::runtime_error {
public:
  ManifestError(std::string patient_id, std::string field, const std::string& what)
      : std::runtime_error(describe(patient_id, field, what)),
        patient_id_(std::move(patient_id)),
        field_(std::move(field)) {}

  const std::string& patient_id() const { return patient_id_; }
  const std::string& field() const { return field_; }

private:
  static std::string describe(const std::string& pid, const std::string& field, const std::string& what);
  std::string patient_id_;
  std::string field_;
};

/// Throws ManifestError when slices and labels disagree or frames are not 0..n-1.
void check_study_structure(const Study& study);

Cohort load_manifest(const std::filesystem::path& path);

/// Writes `<dir>/manifest.json` plus one PNG per slice under `<dir>/<patient_id>/`.
/// Returns the manifest path.
std::filesystem::path save_manifest(const Cohort& cohort, const std::filesystem::path& dir);

enum class ExclusionReason { duplicate, missing_clinical, invalid_clinical, invalid_labels };
std::string to_string(ExclusionReason reason);

struct ExclusionReport {
  std::string patient_id;
  ExclusionReason reason;
  std::string detail;
};

struct ValidationResult {
  Cohort cohort;
  std::vector<ExclusionReport> exclusions;
};

ValidationResult validate_cohort(const Cohort& cohort);

struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> cells;  // nonzero = inside the gland
};

struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;  // mm
};

struct SegmentationStack {
  std::vector<Mask> masks;
  Spacing spacing;
};

/// Gland volume in ml: true voxels times voxel volume in mm^3, / 1000.
double compute_prostate_volume(const SegmentationStack& stack);

struct TrainingSlice {
  std::reference_wrapper<const SliceImage> image;
  int label;  // 1 = positive, 0 = negative
};

/// All POSITIVE / NEGATIVE slices, ordered by patient_id then frame_index.
/// References point into `cohort`, which must outlive the result.
std::vector<TrainingSlice> training_slices(const Cohort& cohort);
std::vector<TrainingSlice> training_slices(std::span<const Study* const> studies);

}  // namespace mus
