#include "mus/dataset.hpp"

#include "mus/png_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace mus {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(SliceLabel label) {
  switch (label) {
    case SliceLabel::positive: return "pos";
    case SliceLabel::negative: return "neg";
    case SliceLabel::excluded: return "excl";
  }
  return "?";
}

SliceLabel parse_slice_label(const std::string& text) {
  if (text == "pos") return SliceLabel::positive;
  if (text == "neg") return SliceLabel::negative;
  if (text == "excl") return SliceLabel::excluded;
  throw std::invalid_argument("unknown slice label '" + text + "'");
}

std::string ManifestError::describe(const std::string& pid, const std::string& field, const std::string& what) {
  std::ostringstream os;
  os << "manifest error";
  if (!pid.empty()) os << " [patient " << pid << "]";
  if (!field.empty()) os << " [field " << field << "]";
  os << ": " << what;
  return os.str();
}

void check_study_structure(const Study& study) {
  const auto& pid = study.record.patient_id;
  if (study.slices.size() != study.labels.size()) {
    throw ManifestError(pid, "slices", std::to_string(study.slices.size()) + " slices but " +
                                           std::to_string(study.labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < study.slices.size(); ++i) {
    const auto& s = study.slices[i];
    if (s.frame_index != static_cast<int>(i)) {
      throw ManifestError(pid, "frame_index", "frames must run 0..n-1 without gaps");
    }
    if (s.height <= 0 || s.width <= 0 || s.codes.size() != static_cast<std::size_t>(s.height) * s.width) {
      throw ManifestError(pid, "pixels", "slice " + std::to_string(i) + " has inconsistent dimensions");
    }
  }
}

namespace {

template <typename T>
std::optional<T> optional_field(const json& node, const char* key, const std::string& pid) {
  auto it = node.find(key);
  if (it == node.end() || it->is_null()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ManifestError(pid, key, e.what());
  }
}

template <typename T>
T required_field(const json& node, const char* key, const std::string& pid) {
  auto value = optional_field<T>(node, key, pid);
  if (!value) throw ManifestError(pid, key, "required field missing");
  return *value;
}

}  // namespace

Cohort load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("", "", "cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ManifestError("", "", "malformed manifest " + path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("patients") || !doc["patients"].is_array()) {
    throw ManifestError("", "patients", "manifest must be an object with a 'patients' array");
  }

  const fs::path base = path.parent_path();
  Cohort cohort;
  for (const auto& node : doc["patients"]) {
    if (!node.is_object()) throw ManifestError("", "patients", "patient entry is not an object");
    Study study;
    auto& rec = study.record;
    rec.patient_id = required_field<std::string>(node, "id", "");
    const auto& pid = rec.patient_id;
    rec.age = optional_field<int>(node, "age", pid);
    rec.psa = optional_field<double>(node, "psa", pid);
    rec.dre = optional_field<int>(node, "dre", pid);
    rec.prostate_volume = optional_field<double>(node, "volume", pid);
    rec.cspca = required_field<bool>(node, "cspca", pid);

    auto slices = node.find("slices");
    if (slices == node.end() || !slices->is_array()) {
      throw ManifestError(pid, "slices", "required array missing");
    }
    int frame = 0;
    for (const auto& entry : *slices) {
      auto file = optional_field<std::string>(entry, "file", pid);
      auto label = optional_field<std::string>(entry, "label", pid);
      if (file) {
        GrayImage img;
        try {
          img = read_png_gray(base / *file);
        } catch (const std::exception& e) {
          throw ManifestError(pid, "file", e.what());
        }
        study.slices.push_back(SliceImage{pid, frame, img.height, img.width, std::move(img.codes)});
      }
      if (label) {
        try {
          study.labels.push_back(parse_slice_label(*label));
        } catch (const std::invalid_argument& e) {
          throw ManifestError(pid, "label", e.what());
        }
      }
      ++frame;
    }
    check_study_structure(study);
    cohort.studies.push_back(std::move(study));
  }
  return cohort;
}

fs::path save_manifest(const Cohort& cohort, const fs::path& dir) {
  fs::create_directories(dir);
  json patients = json::array();
  for (const auto& study : cohort.studies) {
    check_study_structure(study);
    const auto& rec = study.record;
    json node;
    node["id"] = rec.patient_id;
    node["age"] = rec.age ? json(*rec.age) : json(nullptr);
    node["psa"] = rec.psa ? json(*rec.psa) : json(nullptr);
    node["dre"] = rec.dre ? json(*rec.dre) : json(nullptr);
    if (rec.prostate_volume) node["volume"] = *rec.prostate_volume;
    node["cspca"] = rec.cspca;

    const fs::path sub = rec.patient_id;
    fs::create_directories(dir / sub);
    json slices = json::array();
    for (std::size_t i = 0; i < study.slices.size(); ++i) {
      const auto& s = study.slices[i];
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%04d.png", s.frame_index);
      const fs::path rel = sub / name;
      write_png_gray(dir / rel, GrayImage{s.height, s.width, s.codes});
      slices.push_back({{"file", rel.generic_string()}, {"label", to_string(study.labels[i])}});
    }
    node["slices"] = std::move(slices);
    patients.push_back(std::move(node));
  }
  const fs::path manifest = dir / "manifest.json";
  std::ofstream out(manifest, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + manifest.string());
  out << json{{"patients", std::move(patients)}}.dump(1) << '\n';
  if (!out) throw std::runtime_error("write failed: " + manifest.string());
  return manifest;
}

std::string to_string(ExclusionReason reason) {
  switch (reason) {
    case ExclusionReason::duplicate: return "DUPLICATE";
    case ExclusionReason::missing_clinical: return "MISSING_CLINICAL";
    case ExclusionReason::invalid_clinical: return "INVALID_CLINICAL";
    case ExclusionReason::invalid_labels: return "INVALID_LABELS";
  }
  return "?";
}

namespace {

std::optional<std::string> missing_fields(const PatientRecord& r) {
  std::string out;
  auto add = [&](const char* name) { out += out.empty() ? name : std::string(",") + name; };
  if (!r.age) add("age");
  if (!r.psa) add("psa");
  if (!r.dre) add("dre");
  if (!r.prostate_volume) add("volume");
  if (out.empty()) return std::nullopt;
  return out;
}

std::optional<std::string> invalid_fields(const PatientRecord& r) {
  if (*r.age < 18 || *r.age > 120) return "age outside [18,120]";
  if (!std::isfinite(*r.psa) || *r.psa < 0.0) return "psa must be finite and >= 0";
  if (*r.dre != 0 && *r.dre != 1) return "dre must be 0 or 1";
  if (!std::isfinite(*r.prostate_volume) || *r.prostate_volume <= 0.0) return "volume must be > 0";
  return std::nullopt;
}

std::optional<std::string> label_problem(const Study& s) {
  try {
    check_study_structure(s);
  } catch (const ManifestError& e) {
    return e.what();
  }
  if (!s.record.cspca &&
      std::find(s.labels.begin(), s.labels.end(), SliceLabel::excluded) != s.labels.end()) {
    return "excluded slices in a csPCa-negative study";
  }
  if (!s.record.cspca &&
      std::find(s.labels.begin(), s.labels.end(), SliceLabel::positive) != s.labels.end()) {
    return "positive slices in a csPCa-negative study";
  }
  return std::nullopt;
}

}  // namespace

ValidationResult validate_cohort(const Cohort& cohort) {
  ValidationResult result;
  std::set<std::string> seen;
  for (const auto& study : cohort.studies) {
    const auto& pid = study.record.patient_id;
    if (!seen.insert(pid).second) {
      result.exclusions.push_back({pid, ExclusionReason::duplicate, "repeated patient id"});
      continue;
    }
    if (auto m = missing_fields(study.record)) {
      result.exclusions.push_back({pid, ExclusionReason::missing_clinical, *m});
      continue;
    }
    if (auto m = invalid_fields(study.record)) {
      result.exclusions.push_back({pid, ExclusionReason::invalid_clinical, *m});
      continue;
    }
    if (auto m = label_problem(study)) {
      result.exclusions.push_back({pid, ExclusionReason::invalid_labels, *m});
      continue;
    }
    result.cohort.studies.push_back(study);
  }
  return result;
}

double compute_prostate_volume(const SegmentationStack& stack) {
  if (stack.masks.empty()) throw std::invalid_argument("compute_prostate_volume: empty stack");
  const auto& sp = stack.spacing;
  if (!(sp.sx > 0.0 && sp.sy > 0.0 && sp.sz > 0.0)) {
    throw std::invalid_argument("compute_prostate_volume: spacing must be positive");
  }
  const int h = stack.masks.front().height;
  const int w = stack.masks.front().width;
  std::uint64_t voxels = 0;
  for (const auto& m : stack.masks) {
    if (m.height != h || m.width != w || m.cells.size() != static_cast<std::size_t>(h) * w) {
      throw std::invalid_argument("compute_prostate_volume: masks differ in size");
    }
    voxels += static_cast<std::uint64_t>(
        std::count_if(m.cells.begin(), m.cells.end(), [](std::uint8_t c) { return c != 0; }));
  }
  return static_cast<double>(voxels) * sp.sx * sp.sy * sp.sz / 1000.0;
}

std::vector<TrainingSlice> training_slices(const Cohort& cohort) {
  std::vector<const Study*> studies;
  for (const auto& s : cohort.studies) studies.push_back(&s);
  return training_slices(studies);
}

std::vector<TrainingSlice> training_slices(std::span<const Study* const> studies) {
  std::vector<const Study*> order(studies.begin(), studies.end());
  std::stable_sort(order.begin(), order.end(),
                   [](const Study* a, const Study* b) { return a->record.patient_id < b->record.patient_id; });
  std::vector<TrainingSlice> out;
  for (const Study* sp : order) {
    const auto& study = *sp;
    for (std::size_t i = 0; i < study.slices.size(); ++i) {
      switch (study.labels[i]) {
        case SliceLabel::positive: out.push_back({std::cref(study.slices[i]), 1}); break;
        case SliceLabel::negative: out.push_back({std::cref(study.slices[i]), 0}); break;
        case SliceLabel::excluded: break;
      }
    }
  }
  return out;
}

}  // namespace mus
