#include <doctest.h>

#include "helpers.hpp"
#include "mus/dataset.hpp"
#include "mus/png_io.hpp"

#include <json.hpp>

#include <fstream>

using namespace mus;
using testutil::make_study;
using testutil::TempDir;
constexpr auto P = SliceLabel::positive;
constexpr auto N = SliceLabel::negative;
constexpr auto E = SliceLabel::excluded;

namespace {

bool same_cohort(const Cohort& a, const Cohort& b) {
  if (a.studies.size() != b.studies.size()) return false;
  for (std::size_t i = 0; i < a.studies.size(); ++i) {
    const auto &x = a.studies[i], &y = b.studies[i];
    const auto &r = x.record, &s = y.record;
    if (r.patient_id != s.patient_id || r.age != s.age || r.psa != s.psa || r.dre != s.dre ||
        r.prostate_volume != s.prostate_volume || r.cspca != s.cspca || x.labels != y.labels ||
        x.slices.size() != y.slices.size())
      return false;
    for (std::size_t k = 0; k < x.slices.size(); ++k) {
      const auto &p = x.slices[k], &q = y.slices[k];
      if (p.patient_id != q.patient_id || p.frame_index != q.frame_index || p.height != q.height ||
          p.width != q.width || p.codes != q.codes)
        return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("slice labels parse and print") {
  CHECK(parse_slice_label("pos") == P);
  CHECK(parse_slice_label("neg") == N);
  CHECK(parse_slice_label("excl") == E);
  CHECK(to_string(E) == "excl");
  CHECK_THROWS_AS(parse_slice_label("maybe"), std::invalid_argument);
}

TEST_CASE("intensity is code over 255") {
  SliceImage s{"A", 0, 1, 2, {0, 255}};
  CHECK(s.intensity(0, 0) == 0.0f);
  CHECK(s.intensity(0, 1) == 1.0f);
}

TEST_CASE("png round trip and deterministic bytes") {
  TempDir dir("png");
  GrayImage img{3, 5, {0, 1, 2, 3, 4, 50, 60, 70, 80, 90, 200, 210, 220, 230, 255}};
  write_png_gray(dir.path() / "a.png", img);
  write_png_gray(dir.path() / "b.png", img);
  const auto back = read_png_gray(dir.path() / "a.png");
  CHECK(back.height == 3);
  CHECK(back.width == 5);
  CHECK(back.codes == img.codes);
  CHECK(testutil::slurp(dir.path() / "a.png") == testutil::slurp(dir.path() / "b.png"));
  CHECK_THROWS(read_png_gray(dir.path() / "missing.png"));
  std::ofstream(dir.path() / "bad.png") << "not a png";
  CHECK_THROWS(read_png_gray(dir.path() / "bad.png"));
}

TEST_CASE("manifest round trip is identity") {
  TempDir dir("manifest");
  Cohort c;
  c.studies.push_back(make_study("P2", true, {N, E, P, P, E, N}));
  c.studies.push_back(make_study("P1", false, {N, N, N}));
  c.studies[1].record.psa.reset();
  c.studies[1].record.prostate_volume.reset();
  const auto path = save_manifest(c, dir.path());
  const auto back = load_manifest(path);
  CHECK(same_cohort(c, back));
}

TEST_CASE("manifest errors name the patient and field") {
  TempDir dir("badmanifest");
  CHECK_THROWS_AS(load_manifest(dir.path() / "none.json"), ManifestError);

  std::ofstream(dir.path() / "malformed.json") << "{ not json";
  CHECK_THROWS_AS(load_manifest(dir.path() / "malformed.json"), ManifestError);

  nlohmann::json doc = {{"patients", {{{"id", "Q7"}, {"cspca", true}, {"slices", {{{"file", "q/none.png"}, {"label", "pos"}}}}}}}};
  std::ofstream(dir.path() / "missing_png.json") << doc.dump();
  try {
    load_manifest(dir.path() / "missing_png.json");
    FAIL("expected ManifestError");
  } catch (const ManifestError& e) {
    CHECK(e.patient_id() == "Q7");
    CHECK(e.field() == "file");
  }

  Cohort c;
  c.studies.push_back(make_study("Q8", false, {N, N}));
  save_manifest(c, dir.path() / "count");
  auto j = nlohmann::json::parse(testutil::slurp(dir.path() / "count" / "manifest.json"));
  j["patients"][0]["slices"][1].erase("file");
  std::ofstream(dir.path() / "count" / "manifest.json") << j.dump();
  try {
    load_manifest(dir.path() / "count" / "manifest.json");
    FAIL("expected ManifestError");
  } catch (const ManifestError& e) {
    CHECK(e.patient_id() == "Q8");
    CHECK(e.field() == "slices");
  }
}

TEST_CASE("validate_cohort removes duplicates and incomplete records") {
  Cohort c;
  c.studies.push_back(make_study("P1", false, {N, N}));
  c.studies.push_back(make_study("P1", true, {P, N}));
  c.studies.push_back(make_study("P2", false, {N}));
  c.studies.back().record.psa.reset();
  c.studies.push_back(make_study("P3", false, {N}));
  c.studies.back().record.prostate_volume.reset();
  c.studies.push_back(make_study("P4", false, {N, P}));
  c.studies.push_back(make_study("P5", false, {N}));
  c.studies.back().record.psa = -1.0;
  c.studies.push_back(make_study("P6", true, {N, P}));

  const auto v = validate_cohort(c);
  REQUIRE(v.cohort.studies.size() == 2);
  CHECK(v.cohort.studies[0].record.patient_id == "P1");
  CHECK_FALSE(v.cohort.studies[0].record.cspca);
  CHECK(v.cohort.studies[1].record.patient_id == "P6");
  REQUIRE(v.exclusions.size() == 5);
  CHECK(v.exclusions[0].patient_id == "P1");
  CHECK(v.exclusions[0].reason == ExclusionReason::duplicate);
  CHECK(v.exclusions[1].reason == ExclusionReason::missing_clinical);
  CHECK(v.exclusions[2].reason == ExclusionReason::missing_clinical);
  CHECK(v.exclusions[3].reason == ExclusionReason::invalid_labels);
  CHECK(v.exclusions[4].reason == ExclusionReason::invalid_clinical);
  CHECK(to_string(ExclusionReason::duplicate) == "DUPLICATE");
  CHECK(to_string(ExclusionReason::missing_clinical) == "MISSING_CLINICAL");
}

TEST_CASE("validate_cohort is idempotent and a fixed point on clean input") {
  Cohort c;
  c.studies.push_back(make_study("A", true, {N, P, E}));
  c.studies.push_back(make_study("A", false, {N}));
  c.studies.push_back(make_study("B", false, {N, N}));
  const auto once = validate_cohort(c);
  const auto twice = validate_cohort(once.cohort);
  CHECK(twice.exclusions.empty());
  CHECK(same_cohort(once.cohort, twice.cohort));
}

TEST_CASE("prostate volume examples") {
  auto stack_with = [](int voxels, double s) {
    SegmentationStack st;
    st.spacing = {s, s, s};
    Mask m{10, 10, std::vector<std::uint8_t>(100, 0)};
    for (int filled = 0; filled < voxels;) {
      Mask cur = m;
      for (int i = 0; i < 100 && filled < voxels; ++i, ++filled) cur.cells[i] = 1;
      st.masks.push_back(cur);
    }
    if (st.masks.empty()) st.masks.push_back(m);
    return st;
  };
  CHECK(compute_prostate_volume(stack_with(1000, 1.0)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(compute_prostate_volume(stack_with(61, 2.0)) == doctest::Approx(0.488).epsilon(1e-12));
  CHECK(compute_prostate_volume(stack_with(0, 1.0)) == 0.0);
  CHECK_THROWS_AS(compute_prostate_volume(SegmentationStack{}), std::invalid_argument);
  auto bad = stack_with(5, 1.0);
  bad.spacing.sz = 0.0;
  CHECK_THROWS_AS(compute_prostate_volume(bad), std::invalid_argument);
}

TEST_CASE("prostate volume is additive over stacks") {
  SegmentationStack a, b, ab;
  a.spacing = b.spacing = ab.spacing = {0.5, 0.25, 2.0};
  for (int k = 0; k < 3; ++k) {
    Mask m{4, 4, std::vector<std::uint8_t>(16, 0)};
    for (int i = 0; i <= k * 3; ++i) m.cells[i] = 1;
    a.masks.push_back(m);
    Mask n{4, 4, std::vector<std::uint8_t>(16, 0)};
    for (int i = 0; i < 16; i += k + 1) n.cells[i] = 255;
    b.masks.push_back(n);
  }
  ab.masks = a.masks;
  ab.masks.insert(ab.masks.end(), b.masks.begin(), b.masks.end());
  CHECK(compute_prostate_volume(ab) == doctest::Approx(compute_prostate_volume(a) + compute_prostate_volume(b)));
}

TEST_CASE("training_slices filters excluded and orders by patient then frame") {
  Cohort c;
  c.studies.push_back(make_study("B", false, std::vector<SliceLabel>(10, N)));
  c.studies.push_back(make_study("A", true, {N, P, E}));
  const auto t = training_slices(c);
  REQUIRE(t.size() == 12);
  CHECK(t[0].image.get().patient_id == "A");
  CHECK(t[0].label == 0);
  CHECK(t[1].label == 1);
  CHECK(t[1].image.get().frame_index == 1);
  for (std::size_t i = 2; i < 12; ++i) {
    CHECK(t[i].image.get().patient_id == "B");
    CHECK(t[i].label == 0);
    CHECK(t[i].image.get().frame_index == static_cast<int>(i - 2));
  }
}
