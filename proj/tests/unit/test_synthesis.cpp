#include <doctest.h>

#include "helpers.hpp"
#include "mus/synthesis.hpp"

#include <algorithm>

using namespace mus;

namespace {

PhantomConfig tiny() {
  PhantomConfig c;
  c.n_positive = 5;
  c.n_negative = 4;
  c.min_slices = 50;
  c.max_slices = 70;
  c.image_size = 24;
  return c;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  return lo + 1 < v.size() ? v[lo] * (1 - frac) + v[lo + 1] * frac : v[lo];
}

}  // namespace

TEST_CASE("cohort counts, ids and slice ranges") {
  const auto cfg = tiny();
  const auto s = generate_cohort(cfg);
  REQUIRE(s.cohort.studies.size() == 9);
  int pos = 0;
  for (std::size_t i = 0; i < 9; ++i) {
    const auto& st = s.cohort.studies[i];
    CHECK(st.record.patient_id == synthetic_patient_id(static_cast<int>(i)));
    CHECK((st.slices.size() >= 50 && st.slices.size() <= 70));
    CHECK(st.labels.size() == st.slices.size());
    CHECK_NOTHROW(check_study_structure(st));
    pos += st.record.cspca;
  }
  CHECK(pos == 5);
  CHECK(synthetic_patient_id(0) == "P001");
  CHECK(validate_cohort(s.cohort).exclusions.empty());
}

TEST_CASE("labels follow the planted lesion run") {
  const auto cfg = tiny();
  const auto s = generate_cohort(cfg);
  for (const auto& st : s.cohort.studies) {
    const auto t = lesion_oracle(s, st);
    if (!st.record.cspca) {
      CHECK_FALSE(t.has_lesion);
      CHECK(std::all_of(st.labels.begin(), st.labels.end(), [](SliceLabel l) { return l == SliceLabel::negative; }));
      continue;
    }
    CHECK(t.length() >= cfg.min_run_length);
    for (int f = 0; f < static_cast<int>(st.labels.size()); ++f) {
      const auto l = st.labels[f];
      if (f >= t.first_frame && f <= t.last_frame) CHECK(l == SliceLabel::positive);
      else if (f >= t.first_frame - 2 && f <= t.last_frame + 2) CHECK(l == SliceLabel::excluded);
      else CHECK(l == SliceLabel::negative);
    }
  }
}

TEST_CASE("generation is deterministic per seed") {
  auto cfg = tiny();
  const auto a = generate_cohort(cfg);
  const auto b = generate_cohort(cfg);
  for (std::size_t i = 0; i < a.cohort.studies.size(); ++i) {
    CHECK(a.cohort.studies[i].slices[3].codes == b.cohort.studies[i].slices[3].codes);
    CHECK(a.cohort.studies[i].record.psa == b.cohort.studies[i].record.psa);
  }
  const auto [single, truth] = generate_study(cfg, {}, 4);
  CHECK(single.slices.back().codes == a.cohort.studies[4].slices.back().codes);
  CHECK(truth.first_frame == a.truth.at("P005").first_frame);
  cfg.seed = 43;
  CHECK_FALSE(generate_cohort(cfg).cohort.studies[0].slices[0].codes == a.cohort.studies[0].slices[0].codes);
}

TEST_CASE("lesion adds intensity only inside the run") {
  auto cfg = tiny();
  cfg.image_size = 48;
  const auto s = generate_cohort(cfg);
  cfg.lesion_contrast = 0.0;
  const auto z = generate_cohort(cfg);
  for (std::size_t i = 0; i < s.cohort.studies.size(); ++i) {
    const auto& st = s.cohort.studies[i];
    const auto& flat = z.cohort.studies[i];
    const auto t = s.truth.at(st.record.patient_id);
    for (int f = 0; f < static_cast<int>(st.slices.size()); ++f) {
      const auto& a = st.slices[f].codes;
      const auto& b = flat.slices[f].codes;
      long added = 0;
      bool never_darker = true;
      for (std::size_t k = 0; k < a.size(); ++k) {
        added += static_cast<long>(a[k]) - b[k];
        never_darker = never_darker && a[k] >= b[k];
      }
      CHECK(never_darker);
      const bool in_run = t.has_lesion && f >= t.first_frame && f <= t.last_frame;
      if (in_run) CHECK(added > 0);
      else CHECK(added == 0);
    }
  }
}

TEST_CASE("clinical samples match the target quartiles") {
  ClinicalDistributions d;
  for (bool positive : {true, false}) {
    Rng rng(positive ? 1 : 2);
    std::vector<double> age, psa, vol;
    double dre = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const auto r = sample_clinical(positive, d, rng);
      age.push_back(*r.age);
      psa.push_back(*r.psa);
      vol.push_back(*r.prostate_volume);
      dre += *r.dre;
    }
    const auto& c = positive ? d.positive : d.negative;
    CHECK(quantile(psa, 0.5) == doctest::Approx(c.psa.median).epsilon(0.05));
    CHECK(quantile(psa, 0.25) == doctest::Approx(c.psa.q1).epsilon(0.1));
    CHECK(quantile(psa, 0.75) == doctest::Approx(c.psa.q3).epsilon(0.1));
    CHECK(quantile(vol, 0.5) == doctest::Approx(c.volume.median).epsilon(0.05));
    CHECK(quantile(age, 0.5) == doctest::Approx(c.age.median).epsilon(0.05));
    CHECK(dre / n == doctest::Approx(c.dre_rate).epsilon(0.05));
  }
}

TEST_CASE("config validation and oracle errors") {
  auto cfg = tiny();
  cfg.min_slices = 20;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny();
  cfg.n_negative = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  const auto s = generate_cohort(tiny());
  auto foreign = testutil::make_study("X9", true, {SliceLabel::positive});
  CHECK_THROWS_AS(lesion_oracle(s, foreign), std::invalid_argument);
}

TEST_CASE("truth csv is written") {
  testutil::TempDir dir("truth");
  const auto s = generate_cohort(tiny());
  write_truth_csv(s, dir.path() / "t.csv");
  const auto text = testutil::slurp(dir.path() / "t.csv");
  CHECK(text.rfind("patient_id,cspca,lesion_first_frame,lesion_last_frame\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 10);
}
