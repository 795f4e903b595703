#include <doctest.h>

#include "../oracles.hpp"
#include "helpers.hpp"
#include "mus/evaluation.hpp"
#include "mus/rng.hpp"

#include <set>

using namespace mus;

namespace {

Cohort label_only_cohort(int pos, int neg) {
  Cohort c;
  for (int i = 0; i < pos + neg; ++i) {
    Study s;
    s.record.patient_id = "P" + std::to_string(1000 + i);
    s.record.cspca = i < pos;
    c.studies.push_back(s);
  }
  return c;
}

}  // namespace

TEST_CASE("auroc examples") {
  CHECK(auroc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}) == 1.0);
  CHECK(auroc(std::vector<double>{0.4, 0.4, 0.4}, std::vector<int>{1, 0, 1}) == 0.5);
  CHECK(auroc(std::vector<double>{0.8, 0.6, 0.3, 0.7}, std::vector<int>{1, 1, 0, 0}) == 0.75);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(auroc(std::vector<double>{std::nan(""), 0.2}, std::vector<int>{1, 0}), std::invalid_argument);
}

TEST_CASE("auroc matches pairwise counting and is rank invariant") {
  Rng rng(31);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 2 + rng.index(40);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.index(8)) / 8.0;
      y[i] = static_cast<int>(rng.index(2));
    }
    y[0] = 1;
    y[1] = 0;
    const double a = auroc(s, y);
    CHECK(a == oracle::pairwise_auroc(s, y).value());
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = std::exp(3.0 * s[i]) - 7.0;
    CHECK(auroc(g, y) == a);
    const auto curve = roc_curve(s, y);
    CHECK(std::abs(trapezoid_area(curve) - a) < 1e-12);
  }
}

TEST_CASE("confusion metrics examples") {
  // TP=3, FN=1, TN=2, FP=2
  const std::vector<int> d{1, 1, 1, 0, 0, 0, 1, 1}, y{1, 1, 1, 1, 0, 0, 0, 0};
  const auto m = confusion_metrics(d, y);
  CHECK(m.counts.tp == 3);
  CHECK(m.counts.fn == 1);
  CHECK(*m.sensitivity == 0.75);
  CHECK(*m.specificity == 0.5);
  CHECK(*m.accuracy == 0.625);
  CHECK(*m.precision == doctest::Approx(0.6));
  CHECK(*m.f1 == doctest::Approx(2.0 / 3.0));

  const auto perfect = confusion_metrics(y, y);
  CHECK(*perfect.sensitivity == 1.0);
  CHECK(*perfect.specificity == 1.0);
  CHECK(*perfect.f1 == 1.0);

  const auto none = confusion_metrics(std::vector<int>(8, 0), y);
  CHECK_FALSE(none.precision.has_value());
  CHECK_FALSE(none.f1.has_value());
  CHECK(*none.specificity == 1.0);
  CHECK_THROWS(confusion_metrics(std::vector<int>{1}, y));
}

TEST_CASE("roc curve shape") {
  const auto c = roc_curve(std::vector<double>{0.2, 0.8}, std::vector<int>{0, 1});
  REQUIRE(c.size() == 4);
  CHECK(c.front().fpr == 0.0);
  CHECK(c.front().tpr == 0.0);
  CHECK(std::isinf(c.front().threshold));
  CHECK(c.back().fpr == 1.0);
  CHECK(c.back().tpr == 1.0);
  for (std::size_t i = 1; i < c.size(); ++i) {
    CHECK(c[i].fpr >= c[i - 1].fpr);
    CHECK(c[i].tpr >= c[i - 1].tpr);
  }
  testutil::TempDir dir("roc");
  emit_roc(std::vector<double>{0.2, 0.8}, std::vector<int>{0, 1}, dir.path() / "roc.csv");
  CHECK(testutil::slurp(dir.path() / "roc.csv") == "threshold,fpr,tpr\ninf,0,0\n0.80000000000000004,0,1\n0.20000000000000001,1,1\n-inf,1,1\n");
}

TEST_CASE("folds for the default cohort") {
  const auto c = label_only_cohort(79, 66);
  const auto f = make_folds(c, 5, 42);
  REQUIRE(f.folds.size() == 5);
  int sixteen = 0;
  std::set<std::string> all;
  for (int k = 0; k < 5; ++k) {
    CHECK(f.folds[k].size() == 29);
    int pos = 0;
    for (const auto& id : f.folds[k]) {
      all.insert(id);
      pos += std::stoi(id.substr(1)) - 1000 < 79;
    }
    CHECK((pos == 15 || pos == 16));
    sixteen += pos == 16;
  }
  CHECK(sixteen == 4);
  CHECK(all.size() == 145);
  const auto g = make_folds(c, 5, 42);
  CHECK(g.folds == f.folds);
  CHECK_FALSE(make_folds(c, 5, 43).folds == f.folds);
  CHECK_THROWS(make_folds(label_only_cohort(4, 40), 5, 1));
}

TEST_CASE("role rotation puts each patient in test and validation once") {
  const auto f = make_folds(label_only_cohort(20, 20), 5, 7);
  std::map<std::string, int> test, val;
  for (int r = 0; r < 5; ++r) {
    const auto tr = f.patients(FoldRole::training, r);
    const auto va = f.patients(FoldRole::validation, r);
    const auto te = f.patients(FoldRole::test, r);
    CHECK(tr.size() + va.size() + te.size() == 40);
    std::set<std::string> a(tr.begin(), tr.end());
    for (const auto& id : va) CHECK(a.count(id) == 0);
    for (const auto& id : te) CHECK(a.count(id) == 0);
    for (const auto& id : te) ++test[id];
    for (const auto& id : va) ++val[id];
    CHECK(f.test_fold(r) == r);
    CHECK(f.validation_fold(r) == (r + 1) % 5);
  }
  for (const auto& [id, n] : test) CHECK(n == 1);
  for (const auto& [id, n] : val) CHECK(n == 1);
  CHECK(test.size() == 40);
}

TEST_CASE("report mean, json and csv round trip") {
  MetricsReport r;
  r.model = "imaging";
  r.seed = 3;
  for (int k = 0; k < 3; ++k) {
    FoldMetrics f;
    f.fold = k;
    f.auroc = 0.5 + 0.1 * k;
    f.sensitivity = 1.0;
    f.precision = k == 1 ? std::optional<double>() : 0.5;
    r.folds.push_back(f);
  }
  CHECK(*r.mean("auroc") == doctest::Approx(0.6));
  CHECK(*r.mean("precision") == 0.5);
  CHECK_FALSE(r.mean("f1").has_value());

  testutil::TempDir dir("report");
  write_report_json(r, dir.path() / "r.json");
  const auto back = read_report_json(dir.path() / "r.json");
  CHECK(back.model == "imaging");
  CHECK(back.folds.size() == 3);
  CHECK(*back.mean("auroc") == *r.mean("auroc"));
  CHECK_FALSE(back.folds[1].precision.has_value());
  write_report_csv(r, dir.path() / "r.csv");
  const auto csv = testutil::slurp(dir.path() / "r.csv");
  CHECK(csv.rfind("model,fold,auroc,sensitivity,specificity,accuracy,precision,f1\n", 0) == 0);
  const auto at = csv.find("imaging,mean,");
  REQUIRE(at != std::string::npos);
  CHECK(std::stod(csv.substr(at + 13)) == doctest::Approx(0.6));

  std::ofstream(dir.path() / "bad.json") << R"({"model":"x","threshold":0.15,"run_length":8,"folds":[{"fold":0,"auroc":1.5}]})";
  CHECK_THROWS(read_report_json(dir.path() / "bad.json"));
}

TEST_CASE("forest_rows keeps positives and respects the budget") {
  std::vector<int> y(100, 0);
  for (int i = 0; i < 100; i += 10) y[i] = 1;
  CHECK(forest_rows(y, 0, 1).size() == 100);
  const auto r = forest_rows(y, 30, 1);
  CHECK(r.size() == 30);
  CHECK(std::count_if(r.begin(), r.end(), [&](std::size_t i) { return y[i] == 1; }) == 10);
  CHECK(std::is_sorted(r.begin(), r.end()));
  CHECK(forest_rows(y, 30, 1) == r);
}

TEST_CASE("clinical cross-validation on a tiny cohort") {
  Cohort c;
  Rng rng(5);
  for (int i = 0; i < 30; ++i) {
    auto s = testutil::make_study("C" + std::to_string(100 + i), i % 2 == 0, {SliceLabel::negative});
    s.record.psa = i % 2 == 0 ? rng.uniform(8, 20) : rng.uniform(1, 6);
    c.studies.push_back(s);
  }
  PipelineConfig cfg;
  cfg.clinical_forest.n_trees = 50;
  const auto a = run_cross_validation(c, Pipeline::clinical, cfg, 11);
  const auto b = run_cross_validation(c, Pipeline::clinical, cfg, 11);
  CHECK(a.report.folds.size() == 5);
  CHECK(*a.report.mean("auroc") == *b.report.mean("auroc"));
  CHECK(*a.report.mean("auroc") > 0.9);
  for (const auto& rr : a.rounds) {
    CHECK(rr.clinical_oob.has_value());
    const auto test = a.folds.patients(FoldRole::test, rr.round);
    CHECK(rr.scores.size() == test.size());
  }
}
