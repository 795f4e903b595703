#include "mus/evaluation.hpp"

#include "mus/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mus {

FoldRole FoldAssignment::role(int fold, int round) const {
  if (fold == test_fold(round)) return FoldRole::test;
  if (fold == validation_fold(round)) return FoldRole::validation;
  return FoldRole::training;
}

std::vector<std::string> FoldAssignment::patients(FoldRole wanted, int round) const {
  std::vector<std::string> out;
  for (int f = 0; f < k; ++f) {
    if (role(f, round) != wanted) continue;
    out.insert(out.end(), folds[f].begin(), folds[f].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

FoldAssignment make_folds(const Cohort& cohort, int k, std::uint64_t seed) {
  if (k < 3) throw std::invalid_argument("make_folds: k must be >= 3 for disjoint train/validation/test roles");
  std::vector<std::string> pos, neg;
  std::set<std::string> seen;
  for (const auto& s : cohort.studies) {
    const auto& id = s.record.patient_id;
    if (!seen.insert(id).second) throw std::invalid_argument("make_folds: duplicate patient id " + id);
    (s.record.cspca ? pos : neg).push_back(id);
  }
  if (pos.size() < static_cast<std::size_t>(k) || neg.size() < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("make_folds: need at least " + std::to_string(k) +
                                " patients of each class (have " + std::to_string(pos.size()) + " positive, " +
                                std::to_string(neg.size()) + " negative)");
  }
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  Rng rng(seed);
  rng.shuffle(pos.begin(), pos.end());
  rng.shuffle(neg.begin(), neg.end());

  FoldAssignment a;
  a.k = k;
  a.folds.resize(k);
  std::size_t slot = 0;
  for (const auto* group : {&pos, &neg}) {
    for (const auto& id : *group) {
      const int fold = static_cast<int>(slot++ % static_cast<std::size_t>(k));
      a.fold_of[id] = fold;
      a.folds[fold].push_back(id);
    }
  }
  for (auto& f : a.folds) std::sort(f.begin(), f.end());
  return a;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores and labels differ in length");
  for (double s : scores)
    if (std::isnan(s)) throw std::invalid_argument("auroc: NaN score");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the Mann-Whitney U, kept as an integer so ties are exact.
  std::uint64_t twice_u = 0, n_pos = 0, n_neg = 0, neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t group_pos = 0, group_neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? group_pos : group_neg) += 1;
      ++j;
    }
    twice_u += group_pos * (2 * neg_below + group_neg);
    neg_below += group_neg;
    n_pos += group_pos;
    n_neg += group_neg;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auroc: labels contain a single class");
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ConfusionMetrics confusion_metrics(std::span<const int> decisions, std::span<const int> labels) {
  if (decisions.size() != labels.size()) throw std::invalid_argument("confusion_metrics: length mismatch");
  if (decisions.empty()) throw std::invalid_argument("confusion_metrics: no samples");
  ConfusionMetrics m;
  auto& c = m.counts;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const bool d = decisions[i] != 0, l = labels[i] != 0;
    if (d && l) ++c.tp;
    else if (d) ++c.fp;
    else if (l) ++c.fn;
    else ++c.tn;
  }
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.sensitivity = ratio(c.tp, c.tp + c.fn);
  m.specificity = ratio(c.tn, c.tn + c.fp);
  m.accuracy = ratio(c.tp + c.tn, decisions.size());
  m.precision = ratio(c.tp, c.tp + c.fp);
  if (m.precision && m.sensitivity && *m.precision + *m.sensitivity > 0.0) {
    m.f1 = 2.0 * *m.precision * *m.sensitivity / (*m.precision + *m.sensitivity);
  }
  return m;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_curve: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l ? 1 : 0;
  for (double s : scores)
    if (std::isnan(s)) throw std::invalid_argument("roc_curve: NaN score");
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc_curve: labels contain a single class");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<RocPoint> curve{{inf, 0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      (labels[order[i]] ? tp : fp) += 1;
      ++i;
    }
    curve.push_back({t, static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos});
  }
  curve.push_back({-inf, 1.0, 1.0});
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  }
  return area;
}

namespace {

std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string format_optional(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

std::vector<RocPoint> emit_roc(std::span<const double> scores, std::span<const int> labels,
                               const std::filesystem::path& path) {
  auto curve = roc_curve(scores, labels);
  std::ostringstream os;
  os << "threshold,fpr,tpr\n";
  for (const auto& p : curve) os << format_real(p.threshold) << ',' << format_real(p.fpr) << ',' << format_real(p.tpr) << '\n';
  write_text(path, os.str());
  return curve;
}

std::optional<double> metric_value(const FoldMetrics& m, const std::string& name) {
  if (name == "auroc") return m.auroc;
  if (name == "sensitivity") return m.sensitivity;
  if (name == "specificity") return m.specificity;
  if (name == "accuracy") return m.accuracy;
  if (name == "precision") return m.precision;
  if (name == "f1") return m.f1;
  throw std::invalid_argument("unknown metric " + name);
}

std::optional<double> MetricsReport::mean(const std::string& metric) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& f : folds) {
    if (auto v = metric_value(f, metric)) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> json_optional(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

void write_report_json(const MetricsReport& report, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["model"] = report.model;
  j["threshold"] = report.threshold;
  j["run_length"] = report.run_length;
  j["seed"] = report.seed;
  auto folds = nlohmann::ordered_json::array();
  for (const auto& f : report.folds) {
    nlohmann::ordered_json fj;
    fj["fold"] = f.fold;
    fj["n_test"] = f.n_test;
    fj["n_positive"] = f.n_positive;
    for (const auto& name : metric_names()) fj[name] = optional_json(metric_value(f, name));
    folds.push_back(std::move(fj));
  }
  j["folds"] = std::move(folds);
  nlohmann::ordered_json mean;
  for (const auto& name : metric_names()) mean[name] = optional_json(report.mean(name));
  j["mean"] = std::move(mean);
  j["warnings"] = report.warnings;
  write_text(path, j.dump(2) + "\n");
}

MetricsReport read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    MetricsReport r;
    r.model = j.at("model").get<std::string>();
    r.threshold = j.at("threshold").get<double>();
    r.run_length = j.at("run_length").get<int>();
    r.seed = j.value("seed", std::uint64_t{0});
    for (const auto& fj : j.at("folds")) {
      FoldMetrics f;
      f.fold = fj.at("fold").get<int>();
      f.n_test = fj.value("n_test", std::size_t{0});
      f.n_positive = fj.value("n_positive", std::size_t{0});
      f.auroc = json_optional(fj, "auroc");
      f.sensitivity = json_optional(fj, "sensitivity");
      f.specificity = json_optional(fj, "specificity");
      f.accuracy = json_optional(fj, "accuracy");
      f.precision = json_optional(fj, "precision");
      f.f1 = json_optional(fj, "f1");
      for (const auto& name : metric_names()) {
        if (auto v = metric_value(f, name); v && (*v < 0.0 || *v > 1.0)) {
          throw std::runtime_error("metric " + name + " outside [0,1]");
        }
      }
      r.folds.push_back(f);
    }
    if (r.folds.empty()) throw std::runtime_error("report has no folds");
    if (j.contains("warnings")) r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed report " + path.string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("malformed report " + path.string() + ": " + e.what());
  }
}

void write_report_csv(const MetricsReport& report, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "model,fold";
  for (const auto& name : metric_names()) os << ',' << name;
  os << '\n';
  for (const auto& f : report.folds) {
    os << report.model << ',' << f.fold;
    for (const auto& name : metric_names()) os << ',' << format_optional(metric_value(f, name));
    os << '\n';
  }
  os << report.model << ",mean";
  for (const auto& name : metric_names()) os << ',' << format_optional(report.mean(name));
  os << '\n';
  write_text(path, os.str());
}

std::string to_string(Pipeline p) { return p == Pipeline::imaging ? "imaging" : "clinical"; }

namespace {

std::vector<const Study*> select_studies(const Cohort& cohort, const std::vector<std::string>& ids) {
  const std::set<std::string> wanted(ids.begin(), ids.end());
  std::vector<const Study*> out;
  for (const auto& s : cohort.studies)
    if (wanted.count(s.record.patient_id)) out.push_back(&s);
  std::sort(out.begin(), out.end(),
            [](const Study* a, const Study* b) { return a->record.patient_id < b->record.patient_id; });
  return out;
}

/// Sorted indices of a seeded subset of size min(budget, n); all when budget is 0.
std::vector<std::size_t> subsample(std::size_t n, std::size_t budget, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (budget == 0 || budget >= n) return idx;
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(budget);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::vector<std::size_t> forest_rows(std::span<const int> labels, std::size_t budget, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  std::vector<std::size_t> chosen = pos;
  if (budget > 0 && labels.size() > budget) {
    const std::size_t neg_budget = budget > pos.size() ? budget - pos.size() : 0;
    for (auto i : subsample(neg.size(), std::max<std::size_t>(neg_budget, 1), seed)) chosen.push_back(neg[i]);
  } else {
    chosen.insert(chosen.end(), neg.begin(), neg.end());
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

namespace {

std::uint64_t round_seed(std::uint64_t seed, const char* stage, int round) {
  return derive_seed(derive_seed(seed, stage), static_cast<std::uint64_t>(round));
}

FoldMetrics fold_metrics(int fold, const std::vector<PatientScore>& scores, double threshold,
                         std::vector<RocPoint>& roc, std::vector<std::string>& warnings, const std::string& model) {
  FoldMetrics m;
  m.fold = fold;
  std::vector<double> s;
  std::vector<int> labels, decisions;
  for (const auto& p : scores) {
    s.push_back(p.score);
    labels.push_back(p.ground_truth ? 1 : 0);
    decisions.push_back(classify_patient(p.score, threshold) ? 1 : 0);
  }
  m.n_test = scores.size();
  m.n_positive = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (m.n_positive > 0 && m.n_positive < m.n_test) {
    m.auroc = auroc(s, labels);
    roc = roc_curve(s, labels);
  } else {
    warnings.push_back(model + " fold " + std::to_string(fold) +
                       ": single-class test fold, AUROC excluded from the mean");
  }
  const auto cm = confusion_metrics(decisions, labels);
  m.sensitivity = cm.sensitivity;
  m.specificity = cm.specificity;
  m.accuracy = cm.accuracy;
  m.precision = cm.precision;
  m.f1 = cm.f1;
  return m;
}

RoundResult run_imaging_round(const Cohort& cohort, const FoldAssignment& folds, int round,
                              const PipelineConfig& config, std::uint64_t seed, const ProgressFn& progress) {
  RoundResult rr;
  rr.round = round;
  const auto train_ids = folds.patients(FoldRole::training, round);
  const auto val_ids = folds.patients(FoldRole::validation, round);
  const auto test_ids = folds.patients(FoldRole::test, round);

  const auto train_labeled = training_slices(select_studies(cohort, train_ids));
  const auto val_labeled = training_slices(select_studies(cohort, val_ids));
  if (train_labeled.empty() || val_labeled.empty()) {
    throw std::runtime_error("round " + std::to_string(round) + ": no labeled training or validation slices");
  }

  std::vector<const SliceImage*> ae_train, ae_val;
  for (auto i : subsample(train_labeled.size(), config.ae_train_slices, round_seed(seed, "ae-train-subset", round)))
    ae_train.push_back(&train_labeled[i].image.get());
  for (auto i : subsample(val_labeled.size(), config.ae_val_slices, round_seed(seed, "ae-val-subset", round)))
    ae_val.push_back(&val_labeled[i].image.get());

  auto train_cfg = config.train;
  train_cfg.seed = round_seed(seed, "autoencoder", round);
  if (progress) {
    progress("round " + std::to_string(round) + ": training autoencoder on " + std::to_string(ae_train.size()) +
             " slices (validation " + std::to_string(ae_val.size()) + ")");
  }
  auto trained = train_autoencoder(ae_train, ae_val, config.encoder, train_cfg);
  if (progress) {
    progress("round " + std::to_string(round) + ": best validation MSE " +
             std::to_string(trained.history.val_mse[trained.history.best_epoch]) + " at epoch " +
             std::to_string(trained.history.best_epoch + 1));
  }

  // Slice forest on encoder features of the labeled training slices.
  std::vector<int> all_labels;
  for (const auto& t : train_labeled) all_labels.push_back(t.label);
  const auto chosen = forest_rows(all_labels, config.forest_slices, round_seed(seed, "forest-subset", round));
  std::vector<const SliceImage*> forest_slices;
  std::vector<int> y;
  for (auto i : chosen) {
    forest_slices.push_back(&train_labeled[i].image.get());
    y.push_back(train_labeled[i].label);
  }
  if (progress) progress("round " + std::to_string(round) + ": extracting " + std::to_string(forest_slices.size()) + " training features");
  const auto features = extract_features(forest_slices, trained.weights);
  FeatureMatrix x(features.size(), kFeatureDim);
  for (std::size_t i = 0; i < features.size(); ++i)
    for (int c = 0; c < kFeatureDim; ++c) x.at(i, c) = features[i].values[c];
  auto forest_cfg = config.slice_forest;
  forest_cfg.seed = round_seed(seed, "slice-forest", round);
  if (progress) progress("round " + std::to_string(round) + ": fitting slice forest (" + std::to_string(forest_cfg.n_trees) + " trees)");
  const auto model = fit_forest(x, y, forest_cfg);

  if (progress) progress("round " + std::to_string(round) + ": scoring " + std::to_string(test_ids.size()) + " test patients");
  for (const Study* study : select_studies(cohort, test_ids)) {
    auto preds = predict_slices(*study, trained.weights, model);
    rr.scores.push_back(score_patient(preds, study->record, config.aggregation));
    rr.slice_predictions.insert(rr.slice_predictions.end(), preds.begin(), preds.end());
  }
  rr.ae_history = std::move(trained.history);
  return rr;
}

RoundResult run_clinical_round(const Cohort& cohort, const FoldAssignment& folds, int round,
                               const PipelineConfig& config, std::uint64_t seed) {
  RoundResult rr;
  rr.round = round;
  std::vector<PatientRecord> train;
  for (const Study* s : select_studies(cohort, folds.patients(FoldRole::training, round))) train.push_back(s->record);
  auto forest_cfg = config.clinical_forest;
  forest_cfg.seed = round_seed(seed, "clinical-forest", round);
  const auto model = fit_clinical(train, forest_cfg);
  if (forest_cfg.bootstrap == Bootstrap::stratified) {
    rr.clinical_oob = oob_score(model, clinical_matrix(train), clinical_labels(train));
  }
  for (const Study* s : select_studies(cohort, folds.patients(FoldRole::test, round))) {
    const double p = predict_clinical(model, s->record);
    rr.scores.push_back({s->record.patient_id, p, classify_patient(p, config.aggregation.slice_threshold), s->record.cspca});
  }
  return rr;
}

}  // namespace

CrossValidationResult run_cross_validation(const Cohort& cohort, Pipeline pipeline, const PipelineConfig& config,
                                           std::uint64_t seed, const ProgressFn& progress) {
  config.aggregation.validate();
  CrossValidationResult result;
  result.folds = make_folds(cohort, config.folds, derive_seed(seed, "folds"));
  auto& report = result.report;
  report.model = to_string(pipeline);
  report.threshold = config.aggregation.slice_threshold;
  report.run_length = config.aggregation.run_length;
  report.seed = seed;
  for (int round = 0; round < config.folds; ++round) {
    RoundResult rr = pipeline == Pipeline::imaging
                         ? run_imaging_round(cohort, result.folds, round, config, seed, progress)
                         : run_clinical_round(cohort, result.folds, round, config, seed);
    report.folds.push_back(fold_metrics(result.folds.test_fold(round), rr.scores, config.aggregation.slice_threshold,
                                        rr.roc, report.warnings, report.model));
    if (progress) {
      const auto& fm = report.folds.back();
      progress(report.model + " fold " + std::to_string(round) + ": AUROC " +
               (fm.auroc ? std::to_string(*fm.auroc) : std::string("n/a")));
    }
    result.rounds.push_back(std::move(rr));
  }
  return result;
}

}  // namespace mus
