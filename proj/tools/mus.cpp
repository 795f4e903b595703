#include "mus/autoencoder.hpp"
#include "mus/dataset.hpp"
#include "mus/evaluation.hpp"
#include "mus/forest.hpp"
#include "mus/run_config.hpp"
#include "mus/screening.hpp"
#include "mus/synthesis.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace mus;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string model = "both";
  std::optional<double> threshold;
  std::optional<int> run_length;
  std::string manifest;
  std::string checkpoint;
  std::string features;
  std::vector<std::string> reports;
  bool quiet = false;
};

RunConfig resolve(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  c.phantom.seed = c.seed;
  if (!o.out.empty()) c.paths.out = o.out;
  if (!o.manifest.empty()) c.paths.manifest = o.manifest;
  if (!o.checkpoint.empty()) c.paths.checkpoint = o.checkpoint;
  if (!o.features.empty()) c.paths.features = o.features;
  if (o.threshold) c.pipeline.aggregation.slice_threshold = *o.threshold;
  if (o.run_length) c.pipeline.aggregation.run_length = *o.run_length;
  c.validate();
  return c;
}

std::string fmt(double v, int precision = 17) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void make_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
}

Cohort load_clean_cohort(const RunConfig& c, bool quiet) {
  if (c.paths.manifest.empty()) throw std::runtime_error("no manifest given (--manifest or paths.manifest)");
  auto v = validate_cohort(load_manifest(c.paths.manifest));
  if (!quiet) {
    for (const auto& e : v.exclusions)
      std::cerr << "excluded " << e.patient_id << " (" << to_string(e.reason) << "): " << e.detail << '\n';
  }
  return std::move(v.cohort);
}

fs::path or_default(const fs::path& p, const fs::path& fallback) { return p.empty() ? fallback : p; }

std::vector<const SliceImage*> pick(const std::vector<TrainingSlice>& slices, std::size_t budget, std::uint64_t seed) {
  std::vector<std::size_t> idx(slices.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (budget > 0 && budget < idx.size()) {
    Rng rng(seed);
    rng.shuffle(idx.begin(), idx.end());
    idx.resize(budget);
    std::sort(idx.begin(), idx.end());
  }
  std::vector<const SliceImage*> out;
  for (auto i : idx) out.push_back(&slices[i].image.get());
  return out;
}

// ---- synth ----

int cmd_synth(const RunConfig& c, bool quiet) {
  const fs::path out = c.paths.out;
  make_out_dir(out);
  const auto synthetic = generate_cohort(c.phantom, c.clinical);
  save_manifest(synthetic.cohort, out);
  write_truth_csv(synthetic, out / "truth.csv");

  std::size_t counts[2] = {0, 0}, slices[2] = {0, 0}, pos[2] = {0, 0}, excl[2] = {0, 0};
  for (const auto& s : synthetic.cohort.studies) {
    const int k = s.record.cspca ? 1 : 0;
    ++counts[k];
    slices[k] += s.slices.size();
    pos[k] += static_cast<std::size_t>(std::count(s.labels.begin(), s.labels.end(), SliceLabel::positive));
    excl[k] += static_cast<std::size_t>(std::count(s.labels.begin(), s.labels.end(), SliceLabel::excluded));
  }
  std::ostringstream os;
  os << "class,patients,slices,positive_slices,excluded_slices\n";
  os << "cspca," << counts[1] << ',' << slices[1] << ',' << pos[1] << ',' << excl[1] << '\n';
  os << "no_cspca," << counts[0] << ',' << slices[0] << ',' << pos[0] << ',' << excl[0] << '\n';
  write_file(out / "cohort_summary.csv", os.str());
  if (!quiet) std::cout << os.str();
  return 0;
}

// ---- train-ae ----

int cmd_train_ae(const RunConfig& c, bool quiet) {
  const auto cohort = load_clean_cohort(c, quiet);
  const auto& p = c.pipeline;
  const auto folds = make_folds(cohort, p.folds, derive_seed(c.seed, "folds"));
  const int val_fold = folds.validation_fold(0);
  std::vector<const Study*> train, val;
  for (const auto& s : cohort.studies) (folds.fold_of.at(s.record.patient_id) == val_fold ? val : train).push_back(&s);
  const auto train_labeled = training_slices(train);
  const auto val_labeled = training_slices(val);
  const auto ae_train = pick(train_labeled, p.ae_train_slices, derive_seed(c.seed, "ae-train-subset"));
  const auto ae_val = pick(val_labeled, p.ae_val_slices, derive_seed(c.seed, "ae-val-subset"));

  auto tc = p.train;
  tc.seed = derive_seed(c.seed, "autoencoder");
  auto result = train_autoencoder(ae_train, ae_val, p.encoder, tc, [&](int epoch, double tr, double va) {
    if (!quiet) std::cerr << "epoch " << epoch + 1 << ": train " << fmt(tr, 6) << " val " << fmt(va, 6) << '\n';
  });

  const fs::path out = c.paths.out;
  make_out_dir(out);
  const auto& h = result.history;
  std::ostringstream os;
  os << "epoch,train_mse,val_mse,selected\n";
  for (std::size_t e = 0; e < h.train_mse.size(); ++e)
    os << e + 1 << ',' << fmt(h.train_mse[e]) << ',' << fmt(h.val_mse[e]) << ',' << (static_cast<int>(e) == h.best_epoch) << '\n';
  write_file(out / "ae_history.csv", os.str());
  save_checkpoint(result.weights, or_default(c.paths.checkpoint, out / "autoencoder.bin"));
  if (!quiet) std::cout << "selected epoch " << h.best_epoch + 1 << " (validation MSE " << fmt(h.val_mse[h.best_epoch], 6) << ")\n";
  return 0;
}

// ---- extract ----

int cmd_extract(const RunConfig& c, bool quiet) {
  const auto cohort = load_clean_cohort(c, quiet);
  const fs::path out = c.paths.out;
  const auto weights = load_checkpoint(or_default(c.paths.checkpoint, out / "autoencoder.bin"), c.pipeline.encoder);
  std::vector<const SliceImage*> slices;
  std::vector<std::string> labels;
  for (const auto& s : cohort.studies) {
    for (std::size_t i = 0; i < s.slices.size(); ++i) {
      slices.push_back(&s.slices[i]);
      labels.push_back(to_string(s.labels[i]));
    }
  }
  const auto features = extract_features(slices, weights);
  std::ostringstream os;
  os << "patient_id,frame_index,label";
  for (int j = 0; j < kFeatureDim; ++j) os << ",f" << j;
  os << '\n';
  char buf[32];
  for (std::size_t i = 0; i < slices.size(); ++i) {
    os << slices[i]->patient_id << ',' << slices[i]->frame_index << ',' << labels[i];
    for (float v : features[i].values) {
      std::snprintf(buf, sizeof(buf), ",%.9g", static_cast<double>(v));
      os << buf;
    }
    os << '\n';
  }
  make_out_dir(out);
  write_file(or_default(c.paths.features, out / "features.csv"), os.str());
  if (!quiet) std::cout << "extracted " << slices.size() << " feature vectors\n";
  return 0;
}

// ---- train-forest ----

struct LabeledFeatures {
  FeatureMatrix x;
  std::vector<int> y;
};

LabeledFeatures read_features_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open features " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("patient_id,frame_index,label", 0) != 0) {
    throw std::runtime_error("malformed features file " + path.string());
  }
  LabeledFeatures out;
  out.x.cols = kFeatureDim;
  std::vector<double> row(kFeatureDim);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string pid, frame, label, cell;
    std::getline(ss, pid, ',');
    std::getline(ss, frame, ',');
    std::getline(ss, label, ',');
    int j = 0;
    while (std::getline(ss, cell, ',')) {
      if (j >= kFeatureDim) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": too many columns");
      row[j++] = std::stod(cell);
    }
    if (j != kFeatureDim) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": too few columns");
    const auto l = parse_slice_label(label);
    if (l == SliceLabel::excluded) continue;
    out.x.push_row(row);
    out.y.push_back(l == SliceLabel::positive ? 1 : 0);
  }
  return out;
}

int cmd_train_forest(const RunConfig& c, bool quiet) {
  const fs::path out = c.paths.out;
  const auto data = read_features_csv(or_default(c.paths.features, out / "features.csv"));
  const auto rows = forest_rows(data.y, c.pipeline.forest_slices, derive_seed(c.seed, "forest-subset"));
  FeatureMatrix x;
  std::vector<int> y;
  for (auto i : rows) {
    x.push_row(data.x.row(i));
    y.push_back(data.y[i]);
  }
  auto fc = c.pipeline.slice_forest;
  fc.seed = derive_seed(c.seed, "slice-forest");
  const auto model = fit_forest(x, y, fc);
  make_out_dir(out);
  save_forest(model, out / "slice_forest.json");
  std::string summary = "rows,trees,oob_score\n" + std::to_string(x.rows) + ',' + std::to_string(model.trees.size()) + ',';
  if (fc.bootstrap == Bootstrap::stratified) summary += fmt(oob_score(model, x, y));
  summary += '\n';
  write_file(out / "slice_forest_summary.csv", summary);
  if (!quiet) std::cout << summary;
  return 0;
}

// ---- train-clinical ----

int cmd_train_clinical(const RunConfig& c, bool quiet) {
  const auto cohort = load_clean_cohort(c, quiet);
  std::vector<PatientRecord> records;
  for (const auto& s : cohort.studies) records.push_back(s.record);
  auto fc = c.pipeline.clinical_forest;
  fc.seed = derive_seed(c.seed, "clinical-forest");
  const auto model = fit_clinical(records, fc);
  const fs::path out = c.paths.out;
  make_out_dir(out);
  save_forest(model, out / "clinical_forest.json");
  std::string summary = "patients,trees,oob_score\n" + std::to_string(records.size()) + ',' + std::to_string(model.trees.size()) + ',';
  if (fc.bootstrap == Bootstrap::stratified) summary += fmt(oob_score(model, clinical_matrix(records), clinical_labels(records)));
  summary += '\n';
  write_file(out / "clinical_forest_summary.csv", summary);
  if (!quiet) std::cout << summary;
  return 0;
}

// ---- evaluate / report ----

std::string table_csv(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << "model";
  for (const auto& name : metric_names()) os << ',' << name;
  os << '\n';
  for (const auto& r : reports) {
    os << r.model;
    for (const auto& name : metric_names()) {
      os << ',';
      if (auto v = r.mean(name)) os << fmt(*v);
    }
    os << '\n';
  }
  return os.str();
}

std::string table_text(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "model";
  for (const auto& name : metric_names()) os << std::right << std::setw(13) << name;
  os << '\n';
  for (const auto& r : reports) {
    os << std::left << std::setw(10) << r.model;
    for (const auto& name : metric_names()) {
      const auto v = r.mean(name);
      os << std::right << std::setw(13) << (v ? fmt(*v, 3) : std::string("n/a"));
    }
    os << '\n';
  }
  return os.str();
}

int cmd_evaluate(const RunConfig& c, const std::string& model, bool quiet) {
  std::vector<Pipeline> pipelines;
  if (model == "imaging" || model == "both") pipelines.push_back(Pipeline::imaging);
  if (model == "clinical" || model == "both") pipelines.push_back(Pipeline::clinical);
  const auto cohort = load_clean_cohort(c, quiet);

  ProgressFn progress;
  if (!quiet) progress = [](const std::string& msg) { std::cerr << msg << '\n'; };
  std::vector<CrossValidationResult> results;
  for (auto p : pipelines) results.push_back(run_cross_validation(cohort, p, c.pipeline, c.seed, progress));

  // Everything succeeded; only now touch the output directory.
  const fs::path out = c.paths.out;
  make_out_dir(out);
  std::vector<MetricsReport> reports;
  for (const auto& r : results) {
    const auto& name = r.report.model;
    write_report_json(r.report, out / ("report_" + name + ".json"));
    write_report_csv(r.report, out / ("report_" + name + ".csv"));
    std::ostringstream patients, history, oob;
    patients << "fold,patient_id,score,decision,ground_truth\n";
    history << "round,epoch,train_mse,val_mse,selected\n";
    oob << "round,oob_score\n";
    std::vector<SlicePrediction> slices;
    for (const auto& rr : r.rounds) {
      const int fold = r.folds.test_fold(rr.round);
      std::vector<double> s;
      std::vector<int> y;
      for (const auto& p : rr.scores) {
        patients << fold << ',' << p.patient_id << ',' << fmt(p.score) << ',' << p.decision << ',' << p.ground_truth << '\n';
        s.push_back(p.score);
        y.push_back(p.ground_truth ? 1 : 0);
      }
      if (!rr.roc.empty()) emit_roc(s, y, out / ("roc_" + name + "_fold" + std::to_string(fold) + ".csv"));
      if (rr.ae_history) {
        const auto& h = *rr.ae_history;
        for (std::size_t e = 0; e < h.train_mse.size(); ++e)
          history << rr.round << ',' << e + 1 << ',' << fmt(h.train_mse[e]) << ',' << fmt(h.val_mse[e]) << ','
                  << (static_cast<int>(e) == h.best_epoch) << '\n';
      }
      if (rr.clinical_oob) oob << rr.round << ',' << fmt(*rr.clinical_oob) << '\n';
      slices.insert(slices.end(), rr.slice_predictions.begin(), rr.slice_predictions.end());
    }
    write_file(out / ("patients_" + name + ".csv"), patients.str());
    if (!slices.empty()) write_slice_predictions_csv(out / ("slices_" + name + ".csv"), slices);
    if (name == "imaging") write_file(out / "ae_history_imaging.csv", history.str());
    if (name == "clinical") write_file(out / "oob_clinical.csv", oob.str());
    reports.push_back(r.report);
  }
  write_file(out / "summary.csv", table_csv(reports));
  if (!quiet) {
    std::cout << table_text(reports);
    for (const auto& r : reports)
      for (const auto& w : r.warnings) std::cout << "warning: " << w << '\n';
  }
  return 0;
}

int cmd_report(const RunConfig& c, const std::vector<std::string>& inputs, bool quiet) {
  if (inputs.empty()) throw std::runtime_error("report: no report files given");
  std::vector<MetricsReport> reports;
  for (const auto& p : inputs) reports.push_back(read_report_json(p));
  const fs::path out = c.paths.out;
  make_out_dir(out);
  write_file(out / "comparison.csv", table_csv(reports));
  const auto text = table_text(reports);
  write_file(out / "comparison.txt", text);
  if (!quiet) std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Micro-ultrasound screening pipeline: synthesize, train, evaluate, report"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "JSON run configuration")->envname("MUS_CONFIG");
  app.add_option("--seed", o.seed, "Global seed")->envname("MUS_SEED");
  app.add_option("--out", o.out, "Output directory")->envname("MUS_OUT");
  app.add_option("--threshold", o.threshold, "Slice probability threshold (default 0.15)")->envname("MUS_THRESHOLD");
  app.add_option("--run-length", o.run_length, "Consecutive slices required (default 8)")->envname("MUS_RUN_LENGTH");
  app.add_option("--manifest", o.manifest, "Cohort manifest")->envname("MUS_MANIFEST");
  app.add_option("--checkpoint", o.checkpoint, "Autoencoder checkpoint")->envname("MUS_CHECKPOINT");
  app.add_option("--features", o.features, "Feature CSV")->envname("MUS_FEATURES");
  app.add_flag("--quiet,-q", o.quiet, "Suppress progress output");

  auto* synth = app.add_subcommand("synth", "Write a synthetic cohort (manifest, PNG slices, truth)");
  auto* train_ae = app.add_subcommand("train-ae", "Train the autoencoder and save the selected checkpoint");
  auto* extract = app.add_subcommand("extract", "Write encoder features for every slice");
  auto* train_forest = app.add_subcommand("train-forest", "Fit the slice forest on extracted features");
  auto* train_clinical = app.add_subcommand("train-clinical", "Fit the clinical forest");
  auto* evaluate = app.add_subcommand("evaluate", "Cross-validate and write reports");
  evaluate->add_option("--model", o.model, "imaging|clinical|both")
      ->envname("MUS_MODEL")
      ->check(CLI::IsMember({"imaging", "clinical", "both"}));
  auto* report = app.add_subcommand("report", "Merge report files into one comparison table");
  report->add_option("reports", o.reports, "report_*.json files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig c = resolve(o);
    if (*synth) return cmd_synth(c, o.quiet);
    if (*train_ae) return cmd_train_ae(c, o.quiet);
    if (*extract) return cmd_extract(c, o.quiet);
    if (*train_forest) return cmd_train_forest(c, o.quiet);
    if (*train_clinical) return cmd_train_clinical(c, o.quiet);
    if (*evaluate) return cmd_evaluate(c, o.model, o.quiet);
    if (*report) return cmd_report(c, o.reports, o.quiet);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
