#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mus/evaluation.hpp"
#include "mus/run_config.hpp"
#include "mus/screening.hpp"
#include "mus/synthesis.hpp"

namespace py = pybind11;
using namespace mus;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

std::span<const double> as_span(const DoubleArray& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-d array");
  return {a.data(), static_cast<std::size_t>(a.size())};
}

std::span<const int> as_span(const IntArray& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-d array");
  return {a.data(), static_cast<std::size_t>(a.size())};
}

FeatureMatrix as_matrix(const DoubleArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  FeatureMatrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.values.begin());
  return m;
}

py::object optional_float(const std::optional<double>& v) { return v ? py::object(py::float_(*v)) : py::object(py::none()); }

py::dict metrics_dict(const ConfusionMetrics& m) {
  py::dict d;
  d["tp"] = m.counts.tp;
  d["fp"] = m.counts.fp;
  d["tn"] = m.counts.tn;
  d["fn"] = m.counts.fn;
  d["sensitivity"] = optional_float(m.sensitivity);
  d["specificity"] = optional_float(m.specificity);
  d["accuracy"] = optional_float(m.accuracy);
  d["precision"] = optional_float(m.precision);
  d["f1"] = optional_float(m.f1);
  return d;
}

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["model"] = r.model;
  d["threshold"] = r.threshold;
  d["run_length"] = r.run_length;
  d["seed"] = r.seed;
  py::list folds;
  for (const auto& f : r.folds) {
    py::dict fd;
    fd["fold"] = f.fold;
    fd["n_test"] = f.n_test;
    fd["n_positive"] = f.n_positive;
    for (const auto& name : metric_names()) fd[name.c_str()] = optional_float(metric_value(f, name));
    folds.append(fd);
  }
  d["folds"] = folds;
  py::dict mean;
  for (const auto& name : metric_names()) mean[name.c_str()] = optional_float(r.mean(name));
  d["mean"] = mean;
  d["warnings"] = r.warnings;
  return d;
}

Cohort label_cohort(const std::vector<std::string>& ids, const IntArray& labels) {
  const auto y = as_span(labels);
  if (ids.size() != y.size()) throw std::invalid_argument("patient ids and labels differ in length");
  Cohort c;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Study s;
    s.record.patient_id = ids[i];
    s.record.cspca = y[i] != 0;
    c.studies.push_back(std::move(s));
  }
  return c;
}

ForestConfig forest_config(int n_trees, std::optional<int> max_features, std::optional<int> max_depth,
                           int min_samples_leaf, bool balanced, bool bootstrap, std::uint64_t seed, int threads) {
  ForestConfig c;
  c.n_trees = n_trees;
  c.max_features = max_features;
  c.max_depth = max_depth;
  c.min_samples_leaf = min_samples_leaf;
  c.balanced_class_weight = balanced;
  c.bootstrap = bootstrap ? Bootstrap::stratified : Bootstrap::none;
  c.seed = seed;
  c.threads = threads;
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Micro-ultrasound screening core";

  py::register_exception<ManifestError>(m, "ManifestError", PyExc_ValueError);

  m.def("derive_seed", py::overload_cast<std::uint64_t, std::string_view>(&derive_seed), py::arg("seed"), py::arg("label"));

  m.def(
      "patient_score", [](const DoubleArray& p, int run_length) { return patient_score(as_span(p), run_length); },
      py::arg("probabilities"), py::arg("run_length") = 8);
  m.def("classify_patient", &classify_patient, py::arg("score"), py::arg("threshold") = 0.15);

  m.def(
      "auroc", [](const DoubleArray& s, const IntArray& y) { return auroc(as_span(s), as_span(y)); }, py::arg("scores"),
      py::arg("labels"));
  m.def(
      "roc_curve",
      [](const DoubleArray& s, const IntArray& y) {
        std::vector<std::tuple<double, double, double>> out;
        for (const auto& p : roc_curve(as_span(s), as_span(y))) out.emplace_back(p.threshold, p.fpr, p.tpr);
        return out;
      },
      py::arg("scores"), py::arg("labels"), "List of (threshold, fpr, tpr); predicted positive when score >= threshold.");
  m.def(
      "confusion_metrics",
      [](const IntArray& d, const IntArray& y) { return metrics_dict(confusion_metrics(as_span(d), as_span(y))); },
      py::arg("decisions"), py::arg("labels"));

  m.def(
      "make_folds",
      [](const std::vector<std::string>& ids, const IntArray& labels, int k, std::uint64_t seed) {
        return make_folds(label_cohort(ids, labels), k, seed).folds;
      },
      py::arg("patient_ids"), py::arg("labels"), py::arg("k") = 5, py::arg("seed") = 42,
      "Stratified patient folds; round r tests fold r and validates on fold (r + 1) % k.");

  m.def(
      "compute_prostate_volume",
      [](const std::vector<py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>>& masks,
         std::tuple<double, double, double> spacing) {
        SegmentationStack stack;
        stack.spacing = {std::get<0>(spacing), std::get<1>(spacing), std::get<2>(spacing)};
        for (const auto& a : masks) {
          if (a.ndim() != 2) throw std::invalid_argument("masks must be 2-d");
          Mask mk{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), {a.data(), a.data() + a.size()}};
          stack.masks.push_back(std::move(mk));
        }
        return compute_prostate_volume(stack);
      },
      py::arg("masks"), py::arg("spacing") = std::make_tuple(1.0, 1.0, 1.0), "Gland volume in ml; spacing in mm.");

  m.def(
      "sample_clinical",
      [](bool positive, int n, std::uint64_t seed) {
        Rng rng(seed);
        const ClinicalDistributions dists;
        std::vector<double> age, psa, vol, dre;
        for (int i = 0; i < n; ++i) {
          const auto r = sample_clinical(positive, dists, rng);
          age.push_back(*r.age);
          psa.push_back(*r.psa);
          vol.push_back(*r.prostate_volume);
          dre.push_back(*r.dre);
        }
        py::dict d;
        d["age"] = py::array(py::cast(age));
        d["psa"] = py::array(py::cast(psa));
        d["volume"] = py::array(py::cast(vol));
        d["dre"] = py::array(py::cast(dre));
        return d;
      },
      py::arg("positive"), py::arg("n"), py::arg("seed") = 42);

  py::class_<ForestModel>(m, "Forest")
      .def_static(
          "fit",
          [](const DoubleArray& x, const IntArray& y, int n_trees, std::optional<int> max_features,
             std::optional<int> max_depth, int min_samples_leaf, bool balanced, bool bootstrap, std::uint64_t seed,
             int threads) {
            const auto cfg = forest_config(n_trees, max_features, max_depth, min_samples_leaf, balanced, bootstrap, seed,
                                           threads);
            const auto matrix = as_matrix(x);
            const auto labels = as_span(y);
            py::gil_scoped_release release;
            return fit_forest(matrix, labels, cfg);
          },
          py::arg("x"), py::arg("y"), py::arg("n_trees") = 1000, py::arg("max_features") = py::none(),
          py::arg("max_depth") = py::none(), py::arg("min_samples_leaf") = 1, py::arg("balanced_class_weight") = true,
          py::arg("bootstrap") = true, py::arg("seed") = 0, py::arg("threads") = 0)
      .def_static("load", &load_forest, py::arg("path"))
      .def("save", [](const ForestModel& f, const std::filesystem::path& p) { save_forest(f, p); }, py::arg("path"))
      .def(
          "predict_proba",
          [](const ForestModel& f, const DoubleArray& x) { return py::array(py::cast(predict_proba(f, as_matrix(x)))); },
          py::arg("x"))
      .def(
          "oob_score", [](const ForestModel& f, const DoubleArray& x, const IntArray& y) {
            return oob_score(f, as_matrix(x), as_span(y));
          },
          py::arg("x"), py::arg("y"))
      .def("oob_pair_fraction", &oob_pair_fraction)
      .def_property_readonly("n_trees", [](const ForestModel& f) { return f.trees.size(); })
      .def_property_readonly("n_features", [](const ForestModel& f) { return f.n_features; });

  m.def(
      "synthesize",
      [](const std::filesystem::path& out, const std::string& config_json) {
        const auto cfg = parse_run_config(config_json.empty() ? "{}" : config_json);
        SyntheticCohort synthetic;
        {
          py::gil_scoped_release release;
          synthetic = generate_cohort(cfg.phantom, cfg.clinical);
        }
        const auto manifest = save_manifest(synthetic.cohort, out);
        write_truth_csv(synthetic, out / "truth.csv");
        std::size_t slices = 0, positives = 0;
        for (const auto& s : synthetic.cohort.studies) {
          slices += s.slices.size();
          positives += s.record.cspca;
        }
        py::dict d;
        d["manifest"] = manifest;
        d["patients"] = synthetic.cohort.studies.size();
        d["positive_patients"] = positives;
        d["slices"] = slices;
        return d;
      },
      py::arg("out"), py::arg("config_json") = "",
      "Writes a synthetic cohort (manifest, PNG slices, truth.csv) under `out`.");

  m.def(
      "evaluate",
      [](const std::filesystem::path& manifest, const std::string& model, const std::string& config_json) {
        const auto cfg = parse_run_config(config_json.empty() ? "{}" : config_json);
        Pipeline p;
        if (model == "imaging") p = Pipeline::imaging;
        else if (model == "clinical") p = Pipeline::clinical;
        else throw std::invalid_argument("model must be 'imaging' or 'clinical'");
        const auto cohort = load_manifest(manifest);
        const auto clean = validate_cohort(cohort).cohort;
        CrossValidationResult r;
        {
          py::gil_scoped_release release;
          r = run_cross_validation(clean, p, cfg.pipeline, cfg.seed);
        }
        return report_dict(r.report);
      },
      py::arg("manifest"), py::arg("model"), py::arg("config_json") = "",
      "Patient-level cross-validation of one model; returns per-fold and mean metrics.");
}
