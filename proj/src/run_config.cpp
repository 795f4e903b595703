#include "mus/run_config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mus {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw std::invalid_argument("config: unknown key '" + where + "." + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& dst) {
  if (j.contains(key) && !j.at(key).is_null()) dst = j.at(key).get<T>();
}

template <typename T>
void read_optional(const json& j, const char* key, std::optional<T>& dst) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) dst.reset();
  else dst = j.at(key).get<T>();
}

void read_forest(const json& j, ForestConfig& f, const std::string& where) {
  reject_unknown(j, {"n_trees", "max_features", "max_depth", "min_samples_leaf", "balanced_class_weight",
                     "bootstrap", "threads"},
                 where);
  read(j, "n_trees", f.n_trees);
  read_optional(j, "max_features", f.max_features);
  read_optional(j, "max_depth", f.max_depth);
  read(j, "min_samples_leaf", f.min_samples_leaf);
  read(j, "balanced_class_weight", f.balanced_class_weight);
  read(j, "threads", f.threads);
  if (j.contains("bootstrap")) {
    const auto b = j.at("bootstrap").get<std::string>();
    if (b == "stratified") f.bootstrap = Bootstrap::stratified;
    else if (b == "none") f.bootstrap = Bootstrap::none;
    else throw std::invalid_argument("config: " + where + ".bootstrap must be 'stratified' or 'none'");
  }
}

json forest_json(const ForestConfig& f) {
  return {{"n_trees", f.n_trees},
          {"max_features", f.max_features ? json(*f.max_features) : json(nullptr)},
          {"max_depth", f.max_depth ? json(*f.max_depth) : json(nullptr)},
          {"min_samples_leaf", f.min_samples_leaf},
          {"balanced_class_weight", f.balanced_class_weight},
          {"bootstrap", f.bootstrap == Bootstrap::stratified ? "stratified" : "none"},
          {"threads", f.threads}};
}

void read_quartiles(const json& j, const char* key, Quartiles& q) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 3) throw std::invalid_argument(std::string("config: clinical ") + key + " needs [q1, median, q3]");
  q = {v[0], v[1], v[2]};
}

void read_class(const json& j, ClassDistribution& c, const std::string& where) {
  reject_unknown(j, {"age", "psa", "volume", "dre_rate"}, where);
  read_quartiles(j, "age", c.age);
  read_quartiles(j, "psa", c.psa);
  read_quartiles(j, "volume", c.volume);
  read(j, "dre_rate", c.dre_rate);
}

json class_json(const ClassDistribution& c) {
  auto q = [](const Quartiles& x) { return json::array({x.q1, x.median, x.q3}); };
  return {{"age", q(c.age)}, {"psa", q(c.psa)}, {"volume", q(c.volume)}, {"dre_rate", c.dre_rate}};
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.empty() || path.is_absolute() || base.empty()) return path;
  return base / path;
}

}  // namespace

void RunConfig::validate() const {
  phantom.validate();
  clinical.validate();
  pipeline.encoder.validate();
  pipeline.train.validate();
  pipeline.aggregation.validate();
  pipeline.slice_forest.validate(kFeatureDim);
  pipeline.clinical_forest.validate(4);
  if (pipeline.folds < 3) throw std::invalid_argument("config: folds must be >= 3");
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  RunConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
  }
  try {
    reject_unknown(j, {"seed", "paths", "phantom", "clinical", "encoder", "train", "forest", "clinical_forest",
                       "aggregation", "budgets", "folds"},
                   "config");
    read(j, "seed", c.seed);
    read(j, "folds", c.pipeline.folds);
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      reject_unknown(p, {"manifest", "out", "checkpoint", "features", "forest"}, "paths");
      if (p.contains("manifest")) c.paths.manifest = resolve(base_dir, p.at("manifest").get<std::string>());
      if (p.contains("out")) c.paths.out = resolve(base_dir, p.at("out").get<std::string>());
      if (p.contains("checkpoint")) c.paths.checkpoint = resolve(base_dir, p.at("checkpoint").get<std::string>());
      if (p.contains("features")) c.paths.features = resolve(base_dir, p.at("features").get<std::string>());
      if (p.contains("forest")) c.paths.forest = resolve(base_dir, p.at("forest").get<std::string>());
    }
    if (j.contains("phantom")) {
      const auto& p = j.at("phantom");
      reject_unknown(p, {"n_positive", "n_negative", "min_slices", "max_slices", "image_size", "min_run_length",
                         "extra_run_mean", "exclusion_margin", "lesion_contrast", "lesion_radius", "speckle_noise"},
                     "phantom");
      auto& ph = c.phantom;
      read(p, "n_positive", ph.n_positive);
      read(p, "n_negative", ph.n_negative);
      read(p, "min_slices", ph.min_slices);
      read(p, "max_slices", ph.max_slices);
      read(p, "image_size", ph.image_size);
      read(p, "min_run_length", ph.min_run_length);
      read(p, "extra_run_mean", ph.extra_run_mean);
      read(p, "exclusion_margin", ph.exclusion_margin);
      read(p, "lesion_contrast", ph.lesion_contrast);
      read(p, "lesion_radius", ph.lesion_radius);
      read(p, "speckle_noise", ph.speckle_noise);
    }
    if (j.contains("clinical")) {
      const auto& cl = j.at("clinical");
      reject_unknown(cl, {"positive", "negative"}, "clinical");
      if (cl.contains("positive")) read_class(cl.at("positive"), c.clinical.positive, "clinical.positive");
      if (cl.contains("negative")) read_class(cl.at("negative"), c.clinical.negative, "clinical.negative");
    }
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      reject_unknown(e, {"input_size"}, "encoder");
      read(e, "input_size", c.pipeline.encoder.input_size);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      reject_unknown(t, {"learning_rate", "batch_size", "max_epochs"}, "train");
      read(t, "learning_rate", c.pipeline.train.learning_rate);
      read(t, "batch_size", c.pipeline.train.batch_size);
      read(t, "max_epochs", c.pipeline.train.max_epochs);
    }
    if (j.contains("forest")) read_forest(j.at("forest"), c.pipeline.slice_forest, "forest");
    if (j.contains("clinical_forest")) read_forest(j.at("clinical_forest"), c.pipeline.clinical_forest, "clinical_forest");
    if (j.contains("aggregation")) {
      const auto& a = j.at("aggregation");
      reject_unknown(a, {"run_length", "threshold"}, "aggregation");
      read(a, "run_length", c.pipeline.aggregation.run_length);
      read(a, "threshold", c.pipeline.aggregation.slice_threshold);
    }
    if (j.contains("budgets")) {
      const auto& b = j.at("budgets");
      reject_unknown(b, {"ae_train_slices", "ae_val_slices", "forest_slices"}, "budgets");
      read(b, "ae_train_slices", c.pipeline.ae_train_slices);
      read(b, "ae_val_slices", c.pipeline.ae_val_slices);
      read(b, "forest_slices", c.pipeline.forest_slices);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.phantom.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

std::string dump_run_config(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["folds"] = c.pipeline.folds;
  j["paths"] = {{"manifest", c.paths.manifest.string()},
                {"out", c.paths.out.string()},
                {"checkpoint", c.paths.checkpoint.string()},
                {"features", c.paths.features.string()},
                {"forest", c.paths.forest.string()}};
  const auto& ph = c.phantom;
  j["phantom"] = {{"n_positive", ph.n_positive},       {"n_negative", ph.n_negative},
                  {"min_slices", ph.min_slices},       {"max_slices", ph.max_slices},
                  {"image_size", ph.image_size},       {"min_run_length", ph.min_run_length},
                  {"extra_run_mean", ph.extra_run_mean}, {"exclusion_margin", ph.exclusion_margin},
                  {"lesion_contrast", ph.lesion_contrast}, {"lesion_radius", ph.lesion_radius},
                  {"speckle_noise", ph.speckle_noise}};
  j["clinical"] = {{"positive", class_json(c.clinical.positive)}, {"negative", class_json(c.clinical.negative)}};
  j["encoder"] = {{"input_size", c.pipeline.encoder.input_size}};
  j["train"] = {{"learning_rate", c.pipeline.train.learning_rate},
                {"batch_size", c.pipeline.train.batch_size},
                {"max_epochs", c.pipeline.train.max_epochs}};
  j["forest"] = forest_json(c.pipeline.slice_forest);
  j["clinical_forest"] = forest_json(c.pipeline.clinical_forest);
  j["aggregation"] = {{"run_length", c.pipeline.aggregation.run_length},
                      {"threshold", c.pipeline.aggregation.slice_threshold}};
  j["budgets"] = {{"ae_train_slices", c.pipeline.ae_train_slices},
                  {"ae_val_slices", c.pipeline.ae_val_slices},
                  {"forest_slices", c.pipeline.forest_slices}};
  return j.dump(2) + "\n";
}

}  // namespace mus
