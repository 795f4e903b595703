#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mus/evaluation.hpp"
#include "mus/synthesis.hpp"

namespace mus {

struct RunPaths {
  std::filesystem::path manifest;
  std::filesystem::path out = "out";
  std::filesystem::path checkpoint;  // autoencoder checkpoint
  std::filesystem::path features;    // feature CSV written by `extract`
  std::filesystem::path forest;      // slice forest written by `train-forest`
};

/// Everything a CLI run depends on. Loaded from a JSON document in which
/// every key is optional; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 42;
  RunPaths paths;
  PhantomConfig phantom;
  ClinicalDistributions clinical;
  PipelineConfig pipeline;

  void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
std::string dump_run_config(const RunConfig& config);

}  // namespace mus
