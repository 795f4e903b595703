#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "../unit/helpers.hpp"

namespace clitest {

// Runs the CLI with `args` (already shell-quoted where needed); stdout and
// stderr go to files next to the output. Returns the exit status.
inline int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(MUS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Every regular file under `dir`, keyed by relative path.
inline std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), dir).generic_string()] = testutil::slurp(e.path());
  return out;
}

inline void write_config(const std::filesystem::path& path, const std::string& extra = "") {
  std::ofstream(path) << R"({"seed": 5,
 "phantom": {"n_positive": 6, "n_negative": 6, "min_slices": 45, "max_slices": 55, "image_size": 32},
 "encoder": {"input_size": 32},
 "train": {"max_epochs": 2},
 "forest": {"n_trees": 25},
 "clinical_forest": {"n_trees": 60},
 "folds": 3)" << extra
                      << "}\n";
}

}  // namespace clitest
