#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "mus/dataset.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mus_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline mus::SliceImage flat_slice(const std::string& pid, int frame, int size, std::uint8_t code) {
  return {pid, frame, size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size, code)};
}

// A complete, valid study with `labels` and constant-intensity slices.
inline mus::Study make_study(const std::string& pid, bool cspca, const std::vector<mus::SliceLabel>& labels,
                             int size = 4) {
  mus::Study s;
  s.record = {pid, 65, 6.0, 0, 40.0, cspca};
  for (std::size_t i = 0; i < labels.size(); ++i)
    s.slices.push_back(flat_slice(pid, static_cast<int>(i), size, static_cast<std::uint8_t>(10 * i % 256)));
  s.labels = labels;
  return s;
}

}  // namespace testutil
