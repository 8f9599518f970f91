#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "impairdetect/synth.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("impairdetect_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

/// Small cohort that still supports a LOSO plan: 2 treatment, 1 placebo,
/// 1 reference, 5-minute drives.
inline impairdetect::SynthConfig tiny_cohort(std::uint64_t seed = 11) {
  impairdetect::SynthConfig c;
  c.n_treatment = 2;
  c.n_placebo = 1;
  c.n_reference = 1;
  c.phase_duration_s = 300.0;
  c.phase_gap_s = 120.0;
  c.seed = seed;
  return c;
}

}  // namespace testing
