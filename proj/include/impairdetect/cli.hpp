#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "impairdetect/evaluation.hpp"
#include "impairdetect/io.hpp"

namespace impairdetect::cli {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kManifestName = "run_manifest.json";

/// Provenance of one stage output directory.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  io::Json config = io::Json::object();
  io::Json seeds = io::Json::object();
  /// Upstream directories with the hash of their run manifest (or of the
  /// cohort manifest when the cohort did not come from this tool).
  io::Json inputs = io::Json::array();
  /// Relative path -> sha256 of every file the stage wrote.
  io::Json outputs = io::Json::object();
  std::string tool_version = kToolVersion;
  std::string started_at, finished_at;

  io::Json to_json() const;
  static RunManifest from_json(const io::Json& j);
};

/// Hashes of every regular file under dir except the run manifest, keyed by
/// generic relative path.
io::Json hash_outputs(const std::filesystem::path& dir);

/// Throws ValidationError when files listed in dir's run manifest are missing
/// or changed, or when a declared upstream manifest that still exists no
/// longer matches its recorded hash. Returns the manifest hash.
std::string verify_stage_dir(const std::filesystem::path& dir);

struct RenderedTable {
  std::string csv;
  std::string text;
};

/// Task x scope x metric rows with one column per report. Two reports with
/// the same model label and task conflict.
RenderedTable render_reports(std::span<const EvalReport> reports);

/// Window-sweep or effect-sweep CSV transposed to one column per sweep value.
RenderedTable render_sweep(const std::filesystem::path& sweep_csv);

/// Exit code: 0 success, 1 usage or validation error, 2 runtime failure.
int dispatch(int argc, const char* const* argv);

}  // namespace impairdetect::cli
