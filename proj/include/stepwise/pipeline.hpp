#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "stepwise/config.hpp"

namespace stepwise {

inline constexpr const char* kToolVersion = "stepwise 0.1.0";

enum class Stage { GenTasks, TrainStudent, BuildRmData, FitRm, BuildRefineData, FitRefiner, Evaluate, Report };

inline constexpr Stage kAllStages[] = {Stage::GenTasks,        Stage::TrainStudent, Stage::BuildRmData,
                                       Stage::FitRm,           Stage::BuildRefineData, Stage::FitRefiner,
                                       Stage::Evaluate,        Stage::Report};

std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);

class MissingUpstreamError : public Error {
 public:
  using Error::Error;
};

class ConfigMismatchError : public Error {
 public:
  using Error::Error;
};

class EmptyEvaluationError : public Error {
 public:
  using Error::Error;
};

struct StageRecord {
  std::string completed_at;
  /// Path relative to the output directory -> SHA-256.
  std::map<std::string, std::string> artifacts;
};

struct RunManifest {
  std::string config_hash;
  std::string tool_version = kToolVersion;
  std::map<Stage, StageRecord> stages;
};

Json to_json(const RunManifest& m);
RunManifest manifest_from_json(const Json& j);

/// Reads <dir>/manifest.json; an absent file yields an empty manifest.
RunManifest load_manifest(const std::filesystem::path& dir);

/// Hashes every artifact of a stage; returns the first mismatch or missing
/// file, or an empty string when the stage is intact.
std::string verify_stage(const std::filesystem::path& dir, const StageRecord& rec);

struct RunOptions {
  int workers = 1;
  std::ostream* log = nullptr;
};

struct StageResult {
  Stage stage;
  bool skipped = false;
  std::vector<std::string> artifacts;
};

/// Runs one stage into config.output_dir. Upstream stages must be complete
/// and intact; a complete, intact stage is not rerun.
StageResult run_stage(const ExperimentConfig& config, Stage stage, const RunOptions& opts = {});

std::vector<StageResult> run_all(const ExperimentConfig& config, const RunOptions& opts = {});

/// Human-readable tables and CSV series built from a completed evaluation.
struct ReportBundle {
  std::string text;
  /// File name -> CSV contents.
  std::map<std::string, std::string> csv;
};

ReportBundle emit_report(const std::filesystem::path& dir);

struct AuditResult {
  std::vector<std::string> checks;
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

/// Recomputes every summary number from the persisted JSON Lines records and
/// checks the manifest hashes.
AuditResult audit_run(const std::filesystem::path& dir);

}  // namespace stepwise
