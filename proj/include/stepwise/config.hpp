#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stepwise/estimator.hpp"
#include "stepwise/policy.hpp"
#include "stepwise/refinement.hpp"
#include "stepwise/rerank.hpp"
#include "stepwise/reward_data.hpp"
#include "stepwise/serialize.hpp"

namespace stepwise {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct TaskSettings {
  Family family = Family::Chain;
  Difficulty difficulty = Difficulty::Hard;
  std::size_t train = 300;
  std::size_t test = 300;
};

struct StudentSettings {
  PolicyParams initial;
  /// EI policy that generates reward-model data and drafts: 0 is the initial
  /// policy, r the refit after round r (clamped to the last round run).
  int data_round = 0;
};

struct EISettings {
  std::size_t k = 96;
  double epsilon = 0.005;
  int max_rounds = 8;
  double alpha = 1.0;
  double sft_fraction = 0.0;
};

struct RmSettings {
  std::size_t k_orm = 16;
  std::size_t k_verify = 8;
  std::vector<std::size_t> agreement_k{1, 2, 4, 8};
  PostprocessOptions postprocess;
  FeatureSet features = FeatureSet::StateComplete;
  /// Estimator that reranks refinement triples and Bo3 samples.
  EstimatorKind kind = EstimatorKind::Classifier;
  double l2 = 1e-4;
  double threshold = 0.5;
};

struct RefineSettings {
  RefinerConfig refiner;
  std::vector<RefineMode> modes{RefineMode::Global, RefineMode::Local, RefineMode::Value};

  bool enabled(RefineMode m) const;
};

struct RerankSettings {
  RerankStrategy strategy = RerankStrategy::Final;
  std::size_t k = 8;
  bool weighted_mean_literal = false;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 0;
  EnvConfig env;
  TaskSettings tasks;
  StudentSettings student;
  EISettings ei;
  RmSettings rm;
  RefineSettings refine;
  RerankSettings rerank;
  std::string output_dir = "runs/default";

  void validate() const;
  FitConfig fit_config() const;
  ScoreOptions score_options() const { return {rerank.weighted_mean_literal}; }
};

/// Parses a config document. Missing keys take defaults; unknown keys at any
/// level are rejected.
ExperimentConfig config_from_json(const Json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical form with every key present.
Json to_json(const ExperimentConfig& c);
/// SHA-256 of the canonical form without output_dir.
std::string config_hash(const ExperimentConfig& c);

}  // namespace stepwise
