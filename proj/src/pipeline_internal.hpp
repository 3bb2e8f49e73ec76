#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stepwise/pipeline.hpp"

namespace stepwise::detail {

namespace path {
inline constexpr const char* kTrain = "tasks/train.jsonl";
inline constexpr const char* kTest = "tasks/test.jsonl";
inline constexpr const char* kPolicies = "student/policies.jsonl";
inline constexpr const char* kEIRounds = "student/ei_rounds.jsonl";
inline constexpr const char* kEIDataset = "student/ei_dataset.jsonl";
inline constexpr const char* kOrmTraces = "rm/orm_traces.jsonl";
inline constexpr const char* kOrm = "rm/orm.jsonl";
inline constexpr const char* kBalancedTraces = "rm/balanced_orm_traces.jsonl";
inline constexpr const char* kPairs = "rm/contrastive_pairs.jsonl";
inline constexpr const char* kOrmBTraces = "rm/orm_b_traces.jsonl";
inline constexpr const char* kSormRaw = "rm/sorm_raw.jsonl";
inline constexpr const char* kSorm = "rm/sorm.jsonl";
inline constexpr const char* kRmStats = "rm/rm_data_stats.json";
inline constexpr const char* kFitStats = "estimators/fit_stats.json";
inline constexpr const char* kRefineStats = "refine/pair_stats.json";
inline constexpr const char* kRefiner = "refine/refiner.json";
inline constexpr const char* kDrafts = "eval/drafts.jsonl";
inline constexpr const char* kDraftsB = "eval/drafts_b.jsonl";
inline constexpr const char* kStepPredictions = "eval/step_predictions.jsonl";
inline constexpr const char* kOutcomes = "eval/refinement_outcomes.jsonl";
inline constexpr const char* kTriples = "eval/triples.jsonl";
inline constexpr const char* kRerank = "eval/rerank_samples.jsonl";
inline constexpr const char* kSummary = "eval/summary.json";
inline constexpr const char* kReport = "report/report.txt";
}  // namespace path

std::string estimator_path(const std::string& name);
std::string pairs_path(RefineMode m);

/// Estimators in evaluation order; the first two must always fit.
inline constexpr const char* kEstimatorNames[] = {"orm",         "sorm",  "balanced_orm",   "sorm_nopp",
                                                  "contrastive", "orm_b", "sorm_selffilter"};

struct StageContext {
  const ExperimentConfig& cfg;
  std::filesystem::path dir;
  int workers = 1;
  std::vector<std::string> written;

  std::filesystem::path at(const std::string& rel) const { return dir / rel; }
  std::uint64_t seed(const char* purpose) const;
  void wrote(const std::string& rel) { written.push_back(rel); }
};

std::vector<Question> load_questions(const std::filesystem::path& file);
std::vector<Trace> load_traces(const std::filesystem::path& file);
std::vector<SourceTrace> load_source_traces(const std::filesystem::path& file);
std::vector<SormSample> load_sorm(const std::filesystem::path& file);
std::vector<PolicyParams> load_policies(const std::filesystem::path& file);
std::vector<EIRoundReport> load_ei_rounds(const std::filesystem::path& file);

/// Policy that generates reward-model data and drafts.
const PolicyParams& data_policy(const std::vector<PolicyParams>& policies, int round);
std::string policy_id(const PolicyParams& p);

Json trace_record(const Trace& t);

void run_evaluate(StageContext& ctx);
void run_report(StageContext& ctx);

}  // namespace stepwise::detail
