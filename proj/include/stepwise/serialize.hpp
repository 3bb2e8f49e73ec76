#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "stepwise/estimator.hpp"
#include "stepwise/policy.hpp"
#include "stepwise/refinement.hpp"
#include "stepwise/reward_data.hpp"

namespace stepwise {

using Json = nlohmann::ordered_json;

class SchemaMismatchError : public Error {
 public:
  using Error::Error;
};

/// Record schema tags. Every JSON Lines record and JSON document carries one
/// in its "schema" field.
namespace schema {
inline constexpr const char* kQuestion = "stepwise.question/1";
inline constexpr const char* kTrace = "stepwise.trace/1";
inline constexpr const char* kSourceTrace = "stepwise.source_trace/1";
inline constexpr const char* kOrmSample = "stepwise.orm_sample/1";
inline constexpr const char* kSormSample = "stepwise.sorm_sample/1";
inline constexpr const char* kPolicy = "stepwise.policy/1";
inline constexpr const char* kEIRound = "stepwise.ei_round/1";
inline constexpr const char* kEstimator = "stepwise.estimator/1";
inline constexpr const char* kRefinementExample = "stepwise.refinement_example/1";
inline constexpr const char* kRefiner = "stepwise.refiner/1";
inline constexpr const char* kContrastivePair = "stepwise.contrastive_pair/1";
inline constexpr const char* kStepPrediction = "stepwise.step_prediction/1";
inline constexpr const char* kRefineOutcome = "stepwise.refine_outcome/1";
inline constexpr const char* kTriple = "stepwise.scored_triple/1";
inline constexpr const char* kRerankRecord = "stepwise.rerank_record/1";
inline constexpr const char* kConfig = "stepwise.config/1";
inline constexpr const char* kManifest = "stepwise.manifest/1";
inline constexpr const char* kSummary = "stepwise.eval_summary/1";
inline constexpr const char* kStats = "stepwise.stats/1";
}  // namespace schema

Json step_to_json(const Step& s);
Step step_from_json(const Json& j);
Json steps_to_json(const std::vector<Step>& steps);
std::vector<Step> steps_from_json(const Json& j);

Json to_json(const Question& q);
Question question_from_json(const Json& j);
Json to_json(const Trace& t);
Trace trace_from_json(const Json& j);
Json to_json(const SourceTrace& t);
SourceTrace source_trace_from_json(const Json& j);
Json to_json(const OrmSample& s);
OrmSample orm_sample_from_json(const Json& j);
Json to_json(const SormSample& s);
SormSample sorm_sample_from_json(const Json& j);
Json to_json(const PolicyParams& p);
PolicyParams policy_from_json(const Json& j);
Json to_json(const EIRoundReport& r);
EIRoundReport ei_round_from_json(const Json& j);
Json to_json(const Estimator& e);
Estimator estimator_from_json(const Json& j);
Json to_json(const RefinementExample& e);
RefinementExample refinement_example_from_json(const Json& j);
Json to_json(const RefinerPolicy& r);
RefinerPolicy refiner_from_json(const Json& j);
Json to_json(const EnvConfig& e);
EnvConfig env_from_json(const Json& j);

/// Throws SchemaMismatchError unless j["schema"] == expected.
void expect_schema(const Json& j, const char* expected);

/// Compact single-line dump with fixed key order.
std::string dump_line(const Json& j);

/// Writes through a temporary file and renames it into place.
void write_text(const std::filesystem::path& path, const std::string& text);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);
std::vector<Json> read_jsonl(const std::filesystem::path& path, const char* expected_schema);
void write_json(const std::filesystem::path& path, const Json& doc);
Json read_json(const std::filesystem::path& path, const char* expected_schema);

template <typename T, typename Fn>
void write_records(const std::filesystem::path& path, const std::vector<T>& items, Fn&& to) {
  std::vector<Json> recs;
  recs.reserve(items.size());
  for (const auto& x : items) recs.push_back(to(x));
  write_jsonl(path, recs);
}

}  // namespace stepwise
