#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stepwise/env.hpp"
#include "stepwise/policy.hpp"

namespace stepwise {

using QuestionIndex = std::unordered_map<std::string, const Question*>;
QuestionIndex index_questions(std::span<const Question> tasks);
const Question& lookup(const QuestionIndex& index, const std::string& id);

/// A student rollout that other datasets refer to by id.
struct SourceTrace {
  std::string id;
  Trace trace;
  bool correct = false;
};

struct OrmSample {
  std::string question_id;
  std::string source_trace_id;
  std::vector<Step> prefix;
  int label = 0;

  std::size_t depth() const { return prefix.size(); }
};

struct OrmDataset {
  std::vector<SourceTrace> traces;
  std::vector<OrmSample> samples;
};

/// K rollouts per question; every prefix (depth 0..L) of every rollout
/// labeled with the rollout's final correctness.
OrmDataset build_orm_dataset(std::span<const Question> tasks, const PolicyParams& policy,
                             const EnvConfig& env, std::size_t k, std::uint64_t seed, int workers = 1);

/// Rebuilds prefix samples from a set of source traces.
std::vector<OrmSample> orm_samples_from(std::span<const SourceTrace> traces);

struct BalancedOrm {
  OrmDataset data;
  std::size_t dropped_questions = 0;
  std::vector<std::string> warnings;
};

/// Per question, downsamples the majority trace class to the minority count.
BalancedOrm build_balanced_orm_dataset(const OrmDataset& orm, std::uint64_t seed);

struct Verifier {
  Trace trace;
  int label = 0;
  bool consistent = true;
};

struct SormSample {
  std::string question_id;
  std::string source_trace_id;
  std::vector<Step> prefix;
  int label = 0;
  /// max_j l_j at build time, kept for audits.
  int raw_label = 0;
  std::vector<Verifier> verifiers;

  std::size_t depth() const { return prefix.size(); }
};

/// Rejection sampling: K_verify continuations from every prefix (depth 0..L)
/// of every source trace; label = max_j l_j.
std::vector<SormSample> build_sorm_dataset(std::span<const Question> tasks, std::span<const SourceTrace> traces,
                                           const PolicyParams& policy, const EnvConfig& env,
                                           std::size_t k_verify, std::uint64_t seed, int workers = 1);

/// Keeps the first `k` verifiers of every sample and recomputes the labels.
/// Verifier streams are nested in K, so this equals a build with K = k.
std::vector<SormSample> with_verifier_budget(std::span<const SormSample> samples, std::size_t k);

/// Whether every number produced inside `prefix` is consumed later in
/// `verifier` (or equals the target). Always true for chain tasks.
bool consistency_check(const Question& q, std::span<const Step> prefix, const Trace& verifier);

struct PostprocessOptions {
  bool propagate = true;    // earlier steps of a positive step become positive
  bool consistency = true;  // drop inconsistent verifiers and relabel
  bool balance = true;      // per-depth downsampling
};

struct PostprocessStats {
  std::size_t total_rollouts = 0;
  std::size_t discarded_rollouts = 0;
  std::size_t relabeled_by_consistency = 0;
  std::size_t propagated = 0;
  std::size_t removed_by_balance = 0;
  std::vector<std::size_t> dropped_depths;
  std::vector<std::string> warnings;
};

struct PostprocessResult {
  std::vector<SormSample> samples;
  PostprocessStats stats;
};

/// Applies the consistency filter (with relabeling), then backward
/// propagation of positives, then per-depth balancing; each can be disabled.
PostprocessResult postprocess_sorm(std::vector<SormSample> samples, const QuestionIndex& questions,
                                   const PostprocessOptions& opts, std::uint64_t seed);

struct LabelAgreement {
  double agreement = 0.0;
  double false_positive_rate = 0.0;
  double false_negative_rate = 0.0;
  std::size_t samples = 0;
};

LabelAgreement sorm_label_agreement(std::span<const SormSample> samples, const QuestionIndex& questions,
                                    const EnvConfig& env);

struct TracePair {
  std::size_t good = 0;  // index into OrmDataset::traces
  std::size_t bad = 0;
};

/// Per question min(#pos, #neg) disjoint pairs of complete traces.
std::vector<TracePair> build_contrastive_pairs(const OrmDataset& orm, std::uint64_t seed);

}  // namespace stepwise
