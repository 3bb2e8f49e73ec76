#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stepwise/reward_eval.hpp"

namespace stepwise {

enum class RerankStrategy { Final, Mean, WeightedMean, Min, Product, PenultimateMean };

inline constexpr RerankStrategy kAllStrategies[] = {
    RerankStrategy::Final, RerankStrategy::Mean,    RerankStrategy::WeightedMean,
    RerankStrategy::Min,   RerankStrategy::Product, RerankStrategy::PenultimateMean};

std::string_view to_string(RerankStrategy s);
RerankStrategy strategy_from_string(std::string_view s);

/// Candidate origin; also the tie-break priority (lower wins).
enum class Provenance { Draft, LocalRefinement, GlobalRefinement, Sample };

std::string_view to_string(Provenance p);

struct ScoreOptions {
  /// Use the printed weights 1/(L-i-1), skipping the undefined term, instead
  /// of 1/(L-i+1).
  bool weighted_mean_literal = false;
};

/// Aggregates per-step scores (s_1..s_L). `s0` is the empty-prefix score,
/// used only by penultimate_mean on one-step traces.
double aggregate_scores(std::span<const double> scores, RerankStrategy strategy, double s0,
                        const ScoreOptions& opts = {});

struct ScoredCandidate {
  Trace trace;
  std::vector<double> per_step_scores;
  double s0 = 0.0;
  double aggregate = 0.0;
  RerankStrategy strategy = RerankStrategy::Final;
  Provenance provenance = Provenance::Sample;
  std::size_t sample_index = 0;
};

/// Throws for an empty trace.
ScoredCandidate score_trace(const Scorer& scorer, const Question& q, const Trace& trace, RerankStrategy strategy,
                            Provenance provenance = Provenance::Sample, std::size_t sample_index = 0,
                            const ScoreOptions& opts = {});

/// Index of the highest aggregate; ties go to draft, then local, then
/// global, then samples in order.
std::size_t rerank(std::span<const ScoredCandidate> candidates);

struct TripleSelection {
  std::vector<ScoredCandidate> scored;  // draft, global, local
  std::size_t chosen = 0;
  std::size_t oracle = 0;
};

TripleSelection select_among_three(const Scorer& scorer, const Question& q, const Trace& draft,
                                   const Trace& global_ref, const Trace& local_ref,
                                   RerankStrategy strategy = RerankStrategy::Final, const ScoreOptions& opts = {});

/// Index of the first correct candidate in priority order, or the draft.
std::size_t oracle_choice(const Question& q, std::span<const ScoredCandidate> candidates);

struct StrategyAccuracy {
  RerankStrategy strategy;
  double accuracy = 0.0;
};

struct RerankEval {
  std::size_t k = 0;
  std::size_t questions = 0;
  std::vector<StrategyAccuracy> strategies;
  double best_of_n = 0.0;  // oracle over the K samples (pass@K)
  double maj_k = 0.0;
  double first_sample = 0.0;  // accuracy of sample 0 alone
  /// Per question, per strategy: index of the chosen sample.
  std::vector<std::vector<std::size_t>> choices;
  std::vector<std::vector<char>> sample_correct;
  /// Per question, the non-empty samples with their step scores.
  std::vector<std::vector<ScoredCandidate>> scored;
};

/// K samples per question (sample 0 is the deterministic rollout), reranked
/// by every strategy in `strategies`.
RerankEval rerank_eval(std::span<const Question> tasks, const PolicyParams& policy, const Scorer& scorer,
                       const EnvConfig& env, std::size_t k, std::span<const RerankStrategy> strategies,
                       std::uint64_t seed, const ScoreOptions& opts = {}, int workers = 1);

}  // namespace stepwise
