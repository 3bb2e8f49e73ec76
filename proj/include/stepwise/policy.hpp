#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stepwise/env.hpp"
#include "stepwise/rng.hpp"

namespace stepwise {

/// Countdown action features: op kind x (result vs target) x operand pattern.
inline constexpr std::size_t kCountdownFeatures = 36;

std::size_t countdown_action_feature(const Step& action, std::span<const std::int64_t> pool,
                                     std::int64_t target);

/// The stochastic student. Chain behaviour is a per-op success probability
/// plus an error distribution over the environment's perturbation support;
/// countdown behaviour is a tempered softmax over positive feature weights.
struct PolicyParams {
  std::int64_t version = 0;
  std::array<double, 4> chain_skill{1.0, 1.0, 1.0, 1.0};
  /// Aligned with EnvConfig::perturbation_support. Empty means uniform.
  std::vector<double> error_weights;
  std::vector<double> countdown_weights = std::vector<double>(kCountdownFeatures, 1.0);
  double countdown_temperature = 1.0;

  double skill(OpKind k) const { return chain_skill[static_cast<std::size_t>(k)]; }
  double& skill(OpKind k) { return chain_skill[static_cast<std::size_t>(k)]; }

  void validate(const EnvConfig& env) const;
  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

struct RolloutConfig {
  std::size_t k_samples = 1;
  /// 0 selects deterministic decoding.
  double temperature = 1.0;
  /// 0 defers to EnvConfig::max_steps.
  int max_steps = 0;
  std::uint64_t seed = 0;
};

struct Outcome {
  Step step;
  double prob = 0.0;
};

/// Next-step distribution of the student in state `s`. Outcomes with zero
/// probability are omitted; the order is fixed so sampling is reproducible.
std::vector<Outcome> step_distribution(const Question& q, const State& s, const PolicyParams& policy,
                                       const EnvConfig& env, double temperature = 1.0);

/// Draws one outcome index by inverse CDF.
std::size_t draw(std::span<const Outcome> dist, Rng& rng);

using StepDistributionFn = std::function<std::vector<Outcome>(const State&)>;

/// Rolls out from `prefix` until the trace finishes or the step cap is hit.
Trace rollout_with(const Question& q, std::vector<Step> prefix, const StepDistributionFn& dist,
                   Rng& rng, const EnvConfig& env);

Trace sample_rollout(const Question& q, const PolicyParams& policy, const EnvConfig& env, Rng& rng,
                     double temperature = 1.0);

/// Deterministic decoding. Failures of the student are a fixed function of the
/// question (the draw stream is keyed by the question id only), mirroring how a
/// greedily decoded model makes question-specific mistakes.
Trace greedy_rollout(const Question& q, const PolicyParams& policy, const EnvConfig& env);

Rng greedy_stream(const Question& q);

/// K rollouts. Sample 0 is the deterministic-decoding rollout; the remaining
/// samples come from streams keyed by (seed, question, index). With
/// temperature 0 every sample is the deterministic rollout.
std::vector<Trace> sample_rollouts(const Question& q, const PolicyParams& policy, const EnvConfig& env,
                                   const RolloutConfig& cfg);

/// Continues a prefix with the student policy.
Trace continue_rollout(const Question& q, std::span<const Step> prefix, const PolicyParams& policy,
                       const EnvConfig& env, Rng& rng);

// ---------------------------------------------------------------------------
// Count-based refits

struct PolicyCounts {
  std::array<double, 4> attempts{};
  std::array<double, 4> successes{};
  std::vector<double> error_counts;  // per perturbation offset
  std::vector<double> offered = std::vector<double>(kCountdownFeatures, 0.0);
  std::vector<double> chosen = std::vector<double>(kCountdownFeatures, 0.0);

  /// Adds the steps of `trace` from position `from` (0-based) on.
  void add(const Question& q, const Trace& trace, const EnvConfig& env, std::size_t from = 0);
};

/// Maximum-likelihood refit with `alpha` pseudo-counts. Skill pseudo-counts
/// follow the base policy, so a perfect base stays perfect; error offsets and
/// countdown features use add-alpha smoothing.
PolicyParams fit_policy(const PolicyCounts& counts, const PolicyParams& base, const EnvConfig& env,
                        double alpha = 1.0);

// ---------------------------------------------------------------------------
// Evaluation and expert iteration

struct PolicyMetrics {
  double maj1 = 0.0;
  double majk = 0.0;
  double passk = 0.0;
  std::size_t k = 0;
  std::size_t questions = 0;
};

PolicyMetrics eval_policy(std::span<const Question> tasks, const PolicyParams& policy,
                          const EnvConfig& env, std::size_t k, std::uint64_t seed, int workers = 1);

struct EIConfig {
  std::size_t k = 96;
  double epsilon = 0.005;
  int max_rounds = 8;
  double alpha = 1.0;
  /// Fraction of training questions whose canonical trace seeds round 0.
  double sft_fraction = 0.0;
  std::uint64_t seed = 0;
};

struct EIRoundReport {
  int round = 0;
  double maj1 = 0.0;
  double passk = 0.0;
  std::size_t dataset_size = 0;
  bool converged = false;
};

struct EIResult {
  /// policies[0] is the initial policy, policies[r] the refit after round r.
  std::vector<PolicyParams> policies;
  std::vector<EIRoundReport> rounds;
  /// Union of kept, deduplicated traces after the last round.
  std::vector<Trace> dataset;
};

class EIError : public Error {
 public:
  using Error::Error;
};

EIResult expert_iteration(std::span<const Question> tasks, const PolicyParams& initial,
                          const EIConfig& cfg, const EnvConfig& env,
                          std::span<const Question> eval_tasks = {}, int workers = 1);

}  // namespace stepwise
