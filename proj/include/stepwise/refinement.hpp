#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stepwise/reward_data.hpp"
#include "stepwise/reward_eval.hpp"

namespace stepwise {

enum class RefineMode { Global, Local, Value };

std::string_view to_string(RefineMode m);
RefineMode refine_mode_from_string(std::string_view s);

/// (Q, A_D, E, A_R). E is 1-based and names the first draft step that the
/// target replaces; global examples carry no E.
struct RefinementExample {
  std::string question_id;
  std::string draft_id;
  Trace draft;
  std::optional<std::size_t> error_index;
  Trace target;
  RefineMode mode = RefineMode::Global;
};

struct PairBuild {
  std::vector<RefinementExample> examples;
  std::size_t candidates = 0;  // incorrect source traces considered
  std::size_t skipped = 0;     // no eligible target
};

/// Each incorrect trace paired with a seeded choice among the question's
/// correct traces.
PairBuild build_global_pairs(const OrmDataset& orm, std::uint64_t seed);

/// `sorm` must still hold verifiers (before balancing). Labels are read after
/// backward propagation; the first zero label at depth i gives E = i and the
/// target is a correct verifier launched from depth i-1.
PairBuild build_local_pairs(std::span<const SormSample> sorm, std::span<const SourceTrace> traces,
                            std::uint64_t seed);

/// Anchors at the depth i in 1..L-1 with the most correct verifiers (first on
/// ties); E = i+1 and the target is a correct verifier from depth i whose
/// next step differs from the draft's.
PairBuild build_value_pairs(std::span<const SormSample> sorm, std::span<const SourceTrace> traces,
                            std::uint64_t seed);

struct RefinerModeParams {
  PolicyParams params;
  /// Probability of reusing the draft's step when the refinement is in the
  /// same state as the draft.
  double copy_rate = 0.0;
  std::size_t examples = 0;
};

struct RefinerConfig {
  double lambda = 2.0;
  /// Fraction of the way from the base policy to the example MLE.
  double fit_rate = 0.5;
  double alpha = 1.0;
};

struct RefinerPolicy {
  PolicyParams base;
  std::array<RefinerModeParams, 3> modes;
  double lambda = 2.0;

  const RefinerModeParams& mode(RefineMode m) const { return modes[static_cast<std::size_t>(m)]; }
};

/// A refiner that behaves like the base policy in every mode.
RefinerPolicy base_refiner(const PolicyParams& base, double lambda = 0.0);

RefinerPolicy fit_refiner(std::span<const RefinementExample> examples, const QuestionIndex& questions,
                          const PolicyParams& base, const EnvConfig& env, const RefinerConfig& cfg);

/// Next-step distribution of the refiner at a state of a refinement rollout.
std::vector<Outcome> refiner_distribution(const RefinerPolicy& refiner, const Question& q, const State& s,
                                          const Trace& draft, const std::vector<State>& draft_states,
                                          RefineMode mode, std::optional<std::size_t> e, const EnvConfig& env);

Trace refine(const RefinerPolicy& refiner, const Question& q, const Trace& draft, RefineMode mode,
             std::optional<std::size_t> e, const EnvConfig& env, Rng& rng);

/// Deterministic refinement: the stream is keyed by (question, mode).
Trace refine_greedy(const RefinerPolicy& refiner, const Question& q, const Trace& draft, RefineMode mode,
                    std::optional<std::size_t> e, const EnvConfig& env);

using Locator = std::function<std::optional<std::size_t>(const Question&, const Trace&)>;

Locator first_error_locator(Scorer scorer, double threshold = 0.5);
Locator oracle_locator(const EnvConfig& env);
/// E = i+1 for the highest-scoring prefix P_i, i in 1..L-1.
Locator value_locator(Scorer scorer);

struct RefineOutcome {
  std::string question_id;
  bool draft_correct = false;
  std::optional<std::size_t> error_index;
  bool refined = false;
  bool correct = false;
  bool copied = false;
  Trace trace;
};

struct RefinementEvalReport {
  std::string label;
  std::size_t drafts = 0;
  std::size_t incorrect = 0;
  double draft_accuracy = 0.0;
  double accuracy_all_drafts = 0.0;      // every draft refined
  double accuracy_incorrect_only = 0.0;  // only incorrect drafts refined
  double fix_rate = 0.0;                 // incorrect -> correct
  double break_rate = 0.0;               // correct -> incorrect
  double copy_rate = 0.0;                // refined traces identical to the draft
};

/// Greedy refinement of every draft. Local and value modes take E from
/// `locate`; a draft with no located error is returned unchanged.
std::vector<RefineOutcome> run_refinement(const RefinerPolicy& refiner, std::span<const Question> questions,
                                          std::span<const Trace> drafts, RefineMode mode, const Locator& locate,
                                          const EnvConfig& env, int workers = 1);

RefinementEvalReport summarize_refinement(std::string label, std::span<const RefineOutcome> outcomes);

struct Complementarity {
  std::size_t incorrect = 0;
  std::size_t global_only = 0;
  std::size_t local_only = 0;
  std::size_t both = 0;
  std::size_t neither = 0;
  double global_fix = 0.0;
  double local_fix = 0.0;
  double union_fix = 0.0;
};

/// Outcome matrix over incorrect drafts for two aligned outcome lists.
Complementarity complementarity(std::span<const RefineOutcome> global, std::span<const RefineOutcome> local);

}  // namespace stepwise
