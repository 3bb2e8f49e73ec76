#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "stepwise/types.hpp"

namespace stepwise {

class GenerationError : public Error {
 public:
  using Error::Error;
};

class IncompleteTraceError : public Error {
 public:
  using Error::Error;
};

/// Exact integer arithmetic. Division is defined only when it divides evenly;
/// overflow yields nullopt.
std::optional<std::int64_t> exact_result(OpKind op, std::int64_t a, std::int64_t b);

/// Arithmetic validity of a step in isolation.
bool arithmetic_ok(const Step& s);

/// Dynamics state after some number of steps. Chain uses `value`; countdown
/// uses the sorted `pool` of available numbers.
struct State {
  std::size_t depth = 0;
  std::int64_t value = 0;
  std::vector<std::int64_t> pool;
  bool reached = false;   // countdown: last result equals target
  std::int64_t last = 0;  // last produced result (or start value)

  friend bool operator==(const State&, const State&) = default;
};

State initial_state(const Question& q);

/// Applies a step without checks. Callers must have validated it.
void advance(const Question& q, State& s, const Step& step);

/// True when no further step is possible (chain: all ops consumed;
/// countdown: target produced or a single number left).
bool is_finished(const Question& q, const State& s);

/// Reason a step is malformed in state `s`, or nullopt when it is well formed.
std::optional<std::string> malformed_reason(const Question& q, const State& s, const Step& step,
                                            const EnvConfig& cfg);

/// Replays steps from the initial state. Throws Error if a step is malformed.
State replay(const Question& q, std::span<const Step> steps, const EnvConfig& cfg);

/// Canonical value after `depth` ops of a chain question.
std::int64_t chain_canonical_value(const ChainSpec& spec, std::size_t depth);

/// Countdown actions legal for the student: positive results only, operands
/// ordered a >= b, deduplicated by value, in a fixed order.
std::vector<Step> countdown_actions(std::span<const std::int64_t> pool);

/// Whether `target` can be produced from `pool` in at most `steps_left` valid
/// steps (exhaustive memoized search).
bool countdown_reachable(std::span<const std::int64_t> pool, std::int64_t target, int steps_left);

/// First solution found by the deterministic depth-first search.
std::optional<std::vector<Step>> countdown_solve(std::span<const std::int64_t> pool,
                                                 std::int64_t target, int steps_left);

std::vector<Question> generate_tasks(std::uint64_t seed, Family family, Difficulty difficulty,
                                     std::size_t count, const EnvConfig& cfg = {});

struct Rejection {
  std::string reason;
};

std::variant<Prefix, Rejection> apply_step(const Question& q, const Prefix& prefix, const Step& step,
                                           const EnvConfig& cfg = {});

/// Builds a Trace from steps, filling final_answer and is_complete.
Trace make_trace(const Question& q, std::vector<Step> steps, const EnvConfig& cfg = {});

Trace canonical_trace(const Question& q, const EnvConfig& cfg = {});

/// Final-answer correctness. Throws IncompleteTraceError on truncated traces.
bool check_final(const Question& q, const Trace& trace);

/// Correctness that treats truncated traces as wrong; used wherever labels are
/// assigned to sampled rollouts.
bool is_correct(const Question& q, const Trace& trace);

/// Optimal value of a prefix: 1 iff every step is valid and the correct
/// answer is still reachable.
int v_star(const Question& q, std::span<const Step> steps, const EnvConfig& cfg = {});

/// Index (1-based) of the first step whose prefix has v_star = 0, or nullopt.
std::optional<std::size_t> first_invalid_step(const Question& q, std::span<const Step> steps,
                                              const EnvConfig& cfg = {});

}  // namespace stepwise
