#pragma once

#include <span>

#include "stepwise/env.hpp"
#include "stepwise/policy.hpp"

namespace stepwise {

class BudgetExceededError : public Error {
 public:
  using Error::Error;
};

/// Exact success probability of the student from the state reached by
/// `prefix`, by dynamic programming over the reachable states. Throws
/// BudgetExceededError when more than env.value_budget states are needed.
double v_pi_exact(const Question& q, std::span<const Step> prefix, const PolicyParams& policy,
                  const EnvConfig& env);

/// Closed form for chain tasks without cancellation: product of the
/// remaining per-op success probabilities (1 for a finished trace).
double chain_success_product(const Question& q, std::size_t depth, const PolicyParams& policy);

}  // namespace stepwise
