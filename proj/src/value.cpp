#include "stepwise/value.hpp"

#include <map>

namespace stepwise {

namespace {

class ValueDp {
 public:
  ValueDp(const Question& q, const PolicyParams& policy, const EnvConfig& env)
      : q_(q), policy_(policy), env_(env) {}

  double value(const State& s) {
    if (q_.family == Family::Countdown && s.reached) return 1.0;
    if (is_finished(q_, s)) return q_.family == Family::Chain && s.last == q_.answer ? 1.0 : 0.0;
    if (s.depth >= static_cast<std::size_t>(env_.max_steps)) return 0.0;

    Key key{s.depth, s.value, s.pool};
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    if (memo_.size() >= env_.value_budget)
      throw BudgetExceededError("v_pi_exact: more than " + std::to_string(env_.value_budget) +
                                " states for " + q_.id + "; use a smaller instance or raise env.value_budget");

    double v = 0.0;
    for (const auto& o : step_distribution(q_, s, policy_, env_)) {
      State next = s;
      advance(q_, next, o.step);
      v += o.prob * value(next);
    }
    memo_.emplace(std::move(key), v);
    return v;
  }

 private:
  using Key = std::tuple<std::size_t, std::int64_t, std::vector<std::int64_t>>;
  const Question& q_;
  const PolicyParams& policy_;
  const EnvConfig& env_;
  std::map<Key, double> memo_;
};

}  // namespace

double v_pi_exact(const Question& q, std::span<const Step> prefix, const PolicyParams& policy,
                  const EnvConfig& env) {
  const State s = replay(q, prefix, env);
  ValueDp dp(q, policy, env);
  return dp.value(s);
}

double chain_success_product(const Question& q, std::size_t depth, const PolicyParams& policy) {
  // Same association order as the DP: innermost factor is the last op.
  double v = 1.0;
  const auto& ops = q.chain->ops;
  for (std::size_t i = ops.size(); i > depth; --i) v = policy.skill(ops[i - 1].kind) * v;
  return v;
}

}  // namespace stepwise
