#include "stepwise/policy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "stepwise/parallel.hpp"

namespace stepwise {

namespace {

std::int64_t intended_chain_result(OpKind kind, std::int64_t lhs, std::int64_t operand) {
  if (auto r = exact_result(kind, lhs, operand)) return *r;
  // Off-path division that does not divide evenly: the student truncates.
  if (kind == OpKind::Div && operand != 0) return lhs / operand;
  return lhs;
}

std::vector<double> normalized_error_weights(const PolicyParams& p, const EnvConfig& env) {
  const auto n = env.perturbation_support.size();
  std::vector<double> w = p.error_weights.empty() ? std::vector<double>(n, 1.0) : p.error_weights;
  double total = 0.0;
  for (double x : w) total += x;
  for (double& x : w) x /= total;
  return w;
}

void apply_temperature(std::vector<Outcome>& dist, double temperature) {
  if (temperature <= 0.0 || temperature == 1.0) return;
  double total = 0.0;
  for (auto& o : dist) {
    o.prob = std::pow(o.prob, 1.0 / temperature);
    total += o.prob;
  }
  for (auto& o : dist) o.prob /= total;
}

std::vector<Outcome> chain_distribution(const Question& q, const State& s, const PolicyParams& policy,
                                        const EnvConfig& env) {
  const auto& spec = *q.chain;
  const auto& op = spec.ops[s.depth];
  const std::int64_t intended = intended_chain_result(op.kind, s.value, op.operand);
  const double p = policy.skill(op.kind);
  const auto w = normalized_error_weights(policy, env);

  std::vector<Outcome> dist;
  dist.reserve(1 + w.size());
  if (p > 0.0) dist.push_back({Step{s.value, op.kind, op.operand, intended}, p});
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double m = (1.0 - p) * w[j];
    if (m > 0.0)
      dist.push_back({Step{s.value, op.kind, op.operand, intended + env.perturbation_support[j]}, m});
  }

  if (!env.allow_cancellation && s.value != chain_canonical_value(spec, s.depth)) {
    const std::int64_t canon_next = chain_canonical_value(spec, s.depth + 1);
    const auto before = dist.size();
    std::erase_if(dist, [&](const Outcome& o) { return o.step.result == canon_next; });
    if (dist.size() != before) {
      if (dist.empty()) {
        for (std::size_t j = 0; j < w.size(); ++j) {
          const auto r = intended + env.perturbation_support[j];
          if (r != canon_next && w[j] > 0.0)
            dist.push_back({Step{s.value, op.kind, op.operand, r}, w[j]});
        }
      }
      double total = 0.0;
      for (const auto& o : dist) total += o.prob;
      for (auto& o : dist) o.prob /= total;
    }
  }
  return dist;
}

std::vector<Outcome> countdown_distribution(const Question& q, const State& s,
                                            const PolicyParams& policy, double temperature) {
  const auto actions = countdown_actions(s.pool);
  std::vector<Outcome> dist;
  dist.reserve(actions.size());
  const double tau = policy.countdown_temperature * (temperature > 0.0 ? temperature : 1.0);
  double max_logit = -INFINITY;
  std::vector<double> logits;
  logits.reserve(actions.size());
  for (const auto& a : actions) {
    const auto f = countdown_action_feature(a, s.pool, q.countdown->target);
    const double l = std::log(policy.countdown_weights[f]) / tau;
    logits.push_back(l);
    max_logit = std::max(max_logit, l);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const double e = std::exp(logits[i] - max_logit);
    dist.push_back({actions[i], e});
    total += e;
  }
  for (auto& o : dist) o.prob /= total;
  return dist;
}

}  // namespace

std::size_t countdown_action_feature(const Step& action, std::span<const std::int64_t> pool,
                                     std::int64_t target) {
  const auto op = static_cast<std::size_t>(action.op);
  const std::size_t rel = action.result == target ? 0 : (action.result < target ? 1 : 2);
  std::vector<std::int64_t> sorted(pool.begin(), pool.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  std::size_t pattern = 2;
  if (!sorted.empty() && action.a == sorted[0]) {
    pattern = (sorted.size() >= 2 && action.b == sorted[1]) ? 0 : 1;
  }
  return op * 9 + rel * 3 + pattern;
}

void PolicyParams::validate(const EnvConfig& env) const {
  for (double p : chain_skill)
    if (!(p > 0.0 && p <= 1.0)) throw Error("policy: chain skill must lie in (0, 1]");
  if (!error_weights.empty()) {
    if (error_weights.size() != env.perturbation_support.size())
      throw Error("policy: error_weights must align with env.perturbation_support");
    double total = 0.0;
    for (double w : error_weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw Error("policy: error weights must be finite and >= 0");
      total += w;
    }
    if (total <= 0.0) throw Error("policy: error weights must not all be zero");
  }
  if (countdown_weights.size() != kCountdownFeatures)
    throw Error("policy: countdown_weights must have " + std::to_string(kCountdownFeatures) + " entries");
  for (double w : countdown_weights)
    if (!(w > 0.0) || !std::isfinite(w)) throw Error("policy: countdown weights must be finite and > 0");
  if (!(countdown_temperature > 0.0)) throw Error("policy: countdown temperature must be > 0");
}

std::vector<Outcome> step_distribution(const Question& q, const State& s, const PolicyParams& policy,
                                       const EnvConfig& env, double temperature) {
  if (q.family == Family::Chain) {
    auto dist = chain_distribution(q, s, policy, env);
    apply_temperature(dist, temperature);
    return dist;
  }
  return countdown_distribution(q, s, policy, temperature);
}

std::size_t draw(std::span<const Outcome> dist, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    acc += dist[i].prob;
    if (u < acc) return i;
  }
  return dist.size() - 1;
}

Trace rollout_with(const Question& q, std::vector<Step> prefix, const StepDistributionFn& dist,
                   Rng& rng, const EnvConfig& env) {
  State s = replay(q, prefix, env);
  while (!is_finished(q, s) && s.depth < static_cast<std::size_t>(env.max_steps)) {
    const auto d = dist(s);
    const Step step = d[draw(d, rng)].step;
    advance(q, s, step);
    prefix.push_back(step);
  }
  Trace t;
  t.question_id = q.id;
  t.steps = std::move(prefix);
  t.final_answer = s.last;
  t.is_complete = is_finished(q, s);
  return t;
}

Trace sample_rollout(const Question& q, const PolicyParams& policy, const EnvConfig& env, Rng& rng,
                     double temperature) {
  auto fn = [&](const State& s) { return step_distribution(q, s, policy, env, temperature); };
  return rollout_with(q, {}, fn, rng, env);
}

Rng greedy_stream(const Question& q) { return Rng{stream::kGreedy, fnv1a(q.id)}; }

Trace greedy_rollout(const Question& q, const PolicyParams& policy, const EnvConfig& env) {
  Rng rng = greedy_stream(q);
  return sample_rollout(q, policy, env, rng, 1.0);
}

std::vector<Trace> sample_rollouts(const Question& q, const PolicyParams& policy, const EnvConfig& env,
                                   const RolloutConfig& cfg) {
  EnvConfig e = env;
  if (cfg.max_steps > 0) e.max_steps = std::min(e.max_steps, cfg.max_steps);
  std::vector<Trace> out;
  out.reserve(cfg.k_samples);
  if (cfg.k_samples == 0) return out;
  out.push_back(greedy_rollout(q, policy, e));
  for (std::size_t k = 1; k < cfg.k_samples; ++k) {
    if (cfg.temperature <= 0.0) {
      out.push_back(out.front());
      continue;
    }
    Rng rng{stream::kSample, cfg.seed, fnv1a(q.id), k};
    out.push_back(sample_rollout(q, policy, e, rng, cfg.temperature));
  }
  return out;
}

Trace continue_rollout(const Question& q, std::span<const Step> prefix, const PolicyParams& policy,
                       const EnvConfig& env, Rng& rng) {
  auto fn = [&](const State& s) { return step_distribution(q, s, policy, env, 1.0); };
  return rollout_with(q, std::vector<Step>(prefix.begin(), prefix.end()), fn, rng, env);
}

void PolicyCounts::add(const Question& q, const Trace& trace, const EnvConfig& env, std::size_t from) {
  if (q.family == Family::Chain) {
    if (error_counts.size() != env.perturbation_support.size())
      error_counts.assign(env.perturbation_support.size(), 0.0);
    for (std::size_t i = from; i < trace.steps.size(); ++i) {
      const auto& st = trace.steps[i];
      const auto k = static_cast<std::size_t>(st.op);
      const auto intended = intended_chain_result(st.op, st.a, st.b);
      const auto& sup = env.perturbation_support;
      if (!env.allow_cancellation && st.a != chain_canonical_value(*q.chain, i)) {
        // Off-path states where the no-return rule reshapes the distribution
        // say nothing about the skill itself.
        const auto canon_next = chain_canonical_value(*q.chain, i + 1);
        if (intended == canon_next ||
            std::any_of(sup.begin(), sup.end(), [&](std::int64_t d) { return intended + d == canon_next; }))
          continue;
      }
      attempts[k] += 1.0;
      if (st.result == intended) {
        successes[k] += 1.0;
      } else {
        auto it = std::find(sup.begin(), sup.end(), st.result - intended);
        if (it != sup.end()) error_counts[static_cast<std::size_t>(it - sup.begin())] += 1.0;
      }
    }
    return;
  }
  State s = initial_state(q);
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& st = trace.steps[i];
    if (i >= from) {
      const auto acts = countdown_actions(s.pool);
      bool matched = false;
      for (const auto& a : acts) {
        offered[countdown_action_feature(a, s.pool, q.countdown->target)] += 1.0;
        matched = matched || a == st;
      }
      if (matched) chosen[countdown_action_feature(st, s.pool, q.countdown->target)] += 1.0;
    }
    advance(q, s, st);
  }
}

PolicyParams fit_policy(const PolicyCounts& counts, const PolicyParams& base, const EnvConfig& env,
                        double alpha) {
  PolicyParams out = base;
  out.version = base.version + 1;
  for (std::size_t k = 0; k < 4; ++k) {
    if (counts.attempts[k] > 0.0)
      out.chain_skill[k] = (counts.successes[k] + alpha * base.chain_skill[k]) / (counts.attempts[k] + alpha);
  }
  double errors = 0.0;
  for (double c : counts.error_counts) errors += c;
  if (errors > 0.0) {
    const auto n = env.perturbation_support.size();
    out.error_weights.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j)
      out.error_weights[j] = (counts.error_counts[j] + alpha) / (errors + alpha * static_cast<double>(n));
  }
  for (std::size_t f = 0; f < kCountdownFeatures; ++f)
    out.countdown_weights[f] = (counts.chosen[f] + alpha) / (counts.offered[f] + alpha);
  return out;
}

PolicyMetrics eval_policy(std::span<const Question> tasks, const PolicyParams& policy,
                          const EnvConfig& env, std::size_t k, std::uint64_t seed, int workers) {
  if (k == 0) throw Error("eval_policy: K must be >= 1");
  struct Row {
    bool greedy = false, majority = false, any = false;
  };
  std::vector<Row> rows(tasks.size());
  RolloutConfig rc{k, 1.0, 0, derive_seed({stream::kEval, seed})};
  parallel_for(tasks.size(), workers, [&](std::size_t i) {
    const auto& q = tasks[i];
    const auto traces = sample_rollouts(q, policy, env, rc);
    Row r;
    r.greedy = is_correct(q, traces.front());
    std::vector<std::pair<std::int64_t, int>> votes;  // insertion ordered
    for (const auto& t : traces) {
      r.any = r.any || is_correct(q, t);
      if (!t.is_complete) continue;
      auto it = std::find_if(votes.begin(), votes.end(), [&](auto& v) { return v.first == t.final_answer; });
      if (it == votes.end())
        votes.emplace_back(t.final_answer, 1);
      else
        ++it->second;
    }
    if (!votes.empty()) {
      auto best = votes.begin();
      for (auto it = votes.begin(); it != votes.end(); ++it)
        if (it->second > best->second) best = it;
      const std::int64_t want = q.family == Family::Chain ? q.answer : q.countdown->target;
      r.majority = best->first == want;
    }
    rows[i] = r;
  });
  PolicyMetrics m;
  m.k = k;
  m.questions = tasks.size();
  for (const auto& r : rows) {
    m.maj1 += r.greedy;
    m.majk += r.majority;
    m.passk += r.any;
  }
  if (!tasks.empty()) {
    const auto n = static_cast<double>(tasks.size());
    m.maj1 /= n;
    m.majk /= n;
    m.passk /= n;
  }
  return m;
}

EIResult expert_iteration(std::span<const Question> tasks, const PolicyParams& initial,
                          const EIConfig& cfg, const EnvConfig& env,
                          std::span<const Question> eval_tasks, int workers) {
  if (cfg.k == 0) throw EIError("expert_iteration: K must be >= 1");
  if (tasks.empty()) throw EIError("expert_iteration: no tasks");
  const auto evals = eval_tasks.empty() ? tasks : eval_tasks;
  std::map<std::string, const Question*> by_id;
  for (const auto& q : tasks) by_id[q.id] = &q;

  EIResult result;
  result.policies.push_back(initial);
  std::set<std::pair<std::string, std::vector<Step>>> seen;
  auto keep = [&](const Trace& t) {
    if (seen.emplace(t.question_id, t.steps).second) result.dataset.push_back(t);
  };

  if (cfg.sft_fraction > 0.0) {
    for (const auto& q : tasks) {
      Rng r{stream::kSft, cfg.seed, fnv1a(q.id)};
      if (r.uniform() < cfg.sft_fraction) keep(canonical_trace(q, env));
    }
  }

  double prev_maj1 = eval_policy(evals, initial, env, 1, cfg.seed, workers).maj1;
  for (int round = 1; round <= cfg.max_rounds; ++round) {
    const auto& current = result.policies.back();
    RolloutConfig rc{cfg.k, 1.0, 0, derive_seed({stream::kSample, cfg.seed, static_cast<std::uint64_t>(round)})};
    std::vector<std::vector<Trace>> kept(tasks.size());
    parallel_for(tasks.size(), workers, [&](std::size_t i) {
      for (auto& t : sample_rollouts(tasks[i], current, env, rc))
        if (is_correct(tasks[i], t)) kept[i].push_back(std::move(t));
    });
    std::size_t n_correct = 0;
    for (auto& per_q : kept) {
      n_correct += per_q.size();
      for (auto& t : per_q) keep(t);
    }
    if (round == 1 && n_correct == 0 && result.dataset.empty())
      throw EIError("expert_iteration: no correct rollouts in round 1; task set too hard for the initial policy");

    PolicyCounts counts;
    for (const auto& t : result.dataset) counts.add(*by_id.at(t.question_id), t, env);
    PolicyParams next = fit_policy(counts, initial, env, cfg.alpha);
    next.version = current.version + 1;

    const auto m = eval_policy(evals, next, env, cfg.k, cfg.seed, workers);
    EIRoundReport rep;
    rep.round = round;
    rep.maj1 = m.maj1;
    rep.passk = m.passk;
    rep.dataset_size = result.dataset.size();
    rep.converged = (m.maj1 - prev_maj1) < cfg.epsilon;
    prev_maj1 = m.maj1;
    result.policies.push_back(std::move(next));
    result.rounds.push_back(rep);
    if (rep.converged) break;
  }
  return result;
}

}  // namespace stepwise
