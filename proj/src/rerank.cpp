#include "stepwise/rerank.hpp"

#include <algorithm>

#include "stepwise/parallel.hpp"

namespace stepwise {

std::string_view to_string(RerankStrategy s) {
  switch (s) {
    case RerankStrategy::Final: return "final";
    case RerankStrategy::Mean: return "mean";
    case RerankStrategy::WeightedMean: return "weighted_mean";
    case RerankStrategy::Min: return "min";
    case RerankStrategy::Product: return "product";
    case RerankStrategy::PenultimateMean: return "penultimate_mean";
  }
  return "?";
}

RerankStrategy strategy_from_string(std::string_view s) {
  for (auto st : kAllStrategies)
    if (to_string(st) == s) return st;
  throw Error("unknown rerank strategy '" + std::string(s) + "'");
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Draft: return "draft";
    case Provenance::LocalRefinement: return "local_refinement";
    case Provenance::GlobalRefinement: return "global_refinement";
    case Provenance::Sample: return "sample";
  }
  return "?";
}

double aggregate_scores(std::span<const double> scores, RerankStrategy strategy, double s0,
                        const ScoreOptions& opts) {
  if (scores.empty()) throw Error("aggregate_scores: empty score vector");
  const auto n = scores.size();
  const auto len = static_cast<double>(n);
  switch (strategy) {
    case RerankStrategy::Final: return scores.back();
    case RerankStrategy::Mean: {
      double s = 0.0;
      for (double x : scores) s += x;
      return s / len;
    }
    case RerankStrategy::WeightedMean: {
      double s = 0.0;
      for (std::size_t i = 1; i <= n; ++i) {
        const double li = static_cast<double>(n) - static_cast<double>(i);
        if (opts.weighted_mean_literal) {
          if (li - 1.0 == 0.0) continue;
          s += scores[i - 1] / (li - 1.0);
        } else {
          s += scores[i - 1] / (li + 1.0);
        }
      }
      return s;
    }
    case RerankStrategy::Min: return *std::min_element(scores.begin(), scores.end());
    case RerankStrategy::Product: {
      double s = 1.0;
      for (double x : scores) s *= x;
      return s;
    }
    case RerankStrategy::PenultimateMean: {
      const double prev = n >= 2 ? scores[n - 2] : s0;
      return (prev - scores[n - 1]) / 2.0;
    }
  }
  return 0.0;
}

ScoredCandidate score_trace(const Scorer& scorer, const Question& q, const Trace& trace, RerankStrategy strategy,
                            Provenance provenance, std::size_t sample_index, const ScoreOptions& opts) {
  if (trace.steps.empty()) throw Error("score_trace: trace for " + q.id + " has no steps");
  ScoredCandidate c;
  c.trace = trace;
  const std::span<const Step> steps(trace.steps);
  c.s0 = scorer(q, steps.first(0));
  for (std::size_t i = 1; i <= steps.size(); ++i) c.per_step_scores.push_back(scorer(q, steps.first(i)));
  c.strategy = strategy;
  c.aggregate = aggregate_scores(c.per_step_scores, strategy, c.s0, opts);
  c.provenance = provenance;
  c.sample_index = sample_index;
  return c;
}

std::size_t rerank(std::span<const ScoredCandidate> candidates) {
  if (candidates.empty()) throw Error("rerank: no candidates");
  std::size_t best = 0;
  auto before = [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.aggregate != b.aggregate) return a.aggregate > b.aggregate;
    if (a.provenance != b.provenance) return a.provenance < b.provenance;
    return a.sample_index < b.sample_index;
  };
  for (std::size_t i = 1; i < candidates.size(); ++i)
    if (before(candidates[i], candidates[best])) best = i;
  return best;
}

std::size_t oracle_choice(const Question& q, std::span<const ScoredCandidate> candidates) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!is_correct(q, candidates[i].trace)) continue;
    const auto& c = candidates[i];
    if (!best || c.provenance < candidates[*best].provenance ||
        (c.provenance == candidates[*best].provenance && c.sample_index < candidates[*best].sample_index))
      best = i;
  }
  if (best) return *best;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (candidates[i].provenance == Provenance::Draft) return i;
  return 0;
}

TripleSelection select_among_three(const Scorer& scorer, const Question& q, const Trace& draft,
                                   const Trace& global_ref, const Trace& local_ref, RerankStrategy strategy,
                                   const ScoreOptions& opts) {
  TripleSelection sel;
  sel.scored.push_back(score_trace(scorer, q, draft, strategy, Provenance::Draft, 0, opts));
  sel.scored.push_back(score_trace(scorer, q, global_ref, strategy, Provenance::GlobalRefinement, 0, opts));
  sel.scored.push_back(score_trace(scorer, q, local_ref, strategy, Provenance::LocalRefinement, 0, opts));
  sel.chosen = rerank(sel.scored);
  sel.oracle = oracle_choice(q, sel.scored);
  return sel;
}

RerankEval rerank_eval(std::span<const Question> tasks, const PolicyParams& policy, const Scorer& scorer,
                       const EnvConfig& env, std::size_t k, std::span<const RerankStrategy> strategies,
                       std::uint64_t seed, const ScoreOptions& opts, int workers) {
  if (k == 0) throw Error("rerank_eval: K must be >= 1");
  RerankEval ev;
  ev.k = k;
  ev.questions = tasks.size();
  ev.choices.resize(tasks.size());
  ev.sample_correct.resize(tasks.size());
  ev.scored.resize(tasks.size());
  std::vector<char> maj_ok(tasks.size(), 0);
  const RolloutConfig rc{k, 1.0, 0, derive_seed({stream::kRerank, seed})};

  parallel_for(tasks.size(), workers, [&](std::size_t i) {
    const auto& q = tasks[i];
    const auto samples = sample_rollouts(q, policy, env, rc);
    auto& ok = ev.sample_correct[i];
    for (const auto& t : samples) ok.push_back(is_correct(q, t) ? 1 : 0);

    // Per-step scores are strategy independent; aggregate once per strategy.
    auto& scored = ev.scored[i];
    for (std::size_t j = 0; j < samples.size(); ++j) {
      if (samples[j].steps.empty()) continue;
      scored.push_back(score_trace(scorer, q, samples[j], RerankStrategy::Final, Provenance::Sample, j, opts));
    }
    for (auto st : strategies) {
      for (auto& c : scored) {
        c.strategy = st;
        c.aggregate = aggregate_scores(c.per_step_scores, st, c.s0, opts);
      }
      ev.choices[i].push_back(scored.empty() ? 0 : scored[rerank(scored)].sample_index);
    }

    std::vector<std::pair<std::int64_t, int>> votes;
    for (const auto& t : samples) {
      if (!t.is_complete) continue;
      auto it = std::find_if(votes.begin(), votes.end(), [&](auto& v) { return v.first == t.final_answer; });
      if (it == votes.end()) votes.emplace_back(t.final_answer, 1);
      else ++it->second;
    }
    if (!votes.empty()) {
      auto best = votes.begin();
      for (auto it = votes.begin(); it != votes.end(); ++it)
        if (it->second > best->second) best = it;
      maj_ok[i] = best->first == q.answer;
    }
  });

  const auto n = static_cast<double>(std::max<std::size_t>(1, tasks.size()));
  for (std::size_t s = 0; s < strategies.size(); ++s) {
    double hits = 0.0;
    for (std::size_t i = 0; i < tasks.size(); ++i) hits += ev.sample_correct[i][ev.choices[i][s]];
    ev.strategies.push_back({strategies[s], hits / n});
  }
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& ok = ev.sample_correct[i];
    ev.best_of_n += std::any_of(ok.begin(), ok.end(), [](char c) { return c != 0; });
    ev.first_sample += ok[0];
    ev.maj_k += maj_ok[i];
  }
  ev.best_of_n /= n;
  ev.first_sample /= n;
  ev.maj_k /= n;
  return ev;
}

}  // namespace stepwise
