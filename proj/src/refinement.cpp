#include "stepwise/refinement.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "stepwise/parallel.hpp"

namespace stepwise {

namespace {

constexpr std::uint64_t kModeKey[] = {0x676c6f, 0x6c6f63, 0x76616c};

bool same_state(const State& a, const State& b) {
  return a.depth == b.depth && a.value == b.value && a.pool == b.pool && a.reached == b.reached;
}

std::vector<State> states_along(const Question& q, const Trace& t) {
  std::vector<State> out;
  State s = initial_state(q);
  out.push_back(s);
  for (const auto& st : t.steps) {
    advance(q, s, st);
    out.push_back(s);
  }
  return out;
}

struct Grouped {
  const SourceTrace* source = nullptr;
  std::vector<const SormSample*> by_depth;  // index = depth
};

std::vector<Grouped> group_sorm(std::span<const SormSample> sorm, std::span<const SourceTrace> traces) {
  std::map<std::string, std::size_t> pos;
  std::vector<Grouped> out(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    pos.emplace(traces[i].id, i);
    out[i].source = &traces[i];
    out[i].by_depth.assign(traces[i].trace.steps.size() + 1, nullptr);
  }
  for (const auto& s : sorm) {
    auto it = pos.find(s.source_trace_id);
    if (it == pos.end()) continue;
    auto& g = out[it->second];
    if (s.depth() < g.by_depth.size()) g.by_depth[s.depth()] = &s;
  }
  return out;
}

bool complete_group(const Grouped& g) {
  return std::all_of(g.by_depth.begin(), g.by_depth.end(), [](auto* p) { return p != nullptr; });
}

}  // namespace

std::string_view to_string(RefineMode m) {
  switch (m) {
    case RefineMode::Global: return "global";
    case RefineMode::Local: return "local";
    case RefineMode::Value: return "value";
  }
  return "?";
}

RefineMode refine_mode_from_string(std::string_view s) {
  if (s == "global") return RefineMode::Global;
  if (s == "local") return RefineMode::Local;
  if (s == "value") return RefineMode::Value;
  throw Error("unknown refinement mode '" + std::string(s) + "'");
}

PairBuild build_global_pairs(const OrmDataset& orm, std::uint64_t seed) {
  PairBuild out;
  std::map<std::string, std::vector<std::size_t>> correct;
  for (std::size_t i = 0; i < orm.traces.size(); ++i)
    if (orm.traces[i].correct) correct[orm.traces[i].trace.question_id].push_back(i);
  for (const auto& src : orm.traces) {
    if (src.correct) continue;
    ++out.candidates;
    auto it = correct.find(src.trace.question_id);
    if (it == correct.end()) {
      ++out.skipped;
      continue;
    }
    Rng rng{stream::kPair, seed, fnv1a(src.id), kModeKey[0]};
    const auto& target = orm.traces[it->second[rng.index(it->second.size())]];
    out.examples.push_back({src.trace.question_id, src.id, src.trace, std::nullopt, target.trace, RefineMode::Global});
  }
  return out;
}

PairBuild build_local_pairs(std::span<const SormSample> sorm, std::span<const SourceTrace> traces,
                            std::uint64_t seed) {
  PairBuild out;
  for (const auto& g : group_sorm(sorm, traces)) {
    if (g.source->correct || !complete_group(g)) continue;
    ++out.candidates;
    std::size_t i = 0;
    while (i < g.by_depth.size() && g.by_depth[i]->label == 1) ++i;
    if (i == 0 || i == g.by_depth.size()) {
      ++out.skipped;
      continue;
    }
    std::vector<const Verifier*> eligible;
    for (const auto& v : g.by_depth[i - 1]->verifiers)
      if (v.label == 1) eligible.push_back(&v);
    if (eligible.empty()) {
      ++out.skipped;
      continue;
    }
    Rng rng{stream::kPair, seed, fnv1a(g.source->id), kModeKey[1]};
    const auto* v = eligible[rng.index(eligible.size())];
    out.examples.push_back({g.source->trace.question_id, g.source->id, g.source->trace, i, v->trace,
                            RefineMode::Local});
  }
  return out;
}

PairBuild build_value_pairs(std::span<const SormSample> sorm, std::span<const SourceTrace> traces,
                            std::uint64_t seed) {
  PairBuild out;
  for (const auto& g : group_sorm(sorm, traces)) {
    if (g.source->correct || !complete_group(g)) continue;
    ++out.candidates;
    const auto& draft = g.source->trace;
    const std::size_t len = draft.steps.size();
    std::size_t best = 0;
    int best_count = 0;
    for (std::size_t i = 1; i < len; ++i) {
      int c = 0;
      for (const auto& v : g.by_depth[i]->verifiers) c += v.label;
      if (c > best_count) {
        best_count = c;
        best = i;
      }
    }
    if (best_count == 0) {
      ++out.skipped;
      continue;
    }
    std::vector<const Verifier*> eligible;
    for (const auto& v : g.by_depth[best]->verifiers)
      if (v.label == 1 && v.trace.steps.size() > best && v.trace.steps[best] != draft.steps[best])
        eligible.push_back(&v);
    if (eligible.empty()) {
      ++out.skipped;
      continue;
    }
    Rng rng{stream::kPair, seed, fnv1a(g.source->id), kModeKey[2]};
    const auto* v = eligible[rng.index(eligible.size())];
    out.examples.push_back({draft.question_id, g.source->id, draft, best + 1, v->trace, RefineMode::Value});
  }
  return out;
}

RefinerPolicy base_refiner(const PolicyParams& base, double lambda) {
  RefinerPolicy r;
  r.base = base;
  r.lambda = lambda;
  for (auto& m : r.modes) m.params = base;
  return r;
}

RefinerPolicy fit_refiner(std::span<const RefinementExample> examples, const QuestionIndex& questions,
                          const PolicyParams& base, const EnvConfig& env, const RefinerConfig& cfg) {
  RefinerPolicy r = base_refiner(base, cfg.lambda);
  for (std::size_t m = 0; m < 3; ++m) {
    const auto mode = static_cast<RefineMode>(m);
    PolicyCounts counts;
    double applicable = 0.0, copies = 0.0;
    std::size_t n = 0;
    for (const auto& ex : examples) {
      if (ex.mode != mode) continue;
      ++n;
      const auto& q = lookup(questions, ex.question_id);
      const std::size_t from = mode == RefineMode::Global ? 0 : ex.error_index.value_or(1) - 1;
      counts.add(q, ex.target, env, from);
      const auto ds = states_along(q, ex.draft);
      const auto ts = states_along(q, ex.target);
      if (mode == RefineMode::Global) continue;
      for (std::size_t k = from; k < ex.target.steps.size() && k < ex.draft.steps.size(); ++k) {
        if (!same_state(ds[k], ts[k])) continue;
        applicable += 1.0;
        copies += ex.target.steps[k] == ex.draft.steps[k] ? 1.0 : 0.0;
      }
    }
    auto& out = r.modes[m];
    out.examples = n;
    if (n == 0) continue;
    const PolicyParams mle = fit_policy(counts, base, env, cfg.alpha);
    PolicyParams p = base;
    p.version = base.version + 1;
    for (std::size_t k = 0; k < 4; ++k)
      if (counts.attempts[k] > 0.0)
        p.chain_skill[k] = base.chain_skill[k] + cfg.fit_rate * (mle.chain_skill[k] - base.chain_skill[k]);
    double errors = 0.0;
    for (double c : counts.error_counts) errors += c;
    if (errors > 0.0) {
      const auto sz = env.perturbation_support.size();
      std::vector<double> bw = base.error_weights.empty() ? std::vector<double>(sz, 1.0 / static_cast<double>(sz))
                                                          : base.error_weights;
      p.error_weights.resize(sz);
      for (std::size_t j = 0; j < sz; ++j)
        p.error_weights[j] = bw[j] + cfg.fit_rate * (mle.error_weights[j] - bw[j]);
    }
    for (std::size_t f = 0; f < kCountdownFeatures; ++f) {
      if (counts.offered[f] == 0.0) continue;
      const double lb = std::log(base.countdown_weights[f]);
      p.countdown_weights[f] = std::exp(lb + cfg.fit_rate * (std::log(mle.countdown_weights[f]) - lb));
    }
    out.params = std::move(p);
    out.copy_rate = applicable > 0.0 ? copies / applicable : 0.0;
  }
  return r;
}

std::vector<Outcome> refiner_distribution(const RefinerPolicy& refiner, const Question& q, const State& s,
                                          const Trace& draft, const std::vector<State>& draft_states,
                                          RefineMode mode, std::optional<std::size_t> e, const EnvConfig& env) {
  const auto& mp = refiner.mode(mode);
  auto dist = step_distribution(q, s, mp.params, env);
  const std::size_t k = s.depth;
  if (mode == RefineMode::Global || k >= draft.steps.size() || !same_state(s, draft_states[k])) return dist;

  const Step& prior = draft.steps[k];
  auto it = std::find_if(dist.begin(), dist.end(), [&](const Outcome& o) { return o.step == prior; });
  if (mp.copy_rate > 0.0) {
    for (auto& o : dist) o.prob *= 1.0 - mp.copy_rate;
    if (it == dist.end()) {
      dist.push_back({prior, 0.0});
      it = dist.end() - 1;
    }
    it->prob += mp.copy_rate;
  }
  if (mode != RefineMode::Global && e && k + 1 == *e && it != dist.end() && dist.size() > 1) {
    it->prob *= std::exp(-refiner.lambda);
    double total = 0.0;
    for (const auto& o : dist) total += o.prob;
    for (auto& o : dist) o.prob /= total;
  }
  return dist;
}

Trace refine(const RefinerPolicy& refiner, const Question& q, const Trace& draft, RefineMode mode,
             std::optional<std::size_t> e, const EnvConfig& env, Rng& rng) {
  std::vector<Step> prefix;
  if (mode != RefineMode::Global) {
    if (!e) throw Error("refine: " + std::string(to_string(mode)) + " refinement requires E");
    if (*e < 1 || *e > draft.steps.size())
      throw Error("refine: E=" + std::to_string(*e) + " outside 1.." + std::to_string(draft.steps.size()));
    prefix.assign(draft.steps.begin(), draft.steps.begin() + static_cast<std::ptrdiff_t>(*e - 1));
  }
  const auto draft_states = states_along(q, draft);
  auto fn = [&](const State& s) { return refiner_distribution(refiner, q, s, draft, draft_states, mode, e, env); };
  return rollout_with(q, std::move(prefix), fn, rng, env);
}

Trace refine_greedy(const RefinerPolicy& refiner, const Question& q, const Trace& draft, RefineMode mode,
                    std::optional<std::size_t> e, const EnvConfig& env) {
  Rng rng{stream::kRefine, fnv1a(q.id), kModeKey[static_cast<std::size_t>(mode)]};
  return refine(refiner, q, draft, mode, e, env, rng);
}

Locator first_error_locator(Scorer scorer, double threshold) {
  return [scorer = std::move(scorer), threshold](const Question& q, const Trace& t) {
    return first_error_index(scorer, q, t, threshold);
  };
}

Locator oracle_locator(const EnvConfig& env) {
  return [env](const Question& q, const Trace& t) { return first_invalid_step(q, t.steps, env); };
}

Locator value_locator(Scorer scorer) {
  return [scorer = std::move(scorer)](const Question& q, const Trace& t) -> std::optional<std::size_t> {
    const std::span<const Step> steps(t.steps);
    std::optional<std::size_t> best;
    double best_score = -1.0;
    for (std::size_t i = 1; i < steps.size(); ++i) {
      const double v = scorer(q, steps.first(i));
      if (v > best_score) {
        best_score = v;
        best = i + 1;
      }
    }
    return best;
  };
}

std::vector<RefineOutcome> run_refinement(const RefinerPolicy& refiner, std::span<const Question> questions,
                                          std::span<const Trace> drafts, RefineMode mode, const Locator& locate,
                                          const EnvConfig& env, int workers) {
  std::vector<RefineOutcome> out(drafts.size());
  parallel_for(drafts.size(), workers, [&](std::size_t i) {
    const auto& q = questions[i];
    const auto& d = drafts[i];
    RefineOutcome o;
    o.question_id = q.id;
    o.draft_correct = is_correct(q, d);
    if (mode == RefineMode::Global) {
      o.trace = refine_greedy(refiner, q, d, mode, std::nullopt, env);
      o.refined = true;
    } else {
      o.error_index = locate(q, d);
      if (o.error_index) {
        o.trace = refine_greedy(refiner, q, d, mode, o.error_index, env);
        o.refined = true;
      } else {
        o.trace = d;
      }
    }
    o.correct = is_correct(q, o.trace);
    o.copied = o.refined && o.trace.steps == d.steps;
    out[i] = std::move(o);
  });
  return out;
}

RefinementEvalReport summarize_refinement(std::string label, std::span<const RefineOutcome> outcomes) {
  RefinementEvalReport r;
  r.label = std::move(label);
  std::size_t draft_ok = 0, all_ok = 0, only_ok = 0, fixed = 0, broken = 0, copied = 0, refined = 0;
  for (const auto& o : outcomes) {
    ++r.drafts;
    draft_ok += o.draft_correct;
    all_ok += o.correct;
    copied += o.copied;
    refined += o.refined;
    if (o.draft_correct) {
      ++only_ok;
      broken += !o.correct;
    } else {
      ++r.incorrect;
      fixed += o.correct;
      only_ok += o.correct;
    }
  }
  auto frac = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  r.draft_accuracy = frac(draft_ok, r.drafts);
  r.accuracy_all_drafts = frac(all_ok, r.drafts);
  r.accuracy_incorrect_only = frac(only_ok, r.drafts);
  r.fix_rate = frac(fixed, r.incorrect);
  r.break_rate = frac(broken, draft_ok);
  r.copy_rate = frac(copied, refined);
  return r;
}

Complementarity complementarity(std::span<const RefineOutcome> global, std::span<const RefineOutcome> local) {
  if (global.size() != local.size()) throw Error("complementarity: outcome lists differ in length");
  Complementarity c;
  for (std::size_t i = 0; i < global.size(); ++i) {
    if (global[i].draft_correct) continue;
    ++c.incorrect;
    const bool g = global[i].correct, l = local[i].correct;
    if (g && l) ++c.both;
    else if (g) ++c.global_only;
    else if (l) ++c.local_only;
    else ++c.neither;
  }
  if (c.incorrect) {
    const auto n = static_cast<double>(c.incorrect);
    c.global_fix = static_cast<double>(c.global_only + c.both) / n;
    c.local_fix = static_cast<double>(c.local_only + c.both) / n;
    c.union_fix = static_cast<double>(c.global_only + c.local_only + c.both) / n;
  }
  return c;
}

}  // namespace stepwise
