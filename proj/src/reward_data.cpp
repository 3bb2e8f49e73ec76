#include "stepwise/reward_data.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "stepwise/parallel.hpp"

namespace stepwise {

namespace {

std::string trace_id(const std::string& qid, std::size_t k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%03zu", k);
  return qid + buf;
}

template <typename T>
void seeded_shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

}  // namespace

QuestionIndex index_questions(std::span<const Question> tasks) {
  QuestionIndex idx;
  for (const auto& q : tasks) idx.emplace(q.id, &q);
  return idx;
}

const Question& lookup(const QuestionIndex& index, const std::string& id) {
  auto it = index.find(id);
  if (it == index.end()) throw Error("unknown question id '" + id + "'");
  return *it->second;
}

std::vector<OrmSample> orm_samples_from(std::span<const SourceTrace> traces) {
  std::vector<OrmSample> out;
  for (const auto& st : traces) {
    for (std::size_t d = 0; d <= st.trace.steps.size(); ++d) {
      OrmSample s;
      s.question_id = st.trace.question_id;
      s.source_trace_id = st.id;
      s.prefix.assign(st.trace.steps.begin(), st.trace.steps.begin() + static_cast<std::ptrdiff_t>(d));
      s.label = st.correct ? 1 : 0;
      out.push_back(std::move(s));
    }
  }
  return out;
}

OrmDataset build_orm_dataset(std::span<const Question> tasks, const PolicyParams& policy,
                             const EnvConfig& env, std::size_t k, std::uint64_t seed, int workers) {
  if (k == 0) throw Error("build_orm_dataset: K must be >= 1");
  std::vector<std::vector<SourceTrace>> per_q(tasks.size());
  const RolloutConfig rc{k, 1.0, 0, derive_seed({stream::kSample, seed})};
  parallel_for(tasks.size(), workers, [&](std::size_t i) {
    const auto& q = tasks[i];
    auto traces = sample_rollouts(q, policy, env, rc);
    for (std::size_t j = 0; j < traces.size(); ++j) {
      const bool ok = is_correct(q, traces[j]);
      per_q[i].push_back({trace_id(q.id, j), std::move(traces[j]), ok});
    }
  });
  OrmDataset ds;
  for (auto& v : per_q)
    for (auto& t : v) ds.traces.push_back(std::move(t));
  ds.samples = orm_samples_from(ds.traces);
  return ds;
}

BalancedOrm build_balanced_orm_dataset(const OrmDataset& orm, std::uint64_t seed) {
  BalancedOrm out;
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < orm.traces.size(); ++i) {
    const auto& qid = orm.traces[i].trace.question_id;
    auto [it, inserted] = groups.try_emplace(qid);
    if (inserted) order.push_back(qid);
    (orm.traces[i].correct ? it->second.first : it->second.second).push_back(i);
  }
  std::vector<char> keep(orm.traces.size(), 0);
  for (const auto& qid : order) {
    auto [pos, neg] = groups[qid];
    if (pos.empty() || neg.empty()) {
      ++out.dropped_questions;
      continue;
    }
    const auto n = std::min(pos.size(), neg.size());
    Rng rng{stream::kBalance, seed, fnv1a(qid)};
    auto& major = pos.size() > neg.size() ? pos : neg;
    seeded_shuffle(major, rng);
    major.resize(n);
    for (auto i : pos) keep[i] = 1;
    for (auto i : neg) keep[i] = 1;
  }
  for (std::size_t i = 0; i < orm.traces.size(); ++i)
    if (keep[i]) out.data.traces.push_back(orm.traces[i]);
  out.data.samples = orm_samples_from(out.data.traces);
  if (out.data.traces.empty())
    out.warnings.push_back("balanced ORM: every question has a single label class; dataset is empty");
  return out;
}

bool consistency_check(const Question& q, std::span<const Step> prefix, const Trace& verifier) {
  if (q.family == Family::Chain) return true;
  struct Item {
    std::int64_t value;
    std::size_t origin;  // 0 = given number, k = produced by step k
  };
  std::vector<Item> pool;
  for (auto v : q.countdown->numbers) pool.push_back({v, 0});
  auto take = [&](std::int64_t v) {
    auto best = pool.end();
    for (auto it = pool.begin(); it != pool.end(); ++it)
      if (it->value == v && (best == pool.end() || it->origin > best->origin)) best = it;
    if (best != pool.end()) pool.erase(best);
  };
  for (std::size_t k = 0; k < verifier.steps.size(); ++k) {
    const auto& st = verifier.steps[k];
    take(st.a);
    take(st.b);
    pool.push_back({st.result, k + 1});
  }
  for (const auto& it : pool)
    if (it.origin >= 1 && it.origin <= prefix.size() && it.value != q.countdown->target) return false;
  return true;
}

std::vector<SormSample> build_sorm_dataset(std::span<const Question> tasks, std::span<const SourceTrace> traces,
                                           const PolicyParams& policy, const EnvConfig& env,
                                           std::size_t k_verify, std::uint64_t seed, int workers) {
  if (k_verify == 0) throw Error("build_sorm_dataset: K_verify must be >= 1");
  const auto qidx = index_questions(tasks);
  std::vector<std::vector<SormSample>> per_trace(traces.size());
  parallel_for(traces.size(), workers, [&](std::size_t t) {
    const auto& src = traces[t];
    const auto& q = lookup(qidx, src.trace.question_id);
    const auto& steps = src.trace.steps;
    const auto tkey = fnv1a(src.id);
    for (std::size_t d = 0; d <= steps.size(); ++d) {
      SormSample s;
      s.question_id = q.id;
      s.source_trace_id = src.id;
      s.prefix.assign(steps.begin(), steps.begin() + static_cast<std::ptrdiff_t>(d));
      for (std::size_t j = 0; j < k_verify; ++j) {
        Rng rng{stream::kVerify, seed, tkey, d, j};
        Verifier v;
        v.trace = continue_rollout(q, s.prefix, policy, env, rng);
        v.label = is_correct(q, v.trace) ? 1 : 0;
        v.consistent = consistency_check(q, s.prefix, v.trace);
        s.raw_label = std::max(s.raw_label, v.label);
        s.verifiers.push_back(std::move(v));
      }
      s.label = s.raw_label;
      per_trace[t].push_back(std::move(s));
    }
  });
  std::vector<SormSample> out;
  for (auto& v : per_trace)
    for (auto& s : v) out.push_back(std::move(s));
  return out;
}

PostprocessResult postprocess_sorm(std::vector<SormSample> samples, const QuestionIndex& questions,
                                   const PostprocessOptions& opts, std::uint64_t seed) {
  PostprocessResult res;
  auto& st = res.stats;
  for (const auto& s : samples) st.total_rollouts += s.verifiers.size();

  if (opts.consistency) {
    for (auto& s : samples) {
      const auto& q = lookup(questions, s.question_id);
      std::erase_if(s.verifiers, [&](const Verifier& v) {
        const bool bad = !consistency_check(q, s.prefix, v.trace);
        st.discarded_rollouts += bad;
        return bad;
      });
      int label = 0;
      for (const auto& v : s.verifiers) label = std::max(label, v.label);
      if (label != s.label) ++st.relabeled_by_consistency;
      s.label = label;
    }
  }

  if (opts.propagate) {
    std::map<std::string, std::vector<std::size_t>> by_trace;
    for (std::size_t i = 0; i < samples.size(); ++i) by_trace[samples[i].source_trace_id].push_back(i);
    for (auto& [_, idx] : by_trace) {
      std::sort(idx.begin(), idx.end(),
                [&](std::size_t a, std::size_t b) { return samples[a].depth() < samples[b].depth(); });
      int seen_positive = 0;
      for (auto it = idx.rbegin(); it != idx.rend(); ++it) {
        auto& s = samples[*it];
        if (seen_positive && s.label == 0) {
          s.label = 1;
          ++st.propagated;
        }
        seen_positive = seen_positive || s.label;
      }
    }
  }

  if (opts.balance) {
    std::map<std::size_t, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> strata;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto& cell = strata[samples[i].depth()];
      (samples[i].label ? cell.first : cell.second).push_back(i);
    }
    std::vector<char> keep(samples.size(), 0);
    for (auto& [depth, cell] : strata) {
      auto& [pos, neg] = cell;
      const auto n = std::min(pos.size(), neg.size());
      if (n == 0) {
        st.dropped_depths.push_back(depth);
        st.warnings.push_back("SORM balancing emptied depth " + std::to_string(depth) + " (" +
                              std::to_string(pos.size() + neg.size()) + " samples, one class); stratum dropped");
        st.removed_by_balance += pos.size() + neg.size();
        continue;
      }
      Rng rng{stream::kBalance, seed, static_cast<std::uint64_t>(depth)};
      auto& major = pos.size() > neg.size() ? pos : neg;
      seeded_shuffle(major, rng);
      st.removed_by_balance += major.size() - n;
      major.resize(n);
      for (auto i : pos) keep[i] = 1;
      for (auto i : neg) keep[i] = 1;
    }
    std::vector<SormSample> kept;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (keep[i]) kept.push_back(std::move(samples[i]));
    samples = std::move(kept);
  }
  res.samples = std::move(samples);
  return res;
}

LabelAgreement sorm_label_agreement(std::span<const SormSample> samples, const QuestionIndex& questions,
                                    const EnvConfig& env) {
  LabelAgreement a;
  std::size_t agree = 0, fp = 0, fn = 0;
  for (const auto& s : samples) {
    const int truth = v_star(lookup(questions, s.question_id), s.prefix, env);
    if (truth == s.label) ++agree;
    else if (s.label == 1) ++fp;
    else ++fn;
  }
  a.samples = samples.size();
  if (!samples.empty()) {
    const auto n = static_cast<double>(samples.size());
    a.agreement = static_cast<double>(agree) / n;
    a.false_positive_rate = static_cast<double>(fp) / n;
    a.false_negative_rate = static_cast<double>(fn) / n;
  }
  return a;
}

std::vector<TracePair> build_contrastive_pairs(const OrmDataset& orm, std::uint64_t seed) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < orm.traces.size(); ++i) {
    const auto& t = orm.traces[i];
    if (!t.trace.is_complete) continue;
    auto [it, inserted] = groups.try_emplace(t.trace.question_id);
    if (inserted) order.push_back(t.trace.question_id);
    (t.correct ? it->second.first : it->second.second).push_back(i);
  }
  std::vector<TracePair> out;
  for (const auto& qid : order) {
    auto [pos, neg] = groups[qid];
    Rng rng{stream::kPair, seed, fnv1a(qid)};
    seeded_shuffle(pos, rng);
    seeded_shuffle(neg, rng);
    const auto n = std::min(pos.size(), neg.size());
    for (std::size_t i = 0; i < n; ++i) out.push_back({pos[i], neg[i]});
  }
  return out;
}

std::vector<SormSample> with_verifier_budget(std::span<const SormSample> samples, std::size_t k) {
  std::vector<SormSample> out(samples.begin(), samples.end());
  for (auto& s : out) {
    if (s.verifiers.size() > k) s.verifiers.resize(k);
    s.raw_label = 0;
    for (const auto& v : s.verifiers) s.raw_label = std::max(s.raw_label, v.label);
    s.label = s.raw_label;
  }
  return out;
}

}  // namespace stepwise
