#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "stepwise/reward_eval.hpp"
#include "stepwise/value.hpp"

using namespace stepwise;

namespace {

Question chain_q(std::string id, std::int64_t start, std::vector<ChainOp> ops) {
  Question q;
  q.id = std::move(id);
  q.family = Family::Chain;
  q.chain = ChainSpec{start, std::move(ops)};
  q.answer = chain_canonical_value(*q.chain, q.chain->ops.size());
  return q;
}

Question countdown_q(std::vector<std::int64_t> nums, std::int64_t target) {
  Question q;
  q.id = "cd";
  q.family = Family::Countdown;
  std::sort(nums.begin(), nums.end());
  q.countdown = CountdownSpec{std::move(nums), target};
  q.answer = target;
  return q;
}

SourceTrace source(const Question& q, std::string id, bool correct, std::size_t len = 2) {
  SourceTrace s;
  s.id = std::move(id);
  s.trace.question_id = q.id;
  s.trace.steps.assign(len, Step{});
  s.trace.is_complete = true;
  s.correct = correct;
  return s;
}

SormSample sorm_sample(const std::string& qid, const std::string& trace, std::size_t depth, int label) {
  SormSample s;
  s.question_id = qid;
  s.source_trace_id = trace;
  s.prefix.assign(depth, Step{});
  s.label = s.raw_label = label;
  Verifier v;
  v.label = label;
  s.verifiers.push_back(v);
  return s;
}

PolicyParams weak_student() {
  PolicyParams p;
  p.chain_skill = {0.9, 0.9, 0.8, 0.5};
  return p;
}

}  // namespace

TEST_CASE("ORM labels from a perfect policy are all positive") {
  EnvConfig env;
  auto qs = generate_tasks(1, Family::Chain, Difficulty::Hard, 20, env);
  auto d = build_orm_dataset(qs, PolicyParams{}, env, 4, 1);
  CHECK(d.samples.size() > 0);
  for (const auto& s : d.samples) CHECK(s.label == 1);
}

TEST_CASE("an incorrect three-step trace yields four negative samples") {
  auto q = chain_q("q", 2, {{OpKind::Add, 3}, {OpKind::Mul, 4}, {OpKind::Sub, 1}});
  SourceTrace t;
  t.id = "q#000";
  t.trace = make_trace(q, {Step{2, OpKind::Add, 3, 5}, Step{5, OpKind::Mul, 4, 21}, Step{21, OpKind::Sub, 1, 20}});
  t.correct = is_correct(q, t.trace);
  REQUIRE_FALSE(t.correct);
  std::vector<SourceTrace> ts{t};
  auto samples = orm_samples_from(ts);
  REQUIRE(samples.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(samples[i].depth() == i);
    CHECK(samples[i].label == 0);
  }
}

TEST_CASE("mean depth-0 ORM label estimates the solve rate") {
  EnvConfig env;
  auto pol = weak_student();
  auto q = chain_q("q", 6, {{OpKind::Mul, 4}, {OpKind::Div, 3}, {OpKind::Add, 5}});
  std::vector<Question> qs{q};
  auto d = build_orm_dataset(qs, pol, env, 10000, 3, 4);
  double pos = 0, n = 0;
  for (const auto& s : d.samples)
    if (s.depth() == 0) {
      pos += s.label;
      ++n;
    }
  const double v = v_pi_exact(q, {}, pol, env);
  CHECK(n == 10000);
  CHECK(std::fabs(pos / n - v) <= 3 * std::sqrt(v * (1 - v) / n));
}

TEST_CASE("every prefix of a source trace shares its label") {
  EnvConfig env;
  auto qs = generate_tasks(2, Family::Chain, Difficulty::Hard, 30, env);
  auto d = build_orm_dataset(qs, weak_student(), env, 6, 9);
  std::map<std::string, int> label;
  std::map<std::string, bool> correct;
  for (const auto& t : d.traces) correct[t.id] = t.correct;
  for (const auto& s : d.samples) {
    auto [it, fresh] = label.emplace(s.source_trace_id, s.label);
    CHECK(it->second == s.label);
    CHECK(s.label == correct[s.source_trace_id]);
  }
}

TEST_CASE("balanced ORM keeps min(pos, neg) traces of each class") {
  auto q = chain_q("q", 1, {{OpKind::Add, 1}});
  OrmDataset d;
  for (int i = 0; i < 6; ++i) d.traces.push_back(source(q, "q#p" + std::to_string(i), true));
  for (int i = 0; i < 2; ++i) d.traces.push_back(source(q, "q#n" + std::to_string(i), false));
  d.samples = orm_samples_from(d.traces);
  auto b = build_balanced_orm_dataset(d, 4);
  int pos = 0, neg = 0;
  for (const auto& t : b.data.traces) (t.correct ? pos : neg) += 1;
  CHECK(pos == 2);
  CHECK(neg == 2);
  CHECK(b.dropped_questions == 0);

  auto again = build_balanced_orm_dataset(b.data, 8);
  std::set<std::string> before, after;
  for (const auto& t : b.data.traces) before.insert(t.id);
  for (const auto& t : again.data.traces) after.insert(t.id);
  CHECK(before == after);
}

TEST_CASE("balanced ORM drops single-class questions and warns when empty") {
  auto q = chain_q("q", 1, {{OpKind::Add, 1}});
  OrmDataset d;
  for (int i = 0; i < 3; ++i) d.traces.push_back(source(q, "q#" + std::to_string(i), true));
  d.samples = orm_samples_from(d.traces);
  auto b = build_balanced_orm_dataset(d, 1);
  CHECK(b.data.traces.empty());
  CHECK(b.dropped_questions == 1);
  CHECK_FALSE(b.warnings.empty());
}

TEST_CASE("balanced ORM per-question label mean is one half") {
  EnvConfig env;
  auto qs = generate_tasks(5, Family::Chain, Difficulty::Hard, 60, env);
  auto d = build_orm_dataset(qs, weak_student(), env, 9, 2);
  auto b = build_balanced_orm_dataset(d, 2);
  std::map<std::string, std::pair<int, int>> c;
  for (const auto& t : b.data.traces) (t.correct ? c[t.trace.question_id].first : c[t.trace.question_id].second) += 1;
  CHECK_FALSE(c.empty());
  for (const auto& [qid, pn] : c) CHECK(std::abs(pn.first - pn.second) <= 1);
}

TEST_CASE("SORM labels: dead prefixes are always negative") {
  EnvConfig env;
  auto qs = generate_tasks(6, Family::Chain, Difficulty::Hard, 40, env);
  auto qi = index_questions(qs);
  auto d = build_orm_dataset(qs, weak_student(), env, 4, 6);
  for (std::size_t k : {1, 8}) {
    auto sorm = build_sorm_dataset(qs, d.traces, weak_student(), env, k, 6);
    for (const auto& s : sorm) {
      CHECK(s.verifiers.size() == k);
      if (v_star(lookup(qi, s.question_id), s.prefix, env) == 0) CHECK(s.label == 0);
      int mx = 0;
      for (const auto& v : s.verifiers) mx = std::max(mx, v.label);
      CHECK(s.label == mx);
      if (s.label == 1) CHECK(std::any_of(s.verifiers.begin(), s.verifiers.end(), [](auto& v) { return v.label == 1; }));
    }
  }
}

TEST_CASE("SORM positive rate on valid prefixes follows 1-(1-v)^K") {
  EnvConfig env;
  auto pol = weak_student();
  auto qs = generate_tasks(12, Family::Chain, Difficulty::Hard, 120, env);
  auto qi = index_questions(qs);
  auto d = build_orm_dataset(qs, pol, env, 4, 12);
  const std::size_t K = 2;
  auto sorm = build_sorm_dataset(qs, d.traces, pol, env, K, 12, 4);
  double observed = 0, expected = 0, var = 0;
  std::size_t n = 0;
  for (const auto& s : sorm) {
    const auto& q = lookup(qi, s.question_id);
    if (v_star(q, s.prefix, env) == 0) continue;
    const double v = v_pi_exact(q, s.prefix, pol, env);
    const double p = 1 - std::pow(1 - v, static_cast<double>(K));
    observed += s.label;
    expected += p;
    var += p * (1 - p);
    ++n;
  }
  CHECK(n >= 1000);
  CHECK(std::fabs(observed - expected) <= 3 * std::sqrt(var));
}

TEST_CASE("verifier budgets nest") {
  EnvConfig env;
  auto qs = generate_tasks(3, Family::Chain, Difficulty::Hard, 10, env);
  auto d = build_orm_dataset(qs, weak_student(), env, 2, 3);
  auto s8 = build_sorm_dataset(qs, d.traces, weak_student(), env, 8, 3);
  auto s2 = build_sorm_dataset(qs, d.traces, weak_student(), env, 2, 3);
  auto cut = with_verifier_budget(s8, 2);
  REQUIRE(cut.size() == s2.size());
  for (std::size_t i = 0; i < cut.size(); ++i) {
    CHECK(cut[i].label == s2[i].label);
    for (std::size_t j = 0; j < 2; ++j) CHECK(cut[i].verifiers[j].trace == s2[i].verifiers[j].trace);
  }
}

TEST_CASE("rule 1 propagates positives backwards") {
  auto q = chain_q("q", 1, {{OpKind::Add, 1}, {OpKind::Add, 1}, {OpKind::Add, 1}});
  std::vector<Question> qs{q};
  auto qi = index_questions(qs);
  std::vector<SormSample> s{sorm_sample("q", "t", 1, 0), sorm_sample("q", "t", 2, 1), sorm_sample("q", "t", 3, 0)};
  auto r = postprocess_sorm(s, qi, {true, true, false}, 0);
  REQUIRE(r.samples.size() == 3);
  CHECK(r.samples[0].label == 1);
  CHECK(r.samples[1].label == 1);
  CHECK(r.samples[2].label == 0);
  CHECK(r.stats.propagated == 1);
}

TEST_CASE("consistency check on chain and countdown") {
  auto c = chain_q("q", 1, {{OpKind::Add, 1}, {OpKind::Add, 1}});
  auto ct = canonical_trace(c);
  CHECK(consistency_check(c, std::span<const Step>(ct.steps).first(1), ct));

  auto cd = countdown_q({3, 5, 2, 7}, 14);
  std::vector<Step> prefix{Step{5, OpKind::Add, 3, 8}};
  auto unused = make_trace(cd, {prefix[0], Step{7, OpKind::Mul, 2, 14}});
  auto used = make_trace(cd, {prefix[0], Step{8, OpKind::Sub, 2, 6}, Step{7, OpKind::Add, 6, 13}});
  CHECK_FALSE(consistency_check(cd, prefix, unused));
  CHECK(consistency_check(cd, prefix, used));
}

TEST_CASE("post-processing properties over generated data") {
  EnvConfig env;
  std::size_t total = 0;
  for (auto fam : {Family::Chain, Family::Countdown}) {
    auto qs = generate_tasks(17, fam, Difficulty::Hard, 150, env);
    auto qi = index_questions(qs);
    PolicyParams pol = weak_student();
    auto d = build_orm_dataset(qs, pol, env, 8, 17, 4);
    auto raw = build_sorm_dataset(qs, d.traces, pol, env, 4, 17, 4);
    total += raw.size();

    // Independent recount of discarded verifiers.
    std::size_t inconsistent = 0, rollouts = 0;
    for (const auto& s : raw)
      for (const auto& v : s.verifiers) {
        ++rollouts;
        inconsistent += !consistency_check(lookup(qi, s.question_id), s.prefix, v.trace);
      }
    auto pre = postprocess_sorm(raw, qi, {true, true, false}, 5);
    CHECK(pre.stats.total_rollouts == rollouts);
    CHECK(pre.stats.discarded_rollouts == inconsistent);
    if (fam == Family::Chain) CHECK(inconsistent == 0);

    std::map<std::string, std::vector<std::pair<std::size_t, int>>> by_trace;
    for (const auto& s : pre.samples) by_trace[s.source_trace_id].emplace_back(s.depth(), s.label);
    for (auto& [id, v] : by_trace) {
      std::sort(v.begin(), v.end());
      for (std::size_t i = 1; i < v.size(); ++i) CHECK(v[i].second <= v[i - 1].second);
    }

    auto full = postprocess_sorm(raw, qi, {true, true, true}, 5);
    std::map<std::size_t, std::pair<int, int>> depth;
    for (const auto& s : full.samples) (s.label ? depth[s.depth()].first : depth[s.depth()].second) += 1;
    for (const auto& [k, pn] : depth) CHECK(std::abs(pn.first - pn.second) <= 1);
    for (auto dd : full.stats.dropped_depths) CHECK(depth.count(dd) == 0);
  }
  CHECK(total >= 10000);
}

TEST_CASE("balancing is deterministic given the seed") {
  EnvConfig env;
  auto qs = generate_tasks(2, Family::Chain, Difficulty::Hard, 40, env);
  auto qi = index_questions(qs);
  auto d = build_orm_dataset(qs, weak_student(), env, 4, 1);
  auto raw = build_sorm_dataset(qs, d.traces, weak_student(), env, 2, 1);
  auto a = postprocess_sorm(raw, qi, {}, 3).samples;
  auto b = postprocess_sorm(raw, qi, {}, 3).samples;
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].source_trace_id == b[i].source_trace_id);
}

TEST_CASE("contrastive pairs use min(pos, neg) distinct complete traces") {
  auto q = chain_q("q", 1, {{OpKind::Add, 1}});
  auto r = chain_q("r", 1, {{OpKind::Add, 2}});
  OrmDataset d;
  for (int i = 0; i < 3; ++i) d.traces.push_back(source(q, "q#p" + std::to_string(i), true));
  for (int i = 0; i < 5; ++i) d.traces.push_back(source(q, "q#n" + std::to_string(i), false));
  for (int i = 0; i < 4; ++i) d.traces.push_back(source(r, "r#n" + std::to_string(i), false));
  auto pairs = build_contrastive_pairs(d, 7);
  CHECK(pairs.size() == 3);
  std::set<std::size_t> used;
  for (const auto& p : pairs) {
    CHECK(d.traces[p.good].correct);
    CHECK_FALSE(d.traces[p.bad].correct);
    CHECK(d.traces[p.good].trace.question_id == "q");
    CHECK(used.insert(p.good).second);
    CHECK(used.insert(p.bad).second);
  }
}

TEST_CASE("contrastive pair total matches an independent recount") {
  EnvConfig env;
  auto qs = generate_tasks(3, Family::Chain, Difficulty::Hard, 80, env);
  auto d = build_orm_dataset(qs, weak_student(), env, 8, 3);
  std::map<std::string, std::pair<std::size_t, std::size_t>> c;
  for (const auto& t : d.traces)
    if (t.trace.is_complete) (t.correct ? c[t.trace.question_id].first : c[t.trace.question_id].second) += 1;
  std::size_t expect = 0;
  for (const auto& [k, v] : c) expect += std::min(v.first, v.second);
  CHECK(build_contrastive_pairs(d, 3).size() == expect);
}

TEST_CASE("a constant-label dataset fits a constant predictor") {
  EnvConfig env;
  auto qs = generate_tasks(4, Family::Chain, Difficulty::Hard, 80, env);
  auto d = build_orm_dataset(qs, weak_student(), env, 4, 4);
  auto qi = index_questions(qs);
  AggregatedRows rows;
  for (const auto& s : d.samples) {
    auto f = extract_features(lookup(qi, s.question_id), s.prefix, FeatureSet::StateComplete);
    add_row(rows, f, 1);
    for (int i = 0; i < 3; ++i) add_row(rows, f, 0);
  }
  auto e = fit_classifier(rows, FitConfig{});
  for (const auto& s : d.samples) CHECK(std::fabs(e.predict(lookup(qi, s.question_id), s.prefix) - 0.25) <= 0.02);
}

TEST_CASE("single-class datasets are rejected") {
  AggregatedRows rows;
  add_row(rows, {"a"}, 1);
  add_row(rows, {"b"}, 1);
  CHECK_THROWS_AS(fit_classifier(rows, FitConfig{}), DegenerateDatasetError);
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> none;
  CHECK_THROWS_AS(fit_contrastive(none, FitConfig{}), DegenerateDatasetError);
}

TEST_CASE("estimator fit and predict are reproducible") {
  EnvConfig env;
  auto qs = generate_tasks(6, Family::Chain, Difficulty::Hard, 60, env);
  auto qi = index_questions(qs);
  auto d = build_orm_dataset(qs, weak_student(), env, 4, 6);
  auto a = fit_orm(d.samples, qi, {});
  auto b = fit_orm(d.samples, qi, {});
  CHECK(a == b);
  for (const auto& s : d.samples) {
    const double p = a.predict(lookup(qi, s.question_id), s.prefix);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    CHECK(p == b.predict(lookup(qi, s.question_id), s.prefix));
  }
}

TEST_CASE("features never expose validity directly") {
  auto q = chain_q("q", 6, {{OpKind::Mul, 4}, {OpKind::Add, 1}});
  std::vector<Step> good{Step{6, OpKind::Mul, 4, 24}};
  std::vector<Step> bad{Step{6, OpKind::Mul, 4, 33}};  // same residue mod 9
  CHECK(extract_features(q, good, FeatureSet::StateComplete) == extract_features(q, bad, FeatureSet::StateComplete));
}

TEST_CASE("oracle scorer and localization") {
  EnvConfig env;
  auto q = chain_q("q", 2, {{OpKind::Add, 3}, {OpKind::Mul, 4}, {OpKind::Sub, 1}, {OpKind::Add, 2}});
  auto t = make_trace(q, {Step{2, OpKind::Add, 3, 5}, Step{5, OpKind::Mul, 4, 20}, Step{20, OpKind::Sub, 1, 18},
                          Step{18, OpKind::Add, 2, 20}});
  CHECK(first_error_index(oracle_scorer(env), q, t) == std::optional<std::size_t>(3));
  Scorer high = [](const Question&, std::span<const Step>) { return 0.9; };
  CHECK_FALSE(first_error_index(high, q, t).has_value());

  auto qs = generate_tasks(8, Family::Chain, Difficulty::Hard, 50, env);
  std::vector<Trace> drafts;
  for (const auto& x : qs) drafts.push_back(greedy_rollout(x, weak_student(), env));
  auto rep = evaluate_estimator(oracle_scorer(env), qs, drafts, env);
  CHECK(rep.step_accuracy == 1.0);
  CHECK(rep.confusion.total() == rep.n_steps);
  auto loc = localization_accuracy(oracle_scorer(env), qs, drafts, env);
  CHECK(loc.accuracy == 1.0);
}

TEST_CASE("cross-generalization diagonal equals standard evaluation") {
  EnvConfig env;
  auto qs = generate_tasks(9, Family::Chain, Difficulty::Hard, 60, env);
  auto qi = index_questions(qs);
  auto d = build_orm_dataset(qs, weak_student(), env, 4, 9);
  auto e = fit_orm(d.samples, qi, {});
  std::vector<Trace> drafts;
  for (const auto& q : qs) drafts.push_back(greedy_rollout(q, weak_student(), env));
  auto s = scorer_of(e);
  auto g = cross_generalization_eval(s, s, qs, drafts, drafts, env);
  auto direct = evaluate_estimator(s, qs, drafts, env);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) CHECK(g.grid[a][b].step_accuracy == direct.step_accuracy);
}

TEST_CASE("self-supervised filtering") {
  EnvConfig env;
  auto qs = generate_tasks(10, Family::Chain, Difficulty::Hard, 80, env);
  auto qi = index_questions(qs);
  auto d = build_orm_dataset(qs, weak_student(), env, 4, 10);
  auto raw = build_sorm_dataset(qs, d.traces, weak_student(), env, 4, 10);
  auto sorm = postprocess_sorm(raw, qi, {}, 10).samples;
  auto e = fit_sorm(sorm, qi, {});
  auto r = self_supervised_filter(e, sorm, qi, {});
  std::size_t disagree = 0;
  for (const auto& s : sorm) disagree += (e.predict(lookup(qi, s.question_id), s.prefix) > 0.5 ? 1 : 0) != s.label;
  CHECK(r.removed_fraction == doctest::Approx(static_cast<double>(disagree) / sorm.size()));
  CHECK(r.kept.size() == sorm.size() - disagree);

  // A filter that agrees with every label keeps everything.
  auto again = self_supervised_filter(r.refit, r.kept, qi, {});
  std::size_t d2 = 0;
  for (const auto& s : r.kept) d2 += (r.refit.predict(lookup(qi, s.question_id), s.prefix) > 0.5 ? 1 : 0) != s.label;
  if (d2 == 0) CHECK(again.kept.size() == r.kept.size());

  // Inverting every label makes the estimator disagree almost everywhere.
  auto flipped = sorm;
  for (auto& s : flipped) s.label = 1 - s.label;
  CHECK_THROWS_AS(self_supervised_filter(e, flipped, qi, {}), FilterError);
}

TEST_CASE("label agreement approaches one as K grows") {
  EnvConfig env;
  auto pol = weak_student();
  auto qs = generate_tasks(14, Family::Chain, Difficulty::Easy, 100, env);
  auto qi = index_questions(qs);
  auto d = build_orm_dataset(qs, pol, env, 4, 14);
  auto raw = build_sorm_dataset(qs, d.traces, pol, env, 64, 14, 4);
  auto a = sorm_label_agreement(postprocess_sorm(raw, qi, {true, true, false}, 0).samples, qi, env);
  CHECK(a.agreement >= 0.995);
  CHECK(a.false_positive_rate == 0.0);
}

TEST_CASE("ORM is pessimistic on division questions relative to SORM") {
  EnvConfig env;
  PolicyParams pol;
  pol.chain_skill = {0.95, 0.95, 0.9, 0.3};
  auto qs = generate_tasks(15, Family::Chain, Difficulty::Hard, 200, env);
  auto qi = index_questions(qs);
  auto d = build_orm_dataset(qs, pol, env, 8, 15, 4);
  auto raw = build_sorm_dataset(qs, d.traces, pol, env, 8, 15, 4);
  auto orm = fit_orm(d.samples, qi, {});
  auto sorm = fit_sorm(postprocess_sorm(raw, qi, {}, 15).samples, qi, {});
  double o = 0, s = 0;
  for (const auto& q : qs) {
    o += orm.predict(q, {});
    s += sorm.predict(q, {});
  }
  CHECK(o < s);
}
