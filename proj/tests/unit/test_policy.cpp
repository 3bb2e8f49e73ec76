#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "stepwise/policy.hpp"

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

}  // namespace

TEST_CASE("perfect chain policy at temperature 0 yields the canonical trace") {
  EnvConfig env;
  PolicyParams perfect;
  RolloutConfig rc{4, 0.0, 0, 3};
  for (const auto& q : generate_tasks(2, Family::Chain, Difficulty::Hard, 50, env)) {
    for (const auto& t : sample_rollouts(q, perfect, env, rc)) CHECK(t == canonical_trace(q, env));
    CHECK(greedy_rollout(q, perfect, env) == canonical_trace(q, env));
  }
}

TEST_CASE("one-step division at p_div = 0.5 succeeds half the time") {
  EnvConfig env;
  PolicyParams pol;
  pol.chain_skill = {1.0, 1.0, 1.0, 0.5};
  auto q = chain_q("d", 12, {{OpKind::Div, 3}});
  Rng rng{2024};
  const int n = 100000;
  int ok = 0;
  for (int i = 0; i < n; ++i) ok += is_correct(q, sample_rollout(q, pol, env, rng));
  const double sigma = std::sqrt(0.25 / n);
  CHECK(std::fabs(static_cast<double>(ok) / n - 0.5) <= 3 * sigma);
}

TEST_CASE("rollouts are reproducible and independent of worker count") {
  EnvConfig env;
  PolicyParams pol;
  pol.chain_skill = {0.8, 0.8, 0.7, 0.5};
  auto qs = generate_tasks(8, Family::Chain, Difficulty::Hard, 30, env);
  RolloutConfig rc{8, 1.0, 0, 99};
  for (const auto& q : qs) {
    CHECK(sample_rollouts(q, pol, env, rc) == sample_rollouts(q, pol, env, rc));
    CHECK(greedy_rollout(q, pol, env) == greedy_rollout(q, pol, env));
    CHECK(sample_rollouts(q, pol, env, rc)[0] == greedy_rollout(q, pol, env));
  }
  auto m1 = eval_policy(qs, pol, env, 8, 5, 1);
  auto m8 = eval_policy(qs, pol, env, 8, 5, 8);
  CHECK(m1.maj1 == m8.maj1);
  CHECK(m1.majk == m8.majk);
  CHECK(m1.passk == m8.passk);
}

TEST_CASE("step cap truncates and marks the trace incomplete") {
  EnvConfig env;
  PolicyParams pol;
  auto q = chain_q("long", 1, {{OpKind::Add, 1}, {OpKind::Add, 1}, {OpKind::Add, 1}, {OpKind::Add, 1}});
  RolloutConfig rc{1, 1.0, 2, 1};
  auto t = sample_rollouts(q, pol, env, rc)[0];
  CHECK(t.steps.size() == 2);
  CHECK_FALSE(t.is_complete);
}

TEST_CASE("eval_policy on a perfect policy") {
  EnvConfig env;
  auto qs = generate_tasks(1, Family::Chain, Difficulty::Hard, 40, env);
  auto m = eval_policy(qs, PolicyParams{}, env, 16, 1);
  CHECK(m.maj1 == 1.0);
  CHECK(m.majk == 1.0);
  CHECK(m.passk == 1.0);
}

TEST_CASE("pass@K dominates maj@K and grows with K") {
  EnvConfig env;
  PolicyParams pol;
  pol.chain_skill = {0.8, 0.8, 0.7, 0.4};
  auto qs = generate_tasks(6, Family::Chain, Difficulty::Hard, 200, env);
  double prev = 0.0;
  for (std::size_t k : {1, 2, 4, 8, 16}) {
    auto m = eval_policy(qs, pol, env, k, 3);
    CHECK(m.passk >= m.majk);
    CHECK(m.passk >= prev);
    prev = m.passk;
  }
}

TEST_CASE("pass@K matches the binomial formula") {
  EnvConfig env;
  PolicyParams pol;
  pol.chain_skill = {1.0, 1.0, 1.0, 0.5};
  std::vector<Question> qs;
  for (int i = 0; i < 4000; ++i) qs.push_back(chain_q("q" + std::to_string(i), 6 * (i + 1), {{OpKind::Div, 3}}));
  for (std::size_t k : {1, 2, 4}) {
    const double expect = 1.0 - std::pow(0.5, static_cast<double>(k));
    const auto m = eval_policy(qs, pol, env, k, 11, 4);
    const double sigma = std::sqrt(expect * (1 - expect) / static_cast<double>(qs.size()));
    CHECK(std::fabs(m.passk - expect) <= 3 * sigma);
  }
}

TEST_CASE("maximum-likelihood refit recovers chain skills from unfiltered data") {
  EnvConfig env;
  PolicyParams truth;
  truth.chain_skill = {0.9, 0.7, 0.6, 0.4};
  auto qs = generate_tasks(13, Family::Chain, Difficulty::Hard, 3000, env);
  PolicyCounts all, kept;
  Rng rng{5};
  auto min_attempts = [&] { return *std::min_element(all.attempts.begin(), all.attempts.end()); };
  for (int round = 0; round < 200 && min_attempts() < 1e5; ++round)
    for (const auto& q : qs) {
      auto t = sample_rollout(q, truth, env, rng);
      all.add(q, t, env);
      if (is_correct(q, t)) kept.add(q, t, env);
    }
  for (std::size_t op = 0; op < 4; ++op) REQUIRE(all.attempts[op] >= 1e5);
  const auto fit = fit_policy(all, PolicyParams{}, env);
  const auto filtered = fit_policy(kept, PolicyParams{}, env);
  for (std::size_t op = 0; op < 4; ++op) {
    CHECK(std::fabs(fit.chain_skill[op] - truth.chain_skill[op]) <= 0.01);
    CHECK(filtered.chain_skill[op] >= truth.chain_skill[op]);
  }
}

TEST_CASE("expert iteration with a perfect policy converges in one round") {
  EnvConfig env;
  auto qs = generate_tasks(3, Family::Chain, Difficulty::Easy, 30, env);
  EIConfig cfg;
  cfg.k = 8;
  auto r = expert_iteration(qs, PolicyParams{}, cfg, env);
  REQUIRE(r.rounds.size() == 1);
  CHECK(r.rounds[0].maj1 == 1.0);
  CHECK(r.rounds[0].converged);
}

TEST_CASE("expert iteration datasets are deduplicated and grow by union") {
  EnvConfig env;
  PolicyParams weak;
  weak.chain_skill = {0.7, 0.7, 0.6, 0.4};
  auto qs = generate_tasks(4, Family::Chain, Difficulty::Hard, 40, env);
  EIConfig cfg;
  cfg.k = 16;
  cfg.epsilon = -1.0;  // run every round
  cfg.max_rounds = 3;
  auto r = expert_iteration(qs, weak, cfg, env);
  REQUIRE(r.rounds.size() == 3);
  std::set<std::pair<std::string, std::vector<Step>>> seen;
  for (const auto& t : r.dataset) CHECK(seen.emplace(t.question_id, t.steps).second);
  for (std::size_t i = 1; i < r.rounds.size(); ++i) CHECK(r.rounds[i].dataset_size >= r.rounds[i - 1].dataset_size);
  for (const auto& rep : r.rounds) CHECK(rep.passk >= rep.maj1);
  CHECK(r.policies.size() == 4);
  CHECK(r.policies.back().version == 3);
}

TEST_CASE("expert iteration fails when nothing is solved in round one") {
  EnvConfig env;
  PolicyParams hopeless;
  hopeless.chain_skill = {1e-9, 1e-9, 1e-9, 1e-9};
  auto qs = generate_tasks(4, Family::Chain, Difficulty::Hard, 10, env);
  EIConfig cfg;
  cfg.k = 2;
  CHECK_THROWS_AS(expert_iteration(qs, hopeless, cfg, env), EIError);
}

TEST_CASE("countdown expert iteration does not lose maj@1") {
  EnvConfig env;
  auto train = generate_tasks(31, Family::Countdown, Difficulty::Easy, 150, env);
  auto held = generate_tasks(32, Family::Countdown, Difficulty::Easy, 150, env);
  for (auto& q : held) q.id = "held-" + q.id;
  PolicyParams uniform;
  EIConfig cfg;
  cfg.k = 96;
  cfg.epsilon = -1.0;
  cfg.max_rounds = 4;
  cfg.seed = 8;
  auto r = expert_iteration(train, uniform, cfg, env, held, 4);
  const double base = eval_policy(held, uniform, env, 1, cfg.seed).maj1;
  double prev = base;
  for (const auto& rep : r.rounds) {
    CHECK(rep.maj1 >= prev - 0.02);
    prev = rep.maj1;
  }
  CHECK(r.rounds.back().maj1 >= base);
}

TEST_CASE("SFT seeding adds canonical traces before round one") {
  EnvConfig env;
  PolicyParams weak;
  weak.chain_skill = {0.9, 0.9, 0.8, 0.5};
  auto qs = generate_tasks(4, Family::Chain, Difficulty::Hard, 20, env);
  EIConfig cfg;
  cfg.k = 1;
  cfg.max_rounds = 1;
  cfg.sft_fraction = 1.0;
  auto r = expert_iteration(qs, weak, cfg, env);
  CHECK(r.dataset.size() >= qs.size());
}
