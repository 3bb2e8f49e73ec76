#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stepwise/env.hpp"
#include "stepwise/policy.hpp"
#include "stepwise/value.hpp"

using namespace stepwise;

namespace {

Question chain_q(std::int64_t start, std::vector<ChainOp> ops) {
  Question q;
  q.id = "c";
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

Step st(std::int64_t a, OpKind op, std::int64_t b, std::int64_t r) { return Step{a, op, b, r}; }

}  // namespace

TEST_CASE("chain example question evaluates to 20") {
  auto q = chain_q(2, {{OpKind::Add, 3}, {OpKind::Mul, 4}});
  CHECK(q.answer == 20);
  auto good = make_trace(q, {st(2, OpKind::Add, 3, 5), st(5, OpKind::Mul, 4, 20)});
  auto bad = make_trace(q, {st(2, OpKind::Add, 3, 5), st(5, OpKind::Mul, 4, 21)});
  CHECK(good.is_complete);
  CHECK(check_final(q, good));
  CHECK_FALSE(check_final(q, bad));
}

TEST_CASE("check_final rejects truncated traces") {
  auto q = chain_q(2, {{OpKind::Add, 3}, {OpKind::Mul, 4}});
  auto partial = make_trace(q, {st(2, OpKind::Add, 3, 5)});
  CHECK_FALSE(partial.is_complete);
  CHECK_THROWS_AS(check_final(q, partial), IncompleteTraceError);
  CHECK_FALSE(is_correct(q, partial));
}

TEST_CASE("countdown example trace reaches the target") {
  auto q = countdown_q({3, 5, 2}, 16);
  auto t = make_trace(q, {st(5, OpKind::Add, 3, 8), st(8, OpKind::Mul, 2, 16)});
  CHECK(t.is_complete);
  CHECK(check_final(q, t));
}

TEST_CASE("apply_step accepts wrong arithmetic and rejects malformed operands") {
  auto q = chain_q(5, {{OpKind::Mul, 4}, {OpKind::Add, 1}});
  Prefix p{q.id, {}};
  auto ok = apply_step(q, p, st(5, OpKind::Mul, 4, 20));
  REQUIRE(std::holds_alternative<Prefix>(ok));
  CHECK(std::get<Prefix>(ok).depth() == 1);
  auto wrong = apply_step(q, p, st(5, OpKind::Mul, 4, 21));
  REQUIRE(std::holds_alternative<Prefix>(wrong));
  CHECK_FALSE(arithmetic_ok(std::get<Prefix>(wrong).steps[0]));
  auto mismatch = apply_step(q, p, st(6, OpKind::Mul, 4, 24));
  REQUIRE(std::holds_alternative<Rejection>(mismatch));
  CHECK_FALSE(std::get<Rejection>(mismatch).reason.empty());
}

TEST_CASE("apply_step rejects countdown picks missing from the pool and steps past the cap") {
  auto q = countdown_q({3, 5, 2}, 16);
  Prefix p{q.id, {}};
  CHECK(std::holds_alternative<Rejection>(apply_step(q, p, st(7, OpKind::Add, 2, 9))));
  CHECK(std::holds_alternative<Rejection>(apply_step(q, p, st(5, OpKind::Add, 5, 10))));
  EnvConfig tight;
  tight.max_steps = 1;
  Prefix one{q.id, {st(5, OpKind::Add, 3, 8)}};
  CHECK(std::holds_alternative<Rejection>(apply_step(q, one, st(8, OpKind::Mul, 2, 16), tight)));
}

TEST_CASE("v_star examples") {
  auto c = chain_q(5, {{OpKind::Mul, 4}, {OpKind::Add, 1}});
  CHECK(v_star(c, {}) == 1);
  std::vector<Step> bad{st(5, OpKind::Mul, 4, 21)};
  CHECK(v_star(c, bad) == 0);
  auto cd = countdown_q({3, 5, 2}, 16);
  CHECK(v_star(cd, {}) == 1);
  std::vector<Step> dead{st(5, OpKind::Mul, 3, 15)};
  CHECK(v_star(cd, dead) == 0);
  std::vector<Step> alive{st(5, OpKind::Add, 3, 8)};
  CHECK(v_star(cd, alive) == 1);
}

TEST_CASE("v_star is absorbing along generated traces") {
  EnvConfig env;
  PolicyParams pol;
  pol.chain_skill = {0.7, 0.7, 0.7, 0.5};
  for (auto fam : {Family::Chain, Family::Countdown}) {
    auto qs = generate_tasks(5, fam, Difficulty::Hard, 40, env);
    for (const auto& q : qs) {
      Rng rng{1, fnv1a(q.id)};
      for (int k = 0; k < 5; ++k) {
        auto t = sample_rollout(q, pol, env, rng);
        bool dead = false;
        for (std::size_t i = 0; i <= t.steps.size(); ++i) {
          const int v = v_star(q, std::span<const Step>(t.steps).first(i), env);
          if (dead) CHECK(v == 0);
          dead = dead || v == 0;
        }
        const auto fi = first_invalid_step(q, t.steps, env);
        if (fi) CHECK(v_star(q, std::span<const Step>(t.steps).first(*fi), env) == 0);
      }
    }
  }
}

TEST_CASE("generate_tasks honours difficulty and determinism") {
  EnvConfig env;
  auto a = generate_tasks(7, Family::Chain, Difficulty::Easy, 1, env);
  auto b = generate_tasks(7, Family::Chain, Difficulty::Easy, 1, env);
  REQUIRE(a.size() == 1);
  CHECK(a == b);
  for (const auto& q : generate_tasks(3, Family::Chain, Difficulty::Easy, 200, env)) {
    CHECK(q.chain->ops.size() >= 2);
    CHECK(q.chain->ops.size() <= 3);
    CHECK(check_final(q, canonical_trace(q, env)));
  }
  for (const auto& q : generate_tasks(3, Family::Chain, Difficulty::Hard, 200, env)) {
    CHECK(q.chain->ops.size() >= 4);
    CHECK(q.chain->ops.size() <= 8);
    CHECK(std::any_of(q.chain->ops.begin(), q.chain->ops.end(), [](auto& o) { return o.kind == OpKind::Div; }));
    CHECK(q.answer == chain_canonical_value(*q.chain, q.chain->ops.size()));
    for (const auto& s : canonical_trace(q, env).steps) CHECK(arithmetic_ok(s));
  }
  for (auto d : {Difficulty::Easy, Difficulty::Hard}) {
    for (const auto& q : generate_tasks(11, Family::Countdown, d, 50, env)) {
      const auto n = q.countdown->numbers.size();
      if (d == Difficulty::Easy) CHECK((n >= 2 && n <= 3));
      else CHECK((n >= 4 && n <= 5));
      CHECK(countdown_reachable(q.countdown->numbers, q.countdown->target, env.max_steps));
      CHECK(check_final(q, canonical_trace(q, env)));
    }
  }
}

TEST_CASE("generation fails loudly on impossible parameters") {
  EnvConfig env;
  env.max_steps = 3;
  CHECK_THROWS_AS(generate_tasks(1, Family::Chain, Difficulty::Hard, 5, env), GenerationError);
}

TEST_CASE("perturbation support may not contain zero") {
  EnvConfig env;
  env.perturbation_support = {1, 0};
  CHECK_THROWS_AS(env.validate(), Error);
}

TEST_CASE("v_pi_exact closed form for mul then div") {
  EnvConfig env;
  PolicyParams pol;
  pol.chain_skill = {1.0, 1.0, 0.9, 0.5};
  auto q = chain_q(6, {{OpKind::Mul, 4}, {OpKind::Div, 3}});
  CHECK(v_pi_exact(q, {}, pol, env) == doctest::Approx(0.45).epsilon(1e-12));
  std::vector<Step> bad{st(6, OpKind::Mul, 4, 25)};
  CHECK(v_pi_exact(q, bad, pol, env) == 0.0);
}

TEST_CASE("v_pi_exact equals the product of remaining skills on valid chain prefixes") {
  EnvConfig env;
  PolicyParams pol;
  pol.chain_skill = {0.93, 0.81, 0.77, 0.41};
  for (const auto& q : generate_tasks(21, Family::Chain, Difficulty::Hard, 60, env)) {
    const auto canon = canonical_trace(q, env);
    for (std::size_t d = 0; d <= canon.steps.size(); ++d) {
      const auto pre = std::span<const Step>(canon.steps).first(d);
      CHECK(v_pi_exact(q, pre, pol, env) == chain_success_product(q, d, pol));
    }
  }
}

TEST_CASE("v_pi_exact is zero wherever v_star is zero") {
  EnvConfig env;
  PolicyParams pol;
  for (const auto& q : generate_tasks(4, Family::Countdown, Difficulty::Easy, 30, env)) {
    Rng rng{9, fnv1a(q.id)};
    for (int k = 0; k < 4; ++k) {
      auto t = sample_rollout(q, pol, env, rng);
      for (std::size_t i = 0; i <= t.steps.size(); ++i) {
        const auto pre = std::span<const Step>(t.steps).first(i);
        if (v_star(q, pre, env) == 0) CHECK(v_pi_exact(q, pre, pol, env) == 0.0);
      }
    }
  }
}

TEST_CASE("v_pi_exact matches Monte Carlo on a tiny countdown instance") {
  EnvConfig env;
  PolicyParams pol;
  auto q = countdown_q({3, 5, 2}, 16);
  const double v = v_pi_exact(q, {}, pol, env);
  const int n = 1'000'000;
  Rng rng{77};
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += is_correct(q, sample_rollout(q, pol, env, rng));
  const double mean = static_cast<double>(hits) / n;
  const double se = std::sqrt(v * (1 - v) / n);
  CHECK(v > 0.0);
  CHECK(std::fabs(mean - v) <= 3 * se);
}

TEST_CASE("v_pi_exact enforces the state budget") {
  EnvConfig env;
  env.value_budget = 3;
  PolicyParams pol;
  auto qs = generate_tasks(2, Family::Countdown, Difficulty::Hard, 1, env);
  CHECK_THROWS_AS(v_pi_exact(qs[0], {}, pol, env), BudgetExceededError);
}
