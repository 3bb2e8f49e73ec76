#include "stepwise/env.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "stepwise/rng.hpp"

namespace stepwise {

namespace {

constexpr int kGenerationRetries = 1000;
constexpr std::int64_t kValueBound = 1'000'000;

std::int64_t find_or_throw(std::string_view s, std::initializer_list<std::string_view> names) {
  std::int64_t i = 0;
  for (auto n : names) {
    if (n == s) return i;
    ++i;
  }
  throw Error("unknown enum value '" + std::string(s) + "'");
}

void remove_one(std::vector<std::int64_t>& pool, std::int64_t v) {
  auto it = std::lower_bound(pool.begin(), pool.end(), v);
  pool.erase(it);
}

void insert_sorted(std::vector<std::int64_t>& pool, std::int64_t v) {
  pool.insert(std::upper_bound(pool.begin(), pool.end(), v), v);
}

bool has_picks(const std::vector<std::int64_t>& pool, std::int64_t a, std::int64_t b) {
  const auto ca = std::count(pool.begin(), pool.end(), a);
  if (a == b) return ca >= 2;
  return ca >= 1 && std::count(pool.begin(), pool.end(), b) >= 1;
}

}  // namespace

std::string_view to_string(Family f) { return f == Family::Chain ? "chain" : "countdown"; }
std::string_view to_string(Difficulty d) { return d == Difficulty::Easy ? "easy" : "hard"; }
std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
  }
  return "?";
}
char op_symbol(OpKind k) {
  switch (k) {
    case OpKind::Add: return '+';
    case OpKind::Sub: return '-';
    case OpKind::Mul: return '*';
    case OpKind::Div: return '/';
  }
  return '?';
}
Family family_from_string(std::string_view s) {
  return static_cast<Family>(find_or_throw(s, {"chain", "countdown"}));
}
Difficulty difficulty_from_string(std::string_view s) {
  return static_cast<Difficulty>(find_or_throw(s, {"easy", "hard"}));
}
OpKind op_from_string(std::string_view s) {
  return static_cast<OpKind>(find_or_throw(s, {"add", "sub", "mul", "div"}));
}

std::string describe(const Step& s) {
  std::ostringstream os;
  os << s.a << op_symbol(s.op) << s.b << '=' << s.result;
  return os.str();
}

void EnvConfig::validate() const {
  if (max_steps <= 0) throw Error("env.max_steps must be positive");
  if (perturbation_support.empty()) throw Error("env.perturbation_support must be nonempty");
  for (auto d : perturbation_support)
    if (d == 0) throw Error("env.perturbation_support must not contain 0");
  auto sorted = perturbation_support;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw Error("env.perturbation_support has duplicate offsets");
  if (value_budget == 0) throw Error("env.value_budget must be positive");
}

std::optional<std::int64_t> exact_result(OpKind op, std::int64_t a, std::int64_t b) {
  std::int64_t r = 0;
  switch (op) {
    case OpKind::Add:
      if (__builtin_add_overflow(a, b, &r)) return std::nullopt;
      return r;
    case OpKind::Sub:
      if (__builtin_sub_overflow(a, b, &r)) return std::nullopt;
      return r;
    case OpKind::Mul:
      if (__builtin_mul_overflow(a, b, &r)) return std::nullopt;
      return r;
    case OpKind::Div:
      if (b == 0 || a % b != 0) return std::nullopt;
      return a / b;
  }
  return std::nullopt;
}

bool arithmetic_ok(const Step& s) {
  const auto r = exact_result(s.op, s.a, s.b);
  return r && *r == s.result;
}

State initial_state(const Question& q) {
  State s;
  if (q.family == Family::Chain) {
    s.value = q.chain->start;
    s.last = s.value;
  } else {
    s.pool = q.countdown->numbers;
    std::sort(s.pool.begin(), s.pool.end());
  }
  return s;
}

void advance(const Question& q, State& s, const Step& step) {
  if (q.family == Family::Chain) {
    s.value = step.result;
  } else {
    remove_one(s.pool, step.a);
    remove_one(s.pool, step.b);
    insert_sorted(s.pool, step.result);
    s.reached = step.result == q.countdown->target;
  }
  s.last = step.result;
  ++s.depth;
}

bool is_finished(const Question& q, const State& s) {
  if (q.family == Family::Chain) return s.depth >= q.chain->ops.size();
  return s.reached || s.pool.size() <= 1;
}

std::optional<std::string> malformed_reason(const Question& q, const State& s, const Step& step,
                                            const EnvConfig& cfg) {
  if (is_finished(q, s)) return "trace already terminated";
  if (s.depth >= static_cast<std::size_t>(cfg.max_steps)) return "step cap exceeded";
  if (q.family == Family::Chain) {
    const auto& op = q.chain->ops[s.depth];
    if (step.a != s.value)
      return "lhs mismatch: expected " + std::to_string(s.value) + ", got " + std::to_string(step.a);
    if (step.op != op.kind || step.b != op.operand) return "operation does not match question";
    return std::nullopt;
  }
  if (!has_picks(s.pool, step.a, step.b)) return "picks not present in current numbers";
  return std::nullopt;
}

State replay(const Question& q, std::span<const Step> steps, const EnvConfig& cfg) {
  State s = initial_state(q);
  for (const auto& step : steps) {
    if (auto why = malformed_reason(q, s, step, cfg))
      throw Error("malformed step " + describe(step) + " for " + q.id + ": " + *why);
    advance(q, s, step);
  }
  return s;
}

std::int64_t chain_canonical_value(const ChainSpec& spec, std::size_t depth) {
  std::int64_t v = spec.start;
  for (std::size_t i = 0; i < depth && i < spec.ops.size(); ++i)
    v = exact_result(spec.ops[i].kind, v, spec.ops[i].operand).value_or(v);
  return v;
}

std::vector<Step> countdown_actions(std::span<const std::int64_t> pool) {
  std::vector<std::int64_t> vals(pool.begin(), pool.end());
  std::sort(vals.begin(), vals.end(), std::greater<>());
  std::vector<Step> out;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (i > 0 && vals[i] == vals[i - 1]) continue;
    for (std::size_t j = i + 1; j < vals.size(); ++j) {
      if (j > i + 1 && vals[j] == vals[j - 1]) continue;
      const std::int64_t a = vals[i], b = vals[j];
      for (OpKind op : kAllOps) {
        if (op == OpKind::Div && b <= 1) continue;
        auto r = exact_result(op, a, b);
        if (!r || *r <= 0) continue;
        out.push_back(Step{a, op, b, *r});
      }
    }
  }
  return out;
}

namespace {

bool reachable_rec(std::vector<std::int64_t>& pool, std::int64_t target, int steps_left,
                   std::map<std::pair<std::vector<std::int64_t>, int>, bool>& memo) {
  if (steps_left <= 0 || pool.size() < 2) return false;
  auto key = std::make_pair(pool, steps_left);
  if (auto it = memo.find(key); it != memo.end()) return it->second;
  bool ok = false;
  for (const auto& act : countdown_actions(pool)) {
    if (act.result == target) {
      ok = true;
      break;
    }
    auto next = pool;
    remove_one(next, act.a);
    remove_one(next, act.b);
    insert_sorted(next, act.result);
    if (reachable_rec(next, target, steps_left - 1, memo)) {
      ok = true;
      break;
    }
  }
  memo.emplace(std::move(key), ok);
  return ok;
}

bool solve_rec(std::vector<std::int64_t>& pool, std::int64_t target, int steps_left,
               std::vector<Step>& path) {
  if (steps_left <= 0 || pool.size() < 2) return false;
  for (const auto& act : countdown_actions(pool)) {
    path.push_back(act);
    if (act.result == target) return true;
    auto next = pool;
    remove_one(next, act.a);
    remove_one(next, act.b);
    insert_sorted(next, act.result);
    if (solve_rec(next, target, steps_left - 1, path)) return true;
    path.pop_back();
  }
  return false;
}

}  // namespace

bool countdown_reachable(std::span<const std::int64_t> pool, std::int64_t target, int steps_left) {
  std::vector<std::int64_t> p(pool.begin(), pool.end());
  std::sort(p.begin(), p.end());
  std::map<std::pair<std::vector<std::int64_t>, int>, bool> memo;
  return reachable_rec(p, target, steps_left, memo);
}

std::optional<std::vector<Step>> countdown_solve(std::span<const std::int64_t> pool,
                                                 std::int64_t target, int steps_left) {
  std::vector<std::int64_t> p(pool.begin(), pool.end());
  std::sort(p.begin(), p.end());
  std::vector<Step> path;
  if (solve_rec(p, target, steps_left, path)) return path;
  return std::nullopt;
}

namespace {

std::optional<Question> try_chain(Rng& rng, Difficulty diff) {
  const bool hard = diff == Difficulty::Hard;
  const auto n_ops = hard ? rng.uniform_int(4, 8) : rng.uniform_int(2, 3);
  // Cumulative kind weights: add, sub, mul, div.
  const double w_easy[] = {0.35, 0.25, 0.30, 0.10};
  const double w_hard[] = {0.25, 0.20, 0.30, 0.25};
  const double* w = hard ? w_hard : w_easy;

  ChainSpec spec;
  spec.start = hard ? rng.uniform_int(2, 20) : rng.uniform_int(2, 12);
  std::int64_t v = spec.start;
  bool has_div = false;
  for (std::int64_t i = 0; i < n_ops; ++i) {
    double u = rng.uniform();
    int k = 0;
    while (k < 3 && u >= w[k]) {
      u -= w[k];
      ++k;
    }
    auto kind = static_cast<OpKind>(k);
    std::int64_t operand = 1;
    if (kind == OpKind::Div) {
      std::vector<std::int64_t> divisors;
      for (std::int64_t d = 2; d <= 9; ++d)
        if (v % d == 0 && v / d != 0) divisors.push_back(d);
      if (divisors.empty()) {
        kind = OpKind::Mul;
      } else {
        operand = divisors[rng.index(divisors.size())];
        has_div = true;
      }
    }
    if (kind == OpKind::Sub) {
      operand = rng.uniform_int(1, 20);
      if (v - operand <= 0) kind = OpKind::Add;
    } else if (kind == OpKind::Add) {
      operand = rng.uniform_int(1, 20);
    }
    if (kind == OpKind::Mul) operand = hard ? rng.uniform_int(2, 9) : rng.uniform_int(2, 5);
    auto r = exact_result(kind, v, operand);
    if (!r || *r > kValueBound || *r <= 0) return std::nullopt;
    v = *r;
    spec.ops.push_back({kind, operand});
  }
  if (hard && !has_div) return std::nullopt;
  Question q;
  q.family = Family::Chain;
  q.answer = v;
  q.chain = std::move(spec);
  return q;
}

std::optional<Question> try_countdown(Rng& rng, Difficulty diff, const EnvConfig& cfg) {
  const bool hard = diff == Difficulty::Hard;
  const auto n = hard ? rng.uniform_int(4, 5) : rng.uniform_int(2, 3);
  CountdownSpec spec;
  for (std::int64_t i = 0; i < n; ++i) spec.numbers.push_back(rng.uniform_int(1, hard ? 13 : 10));
  std::sort(spec.numbers.begin(), spec.numbers.end());

  // Random walk over legal actions; the result of a late step becomes the target.
  auto pool = spec.numbers;
  const auto min_steps = (n + 1) / 2;
  std::int64_t target = 0;
  for (std::int64_t step = 0; pool.size() >= 2; ++step) {
    auto acts = countdown_actions(pool);
    if (acts.empty()) break;
    const auto& act = acts[rng.index(acts.size())];
    remove_one(pool, act.a);
    remove_one(pool, act.b);
    insert_sorted(pool, act.result);
    target = act.result;
    if (step + 1 >= min_steps && rng.uniform() < 0.5) break;
  }
  if (target < 2 || target > 999) return std::nullopt;
  if (std::find(spec.numbers.begin(), spec.numbers.end(), target) != spec.numbers.end())
    return std::nullopt;
  spec.target = target;
  // The walk proves solvability; the exhaustive check is still run.
  if (!countdown_reachable(spec.numbers, target, cfg.max_steps)) return std::nullopt;
  Question q;
  q.family = Family::Countdown;
  q.answer = target;
  q.countdown = std::move(spec);
  return q;
}

}  // namespace

std::vector<Question> generate_tasks(std::uint64_t seed, Family family, Difficulty difficulty,
                                     std::size_t count, const EnvConfig& cfg) {
  if (count == 0) throw Error("generate_tasks: count must be positive");
  cfg.validate();
  std::vector<Question> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng{stream::kGenerate, seed, static_cast<std::uint64_t>(family),
            static_cast<std::uint64_t>(difficulty), i};
    std::optional<Question> q;
    for (int attempt = 0; attempt < kGenerationRetries && !q; ++attempt) {
      q = family == Family::Chain ? try_chain(rng, difficulty) : try_countdown(rng, difficulty, cfg);
      if (q && family == Family::Chain && q->chain->ops.size() > static_cast<std::size_t>(cfg.max_steps))
        q.reset();
    }
    if (!q)
      throw GenerationError("generation retry budget exhausted for family=" +
                            std::string(to_string(family)) + " difficulty=" +
                            std::string(to_string(difficulty)) + " max_steps=" +
                            std::to_string(cfg.max_steps));
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s-%s-%llu-%05zu", std::string(to_string(family)).c_str(),
                  std::string(to_string(difficulty)).c_str(), static_cast<unsigned long long>(seed), i);
    q->id = buf;
    out.push_back(std::move(*q));
  }
  return out;
}

std::variant<Prefix, Rejection> apply_step(const Question& q, const Prefix& prefix, const Step& step,
                                           const EnvConfig& cfg) {
  if (prefix.question_id != q.id) return Rejection{"prefix belongs to another question"};
  State s;
  try {
    s = replay(q, prefix.steps, cfg);
  } catch (const Error& e) {
    return Rejection{e.what()};
  }
  if (auto why = malformed_reason(q, s, step, cfg)) return Rejection{*why};
  Prefix out = prefix;
  out.steps.push_back(step);
  return out;
}

Trace make_trace(const Question& q, std::vector<Step> steps, const EnvConfig& cfg) {
  const State s = replay(q, steps, cfg);
  Trace t;
  t.question_id = q.id;
  t.is_complete = is_finished(q, s);
  t.final_answer = s.last;
  t.steps = std::move(steps);
  return t;
}

Trace canonical_trace(const Question& q, const EnvConfig& cfg) {
  std::vector<Step> steps;
  if (q.family == Family::Chain) {
    std::int64_t v = q.chain->start;
    for (const auto& op : q.chain->ops) {
      const auto r = *exact_result(op.kind, v, op.operand);
      steps.push_back({v, op.kind, op.operand, r});
      v = r;
    }
  } else {
    auto sol = countdown_solve(q.countdown->numbers, q.countdown->target, cfg.max_steps);
    if (!sol) throw Error("countdown question " + q.id + " has no solution");
    steps = std::move(*sol);
  }
  return make_trace(q, std::move(steps), cfg);
}

bool check_final(const Question& q, const Trace& trace) {
  if (!trace.is_complete)
    throw IncompleteTraceError("check_final: trace for " + q.id + " is truncated");
  if (q.family == Family::Chain) return trace.final_answer == q.answer;
  return trace.final_answer == q.countdown->target;
}

bool is_correct(const Question& q, const Trace& trace) {
  return trace.is_complete && check_final(q, trace);
}

int v_star(const Question& q, std::span<const Step> steps, const EnvConfig& cfg) {
  for (const auto& s : steps)
    if (!arithmetic_ok(s)) return 0;
  const State s = replay(q, steps, cfg);
  const int left = cfg.max_steps - static_cast<int>(s.depth);
  if (q.family == Family::Chain) {
    // Valid steps keep the state on the canonical path; the rest of the
    // canonical path must fit under the step cap.
    const auto remaining = static_cast<int>(q.chain->ops.size() - s.depth);
    return remaining <= left ? 1 : 0;
  }
  if (s.reached) return 1;
  return countdown_reachable(s.pool, q.countdown->target, left) ? 1 : 0;
}

std::optional<std::size_t> first_invalid_step(const Question& q, std::span<const Step> steps,
                                              const EnvConfig& cfg) {
  for (std::size_t i = 1; i <= steps.size(); ++i)
    if (v_star(q, steps.first(i), cfg) == 0) return i;
  return std::nullopt;
}

}  // namespace stepwise
