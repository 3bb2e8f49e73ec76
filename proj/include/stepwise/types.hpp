#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stepwise {

/// Base class for every failure the library reports. Derived types name the
/// failure so callers (and the CLI exit path) can tell them apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Family : std::uint8_t { Chain, Countdown };
enum class Difficulty : std::uint8_t { Easy, Hard };
enum class OpKind : std::uint8_t { Add, Sub, Mul, Div };

inline constexpr OpKind kAllOps[] = {OpKind::Add, OpKind::Sub, OpKind::Mul, OpKind::Div};

std::string_view to_string(Family f);
std::string_view to_string(Difficulty d);
std::string_view to_string(OpKind k);
char op_symbol(OpKind k);
Family family_from_string(std::string_view s);
Difficulty difficulty_from_string(std::string_view s);
OpKind op_from_string(std::string_view s);

struct ChainOp {
  OpKind kind = OpKind::Add;
  std::int64_t operand = 1;
  friend bool operator==(const ChainOp&, const ChainOp&) = default;
};

struct ChainSpec {
  std::int64_t start = 0;
  std::vector<ChainOp> ops;
  friend bool operator==(const ChainSpec&, const ChainSpec&) = default;
};

struct CountdownSpec {
  std::vector<std::int64_t> numbers;
  std::int64_t target = 0;
  friend bool operator==(const CountdownSpec&, const CountdownSpec&) = default;
};

struct Question {
  std::string id;
  Family family = Family::Chain;
  std::optional<ChainSpec> chain;
  std::optional<CountdownSpec> countdown;
  std::int64_t answer = 0;

  friend bool operator==(const Question&, const Question&) = default;
};

/// One atomic reasoning step. Chain steps read (lhs, op, operand, result);
/// countdown steps read (pick_a, op, pick_b, result).
struct Step {
  std::int64_t a = 0;
  OpKind op = OpKind::Add;
  std::int64_t b = 0;
  std::int64_t result = 0;

  friend bool operator==(const Step&, const Step&) = default;
  friend auto operator<=>(const Step&, const Step&) = default;
};

std::string describe(const Step& s);

struct Trace {
  std::string question_id;
  std::vector<Step> steps;
  std::int64_t final_answer = 0;
  bool is_complete = false;

  friend bool operator==(const Trace&, const Trace&) = default;
};

struct Prefix {
  std::string question_id;
  std::vector<Step> steps;

  std::size_t depth() const { return steps.size(); }
  friend bool operator==(const Prefix&, const Prefix&) = default;
};

struct EnvConfig {
  int max_steps = 10;
  std::vector<std::int64_t> perturbation_support{1, -1, 2, -2};
  /// When false, a chain state that has left the canonical path can never
  /// return to it (perturbed values are tagged off-path).
  bool allow_cancellation = false;
  /// Upper bound on distinct states visited by the exact value DP.
  std::size_t value_budget = 2'000'000;

  void validate() const;
  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

}  // namespace stepwise
