#include "stepwise/features.hpp"

#include <algorithm>
#include <cmath>

#include "stepwise/env.hpp"

namespace stepwise {

namespace {

std::int64_t mod9(std::int64_t x) {
  const auto r = x % 9;
  return r < 0 ? r + 9 : r;
}

std::string distance_bucket(std::int64_t d) {
  if (d == 0) return "0";
  if (d <= 2) return "1-2";
  if (d <= 5) return "3-5";
  if (d <= 10) return "6-10";
  if (d <= 50) return "11-50";
  return "51+";
}

void chain_features(const Question& q, std::span<const Step> prefix, FeatureSet set,
                    std::vector<std::string>& out) {
  const auto& ops = q.chain->ops;
  const auto depth = prefix.size();
  const std::int64_t value = prefix.empty() ? q.chain->start : prefix.back().result;

  out.push_back("fam=chain");
  out.push_back("depth=" + std::to_string(depth));
  const auto left = depth < ops.size() ? ops.size() - depth : 0;
  out.push_back("left=" + std::to_string(left));
  int counts[4] = {0, 0, 0, 0};
  std::string seq;
  for (std::size_t i = depth; i < ops.size(); ++i) {
    ++counts[static_cast<int>(ops[i].kind)];
    seq += op_symbol(ops[i].kind);
  }
  for (OpKind k : kAllOps)
    out.push_back("rem_" + std::string(to_string(k)) + "=" + std::to_string(counts[static_cast<int>(k)]));
  if (left > 0) {
    const auto& next = ops[depth];
    out.push_back("next=" + std::string(to_string(next.kind)));
    if (next.kind == OpKind::Div)
      out.push_back(std::string("div_even=") + (value % next.operand == 0 ? "1" : "0"));
  } else {
    out.push_back("next=none");
  }
  const bool nonpos = std::any_of(prefix.begin(), prefix.end(), [](const Step& st) { return st.result <= 0; });
  out.push_back(std::string("seen_nonpos=") + (nonpos ? "1" : "0"));
  if (!prefix.empty()) out.push_back(std::string("last_ck=") + (checksum_ok(prefix.back()) ? "1" : "0"));

  if (set == FeatureSet::StateComplete) {
    const bool all_ok = std::all_of(prefix.begin(), prefix.end(), checksum_ok);
    const std::string flag = all_ok ? "1" : "0";
    out.push_back("all_ck=" + flag);
    out.push_back("ck" + flag + "|seq=" + seq);
    out.push_back("ck" + flag + "|left=" + std::to_string(left));
  }
}

void countdown_features(const Question& q, std::span<const Step> prefix, FeatureSet set,
                        std::vector<std::string>& out) {
  State s = initial_state(q);
  for (const auto& st : prefix) advance(q, s, st);
  const auto target = q.countdown->target;

  out.push_back("fam=countdown");
  out.push_back("depth=" + std::to_string(prefix.size()));
  out.push_back("nleft=" + std::to_string(s.pool.size()));
  out.push_back(std::string("reached=") + (s.reached ? "1" : "0"));
  std::int64_t closest = INT64_MAX;
  for (auto x : s.pool) closest = std::min(closest, std::abs(x - target));
  out.push_back("closest=" + distance_bucket(closest));
  bool one_step = false;
  for (const auto& a : countdown_actions(s.pool)) one_step = one_step || a.result == target;
  out.push_back(std::string("onestep=") + (one_step ? "1" : "0"));

  if (set == FeatureSet::StateComplete) {
    const std::string tag = s.reached ? "r" : (one_step ? "o" : "n");
    out.push_back("state=" + tag + "|nleft=" + std::to_string(s.pool.size()));
    out.push_back("state=" + tag + "|closest=" + distance_bucket(closest) + "|nleft=" +
                  std::to_string(s.pool.size()));
  }
}

}  // namespace

std::string_view to_string(FeatureSet f) {
  return f == FeatureSet::Structural ? "structural" : "state_complete";
}

FeatureSet feature_set_from_string(std::string_view s) {
  if (s == "structural") return FeatureSet::Structural;
  if (s == "state_complete") return FeatureSet::StateComplete;
  throw Error("unknown feature set '" + std::string(s) + "'");
}

std::string feature_version(FeatureSet f) { return std::string(to_string(f)) + "-v1"; }

bool checksum_ok(const Step& s) {
  switch (s.op) {
    case OpKind::Add: return mod9(s.a + s.b) == mod9(s.result);
    case OpKind::Sub: return mod9(s.a - s.b) == mod9(s.result);
    case OpKind::Mul: return mod9(mod9(s.a) * mod9(s.b)) == mod9(s.result);
    case OpKind::Div: return s.b != 0 && s.a % s.b == 0 && mod9(mod9(s.result) * mod9(s.b)) == mod9(s.a);
  }
  return false;
}

std::vector<std::string> extract_features(const Question& q, std::span<const Step> prefix, FeatureSet set) {
  std::vector<std::string> out;
  out.reserve(16);
  if (q.family == Family::Chain)
    chain_features(q, prefix, set, out);
  else
    countdown_features(q, prefix, set, out);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace stepwise
