// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "stepwise/pipeline.hpp"
#include "stepwise/value.hpp"

using namespace stepwise;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

fs::path preset(const char* name) { return fs::path(STEPWISE_SOURCE_DIR) / "configs" / (std::string(name) + ".json"); }

fs::path scratch(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("stepwise-accept-" + tag + "-" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

/// Runs a preset end to end and returns its evaluation summary.
Json run_preset(const char* name, std::uint64_t seed) {
  auto cfg = load_config(preset(name));
  cfg.master_seed = seed;
  const auto dir = scratch(std::string(name) + "-" + std::to_string(seed));
  cfg.output_dir = dir.string();
  run_all(cfg, {workers(), nullptr});
  auto summary = read_json(dir / "eval" / "summary.json", nullptr);
  fs::remove_all(dir);
  return summary;
}

double mean_of(const std::vector<Json>& runs, const std::function<double(const Json&)>& get) {
  double s = 0.0;
  for (const auto& r : runs) s += get(r);
  return s / static_cast<double>(runs.size());
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

PolicyParams easy_student() {
  PolicyParams p;
  p.chain_skill = {0.95, 0.95, 0.9, 0.8};
  return p;
}

Verdict label_agreement() {
  const auto t0 = Clock::now();
  EnvConfig env;
  auto pol = easy_student();
  auto qs = generate_tasks(101, Family::Chain, Difficulty::Easy, 2000, env);
  auto qi = index_questions(qs);
  auto orm = build_orm_dataset(qs, pol, env, 8, 101, workers());
  auto raw = build_sorm_dataset(qs, orm.traces, pol, env, 8, 101, workers());
  PostprocessOptions opts;
  opts.balance = false;
  std::vector<LabelAgreement> rows;
  for (std::size_t k : {1, 2, 4, 8})
    rows.push_back(sorm_label_agreement(postprocess_sorm(with_verifier_budget(raw, k), qi, opts, 0).samples, qi, env));
  bool decreasing = true;
  for (std::size_t i = 1; i < rows.size(); ++i)
    decreasing = decreasing && rows[i].false_negative_rate < rows[i - 1].false_negative_rate;
  const double secs = seconds_since(t0);
  return {rows.back().agreement >= 0.90 && decreasing && secs < 120,
          fmt("agreement@8=%.4f (n=%zu); FNR K=1,2,4,8: %.4f %.4f %.4f %.4f; %.1fs", rows.back().agreement,
              rows.back().samples, rows[0].false_negative_rate, rows[1].false_negative_rate,
              rows[2].false_negative_rate, rows[3].false_negative_rate, secs)};
}

Verdict orm_tracks_v_pi() {
  const auto t0 = Clock::now();
  EnvConfig env;
  auto pol = easy_student();
  auto train = generate_tasks(202, Family::Chain, Difficulty::Easy, 1000, env);
  auto test = generate_tasks(203, Family::Chain, Difficulty::Easy, 300, env);
  for (auto& q : test) q.id = "held-" + q.id;
  auto data = build_orm_dataset(train, pol, env, 32, 202, workers());
  auto est = fit_orm(data.samples, index_questions(train), {});

  auto held = build_orm_dataset(test, pol, env, 4, 204, workers());
  auto tqi = index_questions(test);
  double err = 0.0;
  for (const auto& s : held.samples) {
    const auto& q = lookup(tqi, s.question_id);
    err += std::fabs(est.predict(q, s.prefix) - v_pi_exact(q, s.prefix, pol, env));
  }
  err /= static_cast<double>(held.samples.size());
  const double secs = seconds_since(t0);
  return {data.samples.size() >= 100000 && err <= 0.05 && secs < 300,
          fmt("train prefixes=%zu, held-out prefixes=%zu, mean |predict - v_pi|=%.4f; %.1fs", data.samples.size(),
              held.samples.size(), err, secs)};
}

Verdict postprocess_properties() {
  EnvConfig env;
  std::size_t samples = 0, violations = 0;
  for (auto fam : {Family::Chain, Family::Countdown}) {
    auto qs = generate_tasks(303, fam, Difficulty::Hard, 400, env);
    auto qi = index_questions(qs);
    PolicyParams pol;
    pol.chain_skill = {0.9, 0.9, 0.8, 0.5};
    auto orm = build_orm_dataset(qs, pol, env, 8, 303, workers());
    auto raw = build_sorm_dataset(qs, orm.traces, pol, env, 8, 303, workers());
    samples += raw.size();

    std::size_t inconsistent = 0;
    for (const auto& s : raw)
      for (const auto& v : s.verifiers) inconsistent += !consistency_check(lookup(qi, s.question_id), s.prefix, v.trace);

    auto pre = postprocess_sorm(raw, qi, {true, true, false}, 9);
    violations += pre.stats.discarded_rollouts != inconsistent;
    std::map<std::string, std::vector<std::pair<std::size_t, int>>> by_trace;
    for (const auto& s : pre.samples) by_trace[s.source_trace_id].emplace_back(s.depth(), s.label);
    for (auto& [id, v] : by_trace) {
      std::sort(v.begin(), v.end());
      for (std::size_t i = 1; i < v.size(); ++i) violations += v[i].second > v[i - 1].second;
    }

    auto full = postprocess_sorm(raw, qi, {true, true, true}, 9);
    std::map<std::size_t, std::pair<long, long>> depth;
    for (const auto& s : full.samples) (s.label ? depth[s.depth()].first : depth[s.depth()].second) += 1;
    for (const auto& [d, pn] : depth) violations += std::labs(pn.first - pn.second) > 1;
  }
  return {samples >= 10000 && violations == 0, fmt("samples=%zu, violations=%zu", samples, violations)};
}

// Independent recomputation of the dyadic two-candidate fixture.
Verdict rerank_fixture(const std::vector<Json>& hard) {
  const std::vector<double> a{0.75, 0.5, 0.625}, b{0.5, 0.875};
  auto independent = [](const std::vector<double>& s, const std::string& name) {
    const double L = static_cast<double>(s.size());
    double acc = name == "product" ? 1.0 : 0.0;
    if (name == "final") return s.back();
    if (name == "min") return *std::min_element(s.begin(), s.end());
    if (name == "penultimate_mean") return (s[s.size() - 2] - s.back()) / 2;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double i = static_cast<double>(j + 1);
      if (name == "mean") acc += s[j] / L;
      if (name == "product") acc *= s[j];
      if (name == "weighted_mean") acc += s[j] / (L - i + 1);
    }
    return acc;
  };
  // Expected values worked by hand.
  const std::map<std::string, std::pair<double, double>> by_hand{
      {"final", {0.625, 0.875}},         {"mean", {0.625, 0.6875}}, {"weighted_mean", {1.125, 1.125}},
      {"min", {0.5, 0.5}},               {"product", {0.234375, 0.4375}},
      {"penultimate_mean", {-0.0625, -0.1875}}};
  bool exact = true;
  for (auto st : kAllStrategies) {
    const std::string name(to_string(st));
    const double la = aggregate_scores(a, st, 0.0), lb = aggregate_scores(b, st, 0.0);
    exact = exact && la == independent(a, name) && lb == independent(b, name) && la == by_hand.at(name).first &&
            lb == by_hand.at(name).second;
  }
  exact = exact && aggregate_scores(a, RerankStrategy::WeightedMean, 0.0, {true}) == 0.125 &&
          aggregate_scores(b, RerankStrategy::WeightedMean, 0.0, {true}) == -0.875;

  bool all_six = true;
  for (const auto& r : hard)
    for (const auto& [est, row] : r.at("rerank").items())
      for (auto st : kAllStrategies) all_six = all_six && row.at("strategies").contains(std::string(to_string(st)));
  const double fin = mean_of(hard, [](const Json& r) { return r["rerank"]["orm"]["strategies"]["final"].get<double>(); });
  const double wm =
      mean_of(hard, [](const Json& r) { return r["rerank"]["orm"]["strategies"]["weighted_mean"].get<double>(); });
  return {exact && all_six && fin >= wm,
          fmt("fixture exact=%s, six strategies reported=%s, HARD final=%.4f weighted_mean=%.4f", exact ? "yes" : "no",
              all_six ? "yes" : "no", fin, wm)};
}

Verdict determinism() {
  const auto t0 = Clock::now();
  auto cfg = load_config(preset("smoke"));
  const auto d1 = scratch("smoke-1"), d8 = scratch("smoke-8");
  cfg.output_dir = d1.string();
  run_all(cfg, {1, nullptr});
  const double secs = seconds_since(t0);
  cfg.output_dir = d8.string();
  run_all(cfg, {8, nullptr});
  const auto m1 = load_manifest(d1), m8 = load_manifest(d8);
  std::size_t files = 0, differ = 0;
  for (const auto& [stage, rec] : m1.stages) {
    const auto& other = m8.stages.at(stage).artifacts;
    for (const auto& [rel, hash] : rec.artifacts) {
      ++files;
      auto it = other.find(rel);
      differ += it == other.end() || it->second != hash;
    }
  }
  const bool audited = audit_run(d1).ok();
  fs::remove_all(d1);
  fs::remove_all(d8);
  return {files > 0 && differ == 0 && m1.stages.size() == m8.stages.size() && audited && secs < 600,
          fmt("artifacts=%zu, differing=%zu, audit=%s, single-worker run %.1fs", files, differ, audited ? "ok" : "failed",
              secs)};
}

}  // namespace

int main() {
  std::vector<std::pair<int, Verdict>> results;
  auto report = [&](int id, Verdict v) {
    std::printf("%s criterion %d: %s\n", v.pass ? "PASS" : "FAIL", id, v.detail.c_str());
    std::fflush(stdout);
    results.emplace_back(id, std::move(v));
  };
  auto guarded = [&](int id, const std::function<Verdict()>& fn) {
    try {
      report(id, fn());
    } catch (const std::exception& e) {
      report(id, {false, std::string("threw: ") + e.what()});
    }
  };

  guarded(1, label_agreement);
  guarded(2, orm_tracks_v_pi);

  std::vector<Json> hard, easy;
  const auto t0 = Clock::now();
  try {
    for (std::uint64_t s = 1; s <= 5; ++s) hard.push_back(run_preset("hard", s));
    for (std::uint64_t s = 1; s <= 5; ++s) easy.push_back(run_preset("easy", s));
  } catch (const std::exception& e) {
    std::printf("pipeline runs failed: %s\n", e.what());
  }
  std::printf("(ran %zu HARD and %zu EASY pipelines in %.1fs)\n", hard.size(), easy.size(), seconds_since(t0));
  const bool have_runs = hard.size() == 5 && easy.size() == 5;
  auto on_runs = [&](int id, const std::function<Verdict()>& fn) {
    if (!have_runs) return report(id, {false, "pipeline runs unavailable"});
    guarded(id, fn);
  };
  auto est = [](const char* name, const char* field) {
    return [=](const Json& r) { return r["estimators"][name][field].get<double>(); };
  };

  on_runs(3, [&] {
    const double hard_gap = mean_of(hard, est("sorm", "step_accuracy")) - mean_of(hard, est("orm", "step_accuracy"));
    const double easy_gap = mean_of(easy, est("sorm", "step_accuracy")) - mean_of(easy, est("orm", "step_accuracy"));
    return Verdict{hard_gap >= 0.03 && easy_gap < hard_gap,
                   fmt("HARD step accuracy SORM-ORM=%+.4f (ORM %.4f, SORM %.4f); EASY gap=%+.4f", hard_gap,
                       mean_of(hard, est("orm", "step_accuracy")), mean_of(hard, est("sorm", "step_accuracy")),
                       easy_gap)};
  });
  on_runs(4, [&] {
    const double o = mean_of(hard, est("orm", "final_accuracy")), s = mean_of(hard, est("sorm", "final_accuracy"));
    return Verdict{o >= s - 0.01, fmt("HARD final-answer accuracy ORM=%.4f SORM=%.4f", o, s)};
  });
  on_runs(5, [&] {
    auto fix = [&](const char* mode) {
      return mean_of(hard, [=](const Json& r) { return r["refinement"][mode]["fix_rate"].get<double>(); });
    };
    const double g = fix("global"), ls = fix("local_sorm"), lo = fix("local_orm");
    const double u =
        mean_of(hard, [](const Json& r) { return r["complementarity"]["global+local_sorm"]["union_fix"].get<double>(); });
    return Verdict{u - std::max(g, ls) >= 0.03 && ls >= lo,
                   fmt("fix rates: global=%.4f local+SORM=%.4f combined=%.4f local+ORM=%.4f", g, ls, u, lo)};
  });
  on_runs(6, [&] {
    bool breaks = true;
    for (const auto& r : hard) breaks = breaks && r["refinement"]["global"]["break_rate"].get<double>() > 0.0;
    const double draft = mean_of(hard, [](const Json& r) { return r["draft"]["accuracy"].get<double>(); });
    const double all =
        mean_of(hard, [](const Json& r) { return r["refinement"]["global"]["accuracy_all_drafts"].get<double>(); });
    const double inc =
        mean_of(hard, [](const Json& r) { return r["refinement"]["global"]["accuracy_incorrect_only"].get<double>(); });
    const double br = mean_of(hard, [](const Json& r) { return r["refinement"]["global"]["break_rate"].get<double>(); });
    return Verdict{breaks && all - draft < inc - draft,
                   fmt("break_rate=%.4f; gain refining all drafts=%+.4f, incorrect only=%+.4f", br, all - draft,
                       inc - draft)};
  });
  on_runs(7, [&] {
    bool dominated = true;
    for (const auto& r : hard)
      dominated = dominated && r["triple"]["pointwise_dominated"].get<bool>() &&
                  r["triple"]["reranked"].get<double>() <= r["triple"]["oracle"].get<double>();
    const double draft = mean_of(hard, [](const Json& r) { return r["triple"]["draft"].get<double>(); });
    const double rr = mean_of(hard, [](const Json& r) { return r["triple"]["reranked"].get<double>(); });
    const double oracle = mean_of(hard, [](const Json& r) { return r["triple"]["oracle"].get<double>(); });
    const double bo3 = mean_of(hard, [](const Json& r) { return r["triple"]["bo3"].get<double>(); });
    return Verdict{rr >= draft + 0.03 && dominated,
                   fmt("draft=%.4f reranked=%.4f oracle=%.4f Bo3=%.4f pointwise dominance=%s", draft, rr, oracle, bo3,
                       dominated ? "yes" : "no")};
  });
  guarded(8, postprocess_properties);
  on_runs(9, [&] {
    const double c = mean_of(hard, [](const Json& r) { return r["rerank"]["orm"]["strategies"]["final"].get<double>(); });
    const double k =
        mean_of(hard, [](const Json& r) { return r["rerank"]["contrastive"]["strategies"]["final"].get<double>(); });
    bool fitted = true;
    for (const auto& r : hard) fitted = fitted && r["rerank"]["contrastive"]["kind"] == "contrastive";
    return Verdict{c >= k && fitted, fmt("rerank accuracy classifier=%.4f contrastive=%.4f", c, k)};
  });
  on_runs(10, [&] {
    auto cell = [&](const char* a, const char* b) {
      return mean_of(hard, [=](const Json& r) { return r["cross_grid"][a][b].get<double>(); });
    };
    const double aa = cell("A", "A"), ab = cell("A", "B"), ba = cell("B", "A"), bb = cell("B", "B");
    return Verdict{aa >= ab && bb >= ba, fmt("grid rows (trained on A | B): [%.4f %.4f] [%.4f %.4f]", aa, ab, ba, bb)};
  });
  on_runs(11, [&] { return rerank_fixture(hard); });
  guarded(12, determinism);

  std::sort(results.begin(), results.end(), [](auto& x, auto& y) { return x.first < y.first; });
  std::size_t passed = 0;
  for (const auto& [id, v] : results) passed += v.pass;
  std::printf("%zu/%zu criteria passed\n", passed, results.size());
  return passed == results.size() ? 0 : 1;
}
