#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pipeline_internal.hpp"
#include "stepwise/hash.hpp"

namespace stepwise {

namespace {

struct Auditor {
  AuditResult r;

  void expect(bool ok, const std::string& what) {
    r.checks.push_back(what);
    if (!ok) r.failures.push_back(what);
  }
  void close(const std::string& what, double got, const Json& want) {
    const double w = want.is_null() ? NAN : want.get<double>();
    const bool ok = std::fabs(got - w) <= 1e-12;
    std::ostringstream os;
    os << what << ": recount " << got << " vs summary " << w;
    expect(ok, os.str());
  }
};

double ratio(std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; }

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Highest aggregate wins; ties go to the lower priority rank.
std::size_t argmax_with_priority(const std::vector<double>& agg, const std::vector<int>& rank) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < agg.size(); ++i)
    if (agg[i] > agg[best] || (agg[i] == agg[best] && rank[i] < rank[best])) best = i;
  return best;
}

int provenance_rank(const std::string& p) {
  if (p == "draft") return 0;
  if (p == "local_refinement") return 1;
  if (p == "global_refinement") return 2;
  return 3;
}

}  // namespace

AuditResult audit_run(const std::filesystem::path& dir) {
  using namespace detail;
  Auditor a;

  const auto manifest = load_manifest(dir);
  a.expect(!manifest.config_hash.empty(), "manifest present");
  const auto config = load_config(dir / "config.json");
  a.expect(config_hash(config) == manifest.config_hash, "config.json matches the manifest config hash");
  for (const auto& [stage, rec] : manifest.stages) {
    const auto bad = verify_stage(dir, rec);
    a.expect(bad.empty(), "artifacts of " + std::string(to_string(stage)) + " intact" + (bad.empty() ? "" : ": " + bad));
  }
  if (!manifest.stages.count(Stage::Evaluate)) {
    a.expect(false, "evaluate stage complete");
    return a.r;
  }

  const auto s = read_json(dir / path::kSummary, schema::kSummary);
  const double T = s.at("threshold").get<double>();
  const auto test = load_questions(dir / path::kTest);
  const auto drafts = load_traces(dir / path::kDrafts);
  std::map<std::string, const Question*> qs;
  for (const auto& q : test) qs[q.id] = &q;

  // Post-processing and pair recounts from the raw datasets.
  {
    const auto stats = read_json(dir / path::kRmStats, schema::kStats);
    std::size_t total = 0, inconsistent = 0;
    const auto train = load_questions(dir / path::kTrain);
    const auto qi = index_questions(train);
    for (const auto& j : read_jsonl(dir / path::kSormRaw, schema::kSormSample)) {
      const auto smp = sorm_sample_from_json(j);
      const auto& q = lookup(qi, smp.question_id);
      for (const auto& v : smp.verifiers) {
        ++total;
        inconsistent += !consistency_check(q, smp.prefix, v.trace);
      }
    }
    a.expect(total == stats["sorm"]["total_rollouts"].get<std::size_t>(), "verifying rollout count");
    const std::size_t discarded = config.rm.postprocess.consistency ? inconsistent : 0;
    a.expect(discarded == stats["sorm"]["discarded_rollouts"].get<std::size_t>(), "discarded rollout recount");

    std::map<std::string, std::pair<std::size_t, std::size_t>> cls;
    for (const auto& t : load_source_traces(dir / path::kOrmTraces)) {
      if (!t.trace.is_complete) continue;
      auto& c = cls[t.trace.question_id];
      (t.correct ? c.first : c.second) += 1;
    }
    std::size_t expected = 0;
    for (const auto& [q, c] : cls) expected += std::min(c.first, c.second);
    std::set<std::string> used;
    std::size_t pairs = 0;
    bool disjoint = true;
    for (const auto& j : read_jsonl(dir / path::kPairs, schema::kContrastivePair)) {
      ++pairs;
      disjoint &= used.insert(j["good"].get<std::string>()).second;
      disjoint &= used.insert(j["bad"].get<std::string>()).second;
    }
    a.expect(pairs == expected, "contrastive pair count equals sum of min(pos, neg)");
    a.expect(disjoint, "no trace reused across contrastive pairs");
  }

  // Step predictions.
  {
    struct Acc {
      std::size_t tp = 0, fp = 0, tn = 0, fn = 0, nf = 0, final_ok = 0;
      std::map<std::string, std::vector<std::pair<double, int>>> by_q;
    };
    std::map<std::pair<std::string, std::string>, Acc> acc;
    for (const auto& j : read_jsonl(dir / path::kStepPredictions, schema::kStepPrediction)) {
      auto& c = acc[{j["estimator"].get<std::string>(), j["test_set"].get<std::string>()}];
      const int guess = j["predict"].get<double>() > T;
      const int truth = j["truth"].get<int>();
      if (guess && truth) ++c.tp;
      else if (guess) ++c.fp;
      else if (truth) ++c.fn;
      else ++c.tn;
      if (j["final_step"].get<bool>()) {
        ++c.nf;
        c.final_ok += guess == truth;
      }
      auto& v = c.by_q[j["question_id"].get<std::string>()];
      const auto depth = j["depth"].get<std::size_t>();
      if (v.size() < depth) v.resize(depth);
      v[depth - 1] = {j["predict"].get<double>(), truth};
    }
    for (const auto& [name, row] : s["estimators"].items()) {
      const auto& c = acc[{name, "A"}];
      const auto n = c.tp + c.fp + c.tn + c.fn;
      a.close(name + " step accuracy", ratio(c.tp + c.tn, n), row["step_accuracy"]);
      a.close(name + " final accuracy", ratio(c.final_ok, c.nf), row["final_accuracy"]);
      a.close(name + " false positive rate", ratio(c.fp, c.fp + c.tn), row["false_positive_rate"]);
      a.close(name + " false negative rate", ratio(c.fn, c.fn + c.tp), row["false_negative_rate"]);
      std::size_t hit = 0, bad = 0, hit_bad = 0;
      for (const auto& d : drafts) {
        std::optional<std::size_t> guess, truth;
        auto it = c.by_q.find(d.question_id);
        if (it != c.by_q.end())
          for (std::size_t i = 0; i < it->second.size(); ++i) {
            if (!guess && it->second[i].first <= T) guess = i + 1;
            if (!truth && it->second[i].second == 0) truth = i + 1;
          }
        hit += guess == truth;
        if (truth) {
          ++bad;
          hit_bad += guess == truth;
        }
      }
      a.close(name + " localization accuracy", ratio(hit, drafts.size()), row["localization_accuracy"]);
      a.close(name + " localization accuracy on incorrect drafts", ratio(hit_bad, bad),
              row["localization_accuracy_incorrect"]);
    }
    if (!s["cross_grid"].is_null()) {
      const char* est_for[] = {"orm", "orm_b"};
      const char* sets[] = {"A", "B"};
      for (int tr = 0; tr < 2; ++tr)
        for (int te = 0; te < 2; ++te) {
          const auto& c = acc[{est_for[tr], sets[te]}];
          a.close(std::string("cross grid ") + sets[tr] + "/" + sets[te],
                  ratio(c.tp + c.tn, c.tp + c.fp + c.tn + c.fn), s["cross_grid"][sets[tr]][sets[te]]);
        }
    }
  }

  // Drafts.
  {
    std::size_t ok = 0;
    for (const auto& d : drafts) ok += is_correct(*qs.at(d.question_id), d);
    a.close("draft accuracy", ratio(ok, drafts.size()), s["draft"]["accuracy"]);
  }

  // Refinement outcomes.
  {
    std::map<std::string, std::vector<Json>> runs;
    for (auto& j : read_jsonl(dir / path::kOutcomes, schema::kRefineOutcome))
      runs[j["run"].get<std::string>()].push_back(std::move(j));
    for (const auto& [label, row] : s["refinement"].items()) {
      const auto& outs = runs[label];
      std::size_t n = outs.size(), draft_ok = 0, all_ok = 0, only_ok = 0, bad = 0, fixed = 0, broken = 0, copied = 0,
                  refined = 0;
      for (const auto& o : outs) {
        const bool dc = o["draft_correct"].get<bool>(), c = o["correct"].get<bool>();
        draft_ok += dc;
        all_ok += c;
        copied += o["copied"].get<bool>();
        refined += o["refined"].get<bool>();
        if (dc) {
          ++only_ok;
          broken += !c;
        } else {
          ++bad;
          fixed += c;
          only_ok += c;
        }
      }
      a.close(label + " accuracy (all drafts)", ratio(all_ok, n), row["accuracy_all_drafts"]);
      a.close(label + " accuracy (incorrect only)", ratio(only_ok, n), row["accuracy_incorrect_only"]);
      a.close(label + " fix rate", ratio(fixed, bad), row["fix_rate"]);
      a.close(label + " break rate", ratio(broken, draft_ok), row["break_rate"]);
      a.close(label + " copy rate", ratio(copied, refined), row["copy_rate"]);
    }
    for (const auto& [pair, row] : s["complementarity"].items()) {
      const auto plus = pair.find('+');
      const auto& g = runs[pair.substr(0, plus)];
      const auto& l = runs[pair.substr(plus + 1)];
      std::size_t bad = 0, gf = 0, lf = 0, uf = 0;
      for (std::size_t i = 0; i < g.size() && i < l.size(); ++i) {
        if (g[i]["draft_correct"].get<bool>()) continue;
        ++bad;
        const bool gc = g[i]["correct"].get<bool>(), lc = l[i]["correct"].get<bool>();
        gf += gc;
        lf += lc;
        uf += gc || lc;
      }
      a.close(pair + " first fix", ratio(gf, bad), row["first_fix"]);
      a.close(pair + " second fix", ratio(lf, bad), row["second_fix"]);
      a.close(pair + " union fix", ratio(uf, bad), row["union_fix"]);
    }
  }

  const ScoreOptions opts = config.score_options();

  // Triples.
  if (!s["triple"].is_null()) {
    const auto strategy = strategy_from_string(s["triple"]["strategy"].get<std::string>());
    std::size_t n = 0, chosen_ok = 0, oracle_ok = 0;
    bool choices_match = true;
    for (const auto& j : read_jsonl(dir / path::kTriples, schema::kTriple)) {
      ++n;
      std::vector<double> agg;
      std::vector<int> rank;
      std::size_t best_rank_ok = 0;
      int best_rank = 99;
      for (std::size_t i = 0; i < j["candidates"].size(); ++i) {
        const auto& c = j["candidates"][i];
        agg.push_back(aggregate_scores(c["scores"].get<std::vector<double>>(), strategy, c["s0"].get<double>(), opts));
        rank.push_back(provenance_rank(c["provenance"].get<std::string>()));
        if (c["correct"].get<bool>() && rank.back() < best_rank) {
          best_rank = rank.back();
          best_rank_ok = i;
        }
      }
      const auto chosen = argmax_with_priority(agg, rank);
      const std::size_t oracle = best_rank_ok;
      choices_match &= chosen == j["chosen"].get<std::size_t>() && oracle == j["oracle"].get<std::size_t>();
      chosen_ok += j["candidates"][chosen]["correct"].get<bool>();
      oracle_ok += j["candidates"][oracle]["correct"].get<bool>();
    }
    a.expect(choices_match, "triple choices recomputed from persisted scores");
    a.close("reranked triple accuracy", ratio(chosen_ok, n), s["triple"]["reranked"]);
    a.close("oracle triple accuracy", ratio(oracle_ok, n), s["triple"]["oracle"]);
  }

  // Sampled reranking.
  {
    struct Tally {
      std::size_t n = 0, first = 0, any = 0, maj = 0;
      std::map<std::string, std::size_t> hits;
    };
    std::map<std::pair<std::string, std::string>, Tally> tally;
    bool choices_match = true;
    for (const auto& j : read_jsonl(dir / path::kRerank, schema::kRerankRecord)) {
      auto& t = tally[{j["set"].get<std::string>(), j["estimator"].get<std::string>()}];
      const auto ok = j["sample_correct"].get<std::vector<bool>>();
      const auto& q = *qs.at(j["question_id"].get<std::string>());
      ++t.n;
      t.first += ok[0];
      t.any += std::find(ok.begin(), ok.end(), true) != ok.end();
      std::vector<std::pair<std::int64_t, int>> votes;
      for (const auto& c : j["candidates"]) {
        if (!c["complete"].get<bool>()) continue;
        const auto ans = c["final_answer"].get<std::int64_t>();
        auto it = std::find_if(votes.begin(), votes.end(), [&](auto& v) { return v.first == ans; });
        if (it == votes.end()) votes.emplace_back(ans, 1);
        else ++it->second;
      }
      if (!votes.empty()) {
        auto best = votes.begin();
        for (auto it = votes.begin(); it != votes.end(); ++it)
          if (it->second > best->second) best = it;
        t.maj += best->first == q.answer;
      }
      for (const auto& [st, idx] : j["choices"].items()) {
        std::vector<double> agg;
        std::vector<int> rank;
        for (const auto& c : j["candidates"]) {
          agg.push_back(aggregate_scores(c["scores"].get<std::vector<double>>(), strategy_from_string(st),
                                         c["s0"].get<double>(), opts));
          rank.push_back(c["index"].get<int>());
        }
        const std::size_t pick = agg.empty() ? 0 : j["candidates"][argmax_with_priority(agg, rank)]["index"].get<std::size_t>();
        choices_match &= pick == idx.get<std::size_t>();
        t.hits[st] += ok[pick];
      }
    }
    a.expect(choices_match, "rerank choices recomputed from persisted scores");
    for (const auto& [name, row] : s["rerank"].items()) {
      const auto& t = tally[{"strategies", name}];
      for (const auto& [st, v] : row["strategies"].items()) a.close(name + " rerank " + st, ratio(t.hits.at(st), t.n), v);
      a.close(name + " first sample", ratio(t.first, t.n), row["first_sample"]);
      a.close(name + " maj@K", ratio(t.maj, t.n), row["maj_k"]);
      a.close(name + " pass@K", ratio(t.any, t.n), row["best_of_n"]);
    }
    if (!s["triple"].is_null()) {
      const auto& t = tally[{"bo3", s["triple"]["estimator"].get<std::string>()}];
      a.close("Bo3 accuracy", ratio(t.hits.at(s["triple"]["strategy"].get<std::string>()), t.n), s["triple"]["bo3"]);
    }
  }

  // Report files regenerate byte for byte.
  if (manifest.stages.count(Stage::Report)) {
    const auto b = emit_report(dir);
    a.expect(read_file(dir / path::kReport) == b.text, "report text regenerates from the summary");
    for (const auto& [name, body] : b.csv)
      a.expect(read_file(dir / "report" / name) == body, "report/" + name + " regenerates from the summary");
  }
  return a.r;
}

}  // namespace stepwise
