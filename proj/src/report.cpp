#include <cstdio>
#include <sstream>

#include "pipeline_internal.hpp"

namespace stepwise {

namespace {

std::string num(const Json& v, int digits = 4) {
  if (v.is_null()) return "n/a";
  if (v.is_boolean()) return v.get<bool>() ? "yes" : "no";
  if (v.is_number_integer() || v.is_number_unsigned()) return std::to_string(v.get<long long>());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v.get<double>());
  return buf;
}

class Table {
 public:
  explicit Table(std::vector<std::string> header) : rows_{std::move(header)} {}
  void row(std::vector<std::string> r) { rows_.push_back(std::move(r)); }

  std::string text(const std::string& title) const {
    std::vector<std::size_t> w(rows_[0].size(), 0);
    for (const auto& r : rows_)
      for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], r[i].size());
    std::ostringstream os;
    os << title << "\n";
    for (std::size_t k = 0; k < rows_.size(); ++k) {
      for (std::size_t i = 0; i < rows_[k].size(); ++i) {
        const auto& c = rows_[k][i];
        if (i == 0) os << c << std::string(w[i] - c.size(), ' ');
        else os << "  " << std::string(w[i] - c.size(), ' ') << c;
      }
      os << "\n";
      if (k == 0) {
        std::size_t total = 0;
        for (auto x : w) total += x + 2;
        os << std::string(total - 2, '-') << "\n";
      }
    }
    return os.str() + "\n";
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

class Csv {
 public:
  explicit Csv(const std::vector<std::string>& header) { line(header); }
  void line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ += (i ? "," : "") + cells[i];
    out_ += "\n";
  }
  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

}  // namespace

ReportBundle emit_report(const std::filesystem::path& dir) {
  using namespace detail;
  if (!std::filesystem::exists(dir / path::kSummary))
    throw MissingUpstreamError("report requires evaluate: " + (dir / path::kSummary).string() + " not found");
  const auto s = read_json(dir / path::kSummary, schema::kSummary);
  if (s.at("questions").get<std::size_t>() == 0 || s.at("estimators").empty())
    throw EmptyEvaluationError("report: the evaluation is empty");
  const auto rounds = load_ei_rounds(dir / path::kEIRounds);
  const auto rm = read_json(dir / path::kRmStats, schema::kStats);

  ReportBundle b;
  std::string& t = b.text;
  t += "stepwise run report\n===================\n\n";
  t += "test questions: " + num(s["questions"]) + "   threshold: " + num(s["threshold"], 2) + "\n";
  t += "draft policy: " + s["draft"]["policy"].get<std::string>() + " (greedy accuracy " + num(s["draft"]["accuracy"]) +
       ")\n";
  t += "final EI policy: " + s["draft_b"]["policy"].get<std::string>() + " (greedy accuracy " +
       num(s["draft_b"]["accuracy"]) + ")\n\n";

  {
    Table tb({"round", "maj@1", "pass@K", "dataset", "converged"});
    Csv csv({"round", "maj1", "passk", "dataset_size", "converged"});
    for (const auto& r : rounds) {
      tb.row({std::to_string(r.round), num(r.maj1), num(r.passk), std::to_string(r.dataset_size),
              r.converged ? "yes" : "no"});
      csv.line({std::to_string(r.round), num(r.maj1, 6), num(r.passk, 6), std::to_string(r.dataset_size),
                r.converged ? "1" : "0"});
    }
    t += tb.text("Expert iteration rounds");
    b.csv["ei_rounds.csv"] = csv.str();
  }
  {
    Table tb({"K_verify", "agreement", "FPR", "FNR", "samples"});
    Csv csv({"k_verify", "agreement", "false_positive_rate", "false_negative_rate", "samples"});
    for (const auto& r : rm["label_agreement"]) {
      tb.row({num(r["k_verify"]), num(r["agreement"]), num(r["false_positive_rate"]), num(r["false_negative_rate"]),
              num(r["samples"])});
      csv.line({num(r["k_verify"]), num(r["agreement"], 6), num(r["false_positive_rate"], 6),
                num(r["false_negative_rate"], 6), num(r["samples"])});
    }
    t += tb.text("SORM label agreement with the optimal value (before balancing)");
    b.csv["label_agreement.csv"] = csv.str();
  }
  {
    Table tb({"estimator", "step acc", "final acc", "FPR", "FNR", "loc acc", "loc acc (bad)"});
    Csv csv({"estimator", "step_accuracy", "final_accuracy", "false_positive_rate", "false_negative_rate", "n_steps",
             "n_final", "localization_accuracy", "localization_accuracy_incorrect"});
    for (const auto& [name, r] : s["estimators"].items()) {
      tb.row({name, num(r["step_accuracy"]), num(r["final_accuracy"]), num(r["false_positive_rate"]),
              num(r["false_negative_rate"]), num(r["localization_accuracy"]), num(r["localization_accuracy_incorrect"])});
      csv.line({name, num(r["step_accuracy"], 6), num(r["final_accuracy"], 6), num(r["false_positive_rate"], 6),
                num(r["false_negative_rate"], 6), num(r["n_steps"]), num(r["n_final"]), num(r["localization_accuracy"], 6),
                num(r["localization_accuracy_incorrect"], 6)});
    }
    t += tb.text("Step and final-answer accuracy on greedy drafts");
    b.csv["step_eval.csv"] = csv.str();
  }
  {
    Table tb({"run", "draft acc", "all drafts", "incorrect only", "fix", "break", "copy"});
    Csv csv({"run", "drafts", "incorrect", "draft_accuracy", "accuracy_all_drafts", "accuracy_incorrect_only",
             "fix_rate", "break_rate", "copy_rate"});
    for (const auto& [name, r] : s["refinement"].items()) {
      tb.row({name, num(r["draft_accuracy"]), num(r["accuracy_all_drafts"]), num(r["accuracy_incorrect_only"]),
              num(r["fix_rate"]), num(r["break_rate"]), num(r["copy_rate"])});
      csv.line({name, num(r["drafts"]), num(r["incorrect"]), num(r["draft_accuracy"], 6),
                num(r["accuracy_all_drafts"], 6), num(r["accuracy_incorrect_only"], 6), num(r["fix_rate"], 6),
                num(r["break_rate"], 6), num(r["copy_rate"], 6)});
    }
    t += tb.text("Refinement accuracy (all drafts refined vs incorrect drafts only)");
    b.csv["refinement.csv"] = csv.str();
  }
  {
    Table tb({"pair", "incorrect", "first only", "second only", "both", "neither", "first fix", "second fix", "union"});
    Csv csv({"pair", "incorrect", "first_only", "second_only", "both", "neither", "first_fix", "second_fix",
             "union_fix"});
    for (const auto& [name, r] : s["complementarity"].items()) {
      tb.row({name, num(r["incorrect"]), num(r["first_only"]), num(r["second_only"]), num(r["both"]), num(r["neither"]),
              num(r["first_fix"]), num(r["second_fix"]), num(r["union_fix"])});
      csv.line({name, num(r["incorrect"]), num(r["first_only"]), num(r["second_only"]), num(r["both"]),
                num(r["neither"]), num(r["first_fix"], 6), num(r["second_fix"], 6), num(r["union_fix"], 6)});
    }
    t += tb.text("Fixes on incorrect drafts: global vs local refinement");
    b.csv["complementarity.csv"] = csv.str();
  }
  {
    Csv csv({"series", "accuracy"});
    if (!s["triple"].is_null()) {
      const auto& r = s["triple"];
      Table tb({"series", "accuracy"});
      for (const char* k : {"draft", "bo3", "reranked", "oracle"}) {
        tb.row({k, num(r[k])});
        csv.line({k, num(r[k], 6)});
      }
      t += tb.text("Reranking {draft, global, local} with " + r["estimator"].get<std::string>() + " (" +
                   r["strategy"].get<std::string>() + ")");
    }
    b.csv["triple_rerank.csv"] = csv.str();
  }
  {
    std::vector<std::string> head{"estimator", "kind", "K"};
    for (auto st : kAllStrategies) head.emplace_back(to_string(st));
    for (const char* k : {"first", "maj@K", "pass@K"}) head.emplace_back(k);
    Table tb(head);
    Csv csv({"estimator", "kind", "k", "strategy", "accuracy"});
    for (const auto& [name, r] : s["rerank"].items()) {
      std::vector<std::string> row{name, r["kind"].get<std::string>(), num(r["k"])};
      for (auto st : kAllStrategies) {
        const auto key = std::string(to_string(st));
        row.push_back(num(r["strategies"][key]));
        csv.line({name, r["kind"].get<std::string>(), num(r["k"]), key, num(r["strategies"][key], 6)});
      }
      row.push_back(num(r["first_sample"]));
      row.push_back(num(r["maj_k"]));
      row.push_back(num(r["best_of_n"]));
      for (const char* k : {"first_sample", "maj_k", "best_of_n"})
        csv.line({name, r["kind"].get<std::string>(), num(r["k"]), k, num(r[k], 6)});
      tb.row(row);
    }
    t += tb.text("Rerank@K by aggregation strategy");
    b.csv["rerank_strategies.csv"] = csv.str();

    Csv cc({"estimator", "kind", "final_accuracy"});
    if (s["rerank"].contains("orm") && s["rerank"].contains("contrastive")) {
      Table ct({"estimator", "kind", "rerank@K (final)"});
      for (const char* name : {"orm", "contrastive"}) {
        const auto& r = s["rerank"][name];
        ct.row({name, r["kind"].get<std::string>(), num(r["strategies"]["final"])});
        cc.line({name, r["kind"].get<std::string>(), num(r["strategies"]["final"], 6)});
      }
      t += ct.text("Classifier vs contrastive reward model");
    }
    b.csv["classifier_vs_contrastive.csv"] = cc.str();
  }
  {
    Csv csv({"train_policy", "test_policy", "step_accuracy"});
    if (!s["cross_grid"].is_null()) {
      Table tb({"train \\ test", "A", "B"});
      for (const char* tr : {"A", "B"}) {
        tb.row({tr, num(s["cross_grid"][tr]["A"]), num(s["cross_grid"][tr]["B"])});
        for (const char* te : {"A", "B"}) csv.line({tr, te, num(s["cross_grid"][tr][te], 6)});
      }
      t += tb.text("ORM step accuracy across students (A = data student, B = final EI policy)");
    }
    b.csv["cross_grid.csv"] = csv.str();
  }
  {
    Csv csv({"removed_fraction", "before_step_accuracy", "after_step_accuracy"});
    if (!s["self_filter"].is_null()) {
      const auto& r = s["self_filter"];
      Table tb({"removed", "step acc before", "step acc after"});
      tb.row({num(r["removed_fraction"]), num(r["before"]), num(r["after"])});
      csv.line({num(r["removed_fraction"], 6), num(r["before"], 6), num(r["after"], 6)});
      t += tb.text("Self-supervised SORM filtering");
    }
    b.csv["self_filter.csv"] = csv.str();
  }
  return b;
}

namespace detail {

void run_report(StageContext& ctx) {
  const auto b = emit_report(ctx.dir);
  write_text(ctx.at(path::kReport), b.text);
  ctx.wrote(path::kReport);
  for (const auto& [name, body] : b.csv) {
    const auto rel = "report/" + name;
    write_text(ctx.at(rel), body);
    ctx.wrote(rel);
  }
}

}  // namespace detail
}  // namespace stepwise
