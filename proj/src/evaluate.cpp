#include <map>

#include "pipeline_internal.hpp"
#include "stepwise/parallel.hpp"

namespace stepwise::detail {

namespace {

Json step_report_json(const StepEvalReport& r) {
  return Json{{"step_accuracy", r.step_accuracy},
              {"final_accuracy", r.final_accuracy},
              {"false_positive_rate", r.false_positive_rate},
              {"false_negative_rate", r.false_negative_rate},
              {"n_steps", r.n_steps},
              {"n_final", r.n_final}};
}

Json refinement_json(const RefinementEvalReport& r) {
  return Json{{"drafts", r.drafts},
              {"incorrect", r.incorrect},
              {"draft_accuracy", r.draft_accuracy},
              {"accuracy_all_drafts", r.accuracy_all_drafts},
              {"accuracy_incorrect_only", r.accuracy_incorrect_only},
              {"fix_rate", r.fix_rate},
              {"break_rate", r.break_rate},
              {"copy_rate", r.copy_rate}};
}

Json complementarity_json(const Complementarity& c) {
  return Json{{"incorrect", c.incorrect},     {"first_only", c.global_only}, {"second_only", c.local_only},
              {"both", c.both},               {"neither", c.neither},        {"first_fix", c.global_fix},
              {"second_fix", c.local_fix},    {"union_fix", c.union_fix}};
}

Json trace_body(const Trace& t) {
  return Json{{"steps", steps_to_json(t.steps)}, {"final_answer", t.final_answer}, {"is_complete", t.is_complete}};
}

std::vector<Trace> greedy_drafts(std::span<const Question> test, const PolicyParams& p, const EnvConfig& env,
                                 int workers) {
  std::vector<Trace> out(test.size());
  parallel_for(test.size(), workers, [&](std::size_t i) { out[i] = greedy_rollout(test[i], p, env); });
  return out;
}

double accuracy(std::span<const Question> test, std::span<const Trace> traces) {
  double ok = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) ok += is_correct(test[i], traces[i]);
  return ok / static_cast<double>(test.size());
}

}  // namespace

void run_evaluate(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& env = cfg.env;
  const double T = cfg.rm.threshold;
  const auto opts = cfg.score_options();
  const auto test = load_questions(ctx.at(path::kTest));
  if (test.empty()) throw EmptyEvaluationError("evaluate: the test split is empty");
  const auto policies = load_policies(ctx.at(path::kPolicies));
  const auto& student = data_policy(policies, cfg.student.data_round);
  const auto& policy_b = policies.back();

  // The (Q, D) test set: greedy drafts of the data student, plus drafts of
  // the final EI policy for the cross-student grid.
  const auto drafts = greedy_drafts(test, student, env, ctx.workers);
  const auto drafts_b = greedy_drafts(test, policy_b, env, ctx.workers);
  write_records(ctx.at(path::kDrafts), drafts, trace_record);
  write_records(ctx.at(path::kDraftsB), drafts_b, trace_record);
  ctx.wrote(path::kDrafts);
  ctx.wrote(path::kDraftsB);

  const auto fit_stats = read_json(ctx.at(path::kFitStats), schema::kStats);
  std::map<std::string, Estimator> est;
  std::vector<std::string> names;
  for (const char* name : kEstimatorNames) {
    if (fit_stats.at("estimators").at(name).at("status") != "ok") continue;
    est.emplace(name, estimator_from_json(read_json(ctx.at(estimator_path(name)), schema::kEstimator)));
    names.push_back(name);
  }

  Json summary;
  summary["schema"] = schema::kSummary;
  summary["questions"] = test.size();
  summary["threshold"] = T;
  summary["draft"] = Json{{"policy", policy_id(student)}, {"accuracy", accuracy(test, drafts)}};
  summary["draft_b"] = Json{{"policy", policy_id(policy_b)}, {"accuracy", accuracy(test, drafts_b)}};

  // Step-level predictions on the drafts.
  std::vector<Json> pred_recs;
  auto predict = [&](const std::string& name, const char* set, std::span<const Trace> ds) {
    const auto preds = predict_steps(scorer_of(est.at(name)), test, ds, env, ctx.workers);
    for (const auto& p : preds)
      pred_recs.push_back(Json{{"schema", schema::kStepPrediction},
                               {"estimator", name},
                               {"test_set", set},
                               {"question_id", p.question_id},
                               {"depth", p.depth},
                               {"predict", p.predict},
                               {"truth", p.truth},
                               {"final_step", p.final_step}});
    return summarize_steps(preds, T);
  };
  Json est_json = Json::object();
  for (const auto& name : names) {
    auto row = step_report_json(predict(name, "A", drafts));
    const auto loc = localization_accuracy(scorer_of(est.at(name)), test, drafts, env, T);
    row["localization_accuracy"] = loc.accuracy;
    row["localization_accuracy_incorrect"] = loc.accuracy_incorrect;
    est_json[name] = std::move(row);
  }
  summary["estimators"] = std::move(est_json);

  if (est.count("orm_b")) {
    const double ab = predict("orm", "B", drafts_b).step_accuracy;
    const double bb = predict("orm_b", "B", drafts_b).step_accuracy;
    summary["cross_grid"] = Json{{"A", Json{{"A", summary["estimators"]["orm"]["step_accuracy"]}, {"B", ab}}},
                                 {"B", Json{{"A", summary["estimators"]["orm_b"]["step_accuracy"]}, {"B", bb}}}};
  } else {
    summary["cross_grid"] = nullptr;
  }
  write_jsonl(ctx.at(path::kStepPredictions), pred_recs);
  ctx.wrote(path::kStepPredictions);

  // Refinement runs.
  const auto refiner = refiner_from_json(read_json(ctx.at(path::kRefiner), schema::kRefiner));
  const auto sorm = scorer_of(est.at("sorm"));
  const auto orm = scorer_of(est.at("orm"));
  std::vector<std::pair<std::string, std::vector<RefineOutcome>>> runs;
  auto run = [&](const char* label, const RefinerPolicy& r, RefineMode m, const Locator& loc) {
    runs.emplace_back(label, run_refinement(r, test, drafts, m, loc, env, ctx.workers));
  };
  const Locator none = [](const Question&, const Trace&) { return std::optional<std::size_t>{}; };
  if (cfg.refine.enabled(RefineMode::Global)) {
    run("global", refiner, RefineMode::Global, none);
    run("resample", base_refiner(student), RefineMode::Global, none);
  }
  if (cfg.refine.enabled(RefineMode::Local)) {
    run("local_sorm", refiner, RefineMode::Local, first_error_locator(sorm, T));
    run("local_orm", refiner, RefineMode::Local, first_error_locator(orm, T));
    run("local_oracle", refiner, RefineMode::Local, oracle_locator(env));
  }
  if (cfg.refine.enabled(RefineMode::Value)) run("value_sorm", refiner, RefineMode::Value, value_locator(sorm));

  std::vector<Json> outcome_recs;
  Json ref_json = Json::object();
  std::map<std::string, const std::vector<RefineOutcome>*> by_label;
  for (const auto& [label, outs] : runs) {
    by_label[label] = &outs;
    ref_json[label] = refinement_json(summarize_refinement(label, outs));
    for (const auto& o : outs)
      outcome_recs.push_back(Json{{"schema", schema::kRefineOutcome},
                                  {"run", label},
                                  {"question_id", o.question_id},
                                  {"draft_correct", o.draft_correct},
                                  {"error_index", o.error_index ? Json(*o.error_index) : Json(nullptr)},
                                  {"refined", o.refined},
                                  {"correct", o.correct},
                                  {"copied", o.copied},
                                  {"trace", trace_body(o.trace)}});
  }
  summary["refinement"] = std::move(ref_json);
  write_jsonl(ctx.at(path::kOutcomes), outcome_recs);
  ctx.wrote(path::kOutcomes);

  Json comp = Json::object();
  if (by_label.count("global") && by_label.count("local_sorm")) {
    comp["global+local_sorm"] = complementarity_json(complementarity(*by_label["global"], *by_label["local_sorm"]));
    comp["global+local_orm"] = complementarity_json(complementarity(*by_label["global"], *by_label["local_orm"]));
  }
  summary["complementarity"] = std::move(comp);

  // The reranking estimator falls back to the classifier ORM when the
  // contrastive one could not be fitted.
  std::string rr_name = cfg.rm.kind == EstimatorKind::Contrastive && est.count("contrastive") ? "contrastive" : "orm";
  const auto rr = scorer_of(est.at(rr_name));
  const RerankStrategy strategies[] = {cfg.rerank.strategy};

  std::vector<Json> rerank_recs;
  auto record_rerank = [&](const char* set, const std::string& name, const RerankEval& ev,
                           std::span<const RerankStrategy> sts) {
    for (std::size_t i = 0; i < test.size(); ++i) {
      Json samples = Json::array();
      for (std::size_t j = 0; j < ev.sample_correct[i].size(); ++j) samples.push_back(ev.sample_correct[i][j] != 0);
      Json cands = Json::array();
      for (const auto& c : ev.scored[i])
        cands.push_back(Json{{"index", c.sample_index},
                             {"complete", c.trace.is_complete},
                             {"final_answer", c.trace.final_answer},
                             {"s0", c.s0},
                             {"scores", c.per_step_scores}});
      Json choices = Json::object();
      for (std::size_t s = 0; s < sts.size(); ++s) choices[std::string(to_string(sts[s]))] = ev.choices[i][s];
      rerank_recs.push_back(Json{{"schema", schema::kRerankRecord},
                                 {"set", set},
                                 {"estimator", name},
                                 {"question_id", test[i].id},
                                 {"k", ev.k},
                                 {"sample_correct", samples},
                                 {"candidates", cands},
                                 {"choices", choices}});
    }
  };

  const auto bo3 = rerank_eval(test, student, rr, env, 3, strategies, ctx.seed("bo3"), opts, ctx.workers);
  record_rerank("bo3", rr_name, bo3, strategies);

  if (by_label.count("global") && by_label.count("local_sorm")) {
    const auto& g = *by_label["global"];
    const auto& l = *by_label["local_sorm"];
    std::vector<TripleSelection> sel(test.size());
    parallel_for(test.size(), ctx.workers, [&](std::size_t i) {
      sel[i] = select_among_three(rr, test[i], drafts[i], g[i].trace, l[i].trace, cfg.rerank.strategy, opts);
    });
    std::vector<Json> triple_recs;
    double chosen_ok = 0.0, oracle_ok = 0.0;
    bool dominated = true;
    for (std::size_t i = 0; i < test.size(); ++i) {
      Json cands = Json::array();
      for (const auto& c : sel[i].scored)
        cands.push_back(Json{{"provenance", std::string(to_string(c.provenance))},
                             {"correct", is_correct(test[i], c.trace)},
                             {"s0", c.s0},
                             {"scores", c.per_step_scores},
                             {"aggregate", c.aggregate}});
      const bool c_ok = is_correct(test[i], sel[i].scored[sel[i].chosen].trace);
      const bool o_ok = is_correct(test[i], sel[i].scored[sel[i].oracle].trace);
      chosen_ok += c_ok;
      oracle_ok += o_ok;
      dominated = dominated && (!c_ok || o_ok);
      triple_recs.push_back(Json{{"schema", schema::kTriple},
                                 {"question_id", test[i].id},
                                 {"estimator", rr_name},
                                 {"strategy", std::string(to_string(cfg.rerank.strategy))},
                                 {"candidates", cands},
                                 {"chosen", sel[i].chosen},
                                 {"oracle", sel[i].oracle}});
    }
    write_jsonl(ctx.at(path::kTriples), triple_recs);
    ctx.wrote(path::kTriples);
    const double n = static_cast<double>(test.size());
    summary["triple"] = Json{{"estimator", rr_name},
                             {"strategy", std::string(to_string(cfg.rerank.strategy))},
                             {"draft", summary["draft"]["accuracy"]},
                             {"bo3", bo3.strategies[0].accuracy},
                             {"reranked", chosen_ok / n},
                             {"oracle", oracle_ok / n},
                             {"pointwise_dominated", dominated}};
  } else {
    summary["triple"] = nullptr;
  }

  // Strategy comparison; every estimator sees the same samples.
  Json rr_json = Json::object();
  for (const char* name : {"orm", "contrastive", "balanced_orm", "sorm", "sorm_nopp"}) {
    if (!est.count(name)) continue;
    const auto ev = rerank_eval(test, student, scorer_of(est.at(name)), env, cfg.rerank.k, kAllStrategies,
                                ctx.seed("rerank"), opts, ctx.workers);
    record_rerank("strategies", name, ev, kAllStrategies);
    Json sts = Json::object();
    for (const auto& s : ev.strategies) sts[std::string(to_string(s.strategy))] = s.accuracy;
    rr_json[name] = Json{{"kind", std::string(to_string(est.at(name).kind))},
                         {"k", ev.k},
                         {"first_sample", ev.first_sample},
                         {"maj_k", ev.maj_k},
                         {"best_of_n", ev.best_of_n},
                         {"strategies", sts}};
  }
  summary["rerank"] = std::move(rr_json);
  write_jsonl(ctx.at(path::kRerank), rerank_recs);
  ctx.wrote(path::kRerank);

  if (est.count("sorm_selffilter")) {
    summary["self_filter"] = Json{{"removed_fraction", fit_stats["self_filter"]["removed_fraction"]},
                                  {"before", summary["estimators"]["sorm"]["step_accuracy"]},
                                  {"after", summary["estimators"]["sorm_selffilter"]["step_accuracy"]}};
  } else {
    summary["self_filter"] = nullptr;
  }

  write_json(ctx.at(path::kSummary), summary);
  ctx.wrote(path::kSummary);
}

}  // namespace stepwise::detail
