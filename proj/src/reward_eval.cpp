#include "stepwise/reward_eval.hpp"

#include <map>

#include "stepwise/parallel.hpp"

namespace stepwise {

Scorer scorer_of(const Estimator& e) {
  return [&e](const Question& q, std::span<const Step> p) { return e.predict(q, p); };
}

Scorer oracle_scorer(const EnvConfig& env) {
  return [env](const Question& q, std::span<const Step> p) { return static_cast<double>(v_star(q, p, env)); };
}

Estimator fit_orm(std::span<const OrmSample> samples, const QuestionIndex& questions, const FitConfig& cfg) {
  AggregatedRows rows;
  for (const auto& s : samples)
    add_row(rows, extract_features(lookup(questions, s.question_id), s.prefix, cfg.features), s.label);
  return fit_classifier(rows, cfg);
}

Estimator fit_sorm(std::span<const SormSample> samples, const QuestionIndex& questions, const FitConfig& cfg) {
  AggregatedRows rows;
  for (const auto& s : samples)
    add_row(rows, extract_features(lookup(questions, s.question_id), s.prefix, cfg.features), s.label);
  return fit_classifier(rows, cfg);
}

Estimator fit_contrastive_rm(const OrmDataset& orm, std::span<const TracePair> pairs,
                             const QuestionIndex& questions, const FitConfig& cfg) {
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> rows;
  rows.reserve(pairs.size());
  auto feats = [&](std::size_t i) {
    const auto& t = orm.traces[i].trace;
    return extract_features(lookup(questions, t.question_id), t.steps, cfg.features);
  };
  for (const auto& p : pairs) rows.emplace_back(feats(p.good), feats(p.bad));
  return fit_contrastive(rows, cfg);
}

std::vector<StepPrediction> predict_steps(const Scorer& scorer, std::span<const Question> questions,
                                          std::span<const Trace> drafts, const EnvConfig& env, int workers) {
  if (questions.size() != drafts.size()) throw Error("predict_steps: questions and drafts differ in length");
  std::vector<std::vector<StepPrediction>> per(drafts.size());
  parallel_for(drafts.size(), workers, [&](std::size_t i) {
    const auto& q = questions[i];
    const auto& d = drafts[i];
    const std::span<const Step> steps(d.steps);
    for (std::size_t depth = 1; depth <= steps.size(); ++depth) {
      const auto p = steps.first(depth);
      per[i].push_back({q.id, depth, scorer(q, p), v_star(q, p, env),
                        d.is_complete && depth == steps.size()});
    }
  });
  std::vector<StepPrediction> out;
  for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
  return out;
}

StepEvalReport summarize_steps(std::span<const StepPrediction> preds, double threshold) {
  StepEvalReport r;
  std::size_t final_ok = 0;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> depth;  // n, correct
  for (const auto& p : preds) {
    const int guess = p.predict > threshold ? 1 : 0;
    const bool ok = guess == p.truth;
    auto& c = r.confusion;
    if (guess && p.truth) ++c.tp;
    else if (guess) ++c.fp;
    else if (p.truth) ++c.fn;
    else ++c.tn;
    if (p.final_step) {
      ++r.n_final;
      final_ok += ok;
    }
    auto& d = depth[p.depth];
    ++d.first;
    d.second += ok;
  }
  const auto& c = r.confusion;
  r.n_steps = c.total();
  if (r.n_steps) r.step_accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(r.n_steps);
  if (r.n_final) r.final_accuracy = static_cast<double>(final_ok) / static_cast<double>(r.n_final);
  if (c.fp + c.tn) r.false_positive_rate = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
  if (c.fn + c.tp) r.false_negative_rate = static_cast<double>(c.fn) / static_cast<double>(c.fn + c.tp);
  for (const auto& [k, v] : depth)
    r.per_depth.push_back({k, v.first, static_cast<double>(v.second) / static_cast<double>(v.first)});
  return r;
}

StepEvalReport evaluate_estimator(const Scorer& scorer, std::span<const Question> questions,
                                  std::span<const Trace> drafts, const EnvConfig& env, double threshold,
                                  int workers) {
  const auto preds = predict_steps(scorer, questions, drafts, env, workers);
  return summarize_steps(preds, threshold);
}

std::optional<std::size_t> first_error_index(const Scorer& scorer, const Question& q, const Trace& trace,
                                             double threshold) {
  const std::span<const Step> steps(trace.steps);
  for (std::size_t i = 1; i <= steps.size(); ++i)
    if (scorer(q, steps.first(i)) <= threshold) return i;
  return std::nullopt;
}

LocalizationReport localization_accuracy(const Scorer& scorer, std::span<const Question> questions,
                                         std::span<const Trace> drafts, const EnvConfig& env,
                                         double threshold) {
  LocalizationReport r;
  std::size_t hit = 0, hit_bad = 0;
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    const auto truth = first_invalid_step(questions[i], drafts[i].steps, env);
    const auto guess = first_error_index(scorer, questions[i], drafts[i], threshold);
    ++r.drafts;
    hit += guess == truth;
    if (truth) {
      ++r.incorrect;
      hit_bad += guess == truth;
    }
  }
  if (r.drafts) r.accuracy = static_cast<double>(hit) / static_cast<double>(r.drafts);
  if (r.incorrect) r.accuracy_incorrect = static_cast<double>(hit_bad) / static_cast<double>(r.incorrect);
  return r;
}

CrossGrid cross_generalization_eval(const Scorer& a, const Scorer& b, std::span<const Question> questions,
                                    std::span<const Trace> drafts_a, std::span<const Trace> drafts_b,
                                    const EnvConfig& env, double threshold, int workers) {
  CrossGrid g;
  const Scorer* scorers[2] = {&a, &b};
  const std::span<const Trace> sets[2] = {drafts_a, drafts_b};
  for (int tr = 0; tr < 2; ++tr)
    for (int te = 0; te < 2; ++te)
      g.grid[tr][te] = evaluate_estimator(*scorers[tr], questions, sets[te], env, threshold, workers);
  return g;
}

SelfFilterResult self_supervised_filter(const Estimator& estimator, std::span<const SormSample> samples,
                                        const QuestionIndex& questions, const FitConfig& cfg, double threshold) {
  SelfFilterResult r;
  for (const auto& s : samples) {
    const int guess = estimator.predict(lookup(questions, s.question_id), s.prefix) > threshold ? 1 : 0;
    if (guess == s.label) r.kept.push_back(s);
  }
  const auto removed = samples.size() - r.kept.size();
  r.removed_fraction = samples.empty() ? 0.0 : static_cast<double>(removed) / static_cast<double>(samples.size());
  if (r.removed_fraction > 0.9)
    throw FilterError("self_supervised_filter: removed " + std::to_string(removed) + " of " +
                      std::to_string(samples.size()) + " samples; estimator and dataset do not match");
  r.refit = fit_sorm(r.kept, questions, cfg);
  r.refit.source_policy = estimator.source_policy;
  r.refit.dataset_id = estimator.dataset_id + "+selffilter";
  return r;
}

}  // namespace stepwise
