#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stepwise/estimator.hpp"
#include "stepwise/reward_data.hpp"

namespace stepwise {

/// Maps (Q, P_i) to an estimated probability of success.
using Scorer = std::function<double(const Question&, std::span<const Step>)>;

Scorer scorer_of(const Estimator& e);
/// Perfect step labeler backed by v_star.
Scorer oracle_scorer(const EnvConfig& env);

Estimator fit_orm(std::span<const OrmSample> samples, const QuestionIndex& questions, const FitConfig& cfg);
Estimator fit_sorm(std::span<const SormSample> samples, const QuestionIndex& questions, const FitConfig& cfg);
Estimator fit_contrastive_rm(const OrmDataset& orm, std::span<const TracePair> pairs,
                             const QuestionIndex& questions, const FitConfig& cfg);

struct StepPrediction {
  std::string question_id;
  std::size_t depth = 0;
  double predict = 0.0;
  int truth = 0;
  bool final_step = false;  // last step of a complete trace
};

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
};

struct DepthRow {
  std::size_t depth = 0;
  std::size_t n = 0;
  double accuracy = 0.0;
};

struct StepEvalReport {
  double step_accuracy = 0.0;
  double final_accuracy = 0.0;
  double false_positive_rate = 0.0;
  double false_negative_rate = 0.0;
  std::size_t n_steps = 0;
  std::size_t n_final = 0;
  Confusion confusion;
  std::vector<DepthRow> per_depth;
};

/// Scores every prefix P_1..P_L of every draft against the v_star label.
std::vector<StepPrediction> predict_steps(const Scorer& scorer, std::span<const Question> questions,
                                          std::span<const Trace> drafts, const EnvConfig& env, int workers = 1);

StepEvalReport summarize_steps(std::span<const StepPrediction> preds, double threshold = 0.5);

StepEvalReport evaluate_estimator(const Scorer& scorer, std::span<const Question> questions,
                                  std::span<const Trace> drafts, const EnvConfig& env,
                                  double threshold = 0.5, int workers = 1);

/// Smallest i in 1..L with score(P_i) <= threshold.
std::optional<std::size_t> first_error_index(const Scorer& scorer, const Question& q, const Trace& trace,
                                             double threshold = 0.5);

struct LocalizationReport {
  double accuracy = 0.0;            // all drafts; "none" matching "none" counts
  double accuracy_incorrect = 0.0;  // drafts containing an invalid step
  std::size_t drafts = 0;
  std::size_t incorrect = 0;
};

LocalizationReport localization_accuracy(const Scorer& scorer, std::span<const Question> questions,
                                         std::span<const Trace> drafts, const EnvConfig& env,
                                         double threshold = 0.5);

/// grid[train][test] with index 0 = policy A, 1 = policy B.
struct CrossGrid {
  StepEvalReport grid[2][2];
};

CrossGrid cross_generalization_eval(const Scorer& a, const Scorer& b, std::span<const Question> questions,
                                    std::span<const Trace> drafts_a, std::span<const Trace> drafts_b,
                                    const EnvConfig& env, double threshold = 0.5, int workers = 1);

class FilterError : public Error {
 public:
  using Error::Error;
};

struct SelfFilterResult {
  std::vector<SormSample> kept;
  Estimator refit;
  double removed_fraction = 0.0;
};

/// Drops samples whose thresholded prediction disagrees with the label and
/// refits. Throws FilterError if more than 90% of the data is removed.
SelfFilterResult self_supervised_filter(const Estimator& estimator, std::span<const SormSample> samples,
                                        const QuestionIndex& questions, const FitConfig& cfg,
                                        double threshold = 0.5);

}  // namespace stepwise
