#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stepwise/features.hpp"

namespace stepwise {

enum class EstimatorKind { Classifier, Contrastive };

std::string_view to_string(EstimatorKind k);
EstimatorKind estimator_kind_from_string(std::string_view s);

class DegenerateDatasetError : public Error {
 public:
  using Error::Error;
};

struct FitConfig {
  FeatureSet features = FeatureSet::StateComplete;
  double l2 = 1e-4;
  int max_iterations = 400;
  double tolerance = 1e-8;
};

/// Training rows aggregated by feature vector: (positives, negatives).
using AggregatedRows = std::map<std::vector<std::string>, std::pair<double, double>>;

void add_row(AggregatedRows& rows, std::vector<std::string> features, int label);

/// Logistic model over binary features. Classifiers carry a bias; contrastive
/// models are fitted on score differences and have none.
struct Estimator {
  EstimatorKind kind = EstimatorKind::Classifier;
  FeatureSet features = FeatureSet::StateComplete;
  double bias = 0.0;
  std::map<std::string, double> weights;
  std::string source_policy;
  std::string dataset_id;
  std::size_t train_size = 0;

  double score_features(const std::vector<std::string>& active) const;
  double score(const Question& q, std::span<const Step> prefix) const;
  /// sigma(score), in [0, 1].
  double predict(const Question& q, std::span<const Step> prefix) const;

  friend bool operator==(const Estimator&, const Estimator&) = default;
};

double sigmoid(double z);

/// Cross-entropy fit. Throws DegenerateDatasetError when only one label occurs.
Estimator fit_classifier(const AggregatedRows& rows, const FitConfig& cfg);

/// Pairwise fit of -log sigma(s_good - s_bad). Throws DegenerateDatasetError
/// without pairs.
Estimator fit_contrastive(std::span<const std::pair<std::vector<std::string>, std::vector<std::string>>> pairs,
                          const FitConfig& cfg);

}  // namespace stepwise
