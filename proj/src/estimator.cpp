#include "stepwise/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <numeric>

namespace stepwise {

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

using Objective = std::function<double(const std::vector<double>&, std::vector<double>&)>;

/// Limited-memory BFGS with Armijo backtracking. Deterministic for a fixed
/// objective and starting point.
void minimize_lbfgs(std::vector<double>& x, const Objective& f, int max_iterations, double tolerance) {
  constexpr std::size_t kMemory = 10;
  const std::size_t n = x.size();
  std::vector<double> g(n), g_new(n), d(n), x_new(n);
  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;
  double fx = f(x, g);

  for (int iter = 0; iter < max_iterations; ++iter) {
    double gmax = 0.0;
    for (double v : g) gmax = std::max(gmax, std::abs(v));
    if (gmax < tolerance) break;

    // Two-loop recursion.
    d = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * dot(s_hist[k], d);
      for (std::size_t i = 0; i < n; ++i) d[i] -= alpha[k] * y_hist[k][i];
    }
    double gamma = 1.0;
    if (!s_hist.empty()) gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
    else gamma = 1.0 / std::max(1.0, std::sqrt(dot(g, g)));
    for (double& v : d) v *= gamma;
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * dot(y_hist[k], d);
      for (std::size_t i = 0; i < n; ++i) d[i] += (alpha[k] - beta) * s_hist[k][i];
    }
    for (double& v : d) v = -v;

    double slope = dot(g, d);
    if (slope >= 0.0) {
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
      slope = -dot(g, g);
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    double step = 1.0;
    double f_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < n; ++i) x_new[i] = x[i] + step * d[i];
      f_new = f(x_new, g_new);
      if (f_new <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = x_new[i] - x[i];
      y[i] = g_new[i] - g[i];
    }
    const double sy = dot(s, y);
    if (sy > 1e-12) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > kMemory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    const double decrease = fx - f_new;
    x.swap(x_new);
    g.swap(g_new);
    fx = f_new;
    if (decrease <= 1e-15 * std::max(1.0, std::abs(fx))) break;
  }
}

struct Indexed {
  std::vector<std::string> names;
  std::map<std::string, int> index;

  int id(const std::string& name) {
    auto [it, inserted] = index.emplace(name, static_cast<int>(names.size()));
    if (inserted) names.push_back(name);
    return it->second;
  }
};

}  // namespace

std::string_view to_string(EstimatorKind k) {
  return k == EstimatorKind::Classifier ? "classifier" : "contrastive";
}

EstimatorKind estimator_kind_from_string(std::string_view s) {
  if (s == "classifier") return EstimatorKind::Classifier;
  if (s == "contrastive") return EstimatorKind::Contrastive;
  throw Error("unknown estimator kind '" + std::string(s) + "'");
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void add_row(AggregatedRows& rows, std::vector<std::string> features, int label) {
  auto& cell = rows[std::move(features)];
  (label ? cell.first : cell.second) += 1.0;
}

double Estimator::score_features(const std::vector<std::string>& active) const {
  double z = bias;
  for (const auto& f : active)
    if (auto it = weights.find(f); it != weights.end()) z += it->second;
  return z;
}

double Estimator::score(const Question& q, std::span<const Step> prefix) const {
  return score_features(extract_features(q, prefix, features));
}

double Estimator::predict(const Question& q, std::span<const Step> prefix) const {
  return sigmoid(score(q, prefix));
}

Estimator fit_classifier(const AggregatedRows& rows, const FitConfig& cfg) {
  double total_pos = 0.0, total_neg = 0.0;
  for (const auto& [_, c] : rows) {
    total_pos += c.first;
    total_neg += c.second;
  }
  if (total_pos + total_neg == 0.0) throw DegenerateDatasetError("fit_classifier: empty dataset");
  if (total_pos == 0.0 || total_neg == 0.0)
    throw DegenerateDatasetError("fit_classifier: dataset has a single label class");

  Indexed idx;
  std::vector<std::vector<int>> x;
  std::vector<double> pos, neg;
  for (const auto& [feats, c] : rows) {
    std::vector<int> r;
    for (const auto& f : feats) r.push_back(idx.id(f));
    x.push_back(std::move(r));
    pos.push_back(c.first);
    neg.push_back(c.second);
  }
  const std::size_t nf = idx.names.size();
  const double n = total_pos + total_neg;

  // Parameter layout: feature weights, then the bias.
  Objective obj = [&](const std::vector<double>& w, std::vector<double>& grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (std::size_t r = 0; r < x.size(); ++r) {
      double z = w[nf];
      for (int j : x[r]) z += w[j];
      loss += pos[r] * softplus(-z) + neg[r] * softplus(z);
      const double gz = (sigmoid(z) * (pos[r] + neg[r]) - pos[r]) / n;
      for (int j : x[r]) grad[j] += gz;
      grad[nf] += gz;
    }
    loss /= n;
    for (std::size_t j = 0; j < nf; ++j) {
      loss += 0.5 * cfg.l2 * w[j] * w[j];
      grad[j] += cfg.l2 * w[j];
    }
    return loss;
  };

  std::vector<double> w(nf + 1, 0.0);
  w[nf] = std::log(total_pos / total_neg);
  minimize_lbfgs(w, obj, cfg.max_iterations, cfg.tolerance);

  Estimator e;
  e.kind = EstimatorKind::Classifier;
  e.features = cfg.features;
  e.bias = w[nf];
  for (std::size_t j = 0; j < nf; ++j) e.weights.emplace(idx.names[j], w[j]);
  e.train_size = static_cast<std::size_t>(n);
  return e;
}

Estimator fit_contrastive(std::span<const std::pair<std::vector<std::string>, std::vector<std::string>>> pairs,
                          const FitConfig& cfg) {
  if (pairs.empty()) throw DegenerateDatasetError("fit_contrastive: no (good, bad) pairs");
  Indexed idx;
  std::vector<std::vector<std::pair<int, double>>> diffs;
  for (const auto& [good, bad] : pairs) {
    std::map<int, double> d;
    for (const auto& f : good) d[idx.id(f)] += 1.0;
    for (const auto& f : bad) d[idx.id(f)] -= 1.0;
    std::vector<std::pair<int, double>> row;
    for (const auto& [j, v] : d)
      if (v != 0.0) row.emplace_back(j, v);
    diffs.push_back(std::move(row));
  }
  const std::size_t nf = idx.names.size();
  const double n = static_cast<double>(pairs.size());

  Objective obj = [&](const std::vector<double>& w, std::vector<double>& grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (const auto& row : diffs) {
      double m = 0.0;
      for (const auto& [j, v] : row) m += w[j] * v;
      loss += softplus(-m);
      const double gm = -sigmoid(-m) / n;
      for (const auto& [j, v] : row) grad[j] += gm * v;
    }
    loss /= n;
    for (std::size_t j = 0; j < nf; ++j) {
      loss += 0.5 * cfg.l2 * w[j] * w[j];
      grad[j] += cfg.l2 * w[j];
    }
    return loss;
  };

  std::vector<double> w(nf, 0.0);
  minimize_lbfgs(w, obj, cfg.max_iterations, cfg.tolerance);

  Estimator e;
  e.kind = EstimatorKind::Contrastive;
  e.features = cfg.features;
  for (std::size_t j = 0; j < nf; ++j) e.weights.emplace(idx.names[j], w[j]);
  e.train_size = pairs.size();
  return e;
}

}  // namespace stepwise
