#include "stepwise/config.hpp"

#include <algorithm>
#include <set>

#include "stepwise/hash.hpp"

namespace stepwise {

namespace {

// Reads the keys of one JSON object and rejects any it was not asked about.
class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + where() + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: bad value for " + path_ + key);
    }
  }

  template <typename Fn>
  void read_with(const char* key, Fn&& fn) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      fn(j_.at(key), path_ + key + ".");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: bad value for " + path_ + key);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError("config: " + path_ + key + ": " + e.what());
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("config: unknown key " + path_ + k);
  }

 private:
  std::string where() const { return path_.empty() ? "top level" : path_.substr(0, path_.size() - 1); }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("config: " + msg);
}

}  // namespace

bool RefineSettings::enabled(RefineMode m) const {
  return std::find(modes.begin(), modes.end(), m) != modes.end();
}

void ExperimentConfig::validate() const {
  try {
    env.validate();
    student.initial.validate(env);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  check(tasks.train >= 1 && tasks.test >= 1, "tasks.train and tasks.test must be >= 1");
  check(student.data_round >= 0, "student.data_round must be >= 0");
  check(ei.k >= 1, "ei.k must be >= 1");
  check(ei.epsilon >= 0.0, "ei.epsilon must be >= 0");
  check(ei.max_rounds >= 1, "ei.max_rounds must be >= 1");
  check(ei.alpha > 0.0, "ei.alpha must be > 0");
  check(ei.sft_fraction >= 0.0 && ei.sft_fraction <= 1.0, "ei.sft_fraction must lie in [0, 1]");
  check(rm.k_orm >= 1, "rm.k_orm must be >= 1");
  check(rm.k_verify >= 1, "rm.k_verify must be >= 1");
  for (auto k : rm.agreement_k) check(k >= 1 && k <= rm.k_verify, "rm.agreement_k entries must lie in [1, k_verify]");
  check(rm.l2 >= 0.0, "rm.l2 must be >= 0");
  check(rm.threshold > 0.0 && rm.threshold < 1.0, "rm.threshold must lie in (0, 1)");
  check(refine.refiner.lambda >= 0.0, "refine.lambda must be >= 0");
  check(refine.refiner.fit_rate >= 0.0 && refine.refiner.fit_rate <= 1.0, "refine.fit_rate must lie in [0, 1]");
  check(refine.refiner.alpha > 0.0, "refine.alpha must be > 0");
  check(!refine.modes.empty(), "refine.modes must not be empty");
  check(rerank.k >= 1, "rerank.k must be >= 1");
  check(!output_dir.empty(), "output_dir must not be empty");
}

FitConfig ExperimentConfig::fit_config() const {
  FitConfig f;
  f.features = rm.features;
  f.l2 = rm.l2;
  return f;
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  Fields top(j, "");
  top.read_with("schema", [](const Json& v, const std::string&) {
    if (v.get<std::string>() != schema::kConfig) throw ConfigError("config: schema must be " + std::string(schema::kConfig));
  });
  top.read("master_seed", c.master_seed);
  top.read_with("env", [&](const Json& v, const std::string& path) {
    Fields f(v, path);
    f.read("max_steps", c.env.max_steps);
    f.read("perturbation_support", c.env.perturbation_support);
    f.read("allow_cancellation", c.env.allow_cancellation);
    f.read("value_budget", c.env.value_budget);
    f.finish();
  });
  top.read_with("tasks", [&](const Json& v, const std::string& path) {
    Fields f(v, path);
    f.read_with("family", [&](const Json& x, const std::string&) { c.tasks.family = family_from_string(x.get<std::string>()); });
    f.read_with("difficulty",
                [&](const Json& x, const std::string&) { c.tasks.difficulty = difficulty_from_string(x.get<std::string>()); });
    f.read("train", c.tasks.train);
    f.read("test", c.tasks.test);
    f.finish();
  });
  top.read_with("student", [&](const Json& v, const std::string& path) {
    Fields f(v, path);
    f.read_with("chain_skill", [&](const Json& x, const std::string& p) {
      Fields s(x, p);
      for (OpKind k : kAllOps) s.read(std::string(to_string(k)).c_str(), c.student.initial.skill(k));
      s.finish();
    });
    f.read("error_weights", c.student.initial.error_weights);
    f.read("countdown_temperature", c.student.initial.countdown_temperature);
    f.read("data_round", c.student.data_round);
    f.finish();
  });
  top.read_with("ei", [&](const Json& v, const std::string& path) {
    Fields f(v, path);
    f.read("k", c.ei.k);
    f.read("epsilon", c.ei.epsilon);
    f.read("max_rounds", c.ei.max_rounds);
    f.read("alpha", c.ei.alpha);
    f.read("sft_fraction", c.ei.sft_fraction);
    f.finish();
  });
  top.read_with("rm", [&](const Json& v, const std::string& path) {
    Fields f(v, path);
    f.read("k_orm", c.rm.k_orm);
    f.read("k_verify", c.rm.k_verify);
    f.read("agreement_k", c.rm.agreement_k);
    f.read_with("postprocess", [&](const Json& x, const std::string& p) {
      Fields s(x, p);
      s.read("propagate", c.rm.postprocess.propagate);
      s.read("consistency", c.rm.postprocess.consistency);
      s.read("balance", c.rm.postprocess.balance);
      s.finish();
    });
    f.read_with("features", [&](const Json& x, const std::string&) { c.rm.features = feature_set_from_string(x.get<std::string>()); });
    f.read_with("kind", [&](const Json& x, const std::string&) { c.rm.kind = estimator_kind_from_string(x.get<std::string>()); });
    f.read("l2", c.rm.l2);
    f.read("threshold", c.rm.threshold);
    f.finish();
  });
  top.read_with("refine", [&](const Json& v, const std::string& path) {
    Fields f(v, path);
    f.read("lambda", c.refine.refiner.lambda);
    f.read("fit_rate", c.refine.refiner.fit_rate);
    f.read("alpha", c.refine.refiner.alpha);
    f.read_with("modes", [&](const Json& x, const std::string&) {
      c.refine.modes.clear();
      for (const auto& m : x) {
        auto mode = refine_mode_from_string(m.get<std::string>());
        if (!c.refine.enabled(mode)) c.refine.modes.push_back(mode);
      }
      std::sort(c.refine.modes.begin(), c.refine.modes.end());
    });
    f.finish();
  });
  top.read_with("rerank", [&](const Json& v, const std::string& path) {
    Fields f(v, path);
    f.read_with("strategy", [&](const Json& x, const std::string&) { c.rerank.strategy = strategy_from_string(x.get<std::string>()); });
    f.read("k", c.rerank.k);
    f.read("weighted_mean_literal", c.rerank.weighted_mean_literal);
    f.finish();
  });
  top.read("output_dir", c.output_dir);
  top.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  Json j;
  try {
    j = read_json(path, nullptr);
  } catch (const SchemaMismatchError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(j);
}

Json to_json(const ExperimentConfig& c) {
  Json j;
  j["schema"] = schema::kConfig;
  j["master_seed"] = c.master_seed;
  j["env"] = to_json(c.env);
  j["tasks"] = Json{{"family", std::string(to_string(c.tasks.family))},
                    {"difficulty", std::string(to_string(c.tasks.difficulty))},
                    {"train", c.tasks.train},
                    {"test", c.tasks.test}};
  Json skill;
  for (OpKind k : kAllOps) skill[std::string(to_string(k))] = c.student.initial.skill(k);
  j["student"] = Json{{"chain_skill", skill},
                      {"error_weights", c.student.initial.error_weights},
                      {"countdown_temperature", c.student.initial.countdown_temperature},
                      {"data_round", c.student.data_round}};
  j["ei"] = Json{{"k", c.ei.k},
                 {"epsilon", c.ei.epsilon},
                 {"max_rounds", c.ei.max_rounds},
                 {"alpha", c.ei.alpha},
                 {"sft_fraction", c.ei.sft_fraction}};
  j["rm"] = Json{{"k_orm", c.rm.k_orm},
                 {"k_verify", c.rm.k_verify},
                 {"agreement_k", c.rm.agreement_k},
                 {"postprocess",
                  Json{{"propagate", c.rm.postprocess.propagate},
                       {"consistency", c.rm.postprocess.consistency},
                       {"balance", c.rm.postprocess.balance}}},
                 {"features", std::string(to_string(c.rm.features))},
                 {"kind", std::string(to_string(c.rm.kind))},
                 {"l2", c.rm.l2},
                 {"threshold", c.rm.threshold}};
  Json modes = Json::array();
  for (auto m : c.refine.modes) modes.push_back(std::string(to_string(m)));
  j["refine"] = Json{{"lambda", c.refine.refiner.lambda},
                     {"fit_rate", c.refine.refiner.fit_rate},
                     {"alpha", c.refine.refiner.alpha},
                     {"modes", modes}};
  j["rerank"] = Json{{"strategy", std::string(to_string(c.rerank.strategy))},
                     {"k", c.rerank.k},
                     {"weighted_mean_literal", c.rerank.weighted_mean_literal}};
  j["output_dir"] = c.output_dir;
  return j;
}

std::string config_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("output_dir");
  return sha256_hex(dump_line(j));
}

}  // namespace stepwise
