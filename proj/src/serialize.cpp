#include "stepwise/serialize.hpp"

#include <fstream>
#include <sstream>

namespace stepwise {

namespace {

Json trace_body(const Trace& t) {
  Json j;
  j["steps"] = steps_to_json(t.steps);
  j["final_answer"] = t.final_answer;
  j["is_complete"] = t.is_complete;
  return j;
}

Trace trace_body_from(const Json& j, const std::string& qid) {
  Trace t;
  t.question_id = qid;
  t.steps = steps_from_json(j.at("steps"));
  t.final_answer = j.at("final_answer").get<std::int64_t>();
  t.is_complete = j.at("is_complete").get<bool>();
  return t;
}

}  // namespace

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Json step_to_json(const Step& s) {
  return Json::array({s.a, std::string(to_string(s.op)), s.b, s.result});
}

Step step_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw Error("step must be [a, op, b, result]");
  return Step{j[0].get<std::int64_t>(), op_from_string(j[1].get<std::string>()), j[2].get<std::int64_t>(),
              j[3].get<std::int64_t>()};
}

Json steps_to_json(const std::vector<Step>& steps) {
  Json arr = Json::array();
  for (const auto& s : steps) arr.push_back(step_to_json(s));
  return arr;
}

std::vector<Step> steps_from_json(const Json& j) {
  std::vector<Step> out;
  for (const auto& s : j) out.push_back(step_from_json(s));
  return out;
}

void expect_schema(const Json& j, const char* expected) {
  if (!j.is_object() || !j.contains("schema"))
    throw SchemaMismatchError(std::string("record has no schema field; expected ") + expected);
  const auto got = j.at("schema").get<std::string>();
  if (got != expected) throw SchemaMismatchError("schema mismatch: expected " + std::string(expected) + ", found " + got);
}

Json to_json(const Question& q) {
  Json j;
  j["schema"] = schema::kQuestion;
  j["id"] = q.id;
  j["family"] = std::string(to_string(q.family));
  if (q.chain) {
    Json ops = Json::array();
    for (const auto& op : q.chain->ops) ops.push_back(Json::array({std::string(to_string(op.kind)), op.operand}));
    j["chain"] = Json{{"start", q.chain->start}, {"ops", ops}};
  }
  if (q.countdown) j["countdown"] = Json{{"numbers", q.countdown->numbers}, {"target", q.countdown->target}};
  j["answer"] = q.answer;
  return j;
}

Question question_from_json(const Json& j) {
  expect_schema(j, schema::kQuestion);
  Question q;
  q.id = j.at("id").get<std::string>();
  q.family = family_from_string(j.at("family").get<std::string>());
  if (q.family == Family::Chain) {
    ChainSpec c;
    c.start = j.at("chain").at("start").get<std::int64_t>();
    for (const auto& op : j.at("chain").at("ops"))
      c.ops.push_back({op_from_string(op[0].get<std::string>()), op[1].get<std::int64_t>()});
    q.chain = std::move(c);
  } else {
    CountdownSpec c;
    c.numbers = j.at("countdown").at("numbers").get<std::vector<std::int64_t>>();
    c.target = j.at("countdown").at("target").get<std::int64_t>();
    q.countdown = std::move(c);
  }
  q.answer = j.at("answer").get<std::int64_t>();
  return q;
}

Json to_json(const Trace& t) {
  Json j;
  j["schema"] = schema::kTrace;
  j["question_id"] = t.question_id;
  j.update(trace_body(t));
  return j;
}

Trace trace_from_json(const Json& j) {
  expect_schema(j, schema::kTrace);
  return trace_body_from(j, j.at("question_id").get<std::string>());
}

Json to_json(const SourceTrace& t) {
  Json j;
  j["schema"] = schema::kSourceTrace;
  j["id"] = t.id;
  j["question_id"] = t.trace.question_id;
  j.update(trace_body(t.trace));
  j["correct"] = t.correct;
  return j;
}

SourceTrace source_trace_from_json(const Json& j) {
  expect_schema(j, schema::kSourceTrace);
  SourceTrace t;
  t.id = j.at("id").get<std::string>();
  t.trace = trace_body_from(j, j.at("question_id").get<std::string>());
  t.correct = j.at("correct").get<bool>();
  return t;
}

Json to_json(const OrmSample& s) {
  Json j;
  j["schema"] = schema::kOrmSample;
  j["question_id"] = s.question_id;
  j["source_trace_id"] = s.source_trace_id;
  j["depth"] = s.depth();
  j["prefix"] = steps_to_json(s.prefix);
  j["label"] = s.label;
  return j;
}

OrmSample orm_sample_from_json(const Json& j) {
  expect_schema(j, schema::kOrmSample);
  OrmSample s;
  s.question_id = j.at("question_id").get<std::string>();
  s.source_trace_id = j.at("source_trace_id").get<std::string>();
  s.prefix = steps_from_json(j.at("prefix"));
  s.label = j.at("label").get<int>();
  return s;
}

Json to_json(const SormSample& s) {
  Json j;
  j["schema"] = schema::kSormSample;
  j["question_id"] = s.question_id;
  j["source_trace_id"] = s.source_trace_id;
  j["depth"] = s.depth();
  j["prefix"] = steps_to_json(s.prefix);
  j["label"] = s.label;
  j["raw_label"] = s.raw_label;
  Json vs = Json::array();
  for (const auto& v : s.verifiers) {
    Json jv;
    jv["continuation"] = steps_to_json(std::vector<Step>(v.trace.steps.begin() + static_cast<std::ptrdiff_t>(s.depth()),
                                                         v.trace.steps.end()));
    jv["final_answer"] = v.trace.final_answer;
    jv["is_complete"] = v.trace.is_complete;
    jv["label"] = v.label;
    jv["consistent"] = v.consistent;
    vs.push_back(std::move(jv));
  }
  j["verifiers"] = std::move(vs);
  return j;
}

SormSample sorm_sample_from_json(const Json& j) {
  expect_schema(j, schema::kSormSample);
  SormSample s;
  s.question_id = j.at("question_id").get<std::string>();
  s.source_trace_id = j.at("source_trace_id").get<std::string>();
  s.prefix = steps_from_json(j.at("prefix"));
  s.label = j.at("label").get<int>();
  s.raw_label = j.at("raw_label").get<int>();
  for (const auto& jv : j.at("verifiers")) {
    Verifier v;
    v.trace.question_id = s.question_id;
    v.trace.steps = s.prefix;
    for (const auto& st : jv.at("continuation")) v.trace.steps.push_back(step_from_json(st));
    v.trace.final_answer = jv.at("final_answer").get<std::int64_t>();
    v.trace.is_complete = jv.at("is_complete").get<bool>();
    v.label = jv.at("label").get<int>();
    v.consistent = jv.at("consistent").get<bool>();
    s.verifiers.push_back(std::move(v));
  }
  return s;
}

Json to_json(const PolicyParams& p) {
  Json j;
  j["schema"] = schema::kPolicy;
  j["version"] = p.version;
  Json skill;
  for (OpKind k : kAllOps) skill[std::string(to_string(k))] = p.skill(k);
  j["chain_skill"] = skill;
  j["error_weights"] = p.error_weights;
  j["countdown_weights"] = p.countdown_weights;
  j["countdown_temperature"] = p.countdown_temperature;
  return j;
}

PolicyParams policy_from_json(const Json& j) {
  expect_schema(j, schema::kPolicy);
  PolicyParams p;
  p.version = j.at("version").get<std::int64_t>();
  for (OpKind k : kAllOps) p.skill(k) = j.at("chain_skill").at(std::string(to_string(k))).get<double>();
  p.error_weights = j.at("error_weights").get<std::vector<double>>();
  p.countdown_weights = j.at("countdown_weights").get<std::vector<double>>();
  p.countdown_temperature = j.at("countdown_temperature").get<double>();
  return p;
}

Json to_json(const EIRoundReport& r) {
  Json j;
  j["schema"] = schema::kEIRound;
  j["round"] = r.round;
  j["maj1"] = r.maj1;
  j["passk"] = r.passk;
  j["dataset_size"] = r.dataset_size;
  j["converged"] = r.converged;
  return j;
}

EIRoundReport ei_round_from_json(const Json& j) {
  expect_schema(j, schema::kEIRound);
  EIRoundReport r;
  r.round = j.at("round").get<int>();
  r.maj1 = j.at("maj1").get<double>();
  r.passk = j.at("passk").get<double>();
  r.dataset_size = j.at("dataset_size").get<std::size_t>();
  r.converged = j.at("converged").get<bool>();
  return r;
}

Json to_json(const Estimator& e) {
  Json j;
  j["schema"] = schema::kEstimator;
  j["kind"] = std::string(to_string(e.kind));
  j["features"] = std::string(to_string(e.features));
  j["feature_version"] = feature_version(e.features);
  j["source_policy"] = e.source_policy;
  j["dataset_id"] = e.dataset_id;
  j["train_size"] = e.train_size;
  j["bias"] = e.bias;
  Json w = Json::object();
  for (const auto& [k, v] : e.weights) w[k] = v;
  j["weights"] = std::move(w);
  return j;
}

Estimator estimator_from_json(const Json& j) {
  expect_schema(j, schema::kEstimator);
  Estimator e;
  e.kind = estimator_kind_from_string(j.at("kind").get<std::string>());
  e.features = feature_set_from_string(j.at("features").get<std::string>());
  if (j.at("feature_version").get<std::string>() != feature_version(e.features))
    throw SchemaMismatchError("estimator feature map version " + j.at("feature_version").get<std::string>() +
                              " is not " + feature_version(e.features));
  e.source_policy = j.at("source_policy").get<std::string>();
  e.dataset_id = j.at("dataset_id").get<std::string>();
  e.train_size = j.at("train_size").get<std::size_t>();
  e.bias = j.at("bias").get<double>();
  for (const auto& [k, v] : j.at("weights").items()) e.weights.emplace(k, v.get<double>());
  return e;
}

Json to_json(const RefinementExample& e) {
  Json j;
  j["schema"] = schema::kRefinementExample;
  j["question_id"] = e.question_id;
  j["draft_id"] = e.draft_id;
  j["mode"] = std::string(to_string(e.mode));
  j["error_index"] = e.error_index ? Json(*e.error_index) : Json(nullptr);
  j["draft"] = trace_body(e.draft);
  j["target"] = trace_body(e.target);
  return j;
}

RefinementExample refinement_example_from_json(const Json& j) {
  expect_schema(j, schema::kRefinementExample);
  RefinementExample e;
  e.question_id = j.at("question_id").get<std::string>();
  e.draft_id = j.at("draft_id").get<std::string>();
  e.mode = refine_mode_from_string(j.at("mode").get<std::string>());
  if (!j.at("error_index").is_null()) e.error_index = j.at("error_index").get<std::size_t>();
  e.draft = trace_body_from(j.at("draft"), e.question_id);
  e.target = trace_body_from(j.at("target"), e.question_id);
  return e;
}

Json to_json(const RefinerPolicy& r) {
  Json j;
  j["schema"] = schema::kRefiner;
  j["lambda"] = r.lambda;
  j["base"] = to_json(r.base);
  Json modes;
  for (std::size_t m = 0; m < 3; ++m) {
    const auto& mp = r.modes[m];
    modes[std::string(to_string(static_cast<RefineMode>(m)))] =
        Json{{"params", to_json(mp.params)}, {"copy_rate", mp.copy_rate}, {"examples", mp.examples}};
  }
  j["modes"] = std::move(modes);
  return j;
}

RefinerPolicy refiner_from_json(const Json& j) {
  expect_schema(j, schema::kRefiner);
  RefinerPolicy r;
  r.lambda = j.at("lambda").get<double>();
  r.base = policy_from_json(j.at("base"));
  for (std::size_t m = 0; m < 3; ++m) {
    const auto& jm = j.at("modes").at(std::string(to_string(static_cast<RefineMode>(m))));
    r.modes[m].params = policy_from_json(jm.at("params"));
    r.modes[m].copy_rate = jm.at("copy_rate").get<double>();
    r.modes[m].examples = jm.at("examples").get<std::size_t>();
  }
  return r;
}

Json to_json(const EnvConfig& e) {
  Json j;
  j["max_steps"] = e.max_steps;
  j["perturbation_support"] = e.perturbation_support;
  j["allow_cancellation"] = e.allow_cancellation;
  j["value_budget"] = e.value_budget;
  return j;
}

EnvConfig env_from_json(const Json& j) {
  EnvConfig e;
  e.max_steps = j.at("max_steps").get<int>();
  e.perturbation_support = j.at("perturbation_support").get<std::vector<std::int64_t>>();
  e.allow_cancellation = j.at("allow_cancellation").get<bool>();
  e.value_budget = j.at("value_budget").get<std::size_t>();
  return e;
}

std::string dump_line(const Json& j) { return j.dump(-1, ' ', false, Json::error_handler_t::strict); }

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records) {
  std::string text;
  for (const auto& r : records) {
    text += dump_line(r);
    text += '\n';
  }
  write_text(path, text);
}

std::vector<Json> read_jsonl(const std::filesystem::path& path, const char* expected_schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<Json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (expected_schema) expect_schema(j, expected_schema);
    out.push_back(std::move(j));
  }
  return out;
}

void write_json(const std::filesystem::path& path, const Json& doc) { write_text(path, doc.dump(2) + "\n"); }

Json read_json(const std::filesystem::path& path, const char* expected_schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Json j;
  try {
    j = Json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  if (expected_schema) expect_schema(j, expected_schema);
  return j;
}

}  // namespace stepwise
