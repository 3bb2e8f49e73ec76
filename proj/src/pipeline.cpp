#include "stepwise/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <map>

#include "pipeline_internal.hpp"
#include "stepwise/hash.hpp"

namespace stepwise {

namespace {

constexpr const char* kStageNames[] = {"gen-tasks", "train-student", "build-rm-data", "fit-rm",
                                       "build-refine-data", "fit-refiner", "evaluate", "report"};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string_view to_string(Stage s) { return kStageNames[static_cast<std::size_t>(s)]; }

Stage stage_from_string(std::string_view s) {
  for (Stage st : kAllStages)
    if (to_string(st) == s) return st;
  throw Error("unknown stage: " + std::string(s));
}

Json to_json(const RunManifest& m) {
  Json j;
  j["schema"] = schema::kManifest;
  j["tool_version"] = m.tool_version;
  j["config_hash"] = m.config_hash;
  Json stages = Json::object();
  for (const auto& [st, rec] : m.stages) {
    Json arts = Json::object();
    for (const auto& [p, h] : rec.artifacts) arts[p] = h;
    stages[std::string(to_string(st))] = Json{{"completed_at", rec.completed_at}, {"artifacts", arts}};
  }
  j["stages"] = std::move(stages);
  return j;
}

RunManifest manifest_from_json(const Json& j) {
  expect_schema(j, schema::kManifest);
  RunManifest m;
  m.tool_version = j.at("tool_version").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  for (const auto& [name, rec] : j.at("stages").items()) {
    StageRecord r;
    r.completed_at = rec.at("completed_at").get<std::string>();
    for (const auto& [p, h] : rec.at("artifacts").items()) r.artifacts.emplace(p, h.get<std::string>());
    m.stages.emplace(stage_from_string(name), std::move(r));
  }
  return m;
}

RunManifest load_manifest(const std::filesystem::path& dir) {
  const auto file = dir / "manifest.json";
  if (!std::filesystem::exists(file)) return {};
  return manifest_from_json(read_json(file, schema::kManifest));
}

std::string verify_stage(const std::filesystem::path& dir, const StageRecord& rec) {
  for (const auto& [rel, hash] : rec.artifacts) {
    const auto file = dir / rel;
    if (!std::filesystem::exists(file)) return rel + " is missing";
    if (sha256_file(file) != hash) return rel + " does not match its recorded hash";
  }
  return {};
}

namespace detail {

std::string estimator_path(const std::string& name) { return "estimators/" + name + ".json"; }

std::string pairs_path(RefineMode m) { return "refine/" + std::string(to_string(m)) + "_pairs.jsonl"; }

std::uint64_t StageContext::seed(const char* purpose) const { return derive_seed({cfg.master_seed, fnv1a(purpose)}); }

std::vector<Question> load_questions(const std::filesystem::path& file) {
  std::vector<Question> out;
  for (const auto& j : read_jsonl(file, schema::kQuestion)) out.push_back(question_from_json(j));
  return out;
}

std::vector<Trace> load_traces(const std::filesystem::path& file) {
  std::vector<Trace> out;
  for (const auto& j : read_jsonl(file, schema::kTrace)) out.push_back(trace_from_json(j));
  return out;
}

std::vector<SourceTrace> load_source_traces(const std::filesystem::path& file) {
  std::vector<SourceTrace> out;
  for (const auto& j : read_jsonl(file, schema::kSourceTrace)) out.push_back(source_trace_from_json(j));
  return out;
}

std::vector<SormSample> load_sorm(const std::filesystem::path& file) {
  std::vector<SormSample> out;
  for (const auto& j : read_jsonl(file, schema::kSormSample)) out.push_back(sorm_sample_from_json(j));
  return out;
}

std::vector<PolicyParams> load_policies(const std::filesystem::path& file) {
  std::vector<PolicyParams> out;
  for (const auto& j : read_jsonl(file, schema::kPolicy)) out.push_back(policy_from_json(j));
  return out;
}

std::vector<EIRoundReport> load_ei_rounds(const std::filesystem::path& file) {
  std::vector<EIRoundReport> out;
  for (const auto& j : read_jsonl(file, schema::kEIRound)) out.push_back(ei_round_from_json(j));
  return out;
}

const PolicyParams& data_policy(const std::vector<PolicyParams>& policies, int round) {
  if (policies.empty()) throw Error("no student policies");
  const auto r = std::min<std::size_t>(static_cast<std::size_t>(round), policies.size() - 1);
  return policies[r];
}

std::string policy_id(const PolicyParams& p) { return "policy/v" + std::to_string(p.version); }

Json trace_record(const Trace& t) { return to_json(t); }

namespace {

OrmDataset dataset_of(std::vector<SourceTrace> traces) {
  OrmDataset d;
  d.traces = std::move(traces);
  d.samples = orm_samples_from(d.traces);
  return d;
}

void run_gen_tasks(StageContext& ctx) {
  const auto& t = ctx.cfg.tasks;
  auto train = generate_tasks(derive_seed({stream::kGenerate, ctx.cfg.master_seed, 0}), t.family, t.difficulty,
                              t.train, ctx.cfg.env);
  auto test = generate_tasks(derive_seed({stream::kGenerate, ctx.cfg.master_seed, 1}), t.family, t.difficulty,
                             t.test, ctx.cfg.env);
  // Test ids must not collide with training ids.
  for (auto& q : test) q.id = "test-" + q.id;
  for (auto& q : train) q.id = "train-" + q.id;
  write_records(ctx.at(path::kTrain), train, [](const Question& q) { return to_json(q); });
  write_records(ctx.at(path::kTest), test, [](const Question& q) { return to_json(q); });
  ctx.wrote(path::kTrain);
  ctx.wrote(path::kTest);
}

void run_train_student(StageContext& ctx) {
  const auto train = load_questions(ctx.at(path::kTrain));
  const auto test = load_questions(ctx.at(path::kTest));
  EIConfig ec;
  ec.k = ctx.cfg.ei.k;
  ec.epsilon = ctx.cfg.ei.epsilon;
  ec.max_rounds = ctx.cfg.ei.max_rounds;
  ec.alpha = ctx.cfg.ei.alpha;
  ec.sft_fraction = ctx.cfg.ei.sft_fraction;
  ec.seed = ctx.seed("ei");
  const auto ei = expert_iteration(train, ctx.cfg.student.initial, ec, ctx.cfg.env, test, ctx.workers);
  write_records(ctx.at(path::kPolicies), ei.policies, [](const PolicyParams& p) { return to_json(p); });
  write_records(ctx.at(path::kEIRounds), ei.rounds, [](const EIRoundReport& r) { return to_json(r); });
  write_records(ctx.at(path::kEIDataset), ei.dataset, [](const Trace& t) { return to_json(t); });
  ctx.wrote(path::kPolicies);
  ctx.wrote(path::kEIRounds);
  ctx.wrote(path::kEIDataset);
}

Json agreement_json(const LabelAgreement& a) {
  return Json{{"agreement", a.agreement},
              {"false_positive_rate", a.false_positive_rate},
              {"false_negative_rate", a.false_negative_rate},
              {"samples", a.samples}};
}

void run_build_rm_data(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto train = load_questions(ctx.at(path::kTrain));
  const auto policies = load_policies(ctx.at(path::kPolicies));
  const auto& student = data_policy(policies, cfg.student.data_round);
  const auto& policy_b = policies.back();
  const auto qi = index_questions(train);

  auto orm = build_orm_dataset(train, student, cfg.env, cfg.rm.k_orm, ctx.seed("orm"), ctx.workers);
  write_records(ctx.at(path::kOrmTraces), orm.traces, [](const SourceTrace& t) { return to_json(t); });
  write_records(ctx.at(path::kOrm), orm.samples, [](const OrmSample& s) { return to_json(s); });

  auto balanced = build_balanced_orm_dataset(orm, ctx.seed("balanced_orm"));
  write_records(ctx.at(path::kBalancedTraces), balanced.data.traces, [](const SourceTrace& t) { return to_json(t); });

  const auto pairs = build_contrastive_pairs(orm, ctx.seed("pairs"));
  std::vector<Json> pair_recs;
  for (const auto& p : pairs)
    pair_recs.push_back(Json{{"schema", schema::kContrastivePair},
                             {"question_id", orm.traces[p.good].trace.question_id},
                             {"good", orm.traces[p.good].id},
                             {"bad", orm.traces[p.bad].id}});
  write_jsonl(ctx.at(path::kPairs), pair_recs);

  auto orm_b = build_orm_dataset(train, policy_b, cfg.env, cfg.rm.k_orm, ctx.seed("orm_b"), ctx.workers);
  write_records(ctx.at(path::kOrmBTraces), orm_b.traces, [](const SourceTrace& t) { return to_json(t); });

  auto raw = build_sorm_dataset(train, orm.traces, student, cfg.env, cfg.rm.k_verify, ctx.seed("sorm"), ctx.workers);
  write_records(ctx.at(path::kSormRaw), raw, [](const SormSample& s) { return to_json(s); });

  auto pp = postprocess_sorm(raw, qi, cfg.rm.postprocess, ctx.seed("sorm_balance"));
  write_records(ctx.at(path::kSorm), pp.samples, [](const SormSample& s) { return to_json(s); });

  // Label agreement is measured after filtering and propagation, before balancing.
  Json agreement = Json::array();
  for (auto k : cfg.rm.agreement_k) {
    auto opts = cfg.rm.postprocess;
    opts.balance = false;
    auto sub = postprocess_sorm(with_verifier_budget(raw, k), qi, opts, 0);
    Json row{{"k_verify", k}};
    row.update(agreement_json(sorm_label_agreement(sub.samples, qi, cfg.env)));
    agreement.push_back(std::move(row));
  }

  Json stats;
  stats["schema"] = schema::kStats;
  stats["student_policy"] = policy_id(student);
  stats["policy_b"] = policy_id(policy_b);
  stats["orm"] = Json{{"traces", orm.traces.size()}, {"samples", orm.samples.size()}};
  stats["balanced_orm"] = Json{{"traces", balanced.data.traces.size()},
                               {"dropped_questions", balanced.dropped_questions},
                               {"warnings", balanced.warnings}};
  stats["contrastive_pairs"] = pairs.size();
  stats["orm_b"] = Json{{"traces", orm_b.traces.size()}};
  const auto& ps = pp.stats;
  stats["sorm"] = Json{{"raw_samples", raw.size()},
                       {"samples", pp.samples.size()},
                       {"total_rollouts", ps.total_rollouts},
                       {"discarded_rollouts", ps.discarded_rollouts},
                       {"relabeled_by_consistency", ps.relabeled_by_consistency},
                       {"propagated", ps.propagated},
                       {"removed_by_balance", ps.removed_by_balance},
                       {"dropped_depths", ps.dropped_depths},
                       {"warnings", ps.warnings}};
  stats["label_agreement"] = std::move(agreement);
  write_json(ctx.at(path::kRmStats), stats);

  for (const char* p : {path::kOrmTraces, path::kOrm, path::kBalancedTraces, path::kPairs, path::kOrmBTraces,
                        path::kSormRaw, path::kSorm, path::kRmStats})
    ctx.wrote(p);
}

void run_fit_rm(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto fit = cfg.fit_config();
  const auto train = load_questions(ctx.at(path::kTrain));
  const auto qi = index_questions(train);
  const auto stats = read_json(ctx.at(path::kRmStats), schema::kStats);
  const auto student_id = stats.at("student_policy").get<std::string>();
  const auto b_id = stats.at("policy_b").get<std::string>();
  auto dataset_id = [&](const char* rel) { return std::string(rel) + "@" + sha256_file(ctx.at(rel)).substr(0, 16); };

  Json fit_stats;
  fit_stats["schema"] = schema::kStats;
  Json status = Json::object();
  auto save = [&](const std::string& name, Estimator e, const std::string& policy, const char* rel) {
    e.source_policy = policy;
    e.dataset_id = dataset_id(rel);
    write_json(ctx.at(estimator_path(name)), to_json(e));
    ctx.wrote(estimator_path(name));
    status[name] = Json{{"status", "ok"}, {"train_size", e.train_size}};
  };
  auto optional_fit = [&](const std::string& name, auto&& body) {
    try {
      body();
    } catch (const Error& e) {
      status[name] = Json{{"status", "unavailable"}, {"reason", e.what()}};
    }
  };

  auto orm = dataset_of(load_source_traces(ctx.at(path::kOrmTraces)));
  save("orm", fit_orm(orm.samples, qi, fit), student_id, path::kOrm);

  const auto sorm = load_sorm(ctx.at(path::kSorm));
  const auto sorm_est = fit_sorm(sorm, qi, fit);
  save("sorm", sorm_est, student_id, path::kSorm);

  optional_fit("balanced_orm", [&] {
    auto bal = dataset_of(load_source_traces(ctx.at(path::kBalancedTraces)));
    save("balanced_orm", fit_orm(bal.samples, qi, fit), student_id, path::kBalancedTraces);
  });
  optional_fit("sorm_nopp", [&] {
    save("sorm_nopp", fit_sorm(load_sorm(ctx.at(path::kSormRaw)), qi, fit), student_id, path::kSormRaw);
  });
  optional_fit("contrastive", [&] {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < orm.traces.size(); ++i) index.emplace(orm.traces[i].id, i);
    std::vector<TracePair> pairs;
    for (const auto& j : read_jsonl(ctx.at(path::kPairs), schema::kContrastivePair))
      pairs.push_back({index.at(j.at("good").get<std::string>()), index.at(j.at("bad").get<std::string>())});
    save("contrastive", fit_contrastive_rm(orm, pairs, qi, fit), student_id, path::kPairs);
  });
  optional_fit("orm_b", [&] {
    auto ob = dataset_of(load_source_traces(ctx.at(path::kOrmBTraces)));
    save("orm_b", fit_orm(ob.samples, qi, fit), b_id, path::kOrmBTraces);
  });
  Json self_filter = nullptr;
  optional_fit("sorm_selffilter", [&] {
    auto r = self_supervised_filter(sorm_est, sorm, qi, fit, cfg.rm.threshold);
    self_filter = Json{{"removed_fraction", r.removed_fraction}, {"kept", r.kept.size()}, {"total", sorm.size()}};
    save("sorm_selffilter", std::move(r.refit), student_id, path::kSorm);
  });
  fit_stats["estimators"] = std::move(status);
  fit_stats["self_filter"] = std::move(self_filter);
  write_json(ctx.at(path::kFitStats), fit_stats);
  ctx.wrote(path::kFitStats);
}

void run_build_refine_data(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto train = load_questions(ctx.at(path::kTrain));
  const auto qi = index_questions(train);
  const auto traces = load_source_traces(ctx.at(path::kOrmTraces));
  Json stats;
  stats["schema"] = schema::kStats;
  auto emit = [&](RefineMode m, const PairBuild& b) {
    write_records(ctx.at(pairs_path(m)), b.examples, [](const RefinementExample& e) { return to_json(e); });
    ctx.wrote(pairs_path(m));
    stats[std::string(to_string(m))] =
        Json{{"candidates", b.candidates}, {"skipped", b.skipped}, {"examples", b.examples.size()}};
  };
  if (cfg.refine.enabled(RefineMode::Global)) {
    OrmDataset orm;
    orm.traces = traces;
    emit(RefineMode::Global, build_global_pairs(orm, ctx.seed("global_pairs")));
  }
  if (cfg.refine.enabled(RefineMode::Local) || cfg.refine.enabled(RefineMode::Value)) {
    auto opts = cfg.rm.postprocess;
    opts.balance = false;
    const auto labeled = postprocess_sorm(load_sorm(ctx.at(path::kSormRaw)), qi, opts, 0).samples;
    if (cfg.refine.enabled(RefineMode::Local))
      emit(RefineMode::Local, build_local_pairs(labeled, traces, ctx.seed("local_pairs")));
    if (cfg.refine.enabled(RefineMode::Value))
      emit(RefineMode::Value, build_value_pairs(labeled, traces, ctx.seed("value_pairs")));
  }
  write_json(ctx.at(path::kRefineStats), stats);
  ctx.wrote(path::kRefineStats);
}

void run_fit_refiner(StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto train = load_questions(ctx.at(path::kTrain));
  const auto qi = index_questions(train);
  const auto policies = load_policies(ctx.at(path::kPolicies));
  std::vector<RefinementExample> examples;
  for (auto m : cfg.refine.modes)
    for (const auto& j : read_jsonl(ctx.at(pairs_path(m)), schema::kRefinementExample))
      examples.push_back(refinement_example_from_json(j));
  const auto refiner =
      fit_refiner(examples, qi, data_policy(policies, cfg.student.data_round), cfg.env, cfg.refine.refiner);
  write_json(ctx.at(path::kRefiner), to_json(refiner));
  ctx.wrote(path::kRefiner);
}

void dispatch(StageContext& ctx, Stage stage) {
  switch (stage) {
    case Stage::GenTasks: return run_gen_tasks(ctx);
    case Stage::TrainStudent: return run_train_student(ctx);
    case Stage::BuildRmData: return run_build_rm_data(ctx);
    case Stage::FitRm: return run_fit_rm(ctx);
    case Stage::BuildRefineData: return run_build_refine_data(ctx);
    case Stage::FitRefiner: return run_fit_refiner(ctx);
    case Stage::Evaluate: return run_evaluate(ctx);
    case Stage::Report: return run_report(ctx);
  }
}

}  // namespace
}  // namespace detail

StageResult run_stage(const ExperimentConfig& config, Stage stage, const RunOptions& opts) {
  config.validate();
  const std::filesystem::path dir = config.output_dir;
  auto manifest = load_manifest(dir);
  const auto hash = config_hash(config);
  if (!manifest.config_hash.empty() && manifest.config_hash != hash)
    throw ConfigMismatchError("config hash " + hash.substr(0, 12) + " does not match the run in " + dir.string() +
                              " (" + manifest.config_hash.substr(0, 12) + ")");
  if (manifest.config_hash.empty()) {
    std::filesystem::create_directories(dir);
    write_json(dir / "config.json", to_json(config));
    manifest.config_hash = hash;
  }

  for (Stage up : kAllStages) {
    if (up == stage) break;
    auto it = manifest.stages.find(up);
    if (it == manifest.stages.end())
      throw MissingUpstreamError("stage " + std::string(to_string(stage)) + " requires " + std::string(to_string(up)) +
                                 ", which has not completed");
    if (auto bad = verify_stage(dir, it->second); !bad.empty())
      throw MissingUpstreamError("stage " + std::string(to_string(stage)) + " requires " + std::string(to_string(up)) +
                                 ": " + bad);
  }

  StageResult result{stage, false, {}};
  if (auto it = manifest.stages.find(stage); it != manifest.stages.end() && verify_stage(dir, it->second).empty()) {
    result.skipped = true;
    for (const auto& [rel, h] : it->second.artifacts) result.artifacts.push_back(rel);
    if (opts.log) *opts.log << to_string(stage) << ": up to date\n";
    return result;
  }

  detail::StageContext ctx{config, dir, opts.workers, {}};
  detail::dispatch(ctx, stage);

  StageRecord rec;
  rec.completed_at = utc_now();
  for (const auto& rel : ctx.written) rec.artifacts[rel] = sha256_file(dir / rel);
  if (auto it = manifest.stages.find(stage); it != manifest.stages.end() && it->second.artifacts != rec.artifacts) {
    // Outputs changed, so anything downstream is stale.
    for (auto d = manifest.stages.begin(); d != manifest.stages.end();)
      d = d->first > stage ? manifest.stages.erase(d) : std::next(d);
  }
  manifest.stages[stage] = rec;
  write_json(dir / "manifest.json", to_json(manifest));
  result.artifacts = ctx.written;
  if (opts.log) *opts.log << to_string(stage) << ": wrote " << ctx.written.size() << " artifacts\n";
  return result;
}

std::vector<StageResult> run_all(const ExperimentConfig& config, const RunOptions& opts) {
  std::vector<StageResult> out;
  for (Stage s : kAllStages) out.push_back(run_stage(config, s, opts));
  return out;
}

}  // namespace stepwise
