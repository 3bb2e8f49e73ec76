#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "stepwise/pipeline.hpp"

using namespace stepwise;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kMissingUpstream = 3, kConfigMismatch = 4, kSchema = 5, kAudit = 6 };

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool literal = false;
  int workers = 1;

  void attach(CLI::App* app, bool config_required) {
    auto* c = app->add_option("--config", config, "Experiment config (JSON)");
    if (config_required) c->required();
    c->check(CLI::ExistingFile);
    app->add_option("--out", out, "Output directory (overrides output_dir)");
    app->add_option("--seed-override", seed, "Replace master_seed");
    app->add_flag("--weighted-mean-literal", literal, "Use the printed 1/(L-i-1) weights for weighted_mean");
    app->add_option("--workers", workers, "Worker threads")->check(CLI::Range(1, 256));
  }

  ExperimentConfig load() const {
    auto cfg = load_config(config);
    if (!out.empty()) cfg.output_dir = out;
    if (seed) cfg.master_seed = *seed;
    if (literal) cfg.rerank.weighted_mean_literal = true;
    cfg.validate();
    return cfg;
  }
};

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "ConfigError: " << e.what() << "\n";
    return kConfig;
  } catch (const MissingUpstreamError& e) {
    std::cerr << "MissingUpstreamError: " << e.what() << "\n";
    return kMissingUpstream;
  } catch (const ConfigMismatchError& e) {
    std::cerr << "ConfigMismatchError: " << e.what() << "\n";
    return kConfigMismatch;
  } catch (const SchemaMismatchError& e) {
    std::cerr << "SchemaMismatchError: " << e.what() << "\n";
    return kSchema;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward-model refinement pipeline on synthetic reasoning tasks"};
  app.require_subcommand(1);
  int code = kOk;

  std::vector<std::unique_ptr<Common>> opts;
  for (Stage st : kAllStages) {
    auto* sub = app.add_subcommand(std::string(to_string(st)), "Run the " + std::string(to_string(st)) + " stage");
    auto& o = *opts.emplace_back(std::make_unique<Common>());
    o.attach(sub, true);
    sub->callback([&o, st, &code] {
      code = guarded([&] {
        run_stage(o.load(), st, RunOptions{o.workers, &std::cout});
        return kOk;
      });
    });
  }

  auto* run = app.add_subcommand("run", "Run every stage in order, or one stage with --stage");
  auto& ro = *opts.emplace_back(std::make_unique<Common>());
  ro.attach(run, true);
  std::string stage;
  run->add_option("--stage", stage, "Single stage to run");
  run->callback([&] {
    code = guarded([&] {
      const auto cfg = ro.load();
      const RunOptions r{ro.workers, &std::cout};
      if (stage.empty()) run_all(cfg, r);
      else run_stage(cfg, stage_from_string(stage), r);
      return kOk;
    });
  });

  auto* audit = app.add_subcommand("audit", "Recount every summary number from the persisted records");
  auto& ao = *opts.emplace_back(std::make_unique<Common>());
  ao.attach(audit, false);
  audit->callback([&] {
    code = guarded([&] {
      std::filesystem::path dir = ao.out;
      if (dir.empty()) {
        if (ao.config.empty()) throw ConfigError("audit needs --out or --config");
        dir = ao.load().output_dir;
      }
      const auto res = audit_run(dir);
      for (const auto& f : res.failures) std::cout << "FAIL " << f << "\n";
      std::cout << res.checks.size() - res.failures.size() << "/" << res.checks.size() << " checks passed\n";
      return res.ok() ? kOk : kAudit;
    });
  });

  CLI11_PARSE(app, argc, argv);
  return code;
}
