// darkrank command-line runner.
//
//   darkrank gen-data      [--config F] [--seed N] [--out DIR] [synthetic flags]
//   darkrank train-teacher [--config F] [--seed N] [--out DIR]
//   darkrank distill       [--config F] [--seed N] [--out DIR] --teacher CKPT
//   darkrank evaluate      CKPT [--config F] [--out DIR]
//   darkrank sweep         --param alpha|beta|lambda --values 1,2,3 [--teacher CKPT] [--parallel N]
//   darkrank gradcheck     [--instances N] [--seed N] [--out DIR]
//   darkrank report        RUN_DIR... [--out DIR]
//
// Exit status: 0 on success, 1 on a failed run, 2 on usage or config errors.

#include "darkrank/checkpoint.hpp"
#include "darkrank/config.hpp"
#include "darkrank/dataset.hpp"
#include "darkrank/gradcheck.hpp"
#include "darkrank/trainer.hpp"
#include "log.hpp"
#include "manifest.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace darkrank::cli {
namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// Raised for bad invocations that CLI11 cannot detect on its own.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string teacher_path;
  std::size_t parallel = 1;
};

struct GenDataOptions {
  std::optional<std::size_t> identities;
  std::optional<std::size_t> samples;
  std::optional<std::size_t> dim;
  std::optional<double> stddev;
  std::optional<double> separation;
  std::optional<double> heldout_fraction;
};

ExperimentConfig load_effective_config(const CommonOptions& opt) {
  ExperimentConfig cfg = opt.config_path.empty() ? ExperimentConfig{} : load_config(opt.config_path);
  if (opt.seed) cfg.seed = *opt.seed;
  if (!opt.teacher_path.empty()) cfg.teacher_checkpoint = opt.teacher_path;
  cfg.validate();
  return cfg;
}

LabeledDataset load_data(const ExperimentConfig& cfg, RunManifest& manifest) {
  if (cfg.dataset.path) {
    manifest.add_input("dataset", *cfg.dataset.path);
    return load_dataset(*cfg.dataset.path);
  }
  spdlog::debug("generating synthetic dataset (seed {})", cfg.dataset.synthetic.seed);
  return generate(cfg.dataset.synthetic);
}

json metrics_document(const TrainReport& report, const std::string& hash) {
  return {{"role", report.role},
          {"variant", report.variant},
          {"seed", report.seed},
          {"config_hash", hash},
          {"metrics", report.metrics}};
}

void log_report(const TrainReport& r) {
  for (const auto& e : r.epochs) {
    spdlog::debug("{} epoch {} lr {:.3g} total {:.6f}", r.role, e.epoch, e.learning_rate, e.mean.total);
  }
  spdlog::info("{} ({}) heldout mAP {:.4f} rank1 {:.4f} recall@1 {:.4f} nmi {:.4f} f1 {:.4f} [{:.1f}s]",
               r.role, r.variant, r.metrics.at("mAP"), r.metrics.at("rank1"),
               r.metrics.at("recall_at_1"), r.metrics.at("nmi"), r.metrics.at("f1"), r.wall_seconds);
}

// Runs `body` inside a manifest; failures are recorded before propagating.
template <class Body>
int with_manifest(RunManifest& manifest, const ExperimentConfig* cfg, Body body) {
  manifest.begin();
  try {
    if (cfg != nullptr) write_json(manifest.output("config.json"), to_json(*cfg));
    const int code = body();
    manifest.finish(code == 0 ? "success" : "failure");
    return code;
  } catch (const std::exception& e) {
    manifest.finish("failure", e.what());
    throw;
  }
}

fs::path out_dir_or(const CommonOptions& opt, const char* fallback) {
  return opt.out_dir.empty() ? fs::path(fallback) : fs::path(opt.out_dir);
}

int cmd_gen_data(const CommonOptions& opt, const GenDataOptions& g) {
  ExperimentConfig cfg = opt.config_path.empty() ? ExperimentConfig{} : load_config(opt.config_path);
  SynthSpec& spec = cfg.dataset.synthetic;
  if (opt.seed) spec.seed = *opt.seed;
  if (g.identities) spec.num_identities = *g.identities;
  if (g.samples) spec.samples_per_identity = *g.samples;
  if (g.dim) spec.feature_dim = *g.dim;
  if (g.stddev) spec.intra_class_stddev = *g.stddev;
  if (g.separation) spec.inter_class_separation = *g.separation;
  if (g.heldout_fraction) spec.heldout_fraction = *g.heldout_fraction;
  try {
    spec.validate();
  } catch (const InputError& e) {
    throw ConfigError(std::string("dataset.synthetic: ") + e.what());
  }
  cfg.dataset.path.reset();

  RunManifest manifest(out_dir_or(opt, "."), "gen-data", config_hash(cfg));
  return with_manifest(manifest, &cfg, [&] {
    const LabeledDataset data = generate(spec);
    const fs::path path = manifest.output("dataset.csv");
    save_dataset(data, path);
    const auto train = select_split(data, Split::train);
    const auto held = select_split(data, Split::heldout);
    std::printf("wrote %s: n=%zu d=%zu identities train=%zu heldout=%zu samples train=%zu heldout=%zu\n",
                path.string().c_str(), data.size(), data.dim(), class_index(train.identities).size(),
                class_index(held.identities).size(), train.size(), held.size());
    return 0;
  });
}

int cmd_train_teacher(const CommonOptions& opt) {
  const ExperimentConfig cfg = load_effective_config(opt);
  const std::string hash = config_hash(cfg);
  RunManifest manifest(out_dir_or(opt, "teacher_run"), "train-teacher", hash);
  return with_manifest(manifest, &cfg, [&] {
    const LabeledDataset data = load_data(cfg, manifest);
    spdlog::info("training teacher (seed {})", cfg.seed);
    const TrainResult r = train_teacher(cfg, data);
    save_checkpoint(r.network, manifest.output("teacher.drk"));
    write_json(manifest.output("report.json"), to_json(r.report));
    write_json(manifest.output("metrics.json"), metrics_document(r.report, hash));
    log_report(r.report);
    return 0;
  });
}

NetworkState require_teacher(const ExperimentConfig& cfg, RunManifest& manifest) {
  if (!cfg.teacher_checkpoint) {
    throw ConfigError("distillation needs a teacher checkpoint (--teacher or teacher_checkpoint)");
  }
  manifest.add_input("teacher", *cfg.teacher_checkpoint);
  return load_checkpoint(*cfg.teacher_checkpoint);
}

int cmd_distill(const CommonOptions& opt) {
  const ExperimentConfig cfg = load_effective_config(opt);
  if (!cfg.teacher_checkpoint) {
    throw ConfigError("distill needs a teacher checkpoint (--teacher or teacher_checkpoint)");
  }
  const std::string hash = config_hash(cfg);
  RunManifest manifest(out_dir_or(opt, "distill_run"), "distill", hash);
  return with_manifest(manifest, &cfg, [&] {
    const NetworkState teacher = require_teacher(cfg, manifest);
    const LabeledDataset data = load_data(cfg, manifest);
    spdlog::info("distilling student with variant {} (seed {})", cfg.variant.to_string(), cfg.seed);
    const TrainResult r = train(cfg, data, &teacher);
    save_checkpoint(r.network, manifest.output("student.drk"));
    write_json(manifest.output("report.json"), to_json(r.report));
    write_json(manifest.output("metrics.json"), metrics_document(r.report, hash));
    log_report(r.report);
    return 0;
  });
}

int cmd_evaluate(const CommonOptions& opt, const std::string& checkpoint) {
  const ExperimentConfig cfg = load_effective_config(opt);
  const std::string hash = config_hash(cfg);
  RunManifest manifest(out_dir_or(opt, "evaluate_run"), "evaluate", hash);
  return with_manifest(manifest, &cfg, [&] {
    manifest.add_input("checkpoint", checkpoint);
    const NetworkState net = load_checkpoint(checkpoint);
    const LabeledDataset data = load_data(cfg, manifest);
    const auto metrics = evaluate(net, data, cfg.seed);
    write_json(manifest.output("metrics.json"),
               {{"checkpoint", fs::path(checkpoint).filename().string()},
                {"seed", cfg.seed},
                {"config_hash", hash},
                {"metrics", metrics}});
    for (const auto& [k, v] : metrics) std::printf("%s %.6f\n", k.c_str(), v);
    return 0;
  });
}

void apply_sweep_value(ExperimentConfig& cfg, const std::string& param, double value) {
  if (param == "alpha") {
    cfg.score.alpha = value;
  } else if (param == "beta") {
    cfg.score.beta = value;
  } else {
    cfg.weights.transfer = value;
  }
}

int cmd_sweep(const CommonOptions& opt, const std::string& param, const std::vector<double>& values) {
  if (param != "alpha" && param != "beta" && param != "lambda") {
    throw UsageError("sweep parameter must be one of alpha, beta, lambda (got '" + param + "')");
  }
  if (values.empty()) throw UsageError("sweep needs at least one value");
  const ExperimentConfig base = load_effective_config(opt);
  std::vector<ExperimentConfig> runs;
  for (double v : values) {
    ExperimentConfig c = base;
    apply_sweep_value(c, param, v);
    c.validate();
    runs.push_back(c);
  }

  RunManifest manifest(out_dir_or(opt, "sweep_run"), "sweep", config_hash(base));
  return with_manifest(manifest, &base, [&] {
    const LabeledDataset data = load_data(base, manifest);
    NetworkState teacher;
    if (base.teacher_checkpoint) {
      teacher = require_teacher(base, manifest);
    } else {
      spdlog::info("no teacher checkpoint given; training one (seed {})", base.seed);
      const TrainResult t = train_teacher(base, data);
      teacher = t.network;
      save_checkpoint(teacher, manifest.output("teacher.drk"));
      log_report(t.report);
    }

    std::vector<std::optional<TrainReport>> reports(runs.size());
    std::vector<std::string> errors(runs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < runs.size(); i = next++) {
        try {
          spdlog::info("sweep {}={} ({} of {})", param, values[i], i + 1, runs.size());
          reports[i] = train(runs[i], data, &teacher).report;
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    };
    const std::size_t threads = std::clamp<std::size_t>(opt.parallel, 1, runs.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (std::size_t i = 0; i < runs.size(); ++i) {
      if (!errors[i].empty()) {
        throw std::runtime_error(param + "=" + std::to_string(values[i]) + ": " + errors[i]);
      }
    }

    json rows = json::array();
    std::vector<std::string> keys;
    for (const auto& [k, v] : reports.front()->metrics) keys.push_back(k);
    std::ostringstream csv;
    csv << param;
    for (const auto& k : keys) csv << ',' << k;
    csv << '\n';
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const TrainReport& r = *reports[i];
      rows.push_back({{"value", values[i]}, {"metrics", r.metrics}, {"config_hash", config_hash(runs[i])}});
      csv << json(values[i]).dump();
      for (const auto& k : keys) csv << ',' << json(r.metrics.at(k)).dump();
      csv << '\n';
      log_report(r);
    }
    write_json(manifest.output("sweep.json"),
               {{"parameter", param}, {"variant", base.variant.to_string()}, {"seed", base.seed}, {"rows", rows}});
    write_text(manifest.output("sweep.csv"), csv.str());
    return 0;
  });
}

int cmd_gradcheck(const CommonOptions& opt, std::size_t instances) {
  const std::uint64_t seed = opt.seed.value_or(0);
  RunManifest manifest(out_dir_or(opt, "gradcheck_run"), "gradcheck",
                       std::to_string(instances) + "-" + std::to_string(seed));
  return with_manifest(manifest, nullptr, [&] {
    const auto result = run_gradient_suite(gradient_cases(), instances, seed);
    json cases = json::array();
    const oracle::GradCheckReport* worst = nullptr;
    for (const auto& r : result.reports) {
      std::printf("%-16s max_rel_err %.3e over %zu entries  %s\n", r.name.c_str(), r.max_relative_error,
                  r.entries.size(), r.pass ? "pass" : "FAIL");
      cases.push_back({{"name", r.name},
                       {"max_relative_error", r.max_relative_error},
                       {"entries", r.entries.size()},
                       {"pass", r.pass}});
      if (worst == nullptr || r.max_relative_error > worst->max_relative_error) worst = &r;
    }
    write_json(manifest.output("gradcheck.json"),
               {{"instances", instances}, {"seed", seed}, {"tolerance", 1e-4}, {"pass", result.pass}, {"cases", cases}});
    if (!result.pass) {
      spdlog::error("gradient check failed; worst offender {} (relative error {:.3e})", worst->name,
                    worst->max_relative_error);
      return kExitFailure;
    }
    std::printf("all %zu gradient checks passed\n", result.reports.size());
    return 0;
  });
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(p.string() + ": " + e.what());
  }
}

int cmd_report(const CommonOptions& opt, const std::vector<std::string>& run_dirs) {
  if (run_dirs.empty()) throw UsageError("report needs at least one run directory");
  RunManifest manifest(out_dir_or(opt, "report"), "report", "-");
  return with_manifest(manifest, nullptr, [&] {
    json runs = json::array();
    std::vector<std::string> keys;
    std::ostringstream summary;
    std::ostringstream curves;
    curves << "run,role,variant,seed,epoch,learning_rate,component,value\n";
    for (const auto& dir : run_dirs) {
      manifest.add_input(dir, dir);
      const fs::path report_path = fs::path(dir) / "report.json";
      const fs::path sweep_path = fs::path(dir) / "sweep.json";
      if (fs::exists(report_path)) {
        const json r = read_json(report_path);
        runs.push_back({{"run", dir},
                        {"role", r.at("role")},
                        {"variant", r.at("variant")},
                        {"seed", r.at("seed")},
                        {"metrics", r.at("metrics")}});
        for (const auto& e : r.at("epochs")) {
          for (const auto& [name, value] : e.at("loss").items()) {
            curves << dir << ',' << r.at("role").get<std::string>() << ','
                   << r.at("variant").get<std::string>() << ',' << r.at("seed").dump() << ','
                   << e.at("epoch").dump() << ',' << e.at("learning_rate").dump() << ',' << name
                   << ',' << value.dump() << '\n';
          }
        }
      } else if (fs::exists(sweep_path)) {
        const json s = read_json(sweep_path);
        for (const auto& row : s.at("rows")) {
          runs.push_back({{"run", dir + ":" + s.at("parameter").get<std::string>() + "=" + row.at("value").dump()},
                          {"role", "student"},
                          {"variant", s.at("variant")},
                          {"seed", s.at("seed")},
                          {"metrics", row.at("metrics")}});
        }
      } else {
        throw std::runtime_error(dir + " has neither report.json nor sweep.json");
      }
    }
    for (const auto& [k, v] : runs.front().at("metrics").items()) keys.push_back(k);
    summary << "run,role,variant,seed";
    for (const auto& k : keys) summary << ',' << k;
    summary << '\n';
    for (const auto& r : runs) {
      summary << r.at("run").get<std::string>() << ',' << r.at("role").get<std::string>() << ','
              << r.at("variant").get<std::string>() << ',' << r.at("seed").dump();
      for (const auto& k : keys) summary << ',' << (r.at("metrics").contains(k) ? r.at("metrics").at(k).dump() : "");
      summary << '\n';
    }
    write_json(manifest.output("summary.json"), {{"runs", runs}});
    write_text(manifest.output("summary.csv"), summary.str());
    write_text(manifest.output("loss_curves.csv"), curves.str());
    std::printf("%s", summary.str().c_str());
    return 0;
  });
}

void add_common(CLI::App* sub, CommonOptions& opt, bool teacher, bool parallel) {
  sub->add_option("--config", opt.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  sub->add_option("--seed", opt.seed, "Seed override");
  sub->add_option("--out", opt.out_dir, "Output directory");
  if (teacher) sub->add_option("--teacher", opt.teacher_path, "Teacher checkpoint")->check(CLI::ExistingFile);
  if (parallel) sub->add_option("--parallel", opt.parallel, "Concurrent runs")->check(CLI::PositiveNumber);
}

int run(int argc, char** argv) {
  CLI::App app{"DarkRank cross-sample similarity distillation toolkit"};
  app.require_subcommand(1);
  CommonOptions opt;
  GenDataOptions gen;
  std::string checkpoint;
  std::string sweep_param;
  std::vector<double> sweep_values;
  std::size_t instances = 100;
  std::vector<std::string> run_dirs;

  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic DRKDATA1 dataset");
  add_common(gen_cmd, opt, false, false);
  gen_cmd->add_option("--identities", gen.identities, "Number of identities");
  gen_cmd->add_option("--samples", gen.samples, "Samples per identity");
  gen_cmd->add_option("--dim", gen.dim, "Feature dimension");
  gen_cmd->add_option("--stddev", gen.stddev, "Within-identity standard deviation");
  gen_cmd->add_option("--separation", gen.separation, "Side of the identity-center hypercube");
  gen_cmd->add_option("--heldout-fraction", gen.heldout_fraction, "Fraction of heldout identities");

  auto* teacher_cmd = app.add_subcommand("train-teacher", "Train the teacher network");
  add_common(teacher_cmd, opt, false, false);

  auto* distill_cmd = app.add_subcommand("distill", "Train a student against a frozen teacher");
  add_common(distill_cmd, opt, true, false);

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on the heldout split");
  add_common(eval_cmd, opt, false, false);
  eval_cmd->add_option("checkpoint", checkpoint, "Network checkpoint")->required()->check(CLI::ExistingFile);

  auto* sweep_cmd = app.add_subcommand("sweep", "Distill once per parameter value");
  add_common(sweep_cmd, opt, true, true);
  sweep_cmd->add_option("--param", sweep_param, "alpha, beta or lambda")->required();
  sweep_cmd->add_option("--values", sweep_values, "Comma-separated values")->required()->delimiter(',');

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  grad_cmd->add_option("--seed", opt.seed, "Seed for the random instances");
  grad_cmd->add_option("--out", opt.out_dir, "Output directory");
  grad_cmd->add_option("--instances", instances, "Random instances per component")->check(CLI::PositiveNumber);

  auto* report_cmd = app.add_subcommand("report", "Collect run outputs into summary tables");
  report_cmd->add_option("--out", opt.out_dir, "Output directory");
  report_cmd->add_option("runs", run_dirs, "Run directories")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*gen_cmd) return cmd_gen_data(opt, gen);
  if (*teacher_cmd) return cmd_train_teacher(opt);
  if (*distill_cmd) return cmd_distill(opt);
  if (*eval_cmd) return cmd_evaluate(opt, checkpoint);
  if (*sweep_cmd) return cmd_sweep(opt, sweep_param, sweep_values);
  if (*grad_cmd) return cmd_gradcheck(opt, instances);
  return cmd_report(opt, run_dirs);
}

}  // namespace
}  // namespace darkrank::cli

int main(int argc, char** argv) {
  using namespace darkrank;
  try {
    cli::init_logging();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return cli::kExitUsage;
  }
  try {
    return cli::run(argc, argv);
  } catch (const cli::UsageError& e) {
    spdlog::error("{}", e.what());
    return cli::kExitUsage;
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return cli::kExitUsage;
  } catch (const TrainingError& e) {
    spdlog::error("training failed: {}", e.what());
    return cli::kExitFailure;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return cli::kExitFailure;
  }
}
