// pflab: dataset generation, training, distillation and evaluation of
// learned multistep samplers on closed-form mixture testbeds.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "pflab/config.hpp"
#include "pflab/errors.hpp"
#include "pflab/eval.hpp"
#include "pflab/format.hpp"
#include "pflab/solvers.hpp"
#include "pflab/trainer.hpp"

namespace fs = std::filesystem;
using namespace pflab;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kNumeric = 4, kUnknownSolver = 5 };

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
  std::string data;
  std::string policy;
  std::string coeffs;
  std::optional<int> steps;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool grid_steps) {
  cmd->add_option("--config", f.config_path, "Config file (sectioned key = value)");
  cmd->add_option("--set", f.sets, "Override one key, e.g. --set ppo.batch=32 (repeatable)");
  cmd->add_option("--seed", f.seed, "io.seed");
  cmd->add_option("--threads", f.threads, "io.threads; 1 gives bit-reproducible output");
  cmd->add_option("--out", f.out, "Existing directory that receives the run directory (io.out_dir)");
  cmd->add_option("--data", f.data, "Dataset NDJSON path (io.data)");
  cmd->add_option("--policy", f.policy, "Policy checkpoint JSON (io.policy)");
  cmd->add_option("--coeffs", f.coeffs, "Coefficient table JSON (io.coeffs)");
  if (grid_steps) cmd->add_option("--steps", f.steps, "grid.steps");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig c = f.config_path.empty() ? RunConfig{} : load_config(f.config_path);
  apply_env_overrides(c);
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got " + s);
    set_config_value(c, s.substr(0, eq), s.substr(eq + 1));
  }
  if (f.seed) c.io.seed = *f.seed;
  if (f.threads) c.io.threads = *f.threads;
  if (!f.out.empty()) c.io.out_dir = f.out;
  if (!f.data.empty()) c.io.data = f.data;
  if (!f.policy.empty()) c.io.policy = f.policy;
  if (!f.coeffs.empty()) c.io.coeffs = f.coeffs;
  if (f.steps) c.grid.steps = *f.steps;
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Json read_json(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// <out_dir>/<command>-<config hash>, containing the resolved config.
fs::path make_run_dir(const RunConfig& c, const std::string& command) {
  const fs::path root(c.io.out_dir);
  if (!fs::is_directory(root)) throw IoError("output directory does not exist: " + root.string());
  const fs::path dir = root / (command + "-" + config_hash(c));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  write_text(dir / "config.ini", serialize_config(c));
  return dir;
}

class Timings {
 public:
  void add(const std::string& name, double value) { doc_[name] = value; }
  void write(const fs::path& dir) const { write_text(dir / "timings.json", doc_.dump(2) + "\n"); }

 private:
  Json doc_ = Json::object();
};

double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::shared_ptr<const OfflineDataset> load_data(const RunConfig& c) {
  return std::make_shared<const OfflineDataset>(load_dataset(c.io.data));
}

// Entries before the holdout tail.
OfflineDataset training_split(const OfflineDataset& ds, const RunConfig& c) {
  if (c.data.holdout >= ds.size()) throw ConfigError("data.holdout leaves no training entries");
  return ds.slice(0, ds.size() - c.data.holdout);
}

OfflineDataset eval_split(const OfflineDataset& ds, const RunConfig& c) {
  return c.data.holdout == 0 ? ds : ds.slice(ds.size() - c.data.holdout, ds.size());
}

SolverFactory make_factory(const RunConfig& c, const OfflineDataset* data) {
  SolverFactory factory(c.make_schedule(), c.grid.kind);
  factory.set_reference_options(c.reference_options());
  if (!c.io.policy.empty()) {
    factory.set_policy(trainer_state_from_json(read_json(c.io.policy)).params);
  }
  if (!c.io.coeffs.empty()) factory.set_distill_table(import_coeff_table(read_text(c.io.coeffs)));
  if (data != nullptr) {
    factory.set_distill_source(std::make_shared<const OfflineDataset>(training_split(*data, c)),
                               c.solver.order, c.distill.ridge_lambda, c.io.threads);
  }
  return factory;
}

void print_path(const fs::path& p) { std::cout << p.string() << "\n"; }

int cmd_gen_data(const RunConfig& c) {
  const fs::path dir = make_run_dir(c, "gen-data");
  const auto start = std::chrono::steady_clock::now();
  const auto requests = dataset_requests(c.data.size, c.data.first_condition, c.data.num_conditions,
                                         c.data.noise_seed_base + c.io.seed);
  const auto ds = build_dataset(requests, c.dataset_info(), c.io.threads);
  Json extra = Json::object();
  extra["config_hash"] = config_hash(c);
  const fs::path path = dir / "dataset.ndjson";
  write_dataset(path.string(), ds, extra);
  Timings t;
  t.add("seconds", elapsed(start));
  t.write(dir);
  print_path(path);
  return kOk;
}

int cmd_train(const RunConfig& c, const std::string& resume, std::optional<int> iterations) {
  const auto data = load_data(c);
  const OfflineDataset train_set = training_split(*data, c);
  const fs::path dir = make_run_dir(c, "train");
  PPOConfig ppo = c.ppo_config();
  if (iterations) ppo.iterations = *iterations;
  if (ppo.iterations < 0) throw ConfigError("--iterations must be >= 0");
  const auto schedule = c.make_schedule();
  const StepGrid grid = build_grid(c.grid.kind, schedule, c.grid.steps);

  TrainerState state = resume.empty()
                           ? TrainerState{init_to_baseline(c.policy_shape(), c.solver.init, c.io.seed,
                                                           schedule.t_min(), schedule.t_max(),
                                                           c.solver.log_std_init),
                                          {}, 0}
                           : trainer_state_from_json(read_json(resume));
  if (!(state.params.shape() == c.policy_shape())) {
    throw ConfigError("checkpoint policy shape does not match the solver block");
  }

  const fs::path log_path = dir / "train_log.csv";
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw IoError("cannot write " + log_path.string());
  log << kTrainLogHeader << "\n";
  TrainHooks hooks;
  hooks.on_iteration = [&](const TrainLogRow& row) { log << format_log_row(row) << "\n"; };
  hooks.on_checkpoint = [&](const TrainerState& s) {
    write_text(dir / ("checkpoint_" + std::to_string(s.iteration) + ".json"),
               trainer_state_to_json(s).dump() + "\n");
  };
  const auto start = std::chrono::steady_clock::now();
  train(state, train_set, grid, ppo, hooks);
  log.close();
  if (!log) throw IoError("write failed for " + log_path.string());
  const fs::path final_path = dir / "policy.json";
  write_text(final_path, trainer_state_to_json(state).dump() + "\n");

  Json summary = Json::object();
  summary["iterations"] = state.iteration;
  summary["train_entries"] = train_set.size();
  summary["steps"] = c.grid.steps;
  if (c.data.holdout > 0) {
    const OfflineDataset held = eval_split(*data, c);
    MultistepSolver solver(std::make_shared<PolicyMeanProvider>(state.params), grid, c.grid.steps);
    summary["holdout"] = report_summary_json(consistency_report(solver, held, c.io.threads));
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  Timings t;
  t.add("seconds", elapsed(start));
  t.write(dir);
  print_path(final_path);
  return kOk;
}

int cmd_distill(const RunConfig& c) {
  const auto data = load_data(c);
  const OfflineDataset train_set = training_split(*data, c);
  const fs::path dir = make_run_dir(c, "distill");
  const auto schedule = c.make_schedule();
  const StepGrid grid = build_grid(c.grid.kind, schedule, c.grid.steps);
  const auto start = std::chrono::steady_clock::now();
  const auto result =
      distill_coeffs(train_set, grid, c.solver.order, c.distill.ridge_lambda, c.io.threads);
  const fs::path path = dir / "coeffs.json";
  write_text(path, coeff_table_document("distill-table", schedule, grid, c.solver.order, result.rows)
                           .dump(2) +
                       "\n");
  Json summary = Json::object();
  summary["residuals"] = result.residuals;
  summary["total_residual"] = result.total_residual;
  write_text(dir / "distill_summary.json", summary.dump(2) + "\n");
  Timings t;
  t.add("seconds", elapsed(start));
  t.write(dir);
  print_path(path);
  return kOk;
}

int cmd_eval(const RunConfig& c) {
  const auto data = load_data(c);
  const OfflineDataset held = eval_split(*data, c);
  const auto factory = make_factory(c, data.get());
  const auto solver = factory.make(c.solver.id, c.grid.steps);
  const fs::path dir = make_run_dir(c, "eval");
  const auto report = consistency_report(*solver, held, c.io.threads);
  write_text(dir / "eval_summary.json", report_summary_json(report).dump(2) + "\n");
  write_text(dir / "eval_rows.csv", report_rows_csv(report));
  Timings t;
  t.add("seconds_per_sample", report.wall_seconds_per_sample);
  t.write(dir);
  std::cout << report.solver << " K=" << report.steps << " psnr_mean=" << format_double(report.psnr.mean)
            << " failed=" << report.failed << "\n";
  return kOk;
}

std::vector<int> parse_steps(const std::string& text) {
  RunConfig scratch;
  set_config_value(scratch, "eval.k_list", text);
  return scratch.eval.k_list;
}

int cmd_compare(RunConfig c, const std::string& solvers, const std::string& steps) {
  if (!solvers.empty()) set_config_value(c, "eval.solvers", solvers);
  if (!steps.empty()) c.eval.k_list = parse_steps(steps);
  const auto data = load_data(c);
  const OfflineDataset held = eval_split(*data, c);
  const auto factory = make_factory(c, data.get());
  for (const auto& id : c.eval.solvers) (void)factory.make(id, c.eval.k_list.front());
  const fs::path dir = make_run_dir(c, "compare");
  const auto rows = compare_solvers(factory, c.eval.solvers, c.eval.k_list, held, c.io.threads);
  const std::string csv = compare_csv(rows);
  write_text(dir / "compare.csv", csv);
  Timings t;
  for (const auto& r : rows) {
    t.add(r.solver + "@" + std::to_string(r.steps) + ".seconds_per_sample", r.wall_seconds_per_sample);
  }
  t.write(dir);
  std::cout << csv;
  return kOk;
}

int cmd_order_test(RunConfig c, const std::string& solver_id) {
  if (!solver_id.empty()) c.solver.id = solver_id;
  if (c.solver.id == "policy" || c.solver.id == "distill-table" || c.solver.id == "reference") {
    throw ConfigError("order-test needs a fixed-coefficient solver (ddim, ab1..ab4, dpm2)");
  }
  const auto provider = make_classical_provider(c.solver.id);
  const fs::path dir = make_run_dir(c, "order-test");
  const auto schedule = c.make_schedule();
  const auto model = synthesize_mixture({c.data.first_condition, c.model.generator_seed}, c.model.dim,
                                        c.model.components);
  const auto est = convergence_order(*provider, c.grid.kind, model, schedule, c.eval.order_k_list,
                                     c.eval.order_samples, c.io.seed);
  Json j = Json::object();
  j["solver"] = c.solver.id;
  j["order"] = est.order;
  j["stderr"] = est.stderr_;
  j["ci95"] = {est.ci_low, est.ci_high};
  j["steps"] = est.steps;
  j["errors"] = est.errors;
  j["used"] = est.used;
  write_text(dir / "order.json", j.dump(2) + "\n");
  std::cout << c.solver.id << " order=" << format_double(est.order) << " ci95=["
            << format_double(est.ci_low) << ", " << format_double(est.ci_high) << "]\n";
  return kOk;
}

int cmd_preview_sim(const RunConfig& c) {
  const auto data = load_data(c);
  const OfflineDataset all = eval_split(*data, c);
  const OfflineDataset sessions = all.slice(0, std::min(c.eval.sessions, all.size()));
  const auto factory = make_factory(c, data.get());
  const auto preview = factory.make(c.eval.preview_solver, c.eval.preview_steps);
  const auto full = factory.make(c.eval.full_solver, c.eval.full_steps);
  const fs::path dir = make_run_dir(c, "preview-sim");
  PreviewSimConfig cfg;
  cfg.tau = c.eval.tau;
  cfg.tau_percentile = c.eval.tau_percentile;
  cfg.max_attempts = c.eval.max_attempts;
  cfg.seed = c.io.seed;
  cfg.threads = c.io.threads;
  cfg.cost = calibrate_cost_model(sessions.model(sessions[0]), sessions.schedule());
  const auto report = preview_simulation(*preview, *full, sessions, cfg);
  write_text(dir / "preview.json", preview_report_json(report, false).dump(2) + "\n");
  Timings t;
  t.add("cost_per_call", cfg.cost.per_call);
  t.add("cost_per_nfe", cfg.cost.per_nfe);
  t.add("high_quality_avg_time", report.high_quality.avg_time);
  t.add("preview_avg_time", report.preview.avg_time);
  t.write(dir);
  std::cout << "mode,avg_attempts,avg_nfe,avg_time,decision_agreement,discarded_sessions\n";
  for (const auto* r : {&report.high_quality, &report.preview}) {
    std::cout << (r->mode == PreviewMode::kHighQuality ? "high-quality" : "preview") << ','
              << format_double(r->avg_attempts) << ',' << format_double(r->avg_nfe) << ','
              << format_double(r->avg_time) << ',' << format_double(r->decision_agreement) << ','
              << r->discarded_sessions << "\n";
  }
  if (report.accepts_everything) std::cerr << "warning: tau accepts every attempt\n";
  if (report.accepts_nothing) std::cerr << "warning: tau accepts no attempt\n";
  return kOk;
}

int cmd_export_coeffs(const RunConfig& c) {
  if (c.io.policy.empty()) throw ConfigError("export-coeffs needs --policy");
  const auto params = trainer_state_from_json(read_json(c.io.policy)).params;
  const auto schedule = c.make_schedule();
  const StepGrid grid = build_grid(c.grid.kind, schedule, c.grid.steps);
  const fs::path dir = make_run_dir(c, "export-coeffs");
  const fs::path path = dir / "coeffs.json";
  write_text(path, export_coeff_table(params, grid, schedule).dump(2) + "\n");
  print_path(path);
  return kOk;
}

int cmd_show_config(const RunConfig& c) {
  std::cout << serialize_config(c);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pflab: learned multistep samplers for probability-flow ODEs"};
  app.require_subcommand(1);
  app.fallthrough(false);

  CommonFlags flags;
  std::string resume;
  std::optional<int> iterations;
  std::string solvers;
  std::string steps_list;
  std::string solver_id;

  auto* gen = app.add_subcommand("gen-data", "Build the offline (condition, noise, reference) dataset");
  auto* trn = app.add_subcommand("train", "Train the coefficient policy with PPO");
  auto* dst = app.add_subcommand("distill", "Fit a per-step coefficient table by least squares");
  auto* evl = app.add_subcommand("eval", "Consistency report of solver.id at grid.steps");
  auto* cmp = app.add_subcommand("compare", "Solver x step-count comparison table");
  auto* ord = app.add_subcommand("order-test", "Empirical convergence order of a fixed solver");
  auto* prv = app.add_subcommand("preview-sim", "Preview-and-refine session simulation");
  auto* exp = app.add_subcommand("export-coeffs", "Export a policy's mean coefficients as a table");
  auto* shw = app.add_subcommand("show-config", "Print the resolved config");
  for (auto* cmd : {gen, trn, dst, evl, cmp, ord, prv, exp, shw}) add_common(cmd, flags, cmd != cmp);
  trn->add_option("--resume", resume, "Resume from a trainer checkpoint");
  trn->add_option("--iterations", iterations, "Override ppo.iterations");
  cmp->add_option("--solvers", solvers, "Comma-separated solver ids (eval.solvers)");
  cmp->add_option("--steps", steps_list, "Comma-separated step counts (eval.k_list)");
  ord->add_option("--solver", solver_id, "Solver id (solver.id)");
  evl->add_option("--solver", solver_id, "Solver id (solver.id)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    RunConfig c = resolve(flags);
    if (!solver_id.empty()) c.solver.id = solver_id;
    if (*gen) return cmd_gen_data(c);
    if (*trn) return cmd_train(c, resume, iterations);
    if (*dst) return cmd_distill(c);
    if (*evl) return cmd_eval(c);
    if (*cmp) return cmd_compare(c, solvers, steps_list);
    if (*ord) return cmd_order_test(c, solver_id);
    if (*prv) return cmd_preview_sim(c);
    if (*exp) return cmd_export_coeffs(c);
    if (*shw) return cmd_show_config(c);
  } catch (const UnknownSolverError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnknownSolver;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
