#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pflab/dataset.hpp"
#include "pflab/eval.hpp"
#include "pflab/grid.hpp"
#include "pflab/policy.hpp"
#include "pflab/schedule.hpp"
#include "pflab/trainer.hpp"

namespace pflab {

// Full run configuration. Text form is sectioned key = value:
//
//   [schedule]
//   kind = vp-linear
//   # comment
//
// Every key has a default; unknown sections or keys are rejected.
struct RunConfig {
  struct Schedule {
    ScheduleKind kind = ScheduleKind::kVpLinear;
    double beta_min = 0.1;
    double beta_max = 20.0;
    // Unset bounds take the kind's default domain when resolved.
    std::optional<double> t_min;
    std::optional<double> t_max;
    bool operator==(const Schedule&) const = default;
  } schedule;

  struct Model {
    int dim = 2;
    int components = 0;  // 0: drawn per condition
    std::uint64_t generator_seed = 0;
    bool operator==(const Model&) const = default;
  } model;

  struct Data {
    std::size_t size = 2000;
    std::int64_t first_condition = 0;
    int num_conditions = 100;
    std::uint64_t noise_seed_base = 0;
    double ref_rel_tol = 1e-9;
    double ref_abs_tol = 1e-10;
    std::size_t holdout = 0;  // trailing entries kept out of training
    bool operator==(const Data&) const = default;
  } data;

  struct Grid {
    GridKind kind = GridKind::kUniform;
    int steps = 5;
    bool operator==(const Grid&) const = default;
  } grid;

  struct Solver {
    std::string id = "policy";
    int order = 4;
    int width = 256;
    int depth = 3;
    bool sum_to_one = false;
    std::string init = "ddim";
    double log_std_init = -2.995732273553991;  // log 0.05
    bool operator==(const Solver&) const = default;
  } solver;

  PPOConfig ppo;

  struct Distill {
    double ridge_lambda = 1e-10;
    bool operator==(const Distill&) const = default;
  } distill;

  struct Eval {
    std::vector<std::string> metrics = {"neg-l2", "psnr", "cosine"};
    std::vector<int> k_list = {5, 8, 10};
    std::vector<std::string> solvers = {"ddim", "ab4", "dpm2", "policy", "distill-table"};
    std::vector<int> order_k_list = {8, 16, 32, 64};
    int order_samples = 8;
    std::optional<double> tau;  // unset: percentile rule
    double tau_percentile = 70.0;
    int max_attempts = 10;
    std::string preview_solver = "policy";
    int preview_steps = 8;
    std::string full_solver = "ab4";
    int full_steps = 40;
    std::size_t sessions = 200;
    bool operator==(const Eval&) const = default;
  } eval;

  struct Io {
    std::string out_dir = "runs";
    std::string data = "data/dataset.ndjson";
    std::string policy;
    std::string coeffs;
    std::uint64_t seed = 0;
    int threads = 1;
    bool operator==(const Io&) const = default;
  } io;

  NoiseSchedule make_schedule() const;
  DatasetInfo dataset_info() const;
  PolicyShape policy_shape() const;
  // PPO block with io.seed and io.threads applied.
  PPOConfig ppo_config() const;
  ReferenceOptions reference_options() const;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// Parses the text form on top of the defaults. `origin` names the source in
// error messages.
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::string& path);
// Sets one key ("section.key") from its text value.
void set_config_value(RunConfig& config, const std::string& dotted_key, const std::string& value);
// Every key, defaults materialized, in a fixed order.
std::string serialize_config(const RunConfig& config);
// FNV-1a 64 over the serialized config without io.threads and io.out_dir, in hex.
std::string config_hash(const RunConfig& config);
// Applies PFLAB_OUT_DIR, PFLAB_DATA, PFLAB_POLICY and PFLAB_COEFFS.
void apply_env_overrides(RunConfig& config);
std::vector<std::string> config_keys();

}  // namespace pflab
