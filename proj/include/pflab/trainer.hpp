#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "pflab/dataset.hpp"
#include "pflab/engine.hpp"
#include "pflab/policy.hpp"

namespace pflab {

enum class RewardKind { kNegL2, kPsnr, kCosine };

std::string_view to_string(RewardKind kind);
RewardKind reward_kind_from_string(std::string_view name);

// Data range used by the psnr reward on the mixture testbeds; covers the
// [-4, 4] mean-placement box.
inline constexpr double kPsnrRange = 8.0;
inline constexpr double kPsnrCap = 100.0;

// neg-l2 = -|x_p - x_gt|^2 / D; psnr = 10 log10(range^2 / mse), capped at 100
// when mse < 1e-20; cosine = <x_p, x_gt> / (|x_p| |x_gt|), 0 for a zero vector.
double reward(RewardKind kind, VecView x_p, VecView x_gt, double range = kPsnrRange);

// (R - mean) / (std + delta) with the population standard deviation.
Vec normalize_advantage(VecView rewards, double delta);

enum class BatchMode { kReplicate, kDistinct };

std::string_view to_string(BatchMode mode);
BatchMode batch_mode_from_string(std::string_view name);

struct PPOConfig {
  double clip_eps = 0.2;
  double learning_rate = 1e-4;
  int iterations = 3000;
  int batch = 80;
  int ppo_epochs = 4;
  double adv_delta = 1e-8;
  RewardKind reward = RewardKind::kPsnr;
  BatchMode batch_mode = BatchMode::kReplicate;
  std::uint64_t seed = 0;
  int checkpoint_every = 100;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int threads = 1;

  void validate() const;
  bool operator==(const PPOConfig&) const = default;
};

struct RolloutBatch {
  std::vector<int> entry_indices;          // one per rollout
  std::vector<double> times;               // grid nodes
  std::vector<int> effective_orders;       // one per transition
  std::vector<std::vector<Vec>> actions;   // [B][K] raw actions
  std::vector<double> old_logprobs;        // summed over transitions
  std::vector<double> rewards;
  std::vector<Vec> previews;
  int nfe_per_rollout = 0;

  std::size_t size() const { return rewards.size(); }
};

// Effective orders min(i + 1, m) (1 everywhere when K = 1).
std::vector<int> warmup_orders(int transitions, int order);

// B stochastic trajectories. Rollout b uses the random stream
// Rng::stream(stream_seed, {stream_tag, b}) and the dataset entry
// entry_indices[b].
RolloutBatch rollout(const PolicyParams& params, const OfflineDataset& dataset,
                     const std::vector<int>& entry_indices, const StepGrid& grid,
                     RewardKind reward_kind, std::uint64_t stream_seed, std::uint64_t stream_tag,
                     int threads = 1);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

// One Adam ascent step (params += lr * m_hat / (sqrt(v_hat) + eps)).
void adam_ascent(std::vector<double>& params, const std::vector<double>& grad, AdamState& state,
                 double lr, double beta1, double beta2, double eps);

// Slope d/dr of min(r A, clip(r, 1 - eps, 1 + eps) A).
double clipped_surrogate_slope(double ratio, double advantage, double clip_eps);

struct SurrogateGradient {
  double objective = 0.0;         // mean over rollouts
  std::vector<double> grad;       // d objective / d params
  std::vector<double> ratios;
  double clip_fraction = 0.0;     // share of rollouts with |r - 1| > eps
};

SurrogateGradient ppo_surrogate_gradient(const PolicyParams& params, const RolloutBatch& batch,
                                         VecView advantages, double clip_eps);

struct PpoStats {
  double mean_ratio = 1.0;
  double clip_fraction = 0.0;
  double mean_reward = 0.0;
  bool skipped = false;  // no advantage signal in the batch
};

// ppo_epochs Adam ascent steps on the clipped surrogate. Parameters and
// optimizer state are only committed when every epoch produced a finite
// gradient; otherwise NumericError is thrown and both are left untouched.
PpoStats ppo_update(PolicyParams& params, AdamState& adam, const RolloutBatch& batch,
                    const PPOConfig& config);

struct TrainLogRow {
  int iter = 0;
  int entry = 0;
  double mean_reward = 0.0;
  double max_reward = 0.0;
  double clip_frac = 0.0;
  double log_std_mean = 0.0;
};

inline constexpr std::string_view kTrainLogHeader =
    "iter,entry,mean_reward,max_reward,clip_frac,log_std_mean";
std::string format_log_row(const TrainLogRow& row);

struct TrainerState {
  PolicyParams params;
  AdamState adam;
  int iteration = 0;  // completed iterations
};

struct TrainHooks {
  std::function<void(const TrainLogRow&)> on_iteration;
  std::function<void(const TrainerState&)> on_checkpoint;
};

// Iterations state.iteration .. config.iterations - 1. Each iteration picks
// an entry uniformly (replicate mode) or B entries (distinct mode), rolls
// out B trajectories, normalizes advantages and runs ppo_update. Randomness
// is keyed by (seed, iteration), so a resumed run continues bit-identically.
std::vector<TrainLogRow> train(TrainerState& state, const OfflineDataset& dataset,
                               const StepGrid& grid, const PPOConfig& config,
                               const TrainHooks& hooks = {});

Json trainer_state_to_json(const TrainerState& state);
TrainerState trainer_state_from_json(const Json& doc);

// Teacher-forced states along the reference trajectory at the coarse nodes.
struct TeacherData {
  std::vector<double> times;
  std::vector<double> noise;               // n at each node
  std::vector<std::vector<Vec>> y;         // [entry][node] reference y
  std::vector<std::vector<Vec>> eps;       // [entry][node < K] eps at reference states
};

TeacherData build_teacher(const OfflineDataset& dataset, const StepGrid& grid, int threads = 1);

struct DistillResult {
  std::vector<Vec> rows;          // per-transition weights, warm-up lengths
  std::vector<double> residuals;  // per-transition sum of squared residuals
  double total_residual = 0.0;
};

// Per transition i, ridge least squares
//   min_w sum_entries |y_{i+1} - y_i - dn_i sum_j w_j eps_{i-j}|^2 + lambda |w|^2.
// With lambda = 0 and singular normal equations, throws NumericError asking
// for a positive ridge.
DistillResult distill_coeffs(const TeacherData& teacher, int order, double ridge_lambda);
DistillResult distill_coeffs(const OfflineDataset& dataset, const StepGrid& grid, int order,
                             double ridge_lambda, int threads = 1);

// Teacher-forced residual of arbitrary weight rows (same objective, lambda = 0).
std::vector<double> teacher_forced_residuals(const TeacherData& teacher,
                                             const std::vector<Vec>& rows);

}  // namespace pflab
