#include "pflab/trainer.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "pflab/errors.hpp"
#include "pflab/format.hpp"
#include "pflab/parallel.hpp"

namespace pflab {

std::string_view to_string(RewardKind kind) {
  switch (kind) {
    case RewardKind::kNegL2:
      return "neg-l2";
    case RewardKind::kPsnr:
      return "psnr";
    case RewardKind::kCosine:
      return "cosine";
  }
  return "unknown";
}

RewardKind reward_kind_from_string(std::string_view name) {
  if (name == "neg-l2") return RewardKind::kNegL2;
  if (name == "psnr") return RewardKind::kPsnr;
  if (name == "cosine") return RewardKind::kCosine;
  throw ConfigError("unknown reward '" + std::string(name) + "' (expected neg-l2, psnr or cosine)");
}

std::string_view to_string(BatchMode mode) {
  return mode == BatchMode::kReplicate ? "replicate" : "distinct";
}

BatchMode batch_mode_from_string(std::string_view name) {
  if (name == "replicate") return BatchMode::kReplicate;
  if (name == "distinct") return BatchMode::kDistinct;
  throw ConfigError("unknown batch_mode '" + std::string(name) + "' (expected replicate or distinct)");
}

double reward(RewardKind kind, VecView x_p, VecView x_gt, double range) {
  if (x_p.size() != x_gt.size() || x_p.empty()) {
    throw ContractError("reward: dimension mismatch (" + std::to_string(x_p.size()) + " vs " +
                        std::to_string(x_gt.size()) + ")");
  }
  const double dim = static_cast<double>(x_p.size());
  switch (kind) {
    case RewardKind::kNegL2:
    case RewardKind::kPsnr: {
      double sq = 0.0;
      for (std::size_t i = 0; i < x_p.size(); ++i) sq += (x_p[i] - x_gt[i]) * (x_p[i] - x_gt[i]);
      const double mse = sq / dim;
      if (kind == RewardKind::kNegL2) return -mse;
      if (mse < 1e-20) return kPsnrCap;
      return std::min(kPsnrCap, 10.0 * std::log10(range * range / mse));
    }
    case RewardKind::kCosine: {
      double dot = 0.0;
      double na = 0.0;
      double nb = 0.0;
      for (std::size_t i = 0; i < x_p.size(); ++i) {
        dot += x_p[i] * x_gt[i];
        na += x_p[i] * x_p[i];
        nb += x_gt[i] * x_gt[i];
      }
      if (na == 0.0 || nb == 0.0) return 0.0;
      return dot / (std::sqrt(na) * std::sqrt(nb));
    }
  }
  return 0.0;
}

Vec normalize_advantage(VecView rewards, double delta) {
  if (rewards.empty()) throw ContractError("normalize_advantage: empty batch");
  const double n = static_cast<double>(rewards.size());
  // Deviations from the first reward, so an all-equal batch gives exact zeros.
  const double r0 = rewards[0];
  double shift = 0.0;
  for (double r : rewards) shift += r - r0;
  shift /= n;
  double var = 0.0;
  for (double r : rewards) var += ((r - r0) - shift) * ((r - r0) - shift);
  const double sd = std::sqrt(var / n);
  Vec out(rewards.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ((rewards[i] - r0) - shift) / (sd + delta);
  return out;
}

void PPOConfig::validate() const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("ppo.clip_eps must lie in (0, 1)");
  if (!(learning_rate > 0.0)) throw ConfigError("ppo.learning_rate must be positive");
  if (iterations < 0) throw ConfigError("ppo.iterations must be non-negative");
  if (batch < 2) throw ConfigError("ppo.batch must be at least 2");
  if (ppo_epochs < 1) throw ConfigError("ppo.epochs must be at least 1");
  if (!(adv_delta > 0.0)) throw ConfigError("ppo.adv_delta must be positive");
  if (checkpoint_every < 1) throw ConfigError("ppo.checkpoint_every must be positive");
  if (threads < 1) throw ConfigError("threads must be at least 1");
}

std::vector<int> warmup_orders(int transitions, int order) {
  std::vector<int> out(static_cast<std::size_t>(transitions));
  for (int i = 0; i < transitions; ++i) out[i] = transitions == 1 ? 1 : std::min(i + 1, order);
  return out;
}

RolloutBatch rollout(const PolicyParams& params, const OfflineDataset& dataset,
                     const std::vector<int>& entry_indices, const StepGrid& grid,
                     RewardKind reward_kind, std::uint64_t stream_seed, std::uint64_t stream_tag,
                     int threads) {
  if (entry_indices.size() < 2) throw ContractError("rollout: batch needs B >= 2");
  const auto& t = grid.times();
  const int steps = grid.transitions();
  const std::size_t batch = entry_indices.size();

  RolloutBatch out;
  out.entry_indices = entry_indices;
  out.times = t;
  out.effective_orders = warmup_orders(steps, params.shape().order);
  out.actions.resize(batch);
  out.old_logprobs.resize(batch);
  out.rewards.resize(batch);
  out.previews.resize(batch);
  out.nfe_per_rollout = steps;

  std::vector<Vec> means(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) means[k] = mean_action(params, t[k], t[k + 1]);
  const auto log_std = params.log_std();

  parallel_for(batch, threads, [&](std::size_t b) {
    const auto entry_index = static_cast<std::size_t>(entry_indices[b]);
    if (entry_index >= dataset.size()) throw ContractError("rollout: entry index out of range");
    const auto& entry = dataset[entry_index];
    Rng rng = Rng::stream(stream_seed, {stream_tag, b});
    std::vector<Vec> rows(static_cast<std::size_t>(steps));
    auto& actions = out.actions[b];
    actions.resize(static_cast<std::size_t>(steps));
    double lp = 0.0;
    for (int k = 0; k < steps; ++k) {
      Vec a(means[k].size());
      for (std::size_t j = 0; j < a.size(); ++j) {
        const double zeta = rng.normal();
        a[j] = log_std[j] <= kLogStdMin ? means[k][j] : means[k][j] + std::exp(log_std[j]) * zeta;
      }
      const int mi = out.effective_orders[k];
      lp += gaussian_logprob(params, means[k], a, mi);
      rows[k] = action_to_coefficients(params.shape(), a, mi);
      actions[k] = std::move(a);
    }
    const TableProvider provider("rollout", t, std::move(rows));
    try {
      const auto run = sample_trajectory(dataset.model(entry), dataset.schedule(), grid, provider,
                                         entry.z);
      out.previews[b] = run.output();
    } catch (const Error& e) {
      throw NumericError("rollout " + std::to_string(b) + ": " + e.what());
    }
    out.old_logprobs[b] = lp;
    out.rewards[b] = reward(reward_kind, out.previews[b], entry.x_gt);
    if (!std::isfinite(out.rewards[b])) {
      throw NumericError("rollout " + std::to_string(b) + ": non-finite reward");
    }
  });
  return out;
}

void adam_ascent(std::vector<double>& params, const std::vector<double>& grad, AdamState& state,
                 double lr, double beta1, double beta2, double eps) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
    params[i] += lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + eps);
  }
}

double clipped_surrogate_slope(double ratio, double advantage, double clip_eps) {
  if (advantage > 0.0 && ratio > 1.0 + clip_eps) return 0.0;
  if (advantage < 0.0 && ratio < 1.0 - clip_eps) return 0.0;
  return advantage;
}

SurrogateGradient ppo_surrogate_gradient(const PolicyParams& params, const RolloutBatch& batch,
                                         VecView advantages, double clip_eps) {
  const std::size_t n = batch.size();
  if (advantages.size() != n) throw ContractError("ppo: one advantage per rollout required");
  const int steps = static_cast<int>(batch.effective_orders.size());
  const auto& t = batch.times;
  const std::size_t adim = static_cast<std::size_t>(params.shape().action_dim());

  std::vector<ForwardCache> caches(static_cast<std::size_t>(steps));
  std::vector<Vec> means(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) means[k] = mean_action(params, t[k], t[k + 1], &caches[k]);

  SurrogateGradient out;
  out.ratios.resize(n);
  std::vector<double> coef(n);
  int clipped = 0;
  for (std::size_t b = 0; b < n; ++b) {
    double lp = 0.0;
    for (int k = 0; k < steps; ++k) {
      lp += gaussian_logprob(params, means[k], batch.actions[b][k], batch.effective_orders[k]);
    }
    const double r = std::exp(lp - batch.old_logprobs[b]);
    const double a = advantages[b];
    out.ratios[b] = r;
    const double clipped_r = std::clamp(r, 1.0 - clip_eps, 1.0 + clip_eps);
    out.objective += std::min(r * a, clipped_r * a);
    const double slope = clipped_surrogate_slope(r, a, clip_eps);
    coef[b] = slope == 0.0 ? 0.0 : slope * r / static_cast<double>(n);
    if (std::abs(r - 1.0) > clip_eps) ++clipped;
  }
  out.objective /= static_cast<double>(n);
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(n);

  out.grad.assign(params.size(), 0.0);
  Vec d_mean(adim);
  Vec d_log_std(adim);
  Vec acc_mean(adim);
  for (int k = 0; k < steps; ++k) {
    std::fill(acc_mean.begin(), acc_mean.end(), 0.0);
    for (std::size_t b = 0; b < n; ++b) {
      if (coef[b] == 0.0) continue;
      logprob_partials(params, means[k], batch.actions[b][k], batch.effective_orders[k], d_mean,
                       d_log_std);
      for (std::size_t j = 0; j < adim; ++j) {
        acc_mean[j] += coef[b] * d_mean[j];
        out.grad[params.log_std_offset() + j] += coef[b] * d_log_std[j];
      }
    }
    backward(params, caches[k], acc_mean, out.grad);
  }
  return out;
}

PpoStats ppo_update(PolicyParams& params, AdamState& adam, const RolloutBatch& batch,
                    const PPOConfig& config) {
  config.validate();
  PpoStats stats;
  stats.mean_reward =
      std::accumulate(batch.rewards.begin(), batch.rewards.end(), 0.0) / batch.rewards.size();
  const Vec adv = normalize_advantage(batch.rewards, config.adv_delta);
  if (std::all_of(adv.begin(), adv.end(), [](double a) { return a == 0.0; })) {
    stats.skipped = true;
    return stats;
  }
  PolicyParams work = params;
  AdamState work_adam = adam;
  double ratio_sum = 0.0;
  double clip_sum = 0.0;
  for (int epoch = 0; epoch < config.ppo_epochs; ++epoch) {
    const auto g = ppo_surrogate_gradient(work, batch, adv, config.clip_eps);
    for (std::size_t i = 0; i < g.grad.size(); ++i) {
      if (!std::isfinite(g.grad[i])) {
        throw NumericError("ppo_update: non-finite gradient in epoch " + std::to_string(epoch) +
                           " (parameter " + std::to_string(i) + ")");
      }
    }
    ratio_sum += std::accumulate(g.ratios.begin(), g.ratios.end(), 0.0) / g.ratios.size();
    clip_sum += g.clip_fraction;
    adam_ascent(work.flat(), g.grad, work_adam, config.learning_rate, config.adam_beta1,
                config.adam_beta2, config.adam_eps);
  }
  work.check_finite();
  params = std::move(work);
  adam = std::move(work_adam);
  stats.mean_ratio = ratio_sum / config.ppo_epochs;
  stats.clip_fraction = clip_sum / config.ppo_epochs;
  return stats;
}

std::string format_log_row(const TrainLogRow& row) {
  return std::to_string(row.iter) + ',' + std::to_string(row.entry) + ',' +
         format_double(row.mean_reward) + ',' + format_double(row.max_reward) + ',' +
         format_double(row.clip_frac) + ',' + format_double(row.log_std_mean);
}

std::vector<TrainLogRow> train(TrainerState& state, const OfflineDataset& dataset,
                               const StepGrid& grid, const PPOConfig& config,
                               const TrainHooks& hooks) {
  config.validate();
  std::vector<TrainLogRow> log;
  const auto m = static_cast<std::uint64_t>(dataset.size());
  for (int iter = state.iteration; iter < config.iterations; ++iter) {
    Rng picker = Rng::stream(config.seed, {0xE7, static_cast<std::uint64_t>(iter)});
    std::vector<int> entries(static_cast<std::size_t>(config.batch));
    if (config.batch_mode == BatchMode::kReplicate) {
      std::fill(entries.begin(), entries.end(), static_cast<int>(picker.below(m)));
    } else {
      for (auto& e : entries) e = static_cast<int>(picker.below(m));
    }
    PpoStats stats;
    RolloutBatch batch;
    try {
      batch = rollout(state.params, dataset, entries, grid, config.reward, config.seed,
                      static_cast<std::uint64_t>(iter), config.threads);
      stats = ppo_update(state.params, state.adam, batch, config);
    } catch (const NumericError& e) {
      throw NumericError("iteration " + std::to_string(iter) + ": " + e.what());
    }
    state.iteration = iter + 1;
    TrainLogRow row;
    row.iter = iter;
    row.entry = entries.front();
    row.mean_reward = stats.mean_reward;
    row.max_reward = *std::max_element(batch.rewards.begin(), batch.rewards.end());
    row.clip_frac = stats.clip_fraction;
    const auto ls = state.params.log_std();
    row.log_std_mean = std::accumulate(ls.begin(), ls.end(), 0.0) / static_cast<double>(ls.size());
    log.push_back(row);
    if (hooks.on_iteration) hooks.on_iteration(row);
    if (hooks.on_checkpoint && state.iteration % config.checkpoint_every == 0) {
      hooks.on_checkpoint(state);
    }
  }
  return log;
}

Json trainer_state_to_json(const TrainerState& state) {
  Json doc = policy_to_json(state.params);
  doc["trainer"] = {{"iteration", state.iteration},
                    {"adam_step", state.adam.step},
                    {"adam_m", state.adam.m},
                    {"adam_v", state.adam.v}};
  return doc;
}

TrainerState trainer_state_from_json(const Json& doc) {
  TrainerState state{policy_from_json(doc), {}, 0};
  if (doc.contains("trainer")) {
    try {
      const auto& tr = doc.at("trainer");
      state.iteration = tr.at("iteration").get<int>();
      state.adam.step = tr.at("adam_step").get<std::int64_t>();
      state.adam.m = tr.at("adam_m").get<std::vector<double>>();
      state.adam.v = tr.at("adam_v").get<std::vector<double>>();
    } catch (const Json::exception& e) {
      throw ParseError(std::string("checkpoint /trainer: ") + e.what());
    }
    const bool empty_ok = state.adam.step == 0 && state.adam.m.empty() && state.adam.v.empty();
    if (!empty_ok &&
        (state.adam.m.size() != state.params.size() || state.adam.v.size() != state.params.size())) {
      throw ParseError("checkpoint /trainer: optimizer state size does not match parameters");
    }
  }
  return state;
}

TeacherData build_teacher(const OfflineDataset& dataset, const StepGrid& grid, int threads) {
  TeacherData teacher;
  teacher.times = grid.times();
  const auto& schedule = dataset.schedule();
  for (double t : teacher.times) teacher.noise.push_back(schedule.noise_ratio(t));
  const std::size_t nodes = teacher.times.size();
  teacher.y.resize(dataset.size());
  teacher.eps.resize(dataset.size());
  parallel_for(dataset.size(), threads, [&](std::size_t e) {
    const auto& entry = dataset[e];
    const auto& model = dataset.model(entry);
    const auto ref = reference_trajectory(model, schedule, entry.z, teacher.times,
                                          dataset.info().reference);
    auto& ys = teacher.y[e];
    auto& eps = teacher.eps[e];
    ys.resize(nodes);
    for (std::size_t i = 0; i < nodes; ++i) {
      const double a = schedule.alpha(teacher.times[i]);
      ys[i] = ref.x_at[i];
      for (double& v : ys[i]) v /= a;
      if (i + 1 < nodes) eps.push_back(model.epsilon(schedule, ref.x_at[i], teacher.times[i]));
    }
  });
  return teacher;
}

DistillResult distill_coeffs(const TeacherData& teacher, int order, double ridge_lambda) {
  if (order < 1) throw ConfigError("distill: order must be at least 1");
  if (!(ridge_lambda >= 0.0)) throw ConfigError("distill: ridge_lambda must be non-negative");
  const int steps = static_cast<int>(teacher.times.size()) - 1;
  const auto orders = warmup_orders(steps, order);
  DistillResult out;
  for (int i = 0; i < steps; ++i) {
    const int mi = orders[i];
    const double dn = teacher.noise[i + 1] - teacher.noise[i];
    Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(mi, mi);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(mi);
    for (std::size_t e = 0; e < teacher.y.size(); ++e) {
      const auto& y0 = teacher.y[e][i];
      const auto& y1 = teacher.y[e][i + 1];
      const Eigen::Index dim = static_cast<Eigen::Index>(y0.size());
      Eigen::MatrixXd design(dim, mi);
      for (int j = 0; j < mi; ++j) {
        const auto& eps = teacher.eps[e][static_cast<std::size_t>(i - j)];
        for (Eigen::Index d = 0; d < dim; ++d) design(d, j) = dn * eps[d];
      }
      Eigen::VectorXd target(dim);
      for (Eigen::Index d = 0; d < dim; ++d) target(d) = y1[d] - y0[d];
      normal += design.transpose() * design;
      rhs += design.transpose() * target;
    }
    normal.diagonal().array() += ridge_lambda;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal);
    const double top = eig.eigenvalues().maxCoeff();
    const double bottom = eig.eigenvalues().minCoeff();
    if (!(top > 0.0) || bottom <= 1e-12 * top) {
      throw NumericError("distill: normal equations for transition " + std::to_string(i) +
                         " are rank-deficient; use a positive ridge_lambda");
    }
    const Eigen::VectorXd w = normal.ldlt().solve(rhs);
    out.rows.emplace_back(w.data(), w.data() + w.size());
  }
  out.residuals = teacher_forced_residuals(teacher, out.rows);
  out.total_residual = std::accumulate(out.residuals.begin(), out.residuals.end(), 0.0);
  return out;
}

DistillResult distill_coeffs(const OfflineDataset& dataset, const StepGrid& grid, int order,
                             double ridge_lambda, int threads) {
  return distill_coeffs(build_teacher(dataset, grid, threads), order, ridge_lambda);
}

std::vector<double> teacher_forced_residuals(const TeacherData& teacher,
                                             const std::vector<Vec>& rows) {
  const int steps = static_cast<int>(teacher.times.size()) - 1;
  if (static_cast<int>(rows.size()) != steps) {
    throw ContractError("teacher_forced_residuals: one weight row per transition required");
  }
  std::vector<double> out(static_cast<std::size_t>(steps), 0.0);
  for (int i = 0; i < steps; ++i) {
    const auto& w = rows[i];
    if (w.empty() || static_cast<int>(w.size()) > i + 1) {
      throw ContractError("teacher_forced_residuals: invalid row length at " + std::to_string(i));
    }
    const double dn = teacher.noise[i + 1] - teacher.noise[i];
    for (std::size_t e = 0; e < teacher.y.size(); ++e) {
      const auto& y0 = teacher.y[e][i];
      const auto& y1 = teacher.y[e][i + 1];
      for (std::size_t d = 0; d < y0.size(); ++d) {
        double pred = y0[d];
        for (std::size_t j = 0; j < w.size(); ++j) {
          pred += dn * w[j] * teacher.eps[e][static_cast<std::size_t>(i) - j][d];
        }
        out[i] += (y1[d] - pred) * (y1[d] - pred);
      }
    }
  }
  return out;
}

}  // namespace pflab
