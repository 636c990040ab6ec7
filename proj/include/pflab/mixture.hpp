#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "pflab/json.hpp"
#include "pflab/schedule.hpp"
#include "pflab/types.hpp"

namespace pflab {

// Counts noise-predictor evaluations. Safe to bump from concurrent
// trajectories; copying snapshots the current count.
class NfeCounter {
 public:
  NfeCounter() = default;
  NfeCounter(const NfeCounter& other) : count_(other.value()) {}
  NfeCounter& operator=(const NfeCounter& other) {
    count_.store(other.value(), std::memory_order_relaxed);
    return *this;
  }
  void bump() const { count_.fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t value() const { return count_.load(std::memory_order_relaxed); }
  void reset() const { count_.store(0, std::memory_order_relaxed); }

 private:
  mutable std::atomic<std::uint64_t> count_{0};
};

// Isotropic Gaussian mixture sum_k pi_k N(mu_k, s_k^2 I). Under the forward
// process its time-t marginal stays a mixture, so the exact noise predictor
// eps(x, t) = -sigma_t grad log p_t(x) is available in closed form.
class MixtureModel {
 public:
  MixtureModel(std::vector<double> weights, std::vector<Vec> means, std::vector<double> stds);

  static MixtureModel standard_gaussian(int dim);

  int dim() const { return dim_; }
  std::size_t components() const { return weights_.size(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<Vec>& means() const { return means_; }
  const std::vector<double>& stds() const { return stds_; }

  // -sigma_t grad log p_t(x). Bumps the NFE counter once per call.
  Vec epsilon(const NoiseSchedule& schedule, VecView x, double t) const;
  double log_density(const NoiseSchedule& schedule, VecView x, double t) const;

  const NfeCounter& nfe() const { return nfe_; }

 private:
  // log pi_k + log N(x; alpha mu_k, v_k I) for every component.
  void component_log_terms(const NoiseSchedule& schedule, VecView x, double t,
                           std::vector<double>& log_terms, std::vector<double>& variances,
                           double& alpha) const;

  int dim_;
  std::vector<double> weights_;
  std::vector<Vec> means_;
  std::vector<double> stds_;
  NfeCounter nfe_;
};

// Free-function spellings of the model operations.
inline Vec epsilon_exact(const MixtureModel& model, const NoiseSchedule& schedule, VecView x,
                         double t) {
  return model.epsilon(schedule, x, t);
}
inline double marginal_logdensity(const MixtureModel& model, const NoiseSchedule& schedule,
                                  VecView x, double t) {
  return model.log_density(schedule, x, t);
}

// Conditioning signal of the desk-scale testbed: a condition id selects one
// synthesized mixture.
struct ConditionSpec {
  std::int64_t condition_id = 0;
  std::uint64_t generator_seed = 0;
};

inline constexpr int kSynthesisRuleVersion = 1;

// Deterministic synthesis: K in {2..5} (or `components` when positive), means
// uniform in [-4, 4]^D, stds uniform in [0.3, 1.0], weights ~ Dirichlet(1).
MixtureModel synthesize_mixture(const ConditionSpec& condition, int dim, int components = 0);

void to_json(Json& j, const MixtureModel& m);
MixtureModel mixture_from_json(const Json& j);

// Combined testbed document with the fields kind, beta_min, beta_max, t_min,
// t_max, dim, weights, means, stds.
Json testbed_to_json(const NoiseSchedule& schedule, const MixtureModel& model);

}  // namespace pflab
