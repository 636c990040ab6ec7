#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pflab/engine.hpp"
#include "pflab/json.hpp"
#include "pflab/rng.hpp"
#include "pflab/types.hpp"

namespace pflab {

struct PolicyShape {
  int order = 4;         // m, number of blended eps evaluations
  int width = 256;       // hidden width W
  int depth = 3;         // hidden layers H
  bool sum_to_one = false;

  // With sum_to_one the head predicts w_2..w_m and w_1 = 1 - sum of them.
  int action_dim() const { return sum_to_one ? order - 1 : order; }
  // Action dimensions consumed by a transition of effective order m_i.
  int used_dims(int effective_order) const {
    return sum_to_one ? effective_order - 1 : effective_order;
  }
  friend bool operator==(const PolicyShape&, const PolicyShape&) = default;
};

// Log-std entries at or below this value mean "no exploration noise".
inline constexpr double kLogStdMin = -20.0;

// Weights of the coefficient policy f(t_i, t_{i+1}): an MLP with SiLU
// hidden layers and an identity head, plus a state-independent per-dimension
// exploration log-std. All parameters live in one flat vector:
//   [W_0, b_0, W_1, b_1, ..., W_H, b_H, log_std]
// with W_l stored row-major (out x in).
class PolicyParams {
 public:
  PolicyParams(PolicyShape shape, double t_lo, double t_hi);

  const PolicyShape& shape() const { return shape_; }
  double t_lo() const { return t_lo_; }
  double t_hi() const { return t_hi_; }
  int layers() const { return shape_.depth + 1; }
  int layer_in(int l) const { return l == 0 ? 2 : shape_.width; }
  int layer_out(int l) const { return l == shape_.depth ? shape_.action_dim() : shape_.width; }
  std::size_t weight_offset(int l) const { return offsets_[static_cast<std::size_t>(l)]; }
  std::size_t bias_offset(int l) const {
    return weight_offset(l) + static_cast<std::size_t>(layer_in(l) * layer_out(l));
  }
  std::size_t log_std_offset() const { return offsets_.back(); }

  std::vector<double>& flat() { return flat_; }
  const std::vector<double>& flat() const { return flat_; }
  std::span<double> log_std() { return std::span(flat_).subspan(log_std_offset()); }
  std::span<const double> log_std() const { return std::span(flat_).subspan(log_std_offset()); }
  std::size_t size() const { return flat_.size(); }

  void check_finite() const;

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  PolicyShape shape_;
  double t_lo_;
  double t_hi_;
  std::vector<std::size_t> offsets_;
  std::vector<double> flat_;
};

// Hidden activations kept for the backward pass.
struct ForwardCache {
  std::vector<Vec> pre;   // pre-activations per hidden layer
  std::vector<Vec> post;  // inputs to each layer (post[0] is the normalized input)
  Vec out;                // raw head output (mean action)
};

// Raw head output for transition (t_i, t_next); inputs are normalized to
// [0, 1] over the schedule domain.
Vec mean_action(const PolicyParams& params, double t_i, double t_next,
                ForwardCache* cache = nullptr);

// Map a raw action onto the effective_order coefficients it encodes.
Vec action_to_coefficients(const PolicyShape& shape, VecView action, int effective_order);

// Mean coefficient vector w(t_i, t_next) of length m.
Vec forward(const PolicyParams& params, double t_i, double t_next);

struct ActionSample {
  Vec action;        // full raw action (action_dim entries)
  Vec weights;       // coefficients for the effective order
  Vec mean;          // mean raw action
  double logprob;    // over the used dimensions only
  int effective_order;
};

ActionSample sample_action(const PolicyParams& params, double t_i, double t_next, Rng& rng,
                           int effective_order);
inline ActionSample sample_action(const PolicyParams& params, double t_i, double t_next,
                                  Rng& rng) {
  return sample_action(params, t_i, t_next, rng, params.shape().order);
}

// Diagonal-Gaussian log-density of the first used_dims(effective_order)
// entries of `action`, given the mean head output.
double gaussian_logprob(const PolicyParams& params, VecView mean, VecView action,
                        int effective_order);
double logprob(const PolicyParams& params, double t_i, double t_next, VecView action,
               int effective_order);

// d logprob / d mean and d logprob / d log_std for the used dimensions
// (zeros elsewhere).
void logprob_partials(const PolicyParams& params, VecView mean, VecView action,
                      int effective_order, std::span<double> d_mean,
                      std::span<double> d_log_std);

// Reverse-mode pass: accumulate the gradient of <d_out, head output> into
// `grad` (flat layout, MLP block only).
void backward(const PolicyParams& params, const ForwardCache& cache, VecView d_out,
              std::span<double> grad);

// Exact gradient of logprob over every parameter.
std::vector<double> grad_logprob(const PolicyParams& params, double t_i, double t_next,
                                 VecView action, int effective_order);

// baseline: "ddim" or "ab<m>". Hidden weights ~ 1e-2 N(0,1), hidden biases
// and head weights zero, head bias = baseline coefficients, log_std =
// log_std_init.
PolicyParams init_to_baseline(PolicyShape shape, const std::string& baseline, std::uint64_t seed,
                              double t_lo, double t_hi, double log_std_init = -2.995732273553991);

// Deterministic provider using the policy mean.
class PolicyMeanProvider final : public CoefficientProvider {
 public:
  explicit PolicyMeanProvider(PolicyParams params) : params_(std::move(params)) {}
  std::string id() const override { return "policy"; }
  int order() const override { return params_.shape().order; }
  bool consistent() const override { return params_.shape().sum_to_one; }
  Vec weights(const StepContext& ctx) const override;
  const PolicyParams& params() const { return params_; }

 private:
  PolicyParams params_;
};

Json export_coeff_table(const PolicyParams& params, const StepGrid& grid,
                        const NoiseSchedule& schedule, const std::string& id = "policy");
Json coeff_table_document(const std::string& id, const NoiseSchedule& schedule,
                          const StepGrid& grid, int order, const std::vector<Vec>& rows);
TableProvider import_coeff_table(const Json& doc);
TableProvider import_coeff_table(const std::string& text);

Json policy_to_json(const PolicyParams& params);
PolicyParams policy_from_json(const Json& doc);

}  // namespace pflab
