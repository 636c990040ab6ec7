#pragma once

#include <string>
#include <string_view>
#include <utility>

#include "pflab/json.hpp"

namespace pflab {

enum class ScheduleKind { kVpLinear, kRectifiedFlow };

std::string_view to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(std::string_view name);

struct AlphaSigma {
  double alpha;
  double sigma;
};

// Noise schedule (alpha_t, sigma_t) of the forward process
//   x_t = alpha_t x_0 + sigma_t eps.
// The probability-flow ODE becomes dy/dn = eps(x, t) with y = x / alpha and
// n = sigma / alpha; every sampler in the project integrates in (y, n).
//
//   vp-linear:       log alpha_t = -t^2 (beta_max - beta_min) / 4 - t beta_min / 2,
//                    sigma_t = sqrt(1 - alpha_t^2)
//   rectified-flow:  alpha_t = 1 - t, sigma_t = t
class NoiseSchedule {
 public:
  static NoiseSchedule vp_linear(double beta_min = 0.1, double beta_max = 20.0,
                                 double t_min = 1e-3, double t_max = 1.0);
  static NoiseSchedule rectified_flow(double t_min = 1e-3, double t_max = 1.0 - 1e-3);

  ScheduleKind kind() const { return kind_; }
  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }
  double t_min() const { return t_min_; }
  double t_max() const { return t_max_; }

  bool contains(double t) const { return t >= t_min_ && t <= t_max_; }

  // Throw DomainError for t outside [t_min, t_max].
  AlphaSigma alpha_sigma(double t) const;
  double alpha(double t) const { return alpha_sigma(t).alpha; }
  double noise_ratio(double t) const;
  // Inverse of noise_ratio, clamped into [t_min, t_max].
  double time_of_noise_ratio(double n) const;

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

 private:
  NoiseSchedule(ScheduleKind kind, double beta_min, double beta_max, double t_min,
                double t_max);
  double log_alpha(double t) const;

  ScheduleKind kind_;
  double beta_min_;
  double beta_max_;
  double t_min_;
  double t_max_;
};

void to_json(Json& j, const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const Json& j);

}  // namespace pflab
