#include "pflab/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pflab/errors.hpp"

namespace pflab {

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kVpLinear:
      return "vp-linear";
    case ScheduleKind::kRectifiedFlow:
      return "rectified-flow";
  }
  return "unknown";
}

ScheduleKind schedule_kind_from_string(std::string_view name) {
  if (name == "vp-linear") return ScheduleKind::kVpLinear;
  if (name == "rectified-flow") return ScheduleKind::kRectifiedFlow;
  throw ConfigError("unknown schedule kind '" + std::string(name) +
                    "' (expected vp-linear or rectified-flow)");
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, double beta_min, double beta_max,
                             double t_min, double t_max)
    : kind_(kind), beta_min_(beta_min), beta_max_(beta_max), t_min_(t_min), t_max_(t_max) {
  if (!(t_min > 0.0 && t_min < 1.0) || !(t_max > t_min && t_max <= 1.0)) {
    std::ostringstream os;
    os << "invalid schedule domain [" << t_min << ", " << t_max
       << "]: need 0 < t_min < t_max <= 1";
    throw ConfigError(os.str());
  }
  if (kind == ScheduleKind::kVpLinear) {
    if (!(beta_min > 0.0) || !(beta_max >= beta_min) || !std::isfinite(beta_max)) {
      throw ConfigError("vp-linear schedule needs 0 < beta_min <= beta_max");
    }
  } else if (!(t_max < 1.0)) {
    throw ConfigError("rectified-flow schedule needs t_max < 1 so that alpha_t > 0");
  }
}

NoiseSchedule NoiseSchedule::vp_linear(double beta_min, double beta_max, double t_min,
                                       double t_max) {
  return {ScheduleKind::kVpLinear, beta_min, beta_max, t_min, t_max};
}

NoiseSchedule NoiseSchedule::rectified_flow(double t_min, double t_max) {
  return {ScheduleKind::kRectifiedFlow, 0.0, 0.0, t_min, t_max};
}

double NoiseSchedule::log_alpha(double t) const {
  return -0.25 * t * t * (beta_max_ - beta_min_) - 0.5 * t * beta_min_;
}

AlphaSigma NoiseSchedule::alpha_sigma(double t) const {
  if (!contains(t)) {
    std::ostringstream os;
    os.precision(17);
    os << "t = " << t << " outside schedule domain [" << t_min_ << ", " << t_max_ << "]";
    throw DomainError(os.str());
  }
  if (kind_ == ScheduleKind::kRectifiedFlow) return {1.0 - t, t};
  const double la = log_alpha(t);
  // 1 - alpha^2 = -expm1(2 log alpha) keeps sigma accurate for small t.
  return {std::exp(la), std::sqrt(-std::expm1(2.0 * la))};
}

double NoiseSchedule::noise_ratio(double t) const {
  const auto [alpha, sigma] = alpha_sigma(t);
  return sigma / alpha;
}

double NoiseSchedule::time_of_noise_ratio(double n) const {
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw DomainError("noise ratio must be positive and finite");
  }
  double t = 0.0;
  if (kind_ == ScheduleKind::kRectifiedFlow) {
    t = n / (1.0 + n);
  } else {
    // alpha = 1 / sqrt(1 + n^2); solve a t^2 + b t + c = 0 with c = log alpha
    // in the cancellation-free form t = -2c / (b + sqrt(b^2 - 4ac)).
    const double c = -0.5 * std::log1p(n * n);
    const double a = 0.25 * (beta_max_ - beta_min_);
    const double b = 0.5 * beta_min_;
    t = -2.0 * c / (b + std::sqrt(b * b - 4.0 * a * c));
  }
  return std::clamp(t, t_min_, t_max_);
}

void to_json(Json& j, const NoiseSchedule& s) {
  j = Json::object();
  j["kind"] = std::string(to_string(s.kind()));
  if (s.kind() == ScheduleKind::kVpLinear) {
    j["beta_min"] = s.beta_min();
    j["beta_max"] = s.beta_max();
  }
  j["t_min"] = s.t_min();
  j["t_max"] = s.t_max();
}

NoiseSchedule schedule_from_json(const Json& j) {
  try {
    const auto kind = schedule_kind_from_string(j.at("kind").get<std::string>());
    if (kind == ScheduleKind::kVpLinear) {
      return NoiseSchedule::vp_linear(j.at("beta_min").get<double>(),
                                      j.at("beta_max").get<double>(),
                                      j.at("t_min").get<double>(), j.at("t_max").get<double>());
    }
    return NoiseSchedule::rectified_flow(j.at("t_min").get<double>(),
                                         j.at("t_max").get<double>());
  } catch (const Json::exception& e) {
    throw ParseError(std::string("schedule: ") + e.what());
  }
}

}  // namespace pflab
