#include "pflab/grid.hpp"

#include <cmath>
#include <string>

#include "pflab/errors.hpp"

namespace pflab {

std::string_view to_string(GridKind kind) {
  switch (kind) {
    case GridKind::kUniform:
      return "uniform";
    case GridKind::kQuadratic:
      return "quadratic";
    case GridKind::kLogSnr:
      return "log-snr";
    case GridKind::kMidpointAugmented:
      return "midpoint-augmented";
  }
  return "unknown";
}

GridKind grid_kind_from_string(std::string_view name) {
  if (name == "uniform") return GridKind::kUniform;
  if (name == "quadratic") return GridKind::kQuadratic;
  if (name == "log-snr") return GridKind::kLogSnr;
  if (name == "midpoint-augmented") return GridKind::kMidpointAugmented;
  throw ConfigError("unknown grid kind '" + std::string(name) +
                    "' (expected uniform, quadratic, log-snr or midpoint-augmented)");
}

StepGrid::StepGrid(std::vector<double> times, GridKind kind)
    : times_(std::move(times)), kind_(kind) {
  if (times_.size() < 2) throw ContractError("step grid needs at least two nodes");
  for (std::size_t i = 1; i < times_.size(); ++i) {
    if (!(times_[i] < times_[i - 1])) {
      throw ContractError("step grid times must be strictly decreasing (node " +
                          std::to_string(i) + ")");
    }
  }
  if (kind_ == GridKind::kMidpointAugmented && times_.size() % 2 == 0) {
    throw ContractError("midpoint-augmented grid needs an even number of transitions");
  }
}

int StepGrid::primary_intervals() const {
  return kind_ == GridKind::kMidpointAugmented ? transitions() / 2 : transitions();
}

StepGrid build_grid(GridKind kind, const NoiseSchedule& schedule, int steps) {
  if (steps < 1) throw ConfigError("grid needs K >= 1 steps");
  const double hi = schedule.t_max();
  const double lo = schedule.t_min();
  std::vector<double> t(static_cast<std::size_t>(steps) + 1);
  switch (kind) {
    case GridKind::kUniform:
    case GridKind::kMidpointAugmented:
      for (int i = 0; i <= steps; ++i) t[i] = hi + (lo - hi) * i / steps;
      break;
    case GridKind::kQuadratic: {
      const double a = std::sqrt(hi);
      const double b = std::sqrt(lo);
      for (int i = 0; i <= steps; ++i) {
        const double r = a + (b - a) * i / steps;
        t[i] = r * r;
      }
      break;
    }
    case GridKind::kLogSnr: {
      const double a = std::log(schedule.noise_ratio(hi));
      const double b = std::log(schedule.noise_ratio(lo));
      for (int i = 0; i <= steps; ++i) {
        t[i] = schedule.time_of_noise_ratio(std::exp(a + (b - a) * i / steps));
      }
      break;
    }
  }
  t.front() = hi;
  t.back() = lo;
  if (kind == GridKind::kMidpointAugmented) {
    return augment_with_midpoints(StepGrid(std::move(t), GridKind::kUniform), schedule);
  }
  return StepGrid(std::move(t), kind);
}

StepGrid augment_with_midpoints(const StepGrid& base, const NoiseSchedule& schedule) {
  if (base.kind() == GridKind::kMidpointAugmented) {
    throw ContractError("grid is already midpoint-augmented");
  }
  const auto& t = base.times();
  std::vector<double> out;
  out.reserve(2 * t.size() - 1);
  for (std::size_t i = 0; i + 1 < t.size(); ++i) {
    const double nr = std::sqrt(schedule.noise_ratio(t[i]) * schedule.noise_ratio(t[i + 1]));
    out.push_back(t[i]);
    out.push_back(schedule.time_of_noise_ratio(nr));
  }
  out.push_back(t.back());
  return StepGrid(std::move(out), GridKind::kMidpointAugmented);
}

void to_json(Json& j, const StepGrid& g) {
  j = Json::object();
  j["kind"] = std::string(to_string(g.kind()));
  j["times"] = g.times();
}

StepGrid grid_from_json(const Json& j) {
  try {
    return StepGrid(j.at("times").get<std::vector<double>>(),
                    grid_kind_from_string(j.at("kind").get<std::string>()));
  } catch (const Json::exception& e) {
    throw ParseError(std::string("grid: ") + e.what());
  } catch (const ContractError& e) {
    throw ParseError(std::string("grid: ") + e.what());
  }
}

}  // namespace pflab
