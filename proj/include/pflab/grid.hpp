#pragma once

#include <string_view>
#include <vector>

#include "pflab/json.hpp"
#include "pflab/schedule.hpp"

namespace pflab {

enum class GridKind { kUniform, kQuadratic, kLogSnr, kMidpointAugmented };

std::string_view to_string(GridKind kind);
GridKind grid_kind_from_string(std::string_view name);

// Strictly decreasing timesteps t_0 > t_1 > ... > t_K inside the schedule
// domain. A midpoint-augmented grid interleaves primary nodes (even indices)
// with geometric midpoints in noise-ratio space (odd indices).
class StepGrid {
 public:
  StepGrid(std::vector<double> times, GridKind kind);

  const std::vector<double>& times() const { return times_; }
  GridKind kind() const { return kind_; }
  int transitions() const { return static_cast<int>(times_.size()) - 1; }
  // Number of primary intervals; equals transitions() except for
  // midpoint-augmented grids.
  int primary_intervals() const;
  double operator[](std::size_t i) const { return times_[i]; }

  friend bool operator==(const StepGrid&, const StepGrid&) = default;

 private:
  std::vector<double> times_;
  GridKind kind_;
};

// uniform: linear in t; quadratic: linear in sqrt(t); log-snr: linear in
// log n_t; midpoint-augmented: uniform nodes plus a node r with
// n_r = sqrt(n_t n_s) inside every interval.
StepGrid build_grid(GridKind kind, const NoiseSchedule& schedule, int steps);

// Insert a geometric noise-ratio midpoint into every interval of `base`.
StepGrid augment_with_midpoints(const StepGrid& base, const NoiseSchedule& schedule);

void to_json(Json& j, const StepGrid& g);
StepGrid grid_from_json(const Json& j);

}  // namespace pflab
