#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pflab/errors.hpp"
#include "pflab/grid.hpp"
#include "pflab/json.hpp"
#include "pflab/mixture.hpp"
#include "pflab/schedule.hpp"
#include "pflab/types.hpp"

namespace pflab {

struct DiffusionState {
  Vec x;
  double t;
};

// What a coefficient provider sees when asked for the weights of one
// transition t_i -> t_{i+1}.
struct StepContext {
  int step;                          // i
  double t_from;                     // t_i
  double t_to;                       // t_{i+1}
  int order;                         // effective order m_i (length of the answer)
  std::span<const double> noise;     // n_t at every grid node
};

// Supplies the blending weights w_1..w_{m_i} of
//   y_{i+1} = y_i + (n_{i+1} - n_i) sum_j w_j eps_{i+1-j}.
class CoefficientProvider {
 public:
  virtual ~CoefficientProvider() = default;

  virtual std::string id() const = 0;
  // Configured order m (maximum history length).
  virtual int order() const = 0;
  // True when every returned vector sums to one.
  virtual bool consistent() const { return false; }
  // Effective order at `step` given the warm-up order min(step + 1, m).
  virtual int effective_order(int step, int warmup_order) const {
    (void)step;
    return warmup_order;
  }
  // Validate the grid before a run; throws ConfigError on mismatch.
  virtual void prepare(const StepGrid& grid, const NoiseSchedule& schedule) const {
    (void)grid;
    (void)schedule;
  }
  virtual Vec weights(const StepContext& ctx) const = 0;
};

// Raised when a provider misbehaves mid-trajectory.
class SolverError : public NumericError {
 public:
  SolverError(const std::string& what, int step) : NumericError(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

// One explicit multistep update. `eps_newest_first[j]` is eps_{i-j}.
Vec lmm_step(VecView y, std::span<const VecView> eps_newest_first, VecView w, double n_from,
             double n_to);

struct SolverRun {
  StepGrid grid;
  std::vector<DiffusionState> states;  // K + 1 entries, states[0].x == z
  std::vector<Vec> eps_history;        // eps at nodes 0..K-1, in node order
  std::vector<Vec> coeffs_used;        // one weight vector per transition
  int nfe = 0;

  const Vec& output() const { return states.back().x; }
};

void to_json(Json& j, const SolverRun& run);

// Integrate from x_{t_0} = z across the grid. eps is evaluated exactly once
// per node t_0..t_{K-1}; the warm-up order is m_i = min(i + 1, m).
SolverRun sample_trajectory(const MixtureModel& model, const NoiseSchedule& schedule,
                            const StepGrid& grid, const CoefficientProvider& provider,
                            VecView z);

class DdimProvider final : public CoefficientProvider {
 public:
  std::string id() const override { return "ddim"; }
  int order() const override { return 1; }
  bool consistent() const override { return true; }
  Vec weights(const StepContext& ctx) const override;
};

// Classical Adams-Bashforth weights; lower effective orders fall back to the
// AB method of that order.
class AdamsBashforthProvider final : public CoefficientProvider {
 public:
  explicit AdamsBashforthProvider(int order);
  std::string id() const override { return "ab" + std::to_string(order_); }
  int order() const override { return order_; }
  bool consistent() const override { return true; }
  Vec weights(const StepContext& ctx) const override;

  static Vec coefficients(int order);

 private:
  int order_;
};

// Two-stage midpoint method on a midpoint-augmented grid: [1] into a
// midpoint, then the two-step weights that land on the geometric midpoint
// rule over the whole primary interval.
class Dpm2MidpointProvider final : public CoefficientProvider {
 public:
  std::string id() const override { return "dpm2"; }
  int order() const override { return 2; }
  bool consistent() const override { return true; }
  int effective_order(int step, int warmup_order) const override;
  void prepare(const StepGrid& grid, const NoiseSchedule& schedule) const override;
  Vec weights(const StepContext& ctx) const override;
};

// Per-transition weight table bound to one grid.
class TableProvider final : public CoefficientProvider {
 public:
  TableProvider(std::string id, std::vector<double> times, std::vector<Vec> rows);

  std::string id() const override { return id_; }
  int order() const override { return order_; }
  int effective_order(int step, int warmup_order) const override;
  void prepare(const StepGrid& grid, const NoiseSchedule& schedule) const override;
  Vec weights(const StepContext& ctx) const override;

  const std::vector<double>& times() const { return times_; }
  const std::vector<Vec>& rows() const { return rows_; }

 private:
  std::string id_;
  std::vector<double> times_;
  std::vector<Vec> rows_;
  int order_ = 1;
};

// "ddim", "ab1".."ab4", "dpm2". Throws UnknownSolverError otherwise.
std::unique_ptr<CoefficientProvider> make_classical_provider(const std::string& id);

struct ReferenceOptions {
  double rel_tol = 1e-9;
  double abs_tol = 1e-10;
  int max_steps = 1'000'000;
};

struct ReferenceResult {
  Vec x;              // x at the final requested time
  std::vector<Vec> x_at;  // x at every requested node (including the first)
  int nfe = 0;
  int accepted_steps = 0;
  int rejected_steps = 0;
};

// Adaptive Dormand-Prince 5(4) integration of dy/dn = eps(alpha y, t(n)) from
// x_{t_max} = z down to t_min. Steps are taken in s = log n, where the
// trajectory is smooth over the whole noise range.
ReferenceResult reference_solution(const MixtureModel& model, const NoiseSchedule& schedule,
                                   VecView z, const ReferenceOptions& options = {});

// Same integrator, reporting the state at every node of `times` (strictly
// decreasing; times[0] is where z lives).
ReferenceResult reference_trajectory(const MixtureModel& model, const NoiseSchedule& schedule,
                                     VecView z, std::span<const double> times,
                                     const ReferenceOptions& options = {});

}  // namespace pflab
