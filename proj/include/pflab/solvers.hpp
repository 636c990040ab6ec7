#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pflab/dataset.hpp"
#include "pflab/engine.hpp"
#include "pflab/policy.hpp"

namespace pflab {

struct SolverOutput {
  Vec x;
  int nfe = 0;
};

// Anything that maps prior noise z to a sample at t_min.
class Solver {
 public:
  virtual ~Solver() = default;
  virtual std::string id() const = 0;
  virtual int steps() const = 0;
  virtual SolverOutput solve(const MixtureModel& model, const NoiseSchedule& schedule,
                             VecView z) const = 0;
};

class MultistepSolver final : public Solver {
 public:
  MultistepSolver(std::shared_ptr<const CoefficientProvider> provider, StepGrid grid, int steps);
  std::string id() const override { return provider_->id(); }
  int steps() const override { return steps_; }
  SolverOutput solve(const MixtureModel& model, const NoiseSchedule& schedule,
                     VecView z) const override;
  const StepGrid& grid() const { return grid_; }
  const CoefficientProvider& provider() const { return *provider_; }

 private:
  std::shared_ptr<const CoefficientProvider> provider_;
  StepGrid grid_;
  int steps_;
};

class ReferenceSolver final : public Solver {
 public:
  explicit ReferenceSolver(ReferenceOptions options = {}) : options_(options) {}
  std::string id() const override { return "reference"; }
  int steps() const override { return 0; }
  SolverOutput solve(const MixtureModel& model, const NoiseSchedule& schedule,
                     VecView z) const override;

 private:
  ReferenceOptions options_;
};

// Resolves solver ids from configs: ddim, ab1..ab4 (ab2/ab4 are the usual
// picks), dpm2, policy, distill-table, reference.
class SolverFactory {
 public:
  SolverFactory(NoiseSchedule schedule, GridKind grid_kind)
      : schedule_(std::move(schedule)), grid_kind_(grid_kind) {}

  static const std::vector<std::string>& known_ids();

  void set_policy(PolicyParams params) { policy_ = std::move(params); }
  // Dataset used to distill tables on demand, one per step count.
  void set_distill_source(std::shared_ptr<const OfflineDataset> dataset, int order,
                          double ridge_lambda, int threads = 1);
  // Fixed table; only usable at its own step count.
  void set_distill_table(TableProvider table);
  void set_reference_options(ReferenceOptions options) { reference_ = options; }

  const NoiseSchedule& schedule() const { return schedule_; }
  GridKind grid_kind() const { return grid_kind_; }

  // Grid for `steps` primary intervals (midpoint-augmented for dpm2).
  StepGrid grid_for(const std::string& id, int steps) const;
  std::unique_ptr<Solver> make(const std::string& id, int steps) const;

 private:
  NoiseSchedule schedule_;
  GridKind grid_kind_;
  std::optional<PolicyParams> policy_;
  std::shared_ptr<const OfflineDataset> distill_data_;
  int distill_order_ = 4;
  double distill_lambda_ = 0.0;
  int distill_threads_ = 1;
  std::optional<TableProvider> distill_table_;
  ReferenceOptions reference_;
};

}  // namespace pflab
