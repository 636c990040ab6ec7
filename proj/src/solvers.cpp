#include "pflab/solvers.hpp"

#include "pflab/errors.hpp"
#include "pflab/trainer.hpp"

namespace pflab {

MultistepSolver::MultistepSolver(std::shared_ptr<const CoefficientProvider> provider,
                                 StepGrid grid, int steps)
    : provider_(std::move(provider)), grid_(std::move(grid)), steps_(steps) {}

SolverOutput MultistepSolver::solve(const MixtureModel& model, const NoiseSchedule& schedule,
                                    VecView z) const {
  auto run = sample_trajectory(model, schedule, grid_, *provider_, z);
  return {std::move(run.states.back().x), run.nfe};
}

SolverOutput ReferenceSolver::solve(const MixtureModel& model, const NoiseSchedule& schedule,
                                    VecView z) const {
  auto ref = reference_solution(model, schedule, z, options_);
  return {std::move(ref.x), ref.nfe};
}

const std::vector<std::string>& SolverFactory::known_ids() {
  static const std::vector<std::string> ids{"ddim", "ab1",    "ab2",           "ab3",
                                            "ab4",  "dpm2",   "policy",        "distill-table",
                                            "reference"};
  return ids;
}

void SolverFactory::set_distill_source(std::shared_ptr<const OfflineDataset> dataset, int order,
                                       double ridge_lambda, int threads) {
  distill_data_ = std::move(dataset);
  distill_order_ = order;
  distill_lambda_ = ridge_lambda;
  distill_threads_ = threads;
}

void SolverFactory::set_distill_table(TableProvider table) { distill_table_ = std::move(table); }

StepGrid SolverFactory::grid_for(const std::string& id, int steps) const {
  if (id == "dpm2") {
    const GridKind base =
        grid_kind_ == GridKind::kMidpointAugmented ? GridKind::kUniform : grid_kind_;
    return augment_with_midpoints(build_grid(base, schedule_, steps), schedule_);
  }
  if (grid_kind_ == GridKind::kMidpointAugmented) {
    throw ConfigError("solver '" + id + "' does not run on a midpoint-augmented grid");
  }
  return build_grid(grid_kind_, schedule_, steps);
}

std::unique_ptr<Solver> SolverFactory::make(const std::string& id, int steps) const {
  if (id == "reference") return std::make_unique<ReferenceSolver>(reference_);
  if (steps < 1) throw ConfigError("solver '" + id + "' needs at least one step");
  if (id == "policy") {
    if (!policy_) throw ConfigError("solver 'policy' needs a policy checkpoint");
    return std::make_unique<MultistepSolver>(std::make_shared<PolicyMeanProvider>(*policy_),
                                             grid_for(id, steps), steps);
  }
  if (id == "distill-table") {
    const StepGrid grid = grid_for(id, steps);
    if (distill_table_ && distill_table_->rows().size() == static_cast<std::size_t>(steps)) {
      distill_table_->prepare(grid, schedule_);
      return std::make_unique<MultistepSolver>(std::make_shared<TableProvider>(*distill_table_),
                                               grid, steps);
    }
    if (!distill_data_) {
      throw ConfigError("solver 'distill-table' at K = " + std::to_string(steps) +
                        " needs a matching table or a distillation dataset");
    }
    auto result = distill_coeffs(*distill_data_, grid, distill_order_, distill_lambda_,
                                 distill_threads_);
    return std::make_unique<MultistepSolver>(
        std::make_shared<TableProvider>("distill-table", grid.times(), std::move(result.rows)),
        grid, steps);
  }
  const auto& ids = known_ids();
  if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
    std::string list;
    for (const auto& k : ids) list += (list.empty() ? "" : ", ") + k;
    throw UnknownSolverError("unknown solver id '" + id + "' (known: " + list + ")");
  }
  return std::make_unique<MultistepSolver>(
      std::shared_ptr<const CoefficientProvider>(make_classical_provider(id)), grid_for(id, steps),
      steps);
}

}  // namespace pflab
