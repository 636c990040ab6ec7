#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pflab/dataset.hpp"
#include "pflab/solvers.hpp"

namespace pflab {

struct ConsistencyRow {
  std::size_t entry = 0;
  double neg_l2 = 0.0;
  double psnr = 0.0;
  double cosine = 0.0;
  int nfe = 0;
  bool failed = false;
  std::string error;
  Vec output;
};

struct MetricSummary {
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;  // population
};

MetricSummary summarize(std::vector<double> values);

struct ConsistencyReport {
  std::string solver;
  int steps = 0;
  std::vector<ConsistencyRow> rows;
  MetricSummary neg_l2;
  MetricSummary psnr;
  MetricSummary cosine;
  double nfe_per_sample = 0.0;
  double wall_seconds_per_sample = 0.0;  // measured, not deterministic
  std::size_t failed = 0;
};

// Runs the solver on every entry and compares against x_gt. Entries whose
// solve throws are marked failed and left out of the aggregates.
ConsistencyReport consistency_report(const Solver& solver, const OfflineDataset& dataset,
                                     int threads = 1);
Json report_summary_json(const ConsistencyReport& report);
std::string report_rows_csv(const ConsistencyReport& report);

struct OrderEstimate {
  double order = 0.0;
  double stderr_ = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::vector<int> steps;
  std::vector<double> errors;  // RMS over samples, one per K
  std::vector<bool> used;      // errors below 1e-12 are left out of the fit
};

// Least-squares slope of log e_K against log(1/K), with a 95% Student-t
// interval. e_K is the RMS distance to a tight-tolerance reference over
// `samples` prior draws.
OrderEstimate convergence_order(const std::function<std::unique_ptr<Solver>(int)>& make_solver,
                                const MixtureModel& model, const NoiseSchedule& schedule,
                                const std::vector<int>& step_list, int samples = 8,
                                std::uint64_t seed = 0);
OrderEstimate convergence_order(const CoefficientProvider& provider, GridKind grid_kind,
                                const MixtureModel& model, const NoiseSchedule& schedule,
                                const std::vector<int>& step_list, int samples = 8,
                                std::uint64_t seed = 0);

// V-statistic energy distance 2 E|A - B| - E|A - A'| - E|B - B'|.
double energy_distance(const std::vector<Vec>& a, const std::vector<Vec>& b);

// seconds = per_call * solver_calls + per_nfe * NFE
struct CostModel {
  double per_call = 0.0;
  double per_nfe = 1.0;
  double seconds(int calls, long nfe) const { return per_call * calls + per_nfe * nfe; }
};

// Times DDIM runs of two lengths on the host to fit the affine cost model.
CostModel calibrate_cost_model(const MixtureModel& model, const NoiseSchedule& schedule);

enum class PreviewMode { kHighQuality, kPreview };

struct PreviewSimResult {
  PreviewMode mode = PreviewMode::kHighQuality;
  double avg_attempts = 0.0;
  double avg_nfe = 0.0;
  double avg_time = 0.0;
  double decision_agreement = 0.0;
  int discarded_sessions = 0;
  int sessions = 0;
};

struct PreviewSimConfig {
  std::optional<double> tau;      // psnr threshold; nullopt -> percentile rule
  double tau_percentile = 70.0;   // of pairwise psnr among reference outputs
  int max_attempts = 10;
  std::uint64_t seed = 0;
  CostModel cost;
  int threads = 1;
};

struct PreviewSimReport {
  PreviewSimResult high_quality;
  PreviewSimResult preview;
  double tau = 0.0;
  double acceptance_rate = 0.0;   // share of evaluated full outputs accepted
  long attempts_evaluated = 0;
  bool accepts_everything = false;
  bool accepts_nothing = false;
};

// Percentile (linear interpolation) of pairwise psnr among the first
// `limit` reference outputs of the dataset.
double pairwise_psnr_percentile(const OfflineDataset& dataset, double percentile,
                                std::size_t limit = 200);

// Each dataset entry is one session whose hidden target is the entry's
// reference output. Attempt a draws z from a fresh seed; an output
// satisfies the session when psnr(output, target) >= tau. High-quality mode
// judges full-solver outputs; preview mode judges preview outputs and runs
// the full solver once on acceptance. Sessions without a satisfying
// attempt within max_attempts are discarded from the averages.
PreviewSimReport preview_simulation(const Solver& preview_solver, const Solver& full_solver,
                                    const OfflineDataset& dataset, const PreviewSimConfig& config);
Json preview_report_json(const PreviewSimReport& report, bool include_time);

struct CompareRow {
  std::string solver;
  int steps = 0;
  double nfe = 0.0;
  MetricSummary psnr;
  double neg_l2_mean = 0.0;
  double cosine_mean = 0.0;
  double energy_distance = 0.0;
  std::size_t failed = 0;
  double wall_seconds_per_sample = 0.0;
};

inline constexpr std::string_view kCompareHeader =
    "solver,steps,nfe,psnr_mean,psnr_median,psnr_std,neg_l2_mean,cosine_mean,energy_distance,"
    "failed";

// Rows in the order solver_ids x step_list. The reference solver appears
// once (its step count is reported as 0).
std::vector<CompareRow> compare_solvers(const SolverFactory& factory,
                                        const std::vector<std::string>& solver_ids,
                                        const std::vector<int>& step_list,
                                        const OfflineDataset& dataset, int threads = 1);
std::string compare_csv(const std::vector<CompareRow>& rows);

}  // namespace pflab
