#include "pflab/eval.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <numeric>

#include "pflab/errors.hpp"
#include "pflab/format.hpp"
#include "pflab/parallel.hpp"
#include "pflab/rng.hpp"
#include "pflab/trainer.hpp"

namespace pflab {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double distance(VecView a, VecView b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sq);
}

}  // namespace

MetricSummary summarize(std::vector<double> values) {
  MetricSummary s;
  if (values.empty()) {
    s.mean = s.median = s.std = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / n);
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  s.median = values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  return s;
}

ConsistencyReport consistency_report(const Solver& solver, const OfflineDataset& dataset,
                                     int threads) {
  ConsistencyReport report;
  report.solver = solver.id();
  report.steps = solver.steps();
  report.rows.resize(dataset.size());
  const auto start = Clock::now();
  parallel_for(dataset.size(), threads, [&](std::size_t i) {
    auto& row = report.rows[i];
    row.entry = i;
    const auto& entry = dataset[i];
    try {
      auto out = solver.solve(dataset.model(entry), dataset.schedule(), entry.z);
      row.nfe = out.nfe;
      row.neg_l2 = reward(RewardKind::kNegL2, out.x, entry.x_gt);
      row.psnr = reward(RewardKind::kPsnr, out.x, entry.x_gt);
      row.cosine = reward(RewardKind::kCosine, out.x, entry.x_gt);
      row.output = std::move(out.x);
    } catch (const Error& e) {
      row.failed = true;
      row.error = e.what();
    }
  });
  report.wall_seconds_per_sample = seconds_since(start) / static_cast<double>(dataset.size());
  std::vector<double> neg_l2;
  std::vector<double> psnr;
  std::vector<double> cosine;
  double nfe = 0.0;
  for (const auto& row : report.rows) {
    if (row.failed) {
      ++report.failed;
      continue;
    }
    neg_l2.push_back(row.neg_l2);
    psnr.push_back(row.psnr);
    cosine.push_back(row.cosine);
    nfe += row.nfe;
  }
  report.neg_l2 = summarize(std::move(neg_l2));
  report.psnr = summarize(psnr);
  report.cosine = summarize(std::move(cosine));
  report.nfe_per_sample = psnr.empty() ? 0.0 : nfe / static_cast<double>(psnr.size());
  return report;
}

Json report_summary_json(const ConsistencyReport& report) {
  auto summary = [](const MetricSummary& s) {
    return Json{{"mean", s.mean}, {"median", s.median}, {"std", s.std}};
  };
  Json j = Json::object();
  j["solver"] = report.solver;
  j["steps"] = report.steps;
  j["entries"] = report.rows.size();
  j["failed"] = report.failed;
  j["nfe_per_sample"] = report.nfe_per_sample;
  j["neg_l2"] = summary(report.neg_l2);
  j["psnr"] = summary(report.psnr);
  j["cosine"] = summary(report.cosine);
  return j;
}

std::string report_rows_csv(const ConsistencyReport& report) {
  std::string out = "entry,neg_l2,psnr,cosine,nfe,failed\n";
  for (const auto& row : report.rows) {
    out += std::to_string(row.entry) + ',' + format_double(row.neg_l2) + ',' +
           format_double(row.psnr) + ',' + format_double(row.cosine) + ',' +
           std::to_string(row.nfe) + ',' + (row.failed ? "1" : "0") + '\n';
  }
  return out;
}

OrderEstimate convergence_order(const std::function<std::unique_ptr<Solver>(int)>& make_solver,
                                const MixtureModel& model, const NoiseSchedule& schedule,
                                const std::vector<int>& step_list, int samples,
                                std::uint64_t seed) {
  if (step_list.size() < 3) throw ConfigError("convergence_order needs at least three step counts");
  for (std::size_t i = 1; i < step_list.size(); ++i) {
    if (step_list[i] <= step_list[i - 1]) {
      throw ConfigError("convergence_order: step counts must be increasing");
    }
  }
  if (samples < 1) throw ConfigError("convergence_order needs at least one sample");
  ReferenceOptions tight;
  tight.rel_tol = 1e-11;
  tight.abs_tol = 1e-13;
  std::vector<Vec> zs;
  std::vector<Vec> refs;
  for (int s = 0; s < samples; ++s) {
    zs.push_back(sample_prior(mix64(seed + static_cast<std::uint64_t>(s)), model.dim()));
    refs.push_back(reference_solution(model, schedule, zs.back(), tight).x);
  }
  OrderEstimate est;
  est.steps = step_list;
  std::vector<double> xs;
  std::vector<double> ys;
  for (int k : step_list) {
    const auto solver = make_solver(k);
    double sq = 0.0;
    for (int s = 0; s < samples; ++s) {
      const auto out = solver->solve(model, schedule, zs[s]);
      const double d = distance(out.x, refs[s]);
      sq += d * d;
    }
    const double err = std::sqrt(sq / samples);
    est.errors.push_back(err);
    const bool used = err >= 1e-12;
    est.used.push_back(used);
    if (used) {
      xs.push_back(std::log(1.0 / k));
      ys.push_back(std::log(err));
    }
  }
  const std::size_t n = xs.size();
  if (n < 2) throw NumericError("convergence_order: fewer than two errors above the 1e-12 floor");
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  est.order = sxy / sxx;
  if (n > 2) {
    double ssr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = ys[i] - (my + est.order * (xs[i] - mx));
      ssr += r * r;
    }
    est.stderr_ = std::sqrt(ssr / static_cast<double>(n - 2) / sxx);
    const boost::math::students_t dist(static_cast<double>(n - 2));
    const double q = boost::math::quantile(dist, 0.975);
    est.ci_low = est.order - q * est.stderr_;
    est.ci_high = est.order + q * est.stderr_;
  } else {
    est.stderr_ = std::numeric_limits<double>::infinity();
    est.ci_low = -std::numeric_limits<double>::infinity();
    est.ci_high = std::numeric_limits<double>::infinity();
  }
  return est;
}

OrderEstimate convergence_order(const CoefficientProvider& provider, GridKind grid_kind,
                                const MixtureModel& model, const NoiseSchedule& schedule,
                                const std::vector<int>& step_list, int samples,
                                std::uint64_t seed) {
  // Non-owning alias: the solvers live only inside this call.
  std::shared_ptr<const CoefficientProvider> alias(std::shared_ptr<void>(), &provider);
  const bool midpoint = provider.id() == "dpm2";
  auto make = [&](int k) -> std::unique_ptr<Solver> {
    StepGrid grid = midpoint ? augment_with_midpoints(build_grid(grid_kind, schedule, k), schedule)
                             : build_grid(grid_kind, schedule, k);
    return std::make_unique<MultistepSolver>(alias, std::move(grid), k);
  };
  return convergence_order(make, model, schedule, step_list, samples, seed);
}

double energy_distance(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  if (a.empty() || b.empty()) throw ContractError("energy_distance: sample sets must be non-empty");
  auto mean_pairwise = [](const std::vector<Vec>& p, const std::vector<Vec>& q) {
    double acc = 0.0;
    for (const auto& u : p) {
      double row = 0.0;
      for (const auto& v : q) row += distance(u, v);
      acc += row;
    }
    return acc / (static_cast<double>(p.size()) * static_cast<double>(q.size()));
  };
  return 2.0 * mean_pairwise(a, b) - mean_pairwise(a, a) - mean_pairwise(b, b);
}

CostModel calibrate_cost_model(const MixtureModel& model, const NoiseSchedule& schedule) {
  const DdimProvider ddim;
  const Vec z = sample_prior(0, model.dim());
  auto time_runs = [&](int steps) {
    const StepGrid grid = build_grid(GridKind::kUniform, schedule, steps);
    constexpr int kRuns = 200;
    const auto start = Clock::now();
    for (int r = 0; r < kRuns; ++r) (void)sample_trajectory(model, schedule, grid, ddim, z);
    return seconds_since(start) / kRuns;
  };
  const double short_run = time_runs(1);
  const double long_run = time_runs(33);
  CostModel cost;
  cost.per_nfe = std::max(0.0, (long_run - short_run) / 32.0);
  cost.per_call = std::max(0.0, short_run - cost.per_nfe);
  return cost;
}

double pairwise_psnr_percentile(const OfflineDataset& dataset, double percentile,
                                std::size_t limit) {
  const std::size_t n = std::min(limit, dataset.size());
  if (n < 2) throw ConfigError("tau percentile rule needs at least two dataset entries");
  std::vector<double> values;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      values.push_back(reward(RewardKind::kPsnr, dataset[i].x_gt, dataset[j].x_gt));
    }
  }
  std::sort(values.begin(), values.end());
  const double rank = std::clamp(percentile, 0.0, 100.0) / 100.0 * (values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (rank - lo) * (values[hi] - values[lo]);
}

PreviewSimReport preview_simulation(const Solver& preview_solver, const Solver& full_solver,
                                    const OfflineDataset& dataset, const PreviewSimConfig& config) {
  if (config.max_attempts < 1) throw ConfigError("preview simulation needs max_attempts >= 1");
  PreviewSimReport report;
  report.tau = config.tau ? *config.tau : pairwise_psnr_percentile(dataset, config.tau_percentile);
  const int attempts = config.max_attempts;

  struct Session {
    int hq_attempts = 0;  // 0: discarded
    long hq_nfe = 0;
    int pv_attempts = 0;
    long pv_nfe = 0;
    int agree = 0;
    int accepted_full = 0;
  };
  std::vector<Session> sessions(dataset.size());
  parallel_for(dataset.size(), config.threads, [&](std::size_t s) {
    const auto& entry = dataset[s];
    const auto& model = dataset.model(entry);
    auto& out = sessions[s];
    long full_nfe_sum = 0;
    long preview_nfe_sum = 0;
    for (int a = 0; a < attempts; ++a) {
      Rng seeder = Rng::stream(config.seed, {0x5E55, s, static_cast<std::uint64_t>(a)});
      const Vec z = sample_prior(seeder.next_u64(), model.dim());
      const auto full = full_solver.solve(model, dataset.schedule(), z);
      const auto preview = preview_solver.solve(model, dataset.schedule(), z);
      const bool full_ok = reward(RewardKind::kPsnr, full.x, entry.x_gt) >= report.tau;
      const bool preview_ok = reward(RewardKind::kPsnr, preview.x, entry.x_gt) >= report.tau;
      full_nfe_sum += full.nfe;
      preview_nfe_sum += preview.nfe;
      out.agree += full_ok == preview_ok ? 1 : 0;
      out.accepted_full += full_ok ? 1 : 0;
      if (full_ok && out.hq_attempts == 0) {
        out.hq_attempts = a + 1;
        out.hq_nfe = full_nfe_sum;
      }
      if (preview_ok && out.pv_attempts == 0) {
        out.pv_attempts = a + 1;
        out.pv_nfe = preview_nfe_sum + full.nfe;  // one refinement of the accepted seed
      }
    }
  });

  report.high_quality.mode = PreviewMode::kHighQuality;
  report.preview.mode = PreviewMode::kPreview;
  long agree = 0;
  long accepted = 0;
  auto finish = [&](PreviewSimResult& r, auto attempts_of, auto nfe_of, int extra_calls) {
    double att = 0.0;
    double nfe = 0.0;
    double time = 0.0;
    int kept = 0;
    for (const auto& s : sessions) {
      const int k = attempts_of(s);
      if (k == 0) {
        ++r.discarded_sessions;
        continue;
      }
      ++kept;
      att += k;
      nfe += static_cast<double>(nfe_of(s));
      time += config.cost.seconds(k + extra_calls, nfe_of(s));
    }
    r.sessions = static_cast<int>(sessions.size());
    if (kept > 0) {
      r.avg_attempts = att / kept;
      r.avg_nfe = nfe / kept;
      r.avg_time = time / kept;
    }
  };
  finish(report.high_quality, [](const Session& s) { return s.hq_attempts; },
         [](const Session& s) { return s.hq_nfe; }, 0);
  finish(report.preview, [](const Session& s) { return s.pv_attempts; },
         [](const Session& s) { return s.pv_nfe; }, 1);
  for (const auto& s : sessions) {
    agree += s.agree;
    accepted += s.accepted_full;
  }
  report.attempts_evaluated = static_cast<long>(sessions.size()) * attempts;
  const double evaluated = static_cast<double>(report.attempts_evaluated);
  report.acceptance_rate = accepted / evaluated;
  report.high_quality.decision_agreement = agree / evaluated;
  report.preview.decision_agreement = agree / evaluated;
  report.accepts_everything = accepted == report.attempts_evaluated;
  report.accepts_nothing = accepted == 0;
  return report;
}

Json preview_report_json(const PreviewSimReport& report, bool include_time) {
  auto mode = [&](const PreviewSimResult& r) {
    Json j = Json::object();
    j["mode"] = r.mode == PreviewMode::kHighQuality ? "high-quality" : "preview";
    j["avg_attempts"] = r.avg_attempts;
    j["avg_nfe"] = r.avg_nfe;
    if (include_time) j["avg_time"] = r.avg_time;
    j["decision_agreement"] = r.decision_agreement;
    j["discarded_sessions"] = r.discarded_sessions;
    j["sessions"] = r.sessions;
    return j;
  };
  Json j = Json::object();
  j["tau"] = report.tau;
  j["acceptance_rate"] = report.acceptance_rate;
  j["attempts_evaluated"] = report.attempts_evaluated;
  j["accepts_everything"] = report.accepts_everything;
  j["accepts_nothing"] = report.accepts_nothing;
  j["high_quality"] = mode(report.high_quality);
  j["preview"] = mode(report.preview);
  return j;
}

std::vector<CompareRow> compare_solvers(const SolverFactory& factory,
                                        const std::vector<std::string>& solver_ids,
                                        const std::vector<int>& step_list,
                                        const OfflineDataset& dataset, int threads) {
  std::vector<Vec> reference_outputs;
  for (const auto& e : dataset.entries()) reference_outputs.push_back(e.x_gt);
  // Resolve every id before running anything so a typo fails fast.
  for (const auto& id : solver_ids) {
    const auto& known = SolverFactory::known_ids();
    if (std::find(known.begin(), known.end(), id) == known.end()) (void)factory.make(id, 1);
  }
  std::vector<CompareRow> rows;
  for (const auto& id : solver_ids) {
    const bool once = id == "reference";
    for (int k : step_list) {
      const auto solver = factory.make(id, k);
      const auto report = consistency_report(*solver, dataset, threads);
      CompareRow row;
      row.solver = id;
      row.steps = once ? 0 : k;
      row.nfe = report.nfe_per_sample;
      row.psnr = report.psnr;
      row.neg_l2_mean = report.neg_l2.mean;
      row.cosine_mean = report.cosine.mean;
      row.failed = report.failed;
      row.wall_seconds_per_sample = report.wall_seconds_per_sample;
      std::vector<Vec> outputs;
      for (const auto& r : report.rows) {
        if (!r.failed) outputs.push_back(r.output);
      }
      row.energy_distance = outputs.empty() ? std::numeric_limits<double>::quiet_NaN()
                                            : energy_distance(outputs, reference_outputs);
      rows.push_back(std::move(row));
      if (once) break;
    }
  }
  return rows;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::string out(kCompareHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += r.solver + ',' + std::to_string(r.steps) + ',' + format_double(r.nfe) + ',' +
           format_double(r.psnr.mean) + ',' + format_double(r.psnr.median) + ',' +
           format_double(r.psnr.std) + ',' + format_double(r.neg_l2_mean) + ',' +
           format_double(r.cosine_mean) + ',' + format_double(r.energy_distance) + ',' +
           std::to_string(r.failed) + '\n';
  }
  return out;
}

}  // namespace pflab
