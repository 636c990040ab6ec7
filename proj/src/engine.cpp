#include "pflab/engine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace pflab {

Vec lmm_step(VecView y, std::span<const VecView> eps_newest_first, VecView w, double n_from,
             double n_to) {
  if (w.empty() || w.size() != eps_newest_first.size()) {
    throw ContractError("lmm_step: need one eps vector per weight (got " +
                        std::to_string(w.size()) + " weights, " +
                        std::to_string(eps_newest_first.size()) + " eps)");
  }
  const double h = n_to - n_from;
  Vec out(y.begin(), y.end());
  for (std::size_t j = 0; j < w.size(); ++j) {
    const VecView eps = eps_newest_first[j];
    if (eps.size() != y.size()) throw ContractError("lmm_step: eps dimension mismatch");
    const double c = h * w[j];
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += c * eps[d];
  }
  return out;
}

void to_json(Json& j, const SolverRun& run) {
  j = Json::object();
  j["times"] = run.grid.times();
  Json states = Json::array();
  for (const auto& s : run.states) states.push_back(s.x);
  j["states"] = std::move(states);
  j["coeffs_used"] = run.coeffs_used;
  j["nfe"] = run.nfe;
}

SolverRun sample_trajectory(const MixtureModel& model, const NoiseSchedule& schedule,
                            const StepGrid& grid, const CoefficientProvider& provider,
                            VecView z) {
  if (static_cast<int>(z.size()) != model.dim()) {
    throw ContractError("sample_trajectory: z has dimension " + std::to_string(z.size()) +
                        ", model has " + std::to_string(model.dim()));
  }
  provider.prepare(grid, schedule);
  const auto& t = grid.times();
  const int steps = grid.transitions();
  std::vector<double> noise(t.size());
  std::vector<double> alpha(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto as = schedule.alpha_sigma(t[i]);
    alpha[i] = as.alpha;
    noise[i] = as.sigma / as.alpha;
  }

  SolverRun run{grid, {}, {}, {}, 0};
  run.states.reserve(t.size());
  run.states.push_back({Vec(z.begin(), z.end()), t[0]});
  Vec y(z.begin(), z.end());
  for (double& v : y) v /= alpha[0];

  const int m = provider.order();
  std::vector<VecView> history;
  for (int i = 0; i < steps; ++i) {
    run.eps_history.push_back(model.epsilon(schedule, run.states[i].x, t[i]));
    ++run.nfe;
    const int warmup = steps == 1 ? 1 : std::min(i + 1, m);
    const int mi = provider.effective_order(i, warmup);
    if (mi < 1 || mi > i + 1) {
      throw SolverError("provider '" + provider.id() + "' requested order " +
                            std::to_string(mi) + " at step " + std::to_string(i),
                        i);
    }
    const StepContext ctx{i, t[i], t[i + 1], mi, noise};
    Vec w = provider.weights(ctx);
    if (static_cast<int>(w.size()) != mi) {
      throw SolverError("provider '" + provider.id() + "' returned " + std::to_string(w.size()) +
                            " weights at step " + std::to_string(i) + ", expected " +
                            std::to_string(mi),
                        i);
    }
    for (double v : w) {
      if (!std::isfinite(v)) {
        throw SolverError("provider '" + provider.id() + "' returned non-finite weights at step " +
                              std::to_string(i),
                          i);
      }
    }
    history.clear();
    for (int j = 0; j < mi; ++j) history.emplace_back(run.eps_history[i - j]);
    y = lmm_step(y, history, w, noise[i], noise[i + 1]);
    Vec x(y);
    for (double& v : x) v *= alpha[i + 1];
    for (double v : x) {
      if (!std::isfinite(v)) throw SolverError("state became non-finite at step " + std::to_string(i), i);
    }
    run.states.push_back({std::move(x), t[i + 1]});
    run.coeffs_used.push_back(std::move(w));
  }
  return run;
}

Vec DdimProvider::weights(const StepContext& ctx) const {
  (void)ctx;
  return {1.0};
}

AdamsBashforthProvider::AdamsBashforthProvider(int order) : order_(order) {
  if (order < 1 || order > 4) {
    throw ContractError("Adams-Bashforth order must be in 1..4, got " + std::to_string(order));
  }
}

Vec AdamsBashforthProvider::coefficients(int order) {
  switch (order) {
    case 1:
      return {1.0};
    case 2:
      return {3.0 / 2.0, -1.0 / 2.0};
    case 3:
      return {23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0};
    case 4:
      return {55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0};
    default:
      throw ContractError("Adams-Bashforth order must be in 1..4, got " + std::to_string(order));
  }
}

Vec AdamsBashforthProvider::weights(const StepContext& ctx) const {
  return coefficients(ctx.order);
}

int Dpm2MidpointProvider::effective_order(int step, int warmup_order) const {
  (void)warmup_order;
  return step % 2 == 0 ? 1 : 2;
}

void Dpm2MidpointProvider::prepare(const StepGrid& grid, const NoiseSchedule& schedule) const {
  (void)schedule;
  if (grid.kind() != GridKind::kMidpointAugmented) {
    throw ConfigError("dpm2 needs a midpoint-augmented grid, got '" +
                      std::string(to_string(grid.kind())) + "'");
  }
}

Vec Dpm2MidpointProvider::weights(const StepContext& ctx) const {
  if (ctx.step % 2 == 0) return {1.0};
  const std::size_t i = static_cast<std::size_t>(ctx.step);
  const double n_prev = ctx.noise[i - 1];
  const double n_cur = ctx.noise[i];
  const double n_next = ctx.noise[i + 1];
  const double h = n_next - n_cur;
  return {(n_next - n_prev) / h, -(n_cur - n_prev) / h};
}

TableProvider::TableProvider(std::string id, std::vector<double> times, std::vector<Vec> rows)
    : id_(std::move(id)), times_(std::move(times)), rows_(std::move(rows)) {
  if (rows_.empty() || times_.size() != rows_.size() + 1) {
    throw ContractError("coefficient table needs one row per transition");
  }
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    if (rows_[i].empty() || rows_[i].size() > i + 1) {
      throw ContractError("coefficient table row " + std::to_string(i) +
                          " has invalid length " + std::to_string(rows_[i].size()));
    }
    order_ = std::max(order_, static_cast<int>(rows_[i].size()));
  }
}

int TableProvider::effective_order(int step, int warmup_order) const {
  (void)warmup_order;
  return static_cast<int>(rows_.at(static_cast<std::size_t>(step)).size());
}

void TableProvider::prepare(const StepGrid& grid, const NoiseSchedule& schedule) const {
  (void)schedule;
  const auto& t = grid.times();
  bool same = t.size() == times_.size();
  for (std::size_t i = 0; same && i < t.size(); ++i) same = std::abs(t[i] - times_[i]) <= 1e-12;
  if (!same) {
    throw ConfigError("coefficient table '" + id_ + "' was built for a different step grid");
  }
}

Vec TableProvider::weights(const StepContext& ctx) const {
  return rows_.at(static_cast<std::size_t>(ctx.step));
}

std::unique_ptr<CoefficientProvider> make_classical_provider(const std::string& id) {
  if (id == "ddim") return std::make_unique<DdimProvider>();
  if (id == "dpm2") return std::make_unique<Dpm2MidpointProvider>();
  if (id.size() == 3 && id[0] == 'a' && id[1] == 'b' && id[2] >= '1' && id[2] <= '4') {
    return std::make_unique<AdamsBashforthProvider>(id[2] - '0');
  }
  throw UnknownSolverError("unknown classical solver id '" + id +
                           "' (known: ddim, ab1, ab2, ab3, ab4, dpm2)");
}

namespace {

// Dormand-Prince 5(4) tableau.
constexpr std::array<double, 7> kC{0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
// Fifth-order weights equal the last row of kA (FSAL); these are b5 - b4.
constexpr std::array<double, 7> kE{71.0 / 57600,  0.0,           -71.0 / 16695, 71.0 / 1920,
                                   -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

class LogNoiseOde {
 public:
  LogNoiseOde(const MixtureModel& model, const NoiseSchedule& schedule, int& nfe)
      : model_(model), schedule_(schedule), nfe_(nfe) {}

  double alpha_at(double s) const { return schedule_.alpha(schedule_.time_of_noise_ratio(std::exp(s))); }

  // dy/ds = n eps(alpha y, t(n)) with n = exp(s).
  void operator()(double s, const Vec& y, Vec& dy) const {
    const double n = std::exp(s);
    const double t = schedule_.time_of_noise_ratio(n);
    Vec x(y);
    const double a = schedule_.alpha(t);
    for (double& v : x) v *= a;
    const Vec eps = model_.epsilon(schedule_, x, t);
    ++nfe_;
    dy.resize(y.size());
    for (std::size_t d = 0; d < y.size(); ++d) dy[d] = n * eps[d];
  }

 private:
  const MixtureModel& model_;
  const NoiseSchedule& schedule_;
  int& nfe_;
};

}  // namespace

ReferenceResult reference_trajectory(const MixtureModel& model, const NoiseSchedule& schedule,
                                     VecView z, std::span<const double> times,
                                     const ReferenceOptions& options) {
  if (!(options.rel_tol > 0.0) || !(options.abs_tol > 0.0)) {
    throw ContractError("reference_solution: tolerances must be positive");
  }
  if (times.size() < 2) throw ContractError("reference_solution: need at least two nodes");
  if (static_cast<int>(z.size()) != model.dim()) {
    throw ContractError("reference_solution: z dimension mismatch");
  }
  ReferenceResult result;
  LogNoiseOde ode(model, schedule, result.nfe);
  const std::size_t dim = z.size();

  std::vector<double> s_nodes(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    s_nodes[i] = std::log(schedule.noise_ratio(times[i]));
    if (i > 0 && !(s_nodes[i] < s_nodes[i - 1])) {
      throw ContractError("reference_solution: times must be strictly decreasing");
    }
  }

  Vec y(z.begin(), z.end());
  const double a0 = schedule.alpha(times[0]);
  for (double& v : y) v /= a0;
  result.x_at.emplace_back(z.begin(), z.end());

  double s = s_nodes[0];
  const double span = s_nodes.back() - s_nodes[0];  // negative
  double h = span * 1e-3;
  std::array<Vec, 7> k;
  for (auto& v : k) v.resize(dim);
  ode(s, y, k[0]);
  Vec stage(dim);
  Vec y_new(dim);

  for (std::size_t node = 1; node < s_nodes.size(); ++node) {
    const double target = s_nodes[node];
    while (s > target) {
      bool last = false;
      const double h_unclipped = h;
      if (s + h <= target) {
        h = target - s;
        last = true;
      }
      for (int st = 1; st < 7; ++st) {
        for (std::size_t d = 0; d < dim; ++d) {
          double acc = 0.0;
          for (int q = 0; q < st; ++q) acc += kA[st][q] * k[q][d];
          stage[d] = y[d] + h * acc;
        }
        if (st == 6) y_new = stage;
        ode(s + kC[st] * h, stage, k[st]);
      }
      double err = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        double e = 0.0;
        for (int q = 0; q < 7; ++q) e += kE[q] * k[q][d];
        e *= h;
        const double scale =
            options.abs_tol + options.rel_tol * std::max(std::abs(y[d]), std::abs(y_new[d]));
        err += (e / scale) * (e / scale);
      }
      err = std::sqrt(err / static_cast<double>(dim));
      if (!std::isfinite(err)) throw NumericError("reference_solution: non-finite error estimate");
      if (err <= 1.0) {
        s = last ? target : s + h;
        y = y_new;
        k[0] = k[6];
        ++result.accepted_steps;
        const double factor = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
        h = last ? h_unclipped : h * factor;
      } else {
        ++result.rejected_steps;
        h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
      }
      if (std::abs(h) < 1e-14 * std::max(1.0, std::abs(s))) {
        std::ostringstream os;
        os << "reference_solution: step size underflow at log n = " << s
           << " (stiffness; should not happen on mixture testbeds)";
        throw NumericError(os.str());
      }
      if (result.accepted_steps + result.rejected_steps > options.max_steps) {
        throw NumericError("reference_solution: step budget exhausted");
      }
    }
    Vec x(y);
    const double a = schedule.alpha(times[node]);
    for (double& v : x) v *= a;
    result.x_at.push_back(std::move(x));
  }
  result.x = result.x_at.back();
  return result;
}

ReferenceResult reference_solution(const MixtureModel& model, const NoiseSchedule& schedule,
                                   VecView z, const ReferenceOptions& options) {
  const std::array<double, 2> ends{schedule.t_max(), schedule.t_min()};
  return reference_trajectory(model, schedule, z, ends, options);
}

}  // namespace pflab
