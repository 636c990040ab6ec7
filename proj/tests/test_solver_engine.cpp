#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "pflab/engine.hpp"
#include "pflab/errors.hpp"
#include "pflab/grid.hpp"
#include "pflab/rng.hpp"

using namespace pflab;

namespace {

Vec step(const Vec& y, const std::vector<Vec>& eps, const Vec& w, double n0, double n1) {
  std::vector<VecView> views(eps.begin(), eps.end());
  return lmm_step(y, views, w, n0, n1);
}

class NanProvider final : public CoefficientProvider {
 public:
  std::string id() const override { return "nan"; }
  int order() const override { return 1; }
  Vec weights(const StepContext& ctx) const override {
    return {ctx.step == 2 ? std::nan("") : 1.0};
  }
};

}  // namespace

TEST_CASE("lmm_step special cases") {
  const Vec y{1.0, -2.0};
  const Vec e{0.5, 0.25};
  const Vec ddim = step(y, {e}, {1.0}, 0.3, 0.1);
  CHECK(ddim[0] == 1.0 + (0.1 - 0.3) * 0.5);
  CHECK(ddim[1] == -2.0 + (0.1 - 0.3) * 0.25);
  CHECK(step(y, {e, {9.0, 9.0}}, {0.0, 0.0}, 0.3, 0.1) == y);
  const Vec blended = step(y, {e, e}, {0.5, 0.5}, 0.3, 0.1);
  CHECK(oracle::max_abs_diff(blended, ddim) <= 1e-15);
  CHECK_THROWS_AS(step(y, {e}, {0.5, 0.5}, 0.3, 0.1), ContractError);
  CHECK_THROWS_AS(step(y, {Vec{1.0}}, {1.0}, 0.3, 0.1), ContractError);
}

TEST_CASE("classical coefficients") {
  CHECK(AdamsBashforthProvider::coefficients(4) == Vec{55.0 / 24, -59.0 / 24, 37.0 / 24, -9.0 / 24});
  CHECK(AdamsBashforthProvider::coefficients(3) == Vec{23.0 / 12, -16.0 / 12, 5.0 / 12});
  CHECK(AdamsBashforthProvider::coefficients(2) == Vec{1.5, -0.5});
  CHECK(AdamsBashforthProvider::coefficients(1) == Vec{1.0});
  for (int m = 1; m <= 4; ++m) {
    const Vec w = AdamsBashforthProvider::coefficients(m);
    double s = 0.0;
    for (double v : w) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-15);
  }
  CHECK_THROWS_AS(AdamsBashforthProvider(5), ContractError);
  CHECK_THROWS_AS(AdamsBashforthProvider(0), ContractError);
  const DdimProvider ddim;
  const std::vector<double> noise{3.0, 2.0, 1.0};
  for (int i = 0; i < 2; ++i) CHECK(ddim.weights({i, 0.9, 0.5, 1, noise}) == Vec{1.0});
  CHECK_THROWS_AS(make_classical_provider("rk4"), UnknownSolverError);
  CHECK(make_classical_provider("ab2")->order() == 2);
}

TEST_CASE("warm-up orders and K = 1") {
  const auto s = NoiseSchedule::vp_linear();
  const auto m = synthesize_mixture({3, 0}, 2);
  const AdamsBashforthProvider ab4(4);
  const auto run = sample_trajectory(m, s, build_grid(GridKind::kUniform, s, 6), ab4, sample_prior(1, 2));
  REQUIRE(run.coeffs_used.size() == 6);
  CHECK(run.coeffs_used[0] == Vec{1.0});
  CHECK(run.coeffs_used[1] == Vec{1.5, -0.5});
  CHECK(run.coeffs_used[2].size() == 3);
  CHECK(run.coeffs_used[3] == AdamsBashforthProvider::coefficients(4));
  CHECK(run.coeffs_used[5] == AdamsBashforthProvider::coefficients(4));
  const auto one = sample_trajectory(m, s, build_grid(GridKind::kUniform, s, 1), ab4, sample_prior(1, 2));
  REQUIRE(one.coeffs_used.size() == 1);
  CHECK(one.coeffs_used[0] == Vec{1.0});
}

TEST_CASE("one DDIM step on the standard gaussian") {
  const auto s = NoiseSchedule::vp_linear();
  const auto m = MixtureModel::standard_gaussian(2);
  const auto grid = build_grid(GridKind::kUniform, s, 1);
  const Vec z{0.7, -1.3};
  const auto run = sample_trajectory(m, s, grid, DdimProvider{}, z);
  const double t0 = grid[0];
  const double t1 = grid[1];
  const double a0 = s.alpha(t0);
  const double n0 = oracle::ratio(s, t0);
  const double n1 = oracle::ratio(s, t1);
  for (int d = 0; d < 2; ++d) {
    const double y0 = z[d] / a0;
    const double y1 = y0 + (n1 - n0) * oracle::sigma(s, t0) * a0 * y0;
    CHECK(std::abs(run.output()[d] - s.alpha(t1) * y1) <= 1e-13);
  }
  CHECK(run.states[0].x == z);
  CHECK(run.nfe == 1);
}

TEST_CASE("consistent providers telescope a constant eps exactly") {
  const std::vector<double> n{5.0, 3.5, 2.25, 1.0, 0.4, 0.1, 0.01};
  const Vec e{0.3, -1.7};
  for (int order = 1; order <= 4; ++order) {
    const AdamsBashforthProvider p(order);
    Vec y{2.0, 1.0};
    std::vector<Vec> hist;
    for (int i = 0; i + 1 < static_cast<int>(n.size()); ++i) {
      hist.insert(hist.begin(), e);
      const int mi = std::min(i + 1, order);
      const Vec w = p.weights({i, 0.0, 0.0, mi, n});
      y = step(y, std::vector<Vec>(hist.begin(), hist.begin() + mi), w, n[i], n[i + 1]);
    }
    CHECK(std::abs(y[0] - (2.0 + (n.back() - n.front()) * e[0])) <= 1e-12);
    CHECK(std::abs(y[1] - (1.0 + (n.back() - n.front()) * e[1])) <= 1e-12);
  }
}

TEST_CASE("engine matches independent DDIM, AB4 and DPM-2 state for state") {
  const auto s = NoiseSchedule::vp_linear();
  Rng rng(2024);
  double worst_ddim = 0.0;
  double worst_ab4 = 0.0;
  double worst_dpm2 = 0.0;
  for (int r = 0; r < 50; ++r) {
    const auto m = synthesize_mixture({r, 5}, 2);
    const Vec z = sample_prior(rng.next_u64(), 2);
    const int k = 2 + static_cast<int>(rng.below(12));
    const auto kind = static_cast<GridKind>(rng.below(3));
    const auto grid = build_grid(kind, s, k);

    const auto ddim = sample_trajectory(m, s, grid, DdimProvider{}, z);
    for (int i = 0; i <= k; ++i) {
      const std::vector<double> prefix(grid.times().begin(), grid.times().begin() + i + 1);
      worst_ddim = std::max(worst_ddim, oracle::max_abs_diff(ddim.states[i].x, oracle::ddim(m, s, prefix, z)));
    }
    const auto ab4 = sample_trajectory(m, s, grid, AdamsBashforthProvider(4), z);
    const auto ab4_ref = oracle::ab4_states(m, s, grid.times(), z);
    for (int i = 0; i <= k; ++i) worst_ab4 = std::max(worst_ab4, oracle::max_abs_diff(ab4.states[i].x, ab4_ref[i]));

    const auto aug = augment_with_midpoints(grid, s);
    const auto dpm2 = sample_trajectory(m, s, aug, Dpm2MidpointProvider{}, z);
    const auto dpm2_ref = oracle::dpm2_primary_states(m, s, grid.times(), z);
    for (int i = 0; i <= k; ++i) {
      worst_dpm2 = std::max(worst_dpm2, oracle::max_abs_diff(dpm2.states[2 * i].x, dpm2_ref[i]));
    }
    CHECK(dpm2.nfe == 2 * k);
    CHECK(ab4.nfe == k);
  }
  CHECK(worst_ddim <= 1e-12);
  CHECK(worst_ab4 <= 1e-12);
  CHECK(worst_dpm2 <= 1e-12);
}

TEST_CASE("DPM-2 provider plan") {
  const auto s = NoiseSchedule::vp_linear();
  const auto m = synthesize_mixture({8, 0}, 2);
  const Dpm2MidpointProvider p;
  CHECK_THROWS_AS(p.prepare(build_grid(GridKind::kUniform, s, 4), s), ConfigError);
  CHECK_THROWS_AS(sample_trajectory(m, s, build_grid(GridKind::kUniform, s, 4), p, sample_prior(0, 2)),
                  ConfigError);
  const auto grid = build_grid(GridKind::kMidpointAugmented, s, 4);
  CHECK(grid.transitions() == 8);
  CHECK(grid.primary_intervals() == 4);
  const auto run = sample_trajectory(m, s, grid, p, sample_prior(0, 2));
  CHECK(run.nfe == 8);
  for (int i = 0; i < 8; ++i) {
    const Vec& w = run.coeffs_used[i];
    if (i % 2 == 0) {
      CHECK(w == Vec{1.0});
    } else {
      REQUIRE(w.size() == 2);
      CHECK(std::abs(w[0] + w[1] - 1.0) <= 1e-12);
      const double nm = oracle::ratio(s, grid[i - 1]);
      const double ni = oracle::ratio(s, grid[i]);
      const double np = oracle::ratio(s, grid[i + 1]);
      CHECK(w[0] == doctest::Approx((np - nm) / (np - ni)).epsilon(1e-10));
      CHECK(w[1] == doctest::Approx(-(ni - nm) / (np - ni)).epsilon(1e-10));
    }
  }
}

TEST_CASE("grids") {
  const auto s = NoiseSchedule::vp_linear();
  for (int kind = 0; kind < 4; ++kind) {
    const auto g = build_grid(static_cast<GridKind>(kind), s, 7);
    CHECK(g.times().front() == s.t_max());
    CHECK(g.times().back() == s.t_min());
    for (std::size_t i = 1; i < g.times().size(); ++i) CHECK(g[i] < g[i - 1]);
  }
  const auto u = build_grid(GridKind::kUniform, s, 2);
  CHECK(u.times().size() == 3);
  CHECK(u[1] == doctest::Approx(0.5 * (s.t_max() + s.t_min())).epsilon(1e-15));
  const auto q = build_grid(GridKind::kQuadratic, s, 4);
  const double step = std::sqrt(q[0]) - std::sqrt(q[1]);
  for (int i = 1; i < 4; ++i) CHECK(std::sqrt(q[i]) - std::sqrt(q[i + 1]) == doctest::Approx(step).epsilon(1e-10));
  const auto l = build_grid(GridKind::kLogSnr, s, 6);
  const double ratio = s.noise_ratio(l[1]) / s.noise_ratio(l[0]);
  for (int i = 1; i < 6; ++i) {
    CHECK(std::abs(s.noise_ratio(l[i + 1]) / s.noise_ratio(l[i]) - ratio) <= 1e-10);
  }
  const auto mid = build_grid(GridKind::kMidpointAugmented, s, 5);
  for (int i = 1; i < mid.transitions(); i += 2) {
    const double nr = s.noise_ratio(mid[i]);
    const double rel = nr * nr / (s.noise_ratio(mid[i - 1]) * s.noise_ratio(mid[i + 1])) - 1.0;
    CHECK(std::abs(rel) <= 1e-10);
  }
  CHECK_THROWS_AS(StepGrid({0.5, 0.6}, GridKind::kUniform), Error);
  CHECK_THROWS_AS(build_grid(GridKind::kUniform, s, 0), Error);
  Json j = mid;
  CHECK(grid_from_json(j) == mid);
}

TEST_CASE("solver errors carry the step index") {
  const auto s = NoiseSchedule::vp_linear();
  const auto m = synthesize_mixture({3, 0}, 2);
  try {
    (void)sample_trajectory(m, s, build_grid(GridKind::kUniform, s, 5), NanProvider{}, sample_prior(0, 2));
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    CHECK(e.step() == 2);
  }
}

TEST_CASE("table provider binds to its grid") {
  const auto s = NoiseSchedule::vp_linear();
  const auto g = build_grid(GridKind::kUniform, s, 3);
  const TableProvider table("t", g.times(), {{1.0}, {1.5, -0.5}, {1.5, -0.5}});
  CHECK_NOTHROW(table.prepare(g, s));
  CHECK_THROWS_AS(table.prepare(build_grid(GridKind::kQuadratic, s, 3), s), ConfigError);
  const auto m = synthesize_mixture({1, 0}, 2);
  const auto a = sample_trajectory(m, s, g, table, sample_prior(3, 2));
  const auto b = sample_trajectory(m, s, g, AdamsBashforthProvider(2), sample_prior(3, 2));
  CHECK(a.output() == b.output());
}

TEST_CASE("solver run json") {
  const auto s = NoiseSchedule::vp_linear();
  const auto m = synthesize_mixture({1, 0}, 2);
  const auto run = sample_trajectory(m, s, build_grid(GridKind::kUniform, s, 3), DdimProvider{}, sample_prior(3, 2));
  const Json j = run;
  for (const char* k : {"times", "states", "coeffs_used", "nfe"}) CHECK(j.contains(k));
  CHECK(j["nfe"] == 3);
  CHECK(j["states"].size() == 4);
}

TEST_CASE("reference solver: identity flow, tolerance contract, symmetry") {
  const auto s = NoiseSchedule::vp_linear();
  const auto g = MixtureModel::standard_gaussian(2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Vec z = sample_prior(seed, 2);
    CHECK(oracle::dist(reference_solution(g, s, z).x, z) <= 1e-6);
  }
  const auto m = synthesize_mixture({3, 0}, 2, 3);
  ReferenceOptions loose;
  loose.rel_tol = 1e-7;
  loose.abs_tol = 1e-8;
  ReferenceOptions tight;
  tight.rel_tol = 1e-8;
  tight.abs_tol = 1e-9;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Vec z = sample_prior(seed, 2);
    const auto a = reference_solution(m, s, z, loose);
    const auto b = reference_solution(m, s, z, tight);
    CHECK(oracle::dist(a.x, b.x) < 1e-7 * std::max(1.0, oracle::dist(b.x, Vec{0.0, 0.0})));
    CHECK(a.nfe > 0);
  }
  const MixtureModel sym({0.5, 0.5}, {{2.0, 0.0}, {-2.0, 0.0}}, {0.5, 0.5});
  const auto r = reference_solution(sym, s, Vec{0.0, 1.3});
  CHECK(std::abs(r.x[0]) <= 1e-8);
  const auto rf = NoiseSchedule::rectified_flow();
  const auto traj = reference_trajectory(m, rf, sample_prior(4, 2), build_grid(GridKind::kUniform, rf, 4).times());
  CHECK(traj.x_at.size() == 5);
  CHECK(traj.x_at.back() == traj.x);
}
