#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <thread>

#include "oracles.hpp"
#include "pflab/errors.hpp"
#include "pflab/mixture.hpp"
#include "pflab/rng.hpp"
#include "pflab/schedule.hpp"

using namespace pflab;

TEST_CASE("rectified-flow closed form") {
  const auto s = NoiseSchedule::rectified_flow();
  const auto as = s.alpha_sigma(0.25);
  CHECK(as.alpha == 0.75);
  CHECK(as.sigma == 0.25);
  CHECK(s.noise_ratio(0.5) == 1.0);
  CHECK(s.noise_ratio(0.2) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(s.t_max() == doctest::Approx(1.0 - 1e-3));
}

TEST_CASE("vp-linear regression constants at t = 0.5") {
  const auto s = NoiseSchedule::vp_linear();
  const auto as = s.alpha_sigma(0.5);
  // 40-digit evaluation of the closed form
  CHECK(std::abs(as.alpha - 0.2811828807967523758) <= 1e-15);
  CHECK(std::abs(as.sigma - 0.9596542020680362467) <= 1e-15);
  CHECK(std::abs(s.noise_ratio(0.5) - 3.412918309069120692) <= 1e-14);
}

TEST_CASE("vp-linear unit norm and monotone ratio on a 1000-point grid") {
  const auto s = NoiseSchedule::vp_linear();
  double prev = -1.0;
  for (int i = 0; i < 1000; ++i) {
    const double t = s.t_min() + (s.t_max() - s.t_min()) * i / 999.0;
    const auto as = s.alpha_sigma(t);
    CHECK(std::abs(as.alpha * as.alpha + as.sigma * as.sigma - 1.0) <= 1e-12);
    CHECK(as.alpha > 0.0);
    const double n = s.noise_ratio(t);
    CHECK(n > prev);
    prev = n;
  }
  const auto tmin = s.alpha_sigma(s.t_min());
  CHECK(std::abs(tmin.alpha * tmin.alpha + tmin.sigma * tmin.sigma - 1.0) <= 1e-12);
}

TEST_CASE("inverse noise ratio") {
  for (const auto& s : {NoiseSchedule::vp_linear(), NoiseSchedule::rectified_flow()}) {
    for (int i = 0; i <= 50; ++i) {
      const double t = s.t_min() + (s.t_max() - s.t_min()) * i / 50.0;
      CHECK(s.time_of_noise_ratio(s.noise_ratio(t)) == doctest::Approx(t).epsilon(1e-11));
    }
  }
}

TEST_CASE("out-of-domain time names the value") {
  const auto s = NoiseSchedule::vp_linear();
  try {
    (void)s.alpha_sigma(1.5);
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("1.5") != std::string::npos);
  }
  CHECK_THROWS_AS((void)s.noise_ratio(0.0), DomainError);
  CHECK_THROWS_AS(NoiseSchedule::rectified_flow(1e-3, 1.0), Error);
  CHECK_THROWS_AS(NoiseSchedule::vp_linear(-1.0, 20.0), Error);
}

TEST_CASE("schedule json field names") {
  const auto s = NoiseSchedule::vp_linear();
  Json j = s;
  for (const char* k : {"kind", "beta_min", "beta_max", "t_min", "t_max"}) CHECK(j.contains(k));
  CHECK(schedule_from_json(j) == s);
  const auto m = synthesize_mixture({4, 0}, 2);
  const Json tb = testbed_to_json(s, m);
  for (const char* k : {"kind", "beta_min", "beta_max", "t_min", "t_max", "dim", "weights", "means",
                        "stds"}) {
    CHECK(tb.contains(k));
  }
  const auto back = mixture_from_json(tb);
  CHECK(back.weights() == m.weights());
  CHECK(back.means() == m.means());
}

TEST_CASE("mixture validation") {
  CHECK_THROWS_AS(MixtureModel({0.5, 0.6}, {{0.0}, {1.0}}, {1.0, 1.0}), Error);
  CHECK_THROWS_AS(MixtureModel({1.0}, {{0.0}}, {0.0}), Error);
  CHECK_THROWS_AS(MixtureModel({1.0}, {{std::nan("")}}, {1.0}), Error);
  CHECK_NOTHROW(MixtureModel({0.5, 0.5}, {{0.0}, {1.0}}, {1.0, 1.0}));
}

TEST_CASE("standard gaussian eps is sigma x") {
  const auto s = NoiseSchedule::vp_linear();
  const auto m = MixtureModel::standard_gaussian(3);
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const double t = rng.uniform(s.t_min(), s.t_max());
    const Vec x{rng.normal() * 3, rng.normal() * 3, rng.normal() * 3};
    const Vec e = epsilon_exact(m, s, x, t);
    const double sig = s.alpha_sigma(t).sigma;
    double err = 0.0;
    for (int d = 0; d < 3; ++d) err += (e[d] - sig * x[d]) * (e[d] - sig * x[d]);
    CHECK(std::sqrt(err) <= 1e-10);
  }
}

TEST_CASE("eps vanishes at the scaled mean and on the symmetry point") {
  const auto s = NoiseSchedule::vp_linear();
  const MixtureModel single({1.0}, {{1.5, -2.0}}, {0.7});
  const double t = 0.3;
  const double a = s.alpha(t);
  const Vec e = single.epsilon(s, Vec{a * 1.5, a * -2.0}, t);
  CHECK(std::abs(e[0]) <= 1e-14);
  CHECK(std::abs(e[1]) <= 1e-14);
  const MixtureModel sym({0.5, 0.5}, {{2.0, 1.0}, {-2.0, -1.0}}, {0.5, 0.5});
  const Vec e0 = sym.epsilon(s, Vec{0.0, 0.0}, 0.4);
  CHECK(std::abs(e0[0]) <= 1e-15);
  CHECK(std::abs(e0[1]) <= 1e-15);
}

TEST_CASE("log density of standard gaussian at the origin") {
  const auto s = NoiseSchedule::vp_linear();
  CHECK(MixtureModel::standard_gaussian(1).log_density(s, Vec{0.0}, 0.5) ==
        doctest::Approx(-0.5 * std::log(2 * M_PI)).epsilon(1e-14));
  CHECK(MixtureModel::standard_gaussian(2).log_density(s, Vec{0.0, 0.0}, 0.5) ==
        doctest::Approx(-std::log(2 * M_PI)).epsilon(1e-14));
}

TEST_CASE("log density matches naive summation") {
  Rng rng(5);
  for (const auto& s : {NoiseSchedule::vp_linear(), NoiseSchedule::rectified_flow()}) {
    for (int i = 0; i < 50; ++i) {
      const auto m = synthesize_mixture({i, 1}, 2);
      const double t = rng.uniform(s.t_min(), s.t_max());
      const Vec x{rng.uniform(-3, 3), rng.uniform(-3, 3)};
      CHECK(m.log_density(s, x, t) ==
            doctest::Approx(oracle::naive_logdensity(m, s, x, t)).epsilon(1e-11));
    }
  }
}

TEST_CASE("eps matches -sigma grad log p by central differences") {
  Rng rng(99);
  const double h = 1e-5;
  double worst = 0.0;
  for (const auto& s : {NoiseSchedule::vp_linear(), NoiseSchedule::rectified_flow()}) {
    for (int i = 0; i < 100; ++i) {
      const auto m = synthesize_mixture({i, 7}, 3);
      const double t = rng.uniform(0.05, 0.95);
      Vec x(3);
      for (auto& v : x) v = rng.uniform(-3, 3);
      const Vec e = m.epsilon(s, x, t);
      const double sig = oracle::sigma(s, t);
      double num = 0.0;
      double den = 0.0;
      for (int d = 0; d < 3; ++d) {
        Vec xp = x;
        Vec xm = x;
        xp[d] += h;
        xm[d] -= h;
        const double g = (m.log_density(s, xp, t) - m.log_density(s, xm, t)) / (2 * h);
        num += (e[d] + sig * g) * (e[d] + sig * g);
        den += e[d] * e[d];
      }
      worst = std::max(worst, std::sqrt(num) / std::max(std::sqrt(den), 1e-8));
    }
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("eps never returns NaN far from the data") {
  const auto s = NoiseSchedule::vp_linear();
  const auto m = synthesize_mixture({2, 0}, 2);
  const Vec e = m.epsilon(s, Vec{1e150, -1e150}, 0.5);
  CHECK(std::isfinite(e[0]));
  CHECK_THROWS_AS((void)m.epsilon(s, Vec{std::nan(""), 0.0}, 0.5), NumericError);
}

TEST_CASE("NFE counter counts calls, also concurrently") {
  const auto s = NoiseSchedule::vp_linear();
  const auto m = synthesize_mixture({1, 0}, 2);
  m.nfe().reset();
  for (int i = 0; i < 17; ++i) (void)m.epsilon(s, Vec{0.1, 0.2}, 0.5);
  CHECK(m.nfe().value() == 17);
  (void)m.log_density(s, Vec{0.1, 0.2}, 0.5);
  CHECK(m.nfe().value() == 17);
  m.nfe().reset();
  std::vector<std::thread> pool;
  for (int k = 0; k < 4; ++k) {
    pool.emplace_back([&] {
      for (int i = 0; i < 250; ++i) (void)m.epsilon(s, Vec{0.1, 0.2}, 0.5);
    });
  }
  for (auto& th : pool) th.join();
  CHECK(m.nfe().value() == 1000);
}

TEST_CASE("synthesis rule") {
  std::set<std::size_t> counts;
  for (int c = 0; c < 200; ++c) {
    const auto m = synthesize_mixture({c, 3}, 2);
    counts.insert(m.components());
    const double total = std::accumulate(m.weights().begin(), m.weights().end(), 0.0);
    CHECK(std::abs(total - 1.0) <= 1e-12);
    for (std::size_t k = 0; k < m.components(); ++k) {
      CHECK(m.weights()[k] > 0.0);
      CHECK(m.stds()[k] >= 0.3);
      CHECK(m.stds()[k] <= 1.0);
      for (double v : m.means()[k]) {
        CHECK(v >= -4.0);
        CHECK(v <= 4.0);
      }
    }
  }
  CHECK(counts == std::set<std::size_t>{2, 3, 4, 5});
  const auto a = synthesize_mixture({42, 9}, 4);
  const auto b = synthesize_mixture({42, 9}, 4);
  CHECK(a.means() == b.means());
  CHECK(a.weights() == b.weights());
  CHECK(synthesize_mixture({42, 9}, 2, 3).components() == 3);
}

TEST_CASE("prior sampling is deterministic and standard normal") {
  CHECK(sample_prior(7, 4) == sample_prior(7, 4));
  CHECK(sample_prior(7, 4) != sample_prior(8, 4));
  const int n = 100000;
  double sum = 0.0;
  double sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = sample_prior(static_cast<std::uint64_t>(i), 1)[0];
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  CHECK(std::abs(mean) <= 0.02);
  CHECK(std::abs(sq / n - mean * mean - 1.0) <= 0.03);
}

TEST_CASE("rng streams") {
  // xoshiro256** seeded through splitmix64(0); values from a separate
  // big-integer implementation.
  Rng a(0);
  CHECK(a.next_u64() == 0x99ec5f36cb75f2b4ULL);
  CHECK(a.next_u64() == 0xbf6e1f784956452aULL);
  CHECK(a.next_u64() == 0x1a5f849d4933e6e0ULL);
  auto s1 = Rng::stream(1, {2, 3});
  auto s2 = Rng::stream(1, {3, 2});
  CHECK(s1.next_u64() != s2.next_u64());
  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
  double gsum = 0.0;
  for (int i = 0; i < 20000; ++i) gsum += r.gamma(2.5);
  CHECK(gsum / 20000 == doctest::Approx(2.5).epsilon(0.03));
}
