#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mfglab/dynamics.hpp"
#include "mfglab/metrics.hpp"
#include "oracles.hpp"

using namespace mfglab;
using dynamics::InitLaw;
using models::LqParams;
using models::MertonType;

namespace {

const RngStreamKey kKey = RngStreamKey(99).child({1, 2});

std::vector<MertonType> population(std::size_t n, double theta_scale) {
  std::vector<MertonType> out;
  const RngStream s(RngStreamKey(3));
  for (std::size_t i = 0; i < n; ++i) {
    MertonType z;
    z.x0 = s.uniform(6 * i);
    z.delta = 0.5 + s.uniform(6 * i + 1);
    z.theta = theta_scale * s.uniform(6 * i + 2);
    z.mu = 0.5 + s.uniform(6 * i + 3);
    z.sigma_c = 0.2 + 0.8 * s.uniform(6 * i + 4);
    z.nu_c = 0.2 + 0.8 * s.uniform(6 * i + 5);
    out.push_back(z);
  }
  return out;
}

}  // namespace

TEST(SimulateLq, NoNoiseStaysPut) {
  LqParams p;
  p.sigma = 0.0;
  p.sigma0 = 0.0;
  const auto ens = dynamics::simulate_coupled_lq(p, 5, TimeGrid(1.0, 50), InitLaw::point(0.7), kKey);
  for (double x : ens.nash_paths) EXPECT_EQ(x, 0.7);
  for (double y : ens.mkv_paths) EXPECT_EQ(y, 0.7);
}

TEST(SimulateLq, SameSeedBitIdentical) {
  LqParams p;
  p.sigma0 = 0.3;
  const TimeGrid g(1.0, 40);
  const auto a = dynamics::simulate_coupled_lq(p, 16, g, InitLaw::gaussian(0.0, 1.0), kKey);
  const auto b = dynamics::simulate_coupled_lq(p, 16, g, InitLaw::gaussian(0.0, 1.0), kKey);
  EXPECT_EQ(a.nash_paths, b.nash_paths);
  EXPECT_EQ(a.mkv_paths, b.mkv_paths);
  EXPECT_EQ(a.common_path, b.common_path);
  const auto c = dynamics::simulate_coupled_lq(p, 16, g, InitLaw::gaussian(0.0, 1.0), kKey.child(1));
  EXPECT_NE(a.nash_paths, c.nash_paths);
}

TEST(SimulateLq, SharedInitialStates) {
  const auto ens = dynamics::simulate_coupled_lq(LqParams{}, 32, TimeGrid(1.0, 10), InitLaw::gaussian(1.0, 2.0), kKey);
  for (std::size_t i = 0; i < ens.n; ++i) EXPECT_EQ(ens.nash(i)[0], ens.mkv(i)[0]);
  EXPECT_EQ(ens.common_path[0], 0.0);
}

TEST(SimulateLq, TranslationEquivariance) {
  LqParams p;
  p.sigma0 = 0.5;
  const TimeGrid g(1.0, 50);
  const auto x0 = dynamics::draw_initial_states(InitLaw::gaussian(0.0, 1.0), 20, kKey);
  auto shifted = x0;
  for (double& x : shifted) x += 3.0;
  const auto a = dynamics::simulate_coupled_lq(p, g, x0, kKey);
  const auto b = dynamics::simulate_coupled_lq(p, g, shifted, kKey);
  for (std::size_t j = 0; j < a.nash_paths.size(); ++j) {
    EXPECT_NEAR(b.nash_paths[j] - a.nash_paths[j], 3.0, 1e-12);
    EXPECT_NEAR(b.mkv_paths[j] - a.mkv_paths[j], 3.0, 1e-12);
  }
  EXPECT_NEAR(dynamics::coupling_distance(a, 2), dynamics::coupling_distance(b, 2), 1e-12);
}

TEST(SimulateLq, MeanMovesOnlyByAveragedNoise) {
  LqParams p;
  const TimeGrid g(1.0, 30);
  const std::size_t n = 12;
  const auto ens = dynamics::simulate_coupled_lq(p, n, g, InitLaw::gaussian(0.0, 1.0), kKey);
  // Rebuild the averaged increments from the same streams.
  const double sqrt_dt = std::sqrt(g.dt());
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += ens.nash(i)[0];
  mean /= n;
  for (std::size_t k = 0; k < g.steps(); ++k) {
    double avg = 0.0;
    for (std::size_t i = 0; i < n; ++i) avg += p.sigma * sqrt_dt * RngStream(kKey.child(i)).gaussian(k + 1);
    mean += avg / n;
    double actual = 0.0;
    for (std::size_t i = 0; i < n; ++i) actual += ens.nash(i)[k + 1];
    EXPECT_NEAR(actual / n, mean, 1e-12);
  }
}

TEST(SimulateLq, Preconditions) {
  EXPECT_THROW(dynamics::simulate_coupled_lq(LqParams{}, 1, TimeGrid(1.0, 4), InitLaw::point(0.0), kKey),
               DomainError);
  EXPECT_THROW(dynamics::simulate_coupled_lq(LqParams{}, 4, TimeGrid(2.0, 4), InitLaw::point(0.0), kKey),
               DomainError);
}

TEST(SimulateLq, HalvingStepConverges) {
  // Without noise both systems are ODEs; Euler errors should shrink by
  // about half when dt is halved.
  LqParams p;
  p.sigma = 0.0;
  const auto x0 = dynamics::draw_initial_states(InitLaw::gaussian(0.0, 1.0), 8, kKey);
  std::vector<double> d;
  for (std::size_t steps : {100, 200, 400, 800}) {
    const auto ens = dynamics::simulate_coupled_lq(p, TimeGrid(1.0, steps), x0, kKey);
    d.push_back(dynamics::coupling_distance(ens, 2));
  }
  for (std::size_t j = 0; j + 2 < d.size(); ++j) {
    const double ratio = (d[j] - d[j + 1]) / (d[j + 1] - d[j + 2]);
    EXPECT_NEAR(ratio, 2.0, 0.1);
  }
}

TEST(Merton, NoConcernMeansNoGap) {
  const auto types = population(20, 0.0);
  const auto ens = dynamics::simulate_merton_coupled(types, TimeGrid(1.0, 50), kKey);
  EXPECT_EQ(ens.nash_paths, ens.mkv_paths);
  EXPECT_EQ(dynamics::coupling_distance(ens, 1), 0.0);
}

TEST(Merton, PathwiseBoundHolds) {
  const auto types = population(40, 1.0);
  std::size_t violations = 0;
  for (std::uint64_t t = 0; t < 25; ++t) {
    const auto ens = dynamics::simulate_merton_coupled(types, TimeGrid(1.0, 100), kKey.child(t));
    const auto check = dynamics::merton_gap_check(ens, types);
    violations += check.violations;
    for (std::size_t i = 0; i < ens.n; ++i) EXPECT_GE(check.bound[i], 0.0);
  }
  EXPECT_EQ(violations, 0u);
}

TEST(Merton, ClosedFormPaths) {
  const auto types = population(3, 1.0);
  const TimeGrid g(2.0, 20);
  const auto ens = dynamics::simulate_merton_coupled(types, g, kKey);
  const auto alpha = models::merton_alphas(types, models::MertonOrder::finite);
  // X_T - x0 = alpha (mu T + nu B_T + sigma W_T), so the increments of X
  // divided by alpha are identical across the two systems.
  for (std::size_t i = 0; i < 3; ++i) {
    const auto x = ens.nash(i);
    const auto y = ens.mkv(i);
    const auto alpha_lim = models::merton_alphas(types, models::MertonOrder::limit);
    EXPECT_NEAR((x.back() - x[0]) / alpha[i], (y.back() - y[0]) / alpha_lim[i], 1e-12);
  }
  const auto again = dynamics::simulate_merton_coupled(types, g, kKey);
  EXPECT_EQ(ens.nash_paths, again.nash_paths);
}

TEST(LimitFlow, ConstantMeanWithoutCommonNoise) {
  LqParams p;
  const auto flow = dynamics::limit_flow_lq(p, 0.4, 2.0, TimeGrid(1.0, 100));
  for (double m : flow.mean) EXPECT_EQ(m, 0.4);
  for (double v : flow.var) EXPECT_GE(v, 0.0);
}

TEST(LimitFlow, DegenerateFlow) {
  LqParams p;
  p.sigma = 0.0;
  const auto flow = dynamics::limit_flow_lq(p, 1.5, 0.0, TimeGrid(1.0, 10));
  for (double v : flow.var) EXPECT_EQ(v, 0.0);
  for (double m : flow.mean) EXPECT_EQ(m, 1.5);
}

TEST(LimitFlow, MatchesFinerReference) {
  LqParams p;
  const auto coarse = dynamics::limit_flow_lq(p, 0.0, 0.5, TimeGrid(1.0, 200));
  // Independent RK4 on a 10x finer grid using the RK4 Riccati oracle for
  // phi at the half and full steps of the fine grid.
  const std::size_t fine_steps = 2000;
  const auto phi = oracle::riccati_rk4(oracle::riccati_coefficients(p.b_bar, p.q, p.eps, p.g_bar, 1.0, 0), 2 * fine_steps);
  const double h = 1.0 / fine_steps;
  std::vector<double> v(fine_steps + 1);
  v[0] = 0.5;
  auto rhs = [&](std::size_t half_index, double vv) {
    return -2.0 * (p.b_bar + p.q + phi[half_index]) * vv + p.sigma * p.sigma;
  };
  for (std::size_t k = 0; k < fine_steps; ++k) {
    const double k1 = rhs(2 * k, v[k]);
    const double k2 = rhs(2 * k + 1, v[k] + 0.5 * h * k1);
    const double k3 = rhs(2 * k + 1, v[k] + 0.5 * h * k2);
    const double k4 = rhs(2 * k + 2, v[k] + h * k3);
    v[k + 1] = v[k] + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  for (std::size_t k = 0; k <= 200; ++k) EXPECT_NEAR(coarse.var[k], v[10 * k], 1e-8);
}

TEST(LimitFlow, CommonPathRequirements) {
  LqParams p;
  p.sigma0 = 0.5;
  const TimeGrid g(1.0, 10);
  EXPECT_THROW(dynamics::limit_flow_lq(p, 0.0, 1.0, g), DomainError);
  std::vector<double> w(11, 0.0);
  w[5] = 2.0;
  const auto flow = dynamics::limit_flow_lq(p, 1.0, 1.0, g, std::span<const double>(w));
  EXPECT_DOUBLE_EQ(flow.mean[5], 2.0);
  EXPECT_DOUBLE_EQ(flow.mean[4], 1.0);
  std::vector<double> short_w(5, 0.0);
  EXPECT_THROW(dynamics::limit_flow_lq(p, 0.0, 1.0, g, std::span<const double>(short_w)), DomainError);
  EXPECT_THROW(dynamics::limit_flow_lq(LqParams{}, 0.0, -1.0, g), DomainError);
}

TEST(CouplingDistance, ZeroForIdenticalSystems) {
  dynamics::CoupledEnsemble ens;
  ens.n = 3;
  ens.grid = TimeGrid(1.0, 2);
  ens.nash_paths = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  ens.mkv_paths = ens.nash_paths;
  EXPECT_EQ(dynamics::coupling_distance(ens, 1), 0.0);
  EXPECT_EQ(dynamics::coupling_distance(ens, 2), 0.0);
  ens.mkv_paths[4] += 0.6;
  EXPECT_NEAR(dynamics::coupling_distance(ens, 1), 0.2, 1e-15);
  EXPECT_NEAR(dynamics::coupling_distance(ens, 2), std::sqrt(0.36 / 3), 1e-15);
  EXPECT_THROW(dynamics::coupling_distance(ens, 3), DomainError);
}

TEST(CouplingDistance, UpperBoundsMarginalTransport) {
  // Identity coupling dominates the optimal coupling of the marginals on a
  // 4-particle sub-ensemble.
  const auto ens = dynamics::simulate_coupled_lq(LqParams{}, 64, TimeGrid(1.0, 50), InitLaw::gaussian(0.0, 1.0), kKey);
  dynamics::CoupledEnsemble sub;
  sub.n = 4;
  sub.grid = ens.grid;
  for (std::size_t i = 0; i < 4; ++i) {
    sub.nash_paths.insert(sub.nash_paths.end(), ens.nash(i).begin(), ens.nash(i).end());
    sub.mkv_paths.insert(sub.mkv_paths.end(), ens.mkv(i).begin(), ens.mkv(i).end());
  }
  const double d = dynamics::coupling_distance(sub, 1);
  for (std::size_t k = 0; k < sub.points(); k += 7) {
    const auto x = sub.nash_marginal(k);
    const auto y = sub.mkv_marginal(k);
    const double w = oracle::transport_vertex_enumeration(x, {0.25, 0.25, 0.25, 0.25}, y, {0.25, 0.25, 0.25, 0.25}, 1);
    EXPECT_LE(w, d + 1e-15);
  }
  EXPECT_GT(dynamics::coupling_distance(ens, 1), 0.0);
}
