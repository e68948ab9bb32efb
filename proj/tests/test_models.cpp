#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mfglab/models.hpp"
#include "oracles.hpp"

using namespace mfglab;
using models::LqParams;
using models::MertonOrder;
using models::MertonType;
using models::RiccatiIndex;

namespace {

LqParams make_lq(double b, double q, double eps, double g) {
  LqParams p;
  p.b_bar = b;
  p.q = q;
  p.eps = eps;
  p.g_bar = g;
  return p;
}

std::vector<double> rk4_phi(const LqParams& p, std::size_t n, std::size_t steps) {
  return oracle::riccati_rk4(oracle::riccati_coefficients(p.b_bar, p.q, p.eps, p.g_bar, p.horizon, n), steps);
}

}  // namespace

TEST(LqParams, Validation) {
  EXPECT_NO_THROW(LqParams{}.validate());
  EXPECT_THROW(make_lq(0.0, 0.3, 0.5, 1.0).validate(), DomainError);
  EXPECT_THROW(make_lq(1.0, 0.8, 0.5, 1.0).validate(), DomainError);
  EXPECT_THROW(make_lq(1.0, 0.3, 0.5, -1.0).validate(), DomainError);
  auto p = make_lq(1.0, 0.3, 0.5, 1.0);
  p.horizon = 0.0;
  EXPECT_THROW(p.validate(), DomainError);
  p.horizon = 1.0;
  p.sigma0 = -0.1;
  EXPECT_THROW(p.validate(), DomainError);
}

TEST(RiccatiIndex, FiniteNeedsTwo) {
  EXPECT_THROW(RiccatiIndex::finite(1), DomainError);
  EXPECT_THROW(RiccatiIndex::finite(0), DomainError);
  EXPECT_TRUE(RiccatiIndex::limit().is_limit());
  EXPECT_DOUBLE_EQ(RiccatiIndex::finite(2).quadratic_factor(), 0.75);
  EXPECT_DOUBLE_EQ(RiccatiIndex::limit().quadratic_factor(), 1.0);
}

TEST(RiccatiPhi, TerminalValue) {
  const auto p = make_lq(1.0, 0.5, 1.0, 2.0);
  EXPECT_EQ(models::riccati_phi(p, RiccatiIndex::finite(10), p.horizon), 2.0);
  EXPECT_EQ(models::riccati_phi(p, RiccatiIndex::limit(), p.horizon), 2.0);
}

TEST(RiccatiPhi, ZeroSourceZeroTerminal) {
  const auto p = make_lq(0.7, 0.5, 0.25, 0.0);
  for (double t : {0.0, 0.3, 0.99, 1.0}) {
    EXPECT_EQ(models::riccati_phi(p, RiccatiIndex::finite(3), t), 0.0);
    EXPECT_EQ(models::riccati_phi(p, RiccatiIndex::limit(), t), 0.0);
  }
}

TEST(RiccatiPhi, MatchesRk4AtZero) {
  const auto p = make_lq(1.0, 0.2, 0.5, 1.0);
  const auto ref = rk4_phi(p, 5, 10000);
  EXPECT_NEAR(models::riccati_phi(p, RiccatiIndex::finite(5), 0.0), ref.front(), 1e-12);
}

TEST(RiccatiPhi, MatchesRk4OnGrid) {
  for (const auto& p : {make_lq(1.0, 0.3, 0.5, 1.0), make_lq(0.2, 0.0, 2.0, 0.0), make_lq(3.0, 1.0, 1.0, 5.0)}) {
    for (std::size_t n : {2u, 7u, 0u}) {
      const auto ref = rk4_phi(p, n, 4000);
      const auto idx = n ? RiccatiIndex::finite(n) : RiccatiIndex::limit();
      const TimeGrid grid(p.horizon, 4000);
      for (std::size_t k = 0; k <= 4000; k += 50) EXPECT_NEAR(models::riccati_phi(p, idx, grid.time(k)), ref[k], 1e-10);
    }
  }
}

TEST(RiccatiPhi, LongHorizonStaysFinite) {
  auto p = make_lq(1.0, 0.3, 0.5, 1.0);
  p.horizon = 500.0;
  const double phi0 = models::riccati_phi(p, RiccatiIndex::limit(), 0.0);
  EXPECT_TRUE(std::isfinite(phi0));
  // Far from T the solution sits at the stable root delta+ / s.
  const double a = p.b_bar + p.q;
  const double root = -a + std::sqrt(a * a + (p.eps - p.q * p.q));
  EXPECT_NEAR(phi0, root, 1e-12);
}

TEST(RiccatiPhi, TimeOutsideHorizon) {
  const LqParams p;
  EXPECT_THROW(models::riccati_phi(p, RiccatiIndex::limit(), -1e-9), DomainError);
  EXPECT_THROW(models::riccati_phi(p, RiccatiIndex::limit(), 1.0 + 1e-9), DomainError);
}

TEST(RiccatiPhi, LimitIsLargeNLimit) {
  const LqParams p;
  for (double t : {0.0, 0.5, 0.9})
    EXPECT_NEAR(models::riccati_phi(p, RiccatiIndex::finite(100000000), t),
                models::riccati_phi(p, RiccatiIndex::limit(), t), 1e-14);
}

TEST(RiccatiResidual, SmallOnFineGrid) {
  for (const auto& p : {make_lq(1.0, 0.3, 0.5, 1.0), make_lq(1.0, 0.5, 1.0, 2.0), make_lq(2.0, 0.1, 3.0, 0.5)}) {
    const auto t = TimeGrid(p.horizon, 9999).times();
    EXPECT_LE(models::riccati_residual(p, RiccatiIndex::finite(2), t), 1e-4);
    EXPECT_LE(models::riccati_residual(p, RiccatiIndex::limit(), t), 1e-4);
  }
}

TEST(RiccatiResidual, ZeroForTrivialSolution) {
  const auto p = make_lq(1.0, 0.5, 0.25, 0.0);
  EXPECT_EQ(models::riccati_residual(p, RiccatiIndex::finite(4), TimeGrid(1.0, 100).times()), 0.0);
}

TEST(RiccatiResidual, Preconditions) {
  const LqParams p;
  EXPECT_THROW(models::riccati_residual(p, RiccatiIndex::limit(), std::vector<double>{0.0, 1.0}), DomainError);
  EXPECT_THROW(models::riccati_residual(p, RiccatiIndex::limit(), std::vector<double>{0.0, 0.5, 0.5}), DomainError);
}

TEST(RiccatiGap, DecaysLikeOneOverN) {
  for (const auto& p : {make_lq(1.0, 0.3, 0.5, 1.0), make_lq(1.0, 0.3, 0.5, 0.0), make_lq(0.5, 0.1, 2.0, 3.0)}) {
    double prev = INFINITY, k_max = 0.0;
    for (std::size_t n = 2; n <= 256; n *= 2) {
      const double r = models::riccati_gap(p, n);
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, prev);
      if (n >= 8 && n <= 128) {
        const double ratio = models::riccati_gap(p, 2 * n) / r;
        EXPECT_GE(ratio, 0.35);
        EXPECT_LE(ratio, 0.65);
      }
      k_max = std::max(k_max, static_cast<double>(n) * r);
      prev = r;
    }
    for (std::size_t n = 2; n <= 256; n *= 2) EXPECT_LE(models::riccati_gap(p, n), k_max / n * (1 + 1e-12));
  }
}

TEST(RiccatiGap, ZeroForTrivialSolution) {
  EXPECT_EQ(models::riccati_gap(make_lq(1.0, 0.5, 0.25, 0.0), 8), 0.0);
}

TEST(LqDrift, VanishesAtMean) {
  const LqParams p;
  EXPECT_EQ(models::lq_nash_drift(p, 10, 0.3, 1.7, 1.7), 0.0);
  EXPECT_EQ(models::lq_mkv_drift(p, 0.3, 1.7, 1.7), 0.0);
}

TEST(LqDrift, TerminalValues) {
  const auto p = make_lq(1.0, 0.5, 1.0, 2.0);
  EXPECT_NEAR(models::lq_nash_drift(p, 10, 1.0, 0.0, 1.0), 1.0 + 0.5 + 2.0 * 0.9, 1e-15);
  EXPECT_NEAR(models::lq_mkv_drift(p, 1.0, 0.0, 1.0), 1.0 + 0.5 + 2.0, 1e-15);
}

TEST(LqDrift, GenericAgainstRk4) {
  const LqParams p;
  const std::size_t steps = 1000, k = 370;
  const double t = TimeGrid(p.horizon, steps).time(k);
  const auto phin = rk4_phi(p, 6, steps);
  const auto phiinf = rk4_phi(p, 0, steps);
  const double x = -0.4, m = 1.1;
  EXPECT_NEAR(models::lq_nash_drift(p, 6, t, x, m), (p.b_bar + p.q + phin[k] * (5.0 / 6.0)) * (m - x), 1e-12);
  EXPECT_NEAR(models::lq_mkv_drift(p, t, x, m), (p.b_bar + p.q + phiinf[k]) * (m - x), 1e-12);
}

TEST(LqDrift, OddAroundMean) {
  const LqParams p;
  for (double h : {0.1, 1.0, 7.5}) {
    EXPECT_EQ(models::lq_nash_drift(p, 4, 0.2, h, 0.0), -models::lq_nash_drift(p, 4, 0.2, -h, 0.0));
    EXPECT_EQ(models::lq_mkv_drift(p, 0.2, h, 0.0), -models::lq_mkv_drift(p, 0.2, -h, 0.0));
    EXPECT_NEAR(models::lq_mkv_drift(p, 0.2, 1.0 + h, 1.0), -models::lq_mkv_drift(p, 0.2, 1.0 - h, 1.0), 1e-14);
  }
}

TEST(LqMaster, ValuesAndDerivative) {
  const auto p = make_lq(1.0, 0.3, 0.5, 2.0);
  const auto at_mean = models::lq_master_U(p, 0.4, 0.8, 0.8);
  EXPECT_EQ(at_mean.value, 0.0);
  EXPECT_EQ(at_mean.dx, 0.0);
  const auto terminal = models::lq_master_U(p, 1.0, 0.0, 1.5);
  EXPECT_DOUBLE_EQ(terminal.value, 0.5 * 2.0 * 1.5 * 1.5);
  EXPECT_DOUBLE_EQ(terminal.dx, -2.0 * 1.5);
  const double h = 1e-5, x = 0.3, m = -0.2, t = 0.6;
  const double fd =
      (models::lq_master_U(p, t, x + h, m).value - models::lq_master_U(p, t, x - h, m).value) / (2.0 * h);
  EXPECT_NEAR(fd, models::lq_master_U(p, t, x, m).dx, 1e-6);
  // Consistency with the mean field drift: b = (b_bar + q)(m - x) - D_x U.
  EXPECT_NEAR(models::lq_mkv_drift(p, t, x, m), (p.b_bar + p.q) * (m - x) - models::lq_master_U(p, t, x, m).dx,
              1e-14);
}

// ---------------------------------------------------------------------------
// Merton

namespace {

MertonType type(double x0, double delta, double theta, double mu, double sigma, double nu) {
  return {x0, delta, theta, mu, sigma, nu};
}

// Straight long double evaluation of the equilibrium constant and controls.
long double eta_ref(const std::vector<MertonType>& ts, bool finite) {
  long double num = 0, conc = 0;
  const long double n = ts.size();
  for (const auto& z : ts) {
    const long double s2 = static_cast<long double>(z.sigma_c) * z.sigma_c;
    const long double den = s2 + static_cast<long double>(z.nu_c) * z.nu_c * (finite ? 1.0L - z.theta / n : 1.0L);
    num += static_cast<long double>(z.delta) * z.mu * z.sigma_c / den;
    conc += z.theta * s2 / den;
  }
  return (num / n) / (1.0L - conc / n);
}

long double alpha_ref(const std::vector<MertonType>& ts, std::size_t i, bool finite) {
  const auto& z = ts[i];
  const long double n = ts.size();
  const long double den = static_cast<long double>(z.sigma_c) * z.sigma_c +
                          static_cast<long double>(z.nu_c) * z.nu_c * (finite ? 1.0L - z.theta / n : 1.0L);
  return (static_cast<long double>(z.delta) * z.mu + eta_ref(ts, finite) * z.theta * z.sigma_c) / den;
}

std::vector<MertonType> triple() {
  return {type(1.0, 0.8, 0.3, 1.2, 0.5, 0.4), type(0.5, 1.5, 0.9, 0.7, 0.9, 0.2), type(2.0, 1.1, 0.1, 1.0, 0.3, 0.8)};
}

}  // namespace

TEST(MertonEta, Homogeneous) {
  const std::vector<MertonType> ts(5, type(0.0, 1.0, 0.0, 1.0, 1.0, 1.0));
  EXPECT_DOUBLE_EQ(models::merton_eta(ts, MertonOrder::finite), 0.5);
  EXPECT_DOUBLE_EQ(models::merton_eta(ts, MertonOrder::limit), 0.5);
}

TEST(MertonEta, DegenerateSingleAgent) {
  const std::vector<MertonType> ts{type(0.0, 1.0, 1.0, 1.0, 0.7, 0.5)};
  EXPECT_THROW(models::merton_eta(ts, MertonOrder::finite), DegenerateError);
}

TEST(MertonEta, HeterogeneousAgainstLongDouble) {
  const auto ts = triple();
  EXPECT_NEAR(models::merton_eta(ts, MertonOrder::finite), static_cast<double>(eta_ref(ts, true)), 1e-14);
  EXPECT_NEAR(models::merton_eta(ts, MertonOrder::limit), static_cast<double>(eta_ref(ts, false)), 1e-14);
}

TEST(MertonEta, ConfigurableFloor) {
  // Denominator 1 - 0.5 sigma^2/(sigma^2 + nu^2 (1 - 1/2)) is small but
  // nonzero here; a large floor turns it into an error.
  const std::vector<MertonType> ts{type(0.0, 1.0, 1.0, 1.0, 1.0, 0.01), type(0.0, 1.0, 1.0, 1.0, 1.0, 0.01)};
  EXPECT_NO_THROW(models::merton_eta(ts, MertonOrder::finite));
  EXPECT_THROW(models::merton_eta(ts, MertonOrder::finite, 0.1), DegenerateError);
}

TEST(MertonAlpha, NoConcernDecouples) {
  auto ts = triple();
  for (auto& z : ts) z.theta = 0.0;
  const auto a = models::merton_alphas(ts, MertonOrder::finite);
  const auto b = models::merton_alphas(ts, MertonOrder::limit);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto& z = ts[i];
    EXPECT_DOUBLE_EQ(a[i], z.delta * z.mu / (z.sigma_c * z.sigma_c + z.nu_c * z.nu_c));
    EXPECT_EQ(a[i], b[i]);
  }
}

TEST(MertonAlpha, HomogeneousHalf) {
  for (std::size_t n : {2u, 3u, 10u}) {
    const std::vector<MertonType> ts(n, type(0.0, 1.0, 0.0, 1.0, 1.0, 1.0));
    for (std::size_t i = 0; i < n; ++i) EXPECT_DOUBLE_EQ(models::merton_alpha(ts, i, MertonOrder::finite), 0.5);
  }
}

TEST(MertonAlpha, HeterogeneousAgainstLongDouble) {
  const auto ts = triple();
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(models::merton_alpha(ts, i, MertonOrder::finite), static_cast<double>(alpha_ref(ts, i, true)), 1e-13);
    EXPECT_NEAR(models::merton_alpha(ts, i, MertonOrder::limit), static_cast<double>(alpha_ref(ts, i, false)), 1e-13);
  }
}

TEST(MertonAlpha, GapBelowConstantOverN) {
  std::vector<MertonType> ts;
  for (std::size_t i = 0; i < 50; ++i) ts.push_back(triple()[i % 3]);
  models::MertonCaps caps;
  caps.cap = 2.0;
  caps.exposure_floor = 0.4;
  caps.eta_denominator_min = 0.1;
  for (const auto& z : ts) models::validate_type(z, caps);
  ASSERT_GE(models::merton_eta_denominator(ts, MertonOrder::finite), caps.eta_denominator_min);
  ASSERT_GE(models::merton_eta_denominator(ts, MertonOrder::limit), caps.eta_denominator_min);
  const double l = models::merton_gap_constant(caps);
  for (std::size_t i = 0; i < ts.size(); ++i)
    EXPECT_LE(std::abs(models::merton_alpha(ts, i, MertonOrder::limit) - models::merton_alpha(ts, i, MertonOrder::finite)),
              l / 50.0);
}

TEST(MertonAlpha, PermutationOfOthers) {
  std::vector<MertonType> ts;
  for (std::size_t i = 0; i < 7; ++i) {
    auto z = triple()[i % 3];
    z.delta += 0.1 * i;
    ts.push_back(z);
  }
  const double a0 = models::merton_alpha(ts, 0, MertonOrder::finite);
  auto perm = ts;
  std::reverse(perm.begin() + 1, perm.end());
  EXPECT_NEAR(models::merton_alpha(perm, 0, MertonOrder::finite), a0, 1e-14);
  std::rotate(perm.begin() + 1, perm.begin() + 3, perm.end());
  EXPECT_NEAR(models::merton_alpha(perm, 0, MertonOrder::finite), a0, 1e-14);
}

TEST(MertonAlpha, ScaledGapBoundedInN) {
  const auto base = triple();
  double max_small = 0.0, max_large = 0.0;
  for (std::size_t n = 2; n <= 512; ++n) {
    std::vector<MertonType> ts;
    for (std::size_t i = 0; i < n; ++i) ts.push_back(base[i % 3]);
    const auto a = models::merton_alphas(ts, MertonOrder::finite);
    const auto b = models::merton_alphas(ts, MertonOrder::limit);
    for (std::size_t i = 0; i < 3 && i < n; ++i) {
      const double g = static_cast<double>(n) * std::abs(a[i] - b[i]);
      (n < 256 ? max_small : max_large) = std::max(n < 256 ? max_small : max_large, g);
    }
  }
  EXPECT_GT(max_small, 0.0);
  EXPECT_LE(max_large, 2.0 * max_small);
}

TEST(MertonAlpha, IndexOutOfRange) {
  const auto ts = triple();
  EXPECT_THROW(models::merton_alpha(ts, 3, MertonOrder::finite), DomainError);
}

TEST(MertonType, Caps) {
  models::MertonCaps caps;
  EXPECT_NO_THROW(models::validate_type(type(0, 1, 0.5, 1, 0.5, 0.5), caps));
  EXPECT_THROW(models::validate_type(type(0, 1, 0.5, 1, 0.02, 0.02), caps), DomainError);
  EXPECT_THROW(models::validate_type(type(0, 11, 0.5, 1, 0.5, 0.5), caps), DomainError);
  EXPECT_THROW(models::validate_type(type(0, 1, 1.5, 1, 0.5, 0.5)), DomainError);
  EXPECT_THROW(models::validate_type(type(0, -1, 0.5, 1, 0.5, 0.5)), DomainError);
  EXPECT_THROW(models::validate_type(type(0, 1, 0.5, 0, 0.5, 0.5)), DomainError);
}
