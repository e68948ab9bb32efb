#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "mfglab/core.hpp"

// Closed-form equilibrium objects for the two explicitly solvable games:
// the linear-quadratic systemic-risk model and the Merton-type portfolio
// game with relative performance concerns.
namespace mfglab::models {

// ---------------------------------------------------------------------------
// Linear-quadratic model
// ---------------------------------------------------------------------------

// Drift b(x,m,a) = b_bar (mean - x) + a,
// running cost f = a^2/2 - q a (mean - x) + eps/2 (mean - x)^2,
// terminal cost g = g_bar/2 (mean - x)^2, state noise sigma dB + sigma0 dW.
struct LqParams {
  double b_bar = 1.0;
  double q = 0.3;
  double eps = 0.5;
  double g_bar = 1.0;
  double sigma = 1.0;
  double sigma0 = 0.0;
  double horizon = 1.0;

  void validate() const {
    auto fail = [](const std::string& what) { throw DomainError("LqParams: " + what); };
    if (!(b_bar > 0.0)) fail(detail::concat("b_bar must be > 0, got ", b_bar));
    if (!(q * q <= eps)) fail(detail::concat("need q^2 <= eps, got q=", q, " eps=", eps));
    if (!(g_bar >= 0.0)) fail(detail::concat("g_bar must be >= 0, got ", g_bar));
    if (!(sigma >= 0.0)) fail(detail::concat("sigma must be >= 0, got ", sigma));
    if (!(sigma0 >= 0.0)) fail(detail::concat("sigma0 must be >= 0, got ", sigma0));
    if (!(horizon > 0.0) || !std::isfinite(horizon)) fail(detail::concat("horizon must be > 0, got ", horizon));
  }

  friend bool operator==(const LqParams&, const LqParams&) = default;
};

// Player count n >= 2 or the mean field limit.
class RiccatiIndex {
 public:
  static RiccatiIndex finite(std::size_t n) {
    if (n < 2) throw DomainError(detail::concat("RiccatiIndex: finite order needs n >= 2, got ", n));
    return RiccatiIndex(n);
  }
  static constexpr RiccatiIndex limit() noexcept { return RiccatiIndex(0); }

  constexpr bool is_limit() const noexcept { return n_ == 0; }
  constexpr std::size_t n() const noexcept { return n_; }

  // 1 - 1/n^2, which becomes 1 in the limit.
  constexpr double quadratic_factor() const noexcept {
    if (is_limit()) return 1.0;
    const double inv = 1.0 / static_cast<double>(n_);
    return 1.0 - inv * inv;
  }

  // 1 - 1/n, the weight of the own-state feedback in the Nash control.
  constexpr double feedback_factor() const noexcept {
    return is_limit() ? 1.0 : 1.0 - 1.0 / static_cast<double>(n_);
  }

  friend constexpr bool operator==(RiccatiIndex, RiccatiIndex) = default;

 private:
  constexpr explicit RiccatiIndex(std::size_t n) noexcept : n_(n) {}
  std::size_t n_;
};

namespace detail_lq {
inline void check_time(const LqParams& p, double t) {
  if (!(t >= 0.0 && t <= p.horizon))
    throw DomainError(detail::concat("time ", t, " outside [0, ", p.horizon, "]"));
}
}  // namespace detail_lq

// Solution of phi' = 2(b+q) phi + s phi^2 - (eps - q^2), phi_T = g_bar with
// s = 1 - 1/n^2 (s = 1 in the limit).
//
// The closed form is evaluated with F = exp(-(d+ - d-)(T - t)) in (0, 1],
// i.e. numerator and denominator divided by exp((d+ - d-)(T - t)), so long
// horizons do not overflow.
inline double riccati_phi(const LqParams& p, RiccatiIndex idx, double t) {
  detail_lq::check_time(p, t);
  const double s = idx.quadratic_factor();
  const double a = p.b_bar + p.q;
  const double src = p.eps - p.q * p.q;
  const double root = std::sqrt(a * a + s * src);
  const double dplus = -a + root;
  const double dminus = -a - root;
  const double f = std::exp(-(dplus - dminus) * (p.horizon - t));
  const double one_minus_f = -std::expm1(-(dplus - dminus) * (p.horizon - t));

  const double num = -src * one_minus_f - p.g_bar * (dplus - dminus * f);
  const double den = (dminus - dplus * f) - p.g_bar * s * one_minus_f;
  if (std::abs(den) < 1e-300 || !std::isfinite(num / den))
    throw DegenerateError(detail::concat("riccati_phi: vanishing denominator at t=", t, " (b_bar=", p.b_bar,
                                         ", q=", p.q, ", eps=", p.eps, ", g_bar=", p.g_bar, ", n=",
                                         idx.is_limit() ? std::string("inf") : std::to_string(idx.n()), ")"));
  if (t == p.horizon) return p.g_bar;
  return num / den;
}

// Right-hand side of the Riccati ODE.
inline double riccati_rhs(const LqParams& p, RiccatiIndex idx, double phi) noexcept {
  return 2.0 * (p.b_bar + p.q) * phi + idx.quadratic_factor() * phi * phi - (p.eps - p.q * p.q);
}

// Max over interior grid points of |centered difference of phi - rhs(phi)|.
inline double riccati_residual(const LqParams& p, RiccatiIndex idx, std::span<const double> grid) {
  if (grid.size() < 3) throw DomainError("riccati_residual: grid needs at least 3 points");
  for (std::size_t k = 1; k < grid.size(); ++k)
    if (!(grid[k] > grid[k - 1])) throw DomainError("riccati_residual: grid must be strictly increasing");
  std::vector<double> phi(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) phi[k] = riccati_phi(p, idx, grid[k]);
  double worst = 0.0;
  for (std::size_t k = 1; k + 1 < grid.size(); ++k) {
    const double deriv = (phi[k + 1] - phi[k - 1]) / (grid[k + 1] - grid[k - 1]);
    worst = std::max(worst, std::abs(deriv - riccati_rhs(p, idx, phi[k])));
  }
  return worst;
}

// Grid sup of |(1 - 1/n) phi^n_t - phi^inf_t|, the gain mismatch between the
// Nash feedback and its mean field proxy.
inline double riccati_gap(const LqParams& p, std::size_t n, const TimeGrid& grid) {
  const auto idx = RiccatiIndex::finite(n);
  double worst = 0.0;
  for (std::size_t k = 0; k < grid.points(); ++k) {
    const double t = grid.time(k);
    worst = std::max(worst, std::abs(idx.feedback_factor() * riccati_phi(p, idx, t) -
                                     riccati_phi(p, RiccatiIndex::limit(), t)));
  }
  return worst;
}

inline double riccati_gap(const LqParams& p, std::size_t n) { return riccati_gap(p, n, TimeGrid(p.horizon, 4000)); }

// Mean-reversion rate of the LQ feedbacks.
inline double lq_nash_rate(const LqParams& p, std::size_t n, double t) {
  const auto idx = RiccatiIndex::finite(n);
  return p.b_bar + p.q + riccati_phi(p, idx, t) * idx.feedback_factor();
}

inline double lq_mkv_rate(const LqParams& p, double t) {
  return p.b_bar + p.q + riccati_phi(p, RiccatiIndex::limit(), t);
}

inline double lq_nash_drift(const LqParams& p, std::size_t n, double t, double x, double mean) {
  return lq_nash_rate(p, n, t) * (mean - x);
}

inline double lq_mkv_drift(const LqParams& p, double t, double x, double mean) {
  return lq_mkv_rate(p, t) * (mean - x);
}

struct MasterValue {
  double value = 0.0;
  double dx = 0.0;
};

// U(t,x,m) = phi^inf_t / 2 (mean(m) - x)^2 and its x-derivative.
inline MasterValue lq_master_U(const LqParams& p, double t, double x, double mean) {
  const double phi = riccati_phi(p, RiccatiIndex::limit(), t);
  const double gap = mean - x;
  return {0.5 * phi * gap * gap, -phi * gap};
}

// ---------------------------------------------------------------------------
// Merton-type model
// ---------------------------------------------------------------------------

// Type vector of one agent: initial wealth, risk tolerance, relative concern,
// return drift, common-noise exposure, idiosyncratic exposure.
struct MertonType {
  double x0 = 0.0;
  double delta = 1.0;
  double theta = 0.0;
  double mu = 1.0;
  double sigma_c = 1.0;
  double nu_c = 1.0;

  friend bool operator==(const MertonType&, const MertonType&) = default;
};

// Floor on sigma + nu, cap on every field, and a lower bound on the
// equilibrium-constant denominators; together they make the 1/n bound on
// the control mismatch computable.
struct MertonCaps {
  double exposure_floor = 0.1;
  double cap = 10.0;
  double eta_denominator_min = 0.1;
};

enum class MertonOrder { finite, limit };

inline constexpr double kMertonDenominatorFloor = 1e-9;

inline void validate_type(const MertonType& z) {
  auto fail = [](const std::string& what) { throw DomainError("MertonType: " + what); };
  if (!(z.delta > 0.0)) fail(detail::concat("delta must be > 0, got ", z.delta));
  if (!(z.theta >= 0.0 && z.theta <= 1.0)) fail(detail::concat("theta must be in [0,1], got ", z.theta));
  if (!(z.mu > 0.0)) fail(detail::concat("mu must be > 0, got ", z.mu));
  if (!(z.sigma_c >= 0.0)) fail(detail::concat("sigma must be >= 0, got ", z.sigma_c));
  if (!(z.nu_c >= 0.0)) fail(detail::concat("nu must be >= 0, got ", z.nu_c));
  if (!std::isfinite(z.x0)) fail("x0 must be finite");
}

inline void validate_type(const MertonType& z, const MertonCaps& caps) {
  validate_type(z);
  if (!(z.sigma_c + z.nu_c >= caps.exposure_floor))
    throw DomainError(detail::concat("MertonType: sigma + nu = ", z.sigma_c + z.nu_c, " below floor ",
                                     caps.exposure_floor));
  for (double v : {std::abs(z.x0), z.delta, z.theta, z.mu, z.sigma_c, z.nu_c})
    if (v > caps.cap) throw DomainError(detail::concat("MertonType: field ", v, " above cap ", caps.cap));
}

namespace detail_merton {

// sigma^2 + nu^2 (1 - theta/n), or sigma^2 + nu^2 in the limit.
inline double control_denominator(const MertonType& z, std::size_t n, MertonOrder order) {
  const double correction = order == MertonOrder::finite ? 1.0 - z.theta / static_cast<double>(n) : 1.0;
  return z.sigma_c * z.sigma_c + z.nu_c * z.nu_c * correction;
}

struct EtaParts {
  double numerator = 0.0;
  double denominator = 0.0;
};

inline EtaParts eta_parts(std::span<const MertonType> types, MertonOrder order, double floor) {
  if (types.empty()) throw DomainError("merton_eta: empty type list");
  const std::size_t n = types.size();
  EtaParts parts;
  double num = 0.0, conc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& z = types[k];
    validate_type(z);
    const double den = control_denominator(z, n, order);
    if (!(den > floor))
      throw DegenerateError(detail::concat("merton: agent ", k, " has control denominator ", den,
                                           " below floor ", floor));
    num += z.delta * z.mu * z.sigma_c / den;
    conc += z.theta * z.sigma_c * z.sigma_c / den;
  }
  parts.numerator = num / static_cast<double>(n);
  parts.denominator = 1.0 - conc / static_cast<double>(n);
  return parts;
}

}  // namespace detail_merton

// 1 - (1/n) sum theta sigma^2 / denominator; zero marks the boundary where the
// equilibrium constant is undefined.
inline double merton_eta_denominator(std::span<const MertonType> types, MertonOrder order,
                                     double floor = kMertonDenominatorFloor) {
  return detail_merton::eta_parts(types, order, floor).denominator;
}

// Equilibrium constant eta_n (finite) or its limit analogue.
inline double merton_eta(std::span<const MertonType> types, MertonOrder order,
                         double floor = kMertonDenominatorFloor) {
  const auto parts = detail_merton::eta_parts(types, order, floor);
  if (!(std::abs(parts.denominator) > floor))
    throw DegenerateError(detail::concat("merton_eta: denominator ", parts.denominator, " within floor ", floor,
                                         " of zero (n=", types.size(), ")"));
  return parts.numerator / parts.denominator;
}

// Constant equilibrium control of all agents.
inline std::vector<double> merton_alphas(std::span<const MertonType> types, MertonOrder order,
                                         double floor = kMertonDenominatorFloor) {
  const double eta = merton_eta(types, order, floor);
  std::vector<double> out(types.size());
  for (std::size_t i = 0; i < types.size(); ++i) {
    const auto& z = types[i];
    out[i] = (z.delta * z.mu + eta * z.theta * z.sigma_c) /
             detail_merton::control_denominator(z, types.size(), order);
  }
  return out;
}

inline double merton_alpha(std::span<const MertonType> types, std::size_t i, MertonOrder order,
                           double floor = kMertonDenominatorFloor) {
  if (i >= types.size())
    throw DomainError(detail::concat("merton_alpha: index ", i, " out of range for ", types.size(), " agents"));
  const double eta = merton_eta(types, order, floor);
  const auto& z = types[i];
  return (z.delta * z.mu + eta * z.theta * z.sigma_c) / detail_merton::control_denominator(z, types.size(), order);
}

// L such that |alpha_limit - alpha_finite| <= L / n for every n >= 2 and
// every population satisfying the caps. Not optimal; assembled from
// control denominators >= floor^2/4 (finite) and >= floor^2/2 (limit).
inline double merton_gap_constant(const MertonCaps& caps) {
  const double m = caps.cap;
  const double c = caps.exposure_floor;
  const double kappa = caps.eta_denominator_min;
  if (!(c > 0.0 && m > 0.0 && kappa > 0.0)) throw DomainError("merton_gap_constant: caps must be positive");
  const double d = c * c / 4.0;
  const double dt = c * c / 2.0;
  const double eta_max = m * m * m / (d * kappa);
  const double inv_den_gap = m * m / (d * dt);  // n * |1/D - 1/D~|
  const double eta_gap = (m * m * m * inv_den_gap) / kappa + (m * m * m / dt) * (m * m * inv_den_gap) / (kappa * kappa);
  return (m * m + eta_max * m) * inv_den_gap + m * eta_gap / dt;
}

}  // namespace mfglab::models
