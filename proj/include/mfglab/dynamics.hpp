#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "mfglab/core.hpp"
#include "mfglab/models.hpp"
#include "mfglab/rng.hpp"

namespace mfglab::dynamics {

using models::LqParams;
using models::MertonType;

// Law of the i.i.d. initial states.
struct InitLaw {
  enum class Kind { gaussian, uniform };
  Kind kind = Kind::gaussian;
  double mean = 0.0;      // gaussian
  double variance = 0.0;  // gaussian; 0 is a point mass at `mean`
  double lower = 0.0;     // uniform
  double upper = 1.0;     // uniform

  static InitLaw gaussian(double m, double v) { return {Kind::gaussian, m, v, 0.0, 1.0}; }
  static InitLaw point(double x) { return {Kind::gaussian, x, 0.0, 0.0, 1.0}; }
  static InitLaw uniform(double lo, double hi) { return {Kind::uniform, 0.0, 0.0, lo, hi}; }

  bool is_gaussian() const noexcept { return kind == Kind::gaussian; }

  void validate() const {
    if (kind == Kind::gaussian && !(variance >= 0.0))
      throw DomainError(detail::concat("InitLaw: variance must be >= 0, got ", variance));
    if (kind == Kind::uniform && !(upper > lower)) throw DomainError("InitLaw: uniform needs lower < upper");
  }

  double draw(const RngStream& s, std::uint64_t counter) const {
    if (kind == Kind::gaussian) return variance == 0.0 ? mean : mean + std::sqrt(variance) * s.gaussian(counter);
    return lower + (upper - lower) * s.uniform(counter);
  }

  friend bool operator==(const InitLaw&, const InitLaw&) = default;
};

// Paired n-particle trajectories on one grid. Paths are stored particle by
// particle: state of particle i at step k is at i * points + k.
struct CoupledEnsemble {
  std::size_t n = 0;
  TimeGrid grid;
  std::vector<double> nash_paths;
  std::vector<double> mkv_paths;
  std::vector<double> common_path;  // W_{t_k}, unscaled
  std::vector<double> idio_sup;     // grid sup |B^i|
  std::uint64_t key_hash = 0;

  std::size_t points() const noexcept { return grid.points(); }

  std::span<const double> nash(std::size_t i) const { return {nash_paths.data() + i * points(), points()}; }
  std::span<const double> mkv(std::size_t i) const { return {mkv_paths.data() + i * points(), points()}; }

  std::vector<double> nash_marginal(std::size_t k) const { return column(nash_paths, k); }
  std::vector<double> mkv_marginal(std::size_t k) const { return column(mkv_paths, k); }

  double common_sup() const {
    double s = 0.0;
    for (double w : common_path) s = std::max(s, std::abs(w));
    return s;
  }

 private:
  std::vector<double> column(const std::vector<double>& paths, std::size_t k) const {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = paths[i * points() + k];
    return out;
  }
};

// Discretized Gaussian measure flow N(mean_t, var_t).
struct GaussianFlow {
  TimeGrid grid;
  std::vector<double> mean;
  std::vector<double> var;

  void validate() const {
    if (mean.size() != grid.points() || var.size() != grid.points())
      throw DomainError("GaussianFlow: path lengths do not match grid");
    for (double v : var)
      if (!(v >= 0.0)) throw DomainError(detail::concat("GaussianFlow: negative variance ", v));
  }
};

namespace detail_dyn {

// Counter 0 of each particle stream is its initial state; counter k+1 is
// the Brownian increment over step k.
inline double increment(const RngStream& s, std::size_t step, double sqrt_dt) {
  return sqrt_dt * s.gaussian(static_cast<std::uint64_t>(step) + 1);
}

inline void fill_common(CoupledEnsemble& ens, const RngStreamKey& key) {
  const RngStream common(key.child(rng::kCommonParticle));
  const double sqrt_dt = std::sqrt(ens.grid.dt());
  ens.common_path.assign(ens.points(), 0.0);
  for (std::size_t k = 0; k < ens.grid.steps(); ++k)
    ens.common_path[k + 1] = ens.common_path[k] + increment(common, k, sqrt_dt);
}

}  // namespace detail_dyn

inline std::vector<double> draw_initial_states(const InitLaw& law, std::size_t n, const RngStreamKey& key) {
  law.validate();
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = law.draw(RngStream(key.child(i)), 0);
  return x;
}

// Euler-Maruyama for the n-player Nash system X and its McKean-Vlasov proxy
// Y from shared initial states, shared idiosyncratic increments and a shared
// common increment. The drift uses the empirical mean at the start of each
// step.
inline CoupledEnsemble simulate_coupled_lq(const LqParams& p, const TimeGrid& grid,
                                           std::span<const double> initial_states, const RngStreamKey& key) {
  p.validate();
  const std::size_t n = initial_states.size();
  if (n < 2) throw DomainError(detail::concat("simulate_coupled_lq: need n >= 2, got ", n));
  if (std::abs(grid.horizon() - p.horizon) > 1e-12 * p.horizon)
    throw DomainError("simulate_coupled_lq: grid horizon differs from model horizon");

  CoupledEnsemble ens;
  ens.n = n;
  ens.grid = grid;
  ens.key_hash = key.hash();
  const std::size_t pts = grid.points();
  ens.nash_paths.assign(n * pts, 0.0);
  ens.mkv_paths.assign(n * pts, 0.0);
  ens.idio_sup.assign(n, 0.0);
  detail_dyn::fill_common(ens, key);

  std::vector<RngStream> streams;
  streams.reserve(n);
  for (std::size_t i = 0; i < n; ++i) streams.emplace_back(key.child(i));
  std::vector<double> brownian(n, 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    ens.nash_paths[i * pts] = initial_states[i];
    ens.mkv_paths[i * pts] = initial_states[i];
  }

  const double dt = grid.dt();
  const double sqrt_dt = std::sqrt(dt);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const double t = grid.time(k);
    const double nash_rate = models::lq_nash_rate(p, n, t);
    const double mkv_rate = models::lq_mkv_rate(p, t);
    double mean_x = 0.0, mean_y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mean_x += ens.nash_paths[i * pts + k];
      mean_y += ens.mkv_paths[i * pts + k];
    }
    mean_x *= inv_n;
    mean_y *= inv_n;
    const double common = p.sigma0 * (ens.common_path[k + 1] - ens.common_path[k]);
    for (std::size_t i = 0; i < n; ++i) {
      const double db = detail_dyn::increment(streams[i], k, sqrt_dt);
      brownian[i] += db;
      ens.idio_sup[i] = std::max(ens.idio_sup[i], std::abs(brownian[i]));
      const double noise = p.sigma * db + common;
      const double x = ens.nash_paths[i * pts + k];
      const double y = ens.mkv_paths[i * pts + k];
      ens.nash_paths[i * pts + k + 1] = x + nash_rate * (mean_x - x) * dt + noise;
      ens.mkv_paths[i * pts + k + 1] = y + mkv_rate * (mean_y - y) * dt + noise;
    }
  }
  return ens;
}

inline CoupledEnsemble simulate_coupled_lq(const LqParams& p, std::size_t n, const TimeGrid& grid,
                                           const InitLaw& init, const RngStreamKey& key) {
  if (n < 2) throw DomainError(detail::concat("simulate_coupled_lq: need n >= 2, got ", n));
  const auto x0 = draw_initial_states(init, n, key);
  return simulate_coupled_lq(p, grid, x0, key);
}

// Merton equilibrium paths in closed form: X uses the finite-n controls,
// Y the limit controls, both driven by the same B^i and W.
inline CoupledEnsemble simulate_merton_coupled(std::span<const MertonType> types, const TimeGrid& grid,
                                               const RngStreamKey& key,
                                               double floor = models::kMertonDenominatorFloor) {
  const auto alpha = models::merton_alphas(types, models::MertonOrder::finite, floor);
  const auto alpha_lim = models::merton_alphas(types, models::MertonOrder::limit, floor);
  const std::size_t n = types.size();

  CoupledEnsemble ens;
  ens.n = n;
  ens.grid = grid;
  ens.key_hash = key.hash();
  const std::size_t pts = grid.points();
  ens.nash_paths.assign(n * pts, 0.0);
  ens.mkv_paths.assign(n * pts, 0.0);
  ens.idio_sup.assign(n, 0.0);
  detail_dyn::fill_common(ens, key);

  const double sqrt_dt = std::sqrt(grid.dt());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& z = types[i];
    const RngStream s(key.child(i));
    double b = 0.0;
    ens.nash_paths[i * pts] = z.x0;
    ens.mkv_paths[i * pts] = z.x0;
    for (std::size_t k = 0; k < grid.steps(); ++k) {
      b += detail_dyn::increment(s, k, sqrt_dt);
      ens.idio_sup[i] = std::max(ens.idio_sup[i], std::abs(b));
      const double driver = z.mu * grid.time(k + 1) + z.nu_c * b + z.sigma_c * ens.common_path[k + 1];
      ens.nash_paths[i * pts + k + 1] = z.x0 + alpha[i] * driver;
      ens.mkv_paths[i * pts + k + 1] = z.x0 + alpha_lim[i] * driver;
    }
  }
  return ens;
}

// Per-agent grid sup |X^i - Y^i| next to the pathwise bound
// |alpha - alpha~| (mu T + nu ||B^i|| + sigma ||W||).
struct MertonGapCheck {
  std::vector<double> gap;
  std::vector<double> bound;
  std::size_t violations = 0;
};

inline MertonGapCheck merton_gap_check(const CoupledEnsemble& ens, std::span<const MertonType> types,
                                       double floor = models::kMertonDenominatorFloor) {
  if (types.size() != ens.n) throw DomainError("merton_gap_check: type count differs from ensemble size");
  const auto alpha = models::merton_alphas(types, models::MertonOrder::finite, floor);
  const auto alpha_lim = models::merton_alphas(types, models::MertonOrder::limit, floor);
  const double w_sup = ens.common_sup();
  const double horizon = ens.grid.horizon();
  MertonGapCheck out;
  out.gap.resize(ens.n);
  out.bound.resize(ens.n);
  for (std::size_t i = 0; i < ens.n; ++i) {
    const auto& z = types[i];
    const auto x = ens.nash(i);
    const auto y = ens.mkv(i);
    double sup = 0.0, scale = std::abs(z.x0);
    for (std::size_t k = 0; k < x.size(); ++k) {
      sup = std::max(sup, std::abs(x[k] - y[k]));
      scale = std::max(scale, std::max(std::abs(x[k]), std::abs(y[k])));
    }
    out.gap[i] = sup;
    out.bound[i] = std::abs(alpha[i] - alpha_lim[i]) * (z.mu * horizon + z.nu_c * ens.idio_sup[i] + z.sigma_c * w_sup);
    // Slack of a few ulp of the path magnitude for the rounding in X - Y.
    const double slack = 8.0 * std::numeric_limits<double>::epsilon() * scale;
    if (out.gap[i] > out.bound[i] + slack) ++out.violations;
  }
  return out;
}

// Conditional law of the LQ mean field limit for a Gaussian initial law:
// mean m0 + sigma0 W_t, variance from v' = -2 lambda_t v + sigma^2 by RK4.
inline GaussianFlow limit_flow_lq(const LqParams& p, double m0, double v0, const TimeGrid& grid,
                                  std::optional<std::span<const double>> common_path = std::nullopt) {
  p.validate();
  if (!(v0 >= 0.0)) throw DomainError(detail::concat("limit_flow_lq: v0 must be >= 0, got ", v0));
  if (p.sigma0 > 0.0 && !common_path)
    throw DomainError("limit_flow_lq: common path required when sigma0 > 0");
  if (common_path && common_path->size() != grid.points())
    throw DomainError("limit_flow_lq: common path length does not match grid");

  GaussianFlow flow;
  flow.grid = grid;
  flow.mean.assign(grid.points(), m0);
  flow.var.assign(grid.points(), v0);
  if (common_path && p.sigma0 > 0.0)
    for (std::size_t k = 0; k < grid.points(); ++k) flow.mean[k] = m0 + p.sigma0 * (*common_path)[k];

  const double s2 = p.sigma * p.sigma;
  auto rhs = [&](double t, double v) { return -2.0 * models::lq_mkv_rate(p, t) * v + s2; };
  const double h = grid.dt();
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const double t = grid.time(k);
    const double t_end = grid.time(k + 1);
    const double t_mid = std::min(t + 0.5 * h, p.horizon);
    const double v = flow.var[k];
    const double k1 = rhs(t, v);
    const double k2 = rhs(t_mid, v + 0.5 * h * k1);
    const double k3 = rhs(t_mid, v + 0.5 * h * k2);
    const double k4 = rhs(t_end, v + h * k3);
    flow.var[k + 1] = std::max(0.0, v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  }
  return flow;
}

// ((1/n) sum_i (grid sup |X^i - Y^i|)^p)^(1/p). Identity coupling of the two
// empirical path measures, so an upper bound on their path-space W_p.
inline double coupling_distance(const CoupledEnsemble& ens, int p) {
  if (p != 1 && p != 2) throw DomainError("coupling_distance: p must be 1 or 2");
  if (ens.n == 0) return 0.0;
  const std::size_t pts = ens.points();
  double acc = 0.0;
  for (std::size_t i = 0; i < ens.n; ++i) {
    double sup = 0.0;
    for (std::size_t k = 0; k < pts; ++k)
      sup = std::max(sup, std::abs(ens.nash_paths[i * pts + k] - ens.mkv_paths[i * pts + k]));
    acc += p == 1 ? sup : sup * sup;
  }
  acc /= static_cast<double>(ens.n);
  return p == 1 ? acc : std::sqrt(acc);
}

}  // namespace mfglab::dynamics
