#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "mfglab/concentration.hpp"
#include "mfglab/core.hpp"
#include "mfglab/dynamics.hpp"
#include "mfglab/metrics.hpp"
#include "mfglab/models.hpp"
#include "mfglab/normal.hpp"

// Action functional of Gaussian measure flows for the LQ mean field drift,
// its common-noise variant, and Cramer-type rates for the empirical mean.
namespace mfglab::ldp {

using dynamics::GaussianFlow;
using models::LqParams;

inline constexpr double kVarianceFloor = 1e-8;

// Derivative of a sampled path: centered in the interior, second-order
// one-sided at the ends (first order when only two points exist).
inline std::vector<double> grid_derivative(std::span<const double> f, double h) {
  const std::size_t n = f.size();
  std::vector<double> d(n, 0.0);
  if (n < 2) return d;
  if (n == 2) {
    d[0] = d[1] = (f[1] - f[0]) / h;
    return d;
  }
  for (std::size_t k = 1; k + 1 < n; ++k) d[k] = (f[k + 1] - f[k - 1]) / (2.0 * h);
  d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
  d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
  return d;
}

inline double trapezoid(std::span<const double> f, double h) {
  if (f.size() < 2) return 0.0;
  double acc = 0.5 * (f.front() + f.back());
  for (std::size_t k = 1; k + 1 < f.size(); ++k) acc += f[k];
  return acc * h;
}

// The two pieces of the action: motion of the mean and deviation of the
// variance from its Fokker-Planck evolution.
struct FlowAction {
  double mean_part = 0.0;
  double variance_part = 0.0;
  double total() const noexcept { return mean_part + variance_part; }
};

// With drift lambda_t (mean - x), lambda_t = b_bar + q + phi^inf_t, the flow
// N(m_t, v_t) is produced by the perturbation u_t(x) = a_t + c_t (x - m_t),
// a_t = m'_t, c_t = (v'_t + 2 lambda_t v_t - sigma^2) / (2 v_t), at cost
// (1 / (2 sigma^2)) int (a_t^2 + c_t^2 v_t) dt.
inline FlowAction gaussian_flow_action(const LqParams& p, const GaussianFlow& flow, double v_floor = kVarianceFloor) {
  p.validate();
  flow.validate();
  if (!(p.sigma > 0.0)) throw DomainError("gaussian_flow_rate: sigma must be > 0");
  if (std::abs(flow.grid.horizon() - p.horizon) > 1e-12 * p.horizon)
    throw DomainError("gaussian_flow_rate: flow grid horizon differs from model horizon");
  for (std::size_t k = 0; k < flow.var.size(); ++k)
    if (!(flow.var[k] >= v_floor))
      throw DomainError(detail::concat("gaussian_flow_rate: variance ", flow.var[k], " at t=", flow.grid.time(k),
                                       " below floor ", v_floor));
  const double h = flow.grid.dt();
  const double s2 = p.sigma * p.sigma;
  const auto dm = grid_derivative(flow.mean, h);
  const auto dv = grid_derivative(flow.var, h);
  std::vector<double> mean_density(flow.var.size()), var_density(flow.var.size());
  for (std::size_t k = 0; k < flow.var.size(); ++k) {
    const double lambda = models::lq_mkv_rate(p, flow.grid.time(k));
    const double c = (dv[k] + 2.0 * lambda * flow.var[k] - s2) / (2.0 * flow.var[k]);
    mean_density[k] = dm[k] * dm[k];
    var_density[k] = c * c * flow.var[k];
  }
  return {trapezoid(mean_density, h) / (2.0 * s2), trapezoid(var_density, h) / (2.0 * s2)};
}

inline double gaussian_flow_rate_i0(const LqParams& p, const GaussianFlow& flow, double v_floor = kVarianceFloor) {
  return gaussian_flow_action(p, flow, v_floor).total();
}

struct RateValue {
  double i0 = 0.0;
  double initial_entropy = 0.0;
  double correction = 0.0;
  double total = 0.0;
};

// R(nu_0 | N(m0, v0)).
inline double initial_entropy(const GaussianFlow& flow, double m0, double v0) {
  flow.validate();
  return metrics::rel_entropy_gaussian(flow.mean.front(), flow.var.front(), m0, v0);
}

// Without common noise the rate is I(nu) + R(nu_0 | mu_0).
inline RateValue rate_without_common_noise(const LqParams& p, const GaussianFlow& flow, double m0, double v0,
                                           double v_floor = kVarianceFloor) {
  const auto action = gaussian_flow_action(p, flow, v_floor);
  RateValue r;
  r.i0 = action.total();
  r.initial_entropy = initial_entropy(flow, m0, v0);
  r.correction = 0.0;
  r.total = r.i0 + r.initial_entropy;
  return r;
}

// With common noise the mean path moves for free: the correction
// int (m'_t - <nu_t, b~>)^2 / (2 sigma^2) dt, where <nu_t, b~> = 0 for the
// LQ drift, removes exactly the mean part of the action.
inline RateValue rate_with_common_noise(const LqParams& p, const GaussianFlow& flow, double m0, double v0,
                                        double v_floor = kVarianceFloor) {
  if (!(p.sigma0 > 0.0)) throw DomainError("rate_with_common_noise: sigma0 = 0, use the plain action instead");
  const auto action = gaussian_flow_action(p, flow, v_floor);
  RateValue r;
  r.i0 = action.total();
  r.initial_entropy = initial_entropy(flow, m0, v0);
  r.correction = action.mean_part;
  r.total = action.variance_part + (action.mean_part - r.correction) + r.initial_entropy;
  return r;
}

// Cost of reaching mean displacement a at time T when a0 is paid through the
// initial law and the rest by a linear mean ramp.
inline double mean_shift_cost(const LqParams& p, double a, double v0, double a0) {
  return a0 * a0 / (2.0 * v0) + (a - a0) * (a - a0) / (2.0 * p.sigma * p.sigma * p.horizon);
}

struct MeanShiftOptimum {
  double a0_star = 0.0;
  double rate = 0.0;
};

inline MeanShiftOptimum mean_shift_rate_minimize(const LqParams& p, double a, double v0) {
  p.validate();
  if (p.sigma0 != 0.0) throw DomainError("mean_shift_rate_minimize: requires sigma0 = 0");
  if (!(v0 > 0.0)) throw DomainError(detail::concat("mean_shift_rate_minimize: v0 must be > 0, got ", v0));
  const double total_var = v0 + p.sigma * p.sigma * p.horizon;
  return {a * v0 / total_var, a * a / (2.0 * total_var)};
}

// Flow realizing a given split: initial mean m0 + a0, linear ramp of the
// remaining a - a0, variance on its Fokker-Planck path from v0.
inline GaussianFlow mean_shift_flow(const LqParams& p, double m0, double v0, double a, double a0,
                                    const TimeGrid& grid) {
  auto ref = p;
  ref.sigma0 = 0.0;
  auto flow = dynamics::limit_flow_lq(ref, m0, v0, grid);
  for (std::size_t k = 0; k < grid.points(); ++k)
    flow.mean[k] = m0 + a0 + (a - a0) * grid.time(k) / grid.horizon();
  return flow;
}

// Exact P(mean(X_T) - m0 > a) for the LQ model without common noise: the
// drift sums to zero, so mean(X_T) ~ N(m0, (v0 + sigma^2 T) / n).
inline double exact_mean_tail(const LqParams& p, double v0, double a, std::size_t n) {
  const double sd = std::sqrt((v0 + p.sigma * p.sigma * p.horizon) / static_cast<double>(n));
  return normal::sf(a / sd);
}

struct EmpiricalRatePoint {
  std::size_t n = 0;
  concentration::TailEstimate estimate;
  double rate = 0.0;       // -(1/n) log p_hat
  double rate_low = 0.0;   // from ci_high
  double rate_high = 0.0;  // from ci_low
  double exact_p = 0.0;
  double exact_rate = 0.0;
};

// -(1/n) log P(mean(X_T) - m0 > a) along the n ladder, next to the exact
// finite-n Gaussian values.
inline std::vector<EmpiricalRatePoint> empirical_rate(const concentration::ExperimentSpec& spec,
                                                      std::span<const std::size_t> n_list, double a) {
  spec.validate();
  const auto* lq = std::get_if<concentration::LqModel>(&spec.model);
  if (!lq || !lq->init.is_gaussian()) throw DomainError("empirical_rate: needs the LQ model with Gaussian init");
  if (lq->params.sigma0 != 0.0) throw DomainError("empirical_rate: requires sigma0 = 0");
  std::vector<EmpiricalRatePoint> out;
  for (std::size_t n : n_list) {
    const auto samples =
        concentration::statistic_samples(spec, concentration::Statistic::mean_exceedance, n, spec.trials);
    EmpiricalRatePoint pt;
    pt.n = n;
    pt.estimate = concentration::tail_from_samples(samples, a, n, spec.level);
    if (pt.estimate.hits == 0)
      throw DegenerateError(detail::concat("empirical_rate: zero hits at n=", n, " (a=", a, ", trials=",
                                           spec.trials, ")"));
    const double inv_n = 1.0 / static_cast<double>(n);
    pt.rate = -std::log(pt.estimate.p_hat) * inv_n;
    pt.rate_low = -std::log(pt.estimate.ci_high) * inv_n;
    pt.rate_high = pt.estimate.ci_low > 0.0 ? -std::log(pt.estimate.ci_low) * inv_n : metrics::kInf;
    pt.exact_p = exact_mean_tail(lq->params, lq->init.variance, a, n);
    pt.exact_rate = -std::log(pt.exact_p) * inv_n;
    out.push_back(pt);
  }
  return out;
}

}  // namespace mfglab::ldp
