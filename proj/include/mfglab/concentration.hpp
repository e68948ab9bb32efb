#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <boost/math/distributions/beta.hpp>

#include "mfglab/core.hpp"
#include "mfglab/dynamics.hpp"
#include "mfglab/metrics.hpp"
#include "mfglab/models.hpp"
#include "mfglab/parallel.hpp"
#include "mfglab/rng.hpp"

// Monte Carlo tail probabilities, decay fits and convergence-rate fits for
// the coupled Nash / McKean-Vlasov ensembles.
namespace mfglab::concentration {

using dynamics::InitLaw;
using models::LqParams;
using models::MertonType;

// ---------------------------------------------------------------------------
// Binomial tail estimates
// ---------------------------------------------------------------------------

struct TailEstimate {
  double threshold = 0.0;
  std::size_t n = 0;
  std::size_t trials = 0;
  std::size_t hits = 0;
  double p_hat = 0.0;
  double ci_low = 0.0;
  double ci_high = 1.0;
  double level = 0.95;
};

struct Interval {
  double low = 0.0;
  double high = 1.0;
};

// Exact (Clopper-Pearson) two-sided interval at the given confidence level.
inline Interval clopper_pearson(std::size_t hits, std::size_t trials, double level = 0.95) {
  if (trials == 0) throw DomainError("clopper_pearson: trials must be >= 1");
  if (hits > trials) throw DomainError("clopper_pearson: hits exceed trials");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("clopper_pearson: level must be in (0,1)");
  const double alpha = 1.0 - level;
  const double k = static_cast<double>(hits), n = static_cast<double>(trials);
  Interval ci;
  ci.low = hits == 0 ? 0.0 : boost::math::quantile(boost::math::beta_distribution<double>(k, n - k + 1.0), alpha / 2.0);
  ci.high = hits == trials ? 1.0
                           : boost::math::quantile(boost::math::beta_distribution<double>(k + 1.0, n - k),
                                                   1.0 - alpha / 2.0);
  return ci;
}

inline TailEstimate tail_from_samples(std::span<const double> samples, double threshold, std::size_t n,
                                      double level = 0.95) {
  TailEstimate est;
  est.threshold = threshold;
  est.n = n;
  est.trials = samples.size();
  est.level = level;
  est.hits = static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(),
                                                    [threshold](double s) { return s > threshold; }));
  est.p_hat = est.trials == 0 ? 0.0 : static_cast<double>(est.hits) / static_cast<double>(est.trials);
  const auto ci = clopper_pearson(est.hits, est.trials, level);
  est.ci_low = std::min(ci.low, est.p_hat);
  est.ci_high = std::max(ci.high, est.p_hat);
  return est;
}

// ---------------------------------------------------------------------------
// Experiment description
// ---------------------------------------------------------------------------

enum class Statistic {
  coupling_distance,     // (1/n) sum ||X^i - Y^i||
  coupling_distance_sq,  // (1/n) sum ||X^i - Y^i||^2
  sup_w1_to_limit,       // sup_t W1(m^n_{X_t}, mu_t)
  sup_w2_to_limit,       // sup_t W2(m^n_{X_t}, mu_t)
  lipschitz_functional,  // (1/n) sum ||X^i||, 1-Lipschitz for the scaled l1 sup norm
  mean_exceedance,       // mean(X_T) - m0
};

inline std::string_view to_string(Statistic s) {
  switch (s) {
    case Statistic::coupling_distance: return "coupling-distance";
    case Statistic::coupling_distance_sq: return "coupling-distance-sq";
    case Statistic::sup_w1_to_limit: return "sup-W1-to-limit";
    case Statistic::sup_w2_to_limit: return "sup-W2-to-limit";
    case Statistic::lipschitz_functional: return "lipschitz-functional";
    case Statistic::mean_exceedance: return "mean-exceedance";
  }
  return "?";
}

inline Statistic statistic_from_string(std::string_view s) {
  for (auto k : {Statistic::coupling_distance, Statistic::coupling_distance_sq, Statistic::sup_w1_to_limit,
                 Statistic::sup_w2_to_limit, Statistic::lipschitz_functional, Statistic::mean_exceedance})
    if (to_string(k) == s) return k;
  throw DomainError("unknown statistic '" + std::string(s) + "'");
}

struct LqModel {
  LqParams params;
  InitLaw init;
};

// Agents are taken as prefixes of one type sequence: the n-player game uses
// the first n entries.
struct MertonModel {
  std::vector<MertonType> types;
};

using Model = std::variant<LqModel, MertonModel>;

struct ExperimentSpec {
  Model model = LqModel{};
  std::vector<std::size_t> n_list{16};
  std::size_t steps = 100;
  std::size_t trials = 100;
  Statistic statistic = Statistic::coupling_distance;
  std::vector<double> thresholds;
  std::uint64_t seed = 1;
  std::uint64_t label = 0;  // experiment label in the stream hierarchy
  std::size_t workers = 1;
  double level = 0.95;
  // Stand-in for the limit flow when the initial law is not Gaussian.
  std::optional<metrics::EmpiricalFlow> reference;

  double horizon() const {
    if (const auto* lq = std::get_if<LqModel>(&model)) return lq->params.horizon;
    return 1.0;
  }
  TimeGrid grid() const { return TimeGrid(horizon(), steps); }

  void validate() const {
    if (trials < 1) throw DomainError("ExperimentSpec: trials must be >= 1");
    if (n_list.empty()) throw DomainError("ExperimentSpec: n list is empty");
    if (!std::is_sorted(n_list.begin(), n_list.end()) ||
        std::adjacent_find(n_list.begin(), n_list.end()) != n_list.end())
      throw DomainError("ExperimentSpec: n list must be strictly ascending");
    if (steps < 1) throw DomainError("ExperimentSpec: steps must be >= 1");
    if (const auto* lq = std::get_if<LqModel>(&model)) {
      lq->params.validate();
      lq->init.validate();
      if (n_list.front() < 2) throw DomainError("ExperimentSpec: LQ model needs n >= 2");
    } else {
      const auto& mm = std::get<MertonModel>(model);
      if (mm.types.size() < n_list.back())
        throw DomainError(detail::concat("ExperimentSpec: ", mm.types.size(), " Merton types for n up to ",
                                         n_list.back()));
      if (statistic != Statistic::coupling_distance && statistic != Statistic::coupling_distance_sq &&
          statistic != Statistic::lipschitz_functional)
        throw DomainError("ExperimentSpec: statistic '" + std::string(to_string(statistic)) +
                          "' is not defined for the Merton model");
    }
  }
};

// Batches keep estimation samples, expectation estimates and pilot runs on
// disjoint streams.
enum class Batch : std::uint64_t { main = 0, expectation = 1, pilot = 2 };

inline RngStreamKey trial_key(const ExperimentSpec& spec, std::size_t n, std::size_t trial, Batch batch = Batch::main) {
  return RngStreamKey(spec.seed).child({spec.label, static_cast<std::uint64_t>(batch), n, trial});
}

inline dynamics::CoupledEnsemble simulate_trial(const ExperimentSpec& spec, std::size_t n, std::size_t trial,
                                                Batch batch = Batch::main) {
  const auto key = trial_key(spec, n, trial, batch);
  if (const auto* lq = std::get_if<LqModel>(&spec.model))
    return dynamics::simulate_coupled_lq(lq->params, n, spec.grid(), lq->init, key);
  const auto& mm = std::get<MertonModel>(spec.model);
  return dynamics::simulate_merton_coupled(std::span(mm.types).first(n), spec.grid(), key);
}

inline double mean_sup_norm(const dynamics::CoupledEnsemble& ens) {
  double acc = 0.0;
  for (std::size_t i = 0; i < ens.n; ++i) {
    double sup = 0.0;
    for (double x : ens.nash(i)) sup = std::max(sup, std::abs(x));
    acc += sup;
  }
  return acc / static_cast<double>(ens.n);
}

namespace detail_conc {

inline int wasserstein_order(Statistic s) { return s == Statistic::sup_w2_to_limit ? 2 : 1; }

inline const LqModel& require_lq(const ExperimentSpec& spec, Statistic s) {
  const auto* lq = std::get_if<LqModel>(&spec.model);
  if (!lq) throw DomainError("statistic '" + std::string(to_string(s)) + "' requires the LQ model");
  return *lq;
}

inline double sup_w_to_limit(const ExperimentSpec& spec, const dynamics::CoupledEnsemble& ens, int p) {
  const auto& lq = require_lq(spec, spec.statistic);
  const auto paths = metrics::nash_paths(ens);
  if (spec.reference) return metrics::sup_w_over_time(paths, *spec.reference, p);
  if (!lq.init.is_gaussian())
    throw DomainError("sup-W-to-limit: non-Gaussian initial law needs a reference flow proxy");
  const auto flow = dynamics::limit_flow_lq(lq.params, lq.init.mean, lq.init.variance, ens.grid,
                                            std::span<const double>(ens.common_path));
  return metrics::sup_w_over_time(paths, flow, p);
}

}  // namespace detail_conc

inline double evaluate_statistic(const ExperimentSpec& spec, Statistic stat, const dynamics::CoupledEnsemble& ens) {
  switch (stat) {
    case Statistic::coupling_distance: return dynamics::coupling_distance(ens, 1);
    case Statistic::coupling_distance_sq: {
      const double d = dynamics::coupling_distance(ens, 2);
      return d * d;
    }
    case Statistic::sup_w1_to_limit:
    case Statistic::sup_w2_to_limit:
      return detail_conc::sup_w_to_limit(spec, ens, detail_conc::wasserstein_order(stat));
    case Statistic::lipschitz_functional: return mean_sup_norm(ens);
    case Statistic::mean_exceedance: {
      const auto& lq = detail_conc::require_lq(spec, stat);
      double mean = 0.0;
      for (std::size_t i = 0; i < ens.n; ++i) mean += ens.nash(i).back();
      mean /= static_cast<double>(ens.n);
      const double m0 = lq.init.is_gaussian() ? lq.init.mean : 0.5 * (lq.init.lower + lq.init.upper);
      return mean - m0;
    }
  }
  throw DomainError("unknown statistic");
}

// One statistic value per trial, in trial order.
inline std::vector<double> statistic_samples(const ExperimentSpec& spec, Statistic stat, std::size_t n,
                                             std::size_t trials, Batch batch = Batch::main) {
  if (trials == 0) throw DomainError("statistic_samples: trials must be >= 1");
  return parallel_map<double>(trials, spec.workers, [&](std::size_t t) {
    return evaluate_statistic(spec, stat, simulate_trial(spec, n, t, batch));
  });
}

inline std::vector<double> statistic_samples(const ExperimentSpec& spec, std::size_t n, Batch batch = Batch::main) {
  return statistic_samples(spec, spec.statistic, n, spec.trials, batch);
}

inline TailEstimate tail_probability(const ExperimentSpec& spec, std::size_t n, double a) {
  spec.validate();
  return tail_from_samples(statistic_samples(spec, n), a, n, spec.level);
}

// Tail estimates for several thresholds from one set of samples.
inline std::vector<TailEstimate> tail_curve(std::span<const double> samples, std::span<const double> thresholds,
                                            std::size_t n, double level = 0.95) {
  std::vector<TailEstimate> out;
  out.reserve(thresholds.size());
  for (double a : thresholds) out.push_back(tail_from_samples(samples, a, n, level));
  return out;
}

// Threshold exceeded with probability ~target in a pilot batch.
inline double calibrate_threshold(const ExperimentSpec& spec, std::size_t n, double target, std::size_t pilot_trials) {
  if (!(target > 0.0 && target < 1.0)) throw DomainError("calibrate_threshold: target must be in (0,1)");
  auto s = statistic_samples(spec, spec.statistic, n, pilot_trials, Batch::pilot);
  std::sort(s.begin(), s.end());
  const auto idx = static_cast<std::size_t>(std::floor((1.0 - target) * static_cast<double>(s.size())));
  return s[std::min(idx, s.size() - 1)];
}

// ---------------------------------------------------------------------------
// Decay fits
// ---------------------------------------------------------------------------

enum class DecayMode { exp_in_n, exp_in_n2 };

struct DecayFit {
  double rate = 0.0;  // p ~ exp(-rate * x), x = n or n^2
  double intercept = 0.0;
  std::vector<double> residuals;
  std::vector<bool> upper_bound_used;  // zero-hit cells fitted at ci_high
  bool lower_bound_only = false;       // every cell had zero hits
};

inline DecayFit decay_fit(std::span<const TailEstimate> estimates, DecayMode mode) {
  if (estimates.size() < 3) throw DomainError("decay_fit: need at least 3 estimates");
  std::vector<double> x, y;
  DecayFit fit;
  std::size_t zero = 0;
  for (const auto& e : estimates) {
    const double n = static_cast<double>(e.n);
    x.push_back(mode == DecayMode::exp_in_n ? n : n * n);
    const bool use_ci = e.hits == 0;
    zero += use_ci;
    fit.upper_bound_used.push_back(use_ci);
    y.push_back(std::log(use_ci ? e.ci_high : e.p_hat));
  }
  const auto line = fit_line(x, y);
  fit.rate = -line.slope;
  fit.intercept = line.intercept;
  fit.residuals = line.residuals;
  fit.lower_bound_only = zero == estimates.size();
  return fit;
}

// ---------------------------------------------------------------------------
// Law of large numbers rate
// ---------------------------------------------------------------------------

struct RateFit {
  std::vector<std::size_t> n;
  std::vector<double> mean_distance;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;  // some mean distance was 0; slope undefined
};

inline RateFit log_log_fit(std::vector<std::size_t> n, std::vector<double> means) {
  RateFit fit;
  fit.n = std::move(n);
  fit.mean_distance = std::move(means);
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < fit.n.size(); ++i) {
    if (!(fit.mean_distance[i] > 0.0)) {
      fit.degenerate = true;
      return fit;
    }
    lx.push_back(std::log(static_cast<double>(fit.n[i])));
    ly.push_back(std::log(fit.mean_distance[i]));
  }
  const auto line = fit_line(lx, ly);
  fit.slope = line.slope;
  fit.intercept = line.intercept;
  return fit;
}

// Slope of log E[sup_t W_p(m^n_t, mu_t)] against log n.
inline RateFit lln_rate_fit(const ExperimentSpec& spec, std::span<const std::size_t> n_list) {
  if (n_list.size() < 2) throw DomainError("lln_rate_fit: need at least 2 values of n");
  const auto& lq = detail_conc::require_lq(spec, spec.statistic);
  if (!lq.init.is_gaussian() && !spec.reference)
    throw DomainError("lln_rate_fit: non-Gaussian initial law needs a reference flow proxy");
  const Statistic stat =
      spec.statistic == Statistic::sup_w2_to_limit ? Statistic::sup_w2_to_limit : Statistic::sup_w1_to_limit;
  std::vector<double> means;
  for (std::size_t n : n_list) {
    const auto s = statistic_samples(spec, stat, n, spec.trials);
    means.push_back(std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size()));
  }
  return log_log_fit({n_list.begin(), n_list.end()}, std::move(means));
}

// Slope of log E[stat] against log n for an arbitrary statistic.
inline RateFit moment_rate_fit(const ExperimentSpec& spec, Statistic stat, std::span<const std::size_t> n_list) {
  if (n_list.size() < 2) throw DomainError("moment_rate_fit: need at least 2 values of n");
  std::vector<double> means;
  for (std::size_t n : n_list) {
    const auto s = statistic_samples(spec, stat, n, spec.trials);
    means.push_back(std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size()));
  }
  return log_log_fit({n_list.begin(), n_list.end()}, std::move(means));
}

// ---------------------------------------------------------------------------
// Lipschitz concentration
// ---------------------------------------------------------------------------

enum class Functional { mean_sup_norm, sup_w1_to_limit };

struct TailCurve {
  Functional functional = Functional::mean_sup_norm;
  std::size_t n = 0;
  double center = 0.0;  // E^[Phi] from the expectation batch
  std::vector<TailEstimate> estimates;
};

// P(Phi(X) - E^[Phi(X)] > a) over a list of a, with E^ from a disjoint batch
// of the same size.
inline TailCurve lipschitz_concentration_experiment(const ExperimentSpec& spec, Functional functional, std::size_t n,
                                                    std::span<const double> a_list) {
  spec.validate();
  const Statistic stat =
      functional == Functional::mean_sup_norm ? Statistic::lipschitz_functional : Statistic::sup_w1_to_limit;
  const auto expectation = statistic_samples(spec, stat, n, spec.trials, Batch::expectation);
  auto samples = statistic_samples(spec, stat, n, spec.trials, Batch::main);
  TailCurve curve;
  curve.functional = functional;
  curve.n = n;
  curve.center = std::accumulate(expectation.begin(), expectation.end(), 0.0) / static_cast<double>(expectation.size());
  for (double& s : samples) s -= curve.center;
  curve.estimates = tail_curve(samples, a_list, n, spec.level);
  return curve;
}

// ---------------------------------------------------------------------------
// Reference flow proxy
// ---------------------------------------------------------------------------

// Marginals of one large McKean-Vlasov ensemble, frozen as a stand-in for
// the limit flow. Its own error is of order r_{N_ref,1} = N_ref^{-1/2}.
inline metrics::EmpiricalFlow reference_flow_proxy(const LqParams& params, const InitLaw& init, std::size_t n_ref,
                                                   const TimeGrid& grid, const RngStreamKey& key, std::size_t max_n) {
  if (n_ref < 10 * max_n)
    throw DomainError(detail::concat("reference_flow_proxy: N_ref=", n_ref, " must be >= 10 x max n (", max_n, ")"));
  const auto ens = dynamics::simulate_coupled_lq(params, n_ref, grid, init, key);
  metrics::EmpiricalFlow flow;
  flow.grid = grid;
  flow.marginals.resize(grid.points());
  const auto paths = metrics::mkv_paths(ens);
  for (std::size_t k = 0; k < grid.points(); ++k) flow.marginals[k] = paths.sorted_marginal(k);
  return flow;
}

}  // namespace mfglab::concentration
