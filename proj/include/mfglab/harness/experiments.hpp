#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "mfglab/concentration.hpp"
#include "mfglab/dynamics.hpp"
#include "mfglab/harness/config.hpp"
#include "mfglab/harness/csv.hpp"
#include "mfglab/ldp.hpp"
#include "mfglab/metrics.hpp"
#include "mfglab/models.hpp"
#include "mfglab/parallel.hpp"
#include "mfglab/rng.hpp"

namespace mfglab::harness {

inline constexpr const char* kCodeVersion = "mfglab 0.1.0";

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentOutput {
  std::vector<std::pair<std::string, std::string>> files;  // name -> content
  Json summary = Json::object();
};

struct FileRecord {
  std::string name;
  std::size_t bytes = 0;
  std::string hash;
};

struct RunResult {
  std::filesystem::path out_dir;
  std::vector<FileRecord> files;
  Json manifest;
};

namespace detail_exp {

inline const std::vector<std::string>& tail_header() {
  static const std::vector<std::string> h{"model", "statistic", "n",      "a",       "trials",
                                          "hits",  "p_hat",     "ci_low", "ci_high", "seed"};
  return h;
}

inline void add_tail_row(CsvTable& t, const std::string& model, std::string_view stat,
                         const concentration::TailEstimate& e, std::uint64_t seed) {
  t.row()
      .add(model)
      .add(stat)
      .add(e.n)
      .add(e.threshold)
      .add(e.trials)
      .add(e.hits)
      .add(e.p_hat)
      .add(e.ci_low)
      .add(e.ci_high)
      .add(std::to_string(seed));
}

inline concentration::ExperimentSpec make_spec(const RunConfig& c, std::size_t workers, std::uint64_t label) {
  concentration::ExperimentSpec spec;
  if (c.is_lq()) {
    spec.model = concentration::LqModel{c.lq().params, c.lq().init};
  } else {
    spec.model = concentration::MertonModel{c.merton().population()};
  }
  spec.n_list = c.n;
  spec.steps = c.steps;
  spec.trials = c.trials;
  spec.thresholds = c.thresholds;
  spec.seed = c.seed;
  spec.label = label;
  spec.workers = workers;
  spec.level = c.options.level;
  return spec;
}

inline std::uint64_t experiment_label(const std::string& name) {
  const auto& names = experiment_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i + 1;
  return 0;
}

inline std::pair<double, double> mean_and_se(const std::vector<double>& s) {
  const double n = static_cast<double>(s.size());
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : s) ss += (x - mean) * (x - mean);
  const double se = s.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return {mean, se};
}

// ---------------------------------------------------------------------------

inline ExperimentOutput riccati_convergence(const RunConfig& c) {
  const auto& p = c.lq().params;
  const TimeGrid grid(p.horizon, c.steps);
  const auto times = grid.times();
  CsvTable table({"n", "phi_0", "residual", "r_tilde", "n_r_tilde", "ratio"});
  Json rows = Json::array();
  double prev = 0.0, max_scaled = 0.0;
  for (std::size_t i = 0; i < c.n.size(); ++i) {
    const std::size_t n = c.n[i];
    const auto idx = models::RiccatiIndex::finite(n);
    const double gap = models::riccati_gap(p, n, grid);
    const double residual = times.size() >= 3 ? models::riccati_residual(p, idx, times) : 0.0;
    auto& r = table.row().add(n).add(models::riccati_phi(p, idx, 0.0)).add(residual).add(gap).add(gap * n);
    if (i == 0 || prev == 0.0) r.empty();
    else r.add(gap / prev);
    max_scaled = std::max(max_scaled, gap * static_cast<double>(n));
    prev = gap;
  }
  const auto lim = models::RiccatiIndex::limit();
  table.row()
      .add("inf")
      .add(models::riccati_phi(p, lim, 0.0))
      .add(times.size() >= 3 ? models::riccati_residual(p, lim, times) : 0.0)
      .add(0.0)
      .empty()
      .empty();
  ExperimentOutput out;
  out.files.emplace_back("riccati.csv", table.str());
  out.summary["max_n_r_tilde"] = max_scaled;
  return out;
}

inline ExperimentOutput coupling_gap(const RunConfig& c, std::size_t workers) {
  auto spec = make_spec(c, workers, experiment_label(c.experiment));
  spec.statistic = concentration::Statistic::coupling_distance_sq;
  CsvTable table({"n", "trials", "mean_sq_distance", "std_error"});
  std::vector<double> means;
  for (std::size_t n : c.n) {
    const auto s = concentration::statistic_samples(spec, n);
    const auto [m, se] = mean_and_se(s);
    means.push_back(m);
    table.row().add(n).add(c.trials).add(m).add(se);
  }
  const auto fit = concentration::log_log_fit(c.n, means);
  CsvTable fit_table({"slope", "intercept", "degenerate"});
  fit_table.row().add(fit.slope).add(fit.intercept).add(fit.degenerate ? 1 : 0);
  ExperimentOutput out;
  out.files.emplace_back("coupling_gap.csv", table.str());
  out.files.emplace_back("coupling_gap_fit.csv", fit_table.str());
  out.summary["slope"] = fit.slope;
  return out;
}

inline ExperimentOutput exp_equivalence(const RunConfig& c, std::size_t workers) {
  auto spec = make_spec(c, workers, experiment_label(c.experiment));
  spec.statistic = concentration::Statistic::coupling_distance;
  const double eps = concentration::calibrate_threshold(spec, c.n.front(), c.options.target_p, c.options.pilot_trials);
  CsvTable tails(tail_header());
  CsvTable decay({"n", "eps", "trials", "hits", "scaled_log_p", "scaled_log_ci_low", "scaled_log_ci_high"});
  std::vector<concentration::TailEstimate> ests;
  for (std::size_t n : c.n) {
    const auto s = concentration::statistic_samples(spec, n);
    const auto e = concentration::tail_from_samples(s, eps, n, c.options.level);
    ests.push_back(e);
    add_tail_row(tails, "lq", concentration::to_string(spec.statistic), e, c.seed);
    const double inv = 1.0 / static_cast<double>(n);
    auto& r = decay.row().add(n).add(eps).add(e.trials).add(e.hits);
    if (e.hits > 0) r.add(std::log(e.p_hat) * inv);
    else r.empty();
    if (e.ci_low > 0.0) r.add(std::log(e.ci_low) * inv);
    else r.add("-inf");
    r.add(std::log(e.ci_high) * inv);
  }
  const auto fit = concentration::decay_fit(ests, concentration::DecayMode::exp_in_n);
  CsvTable fit_table({"mode", "rate", "intercept", "lower_bound_only"});
  fit_table.row().add("exp-in-n").add(fit.rate).add(fit.intercept).add(fit.lower_bound_only ? 1 : 0);
  ExperimentOutput out;
  out.files.emplace_back("tails.csv", tails.str());
  out.files.emplace_back("exp_equivalence.csv", decay.str());
  out.files.emplace_back("decay_fit.csv", fit_table.str());
  out.summary["eps"] = eps;
  return out;
}

inline ExperimentOutput lln_rate(const RunConfig& c, std::size_t workers) {
  auto spec = make_spec(c, workers, experiment_label(c.experiment));
  spec.statistic =
      c.options.order == 2 ? concentration::Statistic::sup_w2_to_limit : concentration::Statistic::sup_w1_to_limit;
  const auto& lq = c.lq();
  if (!lq.init.is_gaussian()) {
    const std::size_t n_ref = c.options.n_ref ? c.options.n_ref : 10 * c.n.back();
    spec.reference = concentration::reference_flow_proxy(lq.params, lq.init, n_ref, spec.grid(),
                                                         RngStreamKey(c.seed).child({spec.label, 99}), c.n.back());
  }
  CsvTable table({"n", "trials", "mean_sup_w", "std_error"});
  std::vector<double> means;
  for (std::size_t n : c.n) {
    const auto s = concentration::statistic_samples(spec, n);
    const auto [m, se] = mean_and_se(s);
    means.push_back(m);
    table.row().add(n).add(c.trials).add(m).add(se);
  }
  const auto fit = concentration::log_log_fit(c.n, means);
  CsvTable fit_table({"order", "slope", "intercept", "degenerate", "reference_proxy"});
  fit_table.row()
      .add(c.options.order)
      .add(fit.slope)
      .add(fit.intercept)
      .add(fit.degenerate ? 1 : 0)
      .add(spec.reference ? 1 : 0);
  ExperimentOutput out;
  out.files.emplace_back("lln_rate.csv", table.str());
  out.files.emplace_back("lln_fit.csv", fit_table.str());
  out.summary["slope"] = fit.slope;
  return out;
}

inline ExperimentOutput concentration_tails(const RunConfig& c, std::size_t workers) {
  auto spec = make_spec(c, workers, experiment_label(c.experiment));
  const auto functional = c.options.functional == "sup-W1-to-limit" ? concentration::Functional::sup_w1_to_limit
                                                                    : concentration::Functional::mean_sup_norm;
  spec.statistic = functional == concentration::Functional::mean_sup_norm
                       ? concentration::Statistic::lipschitz_functional
                       : concentration::Statistic::sup_w1_to_limit;
  CsvTable tails(tail_header());
  CsvTable centers({"n", "functional", "center"});
  for (std::size_t n : c.n) {
    const auto curve = concentration::lipschitz_concentration_experiment(spec, functional, n, c.thresholds);
    centers.row().add(n).add(c.options.functional).add(curve.center);
    for (const auto& e : curve.estimates) add_tail_row(tails, "lq", concentration::to_string(spec.statistic), e, c.seed);
  }
  ExperimentOutput out;
  out.files.emplace_back("tails.csv", tails.str());
  out.files.emplace_back("tail_centers.csv", centers.str());
  return out;
}

inline ExperimentOutput transport_check(const RunConfig& c, std::size_t workers) {
  const auto& o = c.options;
  std::vector<metrics::MeasurePair> family;
  std::vector<std::pair<double, double>> points;
  const auto steps_m = static_cast<std::size_t>(std::llround((o.m_max - o.m_min) / o.grid_step));
  const auto steps_v = static_cast<std::size_t>(std::llround((o.v_max - o.v_min) / o.grid_step));
  for (std::size_t i = 0; i <= steps_m; ++i)
    for (std::size_t j = 0; j <= steps_v; ++j) {
      // Endpoint interpolation keeps grid values such as m = 0, v = 1 exact.
      const double m = steps_m ? o.m_min + (o.m_max - o.m_min) * static_cast<double>(i) / steps_m : o.m_min;
      const double v = steps_v ? o.v_min + (o.v_max - o.v_min) * static_cast<double>(j) / steps_v : o.v_min;
      family.push_back(metrics::GaussianPair{m, v, 0.0, 1.0});
      points.emplace_back(m, v);
    }
  const auto rep = metrics::transport_inequality_check(family, o.kappa, o.order);
  CsvTable grid_table({"m", "v", "distance", "entropy", "margin"});
  for (std::size_t i = 0; i < family.size(); ++i)
    grid_table.row().add(points[i].first).add(points[i].second).add(rep.distances[i]).add(rep.entropies[i]).add(
        rep.margins[i]);

  const RngStreamKey root = RngStreamKey(c.seed).child(experiment_label(c.experiment));
  // Random empirical pairs: W1 <= W2.
  struct PairResult {
    double w1 = 0.0, w2 = 0.0;
  };
  const auto pairs = parallel_map<PairResult>(o.random_pairs, workers, [&](std::size_t t) {
    const RngStream s(root.child({1, t}));
    const std::size_t size = 2 + static_cast<std::size_t>(s.uniform(0) * 30.0);
    std::vector<double> a(size), b(size);
    for (std::size_t i = 0; i < size; ++i) {
      a[i] = s.gaussian(1 + 2 * i);
      b[i] = 0.5 + 2.0 * s.gaussian(2 + 2 * i);
    }
    return PairResult{metrics::w_empirical_1d(a, b, 1), metrics::w_empirical_1d(a, b, 2)};
  });
  std::size_t order_violations = 0;
  double worst_order = -metrics::kInf;
  for (const auto& r : pairs) {
    order_violations += r.w1 > r.w2 * (1.0 + 1e-12);
    worst_order = std::max(worst_order, r.w1 - r.w2);
  }
  // Oracle agreement on small instances with unequal sizes.
  const auto errors = parallel_map<double>(o.oracle_instances, workers, [&](std::size_t t) {
    const RngStream s(root.child({2, t}));
    const std::size_t na = 1 + static_cast<std::size_t>(s.uniform(0) * 8.0);
    const std::size_t nb = 1 + static_cast<std::size_t>(s.uniform(1) * 8.0);
    const int p = s.uniform(2) < 0.5 ? 1 : 2;
    std::vector<double> a(na), b(nb);
    for (std::size_t i = 0; i < na; ++i) a[i] = s.gaussian(10 + i);
    for (std::size_t i = 0; i < nb; ++i) b[i] = s.gaussian(30 + i);
    const double fast = metrics::w_empirical_1d(a, b, p);
    const double exact =
        metrics::w_discrete_oracle(metrics::DiscreteMeasure::uniform(a), metrics::DiscreteMeasure::uniform(b), p);
    return std::abs(fast - exact);
  });
  double worst_oracle = 0.0;
  std::size_t oracle_violations = 0;
  for (double e : errors) {
    worst_oracle = std::max(worst_oracle, e);
    oracle_violations += e > 1e-9;
  }

  CsvTable summary({"check", "count", "violations", "worst"});
  summary.row().add("gaussian-grid-margin").add(family.size()).add(rep.holds() ? std::size_t{0} : std::size_t{1}).add(
      rep.max_margin);
  summary.row().add("w1-le-w2").add(pairs.size()).add(order_violations).add(worst_order);
  summary.row().add("oracle-agreement").add(errors.size()).add(oracle_violations).add(worst_oracle);

  ExperimentOutput out;
  out.files.emplace_back("transport.csv", grid_table.str());
  out.files.emplace_back("transport_summary.csv", summary.str());
  out.summary["max_margin"] = rep.max_margin;
  return out;
}

inline ExperimentOutput ldp_rate(const RunConfig& c, std::size_t workers) {
  const auto& lq = c.lq();
  const auto& p = lq.params;
  const double m0 = lq.init.mean, v0 = lq.init.variance;
  const TimeGrid grid(p.horizon, c.steps);
  const double shift = c.options.shift;
  const auto opt = ldp::mean_shift_rate_minimize(p, shift, v0);

  CsvTable flows({"flow_id", "i0", "entropy", "correction", "total"});
  auto add_flow = [&](const std::string& id, const dynamics::GaussianFlow& f) {
    const auto r = ldp::rate_without_common_noise(p, f, m0, v0);
    flows.row().add(id).add(r.i0).add(r.initial_entropy).add(r.correction).add(r.total);
  };
  add_flow("fokker-planck", dynamics::limit_flow_lq(p, m0, v0, grid));
  add_flow("ramp-only", ldp::mean_shift_flow(p, m0, v0, shift, 0.0, grid));
  add_flow("entropy-only", ldp::mean_shift_flow(p, m0, v0, shift, shift, grid));
  add_flow("optimal-split", ldp::mean_shift_flow(p, m0, v0, shift, opt.a0_star, grid));

  auto spec = make_spec(c, workers, experiment_label(c.experiment));
  const double a = c.thresholds.front();
  const auto ladder = ldp::empirical_rate(spec, c.n, a);
  const double analytic = ldp::mean_shift_rate_minimize(p, a, v0).rate;
  CsvTable rates({"n", "a", "trials", "hits", "p_hat", "ci_low", "ci_high", "rate", "rate_low", "rate_high",
                  "exact_rate", "analytic_rate"});
  for (const auto& pt : ladder)
    rates.row()
        .add(pt.n)
        .add(a)
        .add(pt.estimate.trials)
        .add(pt.estimate.hits)
        .add(pt.estimate.p_hat)
        .add(pt.estimate.ci_low)
        .add(pt.estimate.ci_high)
        .add(pt.rate)
        .add(pt.rate_low)
        .add(pt.rate_high)
        .add(pt.exact_rate)
        .add(analytic);
  CsvTable optimum({"shift", "a0_star", "rate"});
  optimum.row().add(shift).add(opt.a0_star).add(opt.rate);

  ExperimentOutput out;
  out.files.emplace_back("ldp_flows.csv", flows.str());
  out.files.emplace_back("ldp_rate.csv", rates.str());
  out.files.emplace_back("ldp_optimum.csv", optimum.str());
  out.summary["analytic_rate"] = analytic;
  out.summary["shift_rate"] = opt.rate;
  return out;
}

inline ExperimentOutput merton_gap(const RunConfig& c, std::size_t workers) {
  const auto& block = c.merton();
  const auto pop = block.population();
  const double l_tilde = models::merton_gap_constant(block.caps);
  auto spec = make_spec(c, workers, experiment_label(c.experiment));
  CsvTable table({"n", "max_alpha_gap", "n_max_alpha_gap", "l_tilde", "trials", "paths", "violations",
                  "mean_coupling_distance"});
  std::size_t total_violations = 0;
  for (std::size_t n : c.n) {
    const std::span<const models::MertonType> types(pop.data(), n);
    const auto alpha = models::merton_alphas(types, models::MertonOrder::finite);
    const auto alpha_lim = models::merton_alphas(types, models::MertonOrder::limit);
    double max_gap = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_gap = std::max(max_gap, std::abs(alpha[i] - alpha_lim[i]));
    struct TrialResult {
      std::size_t violations = 0;
      double distance = 0.0;
    };
    const auto results = parallel_map<TrialResult>(c.trials, workers, [&](std::size_t t) {
      const auto ens = concentration::simulate_trial(spec, n, t);
      return TrialResult{dynamics::merton_gap_check(ens, types).violations, dynamics::coupling_distance(ens, 1)};
    });
    std::size_t violations = 0;
    double dist = 0.0;
    for (const auto& r : results) {
      violations += r.violations;
      dist += r.distance;
    }
    total_violations += violations;
    table.row()
        .add(n)
        .add(max_gap)
        .add(max_gap * static_cast<double>(n))
        .add(l_tilde)
        .add(c.trials)
        .add(c.trials * n)
        .add(violations)
        .add(dist / static_cast<double>(c.trials));
  }
  ExperimentOutput out;
  out.files.emplace_back("merton_gap.csv", table.str());
  out.summary["violations"] = total_violations;
  out.summary["l_tilde"] = l_tilde;
  return out;
}

}  // namespace detail_exp

// Effective worker count: MFGLAB_WORKERS overrides the given value; 0 means
// the available parallelism.
inline std::size_t resolve_workers(std::size_t requested) {
  if (const char* env = std::getenv("MFGLAB_WORKERS"); env && *env) {
    try {
      const long v = std::stol(env);
      if (v > 0) requested = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ConfigError(std::string("MFGLAB_WORKERS is not an integer: '") + env + "'");
    }
  }
  return requested == 0 ? default_workers() : requested;
}

inline ExperimentOutput compute_experiment(const RunConfig& c, std::size_t workers) {
  validate_config(c);
  const auto& e = c.experiment;
  if (e == "riccati-convergence") return detail_exp::riccati_convergence(c);
  if (e == "coupling-gap") return detail_exp::coupling_gap(c, workers);
  if (e == "exp-equivalence") return detail_exp::exp_equivalence(c, workers);
  if (e == "lln-rate") return detail_exp::lln_rate(c, workers);
  if (e == "concentration-tails") return detail_exp::concentration_tails(c, workers);
  if (e == "transport-check") return detail_exp::transport_check(c, workers);
  if (e == "ldp-rate") return detail_exp::ldp_rate(c, workers);
  if (e == "merton-gap") return detail_exp::merton_gap(c, workers);
  throw ConfigError("unknown experiment '" + e + "'");
}

// Runs the experiment named in the config, writes its CSVs and a manifest
// to config.out. Validation failures throw ConfigError before anything is
// written; write failures throw IoError after flagging the manifest.
inline RunResult run_experiment(const RunConfig& c, std::size_t workers) {
  validate_config(c);
  const auto start = std::chrono::steady_clock::now();
  auto output = compute_experiment(c, workers);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  RunResult result;
  result.out_dir = c.out;
  std::string failure;
  try {
    std::filesystem::create_directories(result.out_dir);
  } catch (const std::exception& ex) {
    throw IoError(std::string("cannot create output directory: ") + ex.what());
  }
  for (const auto& [name, content] : output.files) {
    const auto path = result.out_dir / name;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (f) f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) {
      failure = "failed to write " + path.string();
      break;
    }
    result.files.push_back({name, content.size(), fnv1a64_hex(content)});
  }

  Json files = Json::array();
  for (const auto& r : result.files) files.push_back(Json{{"name", r.name}, {"bytes", r.bytes}, {"fnv1a64", r.hash}});
  result.manifest = Json{{"schema", "mfglab.manifest/1"},
                         {"experiment", c.experiment},
                         {"code_version", kCodeVersion},
                         {"seed", c.seed},
                         {"workers", workers},
                         {"wall_time_seconds", wall},
                         {"status", failure.empty() ? "complete" : "partial"},
                         {"files", files},
                         {"summary", output.summary},
                         {"config", config_to_json(c)}};
  if (!failure.empty()) result.manifest["error"] = failure;
  std::ofstream mf(result.out_dir / "manifest.json", std::ios::trunc);
  mf << result.manifest.dump(2) << "\n";
  if (!failure.empty()) throw IoError(failure);
  if (!mf) throw IoError("failed to write manifest.json");
  return result;
}

}  // namespace mfglab::harness
