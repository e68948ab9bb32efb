#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "mfglab/concentration.hpp"
#include "mfglab/core.hpp"
#include "mfglab/dynamics.hpp"
#include "mfglab/models.hpp"
#include "mfglab/rng.hpp"

namespace mfglab::harness {

using Json = nlohmann::ordered_json;

inline constexpr const char* kSchema = "mfglab.config/1";

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"riccati-convergence", "coupling-gap",   "exp-equivalence",
                                              "lln-rate",            "concentration-tails", "transport-check",
                                              "ldp-rate",            "merton-gap"};
  return names;
}

inline bool is_experiment(const std::string& name) {
  for (const auto& n : experiment_names())
    if (n == name) return true;
  return false;
}

// Deterministic heterogeneous Merton population: field k of agent i is drawn
// uniformly in its range from stream (seed, i), counter k.
struct MertonGenerator {
  std::size_t count = 64;
  std::uint64_t seed = 7;
  double x0_lo = 0.0, x0_hi = 1.0;
  double delta_lo = 0.5, delta_hi = 2.0;
  double theta_lo = 0.0, theta_hi = 1.0;
  double mu_lo = 0.5, mu_hi = 1.5;
  double sigma_lo = 0.2, sigma_hi = 1.0;
  double nu_lo = 0.2, nu_hi = 1.0;

  std::vector<models::MertonType> generate() const {
    std::vector<models::MertonType> out(count);
    const RngStreamKey root(seed);
    for (std::size_t i = 0; i < count; ++i) {
      const RngStream s(root.child(i));
      auto draw = [&](std::uint64_t k, double lo, double hi) { return lo + (hi - lo) * s.uniform(k); };
      out[i] = {draw(0, x0_lo, x0_hi), draw(1, delta_lo, delta_hi), draw(2, theta_lo, theta_hi),
                draw(3, mu_lo, mu_hi),  draw(4, sigma_lo, sigma_hi), draw(5, nu_lo, nu_hi)};
    }
    return out;
  }
  friend bool operator==(const MertonGenerator&, const MertonGenerator&) = default;
};

struct LqBlock {
  models::LqParams params;
  dynamics::InitLaw init = dynamics::InitLaw::gaussian(0.0, 1.0);
};

struct MertonBlock {
  std::vector<models::MertonType> types;  // explicit list, or
  std::optional<MertonGenerator> generator;
  models::MertonCaps caps;

  std::vector<models::MertonType> population() const { return generator ? generator->generate() : types; }
};

// Experiment-specific knobs. Every key has a default; all of them are
// echoed on serialization.
struct Options {
  double level = 0.95;           // confidence level of binomial intervals
  double target_p = 0.3;         // exp-equivalence: calibration target at the smallest n
  std::size_t pilot_trials = 400;
  int order = 1;                 // Wasserstein order (lln-rate, transport-check)
  std::string functional = "mean-sup-norm";  // concentration-tails
  double kappa = 1.0;            // transport-check
  double m_min = -3.0, m_max = 3.0, v_min = 0.1, v_max = 4.0, grid_step = 0.1;
  std::size_t random_pairs = 1000;
  std::size_t oracle_instances = 1000;
  std::size_t n_ref = 0;         // lln-rate with non-Gaussian init: reference ensemble size (0 = 10 x max n)
  double shift = 1.0;            // ldp-rate: analytic mean-shift target a
};

struct RunConfig {
  std::string experiment;
  std::variant<LqBlock, MertonBlock> model = LqBlock{};
  std::vector<std::size_t> n{16, 32, 64};
  std::size_t steps = 100;
  std::size_t trials = 100;
  std::vector<double> thresholds;
  std::uint64_t seed = 1;
  std::size_t workers = 0;
  std::string out = "results";
  Options options;

  bool is_lq() const noexcept { return std::holds_alternative<LqBlock>(model); }
  const LqBlock& lq() const { return std::get<LqBlock>(model); }
  const MertonBlock& merton() const { return std::get<MertonBlock>(model); }
};

// ---------------------------------------------------------------------------
// JSON <-> RunConfig
// ---------------------------------------------------------------------------

namespace detail_cfg {

inline void reject_unknown(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <typename T>
void read(const Json& obj, const char* key, T& dst, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    dst = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
void read_unsigned(const Json& obj, const char* key, T& dst, const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw ConfigError(where + "." + key + ": expected a nonnegative integer");
  dst = v.get<T>();
}

inline dynamics::InitLaw parse_init(const Json& j) {
  const std::string where = "model.init";
  if (!j.is_object() || !j.contains("kind")) throw ConfigError(where + ": needs 'kind'");
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "gaussian") {
    reject_unknown(j, {"kind", "mean", "var"}, where);
    double m = 0.0, v = 1.0;
    read(j, "mean", m, where);
    read(j, "var", v, where);
    return dynamics::InitLaw::gaussian(m, v);
  }
  if (kind == "point") {
    reject_unknown(j, {"kind", "x"}, where);
    double x = 0.0;
    read(j, "x", x, where);
    return dynamics::InitLaw::point(x);
  }
  if (kind == "uniform") {
    reject_unknown(j, {"kind", "lower", "upper"}, where);
    double lo = 0.0, hi = 1.0;
    read(j, "lower", lo, where);
    read(j, "upper", hi, where);
    return dynamics::InitLaw::uniform(lo, hi);
  }
  throw ConfigError(where + ": unknown kind '" + kind + "'");
}

inline Json init_to_json(const dynamics::InitLaw& law) {
  Json j;
  if (law.kind == dynamics::InitLaw::Kind::uniform) {
    j["kind"] = "uniform";
    j["lower"] = law.lower;
    j["upper"] = law.upper;
  } else if (law.variance == 0.0) {
    j["kind"] = "point";
    j["x"] = law.mean;
  } else {
    j["kind"] = "gaussian";
    j["mean"] = law.mean;
    j["var"] = law.variance;
  }
  return j;
}

inline models::MertonType parse_type(const Json& j, const std::string& where) {
  reject_unknown(j, {"x0", "delta", "theta", "mu", "sigma", "nu"}, where);
  models::MertonType z;
  read(j, "x0", z.x0, where);
  read(j, "delta", z.delta, where);
  read(j, "theta", z.theta, where);
  read(j, "mu", z.mu, where);
  read(j, "sigma", z.sigma_c, where);
  read(j, "nu", z.nu_c, where);
  return z;
}

inline Json type_to_json(const models::MertonType& z) {
  return Json{{"x0", z.x0}, {"delta", z.delta}, {"theta", z.theta},
              {"mu", z.mu}, {"sigma", z.sigma_c}, {"nu", z.nu_c}};
}

inline MertonGenerator parse_generator(const Json& j) {
  const std::string where = "model.generator";
  reject_unknown(j, {"count", "seed", "x0", "delta", "theta", "mu", "sigma", "nu"}, where);
  MertonGenerator g;
  read_unsigned(j, "count", g.count, where);
  read_unsigned(j, "seed", g.seed, where);
  auto range = [&](const char* key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const auto& r = j.at(key);
    if (!r.is_array() || r.size() != 2) throw ConfigError(where + "." + key + ": expected [lo, hi]");
    lo = r[0].get<double>();
    hi = r[1].get<double>();
  };
  range("x0", g.x0_lo, g.x0_hi);
  range("delta", g.delta_lo, g.delta_hi);
  range("theta", g.theta_lo, g.theta_hi);
  range("mu", g.mu_lo, g.mu_hi);
  range("sigma", g.sigma_lo, g.sigma_hi);
  range("nu", g.nu_lo, g.nu_hi);
  return g;
}

inline Json generator_to_json(const MertonGenerator& g) {
  return Json{{"count", g.count},
              {"seed", g.seed},
              {"x0", {g.x0_lo, g.x0_hi}},
              {"delta", {g.delta_lo, g.delta_hi}},
              {"theta", {g.theta_lo, g.theta_hi}},
              {"mu", {g.mu_lo, g.mu_hi}},
              {"sigma", {g.sigma_lo, g.sigma_hi}},
              {"nu", {g.nu_lo, g.nu_hi}}};
}

inline Options parse_options(const Json& j) {
  const std::string where = "options";
  reject_unknown(j,
                 {"level", "target_p", "pilot_trials", "order", "functional", "kappa", "m_min", "m_max", "v_min",
                  "v_max", "grid_step", "random_pairs", "oracle_instances", "n_ref", "shift"},
                 where);
  Options o;
  read(j, "level", o.level, where);
  read(j, "target_p", o.target_p, where);
  read_unsigned(j, "pilot_trials", o.pilot_trials, where);
  read(j, "order", o.order, where);
  read(j, "functional", o.functional, where);
  read(j, "kappa", o.kappa, where);
  read(j, "m_min", o.m_min, where);
  read(j, "m_max", o.m_max, where);
  read(j, "v_min", o.v_min, where);
  read(j, "v_max", o.v_max, where);
  read(j, "grid_step", o.grid_step, where);
  read_unsigned(j, "random_pairs", o.random_pairs, where);
  read_unsigned(j, "oracle_instances", o.oracle_instances, where);
  read_unsigned(j, "n_ref", o.n_ref, where);
  read(j, "shift", o.shift, where);
  return o;
}

inline Json options_to_json(const Options& o) {
  return Json{{"level", o.level},         {"target_p", o.target_p},
              {"pilot_trials", o.pilot_trials}, {"order", o.order},
              {"functional", o.functional}, {"kappa", o.kappa},
              {"m_min", o.m_min},         {"m_max", o.m_max},
              {"v_min", o.v_min},         {"v_max", o.v_max},
              {"grid_step", o.grid_step}, {"random_pairs", o.random_pairs},
              {"oracle_instances", o.oracle_instances}, {"n_ref", o.n_ref},
              {"shift", o.shift}};
}

}  // namespace detail_cfg

inline RunConfig config_from_json(const Json& j) {
  using namespace detail_cfg;
  reject_unknown(j, {"schema", "experiment", "model", "n", "steps", "trials", "thresholds", "seed", "workers", "out",
                     "options"},
                 "config");
  if (!j.contains("schema") || !j.at("schema").is_string() || j.at("schema").get<std::string>() != kSchema)
    throw ConfigError(std::string("config: 'schema' must be \"") + kSchema + "\"");
  RunConfig c;
  read(j, "experiment", c.experiment, "config");
  if (!c.experiment.empty() && !is_experiment(c.experiment))
    throw ConfigError("config: unknown experiment '" + c.experiment + "'");

  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (!m.is_object() || !m.contains("kind")) throw ConfigError("model: needs 'kind'");
    const auto kind = m.at("kind").get<std::string>();
    if (kind == "lq") {
      reject_unknown(m, {"kind", "b_bar", "q", "eps", "g_bar", "sigma", "sigma0", "horizon", "init"}, "model");
      LqBlock b;
      read(m, "b_bar", b.params.b_bar, "model");
      read(m, "q", b.params.q, "model");
      read(m, "eps", b.params.eps, "model");
      read(m, "g_bar", b.params.g_bar, "model");
      read(m, "sigma", b.params.sigma, "model");
      read(m, "sigma0", b.params.sigma0, "model");
      read(m, "horizon", b.params.horizon, "model");
      if (m.contains("init")) b.init = parse_init(m.at("init"));
      c.model = b;
    } else if (kind == "merton") {
      reject_unknown(m, {"kind", "types", "generator", "caps"}, "model");
      MertonBlock b;
      if (m.contains("types") == m.contains("generator"))
        throw ConfigError("model: merton needs exactly one of 'types' or 'generator'");
      if (m.contains("types")) {
        if (!m.at("types").is_array()) throw ConfigError("model.types: expected an array");
        for (std::size_t i = 0; i < m.at("types").size(); ++i)
          b.types.push_back(parse_type(m.at("types")[i], "model.types[" + std::to_string(i) + "]"));
      } else {
        b.generator = parse_generator(m.at("generator"));
      }
      if (m.contains("caps")) {
        const auto& cp = m.at("caps");
        reject_unknown(cp, {"exposure_floor", "cap", "eta_denominator_min"}, "model.caps");
        read(cp, "exposure_floor", b.caps.exposure_floor, "model.caps");
        read(cp, "cap", b.caps.cap, "model.caps");
        read(cp, "eta_denominator_min", b.caps.eta_denominator_min, "model.caps");
      }
      c.model = b;
    } else {
      throw ConfigError("model: unknown kind '" + kind + "'");
    }
  }
  if (j.contains("n")) {
    if (!j.at("n").is_array()) throw ConfigError("config.n: expected an array");
    c.n.clear();
    for (const auto& v : j.at("n")) {
      if (!v.is_number_unsigned()) throw ConfigError("config.n: entries must be positive integers");
      c.n.push_back(v.get<std::size_t>());
    }
  }
  read_unsigned(j, "steps", c.steps, "config");
  read_unsigned(j, "trials", c.trials, "config");
  read(j, "thresholds", c.thresholds, "config");
  read_unsigned(j, "seed", c.seed, "config");
  read_unsigned(j, "workers", c.workers, "config");
  read(j, "out", c.out, "config");
  if (j.contains("options")) c.options = parse_options(j.at("options"));
  return c;
}

inline Json config_to_json(const RunConfig& c) {
  using namespace detail_cfg;
  Json j;
  j["schema"] = kSchema;
  j["experiment"] = c.experiment;
  if (c.is_lq()) {
    const auto& b = c.lq();
    j["model"] = Json{{"kind", "lq"},          {"b_bar", b.params.b_bar}, {"q", b.params.q},
                      {"eps", b.params.eps},   {"g_bar", b.params.g_bar}, {"sigma", b.params.sigma},
                      {"sigma0", b.params.sigma0}, {"horizon", b.params.horizon}, {"init", init_to_json(b.init)}};
  } else {
    const auto& b = c.merton();
    Json m{{"kind", "merton"}};
    if (b.generator) {
      m["generator"] = generator_to_json(*b.generator);
    } else {
      m["types"] = Json::array();
      for (const auto& z : b.types) m["types"].push_back(type_to_json(z));
    }
    m["caps"] = Json{{"exposure_floor", b.caps.exposure_floor},
                     {"cap", b.caps.cap},
                     {"eta_denominator_min", b.caps.eta_denominator_min}};
    j["model"] = m;
  }
  j["n"] = c.n;
  j["steps"] = c.steps;
  j["trials"] = c.trials;
  j["thresholds"] = c.thresholds;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["out"] = c.out;
  j["options"] = options_to_json(c.options);
  return j;
}

inline RunConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline std::string serialize_config(const RunConfig& c) { return config_to_json(c).dump(2) + "\n"; }

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// Checks the preconditions of the modules the experiment will call, so that
// a bad config fails before any output is written.
inline void validate_config(const RunConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (c.experiment.empty()) fail("config: no experiment named");
  if (!is_experiment(c.experiment)) fail("config: unknown experiment '" + c.experiment + "'");
  if (c.trials < 1) fail("config: trials must be >= 1");
  if (c.steps < 1) fail("config: steps must be >= 1");
  if (c.n.empty()) fail("config: n list is empty");
  for (std::size_t i = 1; i < c.n.size(); ++i)
    if (!(c.n[i] > c.n[i - 1])) fail("config: n list must be strictly ascending");
  const auto& o = c.options;
  if (!(o.level > 0.0 && o.level < 1.0)) fail("options.level must be in (0,1)");
  if (o.order != 1 && o.order != 2) fail("options.order must be 1 or 2");

  const bool needs_lq = c.experiment != "merton-gap";
  if (needs_lq && !c.is_lq()) fail("experiment '" + c.experiment + "' needs an LQ model");
  if (!needs_lq && c.is_lq()) fail("experiment 'merton-gap' needs a Merton model");

  try {
    if (c.is_lq()) {
      c.lq().params.validate();
      c.lq().init.validate();
      if (c.n.front() < 2) fail("config: LQ experiments need n >= 2");
    } else {
      const auto pop = c.merton().population();
      if (pop.size() < c.n.back())
        fail(detail::concat("config: Merton population has ", pop.size(), " agents, n list needs ", c.n.back()));
      for (const auto& z : pop) models::validate_type(z, c.merton().caps);
      if (c.n.front() < 2) fail("config: merton-gap needs n >= 2");
      // L~ assumes both eta denominators stay above the configured minimum.
      const double kappa = c.merton().caps.eta_denominator_min;
      for (std::size_t n : c.n) {
        const std::span<const models::MertonType> prefix(pop.data(), n);
        for (auto order : {models::MertonOrder::finite, models::MertonOrder::limit}) {
          const double den = models::merton_eta_denominator(prefix, order);
          if (!(den >= kappa))
            fail(detail::concat("config: eta denominator ", den, " at n=", n, " below caps.eta_denominator_min ",
                                kappa));
        }
      }
    }
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }

  const auto& e = c.experiment;
  if (e == "exp-equivalence") {
    if (!(o.target_p > 0.0 && o.target_p < 1.0)) fail("options.target_p must be in (0,1)");
    if (o.pilot_trials < 10) fail("options.pilot_trials must be >= 10");
    if (c.n.size() < 3) fail("exp-equivalence: decay fit needs at least 3 values of n");
  }
  if (e == "lln-rate" || e == "coupling-gap") {
    if (c.n.size() < 2) fail(e + ": rate fit needs at least 2 values of n");
  }
  if (e == "lln-rate" && !c.lq().init.is_gaussian() && o.n_ref != 0 && o.n_ref < 10 * c.n.back())
    fail("options.n_ref must be >= 10 x max n");
  if (e == "concentration-tails") {
    if (o.functional != "mean-sup-norm" && o.functional != "sup-W1-to-limit")
      fail("options.functional must be 'mean-sup-norm' or 'sup-W1-to-limit'");
    if (c.thresholds.empty()) fail("concentration-tails: thresholds list is empty");
    if (o.functional == "sup-W1-to-limit" && !c.lq().init.is_gaussian())
      fail("concentration-tails: sup-W1-to-limit needs a Gaussian initial law");
  }
  if (e == "transport-check") {
    if (!(o.kappa > 0.0)) fail("options.kappa must be > 0");
    if (!(o.grid_step > 0.0) || !(o.m_max >= o.m_min) || !(o.v_max >= o.v_min) || !(o.v_min > 0.0))
      fail("transport-check: invalid Gaussian grid");
  }
  if (e == "ldp-rate") {
    if (c.thresholds.size() != 1) fail("ldp-rate: thresholds must hold exactly one exceedance level a");
    if (c.lq().params.sigma0 != 0.0) fail("ldp-rate: the empirical ladder requires sigma0 = 0");
    if (!c.lq().init.is_gaussian() || !(c.lq().init.variance > 0.0))
      fail("ldp-rate: needs a Gaussian initial law with positive variance");
    if (!(c.lq().params.sigma > 0.0)) fail("ldp-rate: sigma must be > 0");
  }
}

}  // namespace mfglab::harness
