#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <variant>
#include <vector>

#include "mfglab/core.hpp"
#include "mfglab/dynamics.hpp"
#include "mfglab/normal.hpp"

namespace mfglab::metrics {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Uniform empirical measure on the real line; samples kept sorted.
class EmpiricalMeasure1D {
 public:
  EmpiricalMeasure1D() = default;
  explicit EmpiricalMeasure1D(std::vector<double> samples) : samples_(std::move(samples)) {
    if (samples_.empty()) throw DomainError("EmpiricalMeasure1D: empty sample set");
    std::sort(samples_.begin(), samples_.end());
  }

  std::span<const double> samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }

 private:
  std::vector<double> samples_;
};

struct Atom {
  double point = 0.0;
  double weight = 0.0;
};

// Finitely supported probability measure.
class DiscreteMeasure {
 public:
  DiscreteMeasure() = default;
  explicit DiscreteMeasure(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
    if (atoms_.empty()) throw DomainError("DiscreteMeasure: no atoms");
    double total = 0.0;
    for (const auto& a : atoms_) {
      if (!(a.weight > 0.0)) throw DomainError(detail::concat("DiscreteMeasure: nonpositive weight ", a.weight));
      total += a.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw DomainError(detail::concat("DiscreteMeasure: weights sum to ", total));
  }

  static DiscreteMeasure uniform(std::span<const double> points) {
    std::vector<Atom> atoms;
    for (double x : points) atoms.push_back({x, 1.0 / static_cast<double>(points.size())});
    return DiscreteMeasure(std::move(atoms));
  }

  std::span<const Atom> atoms() const noexcept { return atoms_; }
  std::size_t size() const noexcept { return atoms_.size(); }

 private:
  std::vector<Atom> atoms_;
};

namespace detail_w {
inline void check_order(int p) {
  if (p != 1 && p != 2) throw DomainError(detail::concat("Wasserstein order must be 1 or 2, got ", p));
}
inline double power(double x, int p) { return p == 1 ? std::abs(x) : x * x; }
inline double root(double x, int p) { return p == 1 ? x : std::sqrt(std::max(0.0, x)); }
}  // namespace detail_w

// W_p between two uniform empirical measures through their quantile
// functions. Unequal sizes are integrated exactly on the merged grid of
// breakpoints i/n and j/m.
inline double w_empirical_1d(const EmpiricalMeasure1D& a, const EmpiricalMeasure1D& b, int p) {
  detail_w::check_order(p);
  if (a.size() == 0 || b.size() == 0) throw DomainError("w_empirical_1d: empty input");
  const auto xs = a.samples();
  const auto ys = b.samples();
  const std::size_t n = xs.size(), m = ys.size();
  double acc = 0.0;
  if (n == m) {
    for (std::size_t i = 0; i < n; ++i) acc += detail_w::power(xs[i] - ys[i], p);
    return detail_w::root(acc / static_cast<double>(n), p);
  }
  // Breakpoints compared as integers (i+1)*m vs (j+1)*n to stay exact.
  std::size_t i = 0, j = 0;
  double u = 0.0;
  const double nm = static_cast<double>(n) * static_cast<double>(m);
  while (i < n && j < m) {
    const std::size_t bi = (i + 1) * m, bj = (j + 1) * n;
    const std::size_t next = std::min(bi, bj);
    const double un = static_cast<double>(next) / nm;
    acc += (un - u) * detail_w::power(xs[i] - ys[j], p);
    u = un;
    if (bi == next) ++i;
    if (bj == next) ++j;
  }
  return detail_w::root(acc, p);
}

inline double w_empirical_1d(std::span<const double> a, std::span<const double> b, int p) {
  return w_empirical_1d(EmpiricalMeasure1D({a.begin(), a.end()}), EmpiricalMeasure1D({b.begin(), b.end()}), p);
}

// Exact optimal transport between two small discrete measures by the
// transportation simplex (north-west corner start, potentials, Bland's
// entering rule). Ground truth for the fast paths; not for hot loops.
inline constexpr std::size_t kOracleAtomBudget = 16;

inline double w_discrete_oracle(const DiscreteMeasure& a, const DiscreteMeasure& b, int p) {
  detail_w::check_order(p);
  const std::size_t rows = a.size(), cols = b.size();
  if (rows + cols > kOracleAtomBudget)
    throw DomainError(detail::concat("w_discrete_oracle: ", rows + cols, " atoms exceed budget ", kOracleAtomBudget));
  if (rows == 0 || cols == 0) throw DomainError("w_discrete_oracle: empty measure");

  std::vector<double> cost(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      cost[i * cols + j] = detail_w::power(a.atoms()[i].point - b.atoms()[j].point, p);

  std::vector<double> flow(rows * cols, 0.0);
  std::vector<char> basic(rows * cols, 0);
  {
    std::vector<double> supply(rows), demand(cols);
    for (std::size_t i = 0; i < rows; ++i) supply[i] = a.atoms()[i].weight;
    for (std::size_t j = 0; j < cols; ++j) demand[j] = b.atoms()[j].weight;
    std::size_t i = 0, j = 0;
    while (true) {
      const double amt = std::min(supply[i], demand[j]);
      flow[i * cols + j] = std::max(0.0, amt);
      basic[i * cols + j] = 1;
      supply[i] -= amt;
      demand[j] -= amt;
      if (i == rows - 1 && j == cols - 1) break;
      if (j == cols - 1 || (i < rows - 1 && supply[i] <= demand[j])) ++i;
      else ++j;
    }
  }

  const std::size_t nodes = rows + cols;
  std::vector<double> pot(nodes);
  std::vector<char> seen(nodes);
  std::vector<std::size_t> parent_edge(nodes), parent_node(nodes), queue;
  queue.reserve(nodes);

  // Node r < rows is a row; node rows + c is column c. Basic cells are the
  // edges of a spanning tree. BFS from `root` fills parent links.
  auto bfs = [&](std::size_t root) {
    std::fill(seen.begin(), seen.end(), 0);
    queue.clear();
    queue.push_back(root);
    seen[root] = 1;
    for (std::size_t h = 0; h < queue.size(); ++h) {
      const std::size_t u = queue[h];
      if (u < rows) {
        for (std::size_t c = 0; c < cols; ++c)
          if (basic[u * cols + c] && !seen[rows + c]) {
            seen[rows + c] = 1;
            parent_node[rows + c] = u;
            parent_edge[rows + c] = u * cols + c;
            pot[rows + c] = cost[u * cols + c] - pot[u];
            queue.push_back(rows + c);
          }
      } else {
        const std::size_t c = u - rows;
        for (std::size_t r = 0; r < rows; ++r)
          if (basic[r * cols + c] && !seen[r]) {
            seen[r] = 1;
            parent_node[r] = u;
            parent_edge[r] = r * cols + c;
            pot[r] = cost[r * cols + c] - pot[u];
            queue.push_back(r);
          }
      }
    }
  };

  double scale = 0.0;
  for (double c : cost) scale = std::max(scale, c);
  const double tol = 1e-13 * std::max(1.0, scale);

  for (int iter = 0; iter < 10000; ++iter) {
    pot[0] = 0.0;
    bfs(0);
    std::size_t enter = rows * cols;
    for (std::size_t e = 0; e < rows * cols && enter == rows * cols; ++e) {
      if (basic[e]) continue;
      const std::size_t r = e / cols, c = e % cols;
      if (cost[e] - pot[r] - pot[rows + c] < -tol) enter = e;
    }
    if (enter == rows * cols) break;

    // Tree path from column node back to the row node of the entering cell.
    const std::size_t er = enter / cols, ec = enter % cols;
    bfs(er);
    std::vector<std::size_t> path;
    for (std::size_t v = rows + ec; v != er; v = parent_node[v]) path.push_back(parent_edge[v]);
    // path[0] touches the entering column and loses mass; signs alternate.
    double theta = kInf;
    std::size_t leave = path.front();
    for (std::size_t k = 0; k < path.size(); k += 2)
      if (flow[path[k]] < theta) {
        theta = flow[path[k]];
        leave = path[k];
      }
    flow[enter] += theta;
    for (std::size_t k = 0; k < path.size(); ++k) flow[path[k]] += (k % 2 == 0) ? -theta : theta;
    basic[enter] = 1;
    basic[leave] = 0;
    flow[leave] = 0.0;
  }

  double total = 0.0;
  for (std::size_t e = 0; e < rows * cols; ++e)
    if (basic[e]) total += std::max(0.0, flow[e]) * cost[e];
  return detail_w::root(total, p);
}

// Standard normal quantiles z_k = Phi^{-1}(k/n), k = 0..n, and their
// densities; reused across time steps with the same sample size.
class GaussianQuantileGrid {
 public:
  explicit GaussianQuantileGrid(std::size_t n) : n_(n), z_(n + 1), pdf_(n + 1), zpdf_(n + 1) {
    if (n == 0) throw DomainError("GaussianQuantileGrid: n must be positive");
    for (std::size_t k = 0; k <= n; ++k) {
      z_[k] = normal::quantile(static_cast<double>(k) / static_cast<double>(n));
      pdf_[k] = std::isinf(z_[k]) ? 0.0 : normal::pdf(z_[k]);
      zpdf_[k] = std::isinf(z_[k]) ? 0.0 : z_[k] * pdf_[k];
    }
  }

  std::size_t size() const noexcept { return n_; }
  double z(std::size_t k) const noexcept { return z_[k]; }

  normal::PartialMoments cell(std::size_t i) const noexcept {
    normal::PartialMoments pm;
    pm.m0 = 1.0 / static_cast<double>(n_);
    pm.m1 = pdf_[i] - pdf_[i + 1];
    pm.m2 = pm.m0 + zpdf_[i] - zpdf_[i + 1];
    return pm;
  }

 private:
  std::size_t n_;
  std::vector<double> z_, pdf_, zpdf_;
};

// W_p between a sorted sample (uniform weights) and N(m, v), integrating
// |F_n^{-1}(u) - F^{-1}(u)|^p exactly over each quantile cell with normal
// partial moments.
inline double w_empirical_vs_gaussian(std::span<const double> sorted, double m, double v, int p,
                                      const GaussianQuantileGrid& q) {
  detail_w::check_order(p);
  if (sorted.empty()) throw DomainError("w_empirical_vs_gaussian: empty samples");
  if (!(v >= 0.0)) throw DomainError(detail::concat("w_empirical_vs_gaussian: negative variance ", v));
  const std::size_t n = sorted.size();
  if (v == 0.0) {
    double acc = 0.0;
    for (double x : sorted) acc += detail_w::power(x - m, p);
    return detail_w::root(acc / static_cast<double>(n), p);
  }
  if (q.size() != n) throw DomainError("w_empirical_vs_gaussian: quantile grid size mismatch");
  const double s = std::sqrt(v);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = (sorted[i] - m) / s;
    const auto pm = q.cell(i);
    if (p == 2) {
      acc += xi * xi * pm.m0 - 2.0 * xi * pm.m1 + pm.m2;
      continue;
    }
    const double lo = q.z(i), hi = q.z(i + 1);
    if (xi <= lo) {
      acc += pm.m1 - xi * pm.m0;
    } else if (xi >= hi) {
      acc += xi * pm.m0 - pm.m1;
    } else {
      const double cx = normal::cdf(xi);
      const auto left = normal::partial_moments(lo, xi, static_cast<double>(i) / static_cast<double>(n), cx);
      const auto right =
          normal::partial_moments(xi, hi, cx, static_cast<double>(i + 1) / static_cast<double>(n));
      acc += (xi * left.m0 - left.m1) + (right.m1 - xi * right.m0);
    }
  }
  acc = std::max(0.0, acc);
  return p == 1 ? s * acc : s * std::sqrt(acc);
}

inline double w_empirical_vs_gaussian(const EmpiricalMeasure1D& samples, double m, double v, int p) {
  if (v == 0.0) return w_empirical_vs_gaussian(samples.samples(), m, v, p, GaussianQuantileGrid(1));
  return w_empirical_vs_gaussian(samples.samples(), m, v, p, GaussianQuantileGrid(samples.size()));
}

namespace detail_w {

// sqrt(v1) - sqrt(v2) without cancellation when v1 ~ v2.
inline double sd_difference(double v1, double v2) {
  const double sum = std::sqrt(v1) + std::sqrt(v2);
  return sum == 0.0 ? 0.0 : (v1 - v2) / sum;
}

}  // namespace detail_w

// Closed forms between N(m1, v1) and N(m2, v2). In 1D the monotone coupling
// x -> m2 + (s2/s1)(x - m1) is optimal, so W_p^p = E|dm + ds Z|^p.
inline double w2_gaussian(double m1, double v1, double m2, double v2) {
  if (!(v1 >= 0.0 && v2 >= 0.0)) throw DomainError("w2_gaussian: negative variance");
  const double dm = m1 - m2;
  const double ds = detail_w::sd_difference(v1, v2);
  return std::sqrt(dm * dm + ds * ds);
}

inline double w1_gaussian(double m1, double v1, double m2, double v2) {
  if (!(v1 >= 0.0 && v2 >= 0.0)) throw DomainError("w1_gaussian: negative variance");
  const double dm = m1 - m2;
  const double ds = std::abs(detail_w::sd_difference(v1, v2));
  if (ds == 0.0) return std::abs(dm);
  // Folded normal mean.
  return ds * std::sqrt(2.0 / std::numbers::pi) * std::exp(-0.5 * dm * dm / (ds * ds)) +
         dm * (1.0 - 2.0 * normal::cdf(-dm / ds));
}

inline double w_gaussian(double m1, double v1, double m2, double v2, int p) {
  detail_w::check_order(p);
  return p == 1 ? w1_gaussian(m1, v1, m2, v2) : w2_gaussian(m1, v1, m2, v2);
}

// ---------------------------------------------------------------------------
// Marginal distances along a time grid
// ---------------------------------------------------------------------------

// n particle paths stored particle-major (i * points + k).
struct PathSet {
  std::span<const double> data;
  std::size_t n = 0;
  TimeGrid grid;

  std::vector<double> sorted_marginal(std::size_t k) const {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = data[i * grid.points() + k];
    std::sort(out.begin(), out.end());
    return out;
  }
};

inline PathSet nash_paths(const dynamics::CoupledEnsemble& e) { return {e.nash_paths, e.n, e.grid}; }
inline PathSet mkv_paths(const dynamics::CoupledEnsemble& e) { return {e.mkv_paths, e.n, e.grid}; }

// Frozen empirical marginals on a grid, standing in for a limit flow.
struct EmpiricalFlow {
  TimeGrid grid;
  std::vector<std::vector<double>> marginals;  // sorted, one per grid point
};

namespace detail_w {
inline void check_grids(const TimeGrid& a, const TimeGrid& b) {
  if (!(a == b)) throw DomainError("sup_w_over_time: grids do not match");
}
}  // namespace detail_w

inline double sup_w_over_time(const PathSet& a, const PathSet& b, int p) {
  detail_w::check_grids(a.grid, b.grid);
  double worst = 0.0;
  for (std::size_t k = 0; k < a.grid.points(); ++k)
    worst = std::max(worst, w_empirical_1d(EmpiricalMeasure1D(a.sorted_marginal(k)),
                                           EmpiricalMeasure1D(b.sorted_marginal(k)), p));
  return worst;
}

inline double sup_w_over_time(const PathSet& a, const dynamics::GaussianFlow& flow, int p) {
  detail_w::check_grids(a.grid, flow.grid);
  flow.validate();
  const GaussianQuantileGrid q(a.n);
  double worst = 0.0;
  for (std::size_t k = 0; k < a.grid.points(); ++k) {
    const auto xs = a.sorted_marginal(k);
    worst = std::max(worst, w_empirical_vs_gaussian(xs, flow.mean[k], flow.var[k], p, q));
  }
  return worst;
}

inline double sup_w_over_time(const PathSet& a, const EmpiricalFlow& ref, int p) {
  detail_w::check_grids(a.grid, ref.grid);
  double worst = 0.0;
  for (std::size_t k = 0; k < a.grid.points(); ++k)
    worst = std::max(worst, w_empirical_1d(EmpiricalMeasure1D(a.sorted_marginal(k)),
                                           EmpiricalMeasure1D(ref.marginals[k]), p));
  return worst;
}

inline double sup_w_over_time(const dynamics::GaussianFlow& a, const dynamics::GaussianFlow& b, int p) {
  detail_w::check_grids(a.grid, b.grid);
  double worst = 0.0;
  for (std::size_t k = 0; k < a.grid.points(); ++k)
    worst = std::max(worst, w_gaussian(a.mean[k], a.var[k], b.mean[k], b.var[k], p));
  return worst;
}

// Per-time marginal distances, for reporting.
inline std::vector<double> w_over_time(const PathSet& a, const dynamics::GaussianFlow& flow, int p) {
  detail_w::check_grids(a.grid, flow.grid);
  const GaussianQuantileGrid q(a.n);
  std::vector<double> out(a.grid.points());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = w_empirical_vs_gaussian(a.sorted_marginal(k), flow.mean[k], flow.var[k], p, q);
  return out;
}

// ---------------------------------------------------------------------------
// Relative entropy and transport inequalities
// ---------------------------------------------------------------------------

// R(N(m1,v1) | N(m0,v0)).
inline double rel_entropy_gaussian(double m1, double v1, double m0, double v0) {
  if (!(v0 > 0.0)) throw DomainError(detail::concat("rel_entropy_gaussian: reference variance must be > 0, got ", v0));
  if (!(v1 > 0.0))
    throw DomainError(detail::concat("rel_entropy_gaussian: variance must be > 0, got ", v1,
                                     " (point masses go through the discrete path)"));
  const double dm = m1 - m0;
  // Variance part (d - log(1 + d)) / 2 with d = v1/v0 - 1; series near 0.
  const double d = (v1 - v0) / v0;
  const double var_part = std::abs(d) < 1e-4 ? d * d * (0.5 - d * (1.0 / 3.0 - d * (0.25 - d / 5.0)))
                                             : d - std::log1p(d);
  return 0.5 * var_part + dm * dm / (2.0 * v0);
}

// R(nu | mu) for discrete measures; atoms matched by exact position.
inline double rel_entropy_discrete(const DiscreteMeasure& nu, const DiscreteMeasure& mu) {
  double acc = 0.0;
  for (const auto& a : nu.atoms()) {
    double ref = 0.0;
    for (const auto& b : mu.atoms())
      if (b.point == a.point) ref += b.weight;
    if (ref == 0.0) return kInf;
    acc += a.weight * std::log(a.weight / ref);
  }
  return std::max(0.0, acc);
}

struct GaussianPair {
  double m = 0.0, v = 1.0;    // nu
  double m0 = 0.0, v0 = 1.0;  // mu0
};

struct DiscretePair {
  DiscreteMeasure nu;
  DiscreteMeasure mu0;
};

using MeasurePair = std::variant<GaussianPair, DiscretePair>;

struct TransportCheckReport {
  std::vector<double> distances;
  std::vector<double> entropies;
  std::vector<double> margins;  // W_p - sqrt(2 kappa R); -inf when R = inf
  double max_margin = -kInf;
  std::size_t argmax = 0;
  bool holds() const noexcept { return max_margin <= 0.0; }
};

namespace detail_w {

inline std::pair<double, double> distance_and_entropy(const GaussianPair& g, int p) {
  const double w = w_gaussian(g.m0, g.v0, g.m, g.v, p);
  if (g.v0 == 0.0) return {w, (g.v == 0.0 && g.m == g.m0) ? 0.0 : kInf};
  if (g.v == 0.0) return {w, kInf};
  return {w, rel_entropy_gaussian(g.m, g.v, g.m0, g.v0)};
}

inline std::pair<double, double> distance_and_entropy(const DiscretePair& d, int p) {
  return {w_discrete_oracle(d.mu0, d.nu, p), rel_entropy_discrete(d.nu, d.mu0)};
}

}  // namespace detail_w

// Worst case over the family of W_p(mu0, nu) - sqrt(2 kappa R(nu | mu0)).
inline TransportCheckReport transport_inequality_check(std::span<const MeasurePair> family, double kappa, int p) {
  detail_w::check_order(p);
  if (!(kappa > 0.0)) throw DomainError("transport_inequality_check: kappa must be > 0");
  TransportCheckReport rep;
  for (std::size_t i = 0; i < family.size(); ++i) {
    const auto [w, r] = std::visit([p](const auto& pair) { return detail_w::distance_and_entropy(pair, p); }, family[i]);
    const double margin = std::isinf(r) ? -kInf : w - std::sqrt(2.0 * kappa * r);
    rep.distances.push_back(w);
    rep.entropies.push_back(r);
    rep.margins.push_back(margin);
    if (i == 0 || margin > rep.max_margin) {
      rep.max_margin = margin;
      rep.argmax = i;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Subgaussian integrability diagnostic
// ---------------------------------------------------------------------------

struct ExpMomentEstimate {
  double kappa = 0.0;
  double mean = 0.0;       // empirical mean of exp(kappa x^2); inf on overflow
  double max_share = 0.0;  // largest single term / sum
  bool overflow = false;
  bool unstable = false;   // overflow, or one sample dominates the sum
};

struct SubgaussianReport {
  std::vector<ExpMomentEstimate> estimates;
  // Largest kappa on the grid whose estimate is neither overflowed nor
  // dominated by a single sample; 0 if none qualifies.
  double largest_stable_kappa = 0.0;
};

// Reporting tool, not an estimator with guarantees: an estimate is flagged
// unstable when the largest term carries more than `dominance` of the sum.
inline SubgaussianReport subgaussian_diagnostic(std::span<const double> samples, std::span<const double> kappa_grid,
                                                double dominance = 0.01) {
  if (samples.empty()) throw DomainError("subgaussian_diagnostic: empty samples");
  double max_sq = 0.0;
  for (double x : samples) max_sq = std::max(max_sq, x * x);
  SubgaussianReport rep;
  for (double kappa : kappa_grid) {
    ExpMomentEstimate e;
    e.kappa = kappa;
    // Sum of exp(kappa (x^2 - max x^2)) keeps every term in (0, 1].
    const double top = kappa * max_sq;
    double scaled = 0.0;
    for (double x : samples) scaled += std::exp(kappa * x * x - top);
    e.max_share = 1.0 / scaled;
    const double log_mean = top + std::log(scaled / static_cast<double>(samples.size()));
    e.overflow = log_mean > std::log(std::numeric_limits<double>::max());
    e.mean = e.overflow ? kInf : std::exp(log_mean);
    e.unstable = e.overflow || (samples.size() > 1 && e.max_share > dominance);
    if (!e.unstable) rep.largest_stable_kappa = std::max(rep.largest_stable_kappa, kappa);
    rep.estimates.push_back(e);
  }
  return rep;
}

}  // namespace mfglab::metrics
