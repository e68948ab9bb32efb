#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfglab {

// Argument outside the mathematical domain of an operation (t outside
// [0, T], negative variance, empty sample set, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A closed-form expression hit a vanishing denominator.
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid experiment configuration; reported before any simulation runs.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  oss.precision(17);
  (oss << ... << args);
  return oss.str();
}

}  // namespace detail

// Uniform time grid t_k = k * dt on [0, T].
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw DomainError(detail::concat("TimeGrid: horizon must be positive, got ", horizon));
    if (steps < 1) throw DomainError("TimeGrid: steps must be >= 1");
  }

  double horizon() const noexcept { return horizon_; }
  std::size_t steps() const noexcept { return steps_; }
  std::size_t points() const noexcept { return steps_ + 1; }
  double dt() const noexcept { return horizon_ / static_cast<double>(steps_); }

  // Last point is pinned to the horizon so that t_K == T exactly.
  double time(std::size_t k) const noexcept {
    return k == steps_ ? horizon_ : horizon_ * static_cast<double>(k) / static_cast<double>(steps_);
  }

  std::vector<double> times() const {
    std::vector<double> t(points());
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = time(k);
    return t;
  }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  double horizon_ = 1.0;
  std::size_t steps_ = 1;
};

// Ordinary least squares y = intercept + slope * x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> residuals;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("fit_line: need >= 2 paired points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw DomainError("fit_line: abscissae are all equal");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.residuals.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) fit.residuals[i] = y[i] - (fit.intercept + fit.slope * x[i]);
  return fit;
}

}  // namespace mfglab
