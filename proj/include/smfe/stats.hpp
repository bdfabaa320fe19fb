#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "smfe/core.hpp"

namespace smfe::stats {

inline double mean(std::span<const double> x) {
  if (x.empty()) throw Error("mean: empty sample");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

/// Unbiased sample variance.
inline double variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

inline double standard_error(std::span<const double> x) {
  return x.size() < 2 ? 0.0 : std::sqrt(variance(x) / static_cast<double>(x.size()));
}

/// Sample skewness m3 / m2^(3/2) (population moments).
inline double skewness(std::span<const double> x) {
  const double m = mean(x);
  double m2 = 0.0, m3 = 0.0;
  for (double v : x) {
    const double t = v - m;
    m2 += t * t;
    m3 += t * t * t;
  }
  m2 /= static_cast<double>(x.size());
  m3 /= static_cast<double>(x.size());
  return m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
}

/// m4 / m2^2 - 3.
inline double excess_kurtosis(std::span<const double> x) {
  const double m = mean(x);
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double t = (v - m) * (v - m);
    m2 += t;
    m4 += t * t;
  }
  m2 /= static_cast<double>(x.size());
  m4 /= static_cast<double>(x.size());
  return m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0;
}

/// Standard error of the unbiased variance estimator, from the fourth central moment.
inline double variance_standard_error(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  const double m = mean(x);
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double t = (v - m) * (v - m);
    m2 += t;
    m4 += t * t;
  }
  m2 /= n;
  m4 /= n;
  return std::sqrt(std::max(0.0, (m4 - (n - 3.0) / (n - 1.0) * m2 * m2) / n));
}

/// Linear-interpolated quantile, q in [0, 1].
inline double quantile(Vec x, double q) {
  if (x.empty()) throw Error("quantile: empty sample");
  std::sort(x.begin(), x.end());
  const double pos = q * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, x.size() - 1);
  const double f = pos - static_cast<double>(lo);
  return x[lo] * (1.0 - f) + x[hi] * f;
}

/// Indices of one bootstrap resample of size n.
inline std::vector<std::size_t> resample(std::size_t n, std::mt19937_64& gen) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = pick(gen);
  return idx;
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least squares y = intercept + slope * x.
inline LineFit ols(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("ols: need at least two points");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw Error("ols: degenerate abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

struct SlopeFit {
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  std::size_t points = 0;
  bool degenerate = false;  ///< fewer than two usable grid points
};

/// Log-log OLS fit of (param, value); nonpositive values are excluded with a warning.
inline SlopeFit fit_slope(std::span<const double> param, std::span<const double> value) {
  if (param.size() != value.size()) throw DimensionError("fit_slope: size mismatch");
  Vec lx, ly;
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (!(param[i] > 0.0) || !(value[i] > 0.0)) {
      warn("fit_slope: excluding nonpositive point at index " + std::to_string(i));
      continue;
    }
    lx.push_back(std::log(param[i]));
    ly.push_back(std::log(value[i]));
  }
  SlopeFit r;
  r.points = lx.size();
  if (lx.size() < 2) {
    r.degenerate = true;
    return r;
  }
  const auto f = ols(lx, ly);
  r.slope = f.slope;
  r.intercept = f.intercept;
  return r;
}

/// Log-log slope of the per-grid-point mean of replica samples with a
/// percentile bootstrap CI (replicas resampled independently per grid point).
inline SlopeFit fit_slope(std::span<const double> param, const std::vector<Vec>& samples, double level = 0.9,
                          std::size_t resamples = 2000, std::uint64_t seed = 12345) {
  if (param.size() != samples.size()) throw DimensionError("fit_slope: size mismatch");
  if (param.size() < 3) throw Error("fit_slope: need at least three grid points");
  Vec means;
  for (const auto& s : samples) means.push_back(mean(s));
  SlopeFit r = fit_slope(param, means);
  if (r.degenerate) return r;
  std::mt19937_64 gen(seed);
  Vec slopes;
  slopes.reserve(resamples);
  Vec m(samples.size());
  for (std::size_t b = 0; b < resamples; ++b) {
    bool ok = true;
    for (std::size_t g = 0; g < samples.size(); ++g) {
      const auto idx = resample(samples[g].size(), gen);
      double s = 0.0;
      for (auto i : idx) s += samples[g][i];
      m[g] = s / static_cast<double>(idx.size());
      ok = ok && m[g] > 0.0;
    }
    if (!ok) continue;
    Vec lx, ly;
    for (std::size_t g = 0; g < m.size(); ++g) {
      lx.push_back(std::log(param[g]));
      ly.push_back(std::log(m[g]));
    }
    slopes.push_back(ols(lx, ly).slope);
  }
  if (!slopes.empty()) {
    r.ci_low = quantile(slopes, 0.5 * (1.0 - level));
    r.ci_high = quantile(slopes, 1.0 - 0.5 * (1.0 - level));
  }
  return r;
}

}  // namespace smfe::stats
