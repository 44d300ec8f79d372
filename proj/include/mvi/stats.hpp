#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mvi/errors.hpp"

// Small-sample summaries for campaign records: location, spread, a least
// squares line, and fixed-width histogram binning. All throw ConfigError on
// an empty sample so a hollow campaign fails loudly instead of reporting
// NaNs.

namespace mvi::stats {

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw ConfigError("mean of an empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Median by copy; even counts average the middle pair.
inline double median(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median of an empty sample");
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (n % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

inline double max_abs(const std::vector<double>& v) {
  if (v.empty()) throw ConfigError("max_abs of an empty sample");
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Ordinary least squares of y on x. Throws ConfigError when fewer than two
/// points or when x carries no variance (vertical data has no slope).
inline LinearFit least_squares(const std::vector<double>& x,
                               const std::vector<double>& y) {
  if (x.size() != y.size())
    throw ConfigError("least_squares: mismatched sample sizes");
  const std::size_t n = x.size();
  if (n < 2) throw ConfigError("least_squares needs at least two points");
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double dx = x[k] - mx, dy = y[k] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx <= 0.0)
    throw ConfigError("least_squares: x sample has zero variance");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (syy <= 0.0) {
    f.r2 = 1.0;  // constant y fitted exactly by the horizontal line
  } else {
    double ss_res = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double r = y[k] - (f.intercept + f.slope * x[k]);
      ss_res += r * r;
    }
    f.r2 = 1.0 - ss_res / syy;
  }
  return f;
}

/// Fixed-width bins anchored at integer multiples of the width, so edges are
/// stable across samples of the same scale. The top edge is inclusive.
struct Histogram {
  double lo = 0.0;
  double bin_width = 0.0;
  std::vector<std::size_t> counts;

  double edge(std::size_t k) const { return lo + static_cast<double>(k) * bin_width; }
};

inline Histogram histogram(const std::vector<double>& v, double bin_width) {
  if (v.empty()) throw ConfigError("histogram of an empty sample");
  if (!(bin_width > 0.0)) throw ConfigError("histogram bin width must be positive");
  const double vmin = *std::min_element(v.begin(), v.end());
  const double vmax = *std::max_element(v.begin(), v.end());
  Histogram h;
  h.bin_width = bin_width;
  h.lo = std::floor(vmin / bin_width) * bin_width;
  const std::size_t nbins = static_cast<std::size_t>(
      std::max(1.0, std::ceil((vmax - h.lo) / bin_width - 1e-12)));
  h.counts.assign(nbins, 0);
  for (double x : v) {
    std::size_t k = static_cast<std::size_t>((x - h.lo) / bin_width);
    if (k >= nbins) k = nbins - 1;  // vmax lands in the last bin
    ++h.counts[k];
  }
  return h;
}

}  // namespace mvi::stats
