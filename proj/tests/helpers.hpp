#ifndef ELMT_TESTS_HELPERS_HPP
#define ELMT_TESTS_HELPERS_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "elmt/design.hpp"
#include "elmt/rng.hpp"

namespace elmt::test {

inline BlockDesign design_from(const std::vector<Record>& records,
                               DuplicatePolicy policy = DuplicatePolicy::error) {
  return ingest(records, policy);
}

// Singleton-block design observing a single treatment with the given values.
inline BlockDesign scalar_design(const std::vector<double>& values) {
  std::vector<Record> records;
  for (std::size_t i = 0; i < values.size(); ++i)
    records.push_back({"b" + std::to_string(i + 1), "t1", values[i]});
  return ingest(records, DuplicatePolicy::error);
}

// Random small design: every treatment observed at least once, block sizes
// 1..p, integer-ish values.
inline BlockDesign random_design(rng::Stream& stream, int p, int n) {
  std::vector<std::vector<char>> member(n, std::vector<char>(p, 0));
  for (int i = 0; i < n; ++i) {
    member[i][i % p] = 1;
    for (int k = 0; k < p; ++k)
      if (stream.uniform01() < 0.5) member[i][k] = 1;
  }
  for (int k = 0; k < p; ++k) {
    bool covered = false;
    for (int i = 0; i < n; ++i) covered = covered || member[i][k];
    if (!covered) member[static_cast<int>(stream.below(n))][k] = 1;
  }
  std::vector<Record> records;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < p; ++k)
      if (member[i][k]) {
        const double value = std::floor(stream.uniform(-5.0, 5.0) * 2.0) / 2.0;
        records.push_back({"b" + std::to_string(i + 1), "t" + std::to_string(k + 1), value});
      }
  return ingest(records, DuplicatePolicy::error);
}

inline double chisq1_cdf(double x) { return x <= 0.0 ? 0.0 : std::erf(std::sqrt(0.5 * x)); }

inline double chisq1_quantile(double prob) {
  double lo = 0.0, hi = 100.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (chisq1_cdf(mid) < prob ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Kolmogorov distance between the empirical CDF of `sample` and `cdf`.
inline double ks_distance(std::vector<double> sample, double (*cdf)(double)) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max(d, std::abs((i + 1.0) / n - f));
    d = std::max(d, std::abs(i / n - f));
  }
  return d;
}

}  // namespace elmt::test

#endif
