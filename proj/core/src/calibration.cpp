#include "elmt/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace elmt {

std::string method_name(Method m) { return m == Method::amc ? "amc" : "nb"; }

Method parse_method(const std::string& name) {
  if (name == "amc") return Method::amc;
  if (name == "nb") return Method::nb;
  throw std::invalid_argument("unknown method '" + name + "' (expected amc or nb)");
}

double cutoff_from_sorted(const std::vector<double>& sorted_draws, double alpha) {
  if (sorted_draws.empty()) throw std::invalid_argument("cutoff_from_sorted: no draws");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("cutoff_from_sorted: alpha must be in (0, 1)");
  const auto b = static_cast<long long>(sorted_draws.size());
  long long rank = static_cast<long long>(std::ceil((1.0 - alpha) * static_cast<double>(b)));
  rank = std::max(1LL, std::min(rank, b));
  return sorted_draws[static_cast<std::size_t>(rank - 1)];
}

double vth_largest(const double* values, int count, int v) {
  if (v < 1 || v > count) throw std::invalid_argument("vth_largest: v out of range");
  // Selection on a small stack copy; m is the number of hypotheses.
  constexpr int kStackLimit = 64;
  if (count <= kStackLimit) {
    double buf[kStackLimit];
    std::copy(values, values + count, buf);
    std::nth_element(buf, buf + (count - v), buf + count);
    return buf[count - v];
  }
  std::vector<double> buf(values, values + count);
  std::nth_element(buf.begin(), buf.begin() + (count - v), buf.end());
  return buf[count - v];
}

std::vector<double> vth_draws_sorted(const std::vector<double>& statistics, int m, int v) {
  if (m <= 0 || statistics.size() % static_cast<std::size_t>(m) != 0)
    throw std::invalid_argument("vth_draws_sorted: bad matrix shape");
  const std::size_t b = statistics.size() / static_cast<std::size_t>(m);
  std::vector<double> draws(b);
  for (std::size_t i = 0; i < b; ++i)
    draws[i] = vth_largest(statistics.data() + i * static_cast<std::size_t>(m), m, v);
  std::sort(draws.begin(), draws.end());
  return draws;
}

Eigen::VectorXd adjusted_p(const Eigen::VectorXd& t_obs, const std::vector<double>& sorted_draws,
                           bool add_one_correction) {
  if (sorted_draws.empty()) throw std::invalid_argument("adjusted_p: no draws");
  const double b = static_cast<double>(sorted_draws.size());
  Eigen::VectorXd p(t_obs.size());
  for (int j = 0; j < t_obs.size(); ++j) {
    const auto it = std::lower_bound(sorted_draws.begin(), sorted_draws.end(), t_obs[j]);
    const double count = static_cast<double>(sorted_draws.end() - it);
    p[j] = add_one_correction ? (count + 1.0) / (b + 1.0) : count / b;
  }
  return p;
}

}  // namespace elmt
