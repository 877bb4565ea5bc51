#ifndef ELMT_CALIBRATION_HPP
#define ELMT_CALIBRATION_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace elmt {

enum class Method { amc, nb };

std::string method_name(Method m);
Method parse_method(const std::string& name);

// Common cutoff calibration output. `draws` holds the B v-th-largest
// statistics sorted ascending; `adjusted_p` is filled by the orchestrator
// once the observed statistics are known.
struct CalibrationResult {
  double cutoff = 0.0;
  std::vector<double> draws;  // sorted ascending
  Eigen::VectorXd adjusted_p;
  double alpha = 0.05;
  int v = 1;
  int b_reps = 0;
  std::uint64_t seed = 0;
  Method method = Method::amc;
};

// Order statistic of rank ceil((1 - alpha) * B) over sorted draws
// (right-continuous empirical quantile).
double cutoff_from_sorted(const std::vector<double>& sorted_draws, double alpha);

// v-th largest entry of `values` (v = 1 is the maximum).
double vth_largest(const double* values, int count, int v);

// Extract the per-replicate v-th-largest column from a B x m row-major
// statistic matrix and return it sorted ascending.
std::vector<double> vth_draws_sorted(const std::vector<double>& statistics, int m, int v);

// Adjusted p-values p_j = (1/B) #{b : draw_b >= t_j}. With
// add_one_correction the count and total are both shifted by one.
Eigen::VectorXd adjusted_p(const Eigen::VectorXd& t_obs, const std::vector<double>& sorted_draws,
                           bool add_one_correction = false);

}  // namespace elmt

#endif
