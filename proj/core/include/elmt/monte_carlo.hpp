#ifndef ELMT_MONTE_CARLO_HPP
#define ELMT_MONTE_CARLO_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "elmt/calibration.hpp"
#include "elmt/constrained_el.hpp"
#include "elmt/design.hpp"

namespace elmt {

// Plug-in matrices for the Monte Carlo cutoff: the score covariance at the
// MELE, the inverse-Jacobian plug-in, and the per-hypothesis quadratic-form
// kernels.
struct PluginMatrices {
  Eigen::MatrixXd s_hat;                    // (1/n) sum g g' at theta_hat
  Eigen::VectorXd w_diag;                   // diag of the Jacobian inverse: -n / r_k
  std::vector<Eigen::MatrixXd> a_hats;      // per hypothesis, p x p
  Eigen::MatrixXd chol;                     // lower factor of s_hat
  std::vector<Eigen::MatrixXd> quad_factors;  // M_j with U'A_jU = |M_j U|^2
  std::vector<int> q;                       // constraint ranks
  bool degenerate = false;                  // s_hat is exactly zero
};

// Assemble the plug-in matrices. Requires every treatment observed at least
// once and a well-conditioned inner matrix per hypothesis; violations throw.
PluginMatrices plugin_matrices(const BlockDesign& design, const Eigen::VectorXd& theta_hat,
                               const std::vector<LinearHypothesis>& hyps);

// B x m row-major matrix of quadratic forms U'A_jU with U ~ N(0, s_hat),
// one multivariate draw per replicate. Deterministic in (seed, b_reps) and
// independent of the worker count.
std::vector<double> amc_statistics(const PluginMatrices& pm, int b_reps, std::uint64_t seed,
                                   int threads = 0);

// Full Monte Carlo calibration: v-th largest per replicate, sorted, cutoff at
// the ceil((1-alpha)B) order statistic.
CalibrationResult amc_calibrate(const PluginMatrices& pm, double alpha, int v, int b_reps,
                                std::uint64_t seed, int threads = 0);

// Reference sampler for the limiting joint law: blocks Z_j of standard
// normals with joint correlation `corr` (dimension sum q_j), returning the
// B x m matrix of squared block norms. Used as a test oracle.
std::vector<double> sample_mv_chisq(int m, const std::vector<int>& q, const Eigen::MatrixXd& corr,
                                    int b_reps, std::uint64_t seed, int threads = 0);

}  // namespace elmt

#endif
