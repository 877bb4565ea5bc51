#ifndef ELMT_CONSTRAINED_EL_HPP
#define ELMT_CONSTRAINED_EL_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "elmt/el_core.hpp"

namespace elmt {

// Linear constraint set {theta : jac * theta = rhs}; jac must have full row
// rank (checked against a rank-revealing SVD at 1e-10 of the top singular
// value).
struct LinearHypothesis {
  Eigen::MatrixXd jac;  // q x p
  Eigen::VectorXd rhs;  // q
  std::string label;
};

LinearHypothesis make_hypothesis(Eigen::MatrixXd jac, Eigen::VectorXd rhs, std::string label);

struct Contrast {
  Eigen::VectorXd coeffs;  // not all zero
  std::string label;
};

Contrast make_contrast(Eigen::VectorXd coeffs, std::string label);

enum class FitStatus { ok, infeasible, unidentified };

struct ConstrainedFit {
  Eigen::VectorXd theta_star;  // constrained minimizer; 0 on unobserved coords
  double statistic = 0.0;      // inf over the constraint set of the EL ratio
  FitStatus status = FitStatus::ok;
  int outer_iterations = 0;
  int inner_failures = 0;  // inner dual solves that hit their iteration cap
};

struct ConstrainedOptions {
  double tol_grad = 1e-8;   // projected gradient norm
  double tol_step = 1e-10;  // accepted step norm, relative to 1 + |theta|
  int max_outer = 200;
  int max_halvings = 30;
  double cond_limit = 1e12;  // Gauss-Newton metric condition cutoff
  DualOptions dual;
};

// Maximum EL estimate: per-treatment mean over the blocks containing it.
// Treatments with no observations get NaN markers.
Eigen::VectorXd mele(const BlockDesign& design);

// Minimize the EL ratio over {jac * theta = rhs} by Newton steps in an
// orthonormal null-space parametrization, started from the orthogonal
// projection of the MELE onto the constraint set. Returns an infeasible fit
// with a +inf statistic when no point of the constraint set admits EL
// weights, and unidentified when the hypothesis touches a treatment that was
// never observed.
ConstrainedFit minimize_el(const BlockDesign& design, const LinearHypothesis& hyp,
                           const ConstrainedOptions& options = {});

// Constrained statistic for a single contrast pinned at value r.
double profile_contrast(const BlockDesign& design, const Contrast& contrast, double r,
                        const ConstrainedOptions& options = {});

struct SciInterval {
  double lo = 0.0;
  double hi = 0.0;
  bool truncated_lo = false;  // hull boundary hit before the profile crossed
  bool truncated_hi = false;
};

// Invert the contrast profile at the given cutoff: {r : profile(r) <= cutoff}.
// Endpoints are located by doubling brackets plus bisection, accurate to
// 1e-6 * (1 + |r_hat|).
SciInterval sci(const BlockDesign& design, const Contrast& contrast, double cutoff,
                const ConstrainedOptions& options = {});

namespace detail {

struct ConstrainedScratch {
  DualScratch dual;
  std::vector<double> theta_full;
  Eigen::VectorXd lambda_full;
  std::vector<double> col_inv_s;
  Eigen::VectorXd th, th_trial, grad_obs, gxi, dxi;
  Eigen::MatrixXd s_obs, h_obs, h_xi;
  Eigen::LDLT<Eigen::MatrixXd> h_ldlt;
  bool h_usable = false;
};

// Constraint data reduced to the observed coordinates of one design.
struct ReducedConstraint {
  std::vector<int> obs;       // observed treatment ids, ascending
  Eigen::MatrixXd jac;        // q x |obs|
  Eigen::VectorXd rhs;
  Eigen::MatrixXd nullbasis;  // |obs| x (|obs| - q); empty when pinned
  bool unidentified = false;
};

ReducedConstraint reduce_constraint(const DesignMatrix& dm, const Eigen::MatrixXd& jac,
                                    const Eigen::VectorXd& rhs);

// Core minimizer on a lean design. mele_obs holds the per-treatment means of
// the observed coordinates in red.obs order.
ConstrainedFit minimize_reduced(const DesignMatrix& dm, const ReducedConstraint& red,
                                const Eigen::VectorXd& mele_obs, const ConstrainedOptions& options,
                                ConstrainedScratch& ws);

Eigen::VectorXd mele_of(const DesignMatrix& dm);

}  // namespace detail

}  // namespace elmt

#endif
