#ifndef ELMT_EL_CORE_HPP
#define ELMT_EL_CORE_HPP

#include <Eigen/Dense>
#include <limits>
#include <vector>

#include "elmt/design.hpp"

namespace elmt {

// Estimating-function values g(X_i, theta) = (X_i - theta) masked to the
// observed cells, stored sparsely; entries for unobserved cells are exactly
// zero by construction. Scores within rounding distance of zero are snapped
// to exact zero so degenerate data behave exactly.
struct ScoreTable {
  DesignMatrix cells;             // value holds the score of each observed cell
  std::vector<int> zero_columns;  // treatments whose score column is all zero

  double dense(int i, int k) const;       // 0 where unobserved
  Eigen::VectorXd column_means() const;   // (1/n) sum_i g_i
  Eigen::MatrixXd gram() const;           // (1/n) sum_i g_i g_i^T
};

enum class ElStatus { converged, infeasible_hull, max_iter };

struct ELSolution {
  Eigen::VectorXd lambda;   // dual multiplier; zero on excluded columns
  double log_el = 0.0;      // -2 log EL ratio; +inf when hull-infeasible
  Eigen::VectorXd weights;  // primal weights (only meaningful when converged)
  ElStatus status = ElStatus::converged;
  int iterations = 0;
  double max_row_norm = 0.0;  // diagnostic: max_i |g_i|
};

struct DualOptions {
  double tol_grad = 1e-10;        // relative to the score scale
  int max_iter = 100;
  int max_halvings = 30;
  double divergence_bound = 1e10; // on |lambda| * score scale
};

ScoreTable score_table(const BlockDesign& design, const Eigen::VectorXd& theta);

// Build a ScoreTable that treats every entry of `dense` as an observed cell.
// Intended for tests and diagnostics that specify score rows directly.
ScoreTable score_table_from_dense(const Eigen::MatrixXd& dense);

// Solve the dual problem: minimize -sum_i log*(1 + lambda' g_i) where log*
// extends log quadratically below 1/n. Convergence requires the gradient
// norm within tolerance and all 1 + lambda' g_i >= 1/n, so the reported
// statistic is the untruncated one and the primal weights are valid.
ELSolution solve_dual(const ScoreTable& scores, const DualOptions& options = {});

// -2 log empirical likelihood ratio at theta: score_table then solve_dual.
ELSolution el_log_ratio(const BlockDesign& design, const Eigen::VectorXd& theta,
                        const DualOptions& options = {});

// True iff 0 is interior to the convex hull of the score rows, restricted to
// the coordinates whose column is not identically zero. Decided by a small
// linear program on the primal polytope; this certificate backs the
// infeasible_hull status of solve_dual.
bool hull_contains_zero(const ScoreTable& scores);

inline constexpr double kInfeasibleStatistic = std::numeric_limits<double>::infinity();

namespace detail {

// Reusable buffers for the dual solve; one per thread in hot loops.
struct DualScratch {
  std::vector<double> score;    // snapped scores, aligned with dm cell order
  std::vector<double> s;        // 1 + lambda' g_i per row
  std::vector<double> s_trial;
  std::vector<int> reduced;     // treatment -> reduced index or -1
  std::vector<int> active;      // reduced index -> treatment
  Eigen::VectorXd lambda, grad, step, lambda_trial;
  Eigen::MatrixXd hess;
  Eigen::LLT<Eigen::MatrixXd> llt;
  std::vector<double> col_min, col_max;  // per-column score range
  std::vector<char> col_nonzero;
  std::vector<int> active_tmp;
  bool warm = false;            // reuse lambda from the previous call
  bool axis_infeasible = false; // some active column never changes sign
  double scale = 0.0;           // max row norm of the prepared scores
  double max_row_norm = 0.0;
};

// Fill scratch.score with snapped scores of dm at theta and rebuild the
// active-column structures. Resets the warm flag when the active set changes.
void prepare_scores(const DesignMatrix& dm, const double* theta, DualScratch& ws);

// Dual solve over the scores currently prepared in ws. On converged, log_el
// gets the statistic; on infeasible_hull it is +inf. lambda_full, when not
// null, receives the multiplier embedded in R^p.
ElStatus solve_dual_prepared(const DesignMatrix& dm, const DualOptions& options,
                             DualScratch& ws, double* log_el, double* lambda_full,
                             int* iterations_out = nullptr);

// True iff 0 is interior to the hull of the prepared score rows.
bool hull_contains_zero_prepared(const DesignMatrix& dm, const DualScratch& ws);

}  // namespace detail

}  // namespace elmt

#endif
