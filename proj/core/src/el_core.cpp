#include "elmt/el_core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "elmt/errors.hpp"

namespace elmt {

namespace {

// Scores within rounding distance of zero are snapped to exact zero, so data
// that are constant within a treatment produce exactly degenerate tables.
inline double snap_score(double value, double theta) {
  const double g = value - theta;
  if (std::abs(g) <= 1e-14 * (1.0 + std::abs(value) + std::abs(theta))) return 0.0;
  return g;
}

// ---------------------------------------------------------------------------
// Dense two-phase simplex (maximize c'x, Ax = b, x >= 0), Bland's rule.
// Only used as the hull certificate; problem sizes are (p+1) x (n+2).
// ---------------------------------------------------------------------------

enum class LpStatus { optimal, infeasible, stalled };

struct LpOutcome {
  LpStatus status = LpStatus::stalled;
  double objective = 0.0;
};

class SimplexTableau {
 public:
  SimplexTableau(const Eigen::MatrixXd& a, const Eigen::VectorXd& b)
      : m_(static_cast<int>(a.rows())), nv_(static_cast<int>(a.cols())) {
    tab_.resize(m_, nv_ + m_ + 1);
    tab_.leftCols(nv_) = a;
    tab_.block(0, nv_, m_, m_) = Eigen::MatrixXd::Identity(m_, m_);
    tab_.col(nv_ + m_) = b;
    for (int i = 0; i < m_; ++i) {
      if (tab_(i, nv_ + m_) < 0.0) tab_.row(i) = -tab_.row(i);
    }
    basis_.resize(m_);
    for (int i = 0; i < m_; ++i) basis_[i] = nv_ + i;
  }

  LpOutcome run(const Eigen::VectorXd& objective) {
    // Phase 1: drive the artificials out.
    Eigen::VectorXd phase1 = Eigen::VectorXd::Zero(nv_ + m_);
    phase1.tail(m_).setConstant(-1.0);
    LpOutcome r1 = optimize(phase1, /*allow_artificials=*/true);
    if (r1.status != LpStatus::optimal) return {LpStatus::stalled, 0.0};
    if (r1.objective < -1e-8) return {LpStatus::infeasible, 0.0};

    Eigen::VectorXd phase2 = Eigen::VectorXd::Zero(nv_ + m_);
    phase2.head(nv_) = objective;
    return optimize(phase2, /*allow_artificials=*/false);
  }

 private:
  LpOutcome optimize(const Eigen::VectorXd& cost, bool allow_artificials) {
    const int total = nv_ + m_;
    Eigen::VectorXd reduced = cost;
    double objective = 0.0;
    for (int i = 0; i < m_; ++i) {
      const double cb = cost[basis_[i]];
      if (cb != 0.0) {
        reduced -= cb * tab_.row(i).head(total).transpose();
        objective += cb * tab_(i, total);
      }
    }

    const int max_pivots = 200 * (total + 1);
    for (int pivot = 0; pivot < max_pivots; ++pivot) {
      int enter = -1;
      for (int j = 0; j < total; ++j) {
        if (!allow_artificials && j >= nv_) break;
        if (reduced[j] > 1e-9) {
          enter = j;
          break;  // Bland: smallest improving index
        }
      }
      if (enter < 0) return {LpStatus::optimal, objective};

      int leave = -1;
      double best_ratio = 0.0;
      for (int i = 0; i < m_; ++i) {
        const double a = tab_(i, enter);
        if (a > 1e-11) {
          const double ratio = tab_(i, total) / a;
          if (leave < 0 || ratio < best_ratio - 1e-12 ||
              (ratio < best_ratio + 1e-12 && basis_[i] < basis_[leave])) {
            leave = i;
            best_ratio = ratio;
          }
        }
      }
      if (leave < 0) return {LpStatus::stalled, objective};  // unbounded

      const double pivot_value = tab_(leave, enter);
      tab_.row(leave) /= pivot_value;
      for (int i = 0; i < m_; ++i) {
        if (i == leave) continue;
        const double f = tab_(i, enter);
        if (f != 0.0) tab_.row(i) -= f * tab_.row(leave);
      }
      const double rf = reduced[enter];
      objective += rf * tab_(leave, total);
      reduced -= rf * tab_.row(leave).head(total).transpose();
      basis_[leave] = enter;
    }
    return {LpStatus::stalled, objective};
  }

  int m_;
  int nv_;
  Eigen::MatrixXd tab_;
  std::vector<int> basis_;
};

// Max epsilon such that weights w >= epsilon, sum w = 1, sum w g_i = 0.
// Zero is interior to the hull exactly when the optimum is positive.
bool lp_zero_interior(const Eigen::MatrixXd& points) {
  const int n = static_cast<int>(points.rows());
  const int d = static_cast<int>(points.cols());

  Eigen::VectorXd col_scale(d);
  for (int k = 0; k < d; ++k) {
    const double s = points.col(k).cwiseAbs().maxCoeff();
    col_scale[k] = s > 0.0 ? s : 1.0;
  }

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d + 1, n + 2);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d + 1);
  for (int k = 0; k < d; ++k) {
    for (int i = 0; i < n; ++i) a(k, i) = points(i, k) / col_scale[k];
    const double colsum = a.row(k).head(n).sum();
    a(k, n) = colsum;
    a(k, n + 1) = -colsum;
  }
  a.row(d).head(n).setOnes();
  a(d, n) = static_cast<double>(n);
  a(d, n + 1) = -static_cast<double>(n);
  b[d] = 1.0;

  Eigen::VectorXd c = Eigen::VectorXd::Zero(n + 2);
  c[n] = 1.0;
  c[n + 1] = -1.0;

  SimplexTableau lp(a, b);
  const LpOutcome out = lp.run(c);
  if (out.status == LpStatus::infeasible) return false;
  if (out.status == LpStatus::stalled)
    throw NumericalError("hull certificate: simplex did not terminate");
  return out.objective > 1e-12;
}

constexpr double kLogStarOffset = -1.5;

}  // namespace

// ---------------------------------------------------------------------------
// ScoreTable
// ---------------------------------------------------------------------------

double ScoreTable::dense(int i, int k) const {
  for (int c = cells.row_ptr[i]; c < cells.row_ptr[i + 1]; ++c)
    if (cells.col[c] == k) return cells.value[c];
  return 0.0;
}

Eigen::VectorXd ScoreTable::column_means() const {
  Eigen::VectorXd means = Eigen::VectorXd::Zero(cells.n_treatments);
  for (int c = 0; c < cells.cells(); ++c) means[cells.col[c]] += cells.value[c];
  return means / static_cast<double>(cells.n_blocks);
}

Eigen::MatrixXd ScoreTable::gram() const {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(cells.n_treatments, cells.n_treatments);
  for (int i = 0; i < cells.n_blocks; ++i)
    for (int a = cells.row_ptr[i]; a < cells.row_ptr[i + 1]; ++a)
      for (int b = cells.row_ptr[i]; b < cells.row_ptr[i + 1]; ++b)
        s(cells.col[a], cells.col[b]) += cells.value[a] * cells.value[b];
  return s / static_cast<double>(cells.n_blocks);
}

ScoreTable score_table(const BlockDesign& design, const Eigen::VectorXd& theta) {
  if (theta.size() != design.n_treatments())
    throw std::invalid_argument("score_table: theta dimension mismatch");
  for (int k = 0; k < theta.size(); ++k)
    if (!std::isfinite(theta[k])) throw std::invalid_argument("score_table: theta must be finite");

  ScoreTable table;
  table.cells = design.matrix;
  std::vector<bool> nonzero(design.n_treatments(), false);
  for (int c = 0; c < table.cells.cells(); ++c) {
    const int k = table.cells.col[c];
    table.cells.value[c] = snap_score(design.matrix.value[c], theta[k]);
    if (table.cells.value[c] != 0.0) nonzero[k] = true;
  }
  for (int k = 0; k < design.n_treatments(); ++k)
    if (!nonzero[k]) table.zero_columns.push_back(k);
  return table;
}

ScoreTable score_table_from_dense(const Eigen::MatrixXd& dense) {
  ScoreTable table;
  DesignMatrix& m = table.cells;
  m.n_blocks = static_cast<int>(dense.rows());
  m.n_treatments = static_cast<int>(dense.cols());
  m.replication.assign(m.n_treatments, 0);
  m.row_ptr.push_back(0);
  for (int i = 0; i < m.n_blocks; ++i) {
    for (int k = 0; k < m.n_treatments; ++k) {
      m.col.push_back(k);
      m.value.push_back(dense(i, k));
      m.replication[k] += 1;
    }
    m.row_ptr.push_back(static_cast<int>(m.col.size()));
  }
  for (int k = 0; k < m.n_treatments; ++k)
    if (dense.col(k).cwiseAbs().maxCoeff() == 0.0) table.zero_columns.push_back(k);
  return table;
}

// ---------------------------------------------------------------------------
// Dual solver
// ---------------------------------------------------------------------------

namespace detail {

void prepare_scores(const DesignMatrix& dm, const double* theta, DualScratch& ws) {
  const int p = dm.n_treatments;
  ws.score.resize(dm.col.size());

  ws.col_min.assign(p, 0.0);
  ws.col_max.assign(p, 0.0);
  ws.col_nonzero.assign(p, 0);
  for (std::size_t c = 0; c < dm.col.size(); ++c) {
    const int k = dm.col[c];
    const double g = theta ? snap_score(dm.value[c], theta[k]) : dm.value[c];
    ws.score[c] = g;
    if (g != 0.0) {
      if (!ws.col_nonzero[k]) {
        ws.col_nonzero[k] = 1;
        ws.col_min[k] = ws.col_max[k] = g;
      } else {
        ws.col_min[k] = std::min(ws.col_min[k], g);
        ws.col_max[k] = std::max(ws.col_max[k], g);
      }
    }
  }

  ws.active_tmp.clear();
  for (int k = 0; k < p; ++k)
    if (ws.col_nonzero[k]) ws.active_tmp.push_back(k);
  if (ws.active_tmp != ws.active) {
    ws.active.swap(ws.active_tmp);
    ws.warm = false;
  }
  ws.reduced.assign(p, -1);
  for (std::size_t j = 0; j < ws.active.size(); ++j) ws.reduced[ws.active[j]] = static_cast<int>(j);

  ws.axis_infeasible = false;
  for (int k : ws.active) {
    // A column whose scores never change sign separates 0 from the hull.
    if (ws.col_min[k] >= 0.0 || ws.col_max[k] <= 0.0) {
      ws.axis_infeasible = true;
      break;
    }
  }

  ws.scale = 0.0;
  ws.max_row_norm = 0.0;
  for (int i = 0; i < dm.n_blocks; ++i) {
    double sq = 0.0;
    for (int c = dm.row_ptr[i]; c < dm.row_ptr[i + 1]; ++c) sq += ws.score[c] * ws.score[c];
    ws.max_row_norm = std::max(ws.max_row_norm, sq);
  }
  ws.max_row_norm = std::sqrt(ws.max_row_norm);
  ws.scale = ws.max_row_norm;
}

bool hull_contains_zero_prepared(const DesignMatrix& dm, const DualScratch& ws) {
  if (ws.axis_infeasible) return false;
  const int d = static_cast<int>(ws.active.size());
  if (d == 0) return true;   // all scores are exactly zero
  if (d == 1) return true;   // axis check already saw both signs
  Eigen::MatrixXd points = Eigen::MatrixXd::Zero(dm.n_blocks, d);
  for (int i = 0; i < dm.n_blocks; ++i)
    for (int c = dm.row_ptr[i]; c < dm.row_ptr[i + 1]; ++c) {
      const int j = ws.reduced[dm.col[c]];
      if (j >= 0) points(i, j) = ws.score[c];
    }
  return lp_zero_interior(points);
}

namespace {

// Objective value -sum log*(1 + lambda' g_i); fills s_out with the arguments.
double dual_objective(const DesignMatrix& dm, const DualScratch& ws,
                      const Eigen::VectorXd& lambda, double eps, std::vector<double>& s_out) {
  const double log_eps = std::log(eps);
  const double inv_eps = 1.0 / eps;
  double f = 0.0;
  for (int i = 0; i < dm.n_blocks; ++i) {
    double s = 1.0;
    for (int c = dm.row_ptr[i]; c < dm.row_ptr[i + 1]; ++c) {
      const int j = ws.reduced[dm.col[c]];
      if (j >= 0) s += lambda[j] * ws.score[c];
    }
    s_out[i] = s;
    if (s >= eps) {
      f -= std::log(s);
    } else {
      f -= log_eps + kLogStarOffset + 2.0 * s * inv_eps - 0.5 * s * s * inv_eps * inv_eps;
    }
  }
  return f;
}

}  // namespace

ElStatus solve_dual_prepared(const DesignMatrix& dm, const DualOptions& options,
                             DualScratch& ws, double* log_el, double* lambda_full,
                             int* iterations_out) {
  const int n = dm.n_blocks;
  const int d = static_cast<int>(ws.active.size());
  if (iterations_out) *iterations_out = 0;
  if (lambda_full) std::fill(lambda_full, lambda_full + dm.n_treatments, 0.0);

  if (d == 0) {
    ws.s.assign(static_cast<std::size_t>(n), 1.0);
    *log_el = 0.0;
    return ElStatus::converged;
  }
  if (ws.axis_infeasible) {
    *log_el = kInfeasibleStatistic;
    return ElStatus::infeasible_hull;
  }

  const double eps = 1.0 / static_cast<double>(n);
  const double inv_eps = 1.0 / eps;
  const double gtol = options.tol_grad * (1.0 + ws.scale);

  if (!ws.warm || ws.lambda.size() != d) ws.lambda = Eigen::VectorXd::Zero(d);
  ws.grad.resize(d);
  ws.hess.resize(d, d);
  ws.s.resize(n);
  ws.s_trial.resize(n);

  double f = dual_objective(dm, ws, ws.lambda, eps, ws.s);
  bool lp_checked = false;
  bool cert = false;
  double min_s = 0.0;
  int forced_steps = 0;

  int iter = 0;
  for (; iter < options.max_iter; ++iter) {
    // Gradient and Gauss form of the Hessian from the current s.
    ws.grad.setZero();
    ws.hess.setZero();
    min_s = ws.s[0];
    double inv_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double s = ws.s[i];
      min_s = std::min(min_s, s);
      double w1, w2;
      if (s >= eps) {
        w1 = 1.0 / s;
        w2 = w1 * w1;
      } else {
        w1 = 2.0 * inv_eps - s * inv_eps * inv_eps;
        w2 = inv_eps * inv_eps;
      }
      inv_sum += w1;
      for (int a = dm.row_ptr[i]; a < dm.row_ptr[i + 1]; ++a) {
        const int ja = ws.reduced[dm.col[a]];
        if (ja < 0) continue;
        const double ga = ws.score[a];
        ws.grad[ja] -= w1 * ga;
        for (int b = a; b < dm.row_ptr[i + 1]; ++b) {
          const int jb = ws.reduced[dm.col[b]];
          if (jb < 0) continue;
          const double v = w2 * ga * ws.score[b];
          ws.hess(std::min(ja, jb), std::max(ja, jb)) += v;
        }
      }
    }
    const double gmean = ws.grad.norm() / static_cast<double>(n);
    // The primal weight sum equals one at the true multiplier; a vanishing
    // gradient with a collapsed weight sum is the signature of the iterate
    // escaping to infinity along a separating direction.
    const double wsum = inv_sum / static_cast<double>(n);
    const bool in_basin = gmean <= 1e-4 * (1.0 + ws.scale) && min_s >= (1.0 - 1e-9) * eps;
    cert = gmean <= gtol && min_s >= (1.0 - 1e-9) * eps && std::abs(wsum - 1.0) <= 1e-6;
    if (cert) break;
    if (wsum < 0.5 && iter > 3 && !lp_checked) {
      lp_checked = true;
      if (!hull_contains_zero_prepared(dm, ws)) {
        *log_el = kInfeasibleStatistic;
        if (iterations_out) *iterations_out = iter;
        ws.warm = false;
        return ElStatus::infeasible_hull;
      }
    }

    ws.hess.triangularView<Eigen::StrictlyLower>() =
        ws.hess.triangularView<Eigen::StrictlyUpper>().transpose();
    double ridge = 0.0;
    const double trace = ws.hess.trace();
    for (int attempt = 0; attempt < 8; ++attempt) {
      Eigen::MatrixXd h = ws.hess;
      if (ridge > 0.0) h.diagonal().array() += ridge;
      ws.llt.compute(h);
      if (ws.llt.info() == Eigen::Success) break;
      ridge = ridge == 0.0 ? 1e-12 * (trace + 1e-300) : ridge * 100.0;
    }
    if (ws.llt.info() != Eigen::Success) break;
    ws.step = ws.llt.solve(-ws.grad);

    double directional = ws.grad.dot(ws.step);
    if (!(directional < 0.0)) {
      ws.step = -ws.grad / (1.0 + ws.scale * ws.scale);
      directional = ws.grad.dot(ws.step);
      if (!(directional < 0.0)) break;  // gradient numerically zero
    }

    double t = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < options.max_halvings; ++halving) {
      ws.lambda_trial = ws.lambda + t * ws.step;
      const double ft = dual_objective(dm, ws, ws.lambda_trial, eps, ws.s_trial);
      // Strict decrease: a trial that only ties f is parked at rounding
      // level and must fall through to the pure Newton branch below.
      if (ft < f + 1e-4 * t * directional) {
        ws.lambda.swap(ws.lambda_trial);
        ws.s.swap(ws.s_trial);
        f = ft;
        accepted = true;
        break;
      }
      // Flat at rounding resolution: halving cannot help.
      if (std::abs(ft - f) <= 1e-15 * (1.0 + std::abs(f))) break;
      t *= 0.5;
    }
    if (!accepted) {
      // The objective is flat to rounding near the optimum while the
      // analytic gradient is still resolvable; inside the Newton basin the
      // full step is reliable without a decrease test.
      if (in_basin && forced_steps < 5) {
        ++forced_steps;
        ws.lambda_trial = ws.lambda + ws.step;
        f = dual_objective(dm, ws, ws.lambda_trial, eps, ws.s_trial);
        ws.lambda.swap(ws.lambda_trial);
        ws.s.swap(ws.s_trial);
        continue;
      }
      break;  // no further progress; certificate decides below
    }

    if (ws.lambda.norm() * ws.scale > options.divergence_bound && !lp_checked) {
      lp_checked = true;
      if (!hull_contains_zero_prepared(dm, ws)) {
        *log_el = kInfeasibleStatistic;
        if (iterations_out) *iterations_out = iter + 1;
        ws.warm = false;
        return ElStatus::infeasible_hull;
      }
    }
  }

  if (iterations_out) *iterations_out = iter;

  // Re-evaluate the certificate at the final iterate.
  {
    ws.grad.setZero();
    min_s = ws.s[0];
    double inv_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double s = ws.s[i];
      min_s = std::min(min_s, s);
      const double w1 = s >= eps ? 1.0 / s : 2.0 * inv_eps - s * inv_eps * inv_eps;
      inv_sum += w1;
      for (int a = dm.row_ptr[i]; a < dm.row_ptr[i + 1]; ++a) {
        const int ja = ws.reduced[dm.col[a]];
        if (ja >= 0) ws.grad[ja] -= w1 * ws.score[a];
      }
    }
    const double gmean = ws.grad.norm() / static_cast<double>(n);
    const double wsum = inv_sum / static_cast<double>(n);
    cert = gmean <= gtol && min_s >= (1.0 - 1e-9) * eps && std::abs(wsum - 1.0) <= 1e-6;
  }

  if (cert) {
    double l = 0.0;
    for (int i = 0; i < n; ++i) l += std::log(ws.s[i]);
    *log_el = std::max(2.0 * l, 0.0);
    if (lambda_full)
      for (int j = 0; j < d; ++j) lambda_full[ws.active[j]] = ws.lambda[j];
    ws.warm = true;
    return ElStatus::converged;
  }

  ws.warm = false;
  if (!lp_checked && !hull_contains_zero_prepared(dm, ws)) {
    *log_el = kInfeasibleStatistic;
    return ElStatus::infeasible_hull;
  }
  *log_el = std::max(-2.0 * f, 0.0);
  return ElStatus::max_iter;
}

}  // namespace detail

ELSolution solve_dual(const ScoreTable& scores, const DualOptions& options) {
  detail::DualScratch ws;
  detail::prepare_scores(scores.cells, nullptr, ws);
  ELSolution out;
  out.lambda = Eigen::VectorXd::Zero(scores.cells.n_treatments);
  int iterations = 0;
  out.status = detail::solve_dual_prepared(scores.cells, options, ws, &out.log_el,
                                           out.lambda.data(), &iterations);
  out.iterations = iterations;
  out.max_row_norm = ws.max_row_norm;
  if (out.status == ElStatus::converged) {
    const int n = scores.cells.n_blocks;
    out.weights.resize(n);
    for (int i = 0; i < n; ++i) out.weights[i] = 1.0 / (static_cast<double>(n) * ws.s[i]);
    // The exact dual solution sums to one; divide out the residual so the
    // reported weights are primal-feasible to machine precision.
    out.weights /= out.weights.sum();
  }
  return out;
}

ELSolution el_log_ratio(const BlockDesign& design, const Eigen::VectorXd& theta,
                        const DualOptions& options) {
  return solve_dual(score_table(design, theta), options);
}

bool hull_contains_zero(const ScoreTable& scores) {
  detail::DualScratch ws;
  detail::prepare_scores(scores.cells, nullptr, ws);
  return detail::hull_contains_zero_prepared(scores.cells, ws);
}

}  // namespace elmt
