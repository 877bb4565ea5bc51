#include "elmt/constrained_el.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "elmt/errors.hpp"

namespace elmt {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

}  // namespace

LinearHypothesis make_hypothesis(Eigen::MatrixXd jac, Eigen::VectorXd rhs, std::string label) {
  if (jac.rows() == 0 || jac.cols() == 0)
    throw std::invalid_argument("make_hypothesis: empty constraint matrix");
  if (jac.rows() != rhs.size())
    throw std::invalid_argument("make_hypothesis: rhs dimension mismatch");
  if (jac.rows() > jac.cols())
    throw std::invalid_argument("make_hypothesis: more constraints than parameters");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[sv.size() - 1] <= 1e-10 * sv[0])
    throw std::invalid_argument("make_hypothesis: constraint matrix is rank deficient");
  return LinearHypothesis{std::move(jac), std::move(rhs), std::move(label)};
}

Contrast make_contrast(Eigen::VectorXd coeffs, std::string label) {
  if (coeffs.size() == 0 || coeffs.cwiseAbs().maxCoeff() == 0.0)
    throw std::invalid_argument("make_contrast: coefficients must not be all zero");
  return Contrast{std::move(coeffs), std::move(label)};
}

namespace detail {

Eigen::VectorXd mele_of(const DesignMatrix& dm) {
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(dm.n_treatments);
  for (int c = 0; c < dm.cells(); ++c) sums[dm.col[c]] += dm.value[c];
  Eigen::VectorXd out(dm.n_treatments);
  for (int k = 0; k < dm.n_treatments; ++k)
    out[k] = dm.replication[k] > 0 ? sums[k] / dm.replication[k] : kNan;
  return out;
}

ReducedConstraint reduce_constraint(const DesignMatrix& dm, const Eigen::MatrixXd& jac,
                                    const Eigen::VectorXd& rhs) {
  ReducedConstraint red;
  red.rhs = rhs;
  for (int k = 0; k < dm.n_treatments; ++k) {
    const bool referenced = jac.col(k).cwiseAbs().maxCoeff() > 0.0;
    if (dm.replication[k] > 0) {
      red.obs.push_back(k);
    } else if (referenced) {
      red.unidentified = true;
      return red;
    }
  }
  const int po = static_cast<int>(red.obs.size());
  const int q = static_cast<int>(jac.rows());
  red.jac.resize(q, po);
  for (int j = 0; j < po; ++j) red.jac.col(j) = jac.col(red.obs[j]);

  if (q == po) return red;  // fully pinned; nullbasis stays empty

  if (q == 1) {
    // Householder reflection sending the constraint row to a multiple of e1;
    // the remaining columns span its orthogonal complement.
    Eigen::VectorXd u = red.jac.row(0).transpose();
    const double norm = u.norm();
    Eigen::VectorXd v = u;
    v[0] += (u[0] >= 0.0 ? norm : -norm);
    const double vsq = v.squaredNorm();
    Eigen::MatrixXd house = Eigen::MatrixXd::Identity(po, po);
    if (vsq > 0.0) house -= (2.0 / vsq) * (v * v.transpose());
    red.nullbasis = house.rightCols(po - 1);
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(red.jac, Eigen::ComputeFullV);
    red.nullbasis = svd.matrixV().rightCols(po - q);
  }
  return red;
}

namespace {

// Evaluate the EL ratio at the observed-coordinate point th; +inf when the
// dual solve does not converge. Counts iteration-cap failures.
double eval_el(const DesignMatrix& dm, const ReducedConstraint& red, const Eigen::VectorXd& th,
               const ConstrainedOptions& options, ConstrainedScratch& ws, int* failures) {
  ws.theta_full.assign(dm.n_treatments, 0.0);
  for (std::size_t j = 0; j < red.obs.size(); ++j) ws.theta_full[red.obs[j]] = th[j];
  prepare_scores(dm, ws.theta_full.data(), ws.dual);
  double value = 0.0;
  if (ws.lambda_full.size() != dm.n_treatments) ws.lambda_full.resize(dm.n_treatments);
  const ElStatus status =
      solve_dual_prepared(dm, options.dual, ws.dual, &value, ws.lambda_full.data());
  if (status == ElStatus::converged) return value;
  if (status == ElStatus::max_iter && failures) *failures += 1;
  return kInfeasibleStatistic;
}

// Orthogonal projection of point onto {jac th = rhs}.
Eigen::VectorXd project_affine(const Eigen::MatrixXd& jac, const Eigen::VectorXd& rhs,
                               const Eigen::VectorXd& point) {
  const Eigen::VectorXd gap = jac * point - rhs;
  const Eigen::MatrixXd gram = jac * jac.transpose();
  return point - jac.transpose() * gram.ldlt().solve(gap);
}

// Weighted projection using the Gauss-Newton metric diag(r) S^-1 diag(r);
// used as a fallback start when the orthogonal projection is hull-infeasible.
Eigen::VectorXd project_weighted(const DesignMatrix& dm, const ReducedConstraint& red,
                                 const Eigen::VectorXd& mele_obs, ConstrainedScratch& ws) {
  const int po = static_cast<int>(red.obs.size());
  // Scores at the MELE are already prepared by the caller's failed start
  // evaluation only for the projected point, so rebuild at the MELE here.
  ws.theta_full.assign(dm.n_treatments, 0.0);
  for (int j = 0; j < po; ++j) ws.theta_full[red.obs[j]] = mele_obs[j];
  prepare_scores(dm, ws.theta_full.data(), ws.dual);

  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(po, po);
  std::vector<int> slot(dm.n_treatments, -1);
  for (int j = 0; j < po; ++j) slot[red.obs[j]] = j;
  for (int i = 0; i < dm.n_blocks; ++i)
    for (int a = dm.row_ptr[i]; a < dm.row_ptr[i + 1]; ++a)
      for (int b = a; b < dm.row_ptr[i + 1]; ++b) {
        const int ja = slot[dm.col[a]];
        const int jb = slot[dm.col[b]];
        const double v = ws.dual.score[a] * ws.dual.score[b];
        s(ja, jb) += v;
        if (ja != jb) s(jb, ja) += v;
      }
  s /= static_cast<double>(dm.n_blocks);
  s.diagonal().array() += 1e-10 * (s.trace() + 1.0);

  // Q^-1 = diag(1/r) S diag(1/r)
  Eigen::VectorXd inv_r(po);
  for (int j = 0; j < po; ++j) inv_r[j] = 1.0 / dm.replication[red.obs[j]];
  const Eigen::MatrixXd q_inv = inv_r.asDiagonal() * s * inv_r.asDiagonal();
  const Eigen::VectorXd gap = red.jac * mele_obs - red.rhs;
  const Eigen::MatrixXd inner = red.jac * q_inv * red.jac.transpose();
  return mele_obs - q_inv * red.jac.transpose() * inner.ldlt().solve(gap);
}

}  // namespace

ConstrainedFit minimize_reduced(const DesignMatrix& dm, const ReducedConstraint& red,
                                const Eigen::VectorXd& mele_obs, const ConstrainedOptions& options,
                                ConstrainedScratch& ws) {
  ConstrainedFit fit;
  if (red.unidentified) {
    fit.status = FitStatus::unidentified;
    fit.statistic = kInfeasibleStatistic;
    return fit;
  }
  const int po = static_cast<int>(red.obs.size());
  const int q = static_cast<int>(red.jac.rows());
  const int free_dims = po - q;
  ws.dual.warm = false;

  auto assemble = [&](const Eigen::VectorXd& th, double statistic, FitStatus status) {
    fit.theta_star = Eigen::VectorXd::Zero(dm.n_treatments);
    for (int j = 0; j < po; ++j) fit.theta_star[red.obs[j]] = th[j];
    fit.statistic = statistic;
    fit.status = status;
    return fit;
  };

  if (free_dims == 0) {
    const Eigen::VectorXd th = red.jac.colPivHouseholderQr().solve(red.rhs);
    const double value = eval_el(dm, red, th, options, ws, &fit.inner_failures);
    return assemble(th, value,
                    std::isfinite(value) ? FitStatus::ok : FitStatus::infeasible);
  }

  const double n = static_cast<double>(dm.n_blocks);
  std::vector<int> slot(dm.n_treatments, -1);
  for (int j = 0; j < po; ++j) slot[red.obs[j]] = j;

  // Small, weakly connected designs can have multimodal profiles; cheap grid
  // probes along the free directions guard against starting in (or descending
  // into) a secondary basin. Larger designs behave convexly.
  const bool probe_basins = dm.n_blocks <= 40 && free_dims <= 2;
  double probe_range = 1.0;
  if (probe_basins && dm.cells() > 0) {
    const auto [mn, mx] = std::minmax_element(dm.value.begin(), dm.value.end());
    probe_range = (*mx - *mn) + 1.0;
  }

  auto probe_best = [&](const Eigen::VectorXd& center, double center_value,
                        Eigen::VectorXd* out) {
    double best = center_value;
    bool improved = false;
    const int half = free_dims == 1 ? 8 : 4;
    Eigen::VectorXd offset(free_dims);
    Eigen::VectorXd trial(po);
    const int total = free_dims == 1 ? 2 * half + 1 : (2 * half + 1) * (2 * half + 1);
    for (int idx = 0; idx < total; ++idx) {
      if (free_dims == 1) {
        offset[0] = probe_range * (idx - half) / half;
      } else {
        offset[0] = probe_range * (idx % (2 * half + 1) - half) / half;
        offset[1] = probe_range * (idx / (2 * half + 1) - half) / half;
      }
      if (offset.cwiseAbs().maxCoeff() == 0.0) continue;
      trial = center + red.nullbasis * offset;
      const double value = eval_el(dm, red, trial, options, ws, &fit.inner_failures);
      if (value < best - 1e-10) {
        best = value;
        *out = trial;
        improved = true;
      }
    }
    return improved;
  };

  Eigen::VectorXd th = project_affine(red.jac, red.rhs, mele_obs);
  double l_cur = eval_el(dm, red, th, options, ws, &fit.inner_failures);
  if (!std::isfinite(l_cur)) {
    th = project_weighted(dm, red, mele_obs, ws);
    // Weighted projection drifts off the constraint set only by rounding,
    // but re-project so the invariant |jac th - rhs| <= 1e-8 is structural.
    th = project_affine(red.jac, red.rhs, th);
    ws.dual.warm = false;
    l_cur = eval_el(dm, red, th, options, ws, &fit.inner_failures);
  }
  if (!std::isfinite(l_cur) && probe_basins) {
    // Scan the constraint set for any feasible point before giving up.
    Eigen::VectorXd found = th;
    if (probe_best(th, kInfeasibleStatistic, &found)) {
      th = found;
      ws.dual.warm = false;
      l_cur = eval_el(dm, red, th, options, ws, &fit.inner_failures);
    }
  }
  if (!std::isfinite(l_cur)) return assemble(th, kInfeasibleStatistic, FitStatus::infeasible);

  Eigen::VectorXd metric_theta;  // point at which the metric was built
  bool metric_valid = false;

  auto descend = [&]() {
  double last_progress = std::numeric_limits<double>::infinity();
  int stalls = 0;

  int iter = 0;
  for (; iter < options.max_outer; ++iter) {
    // Envelope gradient: d l / d theta_k = -2 lambda_k sum_{i in B_k} 1/s_i.
    ws.col_inv_s.assign(dm.n_treatments, 0.0);
    for (int i = 0; i < dm.n_blocks; ++i) {
      const double inv_s = 1.0 / ws.dual.s[i];
      for (int c = dm.row_ptr[i]; c < dm.row_ptr[i + 1]; ++c)
        ws.col_inv_s[dm.col[c]] += inv_s;
    }
    ws.grad_obs.resize(po);
    for (int j = 0; j < po; ++j) {
      const int k = red.obs[j];
      ws.grad_obs[j] = -2.0 * ws.lambda_full[k] * ws.col_inv_s[k];
    }
    ws.gxi = red.nullbasis.transpose() * ws.grad_obs;
    if (ws.gxi.norm() <= options.tol_grad) break;

    // Gauss-Newton metric (2/n) diag(r) S^-1 diag(r) in observed coordinates.
    // S(theta) drifts slowly, so the factorized metric is reused until theta
    // has moved a material distance from where it was built.
    if (metric_valid && (th - metric_theta).norm() > 0.05 * (1.0 + th.norm()))
      metric_valid = false;
    if (!metric_valid) {
      ws.s_obs.setZero(po, po);
      for (int i = 0; i < dm.n_blocks; ++i)
        for (int a = dm.row_ptr[i]; a < dm.row_ptr[i + 1]; ++a)
          for (int b = a; b < dm.row_ptr[i + 1]; ++b) {
            const int ja = slot[dm.col[a]];
            const int jb = slot[dm.col[b]];
            const double v = ws.dual.score[a] * ws.dual.score[b];
            ws.s_obs(ja, jb) += v;
            if (ja != jb) ws.s_obs(jb, ja) += v;
          }
      ws.s_obs /= n;
      ws.s_obs.diagonal().array() += 1e-12 * (ws.s_obs.trace() + 1e-300);

      ws.h_usable = false;
      Eigen::LLT<Eigen::MatrixXd> s_llt(ws.s_obs);
      if (s_llt.info() == Eigen::Success) {
        // diag(r) S^-1 diag(r) is the elementwise product (r r') o S^-1.
        const Eigen::MatrixXd s_inv = s_llt.solve(Eigen::MatrixXd::Identity(po, po));
        Eigen::VectorXd reps(po);
        for (int j = 0; j < po; ++j) reps[j] = static_cast<double>(dm.replication[red.obs[j]]);
        ws.h_obs = (2.0 / n) * (reps * reps.transpose()).cwiseProduct(s_inv);
        ws.h_xi = red.nullbasis.transpose() * ws.h_obs * red.nullbasis;
        ws.h_ldlt.compute(ws.h_xi);
        const auto d = ws.h_ldlt.vectorD();
        ws.h_usable = ws.h_ldlt.info() == Eigen::Success && d.minCoeff() > 0.0 &&
                      d.maxCoeff() / d.minCoeff() <= options.cond_limit;
      }
      metric_theta = th;
      metric_valid = true;
    }
    if (ws.h_usable)
      ws.dxi = ws.h_ldlt.solve(-ws.gxi);
    else
      ws.dxi = -ws.gxi;

    double directional = ws.gxi.dot(ws.dxi);
    if (!(directional < 0.0)) {
      ws.dxi = -ws.gxi;
      directional = ws.gxi.dot(ws.dxi);
      if (!(directional < 0.0)) break;
    }

    double t = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < options.max_halvings; ++halving) {
      ws.th_trial = th + t * (red.nullbasis * ws.dxi);
      const double l_trial = eval_el(dm, red, ws.th_trial, options, ws, &fit.inner_failures);
      if (l_trial <= l_cur + 1e-4 * t * directional) {
        last_progress = l_cur - l_trial;
        th.swap(ws.th_trial);
        l_cur = l_trial;
        accepted = true;
        break;
      }
      // Flat at rounding resolution: each trial here is a full dual solve,
      // so stop halving as soon as the profile stops moving.
      if (std::isfinite(l_trial) && std::abs(l_trial - l_cur) <= 1e-14 * (1.0 + std::abs(l_cur)))
        break;
      t *= 0.5;
    }
    if (!accepted) {
      // Re-evaluate at the incumbent so the dual state matches th again.
      l_cur = eval_el(dm, red, th, options, ws, &fit.inner_failures);
      break;
    }
    if (t * ws.dxi.norm() <= options.tol_step * (1.0 + th.norm())) break;
    if (last_progress <= 1e-13 * (1.0 + std::abs(l_cur))) {
      if (++stalls >= 2) break;
    } else {
      stalls = 0;
    }
  }
  fit.outer_iterations += iter;
  };

  descend();
  if (probe_basins) {
    for (int restart = 0; restart < 2; ++restart) {
      Eigen::VectorXd better = th;
      if (!probe_best(th, l_cur, &better)) break;
      th = better;
      ws.dual.warm = false;
      l_cur = eval_el(dm, red, th, options, ws, &fit.inner_failures);
      descend();
    }
  }
  return assemble(th, l_cur, FitStatus::ok);
}

}  // namespace detail

Eigen::VectorXd mele(const BlockDesign& design) { return detail::mele_of(design.matrix); }

ConstrainedFit minimize_el(const BlockDesign& design, const LinearHypothesis& hyp,
                           const ConstrainedOptions& options) {
  if (hyp.jac.cols() != design.n_treatments())
    throw std::invalid_argument("minimize_el: hypothesis dimension mismatch");
  const detail::ReducedConstraint red =
      detail::reduce_constraint(design.matrix, hyp.jac, hyp.rhs);
  detail::ConstrainedScratch ws;
  Eigen::VectorXd mele_obs(red.obs.size());
  if (!red.unidentified) {
    const Eigen::VectorXd full = detail::mele_of(design.matrix);
    for (std::size_t j = 0; j < red.obs.size(); ++j) mele_obs[j] = full[red.obs[j]];
  }
  return detail::minimize_reduced(design.matrix, red, mele_obs, options, ws);
}

double profile_contrast(const BlockDesign& design, const Contrast& contrast, double r,
                        const ConstrainedOptions& options) {
  if (contrast.coeffs.size() != design.n_treatments())
    throw std::invalid_argument("profile_contrast: contrast dimension mismatch");
  Eigen::MatrixXd jac = contrast.coeffs.transpose();
  Eigen::VectorXd rhs(1);
  rhs[0] = r;
  const detail::ReducedConstraint red = detail::reduce_constraint(design.matrix, jac, rhs);
  if (red.unidentified)
    throw DataError("profile_contrast: contrast references an unobserved treatment");
  detail::ConstrainedScratch ws;
  Eigen::VectorXd mele_obs(red.obs.size());
  const Eigen::VectorXd full = detail::mele_of(design.matrix);
  for (std::size_t j = 0; j < red.obs.size(); ++j) mele_obs[j] = full[red.obs[j]];
  return detail::minimize_reduced(design.matrix, red, mele_obs, options, ws).statistic;
}

SciInterval sci(const BlockDesign& design, const Contrast& contrast, double cutoff,
                const ConstrainedOptions& options) {
  if (cutoff < 0.0) throw std::invalid_argument("sci: cutoff must be nonnegative");
  if (contrast.coeffs.size() != design.n_treatments())
    throw std::invalid_argument("sci: contrast dimension mismatch");

  const DesignMatrix& dm = design.matrix;
  const Eigen::VectorXd theta_hat = detail::mele_of(dm);
  double r_hat = 0.0;
  for (int k = 0; k < dm.n_treatments; ++k)
    if (contrast.coeffs[k] != 0.0) {
      if (dm.replication[k] == 0)
        throw DataError("sci: contrast references an unobserved treatment");
      r_hat += contrast.coeffs[k] * theta_hat[k];
    }

  SciInterval out;
  if (std::isinf(cutoff)) {
    out.lo = -std::numeric_limits<double>::infinity();
    out.hi = std::numeric_limits<double>::infinity();
    out.truncated_lo = out.truncated_hi = true;
    return out;
  }

  // Shared reduction and scratch across all profile evaluations.
  Eigen::MatrixXd jac = contrast.coeffs.transpose();
  Eigen::VectorXd rhs(1);
  rhs[0] = r_hat;
  detail::ReducedConstraint red = detail::reduce_constraint(dm, jac, rhs);
  detail::ConstrainedScratch ws;
  Eigen::VectorXd mele_obs(red.obs.size());
  for (std::size_t j = 0; j < red.obs.size(); ++j) mele_obs[j] = theta_hat[red.obs[j]];

  auto profile = [&](double r) {
    red.rhs[0] = r;
    return detail::minimize_reduced(dm, red, mele_obs, options, ws).statistic;
  };

  const double at_center = profile(r_hat);
  if (!(at_center <= cutoff + 1e-8))
    throw NumericalError("sci: profile at the contrast estimate exceeds the cutoff");

  // Contrast-weighted spread of the data sets the initial bracketing step.
  double spread = 0.0;
  {
    Eigen::VectorXd sums = Eigen::VectorXd::Zero(dm.n_treatments);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(dm.n_treatments);
    for (int c = 0; c < dm.cells(); ++c) {
      sums[dm.col[c]] += dm.value[c];
      sq[dm.col[c]] += dm.value[c] * dm.value[c];
    }
    for (int k = 0; k < dm.n_treatments; ++k) {
      if (contrast.coeffs[k] == 0.0 || dm.replication[k] == 0) continue;
      const double m = sums[k] / dm.replication[k];
      const double var = std::max(0.0, sq[k] / dm.replication[k] - m * m);
      spread += std::abs(contrast.coeffs[k]) * std::sqrt(var);
    }
  }
  const double tol_r = 1e-6 * (1.0 + std::abs(r_hat));
  const double step0 = std::max(0.5 * spread, 4.0 * tol_r);

  auto scan_side = [&](int direction, double* endpoint, bool* truncated) {
    double ok = r_hat;
    double bound = 0.0;
    bool finite_exceed = false;
    bool bracketed = false;
    double t = step0;
    for (int k = 0; k < 200; ++k) {
      const double r_try = r_hat + direction * t;
      const double value = profile(r_try);
      if (value <= cutoff) {
        ok = r_try;
        t *= 2.0;
      } else {
        bound = r_try;
        finite_exceed = std::isfinite(value);
        bracketed = true;
        break;
      }
    }
    if (!bracketed) {
      *endpoint = ok;
      *truncated = true;
      return;
    }
    while (std::abs(bound - ok) > tol_r) {
      const double mid = 0.5 * (ok + bound);
      const double value = profile(mid);
      if (value <= cutoff) {
        ok = mid;
      } else {
        bound = mid;
        if (std::isfinite(value)) finite_exceed = true;
      }
    }
    *endpoint = ok;
    *truncated = !finite_exceed;
  };

  scan_side(+1, &out.hi, &out.truncated_hi);
  scan_side(-1, &out.lo, &out.truncated_lo);
  return out;
}

}  // namespace elmt
