#include "elmt/monte_carlo.hpp"

#include <cmath>
#include <stdexcept>

#include "elmt/errors.hpp"
#include "elmt/parallel.hpp"
#include "elmt/rng.hpp"

namespace elmt {

namespace {

// Lower Cholesky factor with escalating diagonal jitter for numerically
// semidefinite inputs. Rank deficiency shows up when a treatment has tiny
// replication.
Eigen::MatrixXd jittered_cholesky(const Eigen::MatrixXd& mat, const char* what) {
  const double trace = mat.trace();
  double jitter = 0.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::MatrixXd work = mat;
    if (jitter > 0.0) work.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(work);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    jitter = jitter == 0.0 ? 1e-12 * trace : jitter * 10.0;
    if (jitter > 1e-6 * trace) break;
  }
  throw NumericalError(std::string(what) + ": matrix is not positive definite");
}

}  // namespace

PluginMatrices plugin_matrices(const BlockDesign& design, const Eigen::VectorXd& theta_hat,
                               const std::vector<LinearHypothesis>& hyps) {
  const DesignMatrix& dm = design.matrix;
  const int p = dm.n_treatments;
  if (theta_hat.size() != p)
    throw std::invalid_argument("plugin_matrices: theta_hat dimension mismatch");
  for (int k = 0; k < p; ++k)
    if (dm.replication[k] < 1)
      throw DataError("plugin_matrices: treatment '" + design.treatment_labels[k] +
                      "' has no observations");

  PluginMatrices pm;
  pm.s_hat = score_table(design, theta_hat).gram();
  pm.w_diag.resize(p);
  for (int k = 0; k < p; ++k)
    pm.w_diag[k] = -static_cast<double>(dm.n_blocks) / static_cast<double>(dm.replication[k]);

  if (pm.s_hat.trace() <= 0.0) {
    // Exactly degenerate data: every score is zero, all draws will be zero.
    pm.degenerate = true;
    pm.chol = Eigen::MatrixXd::Zero(p, p);
    for (const auto& hyp : hyps) {
      pm.a_hats.push_back(Eigen::MatrixXd::Zero(p, p));
      pm.quad_factors.push_back(Eigen::MatrixXd::Zero(hyp.jac.rows(), p));
      pm.q.push_back(static_cast<int>(hyp.jac.rows()));
    }
    return pm;
  }

  pm.chol = jittered_cholesky(pm.s_hat, "plugin_matrices: s_hat");

  for (const auto& hyp : hyps) {
    const int q = static_cast<int>(hyp.jac.rows());
    const Eigen::MatrixXd jw = hyp.jac * pm.w_diag.asDiagonal();
    const Eigen::MatrixXd inner = jw * pm.s_hat * jw.transpose();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(inner, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv[q - 1] <= 0.0 || sv[0] / sv[q - 1] > 1e12)
      throw NumericalError("plugin_matrices: hypothesis '" + hyp.label +
                           "' is not identifiable on this design");
    pm.a_hats.push_back(jw.transpose() * svd.solve(jw));
    const Eigen::MatrixXd inner_l = jittered_cholesky(inner, "plugin_matrices: inner");
    pm.quad_factors.push_back(
        inner_l.triangularView<Eigen::Lower>().solve(jw));
    pm.q.push_back(q);
  }
  return pm;
}

std::vector<double> amc_statistics(const PluginMatrices& pm, int b_reps, std::uint64_t seed,
                                   int threads) {
  const int m = static_cast<int>(pm.quad_factors.size());
  if (m == 0) throw std::invalid_argument("amc_statistics: no hypotheses");
  if (b_reps < 1) throw std::invalid_argument("amc_statistics: b_reps must be positive");
  const int p = static_cast<int>(pm.chol.rows());

  std::vector<double> stats(static_cast<std::size_t>(b_reps) * m, 0.0);
  if (pm.degenerate) return stats;

  parallel_for(b_reps, threads, [&](std::int64_t b) {
    rng::Stream stream(seed, rng::kDomainAmc, static_cast<std::uint64_t>(b));
    Eigen::VectorXd z(p);
    for (int k = 0; k < p; ++k) z[k] = stream.normal();
    const Eigen::VectorXd u = pm.chol.triangularView<Eigen::Lower>() * z;
    double* row = stats.data() + static_cast<std::size_t>(b) * m;
    for (int j = 0; j < m; ++j) row[j] = (pm.quad_factors[j] * u).squaredNorm();
  });
  return stats;
}

CalibrationResult amc_calibrate(const PluginMatrices& pm, double alpha, int v, int b_reps,
                                std::uint64_t seed, int threads) {
  const int m = static_cast<int>(pm.quad_factors.size());
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("amc_calibrate: alpha must be in (0, 1)");
  if (v < 1 || v > m) throw std::invalid_argument("amc_calibrate: v must be in [1, m]");
  if (b_reps < 100) throw std::invalid_argument("amc_calibrate: b_reps must be at least 100");

  CalibrationResult result;
  result.alpha = alpha;
  result.v = v;
  result.b_reps = b_reps;
  result.seed = seed;
  result.method = Method::amc;
  result.draws = vth_draws_sorted(amc_statistics(pm, b_reps, seed, threads), m, v);
  result.cutoff = cutoff_from_sorted(result.draws, alpha);
  return result;
}

std::vector<double> sample_mv_chisq(int m, const std::vector<int>& q, const Eigen::MatrixXd& corr,
                                    int b_reps, std::uint64_t seed, int threads) {
  if (m < 1 || static_cast<int>(q.size()) != m)
    throw std::invalid_argument("sample_mv_chisq: q must list one rank per component");
  int dim = 0;
  for (int qe : q) {
    if (qe < 1) throw std::invalid_argument("sample_mv_chisq: ranks must be positive");
    dim += qe;
  }
  if (corr.rows() != dim || corr.cols() != dim)
    throw std::invalid_argument("sample_mv_chisq: correlation dimension mismatch");
  if ((corr - corr.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw std::invalid_argument("sample_mv_chisq: correlation must be symmetric");
  for (int i = 0; i < dim; ++i)
    if (std::abs(corr(i, i) - 1.0) > 1e-10)
      throw std::invalid_argument("sample_mv_chisq: correlation must have unit diagonal");

  Eigen::MatrixXd chol;
  try {
    chol = jittered_cholesky(corr, "sample_mv_chisq: corr");
  } catch (const NumericalError&) {
    throw std::invalid_argument("sample_mv_chisq: correlation is not positive semidefinite");
  }

  std::vector<double> stats(static_cast<std::size_t>(b_reps) * m);
  parallel_for(b_reps, threads, [&](std::int64_t b) {
    rng::Stream stream(seed, rng::kDomainMvChisq, static_cast<std::uint64_t>(b));
    Eigen::VectorXd z(dim);
    for (int k = 0; k < dim; ++k) z[k] = stream.normal();
    const Eigen::VectorXd joint = chol.triangularView<Eigen::Lower>() * z;
    double* row = stats.data() + static_cast<std::size_t>(b) * m;
    int offset = 0;
    for (int j = 0; j < m; ++j) {
      row[j] = joint.segment(offset, q[j]).squaredNorm();
      offset += q[j];
    }
  });
  return stats;
}

}  // namespace elmt
