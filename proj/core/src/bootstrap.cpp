#include "elmt/bootstrap.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "elmt/errors.hpp"
#include "elmt/parallel.hpp"
#include "elmt/rng.hpp"

namespace elmt {

namespace {

constexpr int kRedrawCap = 1000;

struct NbScratch {
  DesignMatrix resample;
  std::vector<int> indices;
  detail::ConstrainedScratch fit;
  Eigen::VectorXd mele_obs;
};

void draw_indices(rng::Stream& stream, int n, std::vector<int>& out) {
  out.resize(n);
  for (int i = 0; i < n; ++i)
    out[i] = static_cast<int>(stream.below(static_cast<std::uint64_t>(n)));
}

void build_resample(const DesignMatrix& base, const std::vector<int>& indices,
                    DesignMatrix& out) {
  const int n = base.n_blocks;
  out.n_blocks = n;
  out.n_treatments = base.n_treatments;
  out.row_ptr.resize(n + 1);
  out.row_ptr[0] = 0;
  out.col.clear();
  out.value.clear();
  out.col.reserve(base.col.size());
  out.value.reserve(base.value.size());
  out.replication.assign(base.n_treatments, 0);
  for (int i = 0; i < n; ++i) {
    const int src = indices[i];
    for (int c = base.row_ptr[src]; c < base.row_ptr[src + 1]; ++c) {
      out.col.push_back(base.col[c]);
      out.value.push_back(base.value[c]);
      out.replication[base.col[c]] += 1;
    }
    out.row_ptr[i + 1] = static_cast<int>(out.col.size());
  }
}

}  // namespace

BlockDesign null_transform(const BlockDesign& design) {
  const DesignMatrix& dm = design.matrix;
  for (int k = 0; k < dm.n_treatments; ++k)
    if (dm.replication[k] < 1)
      throw DataError("null_transform: treatment '" + design.treatment_labels[k] +
                      "' has no observations");
  BlockDesign out = design;
  const Eigen::VectorXd means = detail::mele_of(dm);
  for (int c = 0; c < dm.cells(); ++c)
    out.matrix.value[c] = dm.value[c] - means[dm.col[c]];
  return out;
}

BlockDesign bootstrap_resample(const BlockDesign& design, std::uint64_t seed,
                               std::uint64_t replicate) {
  rng::Stream stream(seed, rng::kDomainNbIndices, replicate);
  std::vector<int> indices;
  draw_indices(stream, design.n_blocks(), indices);
  BlockDesign out;
  out.treatment_labels = design.treatment_labels;
  build_resample(design.matrix, indices, out.matrix);
  out.block_labels.reserve(indices.size());
  for (int src : indices) out.block_labels.push_back(design.block_labels[src]);
  return out;
}

std::vector<double> nb_statistics(const BlockDesign& design,
                                  const std::vector<LinearHypothesis>& hyps, int b_reps,
                                  std::uint64_t seed, int threads, BootstrapDiagnostics* diag) {
  const int m = static_cast<int>(hyps.size());
  if (m == 0) throw std::invalid_argument("nb_statistics: no hypotheses");
  if (b_reps < 1) throw std::invalid_argument("nb_statistics: b_reps must be positive");
  const BlockDesign transformed = null_transform(design);
  const DesignMatrix& base = transformed.matrix;
  const int p = base.n_treatments;

  // Treatments any hypothesis depends on; a resample must keep all of them.
  std::vector<char> referenced(p, 0);
  for (const auto& hyp : hyps) {
    if (hyp.jac.cols() != p)
      throw std::invalid_argument("nb_statistics: hypothesis dimension mismatch");
    for (int k = 0; k < p; ++k)
      if (hyp.jac.col(k).cwiseAbs().maxCoeff() > 0.0) referenced[k] = 1;
  }
  for (int k = 0; k < p; ++k)
    if (referenced[k] && base.replication[k] < 2)
      throw DataError("nb_statistics: treatment '" + design.treatment_labels[k] +
                      "' needs replication >= 2 to bootstrap");

  // Resampled hypotheses are tested at rhs 0: the null transformation makes
  // the resampling population satisfy every zero constraint exactly.
  std::vector<Eigen::VectorXd> zero_rhs;
  zero_rhs.reserve(hyps.size());
  for (const auto& hyp : hyps) zero_rhs.push_back(Eigen::VectorXd::Zero(hyp.jac.rows()));

  // Reductions against the full observed set; reusable whenever a resample
  // keeps every treatment (the common case).
  std::vector<detail::ReducedConstraint> full_reductions;
  full_reductions.reserve(hyps.size());
  for (std::size_t j = 0; j < hyps.size(); ++j)
    full_reductions.push_back(detail::reduce_constraint(base, hyps[j].jac, zero_rhs[j]));

  std::vector<double> stats(static_cast<std::size_t>(b_reps) * m);
  std::atomic<long> redraws{0};
  std::atomic<long> infinite_statistics{0};
  std::atomic<long> failed_solves{0};

  const ConstrainedOptions options;
  parallel_for(b_reps, threads, [&](std::int64_t b) {
    thread_local NbScratch ws;
    rng::Stream stream(seed, rng::kDomainNbIndices, static_cast<std::uint64_t>(b));

    for (int attempt = 0;; ++attempt) {
      if (attempt > kRedrawCap)
        throw NumericalError("nb_statistics: redraw cap exceeded; design too sparse to bootstrap");
      draw_indices(stream, base.n_blocks, ws.indices);
      build_resample(base, ws.indices, ws.resample);
      bool degenerate = false;
      for (int k = 0; k < p; ++k)
        if (referenced[k] && ws.resample.replication[k] == 0) {
          degenerate = true;
          break;
        }
      if (degenerate) {
        redraws.fetch_add(1, std::memory_order_relaxed);
        continue;
      }

      bool same_support = true;
      for (int k = 0; k < p; ++k)
        if ((ws.resample.replication[k] > 0) != (base.replication[k] > 0)) {
          same_support = false;
          break;
        }

      const Eigen::VectorXd means = detail::mele_of(ws.resample);
      double* row = stats.data() + static_cast<std::size_t>(b) * m;
      bool errored = false;
      for (int j = 0; j < m && !errored; ++j) {
        detail::ReducedConstraint local;
        const detail::ReducedConstraint& red =
            same_support ? full_reductions[j]
                         : (local = detail::reduce_constraint(ws.resample, hyps[j].jac,
                                                              zero_rhs[j]));
        ws.mele_obs.resize(red.obs.size());
        for (std::size_t a = 0; a < red.obs.size(); ++a) ws.mele_obs[a] = means[red.obs[a]];
        try {
          const ConstrainedFit fit =
              detail::minimize_reduced(ws.resample, red, ws.mele_obs, options, ws.fit);
          if (fit.inner_failures > 0)
            failed_solves.fetch_add(fit.inner_failures, std::memory_order_relaxed);
          if (!std::isfinite(fit.statistic))
            infinite_statistics.fetch_add(1, std::memory_order_relaxed);
          row[j] = fit.statistic;
        } catch (const NumericalError&) {
          failed_solves.fetch_add(1, std::memory_order_relaxed);
          errored = true;
        }
      }
      if (errored) {
        redraws.fetch_add(1, std::memory_order_relaxed);
        continue;
      }
      break;
    }
  });

  if (diag) {
    diag->redraws += redraws.load();
    diag->infinite_statistics += infinite_statistics.load();
    diag->failed_solves += failed_solves.load();
  }
  return stats;
}

std::pair<CalibrationResult, BootstrapDiagnostics> nb_calibrate(
    const BlockDesign& design, const std::vector<LinearHypothesis>& hyps, double alpha, int v,
    int b_reps, std::uint64_t seed, int threads) {
  const int m = static_cast<int>(hyps.size());
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("nb_calibrate: alpha must be in (0, 1)");
  if (v < 1 || v > m) throw std::invalid_argument("nb_calibrate: v must be in [1, m]");
  if (b_reps < 100) throw std::invalid_argument("nb_calibrate: b_reps must be at least 100");

  BootstrapDiagnostics diag;
  CalibrationResult result;
  result.alpha = alpha;
  result.v = v;
  result.b_reps = b_reps;
  result.seed = seed;
  result.method = Method::nb;
  result.draws = vth_draws_sorted(nb_statistics(design, hyps, b_reps, seed, threads, &diag), m, v);
  result.cutoff = cutoff_from_sorted(result.draws, alpha);
  return {result, diag};
}

}  // namespace elmt
