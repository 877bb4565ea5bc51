#ifndef ELMT_BOOTSTRAP_HPP
#define ELMT_BOOTSTRAP_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "elmt/calibration.hpp"
#include "elmt/constrained_el.hpp"
#include "elmt/design.hpp"

namespace elmt {

struct BootstrapDiagnostics {
  long redraws = 0;              // resamples rejected for zero replication
  long infinite_statistics = 0;  // hull-infeasible constrained solves
  long failed_solves = 0;        // inner dual solves that hit the iteration cap
};

// Center every treatment at its MELE, so the transformed data satisfy all
// zero-contrast hypotheses exactly. Incidence and labels are unchanged.
BlockDesign null_transform(const BlockDesign& design);

// The block resample the calibrator would draw as replicate b: n block rows
// i.i.d. with replacement. Exposed so tests can assert the resampling unit
// structurally.
BlockDesign bootstrap_resample(const BlockDesign& design, std::uint64_t seed,
                               std::uint64_t replicate);

// B x m row-major matrix of constrained statistics over resamples of the
// null-transformed design. Resamples in which a hypothesis-referenced
// treatment vanishes are redrawn (consecutive cap 1000, then error);
// hull-infeasible minimizations score +inf and are counted.
std::vector<double> nb_statistics(const BlockDesign& design,
                                  const std::vector<LinearHypothesis>& hyps, int b_reps,
                                  std::uint64_t seed, int threads, BootstrapDiagnostics* diag);

// Full bootstrap calibration per the same cutoff convention as the Monte
// Carlo path. Requires r_k >= 2 for every referenced treatment.
std::pair<CalibrationResult, BootstrapDiagnostics> nb_calibrate(
    const BlockDesign& design, const std::vector<LinearHypothesis>& hyps, double alpha, int v,
    int b_reps, std::uint64_t seed, int threads = 0);

}  // namespace elmt

#endif
