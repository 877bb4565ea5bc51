#ifndef ELMT_INFERENCE_HPP
#define ELMT_INFERENCE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "elmt/bootstrap.hpp"
#include "elmt/calibration.hpp"
#include "elmt/constrained_el.hpp"
#include "elmt/design.hpp"
#include "elmt/monte_carlo.hpp"

#include "json.hpp"

namespace elmt {

// A contrast together with its tested null value.
struct ContrastSpec {
  Contrast contrast;
  double rhs = 0.0;
};

struct AnalysisRequest {
  BlockDesign design;
  std::vector<ContrastSpec> contrasts;
  Method method = Method::nb;
  double alpha = 0.05;
  int v = 1;
  int b_reps = 10000;
  std::uint64_t seed = 0;
};

struct HypothesisRow {
  std::string label;
  double estimate = 0.0;  // contrast applied to the MELE
  double rhs = 0.0;
  double statistic = 0.0;
  double adj_p = 1.0;
  bool reject = false;
  double sci_lo = 0.0;
  double sci_hi = 0.0;
  bool truncated_lo = false;
  bool truncated_hi = false;
};

struct AnalysisReport {
  std::vector<HypothesisRow> rows;
  double cutoff = 0.0;
  Method method = Method::nb;
  double alpha = 0.05;
  int v = 1;
  int b_reps = 0;
  std::uint64_t seed = 0;
  Eigen::VectorXd mele;
  std::vector<std::string> treatment_labels;
  DesignSummary design_summary;
  int n_blocks = 0;
  int n_treatments = 0;
  BootstrapDiagnostics diagnostics;  // meaningful for the bootstrap method
  bool connected = true;
};

// All p(p-1)/2 pairwise differences theta_l - theta_k for k < l, in
// lexicographic (k, l) order. Labels are "t<l> - t<k>" with 1-based indices.
std::vector<Contrast> pairwise(int p);

// Same ordering, labeled with the design's treatment labels.
std::vector<Contrast> pairwise(const BlockDesign& design);

// Contrast mini-language: "pairwise", "<label> - <label>", or an explicit
// coefficient list "[c1,...,cp]" optionally followed by "= r". Multiple
// specifications are separated by ';'.
std::vector<ContrastSpec> parse_contrasts(const std::string& text, const BlockDesign& design);

// Full single-step analysis: statistics for every contrast, a common cutoff
// by the requested method, rejections, adjusted p-values, and simultaneous
// intervals at the same cutoff. The test/interval compatibility invariant is
// checked before returning.
AnalysisReport run_analysis(const AnalysisRequest& request, int threads = 0);

// Deterministic serializations; the CSV carries the same numbers as the JSON.
nlohmann::ordered_json report_json(const AnalysisReport& report);
std::string report_csv(const AnalysisReport& report);

}  // namespace elmt

#endif
