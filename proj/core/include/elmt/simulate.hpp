#ifndef ELMT_SIMULATE_HPP
#define ELMT_SIMULATE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "elmt/calibration.hpp"
#include "elmt/design.hpp"
#include "elmt/rng.hpp"

namespace elmt {

// Tagged distribution record for block effects and errors.
struct Dist {
  enum class Kind { normal, uniform, gamma, student_t };
  Kind kind = Kind::normal;
  double a = 0.0;  // normal: mean; uniform: lo; gamma: shape; student_t: df
  double b = 1.0;  // normal: variance; uniform: hi; gamma: scale; student_t: unused

  double sample(rng::Stream& stream) const;
  static Dist normal(double mean, double var) { return {Kind::normal, mean, var}; }
  static Dist uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
  static Dist gamma(double shape, double scale) { return {Kind::gamma, shape, scale}; }
  static Dist student_t(double df) { return {Kind::student_t, df, 0.0}; }
};

// Additive block/error model on an all-pairs design: the response in block i
// for treatment k is theta_k + beta_i + eps_ik.
struct ScenarioSpec {
  std::string id;  // "S1-1".."S3-2" or "custom"
  int n = 50;      // number of blocks; must be divisible by the pair count
  Eigen::VectorXd theta;
  Dist block_effect;
  std::vector<Dist> errors;  // one per treatment
};

// The six named simulation scenarios (five treatments; the second member of
// each pair uses negligible block effects and an inflated fifth error).
ScenarioSpec named_scenario(const std::string& id, int n, const Eigen::VectorXd& theta);
bool is_named_scenario(const std::string& id);

BlockDesign gen_dataset(const ScenarioSpec& spec, std::uint64_t seed);

struct MetricsReport {
  std::string scenario;
  int n = 0;
  std::string theta_label;
  Method method = Method::amc;
  double alpha = 0.05;
  int v = 1;
  int runs = 0;         // effective runs after exclusions
  int runs_failed = 0;  // excluded runs (< 1% or the evaluation throws)
  int b_reps = 0;
  std::uint64_t seed = 0;
  double fwer = 0.0;  // gFWER at level v when v > 1
  double fwer_se = 0.0;
  double al = 0.0;  // mean over runs of the mean interval length
  double al_se = 0.0;
  double cp = 0.0;  // all-contrasts simultaneous coverage
  double cp_se = 0.0;
};

// Monte Carlo study over S independent datasets: per run, all pairwise
// statistics, a cutoff by the requested method, and intervals at that
// cutoff. Results are bit-identical for a fixed (spec, seed, S, b_reps)
// regardless of the worker count.
MetricsReport evaluate(const ScenarioSpec& spec, Method method, double alpha, int v, int runs,
                       int b_reps, std::uint64_t seed, int threads = 0);

// Same study evaluated at several v levels while sharing the per-run
// calibration statistics; entry i corresponds to vs[i]. Interval metrics
// (AL, CP) can be skipped when only error rates are needed.
std::vector<MetricsReport> evaluate_multi(const ScenarioSpec& spec, Method method, double alpha,
                                          const std::vector<int>& vs, int runs, int b_reps,
                                          std::uint64_t seed, int threads = 0,
                                          bool with_intervals = true);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& report);

}  // namespace elmt

#endif
