#include "elmt/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "elmt/bootstrap.hpp"
#include "elmt/constrained_el.hpp"
#include "elmt/errors.hpp"
#include "elmt/inference.hpp"
#include "elmt/monte_carlo.hpp"
#include "elmt/parallel.hpp"

namespace elmt {

double Dist::sample(rng::Stream& stream) const {
  switch (kind) {
    case Kind::normal:
      return stream.normal(a, b);
    case Kind::uniform:
      return stream.uniform(a, b);
    case Kind::gamma:
      return stream.gamma(a, b);
    case Kind::student_t:
      return stream.student_t(a);
  }
  throw std::logic_error("Dist::sample: bad kind");
}

bool is_named_scenario(const std::string& id) {
  return id == "S1-1" || id == "S1-2" || id == "S2-1" || id == "S2-2" || id == "S3-1" ||
         id == "S3-2";
}

ScenarioSpec named_scenario(const std::string& id, int n, const Eigen::VectorXd& theta) {
  if (!is_named_scenario(id)) throw std::invalid_argument("unknown scenario '" + id + "'");
  if (theta.size() != 5)
    throw std::invalid_argument("named scenarios use five treatments");
  ScenarioSpec spec;
  spec.id = id;
  spec.n = n;
  spec.theta = theta;
  if (id == "S1-1") {
    spec.block_effect = Dist::normal(0.0, 1.0);
    spec.errors.assign(5, Dist::normal(0.0, 1.0));
  } else if (id == "S1-2") {
    spec.block_effect = Dist::normal(0.0, 0.1);
    spec.errors.assign(5, Dist::normal(0.0, 1.0));
    spec.errors[4] = Dist::normal(0.0, 9.0);
  } else if (id == "S2-1") {
    spec.block_effect = Dist::uniform(-2.0, 2.0);
    spec.errors.assign(5, Dist::uniform(-2.0, 2.0));
  } else if (id == "S2-2") {
    spec.block_effect = Dist::uniform(-0.5, 0.5);
    spec.errors.assign(5, Dist::uniform(-2.0, 2.0));
    spec.errors[4] = Dist::uniform(-5.0, 5.0);
  } else if (id == "S3-1") {
    spec.block_effect = Dist::gamma(2.0, 1.0);
    spec.errors.assign(5, Dist::student_t(6.0));
  } else {  // S3-2
    spec.block_effect = Dist::gamma(10.0, 0.1);
    spec.errors.assign(5, Dist::student_t(6.0));
    spec.errors[4] = Dist::uniform(-5.0, 5.0);
  }
  return spec;
}

BlockDesign gen_dataset(const ScenarioSpec& spec, std::uint64_t seed) {
  const int p = static_cast<int>(spec.theta.size());
  if (p < 2) throw std::invalid_argument("gen_dataset: need at least 2 treatments");
  if (static_cast<int>(spec.errors.size()) != p)
    throw std::invalid_argument("gen_dataset: need one error distribution per treatment");
  const int pairs = p * (p - 1) / 2;
  if (spec.n <= 0 || spec.n % pairs != 0)
    throw std::invalid_argument("gen_dataset: n must be a positive multiple of " +
                                std::to_string(pairs));

  BlockDesign design = generate_pair_design(p, spec.n / pairs);
  DesignMatrix& dm = design.matrix;
  rng::Stream stream(seed, rng::kDomainSimData, 0);
  for (int i = 0; i < dm.n_blocks; ++i) {
    const double beta = spec.block_effect.sample(stream);
    for (int c = dm.row_ptr[i]; c < dm.row_ptr[i + 1]; ++c) {
      const int k = dm.col[c];
      dm.value[c] = spec.theta[k] + beta + spec.errors[k].sample(stream);
    }
  }
  return design;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string theta_label(const Eigen::VectorXd& theta) {
  std::string out = "(";
  for (int k = 0; k < theta.size(); ++k) {
    if (k > 0) out += ",";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", theta[k]);
    out += buf;
  }
  out += ")";
  return out;
}

struct RunOutcome {
  bool failed = false;
  // One entry per requested v level.
  std::vector<char> fwer_exceed;
  std::vector<double> mean_length;
  std::vector<char> covered_all;
};

}  // namespace

std::vector<MetricsReport> evaluate_multi(const ScenarioSpec& spec, Method method, double alpha,
                                          const std::vector<int>& vs, int runs, int b_reps,
                                          std::uint64_t seed, int threads, bool with_intervals) {
  if (runs < 1) throw std::invalid_argument("evaluate: need at least one run");
  if (vs.empty()) throw std::invalid_argument("evaluate: need at least one v level");
  const int p = static_cast<int>(spec.theta.size());
  const std::vector<Contrast> contrasts = pairwise(p);
  const int m = static_cast<int>(contrasts.size());
  for (int v : vs)
    if (v < 1 || v > m) throw std::invalid_argument("evaluate: v out of range");

  std::vector<LinearHypothesis> hyps;
  Eigen::VectorXd true_delta(m);
  std::vector<int> true_nulls;
  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(1);
    hyps.push_back(make_hypothesis(contrasts[j].coeffs.transpose(), rhs, contrasts[j].label));
    true_delta[j] = contrasts[j].coeffs.dot(spec.theta);
    if (true_delta[j] == 0.0) true_nulls.push_back(j);
  }

  const int nv = static_cast<int>(vs.size());
  std::vector<RunOutcome> outcomes(runs);

  parallel_for(runs, threads, [&](std::int64_t s) {
    RunOutcome& out = outcomes[s];
    out.fwer_exceed.assign(nv, 0);
    out.mean_length.assign(nv, 0.0);
    out.covered_all.assign(nv, 0);
    try {
      const std::uint64_t data_seed = rng::derive(seed, rng::kDomainSimData, s);
      const std::uint64_t calib_seed = rng::derive(seed, rng::kDomainSimCalib, s);
      const BlockDesign design = gen_dataset(spec, data_seed);

      Eigen::VectorXd t_obs(m);
      for (int j = 0; j < m; ++j) t_obs[j] = minimize_el(design, hyps[j]).statistic;

      // Per-replicate statistic matrix shared across the requested v levels.
      std::vector<double> stats;
      if (method == Method::amc) {
        const PluginMatrices pm = plugin_matrices(design, mele(design), hyps);
        stats = amc_statistics(pm, b_reps, calib_seed, 1);
      } else {
        stats = nb_statistics(design, hyps, b_reps, calib_seed, 1, nullptr);
      }

      for (int iv = 0; iv < nv; ++iv) {
        const int v = vs[iv];
        const std::vector<double> draws = vth_draws_sorted(stats, m, v);
        const double cutoff = cutoff_from_sorted(draws, alpha);

        int false_rejections = 0;
        for (int j : true_nulls)
          if (t_obs[j] > cutoff) ++false_rejections;
        out.fwer_exceed[iv] = false_rejections >= v ? 1 : 0;

        if (with_intervals) {
          double total_length = 0.0;
          bool all_covered = true;
          for (int j = 0; j < m; ++j) {
            const SciInterval interval = sci(design, contrasts[j], cutoff);
            total_length += interval.hi - interval.lo;
            if (true_delta[j] < interval.lo || true_delta[j] > interval.hi) all_covered = false;
          }
          out.mean_length[iv] = total_length / m;
          out.covered_all[iv] = all_covered ? 1 : 0;
        }
      }
    } catch (const std::exception&) {
      out.failed = true;
    }
  });

  int failed = 0;
  for (const auto& out : outcomes)
    if (out.failed) ++failed;
  if (failed > 0 && failed >= std::max(1, runs / 100))
    throw NumericalError("evaluate: " + std::to_string(failed) + " of " + std::to_string(runs) +
                         " runs failed");

  std::vector<MetricsReport> reports;
  for (int iv = 0; iv < nv; ++iv) {
    MetricsReport rep;
    rep.scenario = spec.id;
    rep.n = spec.n;
    rep.theta_label = theta_label(spec.theta);
    rep.method = method;
    rep.alpha = alpha;
    rep.v = vs[iv];
    rep.b_reps = b_reps;
    rep.seed = seed;
    rep.runs_failed = failed;

    const int effective = runs - failed;
    rep.runs = effective;
    double exceed = 0.0, cover = 0.0, length_sum = 0.0, length_sq = 0.0;
    for (const auto& out : outcomes) {
      if (out.failed) continue;
      exceed += out.fwer_exceed[iv];
      cover += out.covered_all[iv];
      length_sum += out.mean_length[iv];
      length_sq += out.mean_length[iv] * out.mean_length[iv];
    }
    const double s = static_cast<double>(effective);
    rep.fwer = exceed / s;
    rep.cp = cover / s;
    rep.al = length_sum / s;
    rep.fwer_se = std::sqrt(rep.fwer * (1.0 - rep.fwer) / s);
    rep.cp_se = std::sqrt(rep.cp * (1.0 - rep.cp) / s);
    const double var = std::max(0.0, length_sq / s - rep.al * rep.al);
    rep.al_se = std::sqrt(var / s);
    reports.push_back(std::move(rep));
  }
  return reports;
}

MetricsReport evaluate(const ScenarioSpec& spec, Method method, double alpha, int v, int runs,
                       int b_reps, std::uint64_t seed, int threads) {
  return evaluate_multi(spec, method, alpha, {v}, runs, b_reps, seed, threads).front();
}

std::string metrics_csv_header() {
  return "scenario,n,theta,method,fwer,fwer_se,al,al_se,cp,cp_se";
}

std::string metrics_csv_row(const MetricsReport& report) {
  std::string out;
  out += report.scenario;
  out += ',' + std::to_string(report.n);
  out += ",\"" + report.theta_label + "\"";
  out += ',' + method_name(report.method);
  out += ',' + format_double(report.fwer);
  out += ',' + format_double(report.fwer_se);
  out += ',' + format_double(report.al);
  out += ',' + format_double(report.al_se);
  out += ',' + format_double(report.cp);
  out += ',' + format_double(report.cp_se);
  return out;
}

}  // namespace elmt
