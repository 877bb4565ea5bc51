#include "elmt/inference.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "elmt/errors.hpp"
#include "elmt/parallel.hpp"

namespace elmt {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& text, const char* what) {
  const std::string t = trim(text);
  double value = 0.0;
  const char* begin = t.data();
  const char* end = begin + t.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    throw DataError(std::string(what) + ": cannot parse number '" + text + "'");
  return value;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<Contrast> pairwise(int p) {
  if (p < 2) throw std::invalid_argument("pairwise: need at least 2 treatments");
  std::vector<Contrast> out;
  out.reserve(static_cast<std::size_t>(p) * (p - 1) / 2);
  for (int k = 0; k < p; ++k)
    for (int l = k + 1; l < p; ++l) {
      Eigen::VectorXd u = Eigen::VectorXd::Zero(p);
      u[l] = 1.0;
      u[k] = -1.0;
      out.push_back({u, "t" + std::to_string(l + 1) + " - t" + std::to_string(k + 1)});
    }
  return out;
}

std::vector<Contrast> pairwise(const BlockDesign& design) {
  std::vector<Contrast> out = pairwise(design.n_treatments());
  std::size_t idx = 0;
  for (int k = 0; k < design.n_treatments(); ++k)
    for (int l = k + 1; l < design.n_treatments(); ++l)
      out[idx++].label = design.treatment_labels[l] + " - " + design.treatment_labels[k];
  return out;
}

std::vector<ContrastSpec> parse_contrasts(const std::string& text, const BlockDesign& design) {
  const int p = design.n_treatments();
  std::vector<ContrastSpec> out;

  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const std::size_t sep = text.find(';', start);
    if (sep == std::string::npos) {
      parts.push_back(text.substr(start));
      break;
    }
    parts.push_back(text.substr(start, sep - start));
    start = sep + 1;
  }

  auto treatment_index = [&](const std::string& label) {
    for (int k = 0; k < p; ++k)
      if (design.treatment_labels[k] == label) return k;
    throw DataError("contrast: unknown treatment '" + label + "'");
  };

  for (const std::string& raw : parts) {
    const std::string spec = trim(raw);
    if (spec.empty()) continue;
    if (spec == "pairwise") {
      for (auto& c : pairwise(design)) out.push_back({std::move(c), 0.0});
      continue;
    }
    if (spec.front() == '[') {
      const std::size_t close = spec.find(']');
      if (close == std::string::npos) throw DataError("contrast: missing ']' in '" + spec + "'");
      std::vector<double> coeffs;
      std::string body = spec.substr(1, close - 1);
      std::size_t pos = 0;
      while (pos <= body.size()) {
        const std::size_t comma = body.find(',', pos);
        const std::string tok =
            comma == std::string::npos ? body.substr(pos) : body.substr(pos, comma - pos);
        coeffs.push_back(parse_double(tok, "contrast"));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      if (static_cast<int>(coeffs.size()) != p)
        throw DataError("contrast: expected " + std::to_string(p) + " coefficients in '" + spec +
                        "'");
      double rhs = 0.0;
      const std::string rest = trim(spec.substr(close + 1));
      if (!rest.empty()) {
        if (rest.front() != '=') throw DataError("contrast: expected '= value' in '" + spec + "'");
        rhs = parse_double(rest.substr(1), "contrast");
      }
      Eigen::VectorXd u = Eigen::Map<Eigen::VectorXd>(coeffs.data(), p);
      out.push_back({make_contrast(std::move(u), spec), rhs});
      continue;
    }
    // "<label> - <label>" form; labels themselves must not contain " - ".
    const std::size_t dash = spec.find(" - ");
    if (dash == std::string::npos)
      throw DataError("contrast: cannot parse '" + spec + "'");
    const int hi = treatment_index(trim(spec.substr(0, dash)));
    const int lo = treatment_index(trim(spec.substr(dash + 3)));
    if (hi == lo) throw DataError("contrast: '" + spec + "' compares a treatment with itself");
    Eigen::VectorXd u = Eigen::VectorXd::Zero(p);
    u[hi] = 1.0;
    u[lo] = -1.0;
    out.push_back({make_contrast(std::move(u),
                                 design.treatment_labels[hi] + " - " + design.treatment_labels[lo]),
                   0.0});
  }
  if (out.empty()) throw DataError("contrast: no contrasts specified");
  return out;
}

AnalysisReport run_analysis(const AnalysisRequest& request, int threads) {
  const BlockDesign& design = request.design;
  const int p = design.n_treatments();
  const int m = static_cast<int>(request.contrasts.size());
  if (m == 0) throw DataError("run_analysis: no contrasts");
  if (!(request.alpha > 0.0 && request.alpha < 1.0))
    throw std::invalid_argument("run_analysis: alpha must be in (0, 1)");
  if (request.v < 1 || request.v > m)
    throw std::invalid_argument("run_analysis: v must be in [1, m]");

  // Estimability: all treatments touched by one contrast must share a
  // connected component, otherwise the comparison has no within-block path.
  const Connectivity conn = connectivity(design);
  for (const auto& spec : request.contrasts) {
    if (spec.contrast.coeffs.size() != p)
      throw std::invalid_argument("run_analysis: contrast dimension mismatch");
    int component = -1;
    for (int k = 0; k < p; ++k) {
      if (spec.contrast.coeffs[k] == 0.0) continue;
      if (design.matrix.replication[k] == 0)
        throw DataError("contrast '" + spec.contrast.label + "' references unobserved treatment '" +
                        design.treatment_labels[k] + "'");
      if (component < 0)
        component = conn.component[k];
      else if (conn.component[k] != component)
        throw DataError("contrast '" + spec.contrast.label +
                        "' spans disconnected design components");
    }
  }

  AnalysisReport report;
  report.method = request.method;
  report.alpha = request.alpha;
  report.v = request.v;
  report.b_reps = request.b_reps;
  report.seed = request.seed;
  report.mele = mele(design);
  report.treatment_labels = design.treatment_labels;
  report.design_summary = summarize(design);
  report.n_blocks = design.n_blocks();
  report.n_treatments = p;
  report.connected = conn.connected();

  std::vector<LinearHypothesis> hyps;
  hyps.reserve(m);
  for (const auto& spec : request.contrasts) {
    Eigen::VectorXd rhs(1);
    rhs[0] = spec.rhs;
    hyps.push_back(make_hypothesis(spec.contrast.coeffs.transpose(), rhs, spec.contrast.label));
  }

  // Observed statistics.
  Eigen::VectorXd t_obs(m);
  parallel_for(m, threads, [&](std::int64_t j) {
    const ConstrainedFit fit = minimize_el(design, hyps[j]);
    if (fit.status == FitStatus::unidentified)
      throw DataError("contrast '" + hyps[j].label + "' is not identified");
    t_obs[j] = fit.statistic;
  });

  // Common cutoff.
  CalibrationResult calibration;
  if (request.method == Method::amc) {
    const PluginMatrices pm = plugin_matrices(design, report.mele, hyps);
    calibration = amc_calibrate(pm, request.alpha, request.v, request.b_reps, request.seed, threads);
  } else {
    auto [result, diag] = nb_calibrate(design, hyps, request.alpha, request.v, request.b_reps,
                                       request.seed, threads);
    calibration = std::move(result);
    report.diagnostics = diag;
  }
  calibration.adjusted_p = adjusted_p(t_obs, calibration.draws);
  report.cutoff = calibration.cutoff;

  // Simultaneous intervals at the common cutoff.
  std::vector<SciInterval> intervals(m);
  parallel_for(m, threads, [&](std::int64_t j) {
    intervals[j] = sci(design, request.contrasts[j].contrast, report.cutoff);
  });

  report.rows.resize(m);
  for (int j = 0; j < m; ++j) {
    HypothesisRow& row = report.rows[j];
    const auto& spec = request.contrasts[j];
    row.label = spec.contrast.label;
    row.rhs = spec.rhs;
    double estimate = 0.0;
    for (int k = 0; k < p; ++k)
      if (spec.contrast.coeffs[k] != 0.0) estimate += spec.contrast.coeffs[k] * report.mele[k];
    row.estimate = estimate;
    row.statistic = t_obs[j];
    row.adj_p = calibration.adjusted_p[j];
    row.reject = t_obs[j] > report.cutoff;  // strict: ties are not rejected
    row.sci_lo = intervals[j].lo;
    row.sci_hi = intervals[j].hi;
    row.truncated_lo = intervals[j].truncated_lo;
    row.truncated_hi = intervals[j].truncated_hi;

    // Compatibility: rejection must match the null value falling outside the
    // interval, up to the bisection tolerance of the endpoints.
    const double band = 3e-6 * (1.0 + std::abs(row.estimate));
    const bool strictly_inside = row.rhs >= row.sci_lo + band && row.rhs <= row.sci_hi - band;
    const bool strictly_outside = row.rhs < row.sci_lo - band || row.rhs > row.sci_hi + band;
    if ((row.reject && strictly_inside) || (!row.reject && strictly_outside))
      throw NumericalError("run_analysis: test/interval compatibility violated for '" +
                           row.label + "'");
  }
  return report;
}

nlohmann::ordered_json report_json(const AnalysisReport& report) {
  nlohmann::ordered_json j;
  j["method"] = method_name(report.method);
  j["alpha"] = report.alpha;
  j["v"] = report.v;
  j["b_reps"] = report.b_reps;
  j["seed"] = report.seed;
  j["cutoff"] = report.cutoff;
  j["n_blocks"] = report.n_blocks;
  j["n_treatments"] = report.n_treatments;
  j["connected"] = report.connected;
  nlohmann::ordered_json mele_obj;
  for (int k = 0; k < report.mele.size(); ++k) {
    const double value = report.mele[k];
    if (std::isnan(value))
      mele_obj[report.treatment_labels[k]] = nullptr;
    else
      mele_obj[report.treatment_labels[k]] = value;
  }
  j["mele"] = std::move(mele_obj);
  j["design"] = {
      {"replication", std::vector<int>(report.design_summary.replication.data(),
                                       report.design_summary.replication.data() +
                                           report.design_summary.replication.size())},
      {"min_rep_fraction", report.design_summary.min_rep_fraction},
  };
  if (report.method == Method::nb) {
    j["diagnostics"] = {{"redraws", report.diagnostics.redraws},
                        {"infinite_statistics", report.diagnostics.infinite_statistics},
                        {"failed_solves", report.diagnostics.failed_solves}};
  }
  if (report.v > 1) {
    // Intervals are inverted at the generalized-error cutoff, not the
    // familywise one; flag so downstream readers do not over-interpret.
    j["sci_cutoff_note"] = "intervals inverted at the v=" + std::to_string(report.v) +
                           " generalized cutoff";
  }
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : report.rows) {
    rows.push_back({{"label", row.label},
                    {"estimate", row.estimate},
                    {"statistic", row.statistic},
                    {"adj_p", row.adj_p},
                    {"reject", row.reject},
                    {"sci_lo", row.sci_lo},
                    {"sci_hi", row.sci_hi},
                    {"truncated_lo", row.truncated_lo},
                    {"truncated_hi", row.truncated_hi}});
  }
  j["hypotheses"] = std::move(rows);
  return j;
}

std::string report_csv(const AnalysisReport& report) {
  std::string out;
  out += "label,estimate,statistic,adj_p,reject,sci_lo,sci_hi,truncated_lo,truncated_hi\n";
  for (const auto& row : report.rows) {
    out += row.label;
    out += ',' + format_double(row.estimate);
    out += ',' + format_double(row.statistic);
    out += ',' + format_double(row.adj_p);
    out += row.reject ? ",true" : ",false";
    out += ',' + format_double(row.sci_lo);
    out += ',' + format_double(row.sci_hi);
    out += row.truncated_lo ? ",true" : ",false";
    out += row.truncated_hi ? ",true" : ",false";
    out += '\n';
  }
  return out;
}

}  // namespace elmt
