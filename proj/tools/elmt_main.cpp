// elmt: empirical-likelihood simultaneous inference for block designs.
//
// Subcommands:
//   analyze      EL statistics, common cutoff, adjusted p-values, intervals
//   simulate     Monte Carlo study of error rate / coverage for a scenario
//   design-info  structural summary of a design CSV
//
// stdout carries data; stderr carries diagnostics. Exit codes: 0 success,
// 2 usage error, 3 data error, 4 numerical failure.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "elmt/design.hpp"
#include "elmt/errors.hpp"
#include "elmt/inference.hpp"
#include "elmt/parallel.hpp"
#include "elmt/simulate.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct CommonFlags {
  std::string input;
  std::string output;
  std::string format = "json";
  std::string duplicate_policy = "error";
  int threads = 0;
};

elmt::DuplicatePolicy parse_policy(const std::string& name) {
  if (name == "error") return elmt::DuplicatePolicy::error;
  if (name == "average") return elmt::DuplicatePolicy::average;
  throw CLI::ValidationError("--duplicate-policy must be error or average");
}

void write_output(const std::string& path, const std::string& payload) {
  if (path.empty() || path == "-") {
    std::cout << payload;
    return;
  }
  std::ofstream out(path);
  if (!out) throw elmt::DataError("cannot open output file '" + path + "'");
  out << payload;
}

nlohmann::ordered_json config_echo(const CommonFlags& common) {
  return {{"input", common.input},
          {"format", common.format},
          {"duplicate_policy", common.duplicate_policy},
          {"threads", elmt::resolve_threads(common.threads)}};
}

std::string csv_comment_config(const nlohmann::ordered_json& config) {
  std::string out;
  for (const auto& [key, value] : config.items())
    out += "# " + key + "=" + (value.is_string() ? value.get<std::string>() : value.dump()) + "\n";
  return out;
}

int run_analyze(const CommonFlags& common, const std::string& contrasts_text,
                const std::string& method_name, double alpha, int v, int b_reps,
                std::uint64_t seed) {
  elmt::AnalysisRequest request;
  request.design = elmt::read_csv_design_file(common.input, parse_policy(common.duplicate_policy));
  request.contrasts = elmt::parse_contrasts(contrasts_text, request.design);
  request.method = elmt::parse_method(method_name);
  request.alpha = alpha;
  request.v = v;
  request.b_reps = b_reps;
  request.seed = seed;

  if (request.design.duplicate_warnings > 0)
    std::cerr << "warning: averaged " << request.design.duplicate_warnings
              << " duplicate cell(s)\n";

  const elmt::AnalysisReport report = elmt::run_analysis(request, common.threads);

  nlohmann::ordered_json config = config_echo(common);
  config["contrasts"] = contrasts_text;
  config["method"] = method_name;
  config["alpha"] = alpha;
  config["v"] = v;
  config["b_reps"] = b_reps;
  config["seed"] = seed;

  if (common.format == "json") {
    nlohmann::ordered_json out;
    out["config"] = config;
    out["report"] = elmt::report_json(report);
    write_output(common.output, out.dump(2) + "\n");
  } else {
    write_output(common.output, csv_comment_config(config) + elmt::report_csv(report));
  }
  return 0;
}

int run_simulate(const CommonFlags& common, const std::string& scenario,
                 const std::string& spec_file, int n, const std::string& theta_text,
                 const std::string& method_name, double alpha, int v, int runs, int b_reps,
                 std::uint64_t seed) {
  Eigen::VectorXd theta;
  {
    std::vector<double> values;
    std::size_t pos = 0;
    while (pos <= theta_text.size()) {
      const std::size_t comma = theta_text.find(',', pos);
      const std::string tok = comma == std::string::npos ? theta_text.substr(pos)
                                                         : theta_text.substr(pos, comma - pos);
      try {
        values.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw CLI::ValidationError("--theta: cannot parse '" + tok + "'");
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    theta = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<int>(values.size()));
  }

  elmt::ScenarioSpec spec;
  if (!spec_file.empty()) {
    std::ifstream in(spec_file);
    if (!in) throw elmt::DataError("cannot open spec file '" + spec_file + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw elmt::DataError(std::string("spec file: ") + e.what());
    }
    auto parse_dist = [](const nlohmann::json& d) {
      const std::string kind = d.at("kind").get<std::string>();
      if (kind == "normal") return elmt::Dist::normal(d.at("mean"), d.at("var"));
      if (kind == "uniform") return elmt::Dist::uniform(d.at("lo"), d.at("hi"));
      if (kind == "gamma") return elmt::Dist::gamma(d.at("shape"), d.at("scale"));
      if (kind == "student_t") return elmt::Dist::student_t(d.at("df"));
      throw elmt::DataError("spec file: unknown distribution kind '" + kind + "'");
    };
    try {
      spec.id = j.value("id", "custom");
      spec.block_effect = parse_dist(j.at("block_effect"));
      for (const auto& e : j.at("errors")) spec.errors.push_back(parse_dist(e));
    } catch (const nlohmann::json::exception& e) {
      throw elmt::DataError(std::string("spec file: ") + e.what());
    }
    spec.n = n;
    spec.theta = theta;
    if (static_cast<int>(spec.errors.size()) != theta.size())
      throw elmt::DataError("spec file: errors count must match theta length");
  } else {
    if (!elmt::is_named_scenario(scenario))
      throw CLI::ValidationError("--scenario: unknown scenario '" + scenario + "'");
    spec = elmt::named_scenario(scenario, n, theta);
  }

  const elmt::MetricsReport report = elmt::evaluate(spec, elmt::parse_method(method_name), alpha,
                                                    v, runs, b_reps, seed, common.threads);
  if (report.runs_failed > 0)
    std::cerr << "warning: excluded " << report.runs_failed << " failed run(s)\n";

  nlohmann::ordered_json config = config_echo(common);
  config["scenario"] = spec.id;
  config["n"] = n;
  config["theta"] = theta_text;
  config["method"] = method_name;
  config["alpha"] = alpha;
  config["v"] = v;
  config["runs"] = runs;
  config["b_reps"] = b_reps;
  config["seed"] = seed;

  const std::string payload = csv_comment_config(config) + elmt::metrics_csv_header() + "\n" +
                              elmt::metrics_csv_row(report) + "\n";
  write_output(common.output, payload);
  return 0;
}

int run_design_info(const CommonFlags& common) {
  const elmt::BlockDesign design =
      elmt::read_csv_design_file(common.input, parse_policy(common.duplicate_policy));
  const elmt::DesignSummary summary = elmt::summarize(design);
  const elmt::Connectivity conn = elmt::connectivity(design);

  nlohmann::ordered_json out;
  out["config"] = config_echo(common);
  out["n_blocks"] = design.n_blocks();
  out["n_treatments"] = design.n_treatments();
  out["treatments"] = design.treatment_labels;
  out["block_sizes"] = std::vector<int>(summary.block_sizes.data(),
                                        summary.block_sizes.data() + summary.block_sizes.size());
  out["replication"] = std::vector<int>(summary.replication.data(),
                                        summary.replication.data() + summary.replication.size());
  nlohmann::ordered_json conc = nlohmann::ordered_json::array();
  for (int k = 0; k < summary.concurrence.rows(); ++k) {
    std::vector<int> row(summary.concurrence.cols());
    for (int l = 0; l < summary.concurrence.cols(); ++l) row[l] = summary.concurrence(k, l);
    conc.push_back(row);
  }
  out["concurrence"] = conc;
  out["min_rep_fraction"] = summary.min_rep_fraction;
  out["connected"] = conn.connected();
  out["components"] = conn.component;
  out["duplicate_warnings"] = design.duplicate_warnings;
  write_output(common.output, out.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Empirical-likelihood simultaneous inference for block designs"};
  app.require_subcommand(1);

  CommonFlags common;
  std::string contrasts_text = "pairwise";
  std::string method_name = "nb";
  std::string scenario = "S1-1";
  std::string spec_file;
  std::string theta_text = "0,0,0,0,0";
  double alpha = 0.05;
  int v = 1;
  int b_reps = 10000;
  int runs = 1000;
  int n = 50;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* cmd, bool needs_input) {
    auto* opt = cmd->add_option("--input", common.input, "design CSV (block,treatment,value)");
    if (needs_input) opt->required();
    cmd->add_option("--output", common.output, "output path (default stdout)");
    cmd->add_option("--format", common.format, "json or csv")
        ->check(CLI::IsMember({"json", "csv"}));
    cmd->add_option("--duplicate-policy", common.duplicate_policy, "error or average")
        ->check(CLI::IsMember({"error", "average"}));
    cmd->add_option("--threads", common.threads,
                    "worker count (0 = ELMT_THREADS or hardware); affects wall time only");
  };

  CLI::App* analyze = app.add_subcommand("analyze", "analyze a design CSV");
  add_common(analyze, true);
  analyze->add_option("--contrasts", contrasts_text, "contrast specification");
  analyze->add_option("--method", method_name, "amc or nb")
      ->check(CLI::IsMember({"amc", "nb"}));
  analyze->add_option("--alpha", alpha, "nominal level")
      ->check(CLI::Range(1e-9, 1.0 - 1e-9));
  analyze->add_option("--v", v, "generalized error level")->check(CLI::PositiveNumber);
  analyze->add_option("--b", b_reps, "calibration replicates")->check(CLI::PositiveNumber);
  analyze->add_option("--seed", seed, "random seed");

  CLI::App* simulate = app.add_subcommand("simulate", "run a scenario study");
  add_common(simulate, false);
  simulate->add_option("--scenario", scenario, "S1-1, S1-2, S2-1, S2-2, S3-1, S3-2");
  simulate->add_option("--spec-file", spec_file, "custom scenario JSON");
  simulate->add_option("--n", n, "number of blocks")->check(CLI::PositiveNumber);
  simulate->add_option("--theta", theta_text, "comma-separated treatment effects");
  simulate->add_option("--method", method_name, "amc or nb")
      ->check(CLI::IsMember({"amc", "nb"}));
  simulate->add_option("--alpha", alpha, "nominal level")
      ->check(CLI::Range(1e-9, 1.0 - 1e-9));
  simulate->add_option("--v", v, "generalized error level")->check(CLI::PositiveNumber);
  simulate->add_option("--S", runs, "simulation runs")->check(CLI::PositiveNumber);
  simulate->add_option("--b", b_reps, "calibration replicates")->check(CLI::PositiveNumber);
  simulate->add_option("--seed", seed, "random seed");

  CLI::App* info = app.add_subcommand("design-info", "summarize a design CSV");
  add_common(info, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (app.got_subcommand(analyze))
      return run_analyze(common, contrasts_text, method_name, alpha, v, b_reps, seed);
    if (app.got_subcommand(simulate))
      return run_simulate(common, scenario, spec_file, n, theta_text, method_name, alpha, v, runs,
                          b_reps, seed);
    return run_design_info(common);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const elmt::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const elmt::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}
