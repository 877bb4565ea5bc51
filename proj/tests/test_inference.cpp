#include <cmath>

#include "doctest.h"
#include "elmt/errors.hpp"
#include "elmt/inference.hpp"
#include "elmt/simulate.hpp"
#include "helpers.hpp"

using namespace elmt;
using namespace elmt::test;

TEST_SUITE_BEGIN("inference");

TEST_CASE("pairwise expansion") {
  CHECK(pairwise(2).size() == 1);
  CHECK(pairwise(2)[0].label == "t2 - t1");
  CHECK(pairwise(2)[0].coeffs[0] == doctest::Approx(-1.0));
  CHECK(pairwise(2)[0].coeffs[1] == doctest::Approx(1.0));
  CHECK(pairwise(5).size() == 10);
  CHECK(pairwise(4).size() == 6);
  // Lexicographic in (k, l): first contrasts touch t1.
  const std::vector<Contrast> cs = pairwise(4);
  CHECK(cs[0].label == "t2 - t1");
  CHECK(cs[1].label == "t3 - t1");
  CHECK(cs[2].label == "t4 - t1");
  CHECK(cs[3].label == "t3 - t2");
}

TEST_CASE("contrast mini-language") {
  const BlockDesign d = design_from({
      {"b1", "ctrl", 1.0}, {"b1", "low", 2.0},
      {"b2", "ctrl", 0.5}, {"b2", "high", 3.0},
      {"b3", "low", 2.5}, {"b3", "high", 2.0},
  });
  SUBCASE("pairwise keyword uses design labels") {
    const auto specs = parse_contrasts("pairwise", d);
    CHECK(specs.size() == 3);
    CHECK(specs[0].contrast.label == "low - ctrl");
    CHECK(specs[1].contrast.label == "high - ctrl");
    CHECK(specs[2].contrast.label == "high - low");
  }
  SUBCASE("label pair") {
    const auto specs = parse_contrasts("high - ctrl", d);
    REQUIRE(specs.size() == 1);
    CHECK(specs[0].contrast.coeffs[0] == doctest::Approx(-1.0));
    CHECK(specs[0].contrast.coeffs[2] == doctest::Approx(1.0));
    CHECK(specs[0].rhs == 0.0);
  }
  SUBCASE("coefficient list with null value") {
    const auto specs = parse_contrasts("[1,-2,1] = 0.5; pairwise", d);
    REQUIRE(specs.size() == 4);
    CHECK(specs[0].contrast.coeffs[1] == doctest::Approx(-2.0));
    CHECK(specs[0].rhs == doctest::Approx(0.5));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(parse_contrasts("nope - ctrl", d), DataError);
    CHECK_THROWS_AS(parse_contrasts("[1,2]", d), DataError);
    CHECK_THROWS_AS(parse_contrasts("", d), DataError);
    CHECK_THROWS_AS(parse_contrasts("ctrl - ctrl", d), DataError);
  }
}

TEST_CASE("identical treatment values give no rejections") {
  const BlockDesign d = design_from({
      {"b1", "t1", 1.0}, {"b1", "t2", 1.0},
      {"b2", "t1", 1.0}, {"b2", "t3", 1.0},
      {"b3", "t2", 1.0}, {"b3", "t3", 1.0},
      {"b4", "t1", 1.0}, {"b4", "t2", 1.0},
      {"b5", "t2", 1.0}, {"b5", "t3", 1.0},
      {"b6", "t1", 1.0}, {"b6", "t3", 1.0},
  });
  for (Method method : {Method::amc, Method::nb}) {
    AnalysisRequest req;
    req.design = d;
    req.contrasts = parse_contrasts("pairwise", d);
    req.method = method;
    req.b_reps = 200;
    req.seed = 5;
    const AnalysisReport report = run_analysis(req);
    for (const auto& row : report.rows) {
      CHECK(row.statistic == doctest::Approx(0.0));
      CHECK_FALSE(row.reject);
      CHECK(row.sci_lo <= 0.0);
      CHECK(row.sci_hi >= 0.0);
      CHECK(row.adj_p == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("large statistic rejects at the chi-square cutoff") {
  // Two clearly separated treatments, complete design, large n.
  std::vector<Record> records;
  rng::Stream stream(2, 90, 0);
  for (int i = 0; i < 60; ++i) {
    const std::string b = "b" + std::to_string(i + 1);
    records.push_back({b, "t1", 0.0 + 0.3 * stream.normal()});
    records.push_back({b, "t2", 1.5 + 0.3 * stream.normal()});
  }
  AnalysisRequest req;
  req.design = ingest(records, DuplicatePolicy::error);
  req.contrasts = parse_contrasts("pairwise", req.design);
  req.method = Method::amc;
  req.b_reps = 20000;
  req.seed = 17;
  const AnalysisReport report = run_analysis(req);
  REQUIRE(report.rows.size() == 1);
  CHECK(report.rows[0].statistic > 3.85);
  CHECK(report.rows[0].reject);
  CHECK(report.cutoff == doctest::Approx(chisq1_quantile(0.95)).epsilon(0.03));
  // Interval excludes zero, in line with the rejection.
  CHECK(report.rows[0].sci_lo > 0.0);
}

TEST_CASE("pairwise analysis of four treatments yields six ordered rows") {
  BlockDesign d = generate_pair_design(4, 4);
  rng::Stream stream(31, 91, 0);
  for (double& v : d.matrix.value) v = stream.normal();
  AnalysisRequest req;
  req.design = d;
  req.contrasts = parse_contrasts("pairwise", d);
  req.method = Method::nb;
  req.b_reps = 300;
  req.seed = 23;
  const AnalysisReport report = run_analysis(req);
  REQUIRE(report.rows.size() == 6);
  CHECK(report.rows[0].label == "t2 - t1");
  CHECK(report.rows[5].label == "t4 - t3");
}

TEST_CASE("compatibility of tests and intervals under fuzzing") {
  rng::Stream stream(47, 92, 0);
  int analyses = 0;
  for (int rep = 0; rep < 30 && analyses < 20; ++rep) {
    BlockDesign d = generate_pair_design(3, 2 + static_cast<int>(stream.below(3)));
    for (double& v : d.matrix.value) v = stream.uniform(-2.0, 2.0);
    AnalysisRequest req;
    req.design = d;
    req.contrasts = parse_contrasts("pairwise", d);
    req.method = rep % 2 == 0 ? Method::amc : Method::nb;
    req.alpha = 0.02 + 0.1 * stream.uniform01();
    req.b_reps = 150;
    req.seed = 1000 + rep;
    try {
      const AnalysisReport report = run_analysis(req);
      ++analyses;
      for (const auto& row : report.rows) {
        CHECK(row.reject == (row.statistic > report.cutoff));
        // Interval endpoints respect rejection up to endpoint tolerance.
        const double band = 3e-6 * (1.0 + std::abs(row.estimate));
        const bool strictly_inside =
            row.rhs >= row.sci_lo + band && row.rhs <= row.sci_hi - band;
        const bool loosely_inside =
            row.rhs >= row.sci_lo - band && row.rhs <= row.sci_hi + band;
        if (row.reject)
          CHECK_FALSE(strictly_inside);
        else
          CHECK(loosely_inside);
      }
    } catch (const NumericalError&) {
      continue;  // tiny resamples can legitimately fail to calibrate
    }
  }
  CHECK(analyses >= 15);
}

TEST_CASE("relabeling treatments permutes rows but not the statistics") {
  rng::Stream stream(53, 93, 0);
  std::vector<Record> records;
  for (int i = 0; i < 12; ++i) {
    const std::string b = "b" + std::to_string(i + 1);
    const int k = i % 3;
    const int l = (i + 1) % 3;
    records.push_back({b, "t" + std::to_string(k + 1), stream.normal()});
    records.push_back({b, "t" + std::to_string(l + 1), stream.normal()});
  }
  std::vector<Record> renamed = records;
  for (Record& r : renamed) {
    if (r.treatment == "t1") r.treatment = "zz";
    else if (r.treatment == "t2") r.treatment = "aa";
    else r.treatment = "mm";
  }

  AnalysisRequest req;
  req.design = ingest(records, DuplicatePolicy::error);
  req.contrasts = parse_contrasts("pairwise", req.design);
  req.method = Method::amc;
  req.b_reps = 500;
  req.seed = 3;
  const AnalysisReport a = run_analysis(req);

  AnalysisRequest req2;
  req2.design = ingest(renamed, DuplicatePolicy::error);
  req2.contrasts = parse_contrasts("pairwise", req2.design);
  req2.method = Method::amc;
  req2.b_reps = 500;
  req2.seed = 3;
  const AnalysisReport b = run_analysis(req2);

  // Multisets of statistics agree to solver tolerance.
  std::vector<double> sa, sb;
  for (const auto& row : a.rows) sa.push_back(row.statistic);
  for (const auto& row : b.rows) sb.push_back(row.statistic);
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  for (std::size_t i = 0; i < sa.size(); ++i)
    CHECK(sa[i] == doctest::Approx(sb[i]).epsilon(1e-6));
}

TEST_CASE("rejections under v=1 are a subset of rejections under larger v") {
  BlockDesign d = generate_pair_design(4, 5);
  rng::Stream stream(59, 94, 0);
  for (int c = 0; c < d.matrix.cells(); ++c)
    d.matrix.value[c] = (d.matrix.col[c] == 0 ? 1.5 : 0.0) + 0.8 * stream.normal();
  AnalysisRequest req;
  req.design = d;
  req.contrasts = parse_contrasts("pairwise", d);
  req.method = Method::amc;
  req.b_reps = 2000;
  req.seed = 7;
  req.v = 1;
  const AnalysisReport r1 = run_analysis(req);
  req.v = 2;
  const AnalysisReport r2 = run_analysis(req);
  CHECK(r2.cutoff <= r1.cutoff);
  for (std::size_t j = 0; j < r1.rows.size(); ++j)
    if (r1.rows[j].reject) CHECK(r2.rows[j].reject);
}

TEST_CASE("disconnected contrasts are rejected with a data error") {
  const BlockDesign d = design_from({
      {"b1", "t1", 1.0}, {"b1", "t2", 2.0},
      {"b2", "t1", 0.0}, {"b2", "t2", 2.5},
      {"b3", "t3", 1.0}, {"b3", "t4", 0.5},
      {"b4", "t3", 1.5}, {"b4", "t4", 1.0},
  });
  AnalysisRequest req;
  req.design = d;
  req.contrasts = parse_contrasts("t3 - t1", d);
  req.method = Method::amc;
  req.b_reps = 200;
  CHECK_THROWS_AS(run_analysis(req), DataError);

  // Within-component contrasts still work.
  req.contrasts = parse_contrasts("t2 - t1", d);
  CHECK_NOTHROW(run_analysis(req));
}

TEST_CASE("report serializations carry identical numbers") {
  BlockDesign d = generate_pair_design(3, 4);
  rng::Stream stream(61, 95, 0);
  for (double& v : d.matrix.value) v = stream.normal();
  AnalysisRequest req;
  req.design = d;
  req.contrasts = parse_contrasts("pairwise", d);
  req.method = Method::nb;
  req.b_reps = 200;
  req.seed = 11;
  const AnalysisReport report = run_analysis(req);
  const nlohmann::ordered_json j = report_json(report);
  const std::string csv = report_csv(report);

  // Parse the CSV back and compare against the JSON rows.
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);  // header
  int idx = 0;
  while (std::getline(lines, line)) {
    std::vector<std::string> fields;
    std::size_t pos = 0;
    for (;;) {
      const auto comma = line.find(',', pos);
      if (comma == std::string::npos) {
        fields.push_back(line.substr(pos));
        break;
      }
      fields.push_back(line.substr(pos, comma - pos));
      pos = comma + 1;
    }
    REQUIRE(fields.size() == 9);
    const auto& row = j["hypotheses"][idx];
    CHECK(fields[0] == row["label"].get<std::string>());
    CHECK(std::stod(fields[1]) == doctest::Approx(row["estimate"].get<double>()).epsilon(1e-15));
    CHECK(std::stod(fields[2]) == doctest::Approx(row["statistic"].get<double>()).epsilon(1e-15));
    CHECK(std::stod(fields[3]) == doctest::Approx(row["adj_p"].get<double>()).epsilon(1e-15));
    CHECK((fields[4] == "true") == row["reject"].get<bool>());
    ++idx;
  }
  CHECK(idx == 3);
}

TEST_CASE("determinism across worker counts") {
  BlockDesign d = generate_pair_design(4, 4);
  rng::Stream stream(67, 96, 0);
  for (double& v : d.matrix.value) v = stream.normal();
  for (Method method : {Method::amc, Method::nb}) {
    AnalysisRequest req;
    req.design = d;
    req.contrasts = parse_contrasts("pairwise", d);
    req.method = method;
    req.b_reps = 300;
    req.seed = 29;
    const AnalysisReport one = run_analysis(req, 1);
    const AnalysisReport eight = run_analysis(req, 8);
    const std::string ja = report_json(one).dump();
    const std::string jb = report_json(eight).dump();
    CHECK(ja == jb);
  }
}

TEST_SUITE_END();
