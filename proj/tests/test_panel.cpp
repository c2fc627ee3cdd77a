#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "qualsynth/error.hpp"
#include "qualsynth/io.hpp"
#include "qualsynth/panel.hpp"
#include "qualsynth/simgen.hpp"

using namespace qualsynth;

namespace {

std::string small_panel(int n_regions, int first, int last, int n_treated) {
  std::ostringstream s;
  s << "region,name,country,treated,year,rule_of_law,latitude,landlocked\n";
  for (int r = 0; r < n_regions; ++r)
    for (int y = first; y <= last; ++y)
      s << "R" << r << ",Region " << r << ',' << (r < n_treated ? "UA" : "PL") << ',' << (r < n_treated ? 1 : 0) << ','
        << y << ',' << 0.1 * r + 0.01 * (y - first) << ',' << 45 + r << ',' << (r % 2) << '\n';
  return s.str();
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoFailure;
}

}  // namespace

TEST_CASE("complete small file gives the expected cell count") {
  const auto ds = parse_panel(small_panel(3, 2000, 2003, 1), ColumnSchema{}, 2001);
  CHECK(ds.n_regions() == 3);
  CHECK(ds.n_years() == 4);
  CHECK(ds.n_outcomes() == 1);
  CHECK(ds.cells().size() == 12);
  CHECK(ds.value(2, 0, 2003) == doctest::Approx(0.23));
  CHECK(ds.covariate(1, "latitude").value() == 46.0);
}

TEST_CASE("missing region-year row names the cell") {
  auto text = small_panel(3, 2000, 2003, 1);
  const std::string row = "R1,Region 1,PL,0,2002,";
  const auto pos = text.find(row);
  REQUIRE(pos != std::string::npos);
  text.erase(pos, text.find('\n', pos) - pos + 1);
  try {
    parse_panel(text, ColumnSchema{}, 2001);
    FAIL("expected MissingCell");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingCell);
    CHECK(std::string(e.what()).find("R1") != std::string::npos);
    CHECK(std::string(e.what()).find("2002") != std::string::npos);
  }
}

TEST_CASE("ingestion errors") {
  SUBCASE("duplicate row") {
    auto text = small_panel(3, 2000, 2002, 1);
    text += "R0,Region 0,UA,1,2000,0,45,0\n";
    CHECK(code_of([&] { parse_panel(text, ColumnSchema{}, 2001); }) == ErrorCode::DuplicateRow);
  }
  SUBCASE("non-finite value") {
    auto text = small_panel(3, 2000, 2002, 1);
    const std::string row = "R2,Region 2,PL,0,2001,0.21,";
    const auto pos = text.find(row);
    REQUIRE(pos != std::string::npos);
    text.replace(pos, row.size(), "R2,Region 2,PL,0,2001,nan,");
    CHECK(code_of([&] { parse_panel(text, ColumnSchema{}, 2001); }) == ErrorCode::NonFinite);
  }
  SUBCASE("time-varying covariate") {
    auto text = small_panel(3, 2000, 2002, 1);
    const std::string row = "R2,Region 2,PL,0,2001,0.21,47,";
    const auto pos = text.find(row);
    REQUIRE(pos != std::string::npos);
    text.replace(pos, row.size(), "R2,Region 2,PL,0,2001,0.21,99,");
    CHECK(code_of([&] { parse_panel(text, ColumnSchema{}, 2001); }) == ErrorCode::InconsistentCovariate);
  }
  SUBCASE("year gap") {
    std::string text = "region,country,treated,year,rule_of_law\n";
    for (int r = 0; r < 3; ++r)
      for (int y : {2000, 2001, 2003}) text += "R" + std::to_string(r) + ",X," + (r == 0 ? "1" : "0") + "," + std::to_string(y) + ",1\n";
    CHECK(code_of([&] { parse_panel(text, ColumnSchema{}, 2001); }) == ErrorCode::NonContiguousYears);
  }
  SUBCASE("missing file") {
    CHECK(code_of([&] { ingest_panel("/nonexistent/panel.csv", ColumnSchema{}, 2001); }) == ErrorCode::IoFailure);
  }
}

TEST_CASE("validate_treatment counts and failures") {
  const auto ds = parse_panel(small_panel(5, 1996, 2020, 2), ColumnSchema{}, 2007);
  const auto s = validate_treatment(ds);
  CHECK(s == TreatmentSummary{2, 3, 12, 13});

  CHECK(code_of([&] { validate_treatment(ds.with_t0(1996)); }) == ErrorCode::NoPrePeriod);
  CHECK(code_of([&] { validate_treatment(ds.with_t0(1990)); }) == ErrorCode::NoPrePeriod);
  CHECK(code_of([&] { validate_treatment(ds.with_t0(2020)); }) == ErrorCode::NoPostPeriod);
  const auto all_treated = parse_panel(small_panel(3, 2000, 2003, 3), ColumnSchema{}, 2001);
  CHECK(code_of([&] { validate_treatment(all_treated); }) == ErrorCode::EmptyDonorPool);
  const auto one_donor = parse_panel(small_panel(3, 2000, 2003, 2), ColumnSchema{}, 2001);
  CHECK(code_of([&] { validate_treatment(one_donor); }) == ErrorCode::EmptyDonorPool);
  const auto none_treated = parse_panel(small_panel(3, 2000, 2003, 0), ColumnSchema{}, 2001);
  CHECK(code_of([&] { validate_treatment(none_treated); }) == ErrorCode::NoTreatedUnits);
}

TEST_CASE("full-scale shape: 221 regions x 25 years") {
  const auto ds = parse_panel(small_panel(221, 1996, 2020, 26), ColumnSchema{}, 2007);
  CHECK(ds.n_regions() * ds.n_years() == 5525);
  CHECK(validate_treatment(ds) == TreatmentSummary{26, 195, 12, 13});
}

TEST_CASE("panel round-trips through its text form bit-exactly") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    DgpConfig cfg;
    cfg.n_treated = 3;
    cfg.n_donors = 7;
    cfg.n_outcomes = 6;
    cfg.seed = seed;
    const auto ds = generate(cfg).panel;
    const auto again = parse_panel(panel_to_csv(ds), ColumnSchema{}, ds.t0());
    CHECK(again == ds);
    CHECK(again.cells().size() == ds.n_regions() * ds.n_years() * ds.n_outcomes());
  }
}

TEST_CASE("gap series round-trip and RMSE") {
  const RegionId r{"A", "A", "X", true};
  const auto g = make_gap_series(r, OutcomeKind{"rule_of_law"}, YearSeries(2000, {0.1, -0.2, 1.0 / 3.0, 0.5}), 2001);
  CHECK(g.rmse_pre == doctest::Approx(std::sqrt((0.01 + 0.04) / 2)));
  CHECK(g.rmse_post == doctest::Approx(std::sqrt((1.0 / 9.0 + 0.25) / 2)));
  const std::vector<GapSeries> v{g};
  const auto back = gaps_from_csv(gaps_to_csv(v), 2001, true);
  REQUIRE(back.size() == 1);
  CHECK(back[0].values == g.values);
  CHECK(back[0].rmse_pre == g.rmse_pre);
  CHECK(back[0].rmse_post == g.rmse_post);
}

TEST_CASE("solution file lists donors by descending weight") {
  SynthSolution s;
  s.treated = RegionId{"T", "T", "UA", true};
  s.outcome = OutcomeKind{"rule_of_law"};
  s.t0 = 2001;
  s.weights.donors = {"B", "A", "C"};
  s.weights.weights = {0.3, 0.5, 0.2};
  s.observed = s.synthetic_path = YearSeries(2000, {1.0, 2.0, 3.0});
  s.gaps = make_gap_series(s.treated, s.outcome, YearSeries(2000, {0.0, 0.1, 0.2}), 2001);
  const std::vector<SynthSolution> v{s};
  const auto text = solutions_to_json(v);
  const auto a = text.find("\"A\""), b = text.find("\"B\""), c = text.find("\"C\"");
  CHECK(a < b);
  CHECK(b < c);
  const auto back = solutions_from_json(text);
  REQUIRE(back.size() == 1);
  CHECK(back[0].weights.weight_of("A") == 0.5);
  CHECK(back[0].gaps.values == s.gaps.values);
}

TEST_CASE("sha256 of a known string") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
