#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "qualsynth/error.hpp"
#include "qualsynth/io.hpp"
#include "qualsynth/pipeline.hpp"

using namespace qualsynth;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("qualsynth_pipeline_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A small simulated run: 3 treated, 8 donors, 10 years, one outcome.
std::string small_config(const fs::path& out, const std::string& extra = "") {
  std::ostringstream j;
  j << R"({"simgen": {"n_treated": 3, "n_donors": 8, "n_years": 10, "first_year": 2000, "t0": 2005,
              "n_outcomes": 1, "noise_sd": 0.05, "planted_effect": -0.3, "seed": 5},
      "output_dir": ")"
    << out.generic_string() << R"(",
      "seed": 11,
      "sampler": {"iterations": 1200, "burn_in": 200},
      "synth": {"evaluation_budget": 150, "random_starts": 1},
      "placebo": {"subsets": 50})"
    << extra << "}";
  return j.str();
}

std::map<std::string, std::string> files_except_manifest(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "manifest.json" || rel == "config.json") continue;
    out[rel] = slurp(e.path());
  }
  return out;
}

ErrorCode code_of(auto f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoFailure;
}

}  // namespace

TEST_CASE("config parsing and defaults") {
  const auto cfg = parse_run_config(R"({"input": "panel.csv", "t0": 2007})", "/data");
  CHECK(cfg.input == fs::path("/data/panel.csv"));
  CHECK(*cfg.t0 == 2007);
  CHECK(cfg.phi == 6.25);
  CHECK(cfg.sampler.iterations == 12500);
  CHECK(cfg.sampler.burn_in == 2500);
  CHECK(cfg.stages.residualize);
  CHECK(cfg.stages.report);
  CHECK(cfg.synth_series == SynthSeries::Auto);

  const auto sim = parse_run_config(R"({"simgen": {"t0": 2004}, "phi": "annual", "seed": 9})");
  CHECK(*sim.t0 == 2004);
  CHECK(sim.synth.seed == 9);
  CHECK(sim.sampler.seed == 9);

  // Echo and re-parse give the same canonical text.
  const auto echo = run_config_to_json(cfg);
  CHECK(run_config_to_json(parse_run_config(echo)) == echo);
}

TEST_CASE("config errors name the field") {
  auto message = [](const std::string& text) {
    try {
      parse_run_config(text);
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message(R"({"input": "a.csv", "t0": 2007, "colour": 1})").find("'colour'") != std::string::npos);
  CHECK(message(R"({"input": "a.csv", "t0": 2007, "synth": {"budget": 1}})").find("'synth.budget'") !=
        std::string::npos);
  CHECK(message(R"({"input": "a.csv"})").find("'t0'") != std::string::npos);
  CHECK(message(R"({"input": "a.csv", "t0": "x"})").find("'t0'") != std::string::npos);
  CHECK(message(R"({"input": "a.csv", "t0": 2007, "phi": -1})").find("NegativePhi") == 0);
  CHECK(code_of([] { parse_run_config("{not json"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_run_config(R"({"t0": 2007})"); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([] { parse_run_config(R"({"input": "a", "simgen": {}, "t0": 2007})"); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([] { parse_run_config(R"({"input": "a", "t0": 2007, "placebo": {"level": 0}})"); }) ==
        ErrorCode::InvalidConfig);
  CHECK(code_of([] { parse_run_config(R"({"input": "a", "t0": 2007, "sampler": {"statistic": "mode"}})"); }) ==
        ErrorCode::InvalidConfig);
  CHECK(code_of([] { stage_from_name("plot"); }) == ErrorCode::InvalidConfig);
  CHECK(stage_from_name("placebo") == Stage::Placebo);
}

TEST_CASE("full run: artifacts, manifest and determinism") {
  const auto a = scratch("a"), b = scratch("b");
  const auto ra = run_pipeline(parse_run_config(small_config(a)));
  REQUIRE_MESSAGE(ra.ok, ra.error);
  for (const auto& s : ra.stages) CHECK(s.status == "ok");
  CHECK(ra.stages.size() == 7);

  for (const char* f : {"ingest/panel.csv", "ingest/truth.json", "residualize/voice_accountability_residuals.csv",
                        "smooth/voice_accountability_posterior.csv", "filter/voice_accountability_trend.csv", "synth/solutions.json",
                        "synth/analysis.json", "placebo/inference.json", "report/table1_voice_accountability_balance.txt",
                        "report/table2_did.txt", "report/table3_equality.txt", "report/fig6_donor_frequency.csv",
                        "report/fig7_voice_accountability_pvalues.csv", "report/fig4_voice_accountability_average_gap.csv",
                        "report/fig5_voice_accountability_T01.csv", "report/README.md"})
    CHECK_MESSAGE(fs::exists(a / f), f);

  // The manifest lists every file in the output directory with its digest.
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest.at("ok").get<bool>());
  CHECK(manifest.at("input").at("sha256").get<std::string>().size() == 64);
  CHECK(manifest.at("stages").size() == 7);
  std::set<std::string> listed;
  for (const auto& f : manifest.at("files")) {
    const auto path = f.at("path").get<std::string>();
    listed.insert(path);
    CHECK(f.at("sha256").get<std::string>() == sha256_file(a / path));
  }
  std::set<std::string> on_disk;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) on_disk.insert(fs::relative(e.path(), a).generic_string());
  on_disk.erase("manifest.json");
  CHECK(listed == on_disk);

  // A second run into another directory writes byte-identical outputs.
  const auto rb = run_pipeline(parse_run_config(small_config(b)));
  REQUIRE(rb.ok);
  const auto fa = files_except_manifest(a), fb = files_except_manifest(b);
  CHECK(fa.size() == fb.size());
  for (const auto& [rel, text] : fa) CHECK_MESSAGE((fb.count(rel) && fb.at(rel) == text), rel);

  // Table 2 carries coefficient, standard error, bounds and N rows.
  const auto table2 = slurp(a / "report/table2_did.txt");
  for (const char* row : {"Treated x post", "95% confidence bounds", "N ", "voice_accountability"})
    CHECK_MESSAGE(table2.find(row) != std::string::npos, row);
  CHECK(slurp(a / "report/table1_voice_accountability_balance.txt").find("Outcome variable in 2000") != std::string::npos);

  // The report can be rebuilt from the artifacts alone.
  const auto before = slurp(a / "report/table3_equality.txt");
  fs::remove_all(a / "report");
  const auto files = write_report(a);
  CHECK(!files.empty());
  CHECK(slurp(a / "report/table3_equality.txt") == before);

  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("skipped placebo stage") {
  const auto dir = scratch("noplacebo");
  const auto r = run_pipeline(parse_run_config(small_config(dir, R"(, "stages": {"placebo": false, "smooth": false})")));
  REQUIRE_MESSAGE(r.ok, r.error);
  CHECK(r.stages[2].status == "skipped");
  CHECK(r.stages[5].status == "skipped");
  CHECK(!fs::exists(dir / "placebo"));
  CHECK(!fs::exists(dir / "report/fig7_voice_accountability_pvalues.csv"));
  CHECK(!fs::exists(dir / "report/table2_did.txt"));
  CHECK(fs::exists(dir / "report/fig4_voice_accountability_average_gap.csv"));
  CHECK(slurp(dir / "report/README.md").find("Placebo stage skipped") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("single treated unit gets its own path file") {
  const auto dir = scratch("single");
  auto text = small_config(dir, R"(, "stages": {"smooth": false})");
  text.replace(text.find("\"n_treated\": 3"), 14, "\"n_treated\": 1");
  const auto r = run_pipeline(parse_run_config(text));
  REQUIRE_MESSAGE(r.ok, r.error);
  CHECK(fs::exists(dir / "report/fig5_voice_accountability_T01.csv"));
  CHECK(!fs::exists(dir / "report/fig5_voice_accountability_T02.csv"));
  fs::remove_all(dir);
}

TEST_CASE("stage prefix and failures") {
  SUBCASE("running up to synth writes nothing later") {
    const auto dir = scratch("prefix");
    const auto r = run_pipeline(parse_run_config(small_config(dir, R"(, "stages": {"smooth": false})")), Stage::Synth);
    REQUIRE(r.ok);
    CHECK(r.stages.size() == 5);
    CHECK(fs::exists(dir / "synth/solutions.json"));
    CHECK(!fs::exists(dir / "placebo"));
    CHECK(!fs::exists(dir / "report"));
    fs::remove_all(dir);
  }
  SUBCASE("t0 outside the data years") {
    const auto dir = scratch("badt0");
    const auto r = run_pipeline(parse_run_config(small_config(dir, R"(, "t0": 2009)")));
    CHECK(!r.ok);
    REQUIRE(r.stages.size() == 1);
    CHECK(r.stages[0].status == "failed");
    CHECK(r.error.find("[stage ingest]") == 0);
    CHECK(r.error.find("NoPostPeriod") != std::string::npos);
    CHECK(r.error.find("'t0'") != std::string::npos);
    CHECK(!nlohmann::json::parse(slurp(dir / "manifest.json")).at("ok").get<bool>());
    fs::remove_all(dir);
  }
  SUBCASE("t0 before the data years") {
    const auto dir = scratch("badt0b");
    const auto r = run_pipeline(parse_run_config(small_config(dir, R"(, "t0": 1990)")));
    CHECK(!r.ok);
    CHECK(r.error.find("NoPrePeriod") != std::string::npos);
    CHECK(r.error.find("'t0'") != std::string::npos);
    fs::remove_all(dir);
  }
  SUBCASE("missing input file") {
    const auto dir = scratch("noinput");
    auto cfg = parse_run_config(R"({"input": "/nonexistent/panel.csv", "t0": 2007})");
    cfg.output_dir = dir;
    const auto r = run_pipeline(cfg);
    CHECK(!r.ok);
    CHECK(r.error.find("[stage ingest]") == 0);
    fs::remove_all(dir);
  }
  SUBCASE("series that needs a disabled stage") {
    const auto dir = scratch("series");
    auto text = small_config(dir, R"(, "stages": {"smooth": false})");
    text.replace(text.find("\"synth\": {"), 10, "\"synth\": {\"series\": \"smoothed\", ");
    const auto r = run_pipeline(parse_run_config(text));
    CHECK(!r.ok);
    CHECK(r.error.find("[stage synth]") == 0);
    fs::remove_all(dir);
  }
}

TEST_CASE("report needs the run artifacts") {
  const auto dir = scratch("empty");
  fs::create_directories(dir);
  CHECK(code_of([&] { write_report(dir); }) == ErrorCode::MissingArtifact);
  fs::remove_all(dir);
}
