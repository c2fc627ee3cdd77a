// qualsynth command-line front end.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <sstream>

#include "qualsynth/error.hpp"
#include "qualsynth/io.hpp"
#include "qualsynth/pipeline.hpp"
#include "qualsynth/simgen.hpp"

namespace fs = std::filesystem;
using namespace qualsynth;

namespace {

struct CommonFlags {
  std::string config;
  std::string input;
  std::string output;
  std::optional<int> t0;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::vector<std::string> outcomes;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("-c,--config", f.config, "JSON run configuration");
  cmd->add_option("-i,--input", f.input, "Input panel file (overrides the config)");
  cmd->add_option("-o,--output", f.output, "Output directory (overrides the config)");
  cmd->add_option("--t0", f.t0, "Last pre-treatment year");
  cmd->add_option("--seed", f.seed, "Root random seed");
  cmd->add_option("--threads", f.threads, "Worker threads (0 = automatic)");
  cmd->add_option("--outcomes", f.outcomes, "Outcome columns to analyse");
}

RunConfig build_config(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config.empty()) {
    cfg = load_run_config(f.config);
  } else {
    if (f.input.empty()) throw Error(ErrorCode::InvalidConfig, "either --config or --input is required");
    if (!f.t0) throw Error(ErrorCode::InvalidConfig, "--t0 is required without --config");
    if (const char* env = std::getenv("QUALSYNTH_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
  }
  if (!f.input.empty()) {
    cfg.input = f.input;
    cfg.simgen.reset();
  }
  if (!f.output.empty()) cfg.output_dir = f.output;
  if (f.t0) cfg.t0 = *f.t0;
  if (f.seed) cfg.seed = cfg.sampler.seed = cfg.synth.seed = *f.seed;
  if (f.threads) cfg.threads = cfg.smoothing.threads = cfg.placebo.threads = *f.threads;
  if (!f.outcomes.empty()) cfg.outcomes = f.outcomes;
  return cfg;
}

int run_stages(const CommonFlags& flags, Stage last) {
  RunConfig cfg = build_config(flags);
  switch (last) {
    case Stage::Residualize: cfg.stages.residualize = true; break;
    case Stage::Smooth: cfg.stages.smooth = true; break;
    case Stage::Filter: cfg.stages.filter = true; break;
    case Stage::Synth: cfg.stages.synth = true; break;
    case Stage::Placebo: cfg.stages.synth = cfg.stages.placebo = true; break;
    default: break;
  }
  const auto result = run_pipeline(cfg, last);
  for (const auto& s : result.stages) {
    std::fprintf(stderr, "%-12s %-8s %8.2fs", s.stage.c_str(), s.status.c_str(), s.seconds);
    if (!s.message.empty()) std::fprintf(stderr, "  %s", s.message.c_str());
    std::fputc('\n', stderr);
  }
  if (!result.ok) {
    std::cerr << "qualsynth: " << result.error << '\n';
    return 1;
  }
  std::cout << "wrote " << result.files.size() + 1 << " files to " << cfg.output_dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic-control analysis of latent regional quality series"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(QUALSYNTH_VERSION));

  CommonFlags flags;
  struct StageCommand {
    const char* name;
    const char* help;
    Stage last;
  };
  const StageCommand stage_commands[] = {
      {"ingest", "Validate the input panel and write a normalized copy", Stage::Ingest},
      {"residualize", "Run up to the residualization stage", Stage::Residualize},
      {"smooth", "Run up to the posterior smoothing stage", Stage::Smooth},
      {"filter", "Run up to the trend filter stage", Stage::Filter},
      {"synth", "Run up to the synthetic control stage", Stage::Synth},
      {"placebo", "Run up to the placebo inference stage", Stage::Placebo},
      {"run", "Run every enabled stage", Stage::Report},
  };
  std::vector<std::pair<CLI::App*, Stage>> stage_apps;
  for (const auto& sc : stage_commands) {
    auto* cmd = app.add_subcommand(sc.name, sc.help);
    add_common(cmd, flags);
    stage_apps.emplace_back(cmd, sc.last);
  }

  std::string sim_config, sim_out = "simgen_out";
  std::optional<std::uint64_t> sim_seed;
  std::optional<double> sim_effect, sim_noise, sim_link;
  std::optional<int> sim_treated, sim_donors, sim_outcomes;
  auto* sim = app.add_subcommand("simgen", "Generate a synthetic panel with known ground truth");
  sim->add_option("-c,--config", sim_config, "JSON generator configuration");
  sim->add_option("-o,--output", sim_out, "Output directory for panel.csv and truth.json");
  sim->add_option("--seed", sim_seed, "Random seed");
  sim->add_option("--effect", sim_effect, "Constant post-treatment effect");
  sim->add_option("--noise-sd", sim_noise, "Idiosyncratic noise sd");
  sim->add_option("--covariate-link", sim_link, "Strength of the covariate-loading link");
  sim->add_option("--treated", sim_treated, "Number of treated regions");
  sim->add_option("--donors", sim_donors, "Number of donor regions");
  sim->add_option("--outcomes", sim_outcomes, "Number of outcome series");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Build plot-ready files and tables from a finished run");
  report->add_option("run_dir", report_dir, "Run output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [cmd, last] : stage_apps)
      if (cmd->parsed()) return run_stages(flags, last);

    if (sim->parsed()) {
      DgpConfig cfg;
      if (!sim_config.empty()) {
        std::ifstream in(sim_config);
        if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + sim_config);
        std::stringstream ss;
        ss << in.rdbuf();
        cfg = dgp_from_json(ss.str());
      }
      if (sim_seed) cfg.seed = *sim_seed;
      if (sim_noise) cfg.noise_sd = *sim_noise;
      if (sim_link) cfg.covariate_link = *sim_link;
      if (sim_treated) cfg.n_treated = *sim_treated;
      if (sim_donors) cfg.n_donors = *sim_donors;
      if (sim_outcomes) cfg.n_outcomes = *sim_outcomes;
      if (sim_effect) cfg.set_constant_effect(*sim_effect);
      const auto out = generate(cfg);
      fs::create_directories(sim_out);
      save_panel(out.panel, fs::path(sim_out) / "panel.csv");
      write_truth(out.truth, fs::path(sim_out) / "truth.json");
      std::cout << "wrote " << (fs::path(sim_out) / "panel.csv").string() << " and truth.json\n";
      return 0;
    }

    if (report->parsed()) {
      const auto files = write_report(report_dir);
      std::cout << "wrote " << files.size() << " report files to " << (fs::path(report_dir) / "report").string()
                << '\n';
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "qualsynth: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "qualsynth: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
