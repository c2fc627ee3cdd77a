#include "qualsynth/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <json.hpp>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "qualsynth/error.hpp"
#include "qualsynth/io.hpp"
#include "qualsynth/parallel.hpp"
#include "qualsynth/residualizer.hpp"
#include "qualsynth/trend_filter.hpp"
#include "report.hpp"
#include "text.hpp"

#ifndef QUALSYNTH_VERSION
#define QUALSYNTH_VERSION "0.0.0"
#endif

namespace qualsynth {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using detail::format_double;

namespace {

constexpr Stage kStages[] = {Stage::Ingest, Stage::Residualize, Stage::Smooth, Stage::Filter,
                             Stage::Synth,  Stage::Placebo,     Stage::Report};

}  // namespace

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::Residualize: return "residualize";
    case Stage::Smooth: return "smooth";
    case Stage::Filter: return "filter";
    case Stage::Synth: return "synth";
    case Stage::Placebo: return "placebo";
    case Stage::Report: return "report";
  }
  return "unknown";
}

Stage stage_from_name(std::string_view name) {
  for (Stage s : kStages)
    if (stage_name(s) == name) return s;
  throw Error(ErrorCode::InvalidConfig, "unknown stage '" + std::string(name) + "'");
}

bool StageToggles::enabled(Stage s) const {
  switch (s) {
    case Stage::Ingest: return true;
    case Stage::Residualize: return residualize;
    case Stage::Smooth: return smooth;
    case Stage::Filter: return filter;
    case Stage::Synth: return synth;
    case Stage::Placebo: return placebo;
    case Stage::Report: return report;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw Error(ErrorCode::InvalidConfig, "unknown config field '" + std::string(where) + key + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::InvalidConfig, "config field '" + std::string(where) + key + "' has the wrong type");
  }
}

std::string_view series_name(SynthSeries s) {
  switch (s) {
    case SynthSeries::Auto: return "auto";
    case SynthSeries::Observed: return "observed";
    case SynthSeries::Residual: return "residual";
    case SynthSeries::Smoothed: return "smoothed";
    case SynthSeries::Trend: return "trend";
  }
  return "auto";
}

}  // namespace

RunConfig parse_run_config(std::string_view text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("run config: ") + e.what());
  }
  check_keys(j, "", {"input", "simgen", "output_dir", "outcomes", "t0", "predictors", "synth", "sampler", "phi",
                     "placebo", "equality", "mechanisms", "seed", "threads", "stages"});
  RunConfig cfg;
  std::string input, output_dir = cfg.output_dir.string();
  read(j, "input", input, "");
  read(j, "output_dir", output_dir, "");
  if (!input.empty()) cfg.input = fs::path(input).is_absolute() ? fs::path(input) : base_dir / input;
  cfg.output_dir = fs::path(output_dir).is_absolute() || base_dir.empty() ? fs::path(output_dir) : base_dir / output_dir;
  if (const char* env = std::getenv("QUALSYNTH_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
  read(j, "outcomes", cfg.outcomes, "");
  if (j.contains("t0")) {
    int t0 = 0;
    read(j, "t0", t0, "");
    cfg.t0 = t0;
  }
  read(j, "seed", cfg.seed, "");
  read(j, "threads", cfg.threads, "");
  if (j.contains("simgen")) {
    if (!j.at("simgen").is_object()) throw Error(ErrorCode::InvalidConfig, "config field 'simgen' must be an object");
    cfg.simgen = dgp_from_json(j.at("simgen").dump());
  }
  if (cfg.input.empty() && !cfg.simgen)
    throw Error(ErrorCode::InvalidConfig, "config needs either 'input' or 'simgen'");
  if (!cfg.input.empty() && cfg.simgen)
    throw Error(ErrorCode::InvalidConfig, "config fields 'input' and 'simgen' are mutually exclusive");
  if (!cfg.t0 && cfg.simgen) cfg.t0 = cfg.simgen->t0;
  if (!cfg.t0) throw Error(ErrorCode::InvalidConfig, "config field 't0' is required");

  if (j.contains("predictors")) {
    const auto& p = j.at("predictors");
    check_keys(p, "predictors.", {"covariates", "lag_years", "training_years"});
    if (p.contains("covariates")) {
      std::vector<std::string> c;
      read(p, "covariates", c, "predictors.");
      cfg.predictors.covariates = c;
    }
    if (p.contains("lag_years")) {
      std::vector<int> l;
      read(p, "lag_years", l, "predictors.");
      cfg.predictors.lag_years = l;
    }
    if (p.contains("training_years")) {
      int t = 0;
      read(p, "training_years", t, "predictors.");
      cfg.predictors.training_years = t;
    }
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    check_keys(s, "synth.", {"series", "objective", "evaluation_budget", "random_starts", "hull_rmse_threshold"});
    std::string series = "auto", objective = "validation";
    read(s, "series", series, "synth.");
    read(s, "objective", objective, "synth.");
    const SynthSeries all[] = {SynthSeries::Auto, SynthSeries::Observed, SynthSeries::Residual, SynthSeries::Smoothed,
                               SynthSeries::Trend};
    auto it = std::find_if(std::begin(all), std::end(all), [&](SynthSeries x) { return series_name(x) == series; });
    if (it == std::end(all)) throw Error(ErrorCode::InvalidConfig, "config field 'synth.series' = '" + series + "' is unknown");
    cfg.synth_series = *it;
    if (objective == "validation")
      cfg.synth.objective = OuterObjective::ValidationOutcomes;
    else if (objective == "predictors")
      cfg.synth.objective = OuterObjective::Predictors;
    else
      throw Error(ErrorCode::InvalidConfig, "config field 'synth.objective' must be 'validation' or 'predictors'");
    read(s, "evaluation_budget", cfg.synth.evaluation_budget, "synth.");
    read(s, "random_starts", cfg.synth.random_starts, "synth.");
    read(s, "hull_rmse_threshold", cfg.synth.hull_rmse_threshold, "synth.");
    if (cfg.synth.evaluation_budget < 1 || cfg.synth.random_starts < 0)
      throw Error(ErrorCode::InvalidConfig, "config fields 'synth.evaluation_budget' / 'synth.random_starts' out of range");
  }
  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    check_keys(s, "sampler.", {"iterations", "burn_in", "target_acceptance", "proposal_df", "adaptation_window",
                               "initial_step", "interval_level", "scale_factor", "statistic"});
    read(s, "iterations", cfg.sampler.iterations, "sampler.");
    read(s, "burn_in", cfg.sampler.burn_in, "sampler.");
    read(s, "target_acceptance", cfg.sampler.target_acceptance, "sampler.");
    read(s, "proposal_df", cfg.sampler.proposal_df, "sampler.");
    read(s, "adaptation_window", cfg.sampler.adaptation_window, "sampler.");
    read(s, "initial_step", cfg.sampler.initial_step, "sampler.");
    read(s, "interval_level", cfg.sampler.interval_level, "sampler.");
    read(s, "scale_factor", cfg.smoothing.scale_factor, "sampler.");
    std::string stat = "mean";
    read(s, "statistic", stat, "sampler.");
    if (stat != "mean" && stat != "median")
      throw Error(ErrorCode::InvalidConfig, "config field 'sampler.statistic' must be 'mean' or 'median'");
    cfg.smoothed_median = stat == "median";
  }
  if (j.contains("phi")) {
    const auto& p = j.at("phi");
    if (p.is_string() && p.get<std::string>() == "annual")
      cfg.phi = annual_phi();
    else if (p.is_number())
      cfg.phi = p.get<double>();
    else
      throw Error(ErrorCode::InvalidConfig, "config field 'phi' must be a number or \"annual\"");
    if (!(cfg.phi >= 0.0)) throw Error(ErrorCode::NegativePhi, "config field 'phi' must be non-negative");
  }
  if (j.contains("placebo")) {
    const auto& p = j.at("placebo");
    check_keys(p, "placebo.", {"subsets", "level", "weighting", "exclusion_factor", "min_donors", "treated_in_donor_pool"});
    read(p, "subsets", cfg.placebo.subsets, "placebo.");
    read(p, "level", cfg.placebo.level, "placebo.");
    read(p, "exclusion_factor", cfg.placebo.exclusion_factor, "placebo.");
    read(p, "min_donors", cfg.placebo.min_donors, "placebo.");
    read(p, "treated_in_donor_pool", cfg.placebo.treated_in_donor_pool, "placebo.");
    std::string w = "inverse_distance";
    read(p, "weighting", w, "placebo.");
    if (w == "inverse_distance")
      cfg.placebo.weighting = PlaceboWeighting::InverseDistance;
    else if (w == "exclusion")
      cfg.placebo.weighting = PlaceboWeighting::Exclusion;
    else
      throw Error(ErrorCode::InvalidConfig, "config field 'placebo.weighting' must be 'inverse_distance' or 'exclusion'");
    if (!(cfg.placebo.level > 0.0 && cfg.placebo.level <= 1.0))
      throw Error(ErrorCode::InvalidConfig, "config field 'placebo.level' must lie in (0, 1]");
  }
  if (j.contains("equality")) {
    const auto& e = j.at("equality");
    check_keys(e, "equality.", {"covariate", "threshold"});
    read(e, "covariate", cfg.equality.covariate, "equality.");
    read(e, "threshold", cfg.equality.threshold, "equality.");
  }
  if (j.contains("mechanisms")) {
    std::vector<std::string> m;
    read(j, "mechanisms", m, "");
    cfg.mechanisms = m;
  }
  if (j.contains("stages")) {
    const auto& s = j.at("stages");
    check_keys(s, "stages.", {"residualize", "smooth", "filter", "synth", "placebo", "report"});
    read(s, "residualize", cfg.stages.residualize, "stages.");
    read(s, "smooth", cfg.stages.smooth, "stages.");
    read(s, "filter", cfg.stages.filter, "stages.");
    read(s, "synth", cfg.stages.synth, "stages.");
    read(s, "placebo", cfg.stages.placebo, "stages.");
    read(s, "report", cfg.stages.report, "stages.");
  }
  cfg.sampler.seed = cfg.seed;
  cfg.synth.seed = cfg.seed;
  cfg.smoothing.threads = cfg.threads;
  cfg.placebo.threads = cfg.threads;
  cfg.sampler.validate();
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(detail::read_file(path.string()), path.parent_path());
}

namespace {

json config_json(const RunConfig& cfg) {
  json j;
  if (!cfg.input.empty()) j["input"] = cfg.input.string();
  if (cfg.simgen) j["simgen"] = json::parse(dgp_to_json(*cfg.simgen));
  j["outcomes"] = cfg.outcomes;
  j["t0"] = cfg.t0.value_or(0);
  json p = json::object();
  if (cfg.predictors.covariates) p["covariates"] = *cfg.predictors.covariates;
  if (cfg.predictors.lag_years) p["lag_years"] = *cfg.predictors.lag_years;
  if (cfg.predictors.training_years) p["training_years"] = *cfg.predictors.training_years;
  j["predictors"] = p;
  j["synth"] = {{"series", series_name(cfg.synth_series)},
                {"objective", cfg.synth.objective == OuterObjective::Predictors ? "predictors" : "validation"},
                {"evaluation_budget", cfg.synth.evaluation_budget},
                {"random_starts", cfg.synth.random_starts},
                {"hull_rmse_threshold", cfg.synth.hull_rmse_threshold}};
  j["sampler"] = {{"iterations", cfg.sampler.iterations},
                  {"burn_in", cfg.sampler.burn_in},
                  {"target_acceptance", cfg.sampler.target_acceptance},
                  {"proposal_df", cfg.sampler.proposal_df},
                  {"adaptation_window", cfg.sampler.adaptation_window},
                  {"initial_step", cfg.sampler.initial_step},
                  {"interval_level", cfg.sampler.interval_level},
                  {"scale_factor", cfg.smoothing.scale_factor},
                  {"statistic", cfg.smoothed_median ? "median" : "mean"}};
  j["phi"] = cfg.phi;
  j["placebo"] = {{"subsets", cfg.placebo.subsets},
                  {"level", cfg.placebo.level},
                  {"weighting", cfg.placebo.weighting == PlaceboWeighting::Exclusion ? "exclusion" : "inverse_distance"},
                  {"exclusion_factor", cfg.placebo.exclusion_factor},
                  {"min_donors", cfg.placebo.min_donors},
                  {"treated_in_donor_pool", cfg.placebo.treated_in_donor_pool}};
  j["equality"] = {{"covariate", cfg.equality.covariate}, {"threshold", cfg.equality.threshold}};
  if (cfg.mechanisms) j["mechanisms"] = *cfg.mechanisms;
  j["seed"] = cfg.seed;
  j["stages"] = {{"residualize", cfg.stages.residualize}, {"smooth", cfg.stages.smooth},
                 {"filter", cfg.stages.filter},           {"synth", cfg.stages.synth},
                 {"placebo", cfg.stages.placebo},         {"report", cfg.stages.report}};
  return j;
}

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Pipeline

namespace {

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json series_values(const YearSeries& s) {
  json a = json::array();
  for (double v : s.values) a.push_back(num(v));
  return a;
}

class RunContext {
 public:
  RunContext(const RunConfig& cfg) : cfg_(cfg) {}

  void write(const std::string& rel, std::string_view contents) {
    const fs::path path = cfg_.output_dir / rel;
    fs::create_directories(path.parent_path());
    detail::write_file(path.string(), contents);
    track(rel);
  }
  void track(const std::string& rel) {
    if (std::find(files_.begin(), files_.end(), rel) == files_.end()) files_.push_back(rel);
  }
  const std::vector<std::string>& files() const { return files_; }

  void ingest();
  void residualize_stage();
  void smooth_stage();
  void filter_stage();
  void synth_stage();
  void placebo_stage();

  std::string input_path;
  std::string input_digest;

 private:
  PanelDataset analysis_panel() const;
  const std::vector<std::vector<YearSeries>>& synth_input(std::string& which) const;

  const RunConfig& cfg_;
  std::vector<std::string> files_;
  PanelDataset ds_;
  // [outcome][region] per processing step.
  std::vector<std::vector<YearSeries>> observed_, residual_, smoothed_, trend_;
  std::vector<std::vector<YearSeries>>* current_ = nullptr;
  std::vector<std::vector<SynthSolution>> solutions_;  // [outcome][treated]
};

void RunContext::ingest() {
  if (cfg_.simgen) {
    auto sim = generate(*cfg_.simgen);
    ds_ = sim.panel.with_t0(*cfg_.t0);
    const auto text = panel_to_csv(sim.panel);
    input_path = "(simgen)";
    input_digest = sha256_hex(text);
    write("ingest/truth.json", truth_to_json(sim.truth));
  } else {
    ds_ = ingest_panel(cfg_.input, ColumnSchema{}, *cfg_.t0);
    input_path = cfg_.input.string();
    input_digest = sha256_file(cfg_.input);
  }
  if (!cfg_.outcomes.empty()) {
    std::vector<OutcomeKind> wanted;
    for (const auto& o : cfg_.outcomes) wanted.push_back(OutcomeKind{o});
    ds_ = ds_.select_outcomes(wanted);
  }
  TreatmentSummary summary;
  try {
    summary = validate_treatment(ds_);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NoPrePeriod || e.code() == ErrorCode::NoPostPeriod)
      throw Error(e.code(), "config field 't0' = " + std::to_string(ds_.t0()) + " with data years " +
                                std::to_string(ds_.years().first) + ".." + std::to_string(ds_.years().last) + ": " +
                                e.what());
    throw;
  }
  write("ingest/panel.csv", panel_to_csv(ds_));
  json s;
  s["regions"] = ds_.n_regions();
  s["treated"] = summary.n_treated;
  s["donors"] = summary.n_donors;
  s["first_year"] = ds_.years().first;
  s["last_year"] = ds_.years().last;
  s["t0"] = ds_.t0();
  s["pre_years"] = summary.n_pre;
  s["post_years"] = summary.n_post;
  json outcomes = json::array();
  for (const auto& o : ds_.outcomes()) outcomes.push_back(o.name);
  s["outcomes"] = outcomes;
  s["covariates"] = ds_.covariate_names();
  s["climate_zone"] = ds_.has_climate_zone();
  write("ingest/summary.json", s.dump(2) + "\n");

  observed_.assign(ds_.n_outcomes(), {});
  for (std::size_t o = 0; o < ds_.n_outcomes(); ++o)
    for (std::size_t r = 0; r < ds_.n_regions(); ++r) observed_[o].push_back(ds_.series(r, o));
  current_ = &observed_;
}

void RunContext::residualize_stage() {
  residual_.assign(ds_.n_outcomes(), {});
  for (std::size_t o = 0; o < ds_.n_outcomes(); ++o) {
    const auto& outcome = ds_.outcomes()[o];
    const auto res = residualize(ds_, outcome);
    std::ostringstream series, model, fit;
    series << "region,year,observed,predicted,residual\n";
    for (const auto& s : res.series) {
      for (int y = s.values.first_year; y <= s.values.last_year(); ++y)
        series << s.region.code << ',' << y << ',' << format_double(s.observed.at(y)) << ','
               << format_double(s.predicted.at(y)) << ',' << format_double(s.values.at(y)) << '\n';
      residual_[o].push_back(s.values);
    }
    model << "year,covariate,coefficient\n";
    fit << "year,r_squared,n_obs,dropped\n";
    for (const auto& m : res.models) {
      model << m.year << ",(intercept)," << format_double(m.intercept) << '\n';
      for (const auto& [name, b] : m.coefficients) model << m.year << ',' << name << ',' << format_double(b) << '\n';
      std::string dropped;
      for (const auto& d : m.dropped) dropped += (dropped.empty() ? "" : ";") + d;
      fit << m.year << ',' << format_double(m.r_squared) << ',' << m.n_obs << ',' << dropped << '\n';
    }
    write("residualize/" + outcome.name + "_residuals.csv", series.str());
    write("residualize/" + outcome.name + "_model.csv", model.str());
    write("residualize/" + outcome.name + "_fit.csv", fit.str());
  }
  current_ = &residual_;
}

void RunContext::smooth_stage() {
  smoothed_.assign(ds_.n_outcomes(), {});
  for (std::size_t o = 0; o < ds_.n_outcomes(); ++o) {
    const auto& outcome = ds_.outcomes()[o];
    const auto sm = smooth_panel(outcome, ds_.regions(), (*current_)[o], cfg_.sampler, cfg_.smoothing);
    std::ostringstream out;
    out << "region,year,observation,obs_scale,mean,median,lower,upper,acceptance_rate,ess,final_step\n";
    for (std::size_t r = 0; r < ds_.n_regions(); ++r) {
      for (int y = sm.years.first; y <= sm.years.last; ++y) {
        const auto& c = sm.cell(r, y);
        out << ds_.regions()[r].code << ',' << y << ',' << format_double(c.observation) << ','
            << format_double(c.obs_scale) << ',' << format_double(c.summary.mean) << ','
            << format_double(c.summary.median) << ',' << format_double(c.summary.lower) << ','
            << format_double(c.summary.upper) << ',' << format_double(c.summary.acceptance_rate) << ','
            << format_double(c.summary.ess) << ',' << format_double(c.final_step) << '\n';
      }
      smoothed_[o].push_back(cfg_.smoothed_median ? sm.median_series(r) : sm.mean_series(r));
    }
    write("smooth/" + outcome.name + "_posterior.csv", out.str());
  }
  current_ = &smoothed_;
}

void RunContext::filter_stage() {
  trend_.assign(ds_.n_outcomes(), {});
  for (std::size_t o = 0; o < ds_.n_outcomes(); ++o) {
    const auto& outcome = ds_.outcomes()[o];
    std::ostringstream out;
    out << "region,year,input,trend,cycle\n";
    for (std::size_t r = 0; r < ds_.n_regions(); ++r) {
      const auto& in = (*current_)[o][r];
      const auto dec = hp_filter(in, cfg_.phi);
      for (int y = in.first_year; y <= in.last_year(); ++y)
        out << ds_.regions()[r].code << ',' << y << ',' << format_double(in.at(y)) << ','
            << format_double(dec.trend.at(y)) << ',' << format_double(dec.cycle.at(y)) << '\n';
      trend_[o].push_back(dec.trend);
    }
    write("filter/" + outcome.name + "_trend.csv", out.str());
  }
  current_ = &trend_;
}

const std::vector<std::vector<YearSeries>>& RunContext::synth_input(std::string& which) const {
  auto pick = [&](const std::vector<std::vector<YearSeries>>& v, const char* name) -> const auto& {
    if (v.empty())
      throw Error(ErrorCode::InvalidConfig, std::string("config field 'synth.series' = '") + name +
                                                "' needs the corresponding stage to be enabled");
    which = name;
    return v;
  };
  switch (cfg_.synth_series) {
    case SynthSeries::Observed: return pick(observed_, "observed");
    case SynthSeries::Residual: return pick(residual_, "residual");
    case SynthSeries::Smoothed: return pick(smoothed_, "smoothed");
    case SynthSeries::Trend: return pick(trend_, "trend");
    case SynthSeries::Auto: break;
  }
  if (current_ == &trend_) which = "trend";
  else if (current_ == &smoothed_) which = "smoothed";
  else if (current_ == &residual_) which = "residual";
  else which = "observed";
  return *current_;
}

PanelDataset RunContext::analysis_panel() const {
  std::string which;
  const auto& series = synth_input(which);
  PanelDataset out = ds_;
  for (std::size_t o = 0; o < ds_.n_outcomes(); ++o) out = out.with_outcome(o, series[o]);
  return out;
}

void RunContext::synth_stage() {
  std::string which;
  synth_input(which);
  const PanelDataset ads = analysis_panel();
  const auto treated = ads.treated_indices();
  solutions_.assign(ads.n_outcomes(), {});
  std::vector<SynthSolution> all;
  json analysis;
  analysis["series"] = which;
  json outcomes = json::array();
  std::vector<std::pair<std::string, std::vector<double>>> atet_by_outcome;

  for (std::size_t o = 0; o < ads.n_outcomes(); ++o) {
    const auto& outcome = ads.outcomes()[o];
    std::vector<std::optional<SynthSolution>> slots(treated.size());
    parallel_for(treated.size(), cfg_.threads,
                 [&](std::size_t i) { slots[i] = fit_synth(ads, treated[i], o, cfg_.predictors, cfg_.synth); });
    for (auto& s : slots) solutions_[o].push_back(std::move(*s));
    const auto& sols = solutions_[o];

    std::ostringstream weights, paths;
    weights << "treated,donor,weight\n";
    paths << "region,year,observed,synthetic,gap\n";
    std::vector<GapSeries> gaps;
    for (const auto& s : sols) {
      for (const auto& [donor, w] : s.weights.sorted())
        weights << s.treated.code << ',' << donor << ',' << format_double(w) << '\n';
      for (int y = s.observed.first_year; y <= s.observed.last_year(); ++y)
        paths << s.treated.code << ',' << y << ',' << format_double(s.observed.at(y)) << ','
              << format_double(s.synthetic_path.at(y)) << ',' << format_double(s.gaps.values.at(y)) << '\n';
      gaps.push_back(s.gaps);
      all.push_back(s);
    }
    write("synth/" + outcome.name + "_weights.csv", weights.str());
    write("synth/" + outcome.name + "_paths.csv", paths.str());
    write("synth/" + outcome.name + "_gaps.csv", gaps_to_csv(gaps));

    const auto avg = average_treatment_path(sols);
    json entry;
    entry["outcome"] = outcome.name;
    entry["atet"] = num(avg.atet);
    json unit_atet = json::object();
    std::vector<double> atets;
    for (const auto& s : sols) {
      double sum = 0.0;
      int n = 0;
      for (int y = s.t0 + 1; y <= s.gaps.values.last_year(); ++y, ++n) sum += s.gaps.values.at(y);
      atets.push_back(n ? sum / n : 0.0);
      unit_atet[s.treated.code] = num(atets.back());
    }
    entry["unit_atet"] = unit_atet;
    atet_by_outcome.emplace_back(outcome.name, atets);

    // Equality of effects across two groups of treated units.
    json eq;
    eq["covariate"] = cfg_.equality.covariate;
    eq["threshold"] = cfg_.equality.threshold;
    std::vector<double> group_a, group_b;
    bool have_cov = true;
    for (std::size_t i = 0; i < treated.size(); ++i) {
      const auto v = ads.covariate(treated[i], cfg_.equality.covariate);
      if (!v) {
        have_cov = false;
        break;
      }
      (*v > cfg_.equality.threshold ? group_a : group_b).push_back(atets[i]);
    }
    if (!have_cov) {
      eq["note"] = "covariate '" + cfg_.equality.covariate + "' not found";
    } else {
      try {
        const auto r = group_equality(group_a, group_b);
        eq["delta"] = num(r.delta);
        eq["t_stat"] = num(r.t_stat);
        eq["t_pvalue"] = num(r.t_pvalue);
        eq["ks_stat"] = num(r.ks_stat);
        eq["ks_pvalue"] = num(r.ks_pvalue);
        eq["n_above"] = r.n_group_a;
        eq["n_below"] = r.n_group_b;
      } catch (const Error& e) {
        eq["note"] = e.what();
      }
    }
    entry["equality"] = eq;
    outcomes.push_back(entry);
  }
  analysis["outcomes"] = outcomes;

  // Mechanism screen on the per-unit effects.
  json mech;
  std::vector<std::string> names = cfg_.mechanisms ? *cfg_.mechanisms : ads.covariate_names();
  std::vector<std::pair<std::string, std::vector<double>>> mechanisms;
  json skipped = json::array();
  for (const auto& name : names) {
    std::vector<double> values;
    for (auto r : treated) {
      const auto v = ads.covariate(r, name);
      if (!v) throw Error(ErrorCode::UnknownName, "mechanism covariate '" + name + "' not found");
      values.push_back(*v);
    }
    const bool constant = std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); });
    if (constant)
      skipped.push_back(name);
    else
      mechanisms.emplace_back(name, std::move(values));
  }
  try {
    const auto screen = mechanism_screen(atet_by_outcome, mechanisms);
    json loadings = json::object();
    for (std::size_t k = 0; k < atet_by_outcome.size(); ++k) loadings[atet_by_outcome[k].first] = num(screen.loadings[k]);
    mech["loadings"] = loadings;
    mech["explained_share"] = num(screen.explained_share);
    json pc1 = json::object();
    for (std::size_t i = 0; i < treated.size(); ++i) pc1[ads.regions()[treated[i]].code] = num(screen.pc1[i]);
    mech["pc1"] = pc1;
    json rows = json::array();
    for (const auto& r : screen.rows)
      rows.push_back({{"mechanism", r.mechanism},
                      {"slope", num(r.slope)},
                      {"intercept", num(r.intercept)},
                      {"correlation", num(r.correlation)},
                      {"t_stat", num(r.t_stat)}});
    mech["rows"] = rows;
  } catch (const Error& e) {
    mech["note"] = e.what();
  }
  mech["skipped_constant"] = skipped;
  analysis["mechanisms"] = mech;

  write("synth/solutions.json", solutions_to_json(all));
  write("synth/analysis.json", analysis.dump(2) + "\n");
}

void RunContext::placebo_stage() {
  if (solutions_.empty()) throw Error(ErrorCode::MissingArtifact, "placebo stage needs the synth stage");
  const PanelDataset ads = analysis_panel();
  json doc = json::array();
  for (std::size_t o = 0; o < ads.n_outcomes(); ++o) {
    const auto& outcome = ads.outcomes()[o];
    const auto inf = placebo_run(ads, o, cfg_.predictors, cfg_.synth, cfg_.placebo, solutions_[o]);
    write("placebo/" + outcome.name + "_placebo_gaps.csv", gaps_to_csv(inf.placebo_gaps));

    std::ostringstream units;
    units << "region,rmse_pre,rmse_post,ratio,p_exact,p_weighted\n";
    json treated = json::array();
    for (const auto& t : inf.treated) {
      units << t.region.code << ',' << format_double(t.stats.rmse_pre) << ',' << format_double(t.stats.rmse_post) << ','
            << format_double(t.stats.ratio) << ',' << format_double(t.p_rmse_J1) << ',' << format_double(t.p_weighted)
            << '\n';
      treated.push_back({{"region", t.region.code},
                         {"rmse_pre", num(t.stats.rmse_pre)},
                         {"rmse_post", num(t.stats.rmse_post)},
                         {"ratio", num(t.stats.ratio)},
                         {"p_exact", num(t.p_rmse_J1)},
                         {"p_weighted", num(t.p_weighted)},
                         {"p_periods_first_year", t.p_periods_J.first_year},
                         {"p_periods", series_values(t.p_periods_J)}});
    }
    write("placebo/" + outcome.name + "_unit_pvalues.csv", units.str());

    std::ostringstream periods;
    periods << "year,average_gap,p_average,p_subsets,lower,upper,subset_lower,subset_upper\n";
    json bounds = json::array(), subset_bounds = json::array();
    for (const auto& b : inf.bounds) bounds.push_back({{"year", b.year}, {"lower", num(b.lower)}, {"upper", num(b.upper)}});
    for (const auto& b : inf.subsets.bounds)
      subset_bounds.push_back({{"year", b.year}, {"lower", num(b.lower)}, {"upper", num(b.upper)}});
    for (int y = inf.t0 + 1; y <= inf.average_gap.last_year(); ++y) {
      auto find = [y](const std::vector<Bounds>& v) -> const Bounds* {
        for (const auto& b : v)
          if (b.year == y) return &b;
        return nullptr;
      };
      const Bounds* b = find(inf.bounds);
      const Bounds* sb = find(inf.subsets.bounds);
      periods << y << ',' << format_double(inf.average_gap.at(y)) << ','
              << format_double(inf.average_p_periods_J.at(y)) << ','
              << (inf.subsets.p_periods.has(y) ? format_double(inf.subsets.p_periods.at(y)) : "") << ','
              << (b ? format_double(b->lower) : "") << ',' << (b ? format_double(b->upper) : "") << ','
              << (sb ? format_double(sb->lower) : "") << ',' << (sb ? format_double(sb->upper) : "") << '\n';
    }
    write("placebo/" + outcome.name + "_pvalues.csv", periods.str());

    json entry;
    entry["outcome"] = outcome.name;
    entry["t0"] = inf.t0;
    entry["n_placebos"] = inf.placebo_gaps.size();
    entry["failed_placebos"] = inf.failed_placebos;
    entry["warnings"] = inf.warnings;
    entry["treated"] = treated;
    entry["average_gap_first_year"] = inf.average_gap.first_year;
    entry["average_gap"] = series_values(inf.average_gap);
    entry["average_p_first_year"] = inf.average_p_periods_J.first_year;
    entry["average_p"] = series_values(inf.average_p_periods_J);
    entry["bounds"] = bounds;
    entry["subsets"] = {{"subset_size", inf.subsets.subset_size},
                        {"sampled", inf.subsets.sampled},
                        {"placebo_averages", inf.subsets.placebo_averages},
                        {"log10_possible_subsets", num(inf.subsets.log10_possible_subsets)},
                        {"p_first_year", inf.subsets.p_periods.first_year},
                        {"p", series_values(inf.subsets.p_periods)},
                        {"bounds", subset_bounds}};
    // Placebo difference-in-differences on the stacked gaps.
    try {
      const auto did = placebo_did(inf.treated_gaps, inf.placebo_gaps, inf.t0);
      entry["did"] = {{"coefficient", num(did.coefficient)}, {"se_cluster", num(did.se_cluster)},
                      {"ci_lower", num(did.ci_lower)},       {"ci_upper", num(did.ci_upper)},
                      {"n_obs", did.n_obs},                  {"n_treated", did.n_treated},
                      {"n_control", did.n_control},          {"r2_within", num(did.r2_within)},
                      {"region_fe_p", num(did.region_fe_p)}, {"time_fe_p", num(did.time_fe_p)},
                      {"degenerate", did.degenerate}};
    } catch (const Error& e) {
      entry["did"] = {{"note", e.what()}};
    }
    doc.push_back(entry);
  }
  write("placebo/inference.json", doc.dump(2) + "\n");
}

std::string versions_note() {
  std::ostringstream out;
  out << "eigen " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION;
  return out.str();
}

}  // namespace

RunResult run_pipeline(const RunConfig& cfg, Stage last) {
  RunResult result;
  RunContext ctx(cfg);
  fs::create_directories(cfg.output_dir);
  ctx.write("config.json", run_config_to_json(cfg));

  for (Stage s : kStages) {
    if (static_cast<int>(s) > static_cast<int>(last)) break;
    StageRecord rec;
    rec.stage = std::string(stage_name(s));
    if (!cfg.stages.enabled(s)) {
      rec.status = "skipped";
      result.stages.push_back(rec);
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    try {
      switch (s) {
        case Stage::Ingest: ctx.ingest(); break;
        case Stage::Residualize: ctx.residualize_stage(); break;
        case Stage::Smooth: ctx.smooth_stage(); break;
        case Stage::Filter: ctx.filter_stage(); break;
        case Stage::Synth: ctx.synth_stage(); break;
        case Stage::Placebo: ctx.placebo_stage(); break;
        case Stage::Report:
          for (const auto& f : write_report(cfg.output_dir)) ctx.track(f);
          break;
      }
      rec.status = "ok";
    } catch (const std::exception& e) {
      rec.status = "failed";
      rec.message = e.what();
      result.ok = false;
      result.error = "[stage " + rec.stage + "] " + e.what();
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.stages.push_back(rec);
    if (!result.ok) break;
  }
  result.files = ctx.files();

  json manifest;
  manifest["tool"] = "qualsynth";
  manifest["version"] = QUALSYNTH_VERSION;
  manifest["versions"] = {{"qualsynth", QUALSYNTH_VERSION}, {"libraries", versions_note()}, {"compiler", __VERSION__}};
  manifest["config"] = config_json(cfg);
  manifest["input"] = {{"path", ctx.input_path}, {"sha256", ctx.input_digest}};
  json stages = json::array();
  for (const auto& r : result.stages)
    stages.push_back({{"stage", r.stage}, {"status", r.status}, {"seconds", r.seconds}, {"message", r.message}});
  manifest["stages"] = stages;
  json files = json::array();
  for (const auto& f : result.files) files.push_back({{"path", f}, {"sha256", sha256_file(cfg.output_dir / f)}});
  manifest["files"] = files;
  manifest["ok"] = result.ok;
  detail::write_file((cfg.output_dir / "manifest.json").string(), manifest.dump(2) + "\n");
  return result;
}

std::vector<std::string> write_report(const fs::path& run_dir) { return detail::build_report(run_dir); }

}  // namespace qualsynth
