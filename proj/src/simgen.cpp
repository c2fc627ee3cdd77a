#include "qualsynth/simgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <numeric>
#include <random>

#include "qualsynth/error.hpp"
#include "qualsynth/rng.hpp"
#include "text.hpp"

namespace qualsynth {

namespace {

struct ContinuousCovariate {
  std::string_view name;
  double center;
  double spread;
};

// Plausible ranges for a mid-latitude region.
constexpr ContinuousCovariate kContinuous[] = {
    {covariate::kLatitude, 49.0, 2.0},     {covariate::kLongitude, 28.0, 5.0},
    {covariate::kLandAreaLog, 10.0, 0.5},  {covariate::kAltitude, 200.0, 80.0},
    {covariate::kTemperature, 8.0, 1.5},   {covariate::kRainfall, 600.0, 90.0},
    {covariate::kSunshine, 2000.0, 150.0},
};

constexpr std::string_view kZones[] = {"Dfb", "Dfa", "Cfb"};

std::string padded(const char* prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s%02d", prefix, i);
  return buf;
}

}  // namespace

void DgpConfig::validate() const {
  auto bad = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (n_treated < 1) bad("simgen.n_treated must be at least 1");
  if (n_donors < 2) bad("simgen.n_donors must be at least 2");
  if (n_years < 3) bad("simgen.n_years must be at least 3");
  if (n_outcomes < 1 || n_outcomes > static_cast<int>(default_outcomes().size()))
    bad("simgen.n_outcomes must lie in [1, " + std::to_string(default_outcomes().size()) + "]");
  if (n_factors < 1) bad("simgen.n_factors must be at least 1");
  if (t0 <= first_year || t0 >= last_year()) bad("simgen.t0 must leave pre- and post-treatment years");
  if (!(factor_scale >= 0.0) || !(loading_scale >= 0.0) || !(noise_sd >= 0.0))
    bad("simgen scales must be non-negative");
  if (!std::isfinite(covariate_link)) bad("simgen.covariate_link must be finite");
  if (donors_per_treated < 1 || donors_per_treated > n_donors)
    bad("simgen.donors_per_treated must lie in [1, n_donors]");
  for (const auto& [year, value] : planted_effect) {
    if (year <= t0 || year > last_year()) bad("simgen.planted_effect year " + std::to_string(year) + " is not post-treatment");
    if (!std::isfinite(value)) bad("simgen.planted_effect must be finite");
  }
}

void DgpConfig::set_constant_effect(double value) {
  planted_effect.clear();
  for (int y = t0 + 1; y <= last_year(); ++y) planted_effect[y] = value;
}

SimulatedPanel generate(const DgpConfig& cfg) {
  cfg.validate();
  Rng rng = make_rng(derive_seed(cfg.seed, hash_name("simgen")));
  std::normal_distribution<double> normal(0.0, 1.0);

  const auto n_t = static_cast<std::size_t>(cfg.n_treated);
  const auto n_d = static_cast<std::size_t>(cfg.n_donors);
  const std::size_t n_r = n_t + n_d;
  const auto n_y = static_cast<std::size_t>(cfg.n_years);
  const auto n_h = static_cast<std::size_t>(cfg.n_factors);
  const auto n_o = static_cast<std::size_t>(cfg.n_outcomes);

  GroundTruth truth;
  truth.config = cfg;

  // Regions: treated first, then donors.
  std::vector<RegionId> regions;
  for (int i = 1; i <= cfg.n_treated; ++i)
    regions.push_back({padded("T", i), "Treated region " + std::to_string(i), "UA", true});
  for (int i = 1; i <= cfg.n_donors; ++i)
    regions.push_back({padded("D", i), "Donor region " + std::to_string(i), "EU", false});

  // Binary covariates and climate zones of the donors. Each treated unit
  // takes them from an anchor donor and mixes only donors that share its
  // binary values, so those are convex combinations too.
  std::vector<std::array<double, 2>> binary(n_r);
  std::vector<std::string> zone(n_r);
  for (std::size_t d = 0; d < n_d; ++d) {
    binary[n_t + d] = {uniform01(rng) < 0.1 ? 1.0 : 0.0, uniform01(rng) < 0.5 ? 1.0 : 0.0};
    zone[n_t + d] = std::string(kZones[rng() % std::size(kZones)]);
  }

  std::vector<std::vector<std::pair<std::size_t, double>>> mix(n_t);
  for (std::size_t i = 0; i < n_t; ++i) {
    const auto anchor = static_cast<std::size_t>(rng() % n_d);
    binary[i] = binary[n_t + anchor];
    zone[i] = zone[n_t + anchor];
    std::vector<std::size_t> pool;
    for (std::size_t d = 0; d < n_d; ++d)
      if (d != anchor && binary[n_t + d] == binary[i]) pool.push_back(d);
    const std::size_t want = std::min(static_cast<std::size_t>(cfg.donors_per_treated) - 1, pool.size());
    std::vector<std::size_t> chosen{anchor};
    for (std::size_t k = 0; k < want; ++k) {
      const auto pick = k + static_cast<std::size_t>(rng() % (pool.size() - k));
      std::swap(pool[k], pool[pick]);
      chosen.push_back(pool[k]);
    }
    std::vector<double> w;
    double total = 0.0;
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      const double g = -std::log1p(-uniform01(rng));  // Gamma(1) for a flat Dirichlet
      w.push_back(g);
      total += g;
    }
    TreatedTruth tt{regions[i].code, {}};
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      mix[i].push_back({chosen[k], w[k] / total});
      tt.donor_weights.push_back({regions[n_t + chosen[k]].code, w[k] / total});
    }
    std::sort(tt.donor_weights.begin(), tt.donor_weights.end(),
              [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
    truth.treated.push_back(std::move(tt));
  }
  auto combine = [&](std::size_t i, auto&& donor_value) {
    double v = 0.0;
    for (const auto& [d, w] : mix[i]) v += w * donor_value(d);
    return v;
  };

  // Factors, common shocks and loadings per outcome.
  truth.loadings.assign(n_o, std::vector<std::vector<double>>(n_r, std::vector<double>(n_h, 0.0)));
  truth.factors.assign(n_o, std::vector<std::vector<double>>(n_h, std::vector<double>(n_y, 1.0)));
  truth.delta.assign(n_o, std::vector<double>(n_y, 0.0));
  for (std::size_t o = 0; o < n_o; ++o) {
    for (std::size_t h = 1; h < n_h; ++h) {
      double level = 0.0;
      for (std::size_t t = 0; t < n_y; ++t) {
        level += cfg.factor_scale * normal(rng);
        truth.factors[o][h][t] = level;
      }
    }
    double level = 0.0;
    for (std::size_t t = 0; t < n_y; ++t) {
      level += cfg.factor_scale * normal(rng);
      truth.delta[o][t] = level;
    }
    for (std::size_t d = 0; d < n_d; ++d)
      for (std::size_t h = 0; h < n_h; ++h) truth.loadings[o][n_t + d][h] = cfg.loading_scale * normal(rng);
    for (std::size_t i = 0; i < n_t; ++i)
      for (std::size_t h = 0; h < n_h; ++h)
        truth.loadings[o][i][h] = combine(i, [&](std::size_t d) { return truth.loadings[o][n_t + d][h]; });
  }

  // Covariates. Continuous ones load on the first outcome's loadings with
  // strength covariate_link.
  std::vector<std::string> cov_names;
  for (const auto& c : kContinuous) cov_names.emplace_back(c.name);
  cov_names.emplace_back(covariate::kCapital);
  cov_names.emplace_back(covariate::kLandlocked);
  const std::size_t n_cont = std::size(kContinuous);
  std::vector<GeoCovariates> covs(n_r);
  std::vector<std::vector<double>> link(n_cont, std::vector<double>(n_h));
  for (auto& row : link)
    for (auto& a : row) a = normal(rng) / std::sqrt(static_cast<double>(n_h));
  const double noise_weight = std::sqrt(std::max(0.0, 1.0 - std::min(1.0, cfg.covariate_link * cfg.covariate_link)));
  const double load_norm = cfg.loading_scale > 0.0 ? cfg.loading_scale : 1.0;
  for (std::size_t d = 0; d < n_d; ++d) {
    auto& g = covs[n_t + d];
    for (std::size_t k = 0; k < n_cont; ++k) {
      double signal = 0.0;
      for (std::size_t h = 0; h < n_h; ++h) signal += link[k][h] * truth.loadings[0][n_t + d][h] / load_norm;
      const double z = cfg.covariate_link * signal + noise_weight * normal(rng);
      g.values.push_back(kContinuous[k].center + kContinuous[k].spread * z);
    }
  }
  for (std::size_t i = 0; i < n_t; ++i)
    for (std::size_t k = 0; k < n_cont; ++k)
      covs[i].values.push_back(combine(i, [&](std::size_t d) { return covs[n_t + d].values[k]; }));
  for (std::size_t r = 0; r < n_r; ++r) {
    covs[r].values.push_back(binary[r][0]);
    covs[r].values.push_back(binary[r][1]);
    covs[r].climate_zone = zone[r];
  }

  // Outcomes, laid out [outcome][region][year].
  std::vector<double> cells(n_o * n_r * n_y);
  for (std::size_t o = 0; o < n_o; ++o)
    for (std::size_t r = 0; r < n_r; ++r)
      for (std::size_t t = 0; t < n_y; ++t) {
        const int year = cfg.first_year + static_cast<int>(t);
        double q = truth.delta[o][t];
        for (std::size_t h = 0; h < n_h; ++h) q += truth.factors[o][h][t] * truth.loadings[o][r][h];
        q += cfg.noise_sd * normal(rng);
        if (r < n_t)
          if (auto it = cfg.planted_effect.find(year); it != cfg.planted_effect.end()) q += it->second;
        cells[(o * n_r + r) * n_y + t] = q;
      }

  std::vector<OutcomeKind> outcomes = default_outcomes();
  outcomes.resize(n_o);
  PanelDataset panel(std::move(regions), YearRange{cfg.first_year, cfg.last_year()}, std::move(outcomes),
                     std::move(cov_names), true, std::move(covs), std::move(cells), cfg.t0);
  return {std::move(panel), std::move(truth)};
}

namespace {

nlohmann::ordered_json dgp_json(const DgpConfig& cfg) {
  nlohmann::ordered_json j;
  j["n_treated"] = cfg.n_treated;
  j["n_donors"] = cfg.n_donors;
  j["first_year"] = cfg.first_year;
  j["n_years"] = cfg.n_years;
  j["t0"] = cfg.t0;
  j["n_outcomes"] = cfg.n_outcomes;
  j["n_factors"] = cfg.n_factors;
  j["factor_scale"] = cfg.factor_scale;
  j["loading_scale"] = cfg.loading_scale;
  j["noise_sd"] = cfg.noise_sd;
  nlohmann::ordered_json effect = nlohmann::ordered_json::object();
  for (const auto& [year, value] : cfg.planted_effect) effect[std::to_string(year)] = value;
  j["planted_effect"] = effect;
  j["covariate_link"] = cfg.covariate_link;
  j["donors_per_treated"] = cfg.donors_per_treated;
  j["seed"] = cfg.seed;
  return j;
}

}  // namespace

std::string dgp_to_json(const DgpConfig& cfg) { return dgp_json(cfg).dump(2); }

DgpConfig dgp_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("simgen config: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "simgen config must be a JSON object");
  DgpConfig cfg;
  try {
    cfg.n_treated = j.value("n_treated", cfg.n_treated);
    cfg.n_donors = j.value("n_donors", cfg.n_donors);
    cfg.first_year = j.value("first_year", cfg.first_year);
    cfg.n_years = j.value("n_years", cfg.n_years);
    cfg.t0 = j.value("t0", cfg.t0);
    cfg.n_outcomes = j.value("n_outcomes", cfg.n_outcomes);
    cfg.n_factors = j.value("n_factors", cfg.n_factors);
    cfg.factor_scale = j.value("factor_scale", cfg.factor_scale);
    cfg.loading_scale = j.value("loading_scale", cfg.loading_scale);
    cfg.noise_sd = j.value("noise_sd", cfg.noise_sd);
    cfg.covariate_link = j.value("covariate_link", cfg.covariate_link);
    cfg.donors_per_treated = j.value("donors_per_treated", cfg.donors_per_treated);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("planted_effect")) {
      const auto& pe = j.at("planted_effect");
      if (pe.is_number()) {
        cfg.set_constant_effect(pe.get<double>());
      } else if (pe.is_object()) {
        for (const auto& [year, value] : pe.items()) {
          int y = 0;
          if (!detail::parse_int(year, y)) throw Error(ErrorCode::ParseError, "planted_effect key '" + year + "' is not a year");
          cfg.planted_effect[y] = value.get<double>();
        }
      } else {
        throw Error(ErrorCode::ParseError, "planted_effect must be a number or an object keyed by year");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("simgen config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string truth_to_json(const GroundTruth& truth) {
  nlohmann::ordered_json j;
  j["config"] = dgp_json(truth.config);
  auto& treated = j["treated"] = nlohmann::ordered_json::array();
  for (const auto& t : truth.treated) {
    nlohmann::ordered_json w = nlohmann::ordered_json::object();
    for (const auto& [code, weight] : t.donor_weights) w[code] = weight;
    treated.push_back({{"region", t.region}, {"donor_weights", w}});
  }
  j["loadings"] = truth.loadings;
  j["factors"] = truth.factors;
  j["delta"] = truth.delta;
  return j.dump(2) + "\n";
}

void write_truth(const GroundTruth& truth, const std::filesystem::path& path) {
  detail::write_file(path.string(), truth_to_json(truth));
}

}  // namespace qualsynth
