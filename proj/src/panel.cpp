#include "qualsynth/panel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "qualsynth/error.hpp"
#include "text.hpp"

namespace qualsynth {

std::vector<OutcomeKind> default_outcomes() {
  return {{"voice_accountability"}, {"political_stability"}, {"government_effectiveness"},
          {"regulatory_quality"},   {"rule_of_law"},         {"control_of_corruption"}};
}

double YearSeries::at(int year) const {
  if (!has(year))
    throw Error(ErrorCode::YearMismatch, "year " + std::to_string(year) + " outside series range");
  return values[static_cast<std::size_t>(year - first_year)];
}

double& YearSeries::at(int year) {
  if (!has(year))
    throw Error(ErrorCode::YearMismatch, "year " + std::to_string(year) + " outside series range");
  return values[static_cast<std::size_t>(year - first_year)];
}

PanelDataset::PanelDataset(std::vector<RegionId> regions, YearRange years,
                           std::vector<OutcomeKind> outcomes, std::vector<std::string> covariate_names,
                           bool has_climate_zone, std::vector<GeoCovariates> covariates,
                           std::vector<double> cells, int t0)
    : regions_(std::move(regions)),
      years_(years),
      outcomes_(std::move(outcomes)),
      covariate_names_(std::move(covariate_names)),
      has_climate_zone_(has_climate_zone),
      covariates_(std::move(covariates)),
      cells_(std::move(cells)),
      t0_(t0) {
  if (outcomes_.empty()) throw Error(ErrorCode::InvalidConfig, "panel needs at least one outcome");
  if (years_.size() < 1) throw Error(ErrorCode::InvalidConfig, "panel needs at least one year");
  std::set<std::string> codes;
  for (const auto& r : regions_) {
    if (!codes.insert(r.code).second) throw Error(ErrorCode::DuplicateRow, "region code '" + r.code + "' repeated");
  }
  std::set<std::string> names;
  for (const auto& o : outcomes_)
    if (!names.insert(o.name).second) throw Error(ErrorCode::InvalidConfig, "outcome '" + o.name + "' repeated");
  const auto expected = regions_.size() * outcomes_.size() * n_years();
  if (cells_.size() != expected)
    throw Error(ErrorCode::MissingCell, "panel has " + std::to_string(cells_.size()) + " cells, expected " +
                                            std::to_string(expected));
  if (covariates_.size() != regions_.size())
    throw Error(ErrorCode::MissingCell, "covariate rows do not match region count");
  for (std::size_t r = 0; r < regions_.size(); ++r) {
    const auto& cov = covariates_[r];
    if (cov.values.size() != covariate_names_.size())
      throw Error(ErrorCode::MissingCell, "region '" + regions_[r].code + "' has incomplete covariates");
    for (std::size_t k = 0; k < cov.values.size(); ++k)
      if (!std::isfinite(cov.values[k]))
        throw Error(ErrorCode::NonFinite,
                    "covariate '" + covariate_names_[k] + "' of region '" + regions_[r].code + "' is not finite");
  }
  for (std::size_t o = 0; o < outcomes_.size(); ++o)
    for (std::size_t r = 0; r < regions_.size(); ++r)
      for (int y = years_.first; y <= years_.last; ++y)
        if (!std::isfinite(value(r, o, y)))
          throw Error(ErrorCode::NonFinite, "outcome '" + outcomes_[o].name + "' of region '" + regions_[r].code +
                                                "' in " + std::to_string(y) + " is not finite");
}

std::size_t PanelDataset::cell_index(std::size_t region, std::size_t outcome, int year) const {
  return (outcome * regions_.size() + region) * n_years() + static_cast<std::size_t>(year - years_.first);
}

double PanelDataset::value(std::size_t region, std::size_t outcome, int year) const {
  if (!years_.contains(year))
    throw Error(ErrorCode::YearMismatch, "year " + std::to_string(year) + " outside panel range");
  return cells_[cell_index(region, outcome, year)];
}

YearSeries PanelDataset::series(std::size_t region, std::size_t outcome) const {
  const auto begin = cells_.begin() + static_cast<std::ptrdiff_t>(cell_index(region, outcome, years_.first));
  return {years_.first, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(n_years()))};
}

std::vector<double> PanelDataset::cross_section(std::size_t outcome, int year) const {
  std::vector<double> out(regions_.size());
  for (std::size_t r = 0; r < regions_.size(); ++r) out[r] = value(r, outcome, year);
  return out;
}

std::optional<double> PanelDataset::covariate(std::size_t region, std::string_view name) const {
  for (std::size_t k = 0; k < covariate_names_.size(); ++k)
    if (covariate_names_[k] == name) return covariates_[region].values[k];
  return std::nullopt;
}

std::size_t PanelDataset::region_index(std::string_view code) const {
  for (std::size_t r = 0; r < regions_.size(); ++r)
    if (regions_[r].code == code) return r;
  throw Error(ErrorCode::UnknownName, "no region with code '" + std::string(code) + "'");
}

std::size_t PanelDataset::outcome_index(const OutcomeKind& outcome) const { return outcome_index(outcome.name); }

std::size_t PanelDataset::outcome_index(std::string_view name) const {
  for (std::size_t o = 0; o < outcomes_.size(); ++o)
    if (outcomes_[o].name == name) return o;
  throw Error(ErrorCode::UnknownName, "no outcome named '" + std::string(name) + "'");
}

std::vector<std::size_t> PanelDataset::treated_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < regions_.size(); ++r)
    if (regions_[r].treated) out.push_back(r);
  return out;
}

std::vector<std::size_t> PanelDataset::donor_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < regions_.size(); ++r)
    if (!regions_[r].treated) out.push_back(r);
  return out;
}

PanelDataset PanelDataset::with_outcome(std::size_t outcome, const std::vector<YearSeries>& series) const {
  if (series.size() != regions_.size())
    throw Error(ErrorCode::MissingCell, "replacement series count does not match region count");
  auto cells = cells_;
  for (std::size_t r = 0; r < regions_.size(); ++r) {
    if (series[r].range() != years_)
      throw Error(ErrorCode::YearMismatch, "replacement series for '" + regions_[r].code + "' has wrong years");
    std::copy(series[r].values.begin(), series[r].values.end(),
              cells.begin() + static_cast<std::ptrdiff_t>(cell_index(r, outcome, years_.first)));
  }
  return {regions_, years_, outcomes_, covariate_names_, has_climate_zone_, covariates_, std::move(cells), t0_};
}

PanelDataset PanelDataset::with_t0(int t0) const {
  PanelDataset copy = *this;
  copy.t0_ = t0;
  return copy;
}

PanelDataset PanelDataset::select_outcomes(const std::vector<OutcomeKind>& outcomes) const {
  std::vector<double> cells;
  cells.reserve(outcomes.size() * regions_.size() * n_years());
  for (const auto& o : outcomes) {
    const auto idx = outcome_index(o);
    const auto begin = cells_.begin() + static_cast<std::ptrdiff_t>(idx * regions_.size() * n_years());
    cells.insert(cells.end(), begin, begin + static_cast<std::ptrdiff_t>(regions_.size() * n_years()));
  }
  return {regions_, years_, outcomes, covariate_names_, has_climate_zone_, covariates_, std::move(cells), t0_};
}

GapSeries make_gap_series(RegionId region, OutcomeKind outcome, YearSeries gaps, int t0) {
  double pre = 0.0, post = 0.0;
  int n_pre = 0, n_post = 0;
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    const int year = gaps.first_year + static_cast<int>(i);
    const double g2 = gaps.values[i] * gaps.values[i];
    if (year <= t0) {
      pre += g2;
      ++n_pre;
    } else {
      post += g2;
      ++n_post;
    }
  }
  GapSeries out{std::move(region), std::move(outcome), std::move(gaps), 0.0, 0.0};
  out.rmse_pre = n_pre > 0 ? std::sqrt(pre / n_pre) : 0.0;
  out.rmse_post = n_post > 0 ? std::sqrt(post / n_post) : 0.0;
  return out;
}

namespace {

struct RegionRows {
  RegionId id;
  GeoCovariates cov;
  std::map<int, std::vector<double>> by_year;  // year -> outcome values
};

std::string cell_label(const std::string& region, int year) {
  return "region '" + region + "', year " + std::to_string(year);
}

}  // namespace

PanelDataset parse_panel(std::string_view text, const ColumnSchema& schema, int t0) {
  using detail::split;
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      auto pos = text.find('\n', start);
      if (pos == std::string_view::npos) pos = text.size();
      auto line = detail::trim(text.substr(start, pos - start));
      if (!line.empty() && line.front() != '#') lines.push_back(text.substr(start, pos - start));
      start = pos + 1;
    }
  }
  if (lines.empty()) throw Error(ErrorCode::ParseError, "input has no header");
  const auto header = split(lines.front(), schema.delimiter);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!col.emplace(std::string(header[i]), i).second)
      throw Error(ErrorCode::ParseError, "duplicate column '" + std::string(header[i]) + "'");
  }
  auto require = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw Error(ErrorCode::ParseError, "missing column '" + name + "'");
    return it->second;
  };
  const auto c_region = require(schema.region);
  const auto c_country = require(schema.country);
  const auto c_treated = require(schema.treated);
  const auto c_year = require(schema.year);
  std::optional<std::size_t> c_name;
  if (auto it = col.find(schema.name); it != col.end()) c_name = it->second;
  std::optional<std::size_t> c_zone;
  if (auto it = col.find(schema.climate_zone); it != col.end()) c_zone = it->second;

  std::vector<std::string> outcome_names = schema.outcomes;
  if (outcome_names.empty()) {
    for (const auto& o : default_outcomes())
      if (col.count(o.name)) outcome_names.push_back(o.name);
    if (outcome_names.empty())
      throw Error(ErrorCode::ParseError, "no outcome columns declared and no default outcome column found");
  }
  std::vector<std::size_t> c_outcomes;
  std::set<std::string> used{schema.region, schema.country, schema.treated, schema.year};
  if (c_name) used.insert(schema.name);
  if (c_zone) used.insert(schema.climate_zone);
  for (const auto& o : outcome_names) {
    c_outcomes.push_back(require(o));
    used.insert(o);
  }
  std::vector<std::string> covariate_names = schema.covariates;
  if (covariate_names.empty()) {
    for (const auto& h : header)
      if (!used.count(std::string(h))) covariate_names.emplace_back(h);
  }
  std::vector<std::size_t> c_covs;
  for (const auto& c : covariate_names) c_covs.push_back(require(c));

  std::vector<RegionRows> regions;
  std::unordered_map<std::string, std::size_t> region_pos;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto fields = split(lines[li], schema.delimiter);
    const std::string where = "line " + std::to_string(li + 1);
    if (fields.size() != header.size())
      throw Error(ErrorCode::ParseError, where + " has " + std::to_string(fields.size()) + " fields, header has " +
                                             std::to_string(header.size()));
    const std::string code(fields[c_region]);
    if (code.empty()) throw Error(ErrorCode::ParseError, where + " has an empty region code");
    int year = 0;
    if (!detail::parse_int(fields[c_year], year)) throw Error(ErrorCode::ParseError, where + " has a malformed year");
    const auto tflag = fields[c_treated];
    bool treated = false;
    if (tflag == "1" || tflag == "true" || tflag == "TRUE")
      treated = true;
    else if (!(tflag == "0" || tflag == "false" || tflag == "FALSE"))
      throw Error(ErrorCode::ParseError, where + " has a malformed treated flag");

    GeoCovariates cov;
    for (std::size_t k = 0; k < c_covs.size(); ++k) {
      double v = 0.0;
      const auto field = fields[c_covs[k]];
      if (field.empty())
        throw Error(ErrorCode::MissingCell, cell_label(code, year) + ", covariate '" + covariate_names[k] + "'");
      if (!detail::parse_double(field, v))
        throw Error(ErrorCode::ParseError, where + " covariate '" + covariate_names[k] + "' is not numeric");
      if (!std::isfinite(v))
        throw Error(ErrorCode::NonFinite, cell_label(code, year) + ", covariate '" + covariate_names[k] + "'");
      cov.values.push_back(v);
    }
    if (c_zone) cov.climate_zone = std::string(fields[*c_zone]);

    std::vector<double> outcomes;
    for (std::size_t o = 0; o < c_outcomes.size(); ++o) {
      double v = 0.0;
      const auto field = fields[c_outcomes[o]];
      if (field.empty())
        throw Error(ErrorCode::MissingCell, cell_label(code, year) + ", outcome '" + outcome_names[o] + "'");
      if (!detail::parse_double(field, v))
        throw Error(ErrorCode::ParseError, where + " outcome '" + outcome_names[o] + "' is not numeric");
      if (!std::isfinite(v))
        throw Error(ErrorCode::NonFinite, cell_label(code, year) + ", outcome '" + outcome_names[o] + "'");
      outcomes.push_back(v);
    }

    auto [it, inserted] = region_pos.emplace(code, regions.size());
    if (inserted) {
      RegionRows rows;
      rows.id = RegionId{code, c_name ? std::string(fields[*c_name]) : code, std::string(fields[c_country]), treated};
      rows.cov = cov;
      regions.push_back(std::move(rows));
    }
    auto& rows = regions[it->second];
    if (rows.id.treated != treated)
      throw Error(ErrorCode::InconsistentCovariate, "treated flag of region '" + code + "' varies over time");
    if (rows.id.country != fields[c_country])
      throw Error(ErrorCode::InconsistentCovariate, "country of region '" + code + "' varies over time");
    if (!(rows.cov == cov)) {
      std::string which = "climate_zone";
      for (std::size_t k = 0; k < cov.values.size(); ++k)
        if (cov.values[k] != rows.cov.values[k]) {
          which = covariate_names[k];
          break;
        }
      throw Error(ErrorCode::InconsistentCovariate,
                  "covariate '" + which + "' of region '" + code + "' varies over time (" + where + ")");
    }
    if (!rows.by_year.emplace(year, std::move(outcomes)).second)
      throw Error(ErrorCode::DuplicateRow, cell_label(code, year) + " appears more than once");
  }
  if (regions.empty()) throw Error(ErrorCode::EmptyInput, "input has no data rows");

  std::set<int> all_years;
  for (const auto& r : regions)
    for (const auto& [y, _] : r.by_year) all_years.insert(y);
  const YearRange years{*all_years.begin(), *all_years.rbegin()};
  if (static_cast<int>(all_years.size()) != years.size()) {
    for (int y = years.first; y <= years.last; ++y)
      if (!all_years.count(y))
        throw Error(ErrorCode::NonContiguousYears, "year " + std::to_string(y) + " has no rows for any region");
  }

  const std::size_t n_years = static_cast<std::size_t>(years.size());
  std::vector<double> cells(outcome_names.size() * regions.size() * n_years);
  for (std::size_t r = 0; r < regions.size(); ++r) {
    for (int y = years.first; y <= years.last; ++y) {
      auto it = regions[r].by_year.find(y);
      if (it == regions[r].by_year.end())
        throw Error(ErrorCode::MissingCell, cell_label(regions[r].id.code, y) + ", all outcomes");
      for (std::size_t o = 0; o < outcome_names.size(); ++o)
        cells[(o * regions.size() + r) * n_years + static_cast<std::size_t>(y - years.first)] = it->second[o];
    }
  }

  std::vector<RegionId> ids;
  std::vector<GeoCovariates> covs;
  for (auto& r : regions) {
    ids.push_back(std::move(r.id));
    covs.push_back(std::move(r.cov));
  }
  std::vector<OutcomeKind> outcomes;
  for (auto& n : outcome_names) outcomes.push_back({n});
  return {std::move(ids), years, std::move(outcomes), std::move(covariate_names), c_zone.has_value(),
          std::move(covs), std::move(cells), t0};
}

PanelDataset ingest_panel(const std::filesystem::path& path, const ColumnSchema& schema, int t0) {
  if (!std::filesystem::exists(path))
    throw Error(ErrorCode::IoFailure, "input file '" + path.string() + "' does not exist");
  return parse_panel(detail::read_file(path.string()), schema, t0);
}

TreatmentSummary validate_treatment(const PanelDataset& ds) {
  const auto& years = ds.years();
  TreatmentSummary s;
  s.n_treated = ds.treated_indices().size();
  s.n_donors = ds.donor_indices().size();
  if (ds.t0() < years.first)
    throw Error(ErrorCode::NoPrePeriod, "t0 = " + std::to_string(ds.t0()) + " precedes the first year " +
                                            std::to_string(years.first));
  s.n_pre = std::min(ds.t0(), years.last) - years.first + 1;
  s.n_post = years.last - std::max(ds.t0(), years.first - 1);
  if (ds.t0() <= years.first)
    throw Error(ErrorCode::NoPrePeriod,
                "t0 = " + std::to_string(ds.t0()) + " leaves no pre-treatment history before the treatment year");
  if (s.n_post < 1)
    throw Error(ErrorCode::NoPostPeriod, "t0 = " + std::to_string(ds.t0()) + " leaves no post-treatment year (last year " +
                                             std::to_string(years.last) + ")");
  if (s.n_treated == 0) throw Error(ErrorCode::NoTreatedUnits, "no region is flagged as treated");
  if (s.n_donors < 2)
    throw Error(ErrorCode::EmptyDonorPool,
                "donor pool has " + std::to_string(s.n_donors) + " regions; at least 2 are required");
  return s;
}

}  // namespace qualsynth
