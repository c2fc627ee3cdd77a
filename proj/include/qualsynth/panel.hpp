#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qualsynth {

struct RegionId {
  std::string code;
  std::string name;
  std::string country;
  bool treated = false;

  bool operator==(const RegionId&) const = default;
};

/// A governance dimension. Any set of outcome columns is supported; the six
/// WGI dimensions are the default.
struct OutcomeKind {
  std::string name;

  bool operator==(const OutcomeKind&) const = default;
  auto operator<=>(const OutcomeKind&) const = default;
};

std::vector<OutcomeKind> default_outcomes();

/// Inclusive, contiguous range of calendar years.
struct YearRange {
  int first = 0;
  int last = -1;

  int size() const { return last >= first ? last - first + 1 : 0; }
  bool contains(int year) const { return year >= first && year <= last; }
  bool operator==(const YearRange&) const = default;
};

/// Dense annual series starting at `first_year`.
struct YearSeries {
  int first_year = 0;
  std::vector<double> values;

  YearSeries() = default;
  YearSeries(int first, std::vector<double> v) : first_year(first), values(std::move(v)) {}

  std::size_t size() const { return values.size(); }
  int last_year() const { return first_year + static_cast<int>(values.size()) - 1; }
  YearRange range() const { return {first_year, last_year()}; }
  bool has(int year) const { return year >= first_year && year <= last_year(); }
  double at(int year) const;
  double& at(int year);

  bool operator==(const YearSeries&) const = default;
};

/// Time-invariant geographic covariates of one region. `values` is aligned with
/// PanelDataset::covariate_names(); the categorical climate zone is kept apart.
struct GeoCovariates {
  std::vector<double> values;
  std::string climate_zone;

  bool operator==(const GeoCovariates&) const = default;
};

// Standard covariate column names (Table-1 layout).
namespace covariate {
inline constexpr std::string_view kLatitude = "latitude";
inline constexpr std::string_view kLongitude = "longitude";
inline constexpr std::string_view kCapital = "capital";
inline constexpr std::string_view kLandlocked = "landlocked";
inline constexpr std::string_view kLandAreaLog = "land_area_log";
inline constexpr std::string_view kAltitude = "altitude";
inline constexpr std::string_view kTemperature = "temperature";
inline constexpr std::string_view kRainfall = "rainfall";
inline constexpr std::string_view kSunshine = "sunshine";
inline constexpr std::string_view kClimateZone = "climate_zone";
}  // namespace covariate

/// Strongly balanced region x outcome x year panel plus covariates.
///
/// Construction validates balance, finiteness and unique region codes. The
/// treatment year is carried along but checked separately by
/// validate_treatment(), because it belongs to the experiment design rather
/// than to the data.
class PanelDataset {
 public:
  PanelDataset() = default;
  /// `cells` is laid out [outcome][region][year].
  PanelDataset(std::vector<RegionId> regions, YearRange years, std::vector<OutcomeKind> outcomes,
               std::vector<std::string> covariate_names, bool has_climate_zone,
               std::vector<GeoCovariates> covariates, std::vector<double> cells, int t0);

  const std::vector<RegionId>& regions() const { return regions_; }
  const YearRange& years() const { return years_; }
  const std::vector<OutcomeKind>& outcomes() const { return outcomes_; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }
  bool has_climate_zone() const { return has_climate_zone_; }
  const std::vector<GeoCovariates>& covariates() const { return covariates_; }
  const std::vector<double>& cells() const { return cells_; }
  int t0() const { return t0_; }

  std::size_t n_regions() const { return regions_.size(); }
  std::size_t n_outcomes() const { return outcomes_.size(); }
  std::size_t n_years() const { return static_cast<std::size_t>(years_.size()); }

  double value(std::size_t region, std::size_t outcome, int year) const;
  YearSeries series(std::size_t region, std::size_t outcome) const;
  /// Values of one outcome in one year, in region order.
  std::vector<double> cross_section(std::size_t outcome, int year) const;
  std::optional<double> covariate(std::size_t region, std::string_view name) const;

  std::size_t region_index(std::string_view code) const;
  std::size_t outcome_index(const OutcomeKind& outcome) const;
  std::size_t outcome_index(std::string_view name) const;
  std::vector<std::size_t> treated_indices() const;
  std::vector<std::size_t> donor_indices() const;

  /// Same panel with one outcome's values replaced (region-major series).
  PanelDataset with_outcome(std::size_t outcome, const std::vector<YearSeries>& series) const;
  PanelDataset with_t0(int t0) const;
  /// Restricts the panel to the given outcomes, in the given order.
  PanelDataset select_outcomes(const std::vector<OutcomeKind>& outcomes) const;

  bool operator==(const PanelDataset&) const = default;

 private:
  std::size_t cell_index(std::size_t region, std::size_t outcome, int year) const;

  std::vector<RegionId> regions_;
  YearRange years_;
  std::vector<OutcomeKind> outcomes_;
  std::vector<std::string> covariate_names_;
  bool has_climate_zone_ = false;
  std::vector<GeoCovariates> covariates_;
  std::vector<double> cells_;
  int t0_ = 0;
};

/// Observed-minus-synthetic path of one unit for one outcome.
struct GapSeries {
  RegionId region;
  OutcomeKind outcome;
  YearSeries values;
  double rmse_pre = 0.0;
  double rmse_post = 0.0;

  bool operator==(const GapSeries&) const = default;
};

/// Builds a GapSeries and computes its pre (year <= t0) and post RMSE.
GapSeries make_gap_series(RegionId region, OutcomeKind outcome, YearSeries gaps, int t0);

/// Column mapping for the long-form input file. Empty `outcomes` selects the
/// default outcome names present in the header; empty `covariates` selects
/// every remaining column.
struct ColumnSchema {
  std::string region = "region";
  std::string name = "name";
  std::string country = "country";
  std::string treated = "treated";
  std::string year = "year";
  std::vector<std::string> outcomes;
  std::vector<std::string> covariates;
  std::string climate_zone = std::string(covariate::kClimateZone);
  char delimiter = ',';
};

PanelDataset ingest_panel(const std::filesystem::path& path, const ColumnSchema& schema, int t0);
PanelDataset parse_panel(std::string_view text, const ColumnSchema& schema, int t0);

struct TreatmentSummary {
  std::size_t n_treated = 0;
  std::size_t n_donors = 0;
  int n_pre = 0;
  int n_post = 0;

  bool operator==(const TreatmentSummary&) const = default;
};

/// Treatment occurs at t0 and takes effect from t0 + 1: pre-periods are the
/// years <= t0.
TreatmentSummary validate_treatment(const PanelDataset& ds);

}  // namespace qualsynth
