#include "qualsynth/io.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <json.hpp>
#include <limits>
#include <map>
#include <sstream>

#include "qualsynth/error.hpp"
#include "text.hpp"

namespace qualsynth {

using detail::format_double;
using json = nlohmann::ordered_json;

std::string panel_to_csv(const PanelDataset& ds) {
  std::ostringstream out;
  out << "region,name,country,treated,year";
  for (const auto& o : ds.outcomes()) out << ',' << o.name;
  for (const auto& c : ds.covariate_names()) out << ',' << c;
  if (ds.has_climate_zone()) out << ',' << covariate::kClimateZone;
  out << '\n';
  for (std::size_t r = 0; r < ds.n_regions(); ++r) {
    const auto& id = ds.regions()[r];
    for (int y = ds.years().first; y <= ds.years().last; ++y) {
      out << id.code << ',' << id.name << ',' << id.country << ',' << (id.treated ? 1 : 0) << ',' << y;
      for (std::size_t o = 0; o < ds.n_outcomes(); ++o) out << ',' << format_double(ds.value(r, o, y));
      for (double v : ds.covariates()[r].values) out << ',' << format_double(v);
      if (ds.has_climate_zone()) out << ',' << ds.covariates()[r].climate_zone;
      out << '\n';
    }
  }
  return out.str();
}

void save_panel(const PanelDataset& ds, const std::filesystem::path& path) {
  detail::write_file(path.string(), panel_to_csv(ds));
}

std::string gaps_to_csv(std::span<const GapSeries> gaps) {
  std::ostringstream out;
  out << "region,outcome,year,gap\n";
  for (const auto& g : gaps)
    for (int y = g.values.first_year; y <= g.values.last_year(); ++y)
      out << g.region.code << ',' << g.outcome.name << ',' << y << ',' << format_double(g.values.at(y)) << '\n';
  return out.str();
}

std::vector<GapSeries> gaps_from_csv(std::string_view text, int t0, bool treated) {
  std::vector<GapSeries> out;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::vector<int> last_year;
  std::size_t line_no = 0;
  bool header = true;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = detail::trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto f = detail::split(line, ',');
    int year = 0;
    double gap = 0.0;
    if (f.size() != 4 || !detail::parse_int(f[2], year) || !detail::parse_double(f[3], gap))
      throw Error(ErrorCode::ParseError, "gap file line " + std::to_string(line_no) + " is malformed");
    const std::pair<std::string, std::string> key{std::string(f[0]), std::string(f[1])};
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      out.push_back(GapSeries{RegionId{key.first, "", "", treated}, OutcomeKind{key.second}, YearSeries(year, {}), 0, 0});
      last_year.push_back(year - 1);
    }
    if (year != last_year[it->second] + 1)
      throw Error(ErrorCode::NonContiguousYears, "gap file line " + std::to_string(line_no) + " breaks the year sequence");
    last_year[it->second] = year;
    out[it->second].values.values.push_back(gap);
  }
  for (auto& g : out) g = make_gap_series(g.region, g.outcome, g.values, t0);
  return out;
}

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double to_number(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json series_json(const YearSeries& s) {
  json values = json::array();
  for (double v : s.values) values.push_back(number(v));
  return json{{"first_year", s.first_year}, {"values", values}};
}

YearSeries series_from(const json& j) {
  YearSeries s(j.at("first_year").get<int>(), {});
  for (const auto& v : j.at("values")) s.values.push_back(to_number(v));
  return s;
}

json region_json(const RegionId& r) {
  return json{{"code", r.code}, {"name", r.name}, {"country", r.country}, {"treated", r.treated}};
}

RegionId region_from(const json& j) {
  return RegionId{j.at("code").get<std::string>(), j.at("name").get<std::string>(), j.at("country").get<std::string>(),
                  j.at("treated").get<bool>()};
}

}  // namespace

std::string solutions_to_json(std::span<const SynthSolution> solutions) {
  json arr = json::array();
  for (const auto& s : solutions) {
    json weights = json::array();
    for (const auto& [donor, w] : s.weights.sorted()) weights.push_back(json{{"donor", donor}, {"weight", number(w)}});
    json v = json::array();
    for (std::size_t k = 0; k < s.v.predictors.size(); ++k)
      v.push_back(json{{"predictor", s.v.predictors[k]}, {"weight", number(s.v.diag[k])}});
    json balance = json::array();
    for (const auto& b : s.balance)
      balance.push_back(json{{"predictor", b.name}, {"treated", number(b.treated)}, {"synthetic", number(b.synthetic)}});
    arr.push_back(json{{"treated", region_json(s.treated)},
                       {"outcome", s.outcome.name},
                       {"t0", s.t0},
                       {"donor_weights", weights},
                       {"predictor_weights", v},
                       {"observed", series_json(s.observed)},
                       {"synthetic", series_json(s.synthetic_path)},
                       {"gaps", series_json(s.gaps.values)},
                       {"rmse_pre", number(s.rmse_pre)},
                       {"rmse_post", number(s.rmse_post)},
                       {"inner_objective", number(s.inner_objective)},
                       {"outer_objective", number(s.outer_objective)},
                       {"balance", balance},
                       {"warnings", s.warnings}});
  }
  return arr.dump(2) + "\n";
}

std::vector<SynthSolution> solutions_from_json(std::string_view text) {
  std::vector<SynthSolution> out;
  try {
    const auto arr = json::parse(text);
    for (const auto& j : arr) {
      SynthSolution s;
      s.treated = region_from(j.at("treated"));
      s.outcome = OutcomeKind{j.at("outcome").get<std::string>()};
      s.t0 = j.at("t0").get<int>();
      for (const auto& w : j.at("donor_weights")) {
        s.weights.donors.push_back(w.at("donor").get<std::string>());
        s.weights.weights.push_back(to_number(w.at("weight")));
      }
      for (const auto& v : j.at("predictor_weights")) {
        s.v.predictors.push_back(v.at("predictor").get<std::string>());
        s.v.diag.push_back(to_number(v.at("weight")));
      }
      s.observed = series_from(j.at("observed"));
      s.synthetic_path = series_from(j.at("synthetic"));
      s.gaps = make_gap_series(s.treated, s.outcome, series_from(j.at("gaps")), s.t0);
      s.rmse_pre = to_number(j.at("rmse_pre"));
      s.rmse_post = to_number(j.at("rmse_post"));
      s.inner_objective = to_number(j.at("inner_objective"));
      s.outer_objective = to_number(j.at("outer_objective"));
      for (const auto& b : j.at("balance"))
        s.balance.push_back({b.at("predictor").get<std::string>(), to_number(b.at("treated")), to_number(b.at("synthetic"))});
      s.warnings = j.at("warnings").get<std::vector<std::string>>();
      out.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("solutions file: ") + e.what());
  }
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::NumericalFailure, "SHA-256 digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(detail::read_file(path.string())); }

}  // namespace qualsynth
