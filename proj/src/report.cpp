#include "report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <map>
#include <sstream>

#include "qualsynth/error.hpp"
#include "qualsynth/io.hpp"
#include "qualsynth/synth.hpp"
#include "text.hpp"

namespace qualsynth::detail {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string load(const fs::path& run_dir, const std::string& rel) {
  const fs::path p = run_dir / rel;
  if (!fs::exists(p)) throw Error(ErrorCode::MissingArtifact, "run artifact '" + rel + "' not found in " + run_dir.string());
  return read_file(p.string());
}

json load_json(const fs::path& run_dir, const std::string& rel) {
  try {
    return json::parse(load(run_dir, rel));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, rel + ": " + e.what());
  }
}

std::string fixed(double v, int digits = 3) {
  if (!std::isfinite(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos) s = s[0] == '-' ? s.substr(1) : s;  // no "-0.000"
  return s;
}

std::string fixed(const json& j, int digits = 3) {
  return j.is_number() ? fixed(j.get<double>(), digits) : std::string("n/a");
}

std::string cell(const json& j) { return j.is_number() ? format_double(j.get<double>()) : std::string(); }

struct TextTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string render() const {
    std::vector<std::size_t> width(header.size(), 0);
    auto grow = [&](const std::vector<std::string>& r) {
      for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
    };
    grow(header);
    for (const auto& r : rows) grow(r);
    std::size_t total = 0;
    for (auto w : width) total += w + 2;
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& r) {
      std::string s;
      for (std::size_t c = 0; c < width.size(); ++c) {
        const std::string v = c < r.size() ? r[c] : "";
        const std::string pad(width[c] - v.size(), ' ');
        s += c == 0 ? v + pad : "  " + pad + v;
      }
      while (!s.empty() && s.back() == ' ') s.pop_back();
      out << s << '\n';
    };
    const std::string rule(total, '-');
    out << rule << '\n';
    line(header);
    out << rule << '\n';
    for (const auto& r : rows) line(r);
    out << rule << '\n';
    return out.str();
  }
};

std::string balance_label(const std::string& predictor) {
  const auto at = predictor.find('@');
  if (at == std::string::npos) return predictor;
  return "Outcome variable in " + predictor.substr(at + 1);
}

struct BoundsByYear {
  std::map<int, std::pair<double, double>> by_year;
  bool has(int y) const { return by_year.count(y) > 0; }
};

BoundsByYear read_bounds(const json& arr) {
  BoundsByYear b;
  for (const auto& e : arr)
    if (e.at("lower").is_number() && e.at("upper").is_number())
      b.by_year[e.at("year").get<int>()] = {e.at("lower").get<double>(), e.at("upper").get<double>()};
  return b;
}

}  // namespace

std::vector<std::string> build_report(const fs::path& run_dir) {
  const json config = load_json(run_dir, "config.json");
  const bool placebo_enabled = config.at("stages").at("placebo").get<bool>();
  const auto solutions = solutions_from_json(load(run_dir, "synth/solutions.json"));
  const json analysis = load_json(run_dir, "synth/analysis.json");
  json inference = json::array();
  if (placebo_enabled) inference = load_json(run_dir, "placebo/inference.json");

  std::vector<std::string> written;
  auto emit = [&](const std::string& rel, const std::string& contents) {
    const fs::path p = run_dir / rel;
    fs::create_directories(p.parent_path());
    write_file(p.string(), contents);
    written.push_back(rel);
  };

  // Group solutions by outcome, keeping first-appearance order.
  std::vector<std::string> outcomes;
  std::map<std::string, std::vector<SynthSolution>> by_outcome;
  for (const auto& s : solutions) {
    if (!by_outcome.count(s.outcome.name)) outcomes.push_back(s.outcome.name);
    by_outcome[s.outcome.name].push_back(s);
  }
  std::map<std::string, const json*> inf_by_outcome;
  for (const auto& e : inference) inf_by_outcome[e.at("outcome").get<std::string>()] = &e;

  std::ostringstream notes;
  notes << "# Run report\n\n";
  notes << "Synthetic control fitted on the " << analysis.value("series", std::string("observed")) << " series.\n\n";
  if (!placebo_enabled)
    notes << "Placebo stage skipped: no p-value paths, confidence bounds or placebo difference-in-differences "
             "table were produced.\n\n";

  std::ostringstream freq;
  freq << "outcome,donor,count\n";
  for (const auto& name : outcomes) {
    const auto& sols = by_outcome[name];
    const json* inf = inf_by_outcome.count(name) ? inf_by_outcome[name] : nullptr;
    if (placebo_enabled && !inf)
      throw Error(ErrorCode::MissingArtifact, "placebo results for outcome '" + name + "' not found");
    BoundsByYear unit_bounds, avg_bounds;
    if (inf) {
      unit_bounds = read_bounds(inf->at("bounds"));
      avg_bounds = read_bounds(inf->at("subsets").at("bounds"));
      if (avg_bounds.by_year.empty()) avg_bounds = unit_bounds;
    }
    const auto avg = average_treatment_path(sols);

    // Average gap with inverted bounds.
    {
      std::ostringstream out;
      out << "year,average_gap,lower,upper\n";
      for (int y = avg.mean_gap.first_year; y <= avg.mean_gap.last_year(); ++y) {
        out << y << ',' << format_double(avg.mean_gap.at(y)) << ',';
        if (avg_bounds.has(y))
          out << format_double(avg_bounds.by_year[y].first) << ',' << format_double(avg_bounds.by_year[y].second);
        else
          out << ',';
        out << '\n';
      }
      emit("report/fig4_" + name + "_average_gap.csv", out.str());
    }
    // One file per treated unit.
    for (const auto& s : sols) {
      std::ostringstream out;
      out << "year,observed,synthetic,gap,lower,upper\n";
      for (int y = s.observed.first_year; y <= s.observed.last_year(); ++y) {
        out << y << ',' << format_double(s.observed.at(y)) << ',' << format_double(s.synthetic_path.at(y)) << ','
            << format_double(s.gaps.values.at(y)) << ',';
        if (unit_bounds.has(y))
          out << format_double(unit_bounds.by_year[y].first) << ',' << format_double(unit_bounds.by_year[y].second);
        else
          out << ',';
        out << '\n';
      }
      emit("report/fig5_" + name + "_" + s.treated.code + ".csv", out.str());
    }
    for (const auto& [donor, count] : donor_frequency(sols).counts) freq << name << ',' << donor << ',' << count << '\n';

    if (inf) {
      std::ostringstream out;
      out << "year,p_average,p_subsets\n";
      const int first = inf->at("average_p_first_year").get<int>();
      const auto& p = inf->at("average_p");
      const int sfirst = inf->at("subsets").at("p_first_year").get<int>();
      const auto& sp = inf->at("subsets").at("p");
      for (std::size_t k = 0; k < p.size(); ++k) {
        const int y = first + static_cast<int>(k);
        const auto sk = static_cast<long>(y - sfirst);
        out << y << ',' << cell(p[k]) << ','
            << (sk >= 0 && sk < static_cast<long>(sp.size()) ? cell(sp[static_cast<std::size_t>(sk)]) : "") << '\n';
      }
      emit("report/fig7_" + name + "_pvalues.csv", out.str());
    }

    // Predictor balance: treated vs synthetic, averaged over treated units.
    {
      TextTable t;
      t.header = {"Predictor", "Treated", "Synthetic"};
      const auto& names = sols.front().balance;
      for (std::size_t k = 0; k < names.size(); ++k) {
        double tr = 0.0, sy = 0.0;
        for (const auto& s : sols) {
          tr += s.balance[k].treated;
          sy += s.balance[k].synthetic;
        }
        const double n = static_cast<double>(sols.size());
        t.rows.push_back({balance_label(names[k].name), fixed(tr / n), fixed(sy / n)});
      }
      std::ostringstream out;
      out << "Predictor balance for " << name << " (averages over " << sols.size() << " treated units)\n";
      out << t.render();
      emit("report/table1_" + name + "_balance.txt", out.str());
    }
  }
  emit("report/fig6_donor_frequency.csv", freq.str());

  // Placebo difference-in-differences, one column per outcome.
  if (placebo_enabled) {
    TextTable t;
    t.header = {""};
    for (std::size_t k = 0; k < outcomes.size(); ++k) t.header.push_back("(" + std::to_string(k + 1) + ")");
    std::vector<std::string> names{"Outcome"}, coef{"Treated x post"}, se{""}, ci{"95% confidence bounds"},
        rfe{"Region FE p-value"}, tfe{"Time FE p-value"}, r2{"Within R-squared"}, nobs{"N"}, ntr{"Treated units"},
        nct{"Placebo units"};
    for (const auto& name : outcomes) {
      const auto& did = inf_by_outcome[name]->at("did");
      names.push_back(name);
      if (did.contains("coefficient")) {
        coef.push_back(fixed(did.at("coefficient")));
        se.push_back("(" + fixed(did.at("se_cluster")) + ")");
        ci.push_back("[" + fixed(did.at("ci_lower")) + ", " + fixed(did.at("ci_upper")) + "]");
        rfe.push_back(fixed(did.at("region_fe_p")));
        tfe.push_back(fixed(did.at("time_fe_p")));
        r2.push_back(fixed(did.at("r2_within")));
        nobs.push_back(std::to_string(did.at("n_obs").get<std::size_t>()));
        ntr.push_back(std::to_string(did.at("n_treated").get<std::size_t>()));
        nct.push_back(std::to_string(did.at("n_control").get<std::size_t>()));
      } else {
        for (auto* row : {&coef, &se, &ci, &rfe, &tfe, &r2, &nobs, &ntr, &nct}) row->push_back("n/a");
      }
    }
    t.rows = {names, coef, se, ci, rfe, tfe, r2, nobs, ntr, nct};
    std::ostringstream out;
    out << "Placebo difference-in-differences with region and year fixed effects\n";
    out << t.render();
    out << "Cluster-robust standard errors in parentheses, clustered by region.\n";
    emit("report/table2_did.txt", out.str());
  }

  // Equality of effects between two groups of treated units.
  {
    TextTable t;
    t.header = {"Outcome", "Difference", "t-stat", "p-value", "KS D", "KS p-value", "N above", "N below"};
    std::string covariate = "?";
    double threshold = 0.0;
    std::vector<std::string> notes_eq;
    for (const auto& e : analysis.at("outcomes")) {
      const auto& eq = e.at("equality");
      covariate = eq.at("covariate").get<std::string>();
      threshold = eq.at("threshold").get<double>();
      const auto name = e.at("outcome").get<std::string>();
      if (eq.contains("delta")) {
        t.rows.push_back({name, fixed(eq.at("delta")), fixed(eq.at("t_stat")), fixed(eq.at("t_pvalue")),
                          fixed(eq.at("ks_stat")), fixed(eq.at("ks_pvalue")),
                          std::to_string(eq.at("n_above").get<std::size_t>()),
                          std::to_string(eq.at("n_below").get<std::size_t>())});
      } else {
        t.rows.push_back({name, "n/a", "n/a", "n/a", "n/a", "n/a", "", ""});
        notes_eq.push_back(name + ": " + eq.value("note", std::string()));
      }
    }
    std::ostringstream out;
    out << "Equality of post-treatment effects: " << covariate << " > " << fixed(threshold, 2) << " vs. the rest\n";
    out << t.render();
    out << "Difference: mean effect above minus below (Welch t-test); KS: two-sample Kolmogorov-Smirnov test.\n";
    for (const auto& n : notes_eq) out << "Note: " << n << '\n';
    emit("report/table3_equality.txt", out.str());
  }

  // Mechanism screen.
  {
    const auto& m = analysis.at("mechanisms");
    std::ostringstream out;
    out << "First principal component of per-unit effects\n";
    if (m.contains("rows")) {
      out << "Explained share: " << fixed(m.at("explained_share")) << '\n';
      TextTable l;
      l.header = {"Outcome", "Loading"};
      for (const auto& [k, v] : m.at("loadings").items()) l.rows.push_back({k, fixed(v)});
      out << l.render();
      TextTable t;
      t.header = {"Mechanism", "Slope", "Intercept", "Correlation", "t-stat"};
      for (const auto& r : m.at("rows"))
        t.rows.push_back({r.at("mechanism").get<std::string>(), fixed(r.at("slope")), fixed(r.at("intercept")),
                          fixed(r.at("correlation")), fixed(r.at("t_stat"))});
      out << t.render();
    } else {
      out << "Not available: " << m.value("note", std::string()) << '\n';
    }
    emit("report/mechanisms.txt", out.str());
  }

  notes << "Files:\n\n";
  for (const auto& f : written) notes << "- " << f << '\n';
  emit("report/README.md", notes.str());
  return written;
}

}  // namespace qualsynth::detail
