#include "qualsynth/inference.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "qualsynth/error.hpp"
#include "qualsynth/parallel.hpp"
#include "qualsynth/rng.hpp"
#include "qualsynth/sampler.hpp"

namespace qualsynth {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_common_range(const YearSeries& ref, std::span<const GapSeries> others) {
  for (const auto& g : others)
    if (g.values.range() != ref.range())
      throw Error(ErrorCode::YearMismatch, "gap series for '" + g.region.code + "' covers different years");
}

}  // namespace

FitDiagnostics fit_diagnostics(const GapSeries& gaps, int t0) {
  double pre = 0.0, post = 0.0;
  int n_pre = 0, n_post = 0;
  for (int y = gaps.values.first_year; y <= gaps.values.last_year(); ++y) {
    const double g = gaps.values.at(y);
    if (y <= t0) {
      pre += g * g;
      ++n_pre;
    } else {
      post += g * g;
      ++n_post;
    }
  }
  const double mspe_pre = n_pre ? pre / n_pre : 0.0;
  const double mspe_post = n_post ? post / n_post : 0.0;
  FitDiagnostics d;
  d.rmse_pre = std::sqrt(mspe_pre);
  d.rmse_post = std::sqrt(mspe_post);
  if (mspe_pre > 0.0)
    d.ratio = mspe_post / mspe_pre;
  else
    d.ratio = mspe_post > 0.0 ? kInf : 0.0;
  return d;
}

double exact_p(const FitDiagnostics& treated, std::span<const FitDiagnostics> placebos) {
  if (placebos.empty()) throw Error(ErrorCode::TooFewPlacebos, "exact p-value needs at least one placebo");
  std::size_t count = 1;  // the treated unit itself
  for (const auto& p : placebos)
    if (p.ratio >= treated.ratio) ++count;
  return static_cast<double>(count) / static_cast<double>(placebos.size() + 1);
}

WeightedP weighted_p(const FitDiagnostics& treated, std::span<const FitDiagnostics> placebos, PlaceboWeighting rule,
                     double exclusion_factor) {
  if (placebos.empty()) throw Error(ErrorCode::TooFewPlacebos, "weighted p-value needs at least one placebo");
  WeightedP out;
  out.weights.assign(placebos.size(), 0.0);
  auto uniform_fallback = [&](const std::string& why) {
    out.fallback = true;
    out.notice = "DegenerateWeights: " + why + "; using the unweighted placebo share";
    std::fill(out.weights.begin(), out.weights.end(), 1.0 / static_cast<double>(placebos.size()));
  };

  if (rule == PlaceboWeighting::InverseDistance) {
    const double eps = 0.01 * treated.rmse_pre;
    bool ok = eps > 0.0;
    if (ok) {
      for (std::size_t j = 0; j < placebos.size(); ++j)
        out.weights[j] = 1.0 / std::max(std::abs(placebos[j].rmse_pre - treated.rmse_pre), eps);
    } else {
      uniform_fallback("treated pre-period RMSE is zero");
    }
  } else {
    for (std::size_t j = 0; j < placebos.size(); ++j)
      if (placebos[j].rmse_pre <= exclusion_factor * treated.rmse_pre) out.weights[j] = 1.0;
    if (std::accumulate(out.weights.begin(), out.weights.end(), 0.0) == 0.0)
      uniform_fallback("every placebo is excluded by the pre-fit rule");
  }
  const double total = std::accumulate(out.weights.begin(), out.weights.end(), 0.0);
  for (auto& w : out.weights) w /= total;
  for (std::size_t j = 0; j < placebos.size(); ++j)
    if (placebos[j].ratio >= treated.ratio) out.p += out.weights[j];
  out.p = std::min(out.p, 1.0);
  return out;
}

YearSeries per_period_p(const GapSeries& treated, std::span<const GapSeries> placebos, int t0) {
  if (placebos.empty()) throw Error(ErrorCode::TooFewPlacebos, "per-period p-values need at least one placebo");
  check_common_range(treated.values, placebos);
  YearSeries out(t0 + 1, {});
  for (int y = std::max(t0 + 1, treated.values.first_year); y <= treated.values.last_year(); ++y) {
    const double ref = std::abs(treated.values.at(y));
    std::size_t count = 0;
    for (const auto& p : placebos)
      if (std::abs(p.values.at(y)) >= ref) ++count;
    out.values.push_back(static_cast<double>(count) / static_cast<double>(placebos.size()));
  }
  return out;
}

std::vector<Bounds> invert_bounds(std::span<const GapSeries> placebo_gaps, double level, int t0) {
  if (!(level > 0.0 && level <= 1.0)) throw Error(ErrorCode::InvalidConfig, "bound level must lie in (0, 1]");
  if (static_cast<double>(placebo_gaps.size()) < 1.0 / level - 1e-9)
    throw Error(ErrorCode::TooFewPlacebos, std::to_string(placebo_gaps.size()) + " placebos cannot support level " +
                                               std::to_string(level));
  check_common_range(placebo_gaps.front().values, placebo_gaps);
  std::vector<Bounds> out;
  const auto& ref = placebo_gaps.front().values;
  for (int y = std::max(t0 + 1, ref.first_year); y <= ref.last_year(); ++y) {
    std::vector<double> v;
    v.reserve(placebo_gaps.size());
    for (const auto& g : placebo_gaps) v.push_back(g.values.at(y));
    out.push_back({y, quantile(v, level / 2.0), quantile(v, 1.0 - level / 2.0)});
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

YearSeries mean_path(std::span<const GapSeries> gaps) {
  YearSeries out(gaps.front().values.first_year, std::vector<double>(gaps.front().values.size(), 0.0));
  for (const auto& g : gaps)
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += g.values.values[i];
  for (auto& v : out.values) v /= static_cast<double>(gaps.size());
  return out;
}

double log10_choose(std::size_t n, std::size_t k) {
  return (std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
          std::lgamma(static_cast<double>(n - k) + 1.0)) /
         std::log(10.0);
}

}  // namespace

PlaceboInference infer_from_gaps(const OutcomeKind& outcome, int t0, std::vector<GapSeries> treated_gaps,
                                 std::vector<GapSeries> placebo_gaps, const PlaceboBudget& budget, std::uint64_t seed) {
  if (treated_gaps.empty()) throw Error(ErrorCode::EmptyInput, "no treated gap series");
  if (placebo_gaps.empty()) throw Error(ErrorCode::TooFewPlacebos, "no placebo gap series");
  check_common_range(treated_gaps.front().values, treated_gaps);
  check_common_range(treated_gaps.front().values, placebo_gaps);

  PlaceboInference out;
  out.outcome = outcome;
  out.t0 = t0;
  for (const auto& g : placebo_gaps) out.placebo_stats.push_back(fit_diagnostics(g, t0));
  for (const auto& g : treated_gaps) {
    TreatedInference ti;
    ti.region = g.region;
    ti.stats = fit_diagnostics(g, t0);
    ti.p_rmse_J1 = exact_p(ti.stats, out.placebo_stats);
    auto wp = weighted_p(ti.stats, out.placebo_stats, budget.weighting, budget.exclusion_factor);
    ti.p_weighted = wp.p;
    if (wp.fallback) out.warnings.push_back(g.region.code + ": " + wp.notice);
    ti.p_periods_J = per_period_p(g, placebo_gaps, t0);
    out.treated.push_back(std::move(ti));
  }
  out.average_gap = mean_path(treated_gaps);
  {
    GapSeries avg{RegionId{"average", "average", "", true}, outcome, out.average_gap, 0.0, 0.0};
    out.average_p_periods_J = per_period_p(avg, placebo_gaps, t0);
  }
  try {
    out.bounds = invert_bounds(placebo_gaps, budget.level, t0);
  } catch (const Error& e) {
    out.warnings.push_back(e.what());
  }

  if (budget.subsets > 0) {
    auto& sub = out.subsets;
    const std::size_t j = placebo_gaps.size();
    sub.subset_size = std::min(treated_gaps.size(), j);
    sub.sampled = budget.subsets;
    sub.log10_possible_subsets = log10_choose(j, sub.subset_size);
    const auto& ref = out.average_gap;
    const int first_post = std::max(t0 + 1, ref.first_year);
    const auto n_post = static_cast<std::size_t>(std::max(0, ref.last_year() - first_post + 1));
    sub.placebo_averages = sub.sampled * n_post;

    // averages[s][post-year]
    std::vector<std::vector<double>> averages(sub.sampled, std::vector<double>(n_post, 0.0));
    Rng rng = make_rng(derive_seed(seed, hash_name(outcome.name), 0xa7e5ULL));
    std::vector<std::size_t> idx(j);
    for (std::size_t s = 0; s < sub.sampled; ++s) {
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = 0; i < sub.subset_size; ++i) {
        const auto pick = i + static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(j - i));
        std::swap(idx[i], idx[pick]);
      }
      for (std::size_t t = 0; t < n_post; ++t) {
        double acc = 0.0;
        for (std::size_t i = 0; i < sub.subset_size; ++i)
          acc += placebo_gaps[idx[i]].values.at(first_post + static_cast<int>(t));
        averages[s][t] = acc / static_cast<double>(sub.subset_size);
      }
    }
    sub.p_periods = YearSeries(first_post, {});
    for (std::size_t t = 0; t < n_post; ++t) {
      const double target = std::abs(ref.at(first_post + static_cast<int>(t)));
      std::size_t count = 0;
      std::vector<double> col(sub.sampled);
      for (std::size_t s = 0; s < sub.sampled; ++s) {
        col[s] = averages[s][t];
        if (std::abs(col[s]) >= target) ++count;
      }
      sub.p_periods.values.push_back(static_cast<double>(count) / static_cast<double>(sub.sampled));
      if (static_cast<double>(sub.sampled) >= 1.0 / budget.level - 1e-9)
        sub.bounds.push_back({first_post + static_cast<int>(t), quantile(col, budget.level / 2.0),
                              quantile(col, 1.0 - budget.level / 2.0)});
    }
  }
  out.treated_gaps = std::move(treated_gaps);
  out.placebo_gaps = std::move(placebo_gaps);
  return out;
}

PlaceboInference placebo_run(const PanelDataset& ds, std::size_t outcome, const PredictorSpec& spec,
                             const SynthOptions& opts, const PlaceboBudget& budget,
                             std::span<const SynthSolution> treated_solutions) {
  const auto treated = ds.treated_indices();
  const auto donors = ds.donor_indices();
  if (treated.empty()) throw Error(ErrorCode::NoTreatedUnits, "placebo run needs a treated unit");
  if (donors.empty()) throw Error(ErrorCode::EmptyDonorPool, "placebo run needs donors");
  std::vector<std::string> warnings;
  if (donors.size() < budget.min_donors)
    warnings.push_back("small donor pool: " + std::to_string(donors.size()) + " placebos (recommended >= " +
                       std::to_string(budget.min_donors) + ")");

  std::vector<GapSeries> treated_gaps;
  if (!treated_solutions.empty()) {
    for (const auto& s : treated_solutions) treated_gaps.push_back(s.gaps);
  } else {
    std::vector<std::optional<GapSeries>> slots(treated.size());
    parallel_for(treated.size(), budget.threads,
                 [&](std::size_t i) { slots[i] = fit_synth(ds, treated[i], outcome, spec, opts).gaps; });
    for (auto& s : slots) treated_gaps.push_back(std::move(*s));
  }

  std::vector<std::optional<GapSeries>> slots(donors.size());
  std::vector<std::string> errors(donors.size());
  parallel_for(donors.size(), budget.threads, [&](std::size_t i) {
    std::vector<std::size_t> pool;
    for (std::size_t r = 0; r < ds.n_regions(); ++r)
      if (r != donors[i] && (budget.treated_in_donor_pool || !ds.regions()[r].treated)) pool.push_back(r);
    try {
      slots[i] = fit_synth(ds, donors[i], outcome, spec, opts, &pool).gaps;
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  std::vector<GapSeries> placebo_gaps;
  std::vector<std::string> failed;
  for (std::size_t i = 0; i < donors.size(); ++i) {
    if (slots[i]) {
      placebo_gaps.push_back(std::move(*slots[i]));
    } else {
      failed.push_back(ds.regions()[donors[i]].code);
      warnings.push_back("placebo '" + ds.regions()[donors[i]].code + "' failed and is excluded: " + errors[i]);
    }
  }
  auto out = infer_from_gaps(ds.outcomes()[outcome], ds.t0(), std::move(treated_gaps), std::move(placebo_gaps), budget,
                             opts.seed);
  out.failed_placebos = std::move(failed);
  out.warnings.insert(out.warnings.begin(), warnings.begin(), warnings.end());
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Balanced region x year panel, row-major by region.
struct StackedPanel {
  std::size_t g = 0;
  std::size_t t = 0;
  std::vector<double> y;
  std::vector<double> d;
};

std::vector<double> demean(const std::vector<double>& x, std::size_t g, std::size_t t, bool by_region, bool by_time) {
  std::vector<double> row(g, 0.0), col(t, 0.0);
  double all = 0.0;
  for (std::size_t i = 0; i < g; ++i)
    for (std::size_t s = 0; s < t; ++s) {
      const double v = x[i * t + s];
      row[i] += v;
      col[s] += v;
      all += v;
    }
  for (auto& r : row) r /= static_cast<double>(t);
  for (auto& c : col) c /= static_cast<double>(g);
  all /= static_cast<double>(g * t);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < g; ++i)
    for (std::size_t s = 0; s < t; ++s) {
      double v = x[i * t + s];
      if (by_region) v -= row[i];
      if (by_time) v -= col[s];
      if (by_region && by_time) v += all;
      if (!by_region && !by_time) v -= all;
      out[i * t + s] = v;
    }
  return out;
}

struct OneRegressor {
  double beta = 0.0;
  double ssr = 0.0;
  double sxx = 0.0;
  std::vector<double> resid;
};

OneRegressor regress(const std::vector<double>& y, const std::vector<double>& x) {
  OneRegressor r;
  double sxy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    r.sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  r.beta = r.sxx > 0.0 ? sxy / r.sxx : 0.0;
  r.resid.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    r.resid[i] = y[i] - r.beta * x[i];
    r.ssr += r.resid[i] * r.resid[i];
  }
  return r;
}

double f_test_p(double ssr_restricted, double ssr_full, double q, double df) {
  if (df <= 0.0 || q <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  const double diff = std::max(0.0, ssr_restricted - ssr_full);
  if (ssr_full <= 0.0) return diff > 0.0 ? 0.0 : 1.0;
  const double f = (diff / q) / (ssr_full / df);
  return boost::math::cdf(boost::math::complement(boost::math::fisher_f(q, df), f));
}

}  // namespace

DidResult placebo_did(std::span<const GapSeries> treated_gaps, std::span<const GapSeries> placebo_gaps, int t0) {
  if (treated_gaps.empty() || placebo_gaps.empty())
    throw Error(ErrorCode::SingularDesign, "placebo DiD needs treated and control gap series");
  check_common_range(treated_gaps.front().values, treated_gaps);
  check_common_range(treated_gaps.front().values, placebo_gaps);
  const auto& ref = treated_gaps.front().values;
  StackedPanel p;
  p.g = treated_gaps.size() + placebo_gaps.size();
  p.t = ref.size();
  for (std::size_t i = 0; i < p.g; ++i) {
    const bool treated = i < treated_gaps.size();
    const auto& s = treated ? treated_gaps[i].values : placebo_gaps[i - treated_gaps.size()].values;
    for (std::size_t k = 0; k < p.t; ++k) {
      p.y.push_back(s.values[k]);
      p.d.push_back(treated && s.first_year + static_cast<int>(k) > t0 ? 1.0 : 0.0);
    }
  }
  const auto yw = demean(p.y, p.g, p.t, true, true);
  const auto dw = demean(p.d, p.g, p.t, true, true);
  const auto full = regress(yw, dw);
  if (!(full.sxx > 1e-12))
    throw Error(ErrorCode::SingularDesign, "treated x post indicator has no within variation");

  DidResult r;
  r.coefficient = full.beta;
  r.n_obs = p.g * p.t;
  r.n_treated = treated_gaps.size();
  r.n_control = placebo_gaps.size();
  const double n = static_cast<double>(r.n_obs);
  const double g = static_cast<double>(p.g);
  const double k = static_cast<double>(p.t);  // slope + (T - 1) time effects
  double meat = 0.0;
  for (std::size_t i = 0; i < p.g; ++i) {
    double score = 0.0;
    for (std::size_t s = 0; s < p.t; ++s) score += dw[i * p.t + s] * full.resid[i * p.t + s];
    meat += score * score;
  }
  const double correction = (g / (g - 1.0)) * ((n - 1.0) / std::max(n - k, 1.0));
  r.se_cluster = std::sqrt(correction * meat) / full.sxx;
  const double scale = std::max(1.0, std::abs(full.beta));
  r.degenerate = full.ssr <= 1e-24 * scale * scale * n;
  if (r.degenerate) r.se_cluster = 0.0;
  const double crit = boost::math::quantile(boost::math::students_t(g - 1.0), 0.975);
  r.ci_lower = r.coefficient - crit * r.se_cluster;
  r.ci_upper = r.coefficient + crit * r.se_cluster;
  double tss = 0.0;
  for (double v : yw) tss += v * v;
  r.r2_within = tss > 0.0 ? std::clamp(1.0 - full.ssr / tss, 0.0, 1.0) : 0.0;

  const double df_full = n - g - k;
  const auto no_region = regress(demean(p.y, p.g, p.t, false, true), demean(p.d, p.g, p.t, false, true));
  const auto no_time = regress(demean(p.y, p.g, p.t, true, false), demean(p.d, p.g, p.t, true, false));
  r.region_fe_p = f_test_p(no_region.ssr, full.ssr, g - 1.0, df_full);
  r.time_fe_p = f_test_p(no_time.ssr, full.ssr, k - 1.0, df_full);
  return r;
}

// ---------------------------------------------------------------------------

double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::TooFew, "KS statistic needs two nonempty samples");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    const double fa = static_cast<double>(i) / static_cast<double>(x.size());
    const double fb = static_cast<double>(j) / static_cast<double>(y.size());
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

double kolmogorov_survival(double lambda) {
  if (!(lambda > 0.0)) return 1.0;
  constexpr double pi = 3.14159265358979323846;
  if (lambda < 1.18) {
    // Jacobi theta form of the CDF, accurate for small arguments.
    const double c = -pi * pi / (8.0 * lambda * lambda);
    double s = 0.0;
    for (int k = 1; k <= 50; ++k) {
      const double term = std::exp(c * (2 * k - 1) * (2 * k - 1));
      s += term;
      if (term < 1e-300) break;
    }
    return std::clamp(1.0 - std::sqrt(2.0 * pi) / lambda * s, 0.0, 1.0);
  }
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-300) break;
  }
  return std::clamp(s, 0.0, 1.0);
}

EqualityTestResult group_equality(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw Error(ErrorCode::TooFew, "each group needs at least 2 values");
  auto mean = [](std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
  auto var = [](std::span<const double> v, double m) {
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
  };
  EqualityTestResult r;
  r.n_group_a = a.size();
  r.n_group_b = b.size();
  const double ma = mean(a), mb = mean(b);
  r.delta = ma - mb;
  const double sa = var(a, ma) / static_cast<double>(a.size());
  const double sb = var(b, mb) / static_cast<double>(b.size());
  const double se = std::sqrt(sa + sb);
  if (se > 0.0) {
    r.t_stat = r.delta / se;
    const double df = (sa + sb) * (sa + sb) /
                      (sa * sa / static_cast<double>(a.size() - 1) + sb * sb / static_cast<double>(b.size() - 1));
    r.t_pvalue = 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(df), std::abs(r.t_stat)));
  } else {
    r.t_stat = r.delta == 0.0 ? 0.0 : std::copysign(kInf, r.delta);
    r.t_pvalue = r.delta == 0.0 ? 1.0 : 0.0;
  }
  r.ks_stat = ks_statistic(a, b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  r.ks_pvalue = kolmogorov_survival(std::sqrt(na * nb / (na + nb)) * r.ks_stat);
  return r;
}

// ---------------------------------------------------------------------------

MechanismScreen mechanism_screen(const std::vector<std::pair<std::string, std::vector<double>>>& gaps_by_outcome,
                                 const std::vector<std::pair<std::string, std::vector<double>>>& mechanisms) {
  if (gaps_by_outcome.empty()) throw Error(ErrorCode::EmptyInput, "mechanism screen needs at least one outcome");
  const std::size_t n = gaps_by_outcome.front().second.size();
  if (n < 3) throw Error(ErrorCode::TooFew, "mechanism screen needs at least 3 regions");
  const auto o = static_cast<Eigen::Index>(gaps_by_outcome.size());
  Eigen::MatrixXd z(static_cast<Eigen::Index>(n), o);
  Eigen::VectorXd raw_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (Eigen::Index c = 0; c < o; ++c) {
    const auto& [name, v] = gaps_by_outcome[static_cast<std::size_t>(c)];
    if (v.size() != n) throw Error(ErrorCode::YearMismatch, "gap vector for '" + name + "' has the wrong length");
    Eigen::Map<const Eigen::VectorXd> x(v.data(), static_cast<Eigen::Index>(n));
    const double m = x.mean();
    const double sd = std::sqrt((x.array() - m).square().sum() / static_cast<double>(n - 1));
    if (!(sd > 0.0)) throw Error(ErrorCode::DegenerateVariance, "gaps for '" + name + "' have zero variance");
    z.col(c) = (x.array() - m) / sd;
    raw_mean += x;
  }
  raw_mean /= static_cast<double>(o);

  const Eigen::MatrixXd corr = z.transpose() * z / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr);
  const Eigen::Index top = o - 1;  // eigenvalues ascending
  Eigen::VectorXd loadings = eig.eigenvectors().col(top);
  Eigen::VectorXd pc1 = z * loadings;
  auto correlation = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const Eigen::VectorXd ca = a.array() - a.mean();
    const Eigen::VectorXd cb = b.array() - b.mean();
    const double den = std::sqrt(ca.squaredNorm() * cb.squaredNorm());
    return den > 0.0 ? ca.dot(cb) / den : 0.0;
  };
  const double sign_ref = correlation(pc1, raw_mean);
  if (sign_ref < 0.0 || (sign_ref == 0.0 && loadings.sum() < 0.0)) {
    loadings = -loadings;
    pc1 = -pc1;
  }

  MechanismScreen out;
  out.pc1.assign(pc1.data(), pc1.data() + pc1.size());
  out.loadings.assign(loadings.data(), loadings.data() + loadings.size());
  out.explained_share = eig.eigenvalues()(top) / eig.eigenvalues().sum();
  for (const auto& [name, values] : mechanisms) {
    if (values.size() != n) throw Error(ErrorCode::YearMismatch, "mechanism '" + name + "' has the wrong length");
    Eigen::Map<const Eigen::VectorXd> x(values.data(), static_cast<Eigen::Index>(n));
    const Eigen::VectorXd cx = x.array() - x.mean();
    const double sxx = cx.squaredNorm();
    if (!(sxx > 0.0)) throw Error(ErrorCode::DegenerateVariance, "mechanism '" + name + "' has zero variance");
    MechanismRow row;
    row.mechanism = name;
    row.slope = cx.dot((pc1.array() - pc1.mean()).matrix()) / sxx;
    row.intercept = pc1.mean() - row.slope * x.mean();
    row.correlation = correlation(x, pc1);
    const double r2 = row.correlation * row.correlation;
    row.t_stat = r2 < 1.0 ? row.correlation * std::sqrt(static_cast<double>(n - 2) / (1.0 - r2))
                          : std::copysign(kInf, row.correlation);
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace qualsynth
