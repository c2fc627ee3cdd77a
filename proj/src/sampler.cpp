#include "qualsynth/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qualsynth/error.hpp"
#include "qualsynth/parallel.hpp"

namespace qualsynth {

void SamplerConfig::validate() const {
  if (iterations <= 0) throw Error(ErrorCode::InvalidConfig, "sampler.iterations must be positive");
  if (burn_in < 0 || burn_in >= iterations)
    throw Error(ErrorCode::InvalidConfig, "sampler.burn_in must satisfy 0 <= burn_in < iterations");
  if (!(target_acceptance > 0.0 && target_acceptance < 1.0))
    throw Error(ErrorCode::InvalidConfig, "sampler.target_acceptance must lie in (0, 1)");
  if (!(band_lower <= target_acceptance && target_acceptance <= band_upper))
    throw Error(ErrorCode::InvalidConfig, "sampler.target_acceptance must lie inside the acceptance band");
  if (!(proposal_df > 0.0)) throw Error(ErrorCode::InvalidConfig, "sampler.proposal_df must be positive");
  if (adaptation_window <= 0) throw Error(ErrorCode::InvalidConfig, "sampler.adaptation_window must be positive");
  if (!(initial_step > 0.0) || !std::isfinite(initial_step))
    throw Error(ErrorCode::InvalidConfig, "sampler.initial_step must be positive");
  if (!(interval_level > 0.0 && interval_level < 1.0))
    throw Error(ErrorCode::InvalidConfig, "sampler.interval_level must lie in (0, 1)");
}

double TargetDensity::operator()(double theta) const {
  if (!(theta >= lower && theta <= upper)) return -std::numeric_limits<double>::infinity();
  const double v = log_density(theta);
  return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
}

TargetDensity jeffreys_target(double residual_obs, double obs_scale) {
  if (!(obs_scale > 0.0) || !std::isfinite(obs_scale))
    throw Error(ErrorCode::NonPositiveScale, "observation scale must be positive and finite");
  const double inv_two_var = 1.0 / (2.0 * obs_scale * obs_scale);
  return TargetDensity{[=](double theta) {
    const double d = theta - residual_obs;
    return -d * d * inv_two_var;
  }};
}

RandomWalkKernel::RandomWalkKernel(const TargetDensity* target, double init, const SamplerConfig& cfg)
    : target_(target),
      state_(init),
      log_density_((*target)(init)),
      log_step_(std::log(cfg.initial_step)),
      target_acceptance_(cfg.target_acceptance),
      window_(static_cast<double>(cfg.adaptation_window)),
      proposal_(cfg.proposal_df) {
  if (!std::isfinite(init)) throw Error(ErrorCode::NonFiniteInit, "initial value is not finite");
  if (!std::isfinite(log_density_))
    throw Error(ErrorCode::NonFiniteInit, "target log-density is not finite at the initial value");
}

bool RandomWalkKernel::step(Rng& rng, bool adapt) {
  const double candidate = state_ + std::exp(log_step_) * proposal_(rng);
  const double lp = (*target_)(candidate);
  bool accepted = false;
  if (std::isfinite(lp)) {
    saw_finite_ = true;
    // Symmetric proposal: accept with probability min(1, pi(cand)/pi(cur)),
    // evaluated as a log difference.
    const double log_ratio = lp - log_density_;
    if (log_ratio >= 0.0 || std::log(uniform01(rng)) < log_ratio) {
      state_ = candidate;
      log_density_ = lp;
      accepted = true;
    }
  }
  if (adapt) log_step_ += ((accepted ? 1.0 : 0.0) - target_acceptance_) / window_;
  return accepted;
}

ChainResult mh_chain(const TargetDensity& target, double init, const SamplerConfig& cfg) {
  cfg.validate();
  RandomWalkKernel kernel(&target, init, cfg);
  Rng rng = make_rng(cfg.seed);
  ChainResult out;
  out.burn_in = cfg.burn_in;
  out.draws.reserve(static_cast<std::size_t>(cfg.iterations));
  long accepted_burn = 0, accepted_kept = 0;
  for (int g = 0; g < cfg.iterations; ++g) {
    const bool adapt = g < cfg.burn_in;
    const bool acc = kernel.step(rng, adapt);
    (adapt ? accepted_burn : accepted_kept) += acc ? 1 : 0;
    out.draws.push_back(kernel.state());
  }
  if (!kernel.saw_finite_proposal())
    throw Error(ErrorCode::DegenerateTarget, "every proposal had zero target density");
  out.burn_in_acceptance_rate = cfg.burn_in > 0 ? static_cast<double>(accepted_burn) / cfg.burn_in : 0.0;
  out.acceptance_rate = static_cast<double>(accepted_kept) / (cfg.iterations - cfg.burn_in);
  out.final_step = kernel.step_size();
  return out;
}

double effective_sample_size(std::span<const double> draws) {
  const std::size_t n = draws.size();
  if (n < 4) return static_cast<double>(n);
  const double mean = std::accumulate(draws.begin(), draws.end(), 0.0) / static_cast<double>(n);
  std::vector<double> c(draws.size());
  for (std::size_t i = 0; i < n; ++i) c[i] = draws[i] - mean;
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += c[i] * c[i + lag];
    return s / static_cast<double>(n);
  };
  const double gamma0 = autocov(0);
  if (!(gamma0 > 0.0)) return static_cast<double>(n);
  // Sum of consecutive autocovariance pairs while positive and monotone.
  double sum = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = autocov(2 * k) + autocov(2 * k + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    sum += pair;
    prev_pair = pair;
  }
  const double tau = (2.0 * sum - gamma0) / gamma0;
  const double ess = static_cast<double>(n) / std::max(tau, 1e-12);
  return std::min(ess, static_cast<double>(n));
}

double quantile(std::vector<double> data, double p) {
  if (data.empty()) throw Error(ErrorCode::EmptyInput, "quantile of an empty sample");
  p = std::clamp(p, 0.0, 1.0);
  const double h = (static_cast<double>(data.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  std::nth_element(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(lo), data.end());
  const double xlo = data[lo];
  if (lo + 1 >= data.size()) return xlo;
  const double xhi = *std::min_element(data.begin() + static_cast<std::ptrdiff_t>(lo) + 1, data.end());
  return xlo + (h - static_cast<double>(lo)) * (xhi - xlo);
}

PosteriorSummary summarize(std::span<const double> kept, double acceptance_rate, double level) {
  if (kept.empty()) throw Error(ErrorCode::EmptyInput, "no kept draws to summarize");
  std::vector<double> v(kept.begin(), kept.end());
  PosteriorSummary s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  s.median = quantile(v, 0.5);
  s.lower = quantile(v, (1.0 - level) / 2.0);
  s.upper = quantile(v, (1.0 + level) / 2.0);
  s.acceptance_rate = acceptance_rate;
  s.ess = effective_sample_size(kept);
  return s;
}

const PosteriorCell& SmoothedOutcome::cell(std::size_t region, int year) const {
  if (!years.contains(year)) throw Error(ErrorCode::YearMismatch, "year outside smoothed range");
  return cells[region * static_cast<std::size_t>(years.size()) + static_cast<std::size_t>(year - years.first)];
}

YearSeries SmoothedOutcome::mean_series(std::size_t region) const {
  YearSeries s(years.first, {});
  for (int y = years.first; y <= years.last; ++y) s.values.push_back(cell(region, y).summary.mean);
  return s;
}

YearSeries SmoothedOutcome::median_series(std::size_t region) const {
  YearSeries s(years.first, {});
  for (int y = years.first; y <= years.last; ++y) s.values.push_back(cell(region, y).summary.median);
  return s;
}

namespace {

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

SmoothedOutcome smooth_panel(const OutcomeKind& outcome, const std::vector<RegionId>& regions,
                             const std::vector<YearSeries>& observations, const SamplerConfig& cfg,
                             const SmoothingOptions& opts) {
  cfg.validate();
  if (observations.empty() || observations.size() != regions.size())
    throw Error(ErrorCode::EmptyInput, "smooth_panel needs one observation series per region");
  const YearRange years = observations.front().range();
  for (const auto& s : observations)
    if (s.range() != years) throw Error(ErrorCode::YearMismatch, "observation series do not share a year range");

  SmoothedOutcome out{outcome, regions, years, {}};
  const std::size_t n_regions = regions.size();
  const std::size_t n_years = static_cast<std::size_t>(years.size());
  out.cells.resize(n_regions * n_years);

  parallel_for(n_years, opts.threads, [&](std::size_t yi) {
    const int year = years.first + static_cast<int>(yi);
    std::vector<double> obs(n_regions);
    for (std::size_t r = 0; r < n_regions; ++r) obs[r] = observations[r].values[yi];
    double scale = opts.fixed_scale > 0.0 ? opts.fixed_scale : opts.scale_factor * sample_sd(obs);
    scale = std::max(scale, opts.min_scale);

    std::vector<TargetDensity> targets;
    targets.reserve(n_regions);
    for (double o : obs) targets.push_back(jeffreys_target(o, scale));
    SamplerConfig cell_cfg = cfg;
    cell_cfg.initial_step = 2.4 * scale;
    std::vector<RandomWalkKernel> kernels;
    kernels.reserve(n_regions);
    for (std::size_t r = 0; r < n_regions; ++r) kernels.emplace_back(&targets[r], obs[r], cell_cfg);

    Rng rng = make_rng(derive_seed(cfg.seed, hash_name(outcome.name), static_cast<std::uint64_t>(year)));
    const std::size_t kept = static_cast<std::size_t>(cfg.iterations - cfg.burn_in);
    std::vector<std::vector<double>> draws(n_regions, std::vector<double>());
    for (auto& d : draws) d.reserve(kept);
    std::vector<long> accepted(n_regions, 0);
    for (int g = 0; g < cfg.iterations; ++g) {
      const bool adapt = g < cfg.burn_in;
      for (std::size_t r = 0; r < n_regions; ++r) {
        const bool acc = kernels[r].step(rng, adapt);
        if (!adapt) {
          accepted[r] += acc ? 1 : 0;
          draws[r].push_back(kernels[r].state());
        }
      }
    }
    for (std::size_t r = 0; r < n_regions; ++r) {
      if (!kernels[r].saw_finite_proposal())
        throw Error(ErrorCode::DegenerateTarget, "chain for region '" + regions[r].code + "', outcome '" +
                                                     outcome.name + "', year " + std::to_string(year) +
                                                     " never proposed a point of positive density");
      PosteriorCell& c = out.cells[r * n_years + yi];
      c.region = r;
      c.year = year;
      c.observation = obs[r];
      c.obs_scale = scale;
      c.final_step = kernels[r].step_size();
      c.summary = summarize(draws[r], static_cast<double>(accepted[r]) / static_cast<double>(kept),
                            cfg.interval_level);
    }
  });
  return out;
}

long long total_iterations(const SamplerConfig& cfg, int n_outcomes, int n_years) {
  return static_cast<long long>(cfg.iterations) * n_outcomes * n_years;
}

}  // namespace qualsynth
