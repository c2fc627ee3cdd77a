#include "qualsynth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "qualsynth/error.hpp"
#include "qualsynth/nelder_mead.hpp"
#include "qualsynth/rng.hpp"

namespace qualsynth {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void SynthProblem::validate() const {
  const Index k = x1.size();
  const Index j = x0.cols();
  if (k == 0) throw Error(ErrorCode::InvalidConfig, "synthetic control needs at least one predictor");
  if (j < 2) throw Error(ErrorCode::EmptyDonorPool, "synthetic control needs at least 2 donors");
  if (x0.rows() != k || static_cast<Index>(predictors.size()) != k)
    throw Error(ErrorCode::InvalidConfig, "predictor dimensions do not agree");
  if (static_cast<Index>(donors.size()) != j) throw Error(ErrorCode::InvalidConfig, "donor list does not match X0");
  if (y1_pre.size() != static_cast<Index>(pre_years.size()) || y0_pre.rows() != y1_pre.size() || y0_pre.cols() != j)
    throw Error(ErrorCode::InvalidConfig, "pre-period outcome dimensions do not agree");
  if (training_years.empty() || validation_years.empty())
    throw Error(ErrorCode::InvalidConfig, "training and validation windows must both be nonempty");
  std::vector<int> all = training_years;
  all.insert(all.end(), validation_years.begin(), validation_years.end());
  std::sort(all.begin(), all.end());
  if (all != pre_years) throw Error(ErrorCode::InvalidConfig, "training and validation years must partition the pre-period");
}

std::vector<std::pair<std::string, double>> DonorWeights::sorted() const {
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < donors.size(); ++i) out.emplace_back(donors[i], weights[i]);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

double DonorWeights::weight_of(const std::string& donor) const {
  for (std::size_t i = 0; i < donors.size(); ++i)
    if (donors[i] == donor) return weights[i];
  return 0.0;
}

PredictorWeights PredictorWeights::uniform(const std::vector<std::string>& names) {
  return {names, std::vector<double>(names.size(), 1.0 / static_cast<double>(names.size()))};
}

// ---------------------------------------------------------------------------
// Inner problem

namespace {

struct QpWork {
  const MatrixXd& a;
  const VectorXd& b;
  double rho;
  double sqrt_rho;

  double objective(const VectorXd& w) const { return (a * w - b).squaredNorm() + rho * w.squaredNorm(); }
  VectorXd gradient(const VectorXd& w) const { return 2.0 * (a.transpose() * (a * w - b)) + 2.0 * rho * w; }

  // Minimizer over {sum w_F = 1} restricted to the free set F (no sign
  // constraints). Eliminates the last free variable: w_F = e_last + B z.
  VectorXd equality_solution(const std::vector<Index>& free) const {
    const auto m = static_cast<Index>(free.size());
    if (m == 1) return VectorXd::Ones(1);
    const Index k = a.rows();
    const Index last = free.back();
    MatrixXd mat(k + m, m - 1);
    VectorXd rhs(k + m);
    for (Index i = 0; i + 1 < m; ++i) mat.block(0, i, k, 1) = a.col(free[static_cast<std::size_t>(i)]) - a.col(last);
    mat.block(k, 0, m, m - 1).setZero();
    for (Index i = 0; i + 1 < m; ++i) {
      mat(k + i, i) = sqrt_rho;
      mat(k + m - 1, i) = -sqrt_rho;
    }
    rhs.head(k) = b - a.col(last);
    rhs.tail(m).setZero();
    rhs(k + m - 1) = -sqrt_rho;
    const VectorXd z = mat.householderQr().solve(rhs);
    VectorXd u(m);
    u.head(m - 1) = z;
    u(m - 1) = 1.0 - z.sum();
    return u;
  }
};

double kkt_residual(const VectorXd& w, const VectorXd& g, const std::vector<Index>& free) {
  double gbar = 0.0;
  for (auto i : free) gbar += g(i);
  gbar /= static_cast<double>(free.size());
  const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
  double r = std::abs(w.sum() - 1.0);
  r = std::max(r, std::max(0.0, -w.minCoeff()));
  std::vector<char> in_free(static_cast<std::size_t>(w.size()), 0);
  for (auto i : free) {
    in_free[static_cast<std::size_t>(i)] = 1;
    r = std::max(r, std::abs(g(i) - gbar) / scale);
  }
  for (Index j = 0; j < w.size(); ++j)
    if (!in_free[static_cast<std::size_t>(j)]) r = std::max(r, std::max(0.0, -(g(j) - gbar)) / scale);
  return r;
}

}  // namespace

SimplexQpResult solve_simplex_qp(const MatrixXd& a, const VectorXd& b, int max_iterations,
                                 const std::vector<Index>* warm_support) {
  const Index n = a.cols();
  if (n == 0) throw Error(ErrorCode::EmptyDonorPool, "simplex QP with no columns");
  if (a.rows() != b.size()) throw Error(ErrorCode::InvalidConfig, "QP dimensions do not agree");
  const double mean_norm = a.colwise().squaredNorm().mean();
  const double rho = 1e-10 * (mean_norm > 0.0 ? mean_norm : 1.0);
  const QpWork work{a, b, rho, std::sqrt(rho)};

  SimplexQpResult res;
  VectorXd w = VectorXd::Zero(n);
  std::vector<Index> free;

  if (warm_support && !warm_support->empty()) {
    std::vector<Index> seed(*warm_support);
    std::sort(seed.begin(), seed.end());
    seed.erase(std::unique(seed.begin(), seed.end()), seed.end());
    if (seed.back() < n && seed.front() >= 0) {
      const VectorXd u = work.equality_solution(seed);
      double total = 0.0;
      for (Index i = 0; i < u.size(); ++i) total += std::max(0.0, u(i));
      if (total > 0.0)
        for (Index i = 0; i < u.size(); ++i)
          if (u(i) > 0.0) {
            w(seed[static_cast<std::size_t>(i)]) = u(i) / total;
            free.push_back(seed[static_cast<std::size_t>(i)]);
          }
    }
  }
  if (free.empty()) {
    Index best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j) {
      const double v = (a.col(j) - b).squaredNorm();
      if (v < best_val) {
        best_val = v;
        best = j;
      }
    }
    w.setZero();
    w(best) = 1.0;
    free = {best};
  }
  res.trace.push_back(work.objective(w));

  VectorXd g;
  bool converged = false;
  int iter = 0;
  for (; iter < max_iterations; ++iter) {
    const VectorXd u = work.equality_solution(free);
    bool interior = true;
    for (Index i = 0; i < u.size(); ++i)
      if (!(u(i) > 0.0)) interior = false;
    if (interior) {
      for (std::size_t i = 0; i < free.size(); ++i) w(free[i]) = u(static_cast<Index>(i));
      res.trace.push_back(work.objective(w));
      g = work.gradient(w);
      double gbar = 0.0;
      for (auto i : free) gbar += g(i);
      gbar /= static_cast<double>(free.size());
      const double tol = 1e-12 * std::max(1.0, g.cwiseAbs().maxCoeff());
      Index enter = -1;
      double most_negative = -tol;
      std::vector<char> in_free(static_cast<std::size_t>(n), 0);
      for (auto i : free) in_free[static_cast<std::size_t>(i)] = 1;
      for (Index j = 0; j < n; ++j) {
        if (in_free[static_cast<std::size_t>(j)]) continue;
        const double reduced = g(j) - gbar;
        if (reduced < most_negative) {
          most_negative = reduced;
          enter = j;
        }
      }
      if (enter < 0) {
        converged = true;
        break;
      }
      free.push_back(enter);
      std::sort(free.begin(), free.end());
      continue;
    }
    // Move toward u until the first free weight reaches zero.
    double alpha = 1.0;
    std::size_t blocking = 0;
    for (std::size_t i = 0; i < free.size(); ++i) {
      const double wi = w(free[i]);
      const double ui = u(static_cast<Index>(i));
      if (ui <= 0.0) {
        const double step = wi / (wi - ui);
        if (step < alpha) {
          alpha = step;
          blocking = i;
        }
      }
    }
    std::vector<Index> next;
    for (std::size_t i = 0; i < free.size(); ++i) {
      const Index idx = free[i];
      double wi = w(idx) + alpha * (u(static_cast<Index>(i)) - w(idx));
      if (i == blocking || wi <= 0.0) wi = 0.0;
      w(idx) = wi;
      if (wi > 0.0) next.push_back(idx);
    }
    if (next.empty()) throw Error(ErrorCode::NumericalFailure, "active-set QP emptied its free set");
    w /= w.sum();
    free.swap(next);
    res.trace.push_back(work.objective(w));
  }
  if (!converged) g = work.gradient(w);

  res.w = w;
  res.objective = (a * w - b).squaredNorm();
  res.kkt_residual = kkt_residual(w, g, free);
  res.iterations = iter;
  res.support = free;
  if (!converged) res.kkt_residual = std::max(res.kkt_residual, 1.0);
  return res;
}

InnerSolution solve_w_given_v(const SynthProblem& prob, const PredictorWeights& v, const SynthOptions& opts,
                              const std::vector<Index>* warm_support) {
  const Index k = prob.n_predictors();
  if (static_cast<Index>(v.diag.size()) != k)
    throw Error(ErrorCode::InvalidConfig, "V has " + std::to_string(v.diag.size()) + " entries for " + std::to_string(k) +
                                              " predictors");
  VectorXd sv(k);
  for (Index i = 0; i < k; ++i) {
    const double d = v.diag[static_cast<std::size_t>(i)];
    if (!(d >= 0.0)) throw Error(ErrorCode::InvalidConfig, "V must be nonnegative");
    sv(i) = std::sqrt(d);
  }
  const MatrixXd a = sv.asDiagonal() * prob.x0;
  const VectorXd b = sv.cwiseProduct(prob.x1);
  InnerSolution out;
  out.qp = solve_simplex_qp(a, b, opts.qp_max_iterations, warm_support);
  if (!(out.qp.kkt_residual < opts.qp_kkt_tolerance))
    throw Error(ErrorCode::NumericalFailure, "inner QP for '" + prob.treated.code + "' stopped with KKT residual " +
                                                 std::to_string(out.qp.kkt_residual));
  out.objective = out.qp.objective;
  for (std::size_t j = 0; j < prob.donors.size(); ++j) {
    out.weights.donors.push_back(prob.donors[j].code);
    out.weights.weights.push_back(out.qp.w(static_cast<Index>(j)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Outer problem

namespace {

PredictorWeights softmax_weights(const SynthProblem& prob, const VectorXd& logits) {
  const Index k = prob.n_predictors();
  VectorXd full(k);
  full.head(k - 1) = logits;
  full(k - 1) = 0.0;
  const double m = full.maxCoeff();
  VectorXd e = (full.array() - m).exp();
  e /= e.sum();
  return {prob.predictors, std::vector<double>(e.data(), e.data() + k)};
}

double validation_mse(const SynthProblem& prob, const VectorXd& w) {
  double s = 0.0;
  for (int year : prob.validation_years) {
    const auto it = std::find(prob.pre_years.begin(), prob.pre_years.end(), year);
    const auto row = static_cast<Index>(it - prob.pre_years.begin());
    const double gap = prob.y1_pre(row) - prob.y0_pre.row(row).dot(w);
    s += gap * gap;
  }
  return s / static_cast<double>(prob.validation_years.size());
}

double outer_value(const SynthProblem& prob, const InnerSolution& inner, const SynthOptions& opts) {
  if (opts.objective == OuterObjective::Predictors) return (prob.x1 - prob.x0 * inner.qp.w).squaredNorm();
  return validation_mse(prob, inner.qp.w);
}

}  // namespace

double outer_objective(const SynthProblem& prob, const PredictorWeights& v, const SynthOptions& opts) {
  return outer_value(prob, solve_w_given_v(prob, v, opts), opts);
}

OuterSolution solve_v(const SynthProblem& prob, const SynthOptions& opts) {
  prob.validate();
  const Index k = prob.n_predictors();
  OuterSolution best;
  best.v = PredictorWeights::uniform(prob.predictors);
  best.inner = solve_w_given_v(prob, best.v, opts);
  best.uniform_objective = best.outer_objective = outer_value(prob, best.inner, opts);
  best.evaluations = 1;
  if (k == 1) return best;

  std::vector<Index> warm = best.inner.qp.support;
  // The softmax never reaches the boundary, so the exact vertices, where
  // V ignores every predictor but one, are scored directly.
  for (Index j = 0; j < k && best.evaluations < opts.evaluation_budget; ++j) {
    PredictorWeights v{prob.predictors, std::vector<double>(static_cast<std::size_t>(k), 0.0)};
    v.diag[static_cast<std::size_t>(j)] = 1.0;
    InnerSolution inner = solve_w_given_v(prob, v, opts, &warm);
    const double val = outer_value(prob, inner, opts);
    ++best.evaluations;
    if (val < best.outer_objective) {
      best.outer_objective = val;
      best.v = std::move(v);
      best.inner = std::move(inner);
    }
  }
  auto objective = [&](const VectorXd& logits) {
    const auto v = softmax_weights(prob, logits);
    InnerSolution inner = solve_w_given_v(prob, v, opts, &warm);
    warm = inner.qp.support;
    const double val = outer_value(prob, inner, opts);
    if (val < best.outer_objective) {
      best.outer_objective = val;
      best.v = v;
      best.inner = std::move(inner);
    }
    return val;
  };

  // Starting points: uniform V, then near-vertices putting 90% of the weight
  // on one predictor, visiting predictors in a shuffled cycle.
  std::vector<VectorXd> starts{VectorXd::Zero(k - 1)};
  Rng rng = make_rng(derive_seed(opts.seed, hash_name(prob.treated.code), 0x5eedULL));
  const double spike = std::log(9.0 * static_cast<double>(k - 1));
  std::vector<Index> order(static_cast<std::size_t>(k));
  for (int s = 0; s < opts.random_starts; ++s) {
    const auto pos = static_cast<std::size_t>(s) % order.size();
    if (pos == 0) {
      std::iota(order.begin(), order.end(), Index{0});
      std::shuffle(order.begin(), order.end(), rng);
    }
    const Index chosen = order[pos];
    VectorXd z = VectorXd::Zero(k - 1);
    if (chosen == k - 1)
      z.setConstant(-spike);
    else
      z(chosen) = spike;
    starts.push_back(z);
  }
  const int remaining = std::max(0, opts.evaluation_budget - best.evaluations);
  const int per_start = remaining / static_cast<int>(starts.size());
  int extra = remaining - per_start * static_cast<int>(starts.size());
  for (const auto& start : starts) {
    NelderMeadOptions nm;
    nm.max_evaluations = per_start + extra;
    extra = 0;
    if (nm.max_evaluations <= 0) continue;
    nm.initial_step = 1.0;
    const auto r = nelder_mead(objective, start, nm);
    best.evaluations += r.evaluations;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Fitting

SynthProblem build_problem(const PanelDataset& ds, std::size_t treated, std::size_t outcome, const PredictorSpec& spec,
                           const std::vector<std::size_t>* donors) {
  const auto& years = ds.years();
  const int t0 = ds.t0();
  if (t0 <= years.first || t0 >= years.last)
    throw Error(t0 >= years.last ? ErrorCode::NoPostPeriod : ErrorCode::NoPrePeriod,
                "t0 = " + std::to_string(t0) + " does not split " + std::to_string(years.first) + "-" +
                    std::to_string(years.last));
  std::vector<std::size_t> pool;
  if (donors) {
    pool = *donors;
  } else {
    for (std::size_t r = 0; r < ds.n_regions(); ++r)
      if (!ds.regions()[r].treated && r != treated) pool.push_back(r);
  }
  pool.erase(std::remove(pool.begin(), pool.end(), treated), pool.end());
  // Canonical donor order, so a fit depends on the donor set only.
  std::sort(pool.begin(), pool.end(),
            [&](std::size_t a, std::size_t b) { return ds.regions()[a].code < ds.regions()[b].code; });
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  if (pool.size() < 2)
    throw Error(ErrorCode::EmptyDonorPool, "unit '" + ds.regions()[treated].code + "' has fewer than 2 donors");

  SynthProblem p;
  p.treated = ds.regions()[treated];
  for (auto d : pool) p.donors.push_back(ds.regions()[d]);
  for (int y = years.first; y <= t0; ++y) p.pre_years.push_back(y);

  std::vector<std::string> covs = spec.covariates ? *spec.covariates : ds.covariate_names();
  std::vector<int> lags;
  if (spec.lag_years) {
    lags = *spec.lag_years;
    for (int y : lags)
      if (y < years.first || y > t0)
        throw Error(ErrorCode::InvalidConfig, "lag year " + std::to_string(y) + " is not a pre-treatment year");
  } else {
    for (int y = years.first; y <= t0; y += 2) lags.push_back(y);
  }

  const auto k = static_cast<Index>(covs.size() + lags.size());
  const auto j = static_cast<Index>(pool.size());
  std::vector<std::size_t> units{treated};
  units.insert(units.end(), pool.begin(), pool.end());
  MatrixXd raw(k, j + 1);
  Index row = 0;
  for (const auto& c : covs) {
    p.predictors.push_back(c);
    for (std::size_t u = 0; u < units.size(); ++u) {
      const auto v = ds.covariate(units[u], c);
      if (!v) throw Error(ErrorCode::UnknownName, "predictor covariate '" + c + "' is not in the panel");
      raw(row, static_cast<Index>(u)) = *v;
    }
    ++row;
  }
  const auto& oname = ds.outcomes()[outcome].name;
  for (int y : lags) {
    p.predictors.push_back(oname + "@" + std::to_string(y));
    for (std::size_t u = 0; u < units.size(); ++u) raw(row, static_cast<Index>(u)) = ds.value(units[u], outcome, y);
    ++row;
  }
  MatrixXd standardized(k, j + 1);
  for (Index r = 0; r < k; ++r) {
    const double mean = raw.row(r).mean();
    const double sd = std::sqrt((raw.row(r).array() - mean).square().mean());
    if (sd > 0.0)
      standardized.row(r) = (raw.row(r).array() - mean) / sd;
    else
      standardized.row(r).setZero();
  }
  p.x1_raw = raw.col(0);
  p.x0_raw = raw.rightCols(j);
  p.x1 = standardized.col(0);
  p.x0 = standardized.rightCols(j);

  const auto n_pre = static_cast<Index>(p.pre_years.size());
  p.y1_pre.resize(n_pre);
  p.y0_pre.resize(n_pre, j);
  for (Index t = 0; t < n_pre; ++t) {
    const int y = p.pre_years[static_cast<std::size_t>(t)];
    p.y1_pre(t) = ds.value(treated, outcome, y);
    for (Index d = 0; d < j; ++d) p.y0_pre(t, d) = ds.value(pool[static_cast<std::size_t>(d)], outcome, y);
  }
  const int n_train = spec.training_years ? *spec.training_years : static_cast<int>((n_pre + 1) / 2);
  if (n_train < 1 || n_train >= n_pre)
    throw Error(ErrorCode::InvalidConfig, "training window of " + std::to_string(n_train) + " years leaves no validation years");
  p.training_years.assign(p.pre_years.begin(), p.pre_years.begin() + n_train);
  p.validation_years.assign(p.pre_years.begin() + n_train, p.pre_years.end());
  p.validate();
  return p;
}

SynthSolution fit_synth(const PanelDataset& ds, std::size_t treated, std::size_t outcome, const PredictorSpec& spec,
                        const SynthOptions& opts, const std::vector<std::size_t>* donors) {
  const SynthProblem prob = build_problem(ds, treated, outcome, spec, donors);
  SynthOptions keyed = opts;
  keyed.seed = derive_seed(opts.seed, hash_name(ds.outcomes()[outcome].name));
  const OuterSolution outer = solve_v(prob, keyed);
  const VectorXd& w = outer.inner.qp.w;

  SynthSolution s;
  s.treated = prob.treated;
  s.outcome = ds.outcomes()[outcome];
  s.t0 = ds.t0();
  s.weights = outer.inner.weights;
  s.v = outer.v;
  s.inner_objective = outer.inner.objective;
  s.outer_objective = outer.outer_objective;
  s.observed = ds.series(treated, outcome);
  s.synthetic_path = YearSeries(ds.years().first, std::vector<double>(ds.n_years(), 0.0));
  YearSeries gaps(ds.years().first, std::vector<double>(ds.n_years(), 0.0));
  std::vector<std::size_t> donor_rows;
  for (const auto& d : prob.donors) donor_rows.push_back(ds.region_index(d.code));
  for (int y = ds.years().first; y <= ds.years().last; ++y) {
    double synth = 0.0;
    for (std::size_t d = 0; d < donor_rows.size(); ++d) synth += w(static_cast<Index>(d)) * ds.value(donor_rows[d], outcome, y);
    s.synthetic_path.at(y) = synth;
    gaps.at(y) = s.observed.at(y) - synth;
  }
  s.gaps = make_gap_series(s.treated, s.outcome, std::move(gaps), s.t0);
  s.rmse_pre = s.gaps.rmse_pre;
  s.rmse_post = s.gaps.rmse_post;
  const VectorXd synth_x = prob.x0_raw * w;
  for (Index r = 0; r < prob.n_predictors(); ++r)
    s.balance.push_back({prob.predictors[static_cast<std::size_t>(r)], prob.x1_raw(r), synth_x(r)});
  if (s.rmse_pre > opts.hull_rmse_threshold)
    s.warnings.push_back("DonorHullWarning: pre-period RMSE " + std::to_string(s.rmse_pre) + " exceeds " +
                         std::to_string(opts.hull_rmse_threshold) + " for '" + s.treated.code + "'");
  return s;
}

AveragePath average_treatment_path(std::span<const SynthSolution> solutions) {
  if (solutions.empty()) throw Error(ErrorCode::EmptyInput, "no solutions to average");
  const auto& first = solutions.front();
  AveragePath out;
  out.outcome = first.outcome;
  out.t0 = first.t0;
  out.n_units = solutions.size();
  out.mean_gap = YearSeries(first.gaps.values.first_year, std::vector<double>(first.gaps.values.size(), 0.0));
  for (const auto& s : solutions) {
    if (s.gaps.values.range() != out.mean_gap.range() || s.t0 != out.t0)
      throw Error(ErrorCode::YearMismatch, "solutions cover different years or treatment dates");
    if (!(s.outcome == out.outcome))
      throw Error(ErrorCode::YearMismatch, "solutions mix outcomes '" + s.outcome.name + "' and '" + out.outcome.name + "'");
    for (std::size_t i = 0; i < s.gaps.values.size(); ++i) out.mean_gap.values[i] += s.gaps.values.values[i];
  }
  for (auto& v : out.mean_gap.values) v /= static_cast<double>(solutions.size());
  double post = 0.0;
  int n_post = 0;
  for (int y = out.mean_gap.first_year; y <= out.mean_gap.last_year(); ++y)
    if (y > out.t0) {
      post += out.mean_gap.at(y);
      ++n_post;
    }
  out.atet = n_post > 0 ? post / n_post : 0.0;
  return out;
}

DonorFrequency donor_frequency(std::span<const SynthSolution> solutions, double threshold) {
  if (!(threshold >= 0.0)) throw Error(ErrorCode::InvalidConfig, "donor frequency threshold must be >= 0");
  DonorFrequency out;
  out.threshold = threshold;
  std::map<std::string, int> counts;
  for (const auto& s : solutions) {
    std::vector<std::pair<std::string, double>> table;
    for (const auto& [donor, weight] : s.weights.sorted())
      if (weight > threshold) {
        ++counts[donor];
        table.emplace_back(donor, weight);
      }
    out.tables.emplace_back(s.treated.code, std::move(table));
  }
  out.counts.assign(counts.begin(), counts.end());
  std::stable_sort(out.counts.begin(), out.counts.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

}  // namespace qualsynth
