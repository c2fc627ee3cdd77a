#include "qualsynth/trend_filter.hpp"

#include <cmath>
#include <vector>

#include "qualsynth/error.hpp"

namespace qualsynth {

namespace {

// In-place LDL' factorization and solve for a symmetric positive definite
// pentadiagonal matrix with diagonal d, first super-diagonal e and second
// super-diagonal f. Overwrites b with the solution.
void solve_pentadiagonal(std::vector<double> d, std::vector<double> e, std::vector<double> f,
                         std::vector<double>& b) {
  const std::size_t n = d.size();
  // Factor: A = L D L', L unit lower with two sub-diagonals (l1, l2).
  std::vector<double> l1(n, 0.0), l2(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= 1) {
      double a = e[i - 1];
      if (i >= 2) a -= l1[i - 2] * l2[i - 2] * d[i - 2];
      l1[i - 1] = a / d[i - 1];
      d[i] -= l1[i - 1] * l1[i - 1] * d[i - 1];
    }
    if (i >= 2) d[i] -= l2[i - 2] * l2[i - 2] * d[i - 2];
    if (i + 2 < n) l2[i] = f[i] / d[i];
  }
  // l1[i] multiplies row i+1, l2[i] multiplies row i+2.
  for (std::size_t i = 1; i < n; ++i) {
    b[i] -= l1[i - 1] * b[i - 1];
    if (i >= 2) b[i] -= l2[i - 2] * b[i - 2];
  }
  for (std::size_t i = 0; i < n; ++i) b[i] /= d[i];
  for (std::size_t k = n; k-- > 0;) {
    if (k + 1 < n) b[k] -= l1[k] * b[k + 1];
    if (k + 2 < n) b[k] -= l2[k] * b[k + 2];
  }
}

}  // namespace

TrendDecomposition hp_filter(const YearSeries& series, double phi) {
  const std::size_t n = series.size();
  if (n < 3) throw Error(ErrorCode::TooShort, "HP filter needs at least 3 observations, got " + std::to_string(n));
  if (!(phi >= 0.0)) throw Error(ErrorCode::NegativePhi, "phi must be >= 0");
  for (double v : series.values)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "HP filter input contains a non-finite value");

  TrendDecomposition out{series, YearSeries(series.first_year, std::vector<double>(n, 0.0)), phi};
  if (phi == 0.0) return out;

  // (I + phi D'D)^{-1} y = y - D' (D D' + I/phi)^{-1} D y. The (n-2)x(n-2)
  // system D D' + I/phi is pentadiagonal with conditioning independent of phi,
  // which keeps the solve accurate for very large smoothing parameters.
  const auto& y = series.values;
  const std::size_t m = n - 2;
  std::vector<double> rhs(m);
  for (std::size_t i = 0; i < m; ++i) rhs[i] = y[i] - 2.0 * y[i + 1] + y[i + 2];
  std::vector<double> d(m, 6.0 + 1.0 / phi), e(m > 0 ? m - 1 : 0, -4.0), f(m > 1 ? m - 2 : 0, 1.0);
  solve_pentadiagonal(std::move(d), std::move(e), std::move(f), rhs);

  // cycle = D' z
  std::vector<double> cycle(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    cycle[i] += rhs[i];
    cycle[i + 1] -= 2.0 * rhs[i];
    cycle[i + 2] += rhs[i];
  }
  for (std::size_t t = 0; t < n; ++t) {
    out.trend.values[t] = y[t] - cycle[t];
    out.cycle.values[t] = y[t] - out.trend.values[t];
  }
  return out;
}

double ravn_uhlig_phi(double frequency_ratio) { return 1600.0 * std::pow(frequency_ratio, 4); }

double annual_phi() { return ravn_uhlig_phi(0.25); }

}  // namespace qualsynth
