#include "qualsynth/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace qualsynth {

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x0,
                             const NelderMeadOptions& opts) {
  const auto n = x0.size();
  NelderMeadResult res;
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    const double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  std::vector<Eigen::VectorXd> pts{x0};
  std::vector<double> vals{eval(x0)};
  if (n == 0 || opts.max_evaluations <= 1) {
    res.x = x0;
    res.value = vals[0];
    res.evaluations = evals;
    res.converged = n == 0;
    return res;
  }
  for (Eigen::Index i = 0; i < n && evals < opts.max_evaluations; ++i) {
    Eigen::VectorXd p = x0;
    p(i) += opts.initial_step;
    pts.push_back(p);
    vals.push_back(eval(p));
  }

  std::vector<std::size_t> order(pts.size());
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    std::vector<Eigen::VectorXd> p2;
    std::vector<double> v2;
    for (auto i : order) {
      p2.push_back(pts[i]);
      v2.push_back(vals[i]);
    }
    pts.swap(p2);
    vals.swap(v2);
  };

  bool converged = false;
  if (static_cast<Eigen::Index>(pts.size()) == n + 1) {
    order.resize(pts.size());
    while (evals < opts.max_evaluations) {
      sort_simplex();
      if (vals.back() - vals.front() <= opts.f_tolerance * (1.0 + std::abs(vals.front()))) {
        converged = true;
        break;
      }
      Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
      for (Eigen::Index i = 0; i < n; ++i) centroid += pts[static_cast<std::size_t>(i)];
      centroid /= static_cast<double>(n);
      const auto worst = static_cast<std::size_t>(n);

      const Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
      const double fr = eval(xr);
      if (fr < vals[0]) {
        if (evals >= opts.max_evaluations) {
          pts[worst] = xr;
          vals[worst] = fr;
          break;
        }
        const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
        const double fe = eval(xe);
        if (fe < fr) {
          pts[worst] = xe;
          vals[worst] = fe;
        } else {
          pts[worst] = xr;
          vals[worst] = fr;
        }
        continue;
      }
      if (fr < vals[worst - 1]) {
        pts[worst] = xr;
        vals[worst] = fr;
        continue;
      }
      if (evals >= opts.max_evaluations) break;
      const bool outside = fr < vals[worst];
      const Eigen::VectorXd xc =
          outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid)) : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
      const double fc = eval(xc);
      if (fc < (outside ? fr : vals[worst])) {
        pts[worst] = xc;
        vals[worst] = fc;
        continue;
      }
      for (std::size_t i = 1; i < pts.size() && evals < opts.max_evaluations; ++i) {
        pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
        vals[i] = eval(pts[i]);
      }
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(vals.begin(), vals.end()) - vals.begin());
  res.x = pts[best];
  res.value = vals[best];
  res.evaluations = evals;
  res.converged = converged;
  return res;
}

}  // namespace qualsynth
