#pragma once

#include <Eigen/Dense>
#include <functional>

namespace qualsynth {

struct NelderMeadOptions {
  int max_evaluations = 500;
  double initial_step = 1.0;
  /// Stop once max(f) - min(f) over the simplex falls below
  /// f_tolerance * (1 + |min f|).
  double f_tolerance = 1e-12;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

/// Derivative-free simplex minimization (standard reflection 1, expansion 2,
/// contraction 1/2, shrink 1/2). The starting point is the first evaluation.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x0,
                             const NelderMeadOptions& opts = {});

}  // namespace qualsynth
