#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace greybox::optim {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Bound {
  std::optional<double> lower;
  std::optional<double> upper;

  bool inside(double x) const { return (!lower || x > *lower) && (!upper || x < *upper); }
};

using Objective = std::function<double(const Vector&)>;

/// lambda * sum[(u-l)/(x-l) + (u-l)/(u-x)]. A side without a bound drops its
/// term; with a single bound the width is taken as max(1, |bound|).
double barrier(const Vector& x, const std::vector<Bound>& bounds, double lambda);
Vector barrier_gradient(const Vector& x, const std::vector<Bound>& bounds, double lambda);

/// Central differences with step rel_step*max(1,|x_i|), one-sided where the
/// central stencil would leave the box or hit a non-finite value.
Vector fd_gradient(const Objective& f, const Vector& x, double fx, const std::vector<Bound>& bounds,
                   double rel_step = 1e-6, bool parallel = false);

/// Central-difference Hessian with step rel_step*max(1,|x_i|), symmetrized.
Matrix fd_hessian(const Objective& f, const Vector& x, double rel_step = 1e-4);

struct Options {
  int max_iterations = 500;
  /// Stop when max_i |g_i| * max(1, |x_i|) falls below this.
  double gradient_tol = 1e-5;
  /// Stop after two consecutive steps with relative decrease below this.
  double relative_tol = 1e-10;
  double fd_step = 1e-6;
  double armijo = 1e-4;
  /// Largest change of any coordinate per iteration, in units of max(1, |x_i|).
  double max_step = 1.0;
  bool parallel = false;
  /// Called after every accepted step with (iteration, x, value).
  std::function<void(int, const Vector&, double)> trace;
};

enum class Status { Converged, IterationLimit, LineSearchFailed };

struct Result {
  Vector x;
  double value = 0.0;
  Vector gradient;
  int iterations = 0;
  int evaluations = 0;
  Status status = Status::Converged;
  std::string message;
  /// Accepted objective values, starting with the initial point.
  std::vector<double> history;
};

/// BFGS on the inverse Hessian with Armijo backtracking. Trial points are
/// kept strictly inside the bounds; the objective may return +inf (or throw)
/// to reject a point. Throws NumericalError if f(x0) is not finite.
Result minimize(const Objective& f, Vector x0, const std::vector<Bound>& bounds,
                const Options& opts = {});

}  // namespace greybox::optim
