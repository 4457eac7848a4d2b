#pragma once

#include <functional>

#include <Eigen/Dense>

namespace greybox::ode {

using Vector = Eigen::VectorXd;

struct Options {
  double abs_tol = 1e-8;
  double rel_tol = 1e-8;
  int max_steps = 100000;
};

struct Stats {
  int accepted = 0;
  int rejected = 0;
  int evaluations = 0;
};

using Rhs = std::function<void(double t, const Vector& y, Vector& dydt)>;

/// Called after each accepted step; may modify y and returns true if it did.
using StepHook = std::function<bool(double t, Vector& y)>;

/// Dormand–Prince 5(4) with adaptive step size from t0 to t1 (t1 > t0).
/// The initial step is chosen from the problem alone, so identical calls give
/// identical step sequences. Throws NumericalError on step-size underflow,
/// step-count exhaustion or non-finite values.
Stats integrate(const Rhs& rhs, double t0, double t1, Vector& y, const Options& opts,
                const StepHook& hook = {});

}  // namespace greybox::ode
