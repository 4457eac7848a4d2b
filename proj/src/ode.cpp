#include "greybox/ode.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "greybox/error.hpp"

namespace greybox::ode {

namespace {

// Dormand & Prince (1980) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
// Error coefficients: 5th-order minus embedded 4th-order weights.
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

double error_norm(const Vector& err, const Vector& y0, const Vector& y1, const Options& o) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double sc = o.abs_tol + o.rel_tol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = err[i] / sc;
    sum += r * r;
  }
  return err.size() ? std::sqrt(sum / static_cast<double>(err.size())) : 0.0;
}

double weighted_norm(const Vector& v, const Vector& y, const Options& o) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double r = v[i] / (o.abs_tol + o.rel_tol * std::abs(y[i]));
    sum += r * r;
  }
  return v.size() ? std::sqrt(sum / static_cast<double>(v.size())) : 0.0;
}

}  // namespace

Stats integrate(const Rhs& rhs, double t0, double t1, Vector& y, const Options& opts,
                const StepHook& hook) {
  Stats stats;
  const double span = t1 - t0;
  if (!(span > 0.0)) return stats;
  const auto n = y.size();
  Vector k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), ynew(n), err(n);

  rhs(t0, y, k1);
  ++stats.evaluations;
  if (!k1.allFinite()) throw NumericalError("ODE right-hand side is not finite at t=" + std::to_string(t0));

  // Initial step (Hairer, Nørsett & Wanner, II.4).
  double h;
  {
    const double d0 = weighted_norm(y, y, opts);
    const double d1 = weighted_norm(k1, y, opts);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 * span : 0.01 * d0 / d1;
    h0 = std::min(h0, span);
    tmp = y + h0 * k1;
    rhs(t0 + h0, tmp, k2);
    ++stats.evaluations;
    const double d2 = weighted_norm(k2 - k1, y, opts) / h0;
    const double dmax = std::max(d1, d2);
    const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 0.2);
    h = std::min({100.0 * h0, h1, span});
  }
  if (!(h > 0.0) || !std::isfinite(h)) h = span;

  double t = t0;
  bool last_rejected = false;
  while (t < t1) {
    if (stats.accepted + stats.rejected >= opts.max_steps)
      throw NumericalError("ODE integrator exceeded " + std::to_string(opts.max_steps) +
                           " steps between t=" + std::to_string(t0) + " and t=" + std::to_string(t1));
    bool final_step = false;
    if (t + h >= t1 || t + 1.01 * h >= t1) {
      h = t1 - t;
      final_step = true;
    }
    if (h < 1e-14 * std::max(1.0, std::abs(t)))
      throw NumericalError("ODE step size underflow at t=" + std::to_string(t));

    tmp = y + h * (a21 * k1);
    rhs(t + c2 * h, tmp, k2);
    tmp = y + h * (a31 * k1 + a32 * k2);
    rhs(t + c3 * h, tmp, k3);
    tmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    rhs(t + c4 * h, tmp, k4);
    tmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    rhs(t + c5 * h, tmp, k5);
    tmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    rhs(t + h, tmp, k6);
    ynew = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    rhs(t + h, ynew, k7);
    stats.evaluations += 6;

    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double en = error_norm(err, y, ynew, opts);
    if (!std::isfinite(en) || !ynew.allFinite()) en = 1e10;

    if (en <= 1.0) {
      ++stats.accepted;
      t = final_step ? t1 : t + h;
      y = ynew;
      if (hook && hook(t, y)) {
        rhs(t, y, k7);
        ++stats.evaluations;
      }
      k1 = k7;
      double fac = en > 0.0 ? 0.9 * std::pow(en, -0.2) : 5.0;
      fac = std::clamp(fac, 0.2, last_rejected ? 1.0 : 5.0);
      h *= fac;
      last_rejected = false;
    } else {
      ++stats.rejected;
      h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
      last_rejected = true;
    }
  }
  if (!y.allFinite()) throw NumericalError("ODE solution is not finite at t=" + std::to_string(t1));
  return stats;
}

}  // namespace greybox::ode
