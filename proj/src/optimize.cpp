#include "greybox/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>

#include "greybox/error.hpp"

namespace greybox::optim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double width(const Bound& b) {
  if (b.lower && b.upper) return *b.upper - *b.lower;
  if (b.lower) return std::max(1.0, std::abs(*b.lower));
  if (b.upper) return std::max(1.0, std::abs(*b.upper));
  return 0.0;
}

double safe_eval(const Objective& f, const Vector& x, int& count) {
  ++count;
  try {
    const double v = f(x);
    return std::isnan(v) ? kInf : v;
  } catch (const Error&) {
    return kInf;
  }
}

double scale(double x) { return std::max(1.0, std::abs(x)); }

// Largest step along d that stays a fraction inside the box.
double step_limit(const Vector& x, const Vector& d, const std::vector<Bound>& bounds) {
  double alpha = kInf;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const auto& b = bounds[static_cast<std::size_t>(i)];
    if (d[i] > 0 && b.upper) alpha = std::min(alpha, 0.995 * (*b.upper - x[i]) / d[i]);
    if (d[i] < 0 && b.lower) alpha = std::min(alpha, 0.995 * (*b.lower - x[i]) / d[i]);
  }
  return alpha;
}

Vector gradient_impl(const Objective& f, const Vector& x, double fx, const std::vector<Bound>& bounds,
                     double rel_step, bool parallel, int& count) {
  const auto n = x.size();
  Vector g(n);
  auto component = [&](Eigen::Index i, int& local) {
    const auto& b = bounds.empty() ? Bound{} : bounds[static_cast<std::size_t>(i)];
    double h = rel_step * scale(x[i]);
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const bool up_ok = b.inside(xp[i]);
    const bool down_ok = b.inside(xm[i]);
    const double fp = up_ok ? safe_eval(f, xp, local) : kInf;
    const double fm = down_ok ? safe_eval(f, xm, local) : kInf;
    if (std::isfinite(fp) && std::isfinite(fm)) return (fp - fm) / (xp[i] - xm[i]);
    if (std::isfinite(fp)) return (fp - fx) / (xp[i] - x[i]);
    if (std::isfinite(fm)) return (fx - fm) / (x[i] - xm[i]);
    return std::nan("");
  };
  if (parallel && n > 1) {
    std::vector<std::future<std::pair<double, int>>> jobs;
    jobs.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      jobs.push_back(std::async(std::launch::async, [&, i] {
        int local = 0;
        const double gi = component(i, local);
        return std::make_pair(gi, local);
      }));
    for (Eigen::Index i = 0; i < n; ++i) {
      auto [gi, local] = jobs[static_cast<std::size_t>(i)].get();
      g[i] = gi;
      count += local;
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) g[i] = component(i, count);
  }
  return g;
}

double scaled_gradient(const Vector& g, const Vector& x) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < g.size(); ++i) m = std::max(m, std::abs(g[i]) * scale(x[i]));
  return m;
}

Matrix initial_inverse_hessian(const Objective& f, const Vector& x, double fx, const Vector& g,
                               const std::vector<Bound>& bounds, int& count) {
  const auto n = x.size();
  Matrix h = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double step = 1e-4 * scale(x[i]);
    Vector xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    double curv = std::nan("");
    if (bounds[static_cast<std::size_t>(i)].inside(xp[i]) &&
        bounds[static_cast<std::size_t>(i)].inside(xm[i])) {
      const double fp = safe_eval(f, xp, count), fm = safe_eval(f, xm, count);
      curv = (fp - 2.0 * fx + fm) / (step * step);
    }
    if (std::isfinite(curv) && curv > 0.0)
      h(i, i) = 1.0 / curv;
    else
      h(i, i) = 1e-2 * scale(x[i]) / std::max(std::abs(g[i]), 1e-8);
  }
  return h;
}

}  // namespace

double barrier(const Vector& x, const std::vector<Bound>& bounds, double lambda) {
  double p = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const auto& b = bounds[static_cast<std::size_t>(i)];
    const double w = width(b);
    if (b.lower) p += w / (x[i] - *b.lower);
    if (b.upper) p += w / (*b.upper - x[i]);
  }
  return lambda * p;
}

Vector barrier_gradient(const Vector& x, const std::vector<Bound>& bounds, double lambda) {
  Vector g = Vector::Zero(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const auto& b = bounds[static_cast<std::size_t>(i)];
    const double w = width(b);
    if (b.lower) g[i] -= w / ((x[i] - *b.lower) * (x[i] - *b.lower));
    if (b.upper) g[i] += w / ((*b.upper - x[i]) * (*b.upper - x[i]));
  }
  return lambda * g;
}

Vector fd_gradient(const Objective& f, const Vector& x, double fx, const std::vector<Bound>& bounds,
                   double rel_step, bool parallel) {
  int count = 0;
  std::vector<Bound> b = bounds;
  b.resize(static_cast<std::size_t>(x.size()));
  return gradient_impl(f, x, fx, b, rel_step, parallel, count);
}

Matrix fd_hessian(const Objective& f, const Vector& x, double rel_step) {
  const auto n = x.size();
  Matrix h(n, n);
  Vector step(n);
  for (Eigen::Index i = 0; i < n; ++i) step[i] = rel_step * scale(x[i]);
  const double f0 = f(x);
  auto at = [&](Eigen::Index i, double si, Eigen::Index j, double sj) {
    Vector y = x;
    y[i] += si * step[i];
    y[j] += sj * step[j];
    return f(y);
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    const double fp = at(i, 1.0, i, 0.0), fm = at(i, -1.0, i, 0.0);
    h(i, i) = (fp - 2.0 * f0 + fm) / (step[i] * step[i]);
    for (Eigen::Index j = 0; j < i; ++j) {
      const double v = (at(i, 1, j, 1) - at(i, 1, j, -1) - at(i, -1, j, 1) + at(i, -1, j, -1)) /
                       (4.0 * step[i] * step[j]);
      h(i, j) = h(j, i) = v;
    }
  }
  return 0.5 * (h + h.transpose());
}

Result minimize(const Objective& f, Vector x0, const std::vector<Bound>& bounds_in,
                const Options& opts) {
  const auto n = x0.size();
  std::vector<Bound> bounds = bounds_in;
  bounds.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    if (!bounds[static_cast<std::size_t>(i)].inside(x0[i]))
      throw Error("starting value for parameter " + std::to_string(i) + " is not strictly inside its bounds");

  Result r;
  r.x = std::move(x0);
  r.value = safe_eval(f, r.x, r.evaluations);
  if (!std::isfinite(r.value)) throw NumericalError("objective is not finite at the initial point");
  r.history.push_back(r.value);
  if (n == 0) {
    r.gradient = Vector(0);
    r.message = "no free parameters";
    return r;
  }

  r.gradient = gradient_impl(f, r.x, r.value, bounds, opts.fd_step, opts.parallel, r.evaluations);
  Matrix hinv = initial_inverse_hessian(f, r.x, r.value, r.gradient, bounds, r.evaluations);
  int small_steps = 0;
  bool stall_reset = false;
  bool just_reset = true;

  while (true) {
    if (!r.gradient.allFinite()) {
      r.status = Status::LineSearchFailed;
      r.message = "gradient is not finite";
      return r;
    }
    if (scaled_gradient(r.gradient, r.x) < opts.gradient_tol) {
      r.status = Status::Converged;
      r.message = "gradient below tolerance";
      return r;
    }
    if (r.iterations >= opts.max_iterations) {
      r.status = Status::IterationLimit;
      r.message = "iteration limit reached";
      return r;
    }

    Vector d = -hinv * r.gradient;
    double slope = r.gradient.dot(d);
    if (!(slope < 0.0) || !d.allFinite()) {
      hinv = initial_inverse_hessian(f, r.x, r.value, r.gradient, bounds, r.evaluations);
      just_reset = true;
      d = -hinv * r.gradient;
      slope = r.gradient.dot(d);
    }

    double alpha = std::min(1.0, step_limit(r.x, d, bounds));
    for (Eigen::Index i = 0; i < n; ++i)
      if (alpha * std::abs(d[i]) > opts.max_step * scale(r.x[i])) alpha = opts.max_step * scale(r.x[i]) / std::abs(d[i]);
    Vector trial;
    double ftrial = kInf;
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      trial = r.x + alpha * d;
      bool inside = true;
      for (Eigen::Index i = 0; i < n; ++i) inside = inside && bounds[static_cast<std::size_t>(i)].inside(trial[i]);
      if (inside) {
        ftrial = safe_eval(f, trial, r.evaluations);
        if (ftrial <= r.value + opts.armijo * alpha * slope) {
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (!just_reset) {
        hinv = initial_inverse_hessian(f, r.x, r.value, r.gradient, bounds, r.evaluations);
        just_reset = true;
        continue;
      }
      r.status = Status::LineSearchFailed;
      r.message = "line search failed to decrease the objective";
      return r;
    }

    ++r.iterations;
    just_reset = false;
    const Vector gnew = gradient_impl(f, trial, ftrial, bounds, opts.fd_step, opts.parallel, r.evaluations);
    const Vector s = trial - r.x;
    const Vector y = gnew - r.gradient;
    const double decrease = (r.value - ftrial) / std::max(1.0, std::abs(r.value));
    r.x = trial;
    r.value = ftrial;
    r.gradient = gnew;
    r.history.push_back(ftrial);
    if (opts.trace) opts.trace(r.iterations, r.x, r.value);

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm() && std::isfinite(sy)) {
      const double rho = 1.0 / sy;
      const Vector hy = hinv * y;
      hinv += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) -
              rho * (hy * s.transpose() + s * hy.transpose());
      hinv = 0.5 * (hinv + hinv.transpose()).eval();
    }

    small_steps = decrease < opts.relative_tol ? small_steps + 1 : 0;
    if (small_steps == 0) stall_reset = false;
    if (small_steps >= 2 && !stall_reset) {
      // a stale inverse Hessian also produces tiny steps; retry from fresh curvature once
      hinv = initial_inverse_hessian(f, r.x, r.value, r.gradient, bounds, r.evaluations);
      just_reset = true;
      stall_reset = true;
      small_steps = 0;
      continue;
    }
    if (small_steps >= 2) {
      r.status = Status::Converged;
      r.message = "relative objective decrease below tolerance";
      return r;
    }
  }
}

}  // namespace greybox::optim
