#include "greybox/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace greybox {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

optim::Bound bound_of(const ParameterSetting& s) { return {s.lower, s.upper}; }

double bound_width(const optim::Bound& b) {
  if (b.lower && b.upper) return *b.upper - *b.lower;
  if (b.lower) return std::max(1.0, std::abs(*b.lower));
  if (b.upper) return std::max(1.0, std::abs(*b.upper));
  return 0.0;
}

bool near_bound(double x, const optim::Bound& b) {
  const double tol = 1e-3 * bound_width(b);
  return (b.lower && x - *b.lower < tol) || (b.upper && *b.upper - x < tol);
}

// nll over a subset of coordinates; evaluation failures map to +inf.
struct SubsetNll {
  const CompiledModel& model;
  const Dataset& data;
  const FilterOptions& filter;
  std::vector<double> base;
  std::vector<std::size_t> which;

  std::vector<double> full(const Vector& z) const {
    std::vector<double> theta = base;
    for (std::size_t i = 0; i < which.size(); ++i) theta[which[i]] = z[static_cast<Eigen::Index>(i)];
    return theta;
  }
  double operator()(const Vector& z) const {
    try {
      return negative_log_likelihood(model, full(z), data, filter);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  }
};

std::string status_text(optim::Status s) {
  switch (s) {
    case optim::Status::Converged: return "converged";
    case optim::Status::IterationLimit: return "iteration limit reached";
    case optim::Status::LineSearchFailed: return "line search failed";
  }
  return "unknown";
}

bool inside_all(const Vector& x, const std::vector<optim::Bound>& bounds) {
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!bounds[static_cast<std::size_t>(i)].inside(x[i])) return false;
  return true;
}

double try_eval(const optim::Objective& f, const Vector& x, int& evaluations) {
  ++evaluations;
  try {
    const double v = f(x);
    return std::isfinite(v) ? v : kInf;
  } catch (const Error&) {
    return kInf;
  }
}

// Search both ways along a direction of negative curvature. Returns the best
// point found if it improves on the stopping point.
std::optional<Vector> escape_along(const optim::Objective& f, const optim::Result& at, const Vector& dir,
                                   const std::vector<optim::Bound>& bounds, int& evaluations) {
  const Vector v = dir / dir.cwiseAbs().maxCoeff();
  std::optional<Vector> best;
  double best_value = at.value - 1e-8 * (1.0 + std::abs(at.value));
  for (double sign : {1.0, -1.0})
    for (double t = 4.0; t >= 1.0 / 64; t *= 0.5) {
      const Vector x = at.x + sign * t * v;
      if (!inside_all(x, bounds)) continue;
      const double value = try_eval(f, x, evaluations);
      if (value < best_value) {
        best_value = value;
        best = x;
      }
    }
  return best;
}

// Newton steps on the difference Hessian; quasi-Newton stopping leaves the
// last digits of a quadratic bowl unresolved.
void newton_polish(const optim::Objective& f, optim::Result& at, const Matrix& h,
                   const std::vector<optim::Bound>& bounds, double fd_step, int& evaluations) {
  const Eigen::LLT<Matrix> llt(h);
  if (llt.info() != Eigen::Success) return;
  for (int pass = 0; pass < 3; ++pass) {
    const Vector x = at.x - llt.solve(at.gradient);
    if (!x.allFinite() || !inside_all(x, bounds)) return;
    const double value = try_eval(f, x, evaluations);
    if (!(value <= at.value)) return;
    const bool moved = (x - at.x).cwiseAbs().maxCoeff() > 0.0;
    at.x = x;
    at.value = value;
    at.gradient = optim::fd_gradient(f, x, value, bounds, fd_step);
    evaluations += static_cast<int>(2 * x.size());
    if (!moved) return;
  }
}

}  // namespace

std::vector<double> FitResult::values() const {
  std::vector<double> v;
  v.reserve(parameters.size());
  for (const auto& p : parameters) v.push_back(p.estimate);
  return v;
}

std::vector<std::string> FitResult::free_names() const {
  std::vector<std::string> v;
  for (const auto& p : parameters)
    if (!p.fixed) v.push_back(p.name);
  return v;
}

const ParameterEstimate* FitResult::find(std::string_view name) const {
  for (const auto& p : parameters)
    if (p.name == name) return &p;
  return nullptr;
}

double two_sided_p(double t, long df) {
  if (!std::isfinite(t)) return std::isnan(t) ? kNaN : 0.0;
  const double a = std::abs(t);
  if (df < 1) {
    boost::math::normal_distribution<double> z;
    return 2.0 * boost::math::cdf(boost::math::complement(z, a));
  }
  boost::math::students_t_distribution<double> dist(static_cast<double>(df));
  return 2.0 * boost::math::cdf(boost::math::complement(dist, a));
}

Matrix observed_information(const CompiledModel& model, const Dataset& data,
                            const std::vector<double>& values, const std::vector<std::size_t>& which,
                            const FitOptions& opts) {
  SubsetNll f{model, data, opts.filter, values, which};
  Vector z(static_cast<Eigen::Index>(which.size()));
  for (std::size_t i = 0; i < which.size(); ++i) z[static_cast<Eigen::Index>(i)] = values[which[i]];
  return optim::fd_hessian(f, z, opts.hessian_step);
}

FitResult fit(const CompiledModel& model, const Dataset& data, const FitOptions& opts) {
  const std::vector<double> start = model.initial_values();
  std::vector<bool> mask(start.size());
  for (std::size_t i = 0; i < start.size(); ++i) mask[i] = !model.settings()[i]->fixed();
  return fit_from(model, data, start, mask, opts);
}

FitResult fit_from(const CompiledModel& model, const Dataset& data, const std::vector<double>& start,
                   const std::vector<bool>& free_mask, const FitOptions& opts) {
  const std::size_t np = model.num_parameters();
  if (start.size() != np || free_mask.size() != np)
    throw Error("parameter vector has " + std::to_string(start.size()) + " entries, model has " +
                std::to_string(np));
  opts.filter.validate();

  std::vector<std::size_t> free;
  std::vector<optim::Bound> bounds;
  for (std::size_t i = 0; i < np; ++i) {
    if (!std::isfinite(start[i]))
      throw Error("starting value of '" + model.parameters()[i] + "' is not finite");
    if (!free_mask[i]) continue;
    const auto& s = model.settings()[i];
    if (!s) throw ModelError("parameter '" + model.parameters()[i] + "' has no setting");
    const auto b = bound_of(*s);
    if (!b.inside(start[i]))
      throw Error("starting value of '" + model.parameters()[i] + "' is not strictly inside its bounds");
    free.push_back(i);
    bounds.push_back(b);
  }

  SubsetNll nll{model, data, opts.filter, start, free};
  const double lambda = opts.penalty_lambda;
  auto objective = [&](const Vector& z) { return nll(z) + optim::barrier(z, bounds, lambda); };

  Vector z0(static_cast<Eigen::Index>(free.size()));
  for (std::size_t i = 0; i < free.size(); ++i) z0[static_cast<Eigen::Index>(i)] = start[free[i]];
  {
    // surface the filter's own message when the start is unusable
    const double v0 = negative_log_likelihood(model, start, data, opts.filter);
    if (!std::isfinite(v0)) throw NumericalError("negative log-likelihood is not finite at the initial point");
  }
  optim::Result opt = optim::minimize(objective, z0, bounds, opts.optimizer);
  int iterations = opt.iterations;
  int evaluations = opt.evaluations;
  std::vector<std::string> escapes;
  for (int round = 0; opt.status != optim::Status::IterationLimit && opt.x.size() > 0; ++round) {
    const Matrix h = optim::fd_hessian(objective, opt.x, opts.hessian_step);
    evaluations += static_cast<int>(2 * opt.x.size() * opt.x.size() + 1);
    if (!h.allFinite()) break;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (h + h.transpose()));
    const double emax = es.eigenvalues().cwiseAbs().maxCoeff();
    if (es.eigenvalues()[0] < -1e-6 * emax) {
      if (round >= opts.saddle_escapes) break;
      const auto next = escape_along(objective, opt, es.eigenvectors().col(0), bounds, evaluations);
      if (!next) break;
      escapes.push_back("left a saddle point at objective " + format_number(opt.value) + " (restart " +
                        std::to_string(round + 1) + ")");
      opt = optim::minimize(objective, *next, bounds, opts.optimizer);
      iterations += opt.iterations;
      evaluations += opt.evaluations;
      continue;
    }
    if (opts.newton_polish) newton_polish(objective, opt, h, bounds, opts.optimizer.fd_step, evaluations);
    break;
  }

  FitResult r;
  r.model_header = model.header();
  r.iterations = iterations;
  r.evaluations = evaluations;
  r.diagnostics = std::move(escapes);
  r.num_observations = data.num_observations();
  r.degrees_of_freedom = static_cast<long>(r.num_observations) - static_cast<long>(free.size());
  const std::vector<double> theta = nll.full(opt.x);
  r.nll = negative_log_likelihood(model, theta, data, opts.filter);
  r.loglik = -r.nll;
  r.penalty = optim::barrier(opt.x, bounds, lambda);

  r.status = status_text(opt.status);
  r.converged = opt.status == optim::Status::Converged;
  if (opt.status == optim::Status::LineSearchFailed && opt.gradient.allFinite()) {
    double g = 0.0;
    for (Eigen::Index i = 0; i < opt.gradient.size(); ++i)
      g = std::max(g, std::abs(opt.gradient[i]) * std::max(1.0, std::abs(opt.x[i])));
    if (g < 1e-3) {
      r.converged = true;
      r.status = "converged";
      r.diagnostics.push_back("line search stalled at scaled gradient " + format_number(g) +
                              "; accepted as converged");
    }
  }
  if (!r.converged) r.diagnostics.push_back("optimizer: " + opt.message);

  const Vector dnll = optim::fd_gradient(nll, opt.x, r.nll, bounds, opts.optimizer.fd_step);
  const Vector dpen = optim::barrier_gradient(opt.x, bounds, lambda);

  r.parameters.resize(np);
  for (std::size_t i = 0; i < np; ++i) {
    auto& p = r.parameters[i];
    p.name = model.parameters()[i];
    p.estimate = theta[i];
    p.fixed = !free_mask[i];
    if (const auto& s = model.settings()[i]) {
      p.lower = s->lower;
      p.upper = s->upper;
    }
  }
  std::vector<std::size_t> info_idx;
  for (std::size_t k = 0; k < free.size(); ++k) {
    auto& p = r.parameters[free[k]];
    const auto kk = static_cast<Eigen::Index>(k);
    p.d_objective = dnll[kk];
    p.d_penalty = dpen[kk];
    p.at_bound = near_bound(theta[free[k]], bounds[k]);
    if (p.at_bound)
      r.diagnostics.push_back("parameter '" + p.name + "' is at a bound; standard error suppressed");
    else
      info_idx.push_back(free[k]);
  }

  if (!opts.compute_information || info_idx.empty()) return r;

  for (auto i : info_idx) r.information_parameters.push_back(model.parameters()[i]);
  const auto m = static_cast<Eigen::Index>(info_idx.size());
  r.information = observed_information(model, data, theta, info_idx, opts);
  r.covariance = Matrix::Constant(m, m, kNaN);
  r.correlation = Matrix::Constant(m, m, kNaN);
  if (!r.information.allFinite()) {
    r.diagnostics.push_back("observed information is not finite; standard errors suppressed");
    return r;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(r.information);
  const double emax = es.eigenvalues().cwiseAbs().maxCoeff();
  bool definite = true;
  for (Eigen::Index k = 0; k < m; ++k) {
    const double ev = es.eigenvalues()[k];
    if (ev > 1e-12 * emax) continue;
    definite = false;
    std::string dir = "observed information is not positive definite: eigenvalue " +
                      format_number(ev) + " along";
    const Vector v = es.eigenvectors().col(k);
    for (Eigen::Index j = 0; j < m; ++j)
      if (std::abs(v[j]) > 0.1) {
        char buf[64];
        std::snprintf(buf, sizeof buf, " %+.3f*", v[j]);
        dir += buf + r.information_parameters[static_cast<std::size_t>(j)];
      }
    r.diagnostics.push_back(dir);
  }
  if (!definite) {
    r.diagnostics.push_back("standard errors suppressed");
    return r;
  }
  r.covariance = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                 es.eigenvectors().transpose();
  r.covariance = 0.5 * (r.covariance + r.covariance.transpose()).eval();
  const Vector sd = r.covariance.diagonal().cwiseSqrt();
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b)
      r.correlation(a, b) = a == b ? 1.0 : std::clamp(r.covariance(a, b) / (sd[a] * sd[b]), -1.0, 1.0);
    auto& p = r.parameters[info_idx[static_cast<std::size_t>(a)]];
    p.std_error = sd[a];
    p.t_value = p.estimate / p.std_error;
    p.p_value = two_sided_p(p.t_value, r.degrees_of_freedom);
  }
  return r;
}

std::vector<double> parse_grid(std::string_view spec) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (true) {
    const auto colon = spec.find(':', pos);
    parts.push_back(spec.substr(pos, colon == std::string_view::npos ? colon : colon - pos));
    if (colon == std::string_view::npos) break;
    pos = colon + 1;
  }
  const std::string err = "grid spec '" + std::string(spec) + "' must be from:to:count";
  if (parts.size() != 3) throw Error(err);
  const auto a = parse_number(parts[0]), b = parse_number(parts[1]), n = parse_number(parts[2]);
  if (!a || !b || !n || !std::isfinite(*a) || !std::isfinite(*b)) throw Error(err);
  if (*n != std::floor(*n) || *n < 2) throw Error(err + " with count >= 2");
  if (*a == *b) throw Error(err + " with from != to");
  const auto count = static_cast<std::size_t>(*n);
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i)
    g[i] = *a + (*b - *a) * static_cast<double>(i) / static_cast<double>(count - 1);
  g.back() = *b;
  return g;
}

ProfileResult profile_likelihood(const CompiledModel& model, const Dataset& data,
                                 const FitResult& fit_result, const std::string& name,
                                 const std::vector<double>& grid, const FitOptions& opts) {
  const auto idx = model.parameter_index(name);
  if (!idx) throw Error("unknown parameter '" + name + "'");
  if (fit_result.parameters.size() != model.num_parameters())
    throw Error("fit does not match the model");
  const auto& target = fit_result.parameters[*idx];
  if (target.fixed) throw Error("parameter '" + name + "' is not free");
  if (grid.empty()) throw Error("profile grid is empty");
  const optim::Bound b{target.lower, target.upper};
  for (double v : grid)
    if (!std::isfinite(v) || !b.inside(v))
      throw Error("profile grid value " + format_number(v) + " is outside the bounds of '" + name + "'");

  ProfileResult out;
  out.parameter = name;
  out.estimate = target.estimate;
  out.std_error = target.std_error;
  out.max_loglik = fit_result.loglik;
  boost::math::chi_squared_distribution<double> chi2(1.0);
  out.cutoff = out.max_loglik - 0.5 * boost::math::quantile(chi2, 0.95);
  out.grid = grid;
  out.profile_loglik.assign(grid.size(), kNaN);
  out.wald_loglik.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double d = grid[i] - out.estimate;
    out.wald_loglik[i] = out.max_loglik - 0.5 * d * d / (out.std_error * out.std_error);
  }

  std::vector<bool> mask(model.num_parameters());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = !fit_result.parameters[i].fixed;
  mask[*idx] = false;
  FitOptions inner = opts;
  inner.compute_information = false;
  inner.saddle_escapes = 0;
  inner.newton_polish = false;

  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return grid[x] < grid[y]; });
  std::vector<std::size_t> up, down;
  for (auto i : order) (grid[i] >= out.estimate ? up : down).push_back(i);
  std::reverse(down.begin(), down.end());

  for (const auto* walk : {&up, &down}) {
    std::vector<double> warm = fit_result.values();
    for (auto i : *walk) {
      std::vector<double> start = warm;
      start[*idx] = grid[i];
      try {
        const FitResult r = fit_from(model, data, start, mask, inner);
        out.profile_loglik[i] = r.loglik;
        if (!r.converged)
          out.diagnostics.push_back("inner fit at " + name + "=" + format_number(grid[i]) + ": " + r.status);
        warm = r.values();
      } catch (const Error& e) {
        out.diagnostics.push_back("inner fit at " + name + "=" + format_number(grid[i]) + " failed: " + e.what());
      }
    }
  }
  return out;
}

}  // namespace greybox
