#include "greybox/kalman.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <string>

#include "greybox/linalg.hpp"
#include "greybox/ode.hpp"

namespace greybox {

namespace {

Vector ramp(const Vector& u0, const Vector& u1, double t0, double t1, double t, InputHold hold) {
  if (hold == InputHold::ZeroOrder || t1 <= t0) return u0;
  const double w = (t - t0) / (t1 - t0);
  return u0 + w * (u1 - u0);
}

std::string at_step(std::size_t k, double t) {
  return "step " + std::to_string(k) + " (t=" + format_number(t) + ")";
}

class Filter {
 public:
  Filter(const CompiledModel& model, std::span<const double> params, const FilterOptions& opts)
      : model_(model), params_(params), opts_(opts), eval_(model, params) {
    linear_ = model.is_linear() && !opts.force_ekf;
  }

  Moments propagate(const Moments& from, const Vector& u0, const Vector& u1, double t0, double t1) {
    if (!linear_)
      return propagate_ekf(model_, params_, from.mean, from.cov, u0, u1, t0, t1, opts_);
    const Vector x0 = Vector::Zero(static_cast<Eigen::Index>(model_.num_states()));
    const double dt = t1 - t0;
    const bool ramped = opts_.hold == InputHold::Linear;
    const linalg::Discretization* d = nullptr;
    linalg::Discretization fresh;
    if (!model_.time_varying()) {
      if (!constants_) {
        eval_.set_point(x0, u0, t0);
        a_ = eval_.jacobian_a();
        b_ = eval_.jacobian_b();
        const Matrix sigma = eval_.diffusion();
        q_ = sigma * sigma.transpose();
        constants_ = true;
      }
      auto it = cache_.find(dt);
      if (it == cache_.end()) it = cache_.emplace(dt, linalg::discretize(a_, q_, dt, ramped)).first;
      d = &it->second;
    } else {
      eval_.set_point(x0, u0, t0);
      a_ = eval_.jacobian_a();
      b_ = eval_.jacobian_b();
      const Matrix sigma = eval_.diffusion();
      q_ = sigma * sigma.transpose();
      fresh = linalg::discretize(a_, q_, dt, ramped);
      d = &fresh;
    }
    Moments out;
    out.mean = d->transition * from.mean;
    if (b_.cols() > 0) {
      out.mean += d->input_gain * (b_ * u0);
      if (ramped) out.mean += d->ramp_gain * (b_ * (u1 - u0));
    }
    out.cov = d->transition * from.cov * d->transition.transpose() + d->process_cov;
    linalg::symmetrize(out.cov);
    return out;
  }

  Matrix initial_covariance(const Vector& x0, const Vector& u0, double t0, double dt) {
    eval_.set_point(x0, u0, t0);
    const Matrix sigma = eval_.diffusion();
    const Matrix a = eval_.jacobian_a();
    Matrix p = opts_.pi0 * linalg::integrated_covariance(a, sigma * sigma.transpose(), dt);
    linalg::symmetrize(p);
    return p;
  }

  ModelEvaluator& evaluator() { return eval_; }

 private:
  const CompiledModel& model_;
  std::span<const double> params_;
  const FilterOptions& opts_;
  ModelEvaluator eval_;
  bool linear_ = false;
  bool constants_ = false;
  Matrix a_, b_, q_;
  std::map<double, linalg::Discretization> cache_;
};

}  // namespace

void FilterOptions::validate() const {
  if (!(abs_tol > 0.0) || !(rel_tol > 0.0)) throw Error("integrator tolerances must be positive");
  if (!(pi0 > 0.0)) throw Error("initial covariance scaling pi0 must be positive");
  if (max_substeps < 1) throw Error("max_substeps must be at least 1");
}

Moments propagate_linear(const Matrix& a, const Matrix& b, const Matrix& sigma, const Vector& x,
                         const Matrix& p, const Vector& u_start, const Vector& u_end, double dt,
                         InputHold hold) {
  if (!(dt > 0.0)) throw NumericalError("propagation interval must be positive");
  const bool ramped = hold == InputHold::Linear;
  const auto d = linalg::discretize(a, sigma * sigma.transpose(), dt, ramped);
  Moments out;
  out.mean = d.transition * x;
  if (b.cols() > 0) {
    out.mean += d.input_gain * (b * u_start);
    if (ramped) out.mean += d.ramp_gain * (b * (u_end - u_start));
  }
  out.cov = d.transition * p * d.transition.transpose() + d.process_cov;
  linalg::symmetrize(out.cov);
  return out;
}

Moments propagate_ekf(const CompiledModel& model, std::span<const double> params, const Vector& x,
                      const Matrix& p, const Vector& u_start, const Vector& u_end, double t_start,
                      double t_end, const FilterOptions& opts) {
  if (!(t_end > t_start)) throw NumericalError("propagation interval must be positive");
  const auto n = static_cast<Eigen::Index>(model.num_states());
  const auto nw = static_cast<Eigen::Index>(model.num_wiener());
  ModelEvaluator eval(model, params);
  Vector y(n + n * n);
  y.head(n) = x;
  Eigen::Map<Matrix>(y.data() + n, n, n) = p;

  Matrix a(n, n), sigma(n, nw), ap(n, n);
  Vector u;
  Vector xs(n);
  auto rhs = [&](double t, const Vector& state, Vector& dydt) {
    xs = state.head(n);
    u = ramp(u_start, u_end, t_start, t_end, t, opts.hold);
    eval.set_point(xs, u, t);
    eval.drift_into(dydt.head(n));
    eval.jacobian_a_into(a);
    eval.diffusion_into(sigma);
    Eigen::Map<const Matrix> pm(state.data() + n, n, n);
    ap.noalias() = a * pm;
    Eigen::Map<Matrix> dp(dydt.data() + n, n, n);
    dp = ap + ap.transpose();
    dp.noalias() += sigma * sigma.transpose();
  };
  auto hook = [&](double, Vector& state) {
    Eigen::Map<Matrix> pm(state.data() + n, n, n);
    if (linalg::asymmetry(pm) == 0.0) return false;
    pm = 0.5 * (pm + pm.transpose()).eval();
    return true;
  };
  ode::Options o{opts.abs_tol, opts.rel_tol, opts.max_substeps};
  ode::integrate(rhs, t_start, t_end, y, o, hook);

  Moments out;
  out.mean = y.head(n);
  out.cov = Eigen::Map<const Matrix>(y.data() + n, n, n);
  linalg::symmetrize(out.cov);
  if (!out.mean.allFinite() || !out.cov.allFinite())
    throw NumericalError("non-finite state after propagation to t=" + format_number(t_end));
  return out;
}

UpdateResult update(const Vector& x_prior, const Matrix& p_prior, const Vector& y,
                    const Vector& y_hat, const Matrix& c, const Matrix& s, std::size_t step) {
  const auto l = y.size();
  UpdateResult r;
  r.innovation = Vector::Constant(l, std::nan(""));
  r.innovation_cov = c * p_prior * c.transpose() + s;
  linalg::symmetrize(r.innovation_cov);

  std::vector<Eigen::Index> obs;
  for (Eigen::Index j = 0; j < l; ++j)
    if (!std::isnan(y[j])) obs.push_back(j);
  if (obs.empty()) {
    r.mean = x_prior;
    r.cov = p_prior;
    return r;
  }
  const auto lo = static_cast<Eigen::Index>(obs.size());
  const auto n = x_prior.size();
  Matrix co(lo, n), so(lo, lo), sig(lo, lo);
  Vector eps(lo);
  for (Eigen::Index i = 0; i < lo; ++i) {
    co.row(i) = c.row(obs[static_cast<std::size_t>(i)]);
    eps[i] = y[obs[static_cast<std::size_t>(i)]] - y_hat[obs[static_cast<std::size_t>(i)]];
    r.innovation[obs[static_cast<std::size_t>(i)]] = eps[i];
    for (Eigen::Index j = 0; j < lo; ++j) {
      so(i, j) = s(obs[static_cast<std::size_t>(i)], obs[static_cast<std::size_t>(j)]);
      sig(i, j) = r.innovation_cov(obs[static_cast<std::size_t>(i)], obs[static_cast<std::size_t>(j)]);
    }
  }
  Eigen::LLT<Matrix> llt(sig);
  if (llt.info() != Eigen::Success || !sig.allFinite())
    throw NumericalError("innovation covariance is not positive definite at step " + std::to_string(step));

  const Matrix gain = llt.solve(co * p_prior).transpose();  // P C' Sigma^-1
  r.mean = x_prior + gain * eps;
  const Matrix ikc = Matrix::Identity(n, n) - gain * co;
  r.cov = ikc * p_prior * ikc.transpose() + gain * so * gain.transpose();
  linalg::symmetrize(r.cov);

  const Matrix lmat = llt.matrixL();
  const double logdet = 2.0 * lmat.diagonal().array().log().sum();
  const Vector w = llt.matrixL().solve(eps);
  r.loglik = -0.5 * (w.squaredNorm() + logdet +
                     static_cast<double>(lo) * std::log(2.0 * std::numbers::pi));
  return r;
}

FilterResult run_filter(const CompiledModel& model, std::span<const double> params,
                        const Dataset& data, const FilterOptions& opts, bool keep_records) {
  opts.validate();
  if (data.inputs().cols() != static_cast<Eigen::Index>(model.num_inputs()) ||
      data.outputs().cols() != static_cast<Eigen::Index>(model.num_outputs()))
    throw DataError("dataset columns do not match the model");
  const auto n = static_cast<Eigen::Index>(model.num_states());
  Filter filter(model, params, opts);
  ModelEvaluator& eval = filter.evaluator();

  FilterResult result;
  result.min_pivot = std::numeric_limits<double>::infinity();
  auto hygiene = [&](const Matrix& m) {
    if (m.size() == 0) return;
    result.max_asymmetry = std::max(result.max_asymmetry, linalg::asymmetry(m));
    result.min_pivot = std::min(result.min_pivot, linalg::min_relative_pivot(m));
  };

  const std::size_t rows = data.size();
  double init_dt = 1.0;
  for (std::size_t k = 1; k < rows; ++k) {
    if (!data.row_missing(k)) {
      init_dt = data.time(k) - data.time(0);
      break;
    }
  }

  Moments anchor;
  anchor.mean = Eigen::Map<const Vector>(params.data(), n);
  anchor.cov = filter.initial_covariance(anchor.mean, data.input(0), data.time(0), init_dt);
  std::size_t anchor_k = 0;
  double loglik = 0.0;
  if (keep_records) result.steps.reserve(rows);

  for (std::size_t k = 0; k < rows; ++k) {
    const double tk = data.time(k);
    const Vector uk = data.input(k);
    Moments prior = k == 0 ? anchor
                           : filter.propagate(anchor, data.input(anchor_k), uk, data.time(anchor_k), tk);
    hygiene(prior.cov);

    eval.set_point(prior.mean, uk, tk);
    const Vector y_hat = eval.measurement();
    const Matrix c = eval.jacobian_c();
    const Matrix s = eval.variance();
    const Vector yk = data.outputs().row(static_cast<Eigen::Index>(k)).transpose();
    UpdateResult up;
    try {
      up = update(prior.mean, prior.cov, yk, y_hat, c, s, k);
    } catch (const NumericalError&) {
      throw NumericalError("innovation covariance is not positive definite at " + at_step(k, tk));
    }
    if (!std::isfinite(up.loglik))
      throw NumericalError("non-finite log-likelihood at " + at_step(k, tk));
    if (!data.row_missing(k)) hygiene(up.innovation_cov);
    hygiene(up.cov);
    loglik += up.loglik;

    const bool missing = data.row_missing(k);
    const bool same_input = (uk.array() == data.input(anchor_k).array()).all();
    if (k == 0 || !missing || opts.hold == InputHold::Linear || !same_input) {
      anchor = Moments{up.mean, up.cov};
      anchor_k = k;
    }
    if (keep_records) {
      StepRecord rec;
      rec.t = tk;
      rec.x_prior = std::move(prior.mean);
      rec.p_prior = std::move(prior.cov);
      rec.y_hat = y_hat;
      rec.y_cov = up.innovation_cov;
      rec.innovation = up.innovation;
      rec.x_post = up.mean;
      rec.p_post = up.cov;
      rec.loglik = up.loglik;
      result.steps.push_back(std::move(rec));
    }
  }
  result.nll = -loglik;
  if (!std::isfinite(result.min_pivot)) result.min_pivot = 0.0;
  return result;
}

double negative_log_likelihood(const CompiledModel& model, std::span<const double> params,
                               const Dataset& data, const FilterOptions& opts) {
  return run_filter(model, params, data, opts, false).nll;
}

std::vector<Realization> simulate_stochastic(const CompiledModel& model,
                                             std::span<const double> params, const Dataset& data,
                                             int nsim, std::uint64_t seed,
                                             const SimulationOptions& opts) {
  if (nsim < 1) throw Error("nsim must be at least 1");
  if (opts.substeps < 1) throw Error("substeps must be at least 1");
  const auto n = static_cast<Eigen::Index>(model.num_states());
  const auto l = static_cast<Eigen::Index>(model.num_outputs());
  const auto nw = static_cast<Eigen::Index>(model.num_wiener());
  const auto rows = static_cast<Eigen::Index>(data.size());
  ModelEvaluator eval(model, params);

  std::vector<Realization> out;
  out.reserve(static_cast<std::size_t>(nsim));
  for (int path = 0; path < nsim; ++path) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                      static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(path)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);

    Realization r;
    r.states.resize(rows, n);
    r.outputs.resize(rows, l);
    Vector x = Eigen::Map<const Vector>(params.data(), n);
    Vector xi(nw), e(l), drift(n);
    Matrix sigma(n, nw);
    for (Eigen::Index k = 0; k < rows; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      const double tk = data.time(ku);
      const Vector uk = data.input(ku);
      r.states.row(k) = x.transpose();

      eval.set_point(x, uk, tk);
      const Vector yk = eval.measurement();
      Eigen::SelfAdjointEigenSolver<Matrix> es(eval.variance());
      const Matrix factor =
          es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
      for (Eigen::Index j = 0; j < l; ++j) e[j] = normal(rng);
      r.outputs.row(k) = (yk + factor * e).transpose();

      if (k + 1 == rows) break;
      const double t_next = data.time(ku + 1);
      const Vector u_next = data.input(ku + 1);
      const double h = (t_next - tk) / opts.substeps;
      const double sqrt_h = std::sqrt(h);
      for (int j = 0; j < opts.substeps; ++j) {
        const double t = tk + j * h;
        eval.set_point(x, ramp(uk, u_next, tk, t_next, t, opts.hold), t);
        eval.drift_into(drift);
        eval.diffusion_into(sigma);
        for (Eigen::Index w = 0; w < nw; ++w) xi[w] = normal(rng);
        x += drift * h + sigma * (sqrt_h * xi);
      }
      if (!x.allFinite())
        throw NumericalError("non-finite state in simulation at " + at_step(ku + 1, t_next));
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace greybox
