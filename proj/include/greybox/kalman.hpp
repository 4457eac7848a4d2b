#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "greybox/dataset.hpp"
#include "greybox/model.hpp"

namespace greybox {

enum class InputHold { ZeroOrder, Linear };

struct FilterOptions {
  InputHold hold = InputHold::ZeroOrder;
  double abs_tol = 1e-8;
  double rel_tol = 1e-8;
  /// Scale of the initial state covariance relative to the state covariance
  /// accumulated over the first sampling interval.
  double pi0 = 1.0;
  int max_substeps = 100000;
  /// Run the extended filter even for models classified linear.
  bool force_ekf = false;

  void validate() const;
};

struct Moments {
  Vector mean;
  Matrix cov;
};

/// Closed-form propagation of dx = (Ax + Bu) dt + sigma dw over dt. With
/// linear hold the input ramps from u_start to u_end.
Moments propagate_linear(const Matrix& a, const Matrix& b, const Matrix& sigma, const Vector& x,
                         const Matrix& p, const Vector& u_start, const Vector& u_end, double dt,
                         InputHold hold = InputHold::ZeroOrder);

/// Joint Runge–Kutta integration of the mean and covariance ODEs with the
/// drift linearized along the mean.
Moments propagate_ekf(const CompiledModel& model, std::span<const double> params, const Vector& x,
                      const Matrix& p, const Vector& u_start, const Vector& u_end, double t_start,
                      double t_end, const FilterOptions& opts);

struct UpdateResult {
  Vector mean;
  Matrix cov;
  Vector innovation;      // NaN where the output is missing
  Matrix innovation_cov;  // C P C' + S over all outputs
  double loglik = 0.0;
};

/// Measurement update. `y` carries NaN for missing components; `step` only
/// labels error messages.
UpdateResult update(const Vector& x_prior, const Matrix& p_prior, const Vector& y,
                    const Vector& y_hat, const Matrix& c, const Matrix& s, std::size_t step = 0);

struct StepRecord {
  double t = 0.0;
  Vector x_prior;
  Matrix p_prior;
  Vector y_hat;
  Matrix y_cov;
  Vector innovation;
  Vector x_post;
  Matrix p_post;
  double loglik = 0.0;
};

struct FilterResult {
  double nll = 0.0;
  std::vector<StepRecord> steps;
  /// Largest covariance asymmetry seen at any step.
  double max_asymmetry = 0.0;
  /// Smallest relative LDLT pivot of any state or innovation covariance.
  double min_pivot = 0.0;
};

/// Continuous-discrete Kalman filter (exact for linear models, extended
/// otherwise). `params` follows CompiledModel::parameters().
FilterResult run_filter(const CompiledModel& model, std::span<const double> params,
                        const Dataset& data, const FilterOptions& opts = {},
                        bool keep_records = true);

double negative_log_likelihood(const CompiledModel& model, std::span<const double> params,
                               const Dataset& data, const FilterOptions& opts = {});

/// One-step predictions; record k uses data strictly before k.
inline std::vector<StepRecord> predict_one_step(const CompiledModel& model,
                                                std::span<const double> params,
                                                const Dataset& data,
                                                const FilterOptions& opts = {}) {
  return run_filter(model, params, data, opts, true).steps;
}

struct SimulationOptions {
  /// Euler–Maruyama sub-steps per observation interval.
  int substeps = 20;
  InputHold hold = InputHold::ZeroOrder;
};

struct Realization {
  Matrix states;   // rows: time stamps
  Matrix outputs;  // with measurement noise
};

/// Seeded Euler–Maruyama realizations starting from the initial-state
/// parameters. Realization i depends only on (seed, i).
std::vector<Realization> simulate_stochastic(const CompiledModel& model,
                                             std::span<const double> params, const Dataset& data,
                                             int nsim, std::uint64_t seed,
                                             const SimulationOptions& opts = {});

}  // namespace greybox
