#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "greybox/dataset.hpp"
#include "greybox/kalman.hpp"
#include "greybox/model.hpp"
#include "greybox/optimize.hpp"

namespace greybox {

struct FitOptions {
  FilterOptions filter;
  optim::Options optimizer;
  double penalty_lambda = 1e-6;
  /// Relative step of the observed-information Hessian.
  double hessian_step = 1e-4;
  bool compute_information = true;
  /// Restarts from a point of lower objective along a direction of negative
  /// curvature when the optimizer stops there.
  int saddle_escapes = 3;
  /// Newton refinement of the optimizer's result on the difference Hessian.
  bool newton_polish = true;
};

struct ParameterEstimate {
  std::string name;
  double estimate = 0.0;
  bool fixed = false;
  std::optional<double> lower;
  std::optional<double> upper;
  double std_error = std::nan("");
  double t_value = std::nan("");
  double p_value = std::nan("");
  double d_objective = std::nan("");  // dF/dPar
  double d_penalty = std::nan("");    // dPen/dPar
  bool at_bound = false;
};

struct FitResult {
  std::string model_header;
  std::string model_source;
  std::string data_source;
  /// All parameters in model layout order.
  std::vector<ParameterEstimate> parameters;
  double nll = 0.0;
  double loglik = 0.0;
  double penalty = 0.0;
  bool converged = false;
  std::string status;
  int iterations = 0;
  int evaluations = 0;
  std::size_t num_observations = 0;
  /// Residual degrees of freedom for the t reference.
  long degrees_of_freedom = 0;
  /// Names of the parameters spanned by information/correlation (free and
  /// not at a bound).
  std::vector<std::string> information_parameters;
  Matrix information;
  Matrix covariance;
  Matrix correlation;
  std::vector<std::string> diagnostics;

  std::vector<double> values() const;
  std::vector<std::string> free_names() const;
  const ParameterEstimate* find(std::string_view name) const;
};

/// Maximum-likelihood fit from the model's parameter settings.
FitResult fit(const CompiledModel& model, const Dataset& data, const FitOptions& opts = {});

/// Fit starting from `start` (full layout), optimizing only where
/// free_mask is true. Parameters with free_mask false stay at their start
/// value.
FitResult fit_from(const CompiledModel& model, const Dataset& data, const std::vector<double>& start,
                   const std::vector<bool>& free_mask, const FitOptions& opts = {});

/// Central-difference Hessian of the negative log-likelihood over the
/// listed parameter indices, evaluated at `values`.
Matrix observed_information(const CompiledModel& model, const Dataset& data,
                            const std::vector<double>& values, const std::vector<std::size_t>& which,
                            const FitOptions& opts = {});

/// R-style coefficient table. Extended mode adds dF/dPar and dPen/dPar.
std::string summarize(const FitResult& fit, bool correlation = false, bool extended = false);

/// Two-sided p value of t under Student's t with df degrees of freedom (the
/// normal reference when df < 1).
double two_sided_p(double t, long df);

struct ProfileResult {
  std::string parameter;
  double estimate = 0.0;
  double std_error = std::nan("");
  double max_loglik = 0.0;
  double cutoff = 0.0;
  std::vector<double> grid;
  std::vector<double> profile_loglik;  // NaN where the inner fit failed
  std::vector<double> wald_loglik;
  std::vector<std::string> diagnostics;
};

/// Profile log-likelihood of one free parameter over `grid`. Inner fits walk
/// outward from the estimate, each warm-started at its neighbour's optimum.
ProfileResult profile_likelihood(const CompiledModel& model, const Dataset& data,
                                 const FitResult& fit, const std::string& name,
                                 const std::vector<double>& grid, const FitOptions& opts = {});

/// Evenly spaced grid from "a:b:n".
std::vector<double> parse_grid(std::string_view spec);

// JSON document "greybox-fit/1".
std::string fit_to_json(const FitResult& fit);
FitResult fit_from_json(std::string_view text);

/// Plot-ready one-step prediction table.
CsvTable prediction_table(const CompiledModel& model, const Dataset& data,
                          const std::vector<StepRecord>& steps);
/// Columns t, inputs, outputs, states.
CsvTable realization_table(const CompiledModel& model, const Dataset& data, const Realization& r);
/// Columns value, profile_loglik, wald_loglik, cutoff.
CsvTable profile_table(const ProfileResult& profile);

}  // namespace greybox
