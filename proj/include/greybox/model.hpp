#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "greybox/error.hpp"
#include "greybox/expr.hpp"

namespace greybox {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct SystemEquation {
  std::string state;
  expr::Expression drift;
  /// Diffusion terms keyed by Wiener process index (1-based, as in dw1).
  std::map<int, expr::Expression> diffusion;
};

struct ObservationEquation {
  std::string output;
  expr::Expression measurement;
};

struct VarianceEntry {
  /// Left-hand side as written, e.g. "yy", "y" or "y1y2".
  std::string pair;
  expr::Expression value;
};

/// Initial value plus optional bounds. A setting without bounds is fixed.
struct ParameterSetting {
  double init = 0.0;
  std::optional<double> lower;
  std::optional<double> upper;

  bool fixed() const { return !lower && !upper; }
};

/// Builder for a continuous-discrete state space model.
class ModelSpec {
 public:
  /// "d<state> ~ <expr>" where every summand carries exactly one dt or dw<k>
  /// factor. Re-adding a state replaces its equation.
  void add_system(std::string_view equation);
  void add_obs(std::string_view equation);
  void set_variance(std::string_view entry);
  void add_input(const std::vector<std::string>& names);
  void set_parameter(const std::string& name, double init,
                     std::optional<double> lower = std::nullopt,
                     std::optional<double> upper = std::nullopt);

  const std::vector<SystemEquation>& systems() const { return systems_; }
  const std::vector<ObservationEquation>& observations() const { return observations_; }
  const std::vector<VarianceEntry>& variances() const { return variances_; }
  const std::vector<std::string>& inputs() const { return inputs_; }
  const std::map<std::string, ParameterSetting>& parameters() const { return parameters_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Resolve a variance left-hand side against the declared outputs.
  /// Returns output indices (i, j), throwing ModelError when the pair is
  /// unresolvable or ambiguous.
  std::pair<std::size_t, std::size_t> resolve_variance_pair(const std::string& pair) const;

 private:
  std::vector<SystemEquation> systems_;
  std::vector<ObservationEquation> observations_;
  std::vector<VarianceEntry> variances_;
  std::vector<std::string> inputs_;
  std::map<std::string, ParameterSetting> parameters_;
  std::vector<std::string> warnings_;
};

enum class Classification { Linear, Nonlinear };

/// Evaluable model with symbolic Jacobians. Immutable once built; all
/// evaluation goes through caller-owned ModelEvaluator scratch.
class CompiledModel {
 public:
  std::size_t num_states() const { return states_.size(); }
  std::size_t num_inputs() const { return inputs_.size(); }
  std::size_t num_outputs() const { return outputs_.size(); }
  std::size_t num_wiener() const { return num_wiener_; }
  std::size_t num_parameters() const { return parameters_.size(); }

  const std::vector<std::string>& states() const { return states_; }
  const std::vector<std::string>& inputs() const { return inputs_; }
  const std::vector<std::string>& outputs() const { return outputs_; }
  /// Parameter layout: initial-state parameters in state order, then the
  /// remaining parameters sorted case-insensitively.
  const std::vector<std::string>& parameters() const { return parameters_; }
  const std::vector<std::optional<ParameterSetting>>& settings() const { return settings_; }
  std::optional<std::size_t> parameter_index(std::string_view name) const;

  Classification classification() const { return classification_; }
  bool is_linear() const { return classification_ == Classification::Linear; }
  /// True if drift, diffusion, measurement or variance depends on t.
  bool time_varying() const { return time_varying_; }
  std::string header() const;
  const std::vector<std::string>& warnings() const { return warnings_; }

  // Symbolic components (row-major nested vectors).
  const std::vector<expr::Expression>& drift() const { return drift_; }
  const std::vector<std::vector<expr::Expression>>& diffusion() const { return diffusion_; }
  const std::vector<expr::Expression>& measurement() const { return measurement_; }
  const std::vector<std::vector<expr::Expression>>& variance() const { return variance_; }
  const std::vector<std::vector<expr::Expression>>& jacobian_a() const { return a_; }
  const std::vector<std::vector<expr::Expression>>& jacobian_b() const { return b_; }
  const std::vector<std::vector<expr::Expression>>& jacobian_c() const { return c_; }
  const std::vector<std::vector<expr::Expression>>& jacobian_d() const { return d_; }

  /// Initial values from the settings, in layout order. Throws ModelError
  /// naming every parameter without a setting.
  std::vector<double> initial_values() const;

 private:
  friend CompiledModel compile(const ModelSpec& spec);
  friend class ModelEvaluator;

  struct Programs {
    std::vector<expr::Program> drift, diffusion, measurement, variance, a, b, c, d;
  };

  std::vector<std::string> states_, inputs_, outputs_, parameters_;
  std::vector<std::optional<ParameterSetting>> settings_;
  std::size_t num_wiener_ = 0;
  Classification classification_ = Classification::Nonlinear;
  bool time_varying_ = false;
  std::vector<std::string> warnings_;

  std::vector<expr::Expression> drift_, measurement_;
  std::vector<std::vector<expr::Expression>> diffusion_, variance_, a_, b_, c_, d_;
  Programs programs_;
};

CompiledModel compile(const ModelSpec& spec);

/// "<Linear|Non-linear> state space model with <n> state(s), <l> output(s)
/// and <m> input(s)"; the plural "s" is used only for counts above one.
std::string model_header(Classification c, std::size_t n, std::size_t l, std::size_t m);

/// Numeric evaluation of a compiled model at fixed parameter values. Holds
/// the slot buffer, so use one instance per thread.
class ModelEvaluator {
 public:
  ModelEvaluator(const CompiledModel& model, std::span<const double> parameters);

  const CompiledModel& model() const { return *model_; }

  void set_point(const Vector& x, const Vector& u, double t);

  Vector drift() const;
  Matrix diffusion() const;
  Vector measurement() const;
  Matrix variance() const;
  Matrix jacobian_a() const;
  Matrix jacobian_b() const;
  Matrix jacobian_c() const;
  Matrix jacobian_d() const;

  // In-place variants for hot loops.
  void drift_into(Eigen::Ref<Vector> out) const;
  void diffusion_into(Eigen::Ref<Matrix> out) const;
  void jacobian_a_into(Eigen::Ref<Matrix> out) const;

 private:
  void fill(const std::vector<expr::Program>& programs, double* out, std::size_t count) const;

  const CompiledModel* model_;
  std::vector<double> slots_;
  mutable std::vector<double> stack_;
};

}  // namespace greybox
