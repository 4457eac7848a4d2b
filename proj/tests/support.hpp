#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "greybox/dataset.hpp"
#include "greybox/expr.hpp"
#include "greybox/kalman.hpp"
#include "greybox/model.hpp"
#include "greybox/model_file.hpp"

#ifndef GREYBOX_DATA_DIR
#define GREYBOX_DATA_DIR "data"
#endif

namespace gbtest {

using namespace greybox;

inline std::string data_file(const std::string& name) { return std::string(GREYBOX_DATA_DIR) + "/" + name; }

inline CompiledModel model_from(const std::string& file) { return compile(load_model_file(data_file(file))); }

inline Dataset dataset_from(const CompiledModel& m, const std::string& file, bool require_outputs = true) {
  return dataset_from_table(read_csv_file(data_file(file)), m, require_outputs, file);
}

// "name = value" lines on top of the model's initial values
inline std::vector<double> load_params(const CompiledModel& m, const std::string& file) {
  std::ifstream in(data_file(file));
  if (!in) throw std::runtime_error("cannot open " + file);
  std::vector<double> v = m.initial_values();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    std::string name = line.substr(0, eq);
    name.erase(name.find_last_not_of(" \t") + 1);
    const auto idx = m.parameter_index(name);
    if (!idx) throw std::runtime_error("unknown parameter " + name);
    v[*idx] = std::stod(line.substr(eq + 1));
  }
  return v;
}

// Observations replaced by one simulated realization.
inline Dataset simulated(const CompiledModel& m, const std::vector<double>& truth, const Dataset& inputs,
                         std::uint64_t seed) {
  const auto sims = simulate_stochastic(m, truth, inputs, 1, seed);
  return Dataset(inputs.times(), inputs.inputs(), sims[0].outputs);
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Random expression trees over the given variables. Leaves are variables or
// small constants; every operator kind can appear.
class ExpressionGenerator {
 public:
  ExpressionGenerator(std::vector<std::string> vars, std::uint64_t seed) : vars_(std::move(vars)), rng_(seed) {}

  expr::Expression operator()(int depth) {
    using expr::Expression;
    using expr::Op;
    std::uniform_int_distribution<int> pick(0, 13);
    if (depth <= 0 || std::bernoulli_distribution(0.15)(rng_)) return leaf();
    switch (pick(rng_)) {
      case 0: return Expression::unary(Op::Neg, (*this)(depth - 1));
      case 1:
      case 2: return Expression::binary(Op::Add, (*this)(depth - 1), (*this)(depth - 1));
      case 3: return Expression::binary(Op::Sub, (*this)(depth - 1), (*this)(depth - 1));
      case 4:
      case 5: return Expression::binary(Op::Mul, (*this)(depth - 1), (*this)(depth - 1));
      case 6: return Expression::binary(Op::Div, (*this)(depth - 1), (*this)(depth - 1));
      case 7: {
        // integer-ish and fractional exponents, sometimes a variable exponent
        if (std::bernoulli_distribution(0.3)(rng_))
          return Expression::binary(Op::Pow, Expression::variable(vars_[0]), (*this)(depth - 1));
        static const double ex[] = {2.0, 3.0, -1.0, 0.5, 1.5};
        return Expression::binary(Op::Pow, (*this)(depth - 1),
                                  Expression::constant(ex[std::uniform_int_distribution<int>(0, 4)(rng_)]));
      }
      case 8: return Expression::unary(Op::Exp, (*this)(depth - 1));
      case 9: return Expression::unary(Op::Log, (*this)(depth - 1));
      case 10: return Expression::unary(Op::Sqrt, (*this)(depth - 1));
      case 11: return Expression::unary(Op::Sin, (*this)(depth - 1));
      case 12: return Expression::unary(std::bernoulli_distribution(0.5)(rng_) ? Op::Cos : Op::Tan, (*this)(depth - 1));
      default: return Expression::unary(Op::Atan, (*this)(depth - 1));
    }
  }

  expr::Binding binding() {
    expr::Binding b;
    std::uniform_real_distribution<double> u(0.3, 2.5);
    for (const auto& v : vars_) b[v] = u(rng_);
    return b;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  expr::Expression leaf() {
    if (std::bernoulli_distribution(0.7)(rng_))
      return expr::Expression::variable(vars_[std::uniform_int_distribution<std::size_t>(0, vars_.size() - 1)(rng_)]);
    return expr::Expression::constant(std::round(std::uniform_real_distribution<double>(-3.0, 3.0)(rng_) * 4.0) / 4.0);
  }

  std::vector<std::string> vars_;
  std::mt19937_64 rng_;
};

struct DerivativeCheck {
  int passed = 0;
  int failed = 0;
  int skipped = 0;  // non-smooth or overflowing points
  double worst = 0.0;
  std::string worst_case;
};

// evaluate(differentiate(e, v)) against a central difference with
// h = 1e-6 * max(1, |v|). Points where e is not finite, too large for the
// difference to resolve, or visibly non-smooth are skipped.
inline void check_derivative(const expr::Expression& e, const std::string& v, expr::Binding b, DerivativeCheck& out,
                             double tol = 1e-5) {
  const double x = b[v];
  const double h = 1e-6 * std::max(1.0, std::abs(x));
  double f0 = 0, fp = 0, fm = 0, fp2 = 0, fm2 = 0, d = 0;
  try {
    f0 = expr::evaluate(e, b);
    b[v] = x + h;
    fp = expr::evaluate(e, b);
    b[v] = x - h;
    fm = expr::evaluate(e, b);
    b[v] = x + 1e3 * h;
    fp2 = expr::evaluate(e, b);
    b[v] = x - 1e3 * h;
    fm2 = expr::evaluate(e, b);
    b[v] = x;
    d = expr::evaluate(expr::differentiate(e, v), b);
  } catch (const Error&) {
    ++out.skipped;
    return;
  }
  const bool finite = std::isfinite(f0) && std::isfinite(fp) && std::isfinite(fm) && std::isfinite(fp2) &&
                      std::isfinite(fm2) && std::isfinite(d);
  const double fd = (fp - fm) / (2 * h);
  const double coarse = (fp2 - fm2) / (2e3 * h);
  // rounding in the difference is ~eps*|f|/h; smoothness: coarse and fine slopes agree
  const bool resolvable = finite && std::abs(f0) < 1e6 && std::abs(d) < 1e6 &&
                          std::abs(coarse - fd) < 1e-2 * std::max(1.0, std::abs(fd));
  if (!resolvable) {
    ++out.skipped;
    return;
  }
  const double err = std::abs(d - fd) / std::max(1.0, std::abs(fd));
  if (err < tol)
    ++out.passed;
  else
    ++out.failed;
  if (err > out.worst) {
    out.worst = err;
    out.worst_case = "d/d" + v + " " + e.to_string();
  }
}

// 1-D Ornstein-Uhlenbeck  dx = a x dt + sigma dw,  y = x + e,  e ~ N(0, s).
struct ScalarOu {
  double a = -0.4;
  double sigma = 0.8;
  double s = 0.3;
  double x0 = 1.5;
};

inline const char* kOuModel =
    "system dx1 ~ a*x1*dt + sig*dw1\n"
    "obs    y ~ x1\n"
    "obsvar y ~ s\n"
    "param  x10 = init=1.5, lower=-10, upper=10\n"
    "param  a   = init=-0.4, lower=-5, upper=-0.01\n"
    "param  sig = init=0.8, lower=0.01, upper=5\n"
    "param  s   = init=0.3, lower=0.001, upper=5\n";

// Irregular sampling, exact transition density.
inline Dataset ou_data(const ScalarOu& ou, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  const double gaps[] = {0.5, 1.0, 1.5, 1.0, 2.0};
  std::vector<double> t(n);
  Eigen::MatrixXd y(static_cast<Eigen::Index>(n), 1);
  double x = ou.x0;
  for (std::size_t k = 0; k < n; ++k) {
    t[k] = k == 0 ? 0.0 : t[k - 1] + gaps[k % 5];
    if (k > 0) {
      const double dt = t[k] - t[k - 1];
      const double phi = std::exp(ou.a * dt);
      const double q = ou.sigma * ou.sigma * (std::exp(2 * ou.a * dt) - 1) / (2 * ou.a);
      x = phi * x + std::sqrt(q) * z(rng);
    }
    y(static_cast<Eigen::Index>(k), 0) = x + std::sqrt(ou.s) * z(rng);
  }
  return Dataset(t, Eigen::MatrixXd(static_cast<Eigen::Index>(n), 0), y);
}

// Textbook discrete Kalman filter for ScalarOu. Initial variance is the
// process variance accumulated over the first interval, as in the library.
inline double ou_exact_nll(const ScalarOu& ou, const Dataset& d) {
  auto qvar = [&](double dt) { return ou.sigma * ou.sigma * (std::exp(2 * ou.a * dt) - 1) / (2 * ou.a); };
  double x = ou.x0;
  double p = qvar(d.size() > 1 ? d.time(1) - d.time(0) : 1.0);
  double nll = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (k > 0) {
      const double dt = d.time(k) - d.time(k - 1);
      const double phi = std::exp(ou.a * dt);
      x = phi * x;
      p = phi * p * phi + qvar(dt);
    }
    const double y = d.outputs()(static_cast<Eigen::Index>(k), 0);
    const double f = p + ou.s;
    const double v = y - x;
    nll += 0.5 * (std::log(2 * M_PI) + std::log(f) + v * v / f);
    const double g = p / f;
    x += g * v;
    p = (1 - g) * p;
  }
  return nll;
}

// Linear-Gaussian model whose likelihood is exactly quadratic in m: y2 carries
// no state, so its innovations are y2 - m with known variance w(t).
inline const char* kQuadraticModel =
    "system dx1 ~ -x1*dt + exp(lsig)*dw1\n"
    "obs    y1 ~ x1\n"
    "obs    y2 ~ m*dummy\n"
    "obsvar y1 ~ 0.5\n"
    "obsvar y2 ~ 1.5 + sin(1.3*t)\n"
    "input  dummy\n"
    "param  x10  = init=0\n"
    "param  lsig = init=0, lower=-5, upper=5\n"
    "param  m    = init=0, lower=-100, upper=100\n";

struct QuadraticProblem {
  Dataset data;
  double m_hat = 0.0;  // sum(y2/w) / sum(1/w) over observed y2
  double se = 0.0;     // 1 / sqrt(sum(1/w))
};

inline QuadraticProblem quadratic_problem(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::vector<double> t(n);
  Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(n), 1);
  Eigen::MatrixXd y(static_cast<Eigen::Index>(n), 2);
  double x = 0.0, num = 0.0, den = 0.0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t k = 0; k < n; ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    t[k] = static_cast<double>(k);
    x = std::exp(-1.0) * x + 0.8 * z(rng);
    const double w = 1.5 + std::sin(1.3 * t[k]);
    y(r, 0) = k % 11 == 4 ? nan : x + std::sqrt(0.5) * z(rng);
    y(r, 1) = k % 7 == 3 ? nan : 3.0 + std::sqrt(w) * z(rng);
    if (!std::isnan(y(r, 1))) {
      num += y(r, 1) / w;
      den += 1.0 / w;
    }
  }
  return {Dataset(t, ones, y), num / den, 1.0 / std::sqrt(den)};
}

}  // namespace gbtest
