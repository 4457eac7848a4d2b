#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "greybox/error.hpp"

namespace greybox::expr {

enum class Op : std::uint8_t {
  Constant,
  Variable,
  Neg,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Exp,
  Log,
  Sqrt,
  Sin,
  Cos,
  Tan,
  Atan,
};

bool is_function(Op op);
const char* function_name(Op op);

/// Immutable symbolic expression. Copies share the underlying tree.
class Expression {
 public:
  /// The constant 0.
  Expression();

  static Expression constant(double value);
  static Expression variable(std::string name);
  static Expression unary(Op op, Expression arg);
  static Expression binary(Op op, Expression lhs, Expression rhs);

  Op op() const;
  double value() const;
  const std::string& name() const;
  std::size_t arity() const;
  const Expression& arg(std::size_t i) const;

  bool is_constant() const { return op() == Op::Constant; }
  bool is_constant(double v) const { return is_constant() && value() == v; }
  bool is_variable(std::string_view n) const {
    return op() == Op::Variable && name() == n;
  }

  /// Infix rendering with minimal parentheses; re-parses to an equal tree.
  std::string to_string() const;

  /// Structural equality.
  friend bool operator==(const Expression& a, const Expression& b);

 private:
  struct Node;
  explicit Expression(std::shared_ptr<const Node> node);
  std::shared_ptr<const Node> node_;
};

Expression operator+(const Expression& a, const Expression& b);
Expression operator-(const Expression& a, const Expression& b);
Expression operator*(const Expression& a, const Expression& b);
Expression operator/(const Expression& a, const Expression& b);
Expression operator-(const Expression& a);

class ParseError : public Error {
 public:
  ParseError(const std::string& message, int line, int column,
             std::string token);
  int line() const { return line_; }
  int column() const { return column_; }
  const std::string& token() const { return token_; }

 private:
  int line_;
  int column_;
  std::string token_;
};

class EvalError : public Error {
 public:
  using Error::Error;
};

Expression parse(std::string_view text);

using Binding = std::unordered_map<std::string, double>;

/// Tree-walking evaluation; throws EvalError for unbound variables and for
/// domain errors (log/sqrt of invalid arguments, division by zero).
double evaluate(const Expression& e, const Binding& binding);

Expression differentiate(const Expression& e, std::string_view variable);
Expression simplify(const Expression& e);
std::set<std::string> free_variables(const Expression& e);
bool depends_on(const Expression& e, const std::set<std::string>& names);
Expression substitute(const Expression& e,
                      const std::map<std::string, Expression>& replacement);

/// Flat stack-machine form of an expression, with variables resolved to slot
/// indices. run() follows IEEE semantics and never throws.
class Program {
 public:
  Program() = default;
  Program(const Expression& e,
          const std::function<int(const std::string&)>& slot_of);

  double run(std::span<const double> slots, std::vector<double>& stack) const;
  bool is_zero() const { return code_.size() == 1 && code_[0].op == Op::Constant && code_[0].value == 0.0; }

 private:
  struct Instr {
    Op op;
    int slot;
    double value;
  };
  std::vector<Instr> code_;
  std::size_t max_depth_ = 0;
};

}  // namespace greybox::expr
