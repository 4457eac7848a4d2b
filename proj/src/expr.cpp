#include "greybox/expr.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <optional>
#include <system_error>
#include <vector>

namespace greybox::expr {

struct Expression::Node {
  Op op = Op::Constant;
  double value = 0.0;
  std::string name;
  std::vector<Expression> args;
  std::size_t arity = 0;
};

namespace {

struct FunctionEntry {
  const char* name;
  Op op;
};

constexpr std::array<FunctionEntry, 7> kFunctions{{
    {"exp", Op::Exp},
    {"log", Op::Log},
    {"sqrt", Op::Sqrt},
    {"sin", Op::Sin},
    {"cos", Op::Cos},
    {"tan", Op::Tan},
    {"atan", Op::Atan},
}};

std::optional<Op> lookup_function(std::string_view name) {
  for (const auto& f : kFunctions)
    if (name == f.name) return f.op;
  return std::nullopt;
}

double apply_unary(Op op, double a) {
  switch (op) {
    case Op::Neg: return -a;
    case Op::Exp: return std::exp(a);
    case Op::Log: return std::log(a);
    case Op::Sqrt: return std::sqrt(a);
    case Op::Sin: return std::sin(a);
    case Op::Cos: return std::cos(a);
    case Op::Tan: return std::tan(a);
    case Op::Atan: return std::atan(a);
    default: return std::nan("");
  }
}

double apply_binary(Op op, double a, double b) {
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div: return a / b;
    case Op::Pow: return std::pow(a, b);
    default: return std::nan("");
  }
}

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Printing precedence: higher binds tighter.
int level(const Expression& e) {
  switch (e.op()) {
    case Op::Add:
    case Op::Sub: return 1;
    case Op::Mul:
    case Op::Div: return 2;
    case Op::Neg: return 3;
    case Op::Pow: return 4;
    case Op::Constant: return std::signbit(e.value()) ? 3 : 5;
    default: return 5;
  }
}

void print(const Expression& e, std::string& out);

void print_wrapped(const Expression& e, bool parens, std::string& out) {
  if (parens) out += '(';
  print(e, out);
  if (parens) out += ')';
}

void print(const Expression& e, std::string& out) {
  switch (e.op()) {
    case Op::Constant:
      out += format_number(e.value());
      return;
    case Op::Variable:
      out += e.name();
      return;
    case Op::Neg:
      out += '-';
      print_wrapped(e.arg(0), level(e.arg(0)) < 3, out);
      return;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      const int p = level(e);
      print_wrapped(e.arg(0), level(e.arg(0)) < p, out);
      switch (e.op()) {
        case Op::Add: out += " + "; break;
        case Op::Sub: out += " - "; break;
        case Op::Mul: out += '*'; break;
        default: out += '/'; break;
      }
      print_wrapped(e.arg(1), level(e.arg(1)) <= p, out);
      return;
    }
    case Op::Pow:
      print_wrapped(e.arg(0), level(e.arg(0)) <= 4, out);
      out += '^';
      print_wrapped(e.arg(1), level(e.arg(1)) < 3, out);
      return;
    default:
      out += function_name(e.op());
      out += '(';
      print(e.arg(0), out);
      out += ')';
      return;
  }
}

// ---------------------------------------------------------------------------
// Parser

enum class Tok { Number, Ident, Plus, Minus, Star, Slash, Caret, LParen, RParen, End, Bad };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  double number = 0.0;
  int line = 1;
  int column = 1;
};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  Token next() {
    skip_space();
    Token t;
    t.line = line_;
    t.column = column_;
    if (pos_ >= text_.size()) {
      t.kind = Tok::End;
      return t;
    }
    const char c = text_[pos_];
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
        advance();
      t.kind = Tok::Ident;
      t.text = std::string(text_.substr(start, pos_ - start));
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && pos_ + 1 < text_.size() &&
         std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])))) {
      return lex_number(t);
    }
    advance();
    t.text = std::string(1, c);
    switch (c) {
      case '+': t.kind = Tok::Plus; break;
      case '-': t.kind = Tok::Minus; break;
      case '*': t.kind = Tok::Star; break;
      case '/': t.kind = Tok::Slash; break;
      case '^': t.kind = Tok::Caret; break;
      case '(': t.kind = Tok::LParen; break;
      case ')': t.kind = Tok::RParen; break;
      default: t.kind = Tok::Bad; break;
    }
    return t;
  }

 private:
  Token lex_number(Token t) {
    std::size_t start = pos_;
    auto digits = [&] {
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
        advance();
    };
    digits();
    if (pos_ < text_.size() && text_[pos_] == '.') {
      advance();
      digits();
    }
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t save = pos_;
      int save_col = column_;
      advance();
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) advance();
      if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        digits();
      } else {
        pos_ = save;
        column_ = save_col;
      }
    }
    t.text = std::string(text_.substr(start, pos_ - start));
    double v = 0.0;
    auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (res.ec != std::errc() || res.ptr != t.text.data() + t.text.size()) {
      t.kind = Tok::Bad;
      return t;
    }
    t.kind = Tok::Number;
    t.number = v;
    return t;
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
      advance();
  }

  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      column_ = 1;
    } else {
      ++column_;
    }
    ++pos_;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int column_ = 1;
};

// expr  := term (('+'|'-') term)*
// term  := unary (('*'|'/') unary)*
// unary := '-' unary | power
// power := primary ('^' unary)?
// primary := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'
class Parser {
 public:
  explicit Parser(std::string_view text) : lexer_(text) { cur_ = lexer_.next(); }

  Expression parse_all() {
    Expression e = parse_expr();
    if (cur_.kind != Tok::End) fail("unexpected token");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    const std::string tok = cur_.kind == Tok::End ? "<end of input>" : cur_.text;
    throw ParseError(what + " '" + tok + "' at line " + std::to_string(cur_.line) +
                         ", column " + std::to_string(cur_.column),
                     cur_.line, cur_.column, tok);
  }

  void bump() { cur_ = lexer_.next(); }

  Expression parse_expr() {
    Expression lhs = parse_term();
    while (cur_.kind == Tok::Plus || cur_.kind == Tok::Minus) {
      const Op op = cur_.kind == Tok::Plus ? Op::Add : Op::Sub;
      bump();
      lhs = Expression::binary(op, lhs, parse_term());
    }
    return lhs;
  }

  Expression parse_term() {
    Expression lhs = parse_unary();
    while (cur_.kind == Tok::Star || cur_.kind == Tok::Slash) {
      const Op op = cur_.kind == Tok::Star ? Op::Mul : Op::Div;
      bump();
      lhs = Expression::binary(op, lhs, parse_unary());
    }
    return lhs;
  }

  Expression parse_unary() {
    if (cur_.kind == Tok::Minus) {
      bump();
      return Expression::unary(Op::Neg, parse_unary());
    }
    return parse_power();
  }

  Expression parse_power() {
    Expression base = parse_primary();
    if (cur_.kind == Tok::Caret) {
      bump();
      return Expression::binary(Op::Pow, base, parse_unary());
    }
    return base;
  }

  Expression parse_primary() {
    switch (cur_.kind) {
      case Tok::Number: {
        const double v = cur_.number;
        bump();
        return Expression::constant(v);
      }
      case Tok::Ident: {
        Token ident = cur_;
        bump();
        auto fn = lookup_function(ident.text);
        if (cur_.kind == Tok::LParen) {
          if (!fn) {
            throw ParseError("unknown function '" + ident.text + "' at line " +
                                 std::to_string(ident.line) + ", column " +
                                 std::to_string(ident.column),
                             ident.line, ident.column, ident.text);
          }
          bump();
          Expression arg = parse_expr();
          if (cur_.kind != Tok::RParen) fail("expected ')' but found");
          bump();
          return Expression::unary(*fn, arg);
        }
        if (fn) {
          throw ParseError("function '" + ident.text + "' requires parentheses at line " +
                               std::to_string(ident.line) + ", column " +
                               std::to_string(ident.column),
                           ident.line, ident.column, ident.text);
        }
        return Expression::variable(ident.text);
      }
      case Tok::LParen: {
        bump();
        Expression inner = parse_expr();
        if (cur_.kind != Tok::RParen) fail("expected ')' but found");
        bump();
        return inner;
      }
      case Tok::End:
        fail("unexpected end of input");
      default:
        fail("unexpected token");
    }
  }

  Lexer lexer_;
  Token cur_;
};

// ---------------------------------------------------------------------------
// Simplification

Expression make_const(double v) { return Expression::constant(v == 0.0 ? 0.0 : v); }

Expression simplify_node(Op op, const Expression& a, const Expression& b);

Expression simplify_unary(Op op, const Expression& a) {
  if (a.is_constant()) {
    const double v = apply_unary(op, a.value());
    if (std::isfinite(v)) return make_const(v);
  }
  if (op == Op::Neg && a.op() == Op::Neg) return a.arg(0);
  return Expression::unary(op, a);
}

Expression simplify_node(Op op, const Expression& a, const Expression& b) {
  if (a.is_constant() && b.is_constant()) {
    const double v = apply_binary(op, a.value(), b.value());
    if (std::isfinite(v)) return make_const(v);
  }
  switch (op) {
    case Op::Add:
      if (a.is_constant(0.0)) return b;
      if (b.is_constant(0.0)) return a;
      if (b.op() == Op::Neg) return simplify_node(Op::Sub, a, b.arg(0));
      if (a.op() == Op::Neg) return simplify_node(Op::Sub, b, a.arg(0));
      if (b.is_constant() && b.value() < 0) return simplify_node(Op::Sub, a, make_const(-b.value()));
      break;
    case Op::Sub:
      if (b.is_constant(0.0)) return a;
      if (a.is_constant(0.0)) return simplify_unary(Op::Neg, b);
      if (a == b) return make_const(0.0);
      if (b.op() == Op::Neg) return simplify_node(Op::Add, a, b.arg(0));
      if (b.is_constant() && b.value() < 0) return simplify_node(Op::Add, a, make_const(-b.value()));
      break;
    case Op::Mul:
      if (a.is_constant(0.0) || b.is_constant(0.0)) return make_const(0.0);
      if (a.is_constant(1.0)) return b;
      if (b.is_constant(1.0)) return a;
      if (a.is_constant(-1.0)) return simplify_unary(Op::Neg, b);
      if (b.is_constant(-1.0)) return simplify_unary(Op::Neg, a);
      if (a.op() == Op::Neg && b.op() == Op::Neg) return simplify_node(Op::Mul, a.arg(0), b.arg(0));
      break;
    case Op::Div:
      if (a.is_constant(0.0) && !b.is_constant(0.0)) return make_const(0.0);
      if (b.is_constant(1.0)) return a;
      if (b.is_constant(-1.0)) return simplify_unary(Op::Neg, a);
      break;
    case Op::Pow:
      if (b.is_constant(1.0)) return a;
      if (b.is_constant(0.0)) return make_const(1.0);
      if (a.is_constant(1.0)) return make_const(1.0);
      if (a.is_constant(0.0) && b.is_constant() && b.value() > 0) return make_const(0.0);
      break;
    default:
      break;
  }
  return Expression::binary(op, a, b);
}

Expression simplify_rec(const Expression& e) {
  switch (e.arity()) {
    case 0:
      return e;
    case 1:
      return simplify_unary(e.op(), simplify_rec(e.arg(0)));
    default:
      return simplify_node(e.op(), simplify_rec(e.arg(0)), simplify_rec(e.arg(1)));
  }
}

// ---------------------------------------------------------------------------
// Differentiation (unsimplified; caller simplifies)

Expression deriv(const Expression& e, std::string_view v) {
  const Expression zero = Expression::constant(0.0);
  const Expression one = Expression::constant(1.0);
  switch (e.op()) {
    case Op::Constant:
      return zero;
    case Op::Variable:
      return e.name() == v ? one : zero;
    case Op::Neg:
      return -deriv(e.arg(0), v);
    case Op::Add:
      return deriv(e.arg(0), v) + deriv(e.arg(1), v);
    case Op::Sub:
      return deriv(e.arg(0), v) - deriv(e.arg(1), v);
    case Op::Mul: {
      const Expression& a = e.arg(0);
      const Expression& b = e.arg(1);
      return deriv(a, v) * b + a * deriv(b, v);
    }
    case Op::Div: {
      const Expression& a = e.arg(0);
      const Expression& b = e.arg(1);
      return (deriv(a, v) * b - a * deriv(b, v)) /
             Expression::binary(Op::Pow, b, Expression::constant(2.0));
    }
    case Op::Pow: {
      const Expression& a = e.arg(0);
      const Expression& b = e.arg(1);
      const std::set<std::string> var{std::string(v)};
      const bool exponent_const = !depends_on(b, var);
      if (exponent_const) {
        return b * Expression::binary(Op::Pow, a, b - one) * deriv(a, v);
      }
      if (!depends_on(a, var)) {
        return e * Expression::unary(Op::Log, a) * deriv(b, v);
      }
      return e * (deriv(b, v) * Expression::unary(Op::Log, a) + b * deriv(a, v) / a);
    }
    case Op::Exp:
      return e * deriv(e.arg(0), v);
    case Op::Log:
      return deriv(e.arg(0), v) / e.arg(0);
    case Op::Sqrt:
      return deriv(e.arg(0), v) / (Expression::constant(2.0) * e);
    case Op::Sin:
      return Expression::unary(Op::Cos, e.arg(0)) * deriv(e.arg(0), v);
    case Op::Cos:
      return -Expression::unary(Op::Sin, e.arg(0)) * deriv(e.arg(0), v);
    case Op::Tan:
      return deriv(e.arg(0), v) /
             Expression::binary(Op::Pow, Expression::unary(Op::Cos, e.arg(0)),
                                Expression::constant(2.0));
    case Op::Atan:
      return deriv(e.arg(0), v) /
             (one + Expression::binary(Op::Pow, e.arg(0), Expression::constant(2.0)));
  }
  return zero;
}

void collect_vars(const Expression& e, std::set<std::string>& out) {
  if (e.op() == Op::Variable) {
    out.insert(e.name());
    return;
  }
  for (std::size_t i = 0; i < e.arity(); ++i) collect_vars(e.arg(i), out);
}


}  // namespace

// ---------------------------------------------------------------------------

bool is_function(Op op) { return op >= Op::Exp; }

const char* function_name(Op op) {
  for (const auto& f : kFunctions)
    if (f.op == op) return f.name;
  return "?";
}

Expression::Expression() {
  static const auto zero = std::make_shared<const Node>();
  node_ = zero;
}
Expression::Expression(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

Expression Expression::constant(double value) {
  auto n = std::make_shared<Node>();
  n->op = Op::Constant;
  n->value = value;
  return Expression(std::move(n));
}

Expression Expression::variable(std::string name) {
  auto n = std::make_shared<Node>();
  n->op = Op::Variable;
  n->name = std::move(name);
  return Expression(std::move(n));
}

Expression Expression::unary(Op op, Expression arg) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->args.push_back(std::move(arg));
  n->arity = 1;
  return Expression(std::move(n));
}

Expression Expression::binary(Op op, Expression lhs, Expression rhs) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->args.push_back(std::move(lhs));
  n->args.push_back(std::move(rhs));
  n->arity = 2;
  return Expression(std::move(n));
}

Op Expression::op() const { return node_->op; }
double Expression::value() const { return node_->value; }
const std::string& Expression::name() const { return node_->name; }
std::size_t Expression::arity() const { return node_->arity; }
const Expression& Expression::arg(std::size_t i) const { return node_->args.at(i); }

std::string Expression::to_string() const {
  std::string out;
  print(*this, out);
  return out;
}

bool operator==(const Expression& a, const Expression& b) {
  if (a.node_ == b.node_) return true;
  if (a.op() != b.op() || a.arity() != b.arity()) return false;
  switch (a.op()) {
    case Op::Constant: return a.value() == b.value();
    case Op::Variable: return a.name() == b.name();
    default: break;
  }
  for (std::size_t i = 0; i < a.arity(); ++i)
    if (!(a.arg(i) == b.arg(i))) return false;
  return true;
}

Expression operator+(const Expression& a, const Expression& b) { return Expression::binary(Op::Add, a, b); }
Expression operator-(const Expression& a, const Expression& b) { return Expression::binary(Op::Sub, a, b); }
Expression operator*(const Expression& a, const Expression& b) { return Expression::binary(Op::Mul, a, b); }
Expression operator/(const Expression& a, const Expression& b) { return Expression::binary(Op::Div, a, b); }
Expression operator-(const Expression& a) { return Expression::unary(Op::Neg, a); }

ParseError::ParseError(const std::string& message, int line, int column, std::string token)
    : Error(message), line_(line), column_(column), token_(std::move(token)) {}

Expression parse(std::string_view text) { return Parser(text).parse_all(); }

double evaluate(const Expression& e, const Binding& binding) {
  switch (e.op()) {
    case Op::Constant:
      return e.value();
    case Op::Variable: {
      auto it = binding.find(e.name());
      if (it == binding.end()) throw EvalError("unbound variable '" + e.name() + "'");
      return it->second;
    }
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Pow: {
      const double a = evaluate(e.arg(0), binding);
      const double b = evaluate(e.arg(1), binding);
      if (e.op() == Op::Div && b == 0.0)
        throw EvalError("division by zero in '" + e.to_string() + "'");
      if (e.op() == Op::Pow) {
        if (a == 0.0 && b < 0.0)
          throw EvalError("division by zero in '" + e.to_string() + "'");
        if (a < 0.0 && b != std::floor(b))
          throw EvalError("domain error: negative base with non-integer exponent in '" +
                          e.to_string() + "'");
      }
      return apply_binary(e.op(), a, b);
    }
    default: {
      const double a = evaluate(e.arg(0), binding);
      if (e.op() == Op::Log && !(a > 0.0))
        throw EvalError("domain error: log of non-positive value in '" + e.to_string() + "'");
      if (e.op() == Op::Sqrt && a < 0.0)
        throw EvalError("domain error: sqrt of negative value in '" + e.to_string() + "'");
      return apply_unary(e.op(), a);
    }
  }
}

Expression differentiate(const Expression& e, std::string_view variable) {
  return simplify(deriv(e, variable));
}

Expression simplify(const Expression& e) { return simplify_rec(e); }

std::set<std::string> free_variables(const Expression& e) {
  std::set<std::string> out;
  collect_vars(e, out);
  return out;
}

bool depends_on(const Expression& e, const std::set<std::string>& names) {
  if (e.op() == Op::Variable) return names.count(e.name()) != 0;
  for (std::size_t i = 0; i < e.arity(); ++i)
    if (depends_on(e.arg(i), names)) return true;
  return false;
}

Expression substitute(const Expression& e, const std::map<std::string, Expression>& replacement) {
  switch (e.arity()) {
    case 0: {
      if (e.op() == Op::Variable) {
        auto it = replacement.find(e.name());
        if (it != replacement.end()) return it->second;
      }
      return e;
    }
    case 1:
      return Expression::unary(e.op(), substitute(e.arg(0), replacement));
    default:
      return Expression::binary(e.op(), substitute(e.arg(0), replacement),
                                substitute(e.arg(1), replacement));
  }
}

// ---------------------------------------------------------------------------

Program::Program(const Expression& e, const std::function<int(const std::string&)>& slot_of) {
  std::size_t depth = 0;
  std::function<void(const Expression&)> emit = [&](const Expression& n) {
    switch (n.arity()) {
      case 0:
        if (n.op() == Op::Variable) {
          const int slot = slot_of(n.name());
          if (slot < 0) throw ModelError("unresolved name '" + n.name() + "'");
          code_.push_back({Op::Variable, slot, 0.0});
        } else {
          code_.push_back({Op::Constant, -1, n.value()});
        }
        ++depth;
        max_depth_ = std::max(max_depth_, depth);
        return;
      case 1:
        emit(n.arg(0));
        code_.push_back({n.op(), -1, 0.0});
        return;
      default:
        emit(n.arg(0));
        emit(n.arg(1));
        code_.push_back({n.op(), -1, 0.0});
        --depth;
        return;
    }
  };
  emit(e);
}

double Program::run(std::span<const double> slots, std::vector<double>& stack) const {
  if (code_.empty()) return 0.0;
  if (stack.size() < max_depth_) stack.resize(max_depth_);
  double* top = stack.data() - 1;
  for (const Instr& in : code_) {
    switch (in.op) {
      case Op::Constant: *++top = in.value; break;
      case Op::Variable: *++top = slots[static_cast<std::size_t>(in.slot)]; break;
      case Op::Neg: *top = -*top; break;
      case Op::Add: top[-1] += top[0]; --top; break;
      case Op::Sub: top[-1] -= top[0]; --top; break;
      case Op::Mul: top[-1] *= top[0]; --top; break;
      case Op::Div: top[-1] /= top[0]; --top; break;
      case Op::Pow: top[-1] = std::pow(top[-1], top[0]); --top; break;
      default: *top = apply_unary(in.op, *top); break;
    }
  }
  return *top;
}

}  // namespace greybox::expr
