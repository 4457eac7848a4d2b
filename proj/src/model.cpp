#include "greybox/model.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace greybox {

using expr::Expression;
using expr::Op;

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool is_identifier(std::string_view s) {
  if (s.empty() || !std::isalpha(static_cast<unsigned char>(s[0]))) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

/// 0 for "dt", k for "dw<k>", -1 otherwise.
int reserved_token(std::string_view name) {
  if (name == "dt") return 0;
  if (name.size() > 2 && name[0] == 'd' && name[1] == 'w' &&
      std::all_of(name.begin() + 2, name.end(),
                  [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    int k = 0;
    for (char c : name.substr(2)) k = k * 10 + (c - '0');
    return k > 0 ? k : -2;
  }
  return -1;
}

bool is_reserved(std::string_view name) { return reserved_token(name) != -1; }

std::pair<std::string, std::string> split_formula(std::string_view text, const char* what) {
  const auto pos = text.find('~');
  if (pos == std::string_view::npos)
    throw ModelError(std::string(what) + " '" + std::string(text) + "' has no '~'");
  return {trim(text.substr(0, pos)), trim(text.substr(pos + 1))};
}

void collect_terms(const Expression& e, bool negative, std::vector<std::pair<bool, Expression>>& out) {
  switch (e.op()) {
    case Op::Add:
      collect_terms(e.arg(0), negative, out);
      collect_terms(e.arg(1), negative, out);
      return;
    case Op::Sub:
      collect_terms(e.arg(0), negative, out);
      collect_terms(e.arg(1), !negative, out);
      return;
    case Op::Neg:
      if (e.arg(0).op() == Op::Add || e.arg(0).op() == Op::Sub || e.arg(0).op() == Op::Neg) {
        collect_terms(e.arg(0), !negative, out);
        return;
      }
      break;
    default:
      break;
  }
  out.emplace_back(negative, e);
}

void collect_reserved(const Expression& e, std::vector<std::string>& out) {
  if (e.op() == Op::Variable) {
    if (is_reserved(e.name())) out.push_back(e.name());
    return;
  }
  for (std::size_t i = 0; i < e.arity(); ++i) collect_reserved(e.arg(i), out);
}

bool contains_var(const Expression& e, const std::string& name) {
  return expr::depends_on(e, {name});
}

Expression strip_factor(const Expression& e, const std::string& token, const Expression& term) {
  auto fail = [&]() -> Expression {
    throw ModelError("'" + token + "' must be a multiplicative factor in term '" +
                     term.to_string() + "'");
  };
  switch (e.op()) {
    case Op::Variable:
      return e.name() == token ? Expression::constant(1.0) : fail();
    case Op::Mul:
      if (contains_var(e.arg(0), token)) return strip_factor(e.arg(0), token, term) * e.arg(1);
      return e.arg(0) * strip_factor(e.arg(1), token, term);
    case Op::Div:
      if (contains_var(e.arg(1), token)) return fail();
      return strip_factor(e.arg(0), token, term) / e.arg(1);
    case Op::Neg:
      return -strip_factor(e.arg(0), token, term);
    default:
      return fail();
  }
}

Expression accumulate(const std::optional<Expression>& acc, bool negative, const Expression& term) {
  if (!acc) return negative ? -term : term;
  return negative ? *acc - term : *acc + term;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

void check_no_reserved(const Expression& e, const std::string& where) {
  std::vector<std::string> found;
  collect_reserved(e, found);
  if (!found.empty())
    throw ModelError("reserved token '" + found.front() + "' not allowed in " + where);
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelSpec::add_system(std::string_view equation) {
  auto [lhs, rhs] = split_formula(equation, "system equation");
  if (lhs.size() < 2 || lhs[0] != 'd' || !is_identifier(lhs.substr(1)))
    throw ModelError("system equation left-hand side must be d<state>, got '" + lhs + "'");
  const std::string state = lhs.substr(1);
  if (state == "t" || is_reserved(lhs) || is_reserved(state))
    throw ModelError("'" + state + "' is reserved and cannot name a state");

  const Expression body = expr::parse(rhs);
  std::vector<std::pair<bool, Expression>> terms;
  collect_terms(body, false, terms);

  std::optional<Expression> drift;
  std::map<int, std::optional<Expression>> diffusion;
  for (const auto& [negative, term] : terms) {
    std::vector<std::string> tokens;
    collect_reserved(term, tokens);
    if (tokens.empty())
      throw ModelError("term '" + term.to_string() + "' in equation for " + state +
                       " has no dt or dw factor");
    if (tokens.size() > 1)
      throw ModelError("term '" + term.to_string() + "' in equation for " + state +
                       " has more than one dt/dw factor");
    const int k = reserved_token(tokens.front());
    if (k < 0) throw ModelError("invalid Wiener increment '" + tokens.front() + "'");
    Expression stripped = expr::simplify(strip_factor(term, tokens.front(), term));
    if (k == 0)
      drift = accumulate(drift, negative, stripped);
    else
      diffusion[k] = accumulate(diffusion[k], negative, stripped);
  }

  SystemEquation eq;
  eq.state = state;
  eq.drift = drift ? expr::simplify(*drift) : Expression::constant(0.0);
  for (auto& [k, e] : diffusion) eq.diffusion[k] = expr::simplify(*e);

  auto it = std::find_if(systems_.begin(), systems_.end(),
                         [&](const SystemEquation& s) { return s.state == state; });
  if (it != systems_.end())
    *it = std::move(eq);
  else
    systems_.push_back(std::move(eq));
}

void ModelSpec::add_obs(std::string_view equation) {
  auto [lhs, rhs] = split_formula(equation, "measurement equation");
  if (!is_identifier(lhs)) throw ModelError("invalid output name '" + lhs + "'");
  if (lhs == "t" || is_reserved(lhs)) throw ModelError("'" + lhs + "' is reserved");
  for (const auto& o : observations_)
    if (o.output == lhs) throw ModelError("duplicate output '" + lhs + "'");
  const Expression h = expr::parse(rhs);
  check_no_reserved(h, "measurement equation for " + lhs);
  observations_.push_back({lhs, h});
}

void ModelSpec::set_variance(std::string_view entry) {
  auto [lhs, rhs] = split_formula(entry, "variance entry");
  if (!is_identifier(lhs)) throw ModelError("invalid variance name '" + lhs + "'");
  const Expression v = expr::parse(rhs);
  check_no_reserved(v, "variance entry " + lhs);
  for (auto& e : variances_) {
    if (e.pair == lhs) {
      e.value = v;
      return;
    }
  }
  variances_.push_back({lhs, v});
}

void ModelSpec::add_input(const std::vector<std::string>& names) {
  for (const auto& raw : names) {
    const std::string name = trim(raw);
    if (!is_identifier(name)) throw ModelError("invalid input name '" + name + "'");
    if (name == "t" || is_reserved(name)) throw ModelError("'" + name + "' is reserved");
    for (const auto& s : systems_)
      if (s.state == name) throw ModelError("input '" + name + "' collides with a state");
    for (const auto& o : observations_)
      if (o.output == name) throw ModelError("input '" + name + "' collides with an output");
    if (std::find(inputs_.begin(), inputs_.end(), name) == inputs_.end()) inputs_.push_back(name);
  }
}

void ModelSpec::set_parameter(const std::string& name, double init, std::optional<double> lower,
                              std::optional<double> upper) {
  if (!is_identifier(name)) throw ModelError("invalid parameter name '" + name + "'");
  if (!std::isfinite(init)) throw ModelError("initial value of '" + name + "' is not finite");
  if ((lower && !(*lower < init)) || (upper && !(init < *upper)))
    throw ModelError("bound violation for '" + name + "': require lower < init < upper");
  parameters_[name] = ParameterSetting{init, lower, upper};
}

std::pair<std::size_t, std::size_t> ModelSpec::resolve_variance_pair(const std::string& pair) const {
  std::set<std::pair<std::size_t, std::size_t>> candidates;
  auto index_of = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < observations_.size(); ++i)
      if (observations_[i].output == name) return i;
    return std::nullopt;
  };
  if (auto i = index_of(pair)) candidates.insert({*i, *i});
  for (std::size_t cut = 1; cut < pair.size(); ++cut) {
    auto a = index_of(std::string_view(pair).substr(0, cut));
    auto b = index_of(std::string_view(pair).substr(cut));
    if (a && b) candidates.insert({std::min(*a, *b), std::max(*a, *b)});
  }
  if (candidates.empty())
    throw ModelError("variance entry '" + pair + "' does not name an output or output pair");
  if (candidates.size() > 1)
    throw ModelError("variance entry '" + pair + "' is ambiguous");
  return *candidates.begin();
}

// ---------------------------------------------------------------------------

std::string model_header(Classification c, std::size_t n, std::size_t l, std::size_t m) {
  auto count = [](std::size_t k, const char* noun) {
    return std::to_string(k) + " " + noun + (k > 1 ? "s" : "");
  };
  return std::string(c == Classification::Linear ? "Linear" : "Non-linear") +
         " state space model with " + count(n, "state") + ", " + count(l, "output") + " and " +
         count(m, "input");
}

std::string CompiledModel::header() const {
  return model_header(classification_, num_states(), num_outputs(), num_inputs());
}

std::optional<std::size_t> CompiledModel::parameter_index(std::string_view name) const {
  for (std::size_t i = 0; i < parameters_.size(); ++i)
    if (parameters_[i] == name) return i;
  return std::nullopt;
}

std::vector<double> CompiledModel::initial_values() const {
  std::vector<double> out(parameters_.size());
  std::string missing;
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    if (!settings_[i]) {
      missing += (missing.empty() ? "" : ", ") + parameters_[i];
      continue;
    }
    out[i] = settings_[i]->init;
  }
  if (!missing.empty()) throw ModelError("parameters without a value: " + missing);
  return out;
}

CompiledModel compile(const ModelSpec& spec) {
  if (spec.systems().empty()) throw ModelError("model has no system equations");
  if (spec.observations().empty()) throw ModelError("model has no measurement equations");

  CompiledModel m;
  for (const auto& s : spec.systems()) m.states_.push_back(s.state);
  for (const auto& o : spec.observations()) m.outputs_.push_back(o.output);
  m.inputs_ = spec.inputs();
  const std::size_t n = m.states_.size(), l = m.outputs_.size(), ni = m.inputs_.size();

  const std::set<std::string> state_set(m.states_.begin(), m.states_.end());
  const std::set<std::string> input_set(m.inputs_.begin(), m.inputs_.end());
  const std::set<std::string> output_set(m.outputs_.begin(), m.outputs_.end());
  std::set<std::string> state_or_input = state_set;
  state_or_input.insert(input_set.begin(), input_set.end());

  for (const auto& name : m.inputs_) {
    if (state_set.count(name)) throw ModelError("input '" + name + "' collides with a state");
    if (output_set.count(name)) throw ModelError("input '" + name + "' collides with an output");
  }
  for (const auto& name : m.outputs_)
    if (state_set.count(name)) throw ModelError("output '" + name + "' collides with a state");

  // Symbolic components.
  int max_k = 0;
  std::set<int> used_k;
  for (const auto& s : spec.systems())
    for (const auto& [k, e] : s.diffusion) {
      max_k = std::max(max_k, k);
      used_k.insert(k);
    }
  m.num_wiener_ = static_cast<std::size_t>(max_k);
  m.warnings_ = spec.warnings();
  for (int k = 1; k <= max_k; ++k)
    if (!used_k.count(k)) m.warnings_.push_back("Wiener process dw" + std::to_string(k) + " is not used");

  m.drift_.resize(n);
  m.diffusion_.assign(n, std::vector<Expression>(m.num_wiener_));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = spec.systems()[i];
    m.drift_[i] = s.drift;
    for (const auto& [k, e] : s.diffusion) {
      if (expr::depends_on(e, state_set))
        throw ModelError("diffusion term '" + e.to_string() + "' of state " + s.state +
                         " depends on the state; apply a Lamperti transformation to obtain "
                         "state-independent diffusion");
      m.diffusion_[i][static_cast<std::size_t>(k - 1)] = e;
    }
  }
  for (const auto& o : spec.observations()) m.measurement_.push_back(o.measurement);

  m.variance_.assign(l, std::vector<Expression>(l));
  std::vector<std::vector<bool>> set_entry(l, std::vector<bool>(l, false));
  for (const auto& v : spec.variances()) {
    auto [i, j] = spec.resolve_variance_pair(v.pair);
    if (set_entry[i][j])
      throw ModelError("variance entry for (" + m.outputs_[i] + ", " + m.outputs_[j] +
                       ") specified twice");
    if (expr::depends_on(v.value, state_set))
      throw ModelError("variance entry '" + v.pair + "' depends on a state");
    set_entry[i][j] = set_entry[j][i] = true;
    m.variance_[i][j] = v.value;
    m.variance_[j][i] = v.value;
  }
  for (std::size_t i = 0; i < l; ++i)
    if (!set_entry[i][i]) throw ModelError("missing variance entry for output '" + m.outputs_[i] + "'");

  // Parameters.
  std::set<std::string> found;
  auto scan = [&](const Expression& e) {
    for (const auto& v : expr::free_variables(e)) {
      if (output_set.count(v))
        throw ModelError("output '" + v + "' appears on a right-hand side");
      if (!state_or_input.count(v) && v != "t") found.insert(v);
    }
  };
  for (std::size_t i = 0; i < n; ++i) {
    scan(m.drift_[i]);
    for (const auto& e : m.diffusion_[i]) scan(e);
  }
  for (const auto& e : m.measurement_) scan(e);
  for (const auto& row : m.variance_)
    for (const auto& e : row) scan(e);

  std::vector<std::string> initial;
  for (const auto& s : m.states_) {
    const std::string p = s + "0";
    if (state_or_input.count(p) || output_set.count(p))
      throw ModelError("initial-state parameter '" + p + "' collides with another name");
    initial.push_back(p);
    found.erase(p);
  }
  std::vector<std::string> rest(found.begin(), found.end());
  std::sort(rest.begin(), rest.end(), [](const std::string& a, const std::string& b) {
    const auto la = lower(a), lb = lower(b);
    return la != lb ? la < lb : a < b;
  });
  m.parameters_ = initial;
  m.parameters_.insert(m.parameters_.end(), rest.begin(), rest.end());

  m.settings_.assign(m.parameters_.size(), std::nullopt);
  for (const auto& [name, setting] : spec.parameters()) {
    auto idx = m.parameter_index(name);
    if (!idx) throw ModelError("unknown parameter '" + name + "'");
    m.settings_[*idx] = setting;
  }

  // Jacobians.
  auto jac = [](const std::vector<Expression>& f, const std::vector<std::string>& wrt) {
    std::vector<std::vector<Expression>> out(f.size(), std::vector<Expression>(wrt.size()));
    for (std::size_t i = 0; i < f.size(); ++i)
      for (std::size_t j = 0; j < wrt.size(); ++j) out[i][j] = expr::differentiate(f[i], wrt[j]);
    return out;
  };
  m.a_ = jac(m.drift_, m.states_);
  m.b_ = jac(m.drift_, m.inputs_);
  m.c_ = jac(m.measurement_, m.states_);
  m.d_ = jac(m.measurement_, m.inputs_);

  // Linear iff all Jacobian entries, sigma and S are free of states and
  // inputs and f, h carry no offset beyond Ax + Bu, Cx + Du.
  auto clean = [&](const std::vector<std::vector<Expression>>& mat) {
    for (const auto& row : mat)
      for (const auto& e : row)
        if (expr::depends_on(e, state_or_input)) return false;
    return true;
  };
  std::map<std::string, Expression> zeros;
  for (const auto& s : state_or_input) zeros[s] = Expression::constant(0.0);
  auto no_offset = [&](const std::vector<Expression>& f) {
    for (const auto& e : f)
      if (!expr::simplify(expr::substitute(e, zeros)).is_constant(0.0)) return false;
    return true;
  };
  const bool linear = clean(m.a_) && clean(m.b_) && clean(m.c_) && clean(m.d_) &&
                      clean(m.diffusion_) && clean(m.variance_) && no_offset(m.drift_) &&
                      no_offset(m.measurement_);
  m.classification_ = linear ? Classification::Linear : Classification::Nonlinear;

  const std::set<std::string> time{"t"};
  auto tv = [&](const std::vector<std::vector<Expression>>& mat) {
    for (const auto& row : mat)
      for (const auto& e : row)
        if (expr::depends_on(e, time)) return true;
    return false;
  };
  m.time_varying_ = tv({m.drift_}) || tv({m.measurement_}) || tv(m.diffusion_) || tv(m.variance_);

  // Slot layout: states | inputs | t | parameters.
  std::map<std::string, int> slot;
  for (std::size_t i = 0; i < n; ++i) slot[m.states_[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < ni; ++i) slot[m.inputs_[i]] = static_cast<int>(n + i);
  slot["t"] = static_cast<int>(n + ni);
  for (std::size_t i = 0; i < m.parameters_.size(); ++i)
    slot[m.parameters_[i]] = static_cast<int>(n + ni + 1 + i);
  const auto slot_of = [&](const std::string& name) {
    auto it = slot.find(name);
    return it == slot.end() ? -1 : it->second;
  };
  auto progs = [&](const std::vector<std::vector<Expression>>& mat) {
    std::vector<expr::Program> out;
    for (const auto& row : mat)
      for (const auto& e : row) out.emplace_back(e, slot_of);
    return out;
  };
  m.programs_.drift = progs({m.drift_});
  m.programs_.measurement = progs({m.measurement_});
  m.programs_.diffusion = progs(m.diffusion_);
  m.programs_.variance = progs(m.variance_);
  m.programs_.a = progs(m.a_);
  m.programs_.b = progs(m.b_);
  m.programs_.c = progs(m.c_);
  m.programs_.d = progs(m.d_);
  return m;
}

// ---------------------------------------------------------------------------

ModelEvaluator::ModelEvaluator(const CompiledModel& model, std::span<const double> parameters)
    : model_(&model) {
  if (parameters.size() != model.num_parameters())
    throw ModelError("expected " + std::to_string(model.num_parameters()) + " parameter values, got " +
                     std::to_string(parameters.size()));
  const std::size_t base = model.num_states() + model.num_inputs() + 1;
  slots_.assign(base + parameters.size(), 0.0);
  std::copy(parameters.begin(), parameters.end(), slots_.begin() + static_cast<long>(base));
}

void ModelEvaluator::set_point(const Vector& x, const Vector& u, double t) {
  const std::size_t n = model_->num_states(), m = model_->num_inputs();
  for (std::size_t i = 0; i < n; ++i) slots_[i] = x[static_cast<Eigen::Index>(i)];
  for (std::size_t i = 0; i < m; ++i) slots_[n + i] = u[static_cast<Eigen::Index>(i)];
  slots_[n + m] = t;
}

void ModelEvaluator::fill(const std::vector<expr::Program>& programs, double* out, std::size_t count) const {
  for (std::size_t i = 0; i < count; ++i) out[i] = programs[i].run(slots_, stack_);
}

namespace {

// Programs are stored row-major; Eigen matrices default to column-major.
template <class M>
void fill_matrix(const std::vector<expr::Program>& programs, std::size_t rows, std::size_t cols,
                 std::span<const double> slots, std::vector<double>& stack, M& out) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          programs[i * cols + j].run(slots, stack);
}

}  // namespace

Vector ModelEvaluator::drift() const {
  Vector out(static_cast<Eigen::Index>(model_->num_states()));
  drift_into(out);
  return out;
}

void ModelEvaluator::drift_into(Eigen::Ref<Vector> out) const {
  fill(model_->programs_.drift, out.data(), model_->num_states());
}

Matrix ModelEvaluator::diffusion() const {
  Matrix out(static_cast<Eigen::Index>(model_->num_states()),
             static_cast<Eigen::Index>(model_->num_wiener()));
  diffusion_into(out);
  return out;
}

void ModelEvaluator::diffusion_into(Eigen::Ref<Matrix> out) const {
  fill_matrix(model_->programs_.diffusion, model_->num_states(), model_->num_wiener(), slots_, stack_, out);
}

Vector ModelEvaluator::measurement() const {
  Vector out(static_cast<Eigen::Index>(model_->num_outputs()));
  fill(model_->programs_.measurement, out.data(), model_->num_outputs());
  return out;
}

Matrix ModelEvaluator::variance() const {
  const auto l = model_->num_outputs();
  Matrix out(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(l));
  fill_matrix(model_->programs_.variance, l, l, slots_, stack_, out);
  return out;
}

Matrix ModelEvaluator::jacobian_a() const {
  const auto n = model_->num_states();
  Matrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  jacobian_a_into(out);
  return out;
}

void ModelEvaluator::jacobian_a_into(Eigen::Ref<Matrix> out) const {
  const auto n = model_->num_states();
  fill_matrix(model_->programs_.a, n, n, slots_, stack_, out);
}

Matrix ModelEvaluator::jacobian_b() const {
  Matrix out(static_cast<Eigen::Index>(model_->num_states()), static_cast<Eigen::Index>(model_->num_inputs()));
  fill_matrix(model_->programs_.b, model_->num_states(), model_->num_inputs(), slots_, stack_, out);
  return out;
}

Matrix ModelEvaluator::jacobian_c() const {
  Matrix out(static_cast<Eigen::Index>(model_->num_outputs()), static_cast<Eigen::Index>(model_->num_states()));
  fill_matrix(model_->programs_.c, model_->num_outputs(), model_->num_states(), slots_, stack_, out);
  return out;
}

Matrix ModelEvaluator::jacobian_d() const {
  Matrix out(static_cast<Eigen::Index>(model_->num_outputs()), static_cast<Eigen::Index>(model_->num_inputs()));
  fill_matrix(model_->programs_.d, model_->num_outputs(), model_->num_inputs(), slots_, stack_, out);
  return out;
}

}  // namespace greybox
