#include "greybox/model_file.hpp"

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>

namespace greybox {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double to_number(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) throw ModelError("invalid number '" + s + "'");
  return v;
}

void parse_param(ModelSpec& spec, const std::string& rest) {
  const auto eq = rest.find('=');
  if (eq == std::string::npos) throw ModelError("expected 'param <name> = init=<value>...'");
  const std::string name = trim(std::string_view(rest).substr(0, eq));
  std::optional<double> init, lower, upper;
  for (const auto& field : split(std::string_view(rest).substr(eq + 1), ',')) {
    const auto kv = field.find('=');
    if (kv == std::string::npos) throw ModelError("expected key=value in '" + field + "'");
    const std::string key = trim(std::string_view(field).substr(0, kv));
    const double value = to_number(trim(std::string_view(field).substr(kv + 1)));
    if (key == "init")
      init = value;
    else if (key == "lower")
      lower = value;
    else if (key == "upper")
      upper = value;
    else
      throw ModelError("unknown parameter field '" + key + "'");
  }
  if (!init) throw ModelError("parameter '" + name + "' has no init value");
  spec.set_parameter(name, *init, lower, upper);
}

}  // namespace

ModelSpec parse_model(std::string_view text, const std::string& source) {
  ModelSpec spec;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string stmt = trim(line);
    if (stmt.empty()) continue;
    const auto sp = stmt.find_first_of(" \t");
    const std::string keyword = stmt.substr(0, sp);
    const std::string rest = sp == std::string::npos ? "" : trim(std::string_view(stmt).substr(sp));
    try {
      if (keyword == "system")
        spec.add_system(rest);
      else if (keyword == "obs")
        spec.add_obs(rest);
      else if (keyword == "obsvar")
        spec.set_variance(rest);
      else if (keyword == "input")
        spec.add_input(split(rest, ','));
      else if (keyword == "param")
        parse_param(spec, rest);
      else
        throw ModelError("unknown statement '" + keyword + "'");
    } catch (const Error& e) {
      throw ModelError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return spec;
}

ModelSpec load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str(), path);
}

}  // namespace greybox
