#include "greybox/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "greybox/model.hpp"

namespace greybox {

std::optional<std::size_t> CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  return std::nullopt;
}

namespace {

std::vector<std::string> split_line(const std::string& line, const std::string& source, int lineno) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false, was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && field.empty() && !was_quoted) {
      quoted = was_quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw DataError(source + ":" + std::to_string(lineno) + ": unterminated quoted field");
  out.push_back(std::move(field));
  return out;
}

bool needs_quotes(const std::string& f) {
  return f.find_first_of(",\"\n") != std::string::npos;
}

}  // namespace

CsvTable parse_csv(std::string_view text, const std::string& source) {
  CsvTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (table.header.empty()) {
      if (line.empty()) continue;
      table.header = split_line(line, source, lineno);
      continue;
    }
    if (line.empty()) continue;
    auto fields = split_line(line, source, lineno);
    if (fields.size() != table.header.size())
      throw DataError(source + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(table.header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
  }
  if (table.header.empty()) throw DataError(source + ": empty CSV");
  return table;
}

std::string write_csv(const CsvTable& table) {
  std::string out;
  auto write_row = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      if (needs_quotes(row[i])) {
        out += '"';
        for (char c : row[i]) {
          if (c == '"') out += '"';
          out += c;
        }
        out += '"';
      } else {
        out += row[i];
      }
    }
    out += '\n';
  };
  write_row(table.header);
  for (const auto& r : table.rows) write_row(r);
  return out;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open data file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), path);
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << contents;
  if (!out) throw DataError("failed writing '" + path + "'");
}

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// ---------------------------------------------------------------------------

Dataset::Dataset(std::vector<double> times, Eigen::MatrixXd inputs, Eigen::MatrixXd outputs,
                 bool require_observation)
    : times_(std::move(times)), inputs_(std::move(inputs)), outputs_(std::move(outputs)) {
  const auto n = static_cast<Eigen::Index>(times_.size());
  if (times_.empty()) throw DataError("dataset has no rows");
  if (inputs_.rows() != n || outputs_.rows() != n)
    throw DataError("dataset inputs/outputs must have one row per time stamp");
  for (std::size_t k = 0; k < times_.size(); ++k) {
    if (!std::isfinite(times_[k])) throw DataError("time stamp at row " + std::to_string(k) + " is not finite");
    if (k > 0 && !(times_[k] > times_[k - 1]))
      throw DataError("time stamps must be strictly increasing (row " + std::to_string(k) + ")");
  }
  if (!inputs_.allFinite()) throw DataError("inputs must not be missing or non-finite");
  for (Eigen::Index i = 0; i < outputs_.size(); ++i)
    if (std::isinf(outputs_.data()[i])) throw DataError("outputs must be finite or missing");
  if (require_observation && num_observations() == 0)
    throw DataError("dataset has no observed outputs");
}

bool Dataset::missing(std::size_t k, std::size_t j) const {
  return std::isnan(outputs_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)));
}

bool Dataset::row_missing(std::size_t k) const {
  for (Eigen::Index j = 0; j < outputs_.cols(); ++j)
    if (!std::isnan(outputs_(static_cast<Eigen::Index>(k), j))) return false;
  return true;
}

std::size_t Dataset::num_observations() const {
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < outputs_.size(); ++i)
    if (!std::isnan(outputs_.data()[i])) ++count;
  return count;
}

Dataset Dataset::without_row(std::size_t k) const {
  std::vector<double> t;
  const auto n = static_cast<Eigen::Index>(size());
  Eigen::MatrixXd u(n - 1, inputs_.cols()), y(n - 1, outputs_.cols());
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < size(); ++i) {
    if (i == k) continue;
    t.push_back(times_[i]);
    u.row(r) = inputs_.row(static_cast<Eigen::Index>(i));
    y.row(r) = outputs_.row(static_cast<Eigen::Index>(i));
    ++r;
  }
  return Dataset(std::move(t), std::move(u), std::move(y), false);
}

Dataset dataset_from_table(const CsvTable& table, const CompiledModel& model, bool require_outputs,
                           const std::string& source) {
  const auto tcol = table.column("t");
  if (!tcol) throw DataError(source + ": missing mandatory column 't'");
  std::set<std::string> known{"t"};
  for (const auto& s : model.states()) known.insert(s);
  for (const auto& s : model.inputs()) known.insert(s);
  for (const auto& s : model.outputs()) known.insert(s);
  for (const auto& h : table.header)
    if (!known.count(h)) throw DataError(source + ": unknown column '" + h + "'");

  const auto rows = static_cast<Eigen::Index>(table.rows.size());
  const auto line_of = [&](std::size_t r) { return source + ":" + std::to_string(r + 2); };
  std::vector<double> times;
  Eigen::MatrixXd u(rows, static_cast<Eigen::Index>(model.num_inputs()));
  Eigen::MatrixXd y(rows, static_cast<Eigen::Index>(model.num_outputs()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    auto t = parse_number(table.rows[r][*tcol]);
    if (!t) throw DataError(line_of(r) + ": invalid time stamp '" + table.rows[r][*tcol] + "'");
    if (!times.empty() && !(*t > times.back()))
      throw DataError(line_of(r) + ": time stamps must be strictly increasing");
    times.push_back(*t);
  }
  for (std::size_t j = 0; j < model.num_inputs(); ++j) {
    const auto& name = model.inputs()[j];
    const auto col = table.column(name);
    if (!col && name != "dummy") throw DataError(source + ": missing input column '" + name + "'");
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      double v = 1.0;
      if (col) {
        auto parsed = parse_number(table.rows[r][*col]);
        if (!parsed || !std::isfinite(*parsed))
          throw DataError(line_of(r) + ": input '" + name + "' must be a finite number");
        v = *parsed;
      }
      u(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
    }
  }
  for (std::size_t j = 0; j < model.num_outputs(); ++j) {
    const auto& name = model.outputs()[j];
    const auto col = table.column(name);
    if (!col && require_outputs) throw DataError(source + ": missing output column '" + name + "'");
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      double v = std::nan("");
      if (col) {
        const auto& field = table.rows[r][*col];
        const bool blank = field.find_first_not_of(" \t") == std::string::npos;
        if (!blank && field != "NA") {
          auto parsed = parse_number(field);
          if (!parsed || !std::isfinite(*parsed))
            throw DataError(line_of(r) + ": invalid value '" + field + "' for output '" + name + "'");
          v = *parsed;
        }
      }
      y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return Dataset(std::move(times), std::move(u), std::move(y), require_outputs);
}

}  // namespace greybox
