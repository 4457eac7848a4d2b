#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <json.hpp>

#include "greybox/estimate.hpp"

namespace greybox {

namespace {

using json = nlohmann::ordered_json;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string printf_num(const char* fmt, double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  std::string s = buf;
  // no "-0.0000"
  if (s[0] == '-' && s.find_first_not_of("-0.e+", 0) == std::string::npos) s.erase(0, 1);
  return s;
}

std::string pad_left(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
}
std::string pad_right(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

std::string stars(double p) {
  if (std::isnan(p)) return "";
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  if (p < 0.1) return ".";
  return "";
}

std::string format_pvalue(double p) {
  if (std::isnan(p)) return "NA";
  if (p < 2.220446e-16) return "< 2.2e-16";
  if (p < 1e-4) return printf_num("%.2e", p);
  return printf_num("%#.4g", p);
}

struct Table {
  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> cells;  // per row
  std::vector<bool> left;
  std::vector<std::size_t> min_width;

  std::string render(const std::vector<std::string>& labels) const {
    std::size_t lw = 0;
    for (const auto& l : labels) lw = std::max(lw, l.size());
    std::vector<std::size_t> w(headers.size());
    for (std::size_t c = 0; c < headers.size(); ++c) {
      w[c] = std::max(headers[c].size(), c < min_width.size() ? min_width[c] : 0);
      for (const auto& row : cells) w[c] = std::max(w[c], row[c].size());
    }
    auto cell = [&](const std::string& s, std::size_t c) {
      return left[c] ? pad_right(s, w[c]) : pad_left(s, w[c]);
    };
    std::string out = std::string(lw, ' ');
    for (std::size_t c = 0; c < headers.size(); ++c) out += " " + cell(headers[c], c);
    out += '\n';
    for (std::size_t r = 0; r < cells.size(); ++r) {
      out += pad_right(labels[r], lw);
      for (std::size_t c = 0; c < headers.size(); ++c) out += " " + cell(cells[r][c], c);
      out += '\n';
    }
    return out;
  }
};

std::string correlation_block(const FitResult& fit) {
  const auto& names = fit.information_parameters;
  const auto m = names.size();
  if (m < 2) return "";
  Table t;
  for (std::size_t j = 0; j + 1 < m; ++j) {
    t.headers.push_back(names[j]);
    t.left.push_back(true);
  }
  std::vector<std::string> labels;
  for (std::size_t a = 1; a < m; ++a) {
    labels.push_back(names[a]);
    std::vector<std::string> row;
    for (std::size_t j = 0; j + 1 < m; ++j) {
      if (j < a) {
        const double v = fit.correlation.size() ? fit.correlation(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j)) : kNaN;
        row.push_back(printf_num("%.2f", v));
      } else {
        row.emplace_back();
      }
    }
    t.cells.push_back(std::move(row));
  }
  // column widths must cover the numbers, which render() already accounts for
  return "\nCorrelation of coefficients:\n" + t.render(labels);
}

json num(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double from_num(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

json matrix_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(num(m(i, k)));
    a.push_back(std::move(row));
  }
  return a;
}

Matrix matrix_from(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  Matrix m(rows, rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != rows) throw Error("fit JSON: matrix is not square");
    for (Eigen::Index k = 0; k < rows; ++k) m(i, k) = from_num(row.at(static_cast<std::size_t>(k)));
  }
  return m;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string summarize(const FitResult& fit, bool correlation, bool extended) {
  std::vector<std::string> labels;
  for (const auto& p : fit.parameters) labels.push_back(p.name);
  Table t;
  if (extended) {
    t.headers = {"Estimate", "Std. Error", "t value", "Pr(>|t|)", "dF/dPar", "dPen/dPar"};
    t.left.assign(6, false);
    for (const auto& p : fit.parameters) {
      t.cells.push_back({printf_num("%.4e", p.estimate), printf_num("%.4e", p.std_error),
                         printf_num("%.4e", p.t_value), printf_num("%.4e", p.p_value),
                         printf_num("%.4e", p.d_objective), printf_num("%.4f", p.d_penalty)});
    }
    // scientific columns share one width
    std::size_t common = 0;
    for (const auto& row : t.cells)
      for (std::size_t c = 0; c < 5; ++c) common = std::max(common, row[c].size());
    t.min_width.assign(5, common);
  } else {
    // common decimals so that the smallest standard error shows 5 digits
    double smallest = std::numeric_limits<double>::infinity();
    for (const auto& p : fit.parameters)
      if (std::isfinite(p.std_error) && p.std_error > 0) smallest = std::min(smallest, p.std_error);
    if (!std::isfinite(smallest)) {
      for (const auto& p : fit.parameters)
        if (p.estimate != 0.0) smallest = std::min(smallest, std::abs(p.estimate));
    }
    int decimals = 4;
    if (std::isfinite(smallest)) decimals = std::clamp(4 - static_cast<int>(std::floor(std::log10(smallest))), 0, 12);
    char fmt[16];
    std::snprintf(fmt, sizeof fmt, "%%.%df", decimals);
    t.headers = {"Estimate", "Std. Error", "t value", "Pr(>|t|)", ""};
    t.left = {false, false, false, false, true};
    for (const auto& p : fit.parameters) {
      t.cells.push_back({printf_num(fmt, p.estimate), printf_num(fmt, p.std_error),
                         printf_num("%.4f", p.t_value), format_pvalue(p.p_value), stars(p.p_value)});
    }
    // stars column is always three wide
    t.headers.back() = "   ";
  }
  std::string out = "Coefficients:\n" + t.render(labels);
  if (!extended) out += "---\nSignif. codes:  0 ‘***’ 0.001 ‘**’ 0.01 ‘*’ 0.05 ‘.’ 0.1 ‘ ’ 1\n";
  if (correlation) out += correlation_block(fit);
  return out;
}

std::string fit_to_json(const FitResult& fit) {
  json j;
  j["schema"] = "greybox-fit/1";
  j["model"] = {{"header", fit.model_header}, {"source", fit.model_source}};
  j["data"] = {{"source", fit.data_source}, {"observations", fit.num_observations}};
  j["converged"] = fit.converged;
  j["status"] = fit.status;
  j["iterations"] = fit.iterations;
  j["evaluations"] = fit.evaluations;
  j["nll"] = num(fit.nll);
  j["loglik"] = num(fit.loglik);
  j["penalty"] = num(fit.penalty);
  j["degrees_of_freedom"] = fit.degrees_of_freedom;
  json params = json::array();
  for (const auto& p : fit.parameters) {
    params.push_back({{"name", p.name},
                      {"estimate", num(p.estimate)},
                      {"fixed", p.fixed},
                      {"lower", optional_json(p.lower)},
                      {"upper", optional_json(p.upper)},
                      {"std_error", num(p.std_error)},
                      {"t_value", num(p.t_value)},
                      {"p_value", num(p.p_value)},
                      {"dF", num(p.d_objective)},
                      {"dPen", num(p.d_penalty)},
                      {"at_bound", p.at_bound}});
  }
  j["parameters"] = std::move(params);
  j["information_parameters"] = fit.information_parameters;
  j["information"] = matrix_json(fit.information);
  j["covariance"] = matrix_json(fit.covariance);
  j["correlation"] = matrix_json(fit.correlation);
  j["diagnostics"] = fit.diagnostics;
  return j.dump(2) + "\n";
}

FitResult fit_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("fit JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("schema", "") != "greybox-fit/1")
    throw Error("fit JSON: expected schema \"greybox-fit/1\"");
  try {
    FitResult f;
    f.model_header = j.at("model").value("header", "");
    f.model_source = j.at("model").value("source", "");
    f.data_source = j.at("data").value("source", "");
    f.num_observations = j.at("data").value("observations", std::size_t{0});
    f.converged = j.at("converged").get<bool>();
    f.status = j.at("status").get<std::string>();
    f.iterations = j.at("iterations").get<int>();
    f.evaluations = j.at("evaluations").get<int>();
    f.nll = from_num(j.at("nll"));
    f.loglik = from_num(j.at("loglik"));
    f.penalty = from_num(j.at("penalty"));
    f.degrees_of_freedom = j.at("degrees_of_freedom").get<long>();
    for (const auto& p : j.at("parameters")) {
      ParameterEstimate e;
      e.name = p.at("name").get<std::string>();
      e.estimate = from_num(p.at("estimate"));
      e.fixed = p.at("fixed").get<bool>();
      e.lower = optional_from(p.at("lower"));
      e.upper = optional_from(p.at("upper"));
      e.std_error = from_num(p.at("std_error"));
      e.t_value = from_num(p.at("t_value"));
      e.p_value = from_num(p.at("p_value"));
      e.d_objective = from_num(p.at("dF"));
      e.d_penalty = from_num(p.at("dPen"));
      e.at_bound = p.at("at_bound").get<bool>();
      if (!std::isfinite(e.estimate)) throw Error("fit JSON: estimate of '" + e.name + "' is not finite");
      f.parameters.push_back(std::move(e));
    }
    f.information_parameters = j.at("information_parameters").get<std::vector<std::string>>();
    f.information = matrix_from(j.at("information"));
    f.covariance = matrix_from(j.at("covariance"));
    f.correlation = matrix_from(j.at("correlation"));
    f.diagnostics = j.at("diagnostics").get<std::vector<std::string>>();
    return f;
  } catch (const json::exception& e) {
    throw Error(std::string("fit JSON: ") + e.what());
  }
}

CsvTable prediction_table(const CompiledModel& model, const Dataset& data,
                          const std::vector<StepRecord>& steps) {
  CsvTable t;
  t.header = {"k", "t"};
  for (const auto& o : model.outputs())
    for (const char* p : {"y_", "yhat_", "sd_yhat_", "eps_"}) t.header.push_back(p + o);
  for (const auto& s : model.states())
    for (const char* p : {"xpred_", "sd_xpred_"}) t.header.push_back(p + s);
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const auto& r = steps[k];
    std::vector<std::string> row{std::to_string(k), format_number(r.t)};
    for (std::size_t j = 0; j < model.num_outputs(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      row.push_back(format_number(data.outputs()(static_cast<Eigen::Index>(k), jj)));
      row.push_back(format_number(r.y_hat[jj]));
      row.push_back(format_number(std::sqrt(std::max(0.0, r.y_cov(jj, jj)))));
      row.push_back(format_number(r.innovation[jj]));
    }
    for (std::size_t i = 0; i < model.num_states(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      row.push_back(format_number(r.x_prior[ii]));
      row.push_back(format_number(std::sqrt(std::max(0.0, r.p_prior(ii, ii)))));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable realization_table(const CompiledModel& model, const Dataset& data, const Realization& r) {
  CsvTable t;
  t.header = {"t"};
  for (const auto& n : model.inputs()) t.header.push_back(n);
  for (const auto& n : model.outputs()) t.header.push_back(n);
  for (const auto& n : model.states()) t.header.push_back(n);
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    std::vector<std::string> row{format_number(data.time(k))};
    for (Eigen::Index j = 0; j < data.inputs().cols(); ++j) row.push_back(format_number(data.inputs()(kk, j)));
    for (Eigen::Index j = 0; j < r.outputs.cols(); ++j) row.push_back(format_number(r.outputs(kk, j)));
    for (Eigen::Index j = 0; j < r.states.cols(); ++j) row.push_back(format_number(r.states(kk, j)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable profile_table(const ProfileResult& p) {
  CsvTable t;
  t.header = {"value", "profile_loglik", "wald_loglik", "cutoff"};
  for (std::size_t i = 0; i < p.grid.size(); ++i)
    t.rows.push_back({format_number(p.grid[i]), format_number(p.profile_loglik[i]),
                      format_number(p.wald_loglik[i]), format_number(p.cutoff)});
  return t;
}

}  // namespace greybox
