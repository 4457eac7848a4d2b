#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "greybox/error.hpp"

namespace greybox {

class CompiledModel;

/// Raw CSV contents. Fields are kept verbatim so that parse/write round-trips.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text, const std::string& source = "<csv>");
std::string write_csv(const CsvTable& table);
CsvTable read_csv_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);

/// Shortest round-trip decimal form, '.' separator; empty for NaN.
std::string format_number(double v);
/// Locale-independent parse of a whole field; nullopt if not a number.
std::optional<double> parse_number(std::string_view s);

/// Time series for filtering: strictly increasing times, inputs never
/// missing, outputs NaN where missing.
class Dataset {
 public:
  Dataset(std::vector<double> times, Eigen::MatrixXd inputs, Eigen::MatrixXd outputs,
          bool require_observation = true);

  std::size_t size() const { return times_.size(); }
  double time(std::size_t k) const { return times_[k]; }
  const std::vector<double>& times() const { return times_; }
  const Eigen::MatrixXd& inputs() const { return inputs_; }
  const Eigen::MatrixXd& outputs() const { return outputs_; }
  Eigen::VectorXd input(std::size_t k) const { return inputs_.row(static_cast<Eigen::Index>(k)).transpose(); }
  bool missing(std::size_t k, std::size_t j) const;
  bool row_missing(std::size_t k) const;
  /// Count of non-missing scalar observations.
  std::size_t num_observations() const;

  /// Copy without row k.
  Dataset without_row(std::size_t k) const;

 private:
  std::vector<double> times_;
  Eigen::MatrixXd inputs_;
  Eigen::MatrixXd outputs_;
};

/// Map CSV columns onto a model: mandatory "t", inputs and outputs by name.
/// A declared input named "dummy" that is absent defaults to 1. State
/// columns are accepted and ignored; any other column is an error. With
/// require_outputs false, absent output columns are all missing.
Dataset dataset_from_table(const CsvTable& table, const CompiledModel& model,
                           bool require_outputs = true, const std::string& source = "<csv>");

}  // namespace greybox
