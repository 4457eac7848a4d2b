#include "greybox/greybox.h"

#include <cctype>
#include <cstdlib>
#include <memory>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <new>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "greybox/estimate.hpp"
#include "greybox/model_file.hpp"

using namespace greybox;

struct gb_model {
  CompiledModel model;
  std::string source;
  std::string header;
};

struct gb_dataset {
  Dataset data;
  std::string source;
};

struct gb_options {
  FitOptions fit;
};

struct gb_params {
  const CompiledModel* model;
  std::vector<std::optional<double>> values;
};

struct gb_fit {
  FitResult result;
};

namespace {

thread_local std::string last_error;

gb_status fail(gb_status s, const std::string& msg) {
  last_error = msg;
  return s;
}

template <class F>
gb_status guard(F&& f) {
  try {
    last_error.clear();
    return f();
  } catch (const expr::ParseError& e) {
    return fail(GB_ERR_MODEL, e.what());
  } catch (const ModelError& e) {
    return fail(GB_ERR_MODEL, e.what());
  } catch (const DataError& e) {
    return fail(GB_ERR_DATA, e.what());
  } catch (const NumericalError& e) {
    return fail(GB_ERR_NUMERICAL, e.what());
  } catch (const IoError& e) {
    return fail(GB_ERR_IO, e.what());
  } catch (const Error& e) {
    return fail(GB_ERR_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(GB_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(GB_ERR_INTERNAL, e.what());
  }
}

#define GB_REQUIRE(cond, what) \
  if (!(cond)) return fail(GB_ERR_ARGUMENT, what)

const FitOptions& options_of(const gb_options* o) {
  static const FitOptions defaults;
  return o ? o->fit : defaults;
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p) std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

std::vector<double> complete_values(const gb_params& p) {
  std::vector<double> v;
  std::string missing;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    if (p.values[i]) {
      v.push_back(*p.values[i]);
    } else {
      missing += (missing.empty() ? "" : ", ") + p.model->parameters()[i];
    }
  }
  if (!missing.empty()) throw Error("no value for parameter(s): " + missing);
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

gb_params* params_for(const CompiledModel& model) {
  auto* p = new gb_params{&model, {}};
  p->values.resize(model.num_parameters());
  return p;
}

void assign_from_fit(gb_params& p, const FitResult& fit) {
  const auto& names = p.model->parameters();
  if (fit.parameters.size() != names.size())
    throw Error("fit has " + std::to_string(fit.parameters.size()) + " parameters, model has " +
                std::to_string(names.size()));
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (fit.parameters[i].name != names[i])
      throw Error("fit parameter '" + fit.parameters[i].name + "' does not match model parameter '" +
                  names[i] + "'");
    p.values[i] = fit.parameters[i].estimate;
  }
}

}  // namespace

extern "C" {

const char* gb_last_error(void) { return last_error.c_str(); }

const char* gb_status_name(gb_status status) {
  switch (status) {
    case GB_OK: return "ok";
    case GB_ERR_ARGUMENT: return "invalid argument";
    case GB_ERR_MODEL: return "model error";
    case GB_ERR_DATA: return "data error";
    case GB_ERR_NUMERICAL: return "numerical error";
    case GB_ERR_IO: return "i/o error";
    case GB_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* gb_version(void) { return "1.0.0"; }

void gb_string_free(char* s) { std::free(s); }

gb_status gb_model_load_file(const char* path, gb_model** out) {
  GB_REQUIRE(path && out, "null argument");
  *out = nullptr;
  return guard([&] {
    auto m = std::make_unique<gb_model>(gb_model{compile(load_model_file(path)), path, {}});
    m->header = m->model.header();
    *out = m.release();
    return GB_OK;
  });
}

gb_status gb_model_load_string(const char* text, gb_model** out) {
  GB_REQUIRE(text && out, "null argument");
  *out = nullptr;
  return guard([&] {
    auto m = std::make_unique<gb_model>(gb_model{compile(parse_model(text)), "<string>", {}});
    m->header = m->model.header();
    *out = m.release();
    return GB_OK;
  });
}

void gb_model_free(gb_model* model) { delete model; }

const char* gb_model_header(const gb_model* m) { return m ? m->header.c_str() : ""; }
int gb_model_is_linear(const gb_model* m) { return m && m->model.is_linear() ? 1 : 0; }
size_t gb_model_num_states(const gb_model* m) { return m ? m->model.num_states() : 0; }
size_t gb_model_num_outputs(const gb_model* m) { return m ? m->model.num_outputs() : 0; }
size_t gb_model_num_inputs(const gb_model* m) { return m ? m->model.num_inputs() : 0; }
size_t gb_model_num_parameters(const gb_model* m) { return m ? m->model.num_parameters() : 0; }

const char* gb_model_parameter_name(const gb_model* m, size_t i) {
  if (!m || i >= m->model.num_parameters()) return nullptr;
  return m->model.parameters()[i].c_str();
}

size_t gb_model_num_warnings(const gb_model* m) { return m ? m->model.warnings().size() : 0; }

const char* gb_model_warning(const gb_model* m, size_t i) {
  if (!m || i >= m->model.warnings().size()) return nullptr;
  return m->model.warnings()[i].c_str();
}

gb_status gb_dataset_load_csv(const gb_model* model, const char* path, int require_outputs,
                              gb_dataset** out) {
  GB_REQUIRE(model && path && out, "null argument");
  *out = nullptr;
  return guard([&] {
    auto table = read_csv_file(path);
    *out = new gb_dataset{dataset_from_table(table, model->model, require_outputs != 0, path), path};
    return GB_OK;
  });
}

void gb_dataset_free(gb_dataset* d) { delete d; }
size_t gb_dataset_rows(const gb_dataset* d) { return d ? d->data.size() : 0; }
size_t gb_dataset_observations(const gb_dataset* d) { return d ? d->data.num_observations() : 0; }

gb_options* gb_options_new(void) { return new (std::nothrow) gb_options{}; }
void gb_options_free(gb_options* o) { delete o; }

gb_status gb_options_set_tolerances(gb_options* o, double abs_tol, double rel_tol) {
  GB_REQUIRE(o, "null options");
  GB_REQUIRE(abs_tol > 0 && rel_tol > 0 && std::isfinite(abs_tol) && std::isfinite(rel_tol),
             "tolerances must be positive and finite");
  o->fit.filter.abs_tol = abs_tol;
  o->fit.filter.rel_tol = rel_tol;
  return GB_OK;
}

gb_status gb_options_set_hold(gb_options* o, const char* hold) {
  GB_REQUIRE(o && hold, "null argument");
  if (std::strcmp(hold, "zoh") == 0)
    o->fit.filter.hold = InputHold::ZeroOrder;
  else if (std::strcmp(hold, "linear") == 0)
    o->fit.filter.hold = InputHold::Linear;
  else
    return fail(GB_ERR_ARGUMENT, std::string("unknown hold mode '") + hold + "' (expected zoh or linear)");
  return GB_OK;
}

gb_status gb_options_set_pi0(gb_options* o, double pi0) {
  GB_REQUIRE(o, "null options");
  GB_REQUIRE(pi0 > 0 && std::isfinite(pi0), "pi0 must be positive and finite");
  o->fit.filter.pi0 = pi0;
  return GB_OK;
}

gb_status gb_options_set_parallel(gb_options* o, int parallel) {
  GB_REQUIRE(o, "null options");
  o->fit.optimizer.parallel = parallel != 0;
  return GB_OK;
}

gb_status gb_options_set_max_iterations(gb_options* o, int n) {
  GB_REQUIRE(o, "null options");
  GB_REQUIRE(n >= 0, "max_iterations must be non-negative");
  o->fit.optimizer.max_iterations = n;
  return GB_OK;
}

gb_status gb_params_from_model(const gb_model* model, gb_params** out) {
  GB_REQUIRE(model && out, "null argument");
  *out = nullptr;
  return guard([&] {
    auto* p = params_for(model->model);
    for (std::size_t i = 0; i < p->values.size(); ++i)
      if (const auto& s = model->model.settings()[i]) p->values[i] = s->init;
    *out = p;
    return GB_OK;
  });
}

gb_status gb_params_from_fit(const gb_model* model, const gb_fit* fit, gb_params** out) {
  GB_REQUIRE(model && fit && out, "null argument");
  *out = nullptr;
  return guard([&] {
    std::unique_ptr<gb_params> p(params_for(model->model));
    assign_from_fit(*p, fit->result);
    *out = p.release();
    return GB_OK;
  });
}

gb_status gb_params_load_file(const gb_model* model, const char* path, gb_params** out) {
  GB_REQUIRE(model && path && out, "null argument");
  *out = nullptr;
  return guard([&] {
    const std::string text = read_file(path);
    std::unique_ptr<gb_params> p(params_for(model->model));
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
      assign_from_fit(*p, fit_from_json(text));
      *out = p.release();
      return GB_OK;
    }
    for (std::size_t i = 0; i < p->values.size(); ++i)
      if (const auto& s = model->model.settings()[i]) p->values[i] = s->init;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto where = std::string(path) + ":" + std::to_string(lineno) + ": ";
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error(where + "expected 'name = value'");
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      const std::string name = trim(line.substr(0, eq));
      const auto value = parse_number(trim(line.substr(eq + 1)));
      if (!value || !std::isfinite(*value)) throw Error(where + "invalid value for '" + name + "'");
      const auto idx = model->model.parameter_index(name);
      if (!idx) throw Error(where + "unknown parameter '" + name + "'");
      p->values[*idx] = *value;
    }
    *out = p.release();
    return GB_OK;
  });
}

void gb_params_free(gb_params* p) { delete p; }

gb_status gb_params_set(gb_params* p, const char* name, double value) {
  GB_REQUIRE(p && name, "null argument");
  GB_REQUIRE(std::isfinite(value), "parameter value must be finite");
  const auto idx = p->model->parameter_index(name);
  if (!idx) return fail(GB_ERR_ARGUMENT, std::string("unknown parameter '") + name + "'");
  p->values[*idx] = value;
  return GB_OK;
}

gb_status gb_params_get(const gb_params* p, const char* name, double* value) {
  GB_REQUIRE(p && name && value, "null argument");
  const auto idx = p->model->parameter_index(name);
  if (!idx) return fail(GB_ERR_ARGUMENT, std::string("unknown parameter '") + name + "'");
  if (!p->values[*idx]) return fail(GB_ERR_ARGUMENT, std::string("parameter '") + name + "' has no value");
  *value = *p->values[*idx];
  return GB_OK;
}

gb_status gb_params_check_complete(const gb_params* p) {
  GB_REQUIRE(p, "null params");
  return guard([&] {
    complete_values(*p);
    return GB_OK;
  });
}

gb_status gb_nll(const gb_model* model, const gb_dataset* data, const gb_options* opts,
                 const gb_params* params, double* out) {
  GB_REQUIRE(model && data && params && out, "null argument");
  GB_REQUIRE(params->model == &model->model, "parameters belong to a different model");
  return guard([&] {
    *out = negative_log_likelihood(model->model, complete_values(*params), data->data,
                                   options_of(opts).filter);
    return GB_OK;
  });
}

gb_status gb_write_predictions(const gb_model* model, const gb_dataset* data, const gb_options* opts,
                               const gb_params* params, const char* path) {
  GB_REQUIRE(model && data && params && path, "null argument");
  GB_REQUIRE(params->model == &model->model, "parameters belong to a different model");
  return guard([&] {
    const auto steps =
        predict_one_step(model->model, complete_values(*params), data->data, options_of(opts).filter);
    write_text_file(path, write_csv(prediction_table(model->model, data->data, steps)));
    return GB_OK;
  });
}

gb_status gb_write_simulations(const gb_model* model, const gb_dataset* data, const gb_options* opts,
                               const gb_params* params, int nsim, uint64_t seed, const char* dir) {
  GB_REQUIRE(model && data && params && dir, "null argument");
  GB_REQUIRE(params->model == &model->model, "parameters belong to a different model");
  GB_REQUIRE(nsim >= 1, "nsim must be at least 1");
  return guard([&] {
    SimulationOptions so;
    so.hold = options_of(opts).filter.hold;
    const auto paths =
        simulate_stochastic(model->model, complete_values(*params), data->data, nsim, seed, so);
    for (std::size_t i = 0; i < paths.size(); ++i) {
      const auto file = std::filesystem::path(dir) / ("sim_" + std::to_string(i + 1) + ".csv");
      write_text_file(file.string(), write_csv(realization_table(model->model, data->data, paths[i])));
    }
    return GB_OK;
  });
}

gb_status gb_fit_run(const gb_model* model, const gb_dataset* data, const gb_options* opts,
                     gb_fit** out) {
  GB_REQUIRE(model && data && out, "null argument");
  *out = nullptr;
  return guard([&] {
    auto f = std::make_unique<gb_fit>();
    f->result = fit(model->model, data->data, options_of(opts));
    f->result.model_source = model->source;
    f->result.data_source = data->source;
    *out = f.release();
    return GB_OK;
  });
}

gb_status gb_fit_load_json(const char* path, gb_fit** out) {
  GB_REQUIRE(path && out, "null argument");
  *out = nullptr;
  return guard([&] {
    auto f = std::make_unique<gb_fit>();
    f->result = fit_from_json(read_file(path));
    *out = f.release();
    return GB_OK;
  });
}

void gb_fit_free(gb_fit* f) { delete f; }
int gb_fit_converged(const gb_fit* f) { return f && f->result.converged ? 1 : 0; }
const char* gb_fit_status(const gb_fit* f) { return f ? f->result.status.c_str() : ""; }
int gb_fit_iterations(const gb_fit* f) { return f ? f->result.iterations : 0; }
double gb_fit_nll(const gb_fit* f) { return f ? f->result.nll : std::numeric_limits<double>::quiet_NaN(); }
size_t gb_fit_num_parameters(const gb_fit* f) { return f ? f->result.parameters.size() : 0; }

const char* gb_fit_parameter_name(const gb_fit* f, size_t i) {
  if (!f || i >= f->result.parameters.size()) return nullptr;
  return f->result.parameters[i].name.c_str();
}

gb_status gb_fit_estimate(const gb_fit* f, const char* name, double* estimate, double* std_error) {
  GB_REQUIRE(f && name, "null argument");
  const auto* p = f->result.find(name);
  if (!p) return fail(GB_ERR_ARGUMENT, std::string("unknown parameter '") + name + "'");
  if (estimate) *estimate = p->estimate;
  if (std_error) *std_error = p->std_error;
  return GB_OK;
}

size_t gb_fit_num_diagnostics(const gb_fit* f) { return f ? f->result.diagnostics.size() : 0; }

const char* gb_fit_diagnostic(const gb_fit* f, size_t i) {
  if (!f || i >= f->result.diagnostics.size()) return nullptr;
  return f->result.diagnostics[i].c_str();
}

char* gb_fit_summary(const gb_fit* f, int correlation, int extended) {
  if (!f) return nullptr;
  try {
    return dup_string(summarize(f->result, correlation != 0, extended != 0));
  } catch (const std::exception& e) {
    last_error = e.what();
    return nullptr;
  }
}

char* gb_fit_to_json(const gb_fit* f) {
  if (!f) return nullptr;
  try {
    return dup_string(fit_to_json(f->result));
  } catch (const std::exception& e) {
    last_error = e.what();
    return nullptr;
  }
}

gb_status gb_fit_write_json(const gb_fit* f, const char* path) {
  GB_REQUIRE(f && path, "null argument");
  return guard([&] {
    write_text_file(path, fit_to_json(f->result));
    return GB_OK;
  });
}

gb_status gb_write_profile(const gb_model* model, const gb_dataset* data, const gb_options* opts,
                           const gb_fit* f, const char* name, const char* grid, const char* path) {
  GB_REQUIRE(model && data && f && name && grid && path, "null argument");
  return guard([&] {
    const auto values = parse_grid(grid);
    const auto prof = profile_likelihood(model->model, data->data, f->result, name, values, options_of(opts));
    write_text_file(path, write_csv(profile_table(prof)));
    return GB_OK;
  });
}

}  // extern "C"
