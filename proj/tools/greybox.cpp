// greybox command-line front end. Links only the C interface.
#include <cstdint>
#include <stdexcept>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "greybox/greybox.h"

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 1;
constexpr int kNotConverged = 2;

struct Config {
  std::string model;
  std::string data;
  std::string out = ".";
  std::uint64_t seed = 0;
  int nsim = 1;
  std::string param;
  std::string grid;
  double tol_abs = 1e-8;
  double tol_rel = 1e-8;
  std::string hold = "zoh";
  double pi0 = 1.0;
  bool extended = false;
  bool correlation = false;
  std::string fit_json;
  std::string params_file;
  std::vector<std::string> sets;
  int max_iterations = 500;
};

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Model = std::unique_ptr<gb_model, Deleter<gb_model, gb_model_free>>;
using Data = std::unique_ptr<gb_dataset, Deleter<gb_dataset, gb_dataset_free>>;
using Options = std::unique_ptr<gb_options, Deleter<gb_options, gb_options_free>>;
using Params = std::unique_ptr<gb_params, Deleter<gb_params, gb_params_free>>;
using Fit = std::unique_ptr<gb_fit, Deleter<gb_fit, gb_fit_free>>;

struct Failure {
  int code;
};

void check(gb_status s) {
  if (s == GB_OK) return;
  std::fprintf(stderr, "greybox: %s\n", gb_last_error());
  throw Failure{s == GB_ERR_NUMERICAL ? kNotConverged : kInputError};
}

[[noreturn]] void usage_error(const std::string& msg) {
  std::fprintf(stderr, "greybox: %s\n", msg.c_str());
  throw Failure{kInputError};
}

std::string out_path(const Config& c, const std::string& file) {
  std::error_code ec;
  std::filesystem::create_directories(c.out, ec);
  if (ec) usage_error("cannot create output directory '" + c.out + "': " + ec.message());
  return (std::filesystem::path(c.out) / file).string();
}

Model load_model(const Config& c) {
  gb_model* m = nullptr;
  check(gb_model_load_file(c.model.c_str(), &m));
  Model model(m);
  for (std::size_t i = 0; i < gb_model_num_warnings(m); ++i)
    std::fprintf(stderr, "warning: %s\n", gb_model_warning(m, i));
  return model;
}

Data load_data(const Config& c, const gb_model* m, bool require_outputs) {
  gb_dataset* d = nullptr;
  check(gb_dataset_load_csv(m, c.data.c_str(), require_outputs ? 1 : 0, &d));
  return Data(d);
}

Options make_options(const Config& c) {
  Options o(gb_options_new());
  if (!o) usage_error("out of memory");
  check(gb_options_set_tolerances(o.get(), c.tol_abs, c.tol_rel));
  check(gb_options_set_hold(o.get(), c.hold.c_str()));
  check(gb_options_set_pi0(o.get(), c.pi0));
  check(gb_options_set_max_iterations(o.get(), c.max_iterations));
  return o;
}

Fit load_fit(const Config& c) {
  gb_fit* f = nullptr;
  check(gb_fit_load_json(c.fit_json.c_str(), &f));
  return Fit(f);
}

Params resolve_params(const Config& c, const gb_model* m) {
  gb_params* p = nullptr;
  if (!c.fit_json.empty() && !c.params_file.empty()) usage_error("--fit and --params are mutually exclusive");
  if (!c.fit_json.empty()) {
    Fit f = load_fit(c);
    check(gb_params_from_fit(m, f.get(), &p));
  } else if (!c.params_file.empty()) {
    check(gb_params_load_file(m, c.params_file.c_str(), &p));
  } else {
    check(gb_params_from_model(m, &p));
  }
  Params params(p);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) usage_error("--set expects name=value, got '" + s + "'");
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(s.substr(eq + 1), &used);
      if (used != s.size() - eq - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      usage_error("--set value in '" + s + "' is not a number");
    }
    check(gb_params_set(params.get(), s.substr(0, eq).c_str(), v));
  }
  check(gb_params_check_complete(params.get()));
  return params;
}

void print_fit(const gb_fit* f, const gb_model* m, const Config& c, const std::string& summary_path) {
  char* text = gb_fit_summary(f, c.correlation ? 1 : 0, c.extended ? 1 : 0);
  if (!text) check(GB_ERR_INTERNAL);
  std::string summary = text;
  gb_string_free(text);
  std::printf("%s\n%s", gb_model_header(m), summary.c_str());
  for (std::size_t i = 0; i < gb_fit_num_diagnostics(f); ++i)
    std::fprintf(stderr, "note: %s\n", gb_fit_diagnostic(f, i));

  std::FILE* fp = std::fopen(summary_path.c_str(), "wb");
  if (!fp) usage_error("cannot write '" + summary_path + "'");
  std::fprintf(fp, "%s\n%s", gb_model_header(m), summary.c_str());
  std::fclose(fp);
}

int cmd_fit(const Config& c) {
  Model m = load_model(c);
  Data d = load_data(c, m.get(), true);
  Options o = make_options(c);
  gb_fit* raw = nullptr;
  check(gb_fit_run(m.get(), d.get(), o.get(), &raw));
  Fit f(raw);
  check(gb_fit_write_json(f.get(), out_path(c, "fit.json").c_str()));
  print_fit(f.get(), m.get(), c, out_path(c, "summary.txt"));
  if (!gb_fit_converged(f.get())) {
    std::fprintf(stderr, "greybox: optimizer did not converge (%s)\n", gb_fit_status(f.get()));
    return kNotConverged;
  }
  return kOk;
}

int cmd_predict(const Config& c) {
  Model m = load_model(c);
  Data d = load_data(c, m.get(), false);
  Options o = make_options(c);
  Params p = resolve_params(c, m.get());
  const auto path = out_path(c, "predict.csv");
  check(gb_write_predictions(m.get(), d.get(), o.get(), p.get(), path.c_str()));
  std::printf("wrote %s\n", path.c_str());
  return kOk;
}

int cmd_simulate(const Config& c, bool seed_given) {
  if (!seed_given) usage_error("simulate requires --seed");
  Model m = load_model(c);
  Data d = load_data(c, m.get(), false);
  Options o = make_options(c);
  Params p = resolve_params(c, m.get());
  out_path(c, "");
  check(gb_write_simulations(m.get(), d.get(), o.get(), p.get(), c.nsim, c.seed, c.out.c_str()));
  std::printf("wrote %d realization(s) to %s\n", c.nsim, c.out.c_str());
  return kOk;
}

int cmd_profile(const Config& c) {
  if (c.param.empty()) usage_error("profile requires --param");
  if (c.grid.empty()) usage_error("profile requires --grid from:to:count");
  Model m = load_model(c);
  Data d = load_data(c, m.get(), true);
  Options o = make_options(c);
  Fit f;
  if (!c.fit_json.empty()) {
    f = load_fit(c);
  } else {
    gb_fit* raw = nullptr;
    check(gb_fit_run(m.get(), d.get(), o.get(), &raw));
    f.reset(raw);
    if (!gb_fit_converged(f.get())) {
      std::fprintf(stderr, "greybox: optimizer did not converge (%s)\n", gb_fit_status(f.get()));
      return kNotConverged;
    }
  }
  const auto path = out_path(c, "profile_" + c.param + ".csv");
  check(gb_write_profile(m.get(), d.get(), o.get(), f.get(), c.param.c_str(), c.grid.c_str(), path.c_str()));
  std::printf("wrote %s\n", path.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grey-box modelling with stochastic differential equations"};
  app.require_subcommand(1, 1);
  Config cfg;

  auto common = [&](CLI::App* sub, bool needs_data = true) {
    sub->add_option("--model", cfg.model, "Model file")->required()->check(CLI::ExistingFile);
    auto* data = sub->add_option("--data", cfg.data, "CSV data file")->check(CLI::ExistingFile);
    if (needs_data) data->required();
    sub->add_option("--out", cfg.out, "Output directory");
    sub->add_option("--tol-abs", cfg.tol_abs, "Integrator absolute tolerance");
    sub->add_option("--tol-rel", cfg.tol_rel, "Integrator relative tolerance");
    sub->add_option("--hold", cfg.hold, "Input interpolation between samples")
        ->check(CLI::IsMember({"zoh", "linear"}));
    sub->add_option("--pi0", cfg.pi0, "Initial covariance scaling");
  };
  auto param_sources = [&](CLI::App* sub) {
    sub->add_option("--fit", cfg.fit_json, "Parameters from a fit.json")->check(CLI::ExistingFile);
    sub->add_option("--params", cfg.params_file, "Parameter file (name = value lines)")
        ->check(CLI::ExistingFile);
    sub->add_option("--set", cfg.sets, "Override a parameter, name=value");
  };

  auto* fit = app.add_subcommand("fit", "Maximum-likelihood estimation");
  common(fit);
  fit->add_flag("--extended", cfg.extended, "Add objective and penalty gradients");
  fit->add_flag("--correlation", cfg.correlation, "Print the correlation of estimates");
  fit->add_option("--max-iter", cfg.max_iterations, "Optimizer iteration limit");

  auto* predict = app.add_subcommand("predict", "One-step predictions");
  common(predict);
  param_sources(predict);

  auto* simulate = app.add_subcommand("simulate", "Stochastic simulation");
  common(simulate);
  param_sources(simulate);
  auto* seed_opt = simulate->add_option("--seed", cfg.seed, "Random seed");
  simulate->add_option("--nsim", cfg.nsim, "Number of realizations")->check(CLI::PositiveNumber);

  auto* profile = app.add_subcommand("profile", "Profile likelihood");
  common(profile);
  profile->add_option("--param", cfg.param, "Parameter to profile");
  profile->add_option("--grid", cfg.grid, "Grid from:to:count");
  profile->add_option("--fit", cfg.fit_json, "Use this fit instead of refitting")->check(CLI::ExistingFile);
  profile->add_option("--max-iter", cfg.max_iterations, "Optimizer iteration limit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }

  try {
    if (fit->parsed()) return cmd_fit(cfg);
    if (predict->parsed()) return cmd_predict(cfg);
    if (simulate->parsed()) return cmd_simulate(cfg, seed_opt->count() > 0);
    if (profile->parsed()) return cmd_profile(cfg);
  } catch (const Failure& f) {
    return f.code;
  }
  return kInputError;
}
