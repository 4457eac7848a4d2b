/* C interface to the greybox estimation library. */
#ifndef GREYBOX_H
#define GREYBOX_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(GREYBOX_BUILDING)
#define GB_API __declspec(dllexport)
#else
#define GB_API __declspec(dllimport)
#endif
#else
#define GB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gb_status {
  GB_OK = 0,
  GB_ERR_ARGUMENT = 1,  /* bad argument or option value */
  GB_ERR_MODEL = 2,     /* model text/file invalid */
  GB_ERR_DATA = 3,      /* dataset invalid or inconsistent with the model */
  GB_ERR_NUMERICAL = 4, /* filter or optimizer failure */
  GB_ERR_IO = 5,
  GB_ERR_INTERNAL = 6
} gb_status;

typedef struct gb_model gb_model;
typedef struct gb_dataset gb_dataset;
typedef struct gb_options gb_options;
typedef struct gb_params gb_params;
typedef struct gb_fit gb_fit;

/* Message for the last failing call on this thread; never NULL. */
GB_API const char* gb_last_error(void);
GB_API const char* gb_status_name(gb_status status);
GB_API const char* gb_version(void);

/* Strings returned as char* are owned by the caller. */
GB_API void gb_string_free(char* s);

/* Models. Borrowed strings stay valid for the handle's lifetime. */
GB_API gb_status gb_model_load_file(const char* path, gb_model** out);
GB_API gb_status gb_model_load_string(const char* text, gb_model** out);
GB_API void gb_model_free(gb_model* model);
GB_API const char* gb_model_header(const gb_model* model);
GB_API int gb_model_is_linear(const gb_model* model);
GB_API size_t gb_model_num_states(const gb_model* model);
GB_API size_t gb_model_num_outputs(const gb_model* model);
GB_API size_t gb_model_num_inputs(const gb_model* model);
GB_API size_t gb_model_num_parameters(const gb_model* model);
GB_API const char* gb_model_parameter_name(const gb_model* model, size_t index);
GB_API size_t gb_model_num_warnings(const gb_model* model);
GB_API const char* gb_model_warning(const gb_model* model, size_t index);

/* Datasets. With require_outputs = 0, output columns may be absent (as for
   simulation inputs). */
GB_API gb_status gb_dataset_load_csv(const gb_model* model, const char* path, int require_outputs,
                                     gb_dataset** out);
GB_API void gb_dataset_free(gb_dataset* data);
GB_API size_t gb_dataset_rows(const gb_dataset* data);
GB_API size_t gb_dataset_observations(const gb_dataset* data);

/* Options. A NULL gb_options* means defaults everywhere. */
GB_API gb_options* gb_options_new(void);
GB_API void gb_options_free(gb_options* opts);
GB_API gb_status gb_options_set_tolerances(gb_options* opts, double abs_tol, double rel_tol);
/* hold: "zoh" or "linear" */
GB_API gb_status gb_options_set_hold(gb_options* opts, const char* hold);
GB_API gb_status gb_options_set_pi0(gb_options* opts, double pi0);
GB_API gb_status gb_options_set_parallel(gb_options* opts, int parallel);
GB_API gb_status gb_options_set_max_iterations(gb_options* opts, int max_iterations);

/* Parameter vectors bound to a model. */
GB_API gb_status gb_params_from_model(const gb_model* model, gb_params** out);
GB_API gb_status gb_params_from_fit(const gb_model* model, const gb_fit* fit, gb_params** out);
/* "name = value" lines ('#' comments) over the model's init values, or a fit
   JSON document. */
GB_API gb_status gb_params_load_file(const gb_model* model, const char* path, gb_params** out);
GB_API void gb_params_free(gb_params* params);
GB_API gb_status gb_params_set(gb_params* params, const char* name, double value);
GB_API gb_status gb_params_get(const gb_params* params, const char* name, double* value);
/* GB_ERR_ARGUMENT naming every parameter without a value. */
GB_API gb_status gb_params_check_complete(const gb_params* params);

/* Filtering and simulation. */
GB_API gb_status gb_nll(const gb_model* model, const gb_dataset* data, const gb_options* opts,
                        const gb_params* params, double* out);
GB_API gb_status gb_write_predictions(const gb_model* model, const gb_dataset* data,
                                      const gb_options* opts, const gb_params* params,
                                      const char* path);
/* Writes <dir>/sim_1.csv .. <dir>/sim_<nsim>.csv. */
GB_API gb_status gb_write_simulations(const gb_model* model, const gb_dataset* data,
                                      const gb_options* opts, const gb_params* params, int nsim,
                                      uint64_t seed, const char* dir);

/* Estimation. A fit that did not converge still returns GB_OK; query
   gb_fit_converged. */
GB_API gb_status gb_fit_run(const gb_model* model, const gb_dataset* data, const gb_options* opts,
                            gb_fit** out);
GB_API gb_status gb_fit_load_json(const char* path, gb_fit** out);
GB_API void gb_fit_free(gb_fit* fit);
GB_API int gb_fit_converged(const gb_fit* fit);
GB_API const char* gb_fit_status(const gb_fit* fit);
GB_API int gb_fit_iterations(const gb_fit* fit);
GB_API double gb_fit_nll(const gb_fit* fit);
GB_API size_t gb_fit_num_parameters(const gb_fit* fit);
GB_API const char* gb_fit_parameter_name(const gb_fit* fit, size_t index);
/* NaN standard error when unavailable. */
GB_API gb_status gb_fit_estimate(const gb_fit* fit, const char* name, double* estimate,
                                 double* std_error);
GB_API size_t gb_fit_num_diagnostics(const gb_fit* fit);
GB_API const char* gb_fit_diagnostic(const gb_fit* fit, size_t index);
GB_API char* gb_fit_summary(const gb_fit* fit, int correlation, int extended);
GB_API char* gb_fit_to_json(const gb_fit* fit);
GB_API gb_status gb_fit_write_json(const gb_fit* fit, const char* path);

/* Profile likelihood over grid "from:to:count", written as CSV. */
GB_API gb_status gb_write_profile(const gb_model* model, const gb_dataset* data,
                                  const gb_options* opts, const gb_fit* fit, const char* name,
                                  const char* grid, const char* path);

#ifdef __cplusplus
}
#endif

#endif
