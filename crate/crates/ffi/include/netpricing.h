#ifndef NETPRICING_H
#define NETPRICING_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Matrices held by an estimate handle.
 */
typedef enum NpMatrix {
  /*
   Step 1 estimate Ŵ.
   */
  NP_MATRIX_W_HAT = 0,
  /*
   Debiased estimate W̌.
   */
  NP_MATRIX_W_CHECK = 1,
  /*
   Entry thresholds μ.
   */
  NP_MATRIX_MU = 2,
  /*
   Thresholded estimate W̌^μ.
   */
  NP_MATRIX_W_CHECK_MU = 3,
  /*
   Entry standard errors σ̂.
   */
  NP_MATRIX_SIGMA_HAT = 4,
} NpMatrix;

/*
 Status codes returned by every fallible function.
 */
typedef enum NpStatus {
  NP_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  NP_STATUS_NULL_POINTER = 1,
  /*
   Bad configuration, shapes or values; also unreadable input files.
   */
  NP_STATUS_INVALID_ARGUMENT = 2,
  /*
   The model assumptions do not hold for the given data.
   */
  NP_STATUS_MODEL_VIOLATION = 3,
  /*
   Singular matrix, non-convergence or another numerical failure.
   */
  NP_STATUS_NUMERIC = 4,
  /*
   An output buffer has the wrong length.
   */
  NP_STATUS_BUFFER_SIZE = 5,
  /*
   A Rust panic was caught at the boundary.
   */
  NP_STATUS_PANIC = 6,
} NpStatus;

/*
 Intercept vectors held by an estimate handle.
 */
typedef enum NpVector {
  NP_VECTOR_V_HAT = 0,
  NP_VECTOR_V_CHECK = 1,
} NpVector;

typedef struct NpEstimate NpEstimate;

typedef struct NpNetwork NpNetwork;

typedef struct NpPanel NpPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer is
 valid until the next failing call on the same thread.
 */
const char *np_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *np_version(void);

/*
 Release a string returned by this library.

 # Safety
 `s` must come from this library and not be freed twice.
 */
void np_string_free(char *s);

/*
 Generate a network from a generator description such as
 `{"family":"banded","n_nodes":20,"latent_fraction":0.5,"b_value":1.0,"a_value":2.0,"p_bar":1.5,"bandwidth":2,"weight_scale":1.0}`.

 # Safety
 `spec_json` must be a NUL-terminated string and `out` writable.
 */
enum NpStatus np_network_generate(const char *spec_json,
                                  uint64_t seed,
                                  struct NpNetwork **out);

/*
 Load a network from a JSON file written by `netpricing generate`.

 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum NpStatus np_network_read(const char *path, struct NpNetwork **out);

/*
 Parse a network from a JSON string.

 # Safety
 `json` must be a NUL-terminated string and `out` writable.
 */
enum NpStatus np_network_from_json(const char *json, struct NpNetwork **out);

/*
 Serialize a network to JSON. Release the result with [`np_string_free`].

 # Safety
 `net` must be a live handle and `out` writable.
 */
enum NpStatus np_network_to_json(const struct NpNetwork *net, char **out);

/*
 # Safety
 `net` must be null or a handle not yet freed.
 */
void np_network_free(struct NpNetwork *net);

/*
 Number of nodes and of observable nodes.

 # Safety
 `net` must be a live handle; the output pointers writable.
 */
enum NpStatus np_network_size(const struct NpNetwork *net, size_t *n_nodes, size_t *n_observable);

/*
 Revenue-maximizing observable prices under the true network, written to
 `prices` (length `|V_O|`), and the expected revenue at them.

 # Safety
 `net` must be a live handle, `prices` valid for `len` writes and
 `revenue` null or writable.
 */
enum NpStatus np_benchmark_prices(const struct NpNetwork *net,
                                  double *prices,
                                  size_t len,
                                  double *revenue);

/*
 Relative revenue shortfall of `prices` against the benchmark, under the
 true network.

 # Safety
 `net` must be a live handle, `prices` valid for `len` reads, `gap` writable.
 */
enum NpStatus np_revenue_gap(const struct NpNetwork *net,
                             const double *prices,
                             size_t len,
                             double *gap);

/*
 Simulate `n` periods. `sampler_json` (e.g. `{"kind":"uniform","low":0.2,"high":1.0}`)
 and `shocks_json` (e.g. `{"family":"gaussian_truncated","sigma":0.15}`)
 may be null for the defaults.

 # Safety
 `net` must be a live handle, string arguments null or NUL-terminated,
 `out` writable.
 */
enum NpStatus np_simulate(const struct NpNetwork *net,
                          size_t n,
                          const char *sampler_json,
                          const char *shocks_json,
                          uint64_t seed,
                          struct NpPanel **out);

/*
 Build a panel from caller data: `ids` has `q` entries, `prices` and
 `consumption` are `n × q` row-major.

 # Safety
 Buffers must be valid for the stated lengths and `out` writable.
 */
enum NpStatus np_panel_new(const size_t *ids,
                           size_t q,
                           size_t n,
                           const double *prices,
                           const double *consumption,
                           struct NpPanel **out);

/*
 Load a panel from a JSON file written by `netpricing simulate`.

 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum NpStatus np_panel_read(const char *path, struct NpPanel **out);

/*
 Panel length and number of observable nodes.

 # Safety
 `panel` must be a live handle; the output pointers writable.
 */
enum NpStatus np_panel_size(const struct NpPanel *panel, size_t *n, size_t *q);

/*
 # Safety
 `panel` must be null or a handle not yet freed.
 */
void np_panel_free(struct NpPanel *panel);

/*
 Run the estimator. `options_json` (e.g.
 `{"threshold_mode":{"mode":"bootstrap","alpha":0.05,"draws":1000},"seed":3}`)
 may be null for the defaults.

 # Safety
 `panel` must be a live handle, `options_json` null or NUL-terminated,
 `out` writable.
 */
enum NpStatus np_estimate(const struct NpPanel *panel,
                          const char *options_json,
                          struct NpEstimate **out);

/*
 Side length `q` of the estimated matrices.

 # Safety
 `est` must be a live handle and `q` writable.
 */
enum NpStatus np_estimate_dim(const struct NpEstimate *est, size_t *q);

/*
 Copy one `q × q` matrix, row-major, into `buf` (length `q²`).

 # Safety
 `est` must be a live handle and `buf` valid for `len` writes.
 */
enum NpStatus np_estimate_matrix(const struct NpEstimate *est,
                                 enum NpMatrix which,
                                 double *buf,
                                 size_t len);

/*
 Copy an intercept vector into `buf` (length `q`).

 # Safety
 `est` must be a live handle and `buf` valid for `len` writes.
 */
enum NpStatus np_estimate_vector(const struct NpEstimate *est,
                                 enum NpVector which,
                                 double *buf,
                                 size_t len);

/*
 Prices maximizing the plug-in revenue under the thresholded estimate,
 within `[0, p_bar]`.

 # Safety
 `est` must be a live handle, `prices` valid for `len` writes.
 */
enum NpStatus np_estimate_prices(const struct NpEstimate *est,
                                 double p_bar,
                                 double *prices,
                                 size_t len);

/*
 Serialize the estimate to JSON. Release the result with [`np_string_free`].

 # Safety
 `est` must be a live handle and `out` writable.
 */
enum NpStatus np_estimate_to_json(const struct NpEstimate *est, char **out);

/*
 # Safety
 `est` must be null or a handle not yet freed.
 */
void np_estimate_free(struct NpEstimate *est);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NETPRICING_H */
