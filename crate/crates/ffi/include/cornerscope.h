#ifndef CORNERSCOPE_H
#define CORNERSCOPE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_UTF8 = 2,
  CS_STATUS_IO = 3,
  CS_STATUS_JSON = 4,
  CS_STATUS_SHAPE = 5,
  CS_STATUS_INDEX = 6,
  CS_STATUS_CONFIG = 7,
  CS_STATUS_DOMAIN = 8,
  CS_STATUS_BUFFER_TOO_SMALL = 9,
  CS_STATUS_PANIC = 10,
} CsStatus;

/**
 * Boxed abstraction monitor handle.
 */
typedef struct CsMonitor CsMonitor;

/**
 * Feed-forward network handle.
 */
typedef struct CsNetwork CsNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last call on this thread if it failed, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *cs_last_error_message(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void cs_string_free(char *s);

/**
 * Library version as a static string.
 */
const char *cs_version(void);

/**
 * Parses a network from its JSON form.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum CsStatus cs_network_from_json(const char *json, struct CsNetwork **out);

/**
 * Reads a network JSON file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum CsStatus cs_network_load(const char *path, struct CsNetwork **out);

/**
 * # Safety
 * `net` must come from this library and not be freed twice.
 */
void cs_network_free(struct CsNetwork *net);

/**
 * Input width, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t cs_network_input_dim(const struct CsNetwork *net);

/**
 * Output width, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t cs_network_output_dim(const struct CsNetwork *net);

/**
 * Number of layers, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t cs_network_layer_count(const struct CsNetwork *net);

/**
 * Network output for one input, after the final activation.
 *
 * # Safety
 * `x` must hold `len` values and `out` `capacity` values.
 */
enum CsStatus cs_network_forward(const struct CsNetwork *net,
                                 const double *x,
                                 size_t len,
                                 double *out,
                                 size_t capacity,
                                 size_t *written);

/**
 * Activation vector after layer `layer` (1-based).
 *
 * # Safety
 * `x` must hold `len` values and `out` `capacity` values.
 */
enum CsStatus cs_network_feature_at(const struct CsNetwork *net,
                                    size_t layer,
                                    const double *x,
                                    size_t len,
                                    double *out,
                                    size_t capacity,
                                    size_t *written);

/**
 * Parses a monitor from its JSON form and validates its shape.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum CsStatus cs_monitor_from_json(const char *json, struct CsMonitor **out);

/**
 * Reads a monitor JSON file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum CsStatus cs_monitor_load(const char *path, struct CsMonitor **out);

/**
 * # Safety
 * `mon` must come from this library and not be freed twice.
 */
void cs_monitor_free(struct CsMonitor *mon);

/**
 * Feature dimension, or 0 for a null handle.
 *
 * # Safety
 * `mon` must be null or a live handle.
 */
size_t cs_monitor_dim(const struct CsMonitor *mon);

/**
 * Number of boxes, or 0 for a null handle.
 *
 * # Safety
 * `mon` must be null or a live handle.
 */
size_t cs_monitor_box_count(const struct CsMonitor *mon);

/**
 * Monitored layer (1-based), or 0 for a null handle.
 *
 * # Safety
 * `mon` must be null or a live handle.
 */
size_t cs_monitor_layer(const struct CsMonitor *mon);

/**
 * Writes the index of the first box containing `feature` to `box_index`,
 * or -1 when the monitor rejects it.
 *
 * # Safety
 * `feature` must hold `len` values; `box_index` must be writable.
 */
enum CsStatus cs_monitor_contains(const struct CsMonitor *mon,
                                  const double *feature,
                                  size_t len,
                                  int64_t *box_index);

/**
 * Prioritizes unsupported corners for `count` row-major feature vectors of
 * the monitor's dimension. The result is a JSON array of corner reports
 * written to `json_out`, to be released with [`cs_string_free`]. A `cap` of
 * 0 means no limit.
 *
 * # Safety
 * `features` must hold `count * cs_monitor_dim(mon)` values; `json_out`
 * must be writable.
 */
enum CsStatus cs_monitor_prioritize(const struct CsMonitor *mon,
                                    const double *features,
                                    size_t count,
                                    size_t delta_h,
                                    size_t cap,
                                    char **json_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORNERSCOPE_H */
