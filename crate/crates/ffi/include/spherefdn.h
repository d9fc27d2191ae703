#ifndef SPHEREFDN_H
#define SPHEREFDN_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum SfdnStatus {
  SFDN_STATUS_OK = 0,
  SFDN_STATUS_NULL_POINTER = 1,
  SFDN_STATUS_INVALID_ARGUMENT = 2,
  SFDN_STATUS_DOMAIN = 3,
  SFDN_STATUS_NUMERIC = 4,
  SFDN_STATUS_DESIGN_FAILURE = 5,
  SFDN_STATUS_STABILITY = 6,
  SFDN_STATUS_CONFIG = 7,
  SFDN_STATUS_IO = 8,
  SFDN_STATUS_PANIC = 9,
} SfdnStatus;

typedef enum SfdnMatrixKind {
  SFDN_MATRIX_KIND_DIAGONAL = 0,
  SFDN_MATRIX_KIND_LAMBERTIAN = 1,
  SFDN_MATRIX_KIND_BLEND = 2,
} SfdnMatrixKind;

typedef struct SfdnDesign SfdnDesign;

typedef struct SfdnNetwork SfdnNetwork;

typedef struct SfdnRootTable SfdnRootTable;

// One channel of a sphere design. `residual` is NaN for channels that were
// not fitted.
typedef struct SfdnChannel {
  uint32_t order;
  size_t delay_samples;
  double pole_radius;
  double first_pole_angle;
  double pole_separation;
  size_t n_pole_pairs;
  double loop_gain;
  double residual;
  bool harmonic_fallback;
} SfdnChannel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or an empty string. The
// pointer stays valid until the next failing call on the same thread.
const char *sfdn_last_error(void);

// Library version as a static NUL-terminated string.
const char *sfdn_version(void);

// # Safety
// `out` must be null or point to writable memory for one `double`.
enum SfdnStatus sfdn_spherical_j(int32_t n, double x, double *out);

// # Safety
// `out` must be null or point to writable memory for one `double`.
enum SfdnStatus sfdn_spherical_j_prime(int32_t n, double x, double *out);

// # Safety
// `out` must be null or point to writable memory for one `double`.
enum SfdnStatus sfdn_speed_of_sound(double temperature_c, double *out);

// Resonance `s` (1-based) of order `n` in a sphere of radius `radius_m`.
//
// # Safety
// `out` must be null or point to writable memory for one `double`.
enum SfdnStatus sfdn_sphere_frequency(double radius_m,
                                      double temperature_c,
                                      int32_t n,
                                      size_t s,
                                      double *out);

// The first `count` roots of j'_n.
//
// # Safety
// `out` must be null or point to writable memory for one handle pointer.
enum SfdnStatus sfdn_roots_new(int32_t n, size_t count, struct SfdnRootTable **out);

// # Safety
// `table` must be null or a live handle from [`sfdn_roots_new`].
size_t sfdn_roots_len(const struct SfdnRootTable *table);

// Root `s` (1-based).
//
// # Safety
// `table` must be null or a live handle; `out` must be null or writable.
enum SfdnStatus sfdn_roots_get(const struct SfdnRootTable *table, size_t s, double *out);

// # Safety
// `table` must be null or a handle from [`sfdn_roots_new`] not yet freed.
void sfdn_roots_free(struct SfdnRootTable *table);

// Designs one loop per order `0..=max_order` for a sphere. `pole_pairs == 0`
// picks the radius-dependent default.
//
// # Safety
// `out` must be null or point to writable memory for one handle pointer.
enum SfdnStatus sfdn_design_sphere(double radius_m,
                                   double temperature_c,
                                   int32_t max_order,
                                   size_t pole_pairs,
                                   double pole_radius,
                                   double loop_gain,
                                   double sample_rate,
                                   struct SfdnDesign **out);

// # Safety
// `design` must be null or a live handle from [`sfdn_design_sphere`].
size_t sfdn_design_channel_count(const struct SfdnDesign *design);

// # Safety
// `design` must be null or a live handle; `out` must be null or writable.
enum SfdnStatus sfdn_design_channel(const struct SfdnDesign *design,
                                    size_t index,
                                    struct SfdnChannel *out);

// # Safety
// `design` must be null or a handle from [`sfdn_design_sphere`] not yet freed.
void sfdn_design_free(struct SfdnDesign *design);

// Network with one channel per designed order and unit input and output
// gains. `alpha` is only read for [`SfdnMatrixKind::Blend`].
//
// # Safety
// `design` must be null or a live handle; `out` must be null or writable.
enum SfdnStatus sfdn_network_from_design(const struct SfdnDesign *design,
                                         enum SfdnMatrixKind matrix,
                                         double alpha,
                                         struct SfdnNetwork **out);

// Builds the network described by a TOML project file.
//
// # Safety
// `path` must be null or a NUL-terminated string; `out` must be null or writable.
enum SfdnStatus sfdn_network_from_config(const char *path, struct SfdnNetwork **out);

// # Safety
// `net` must be null or a live network handle.
size_t sfdn_network_channel_count(const struct SfdnNetwork *net);

// # Safety
// `net` must be null or a live network handle.
double sfdn_network_sample_rate(const struct SfdnNetwork *net);

// Processes `len` samples. State carries over between calls, so a signal
// may be fed in blocks of any size. `input` and `output` may alias.
//
// # Safety
// `net` must be a live handle; `input` and `output` must each be null or
// valid for `len` doubles.
enum SfdnStatus sfdn_network_process(struct SfdnNetwork *net,
                                     const double *input,
                                     double *output,
                                     size_t len);

// Clears all delay lines and filter memories.
//
// # Safety
// `net` must be null or a live network handle.
enum SfdnStatus sfdn_network_reset(struct SfdnNetwork *net);

// Renders the network's impulse response and checks every theoretical
// resonance of the given sphere against its peaks. Does not touch the
// handle's running state.
//
// # Safety
// `net` must be a live handle; `passed` must be null or writable.
enum SfdnStatus sfdn_network_verify(const struct SfdnNetwork *net,
                                    double radius_m,
                                    double temperature_c,
                                    int32_t max_order,
                                    double tolerance_percent,
                                    bool *passed);

// # Safety
// `net` must be null or a network handle not yet freed.
void sfdn_network_free(struct SfdnNetwork *net);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPHEREFDN_H */
