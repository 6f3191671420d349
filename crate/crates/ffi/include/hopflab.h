#ifndef HOPFLAB_H
#define HOPFLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HlStatus {
  HL_STATUS_OK = 0,
  HL_STATUS_NULL_POINTER = 1,
  HL_STATUS_INVALID_ARGUMENT = 2,
  HL_STATUS_INVALID_GRID = 3,
  HL_STATUS_LENGTH_MISMATCH = 4,
  HL_STATUS_NOT_CLOSED = 5,
  HL_STATUS_INADMISSIBLE = 6,
  HL_STATUS_PARSE = 7,
  HL_STATUS_NUMERICAL = 8,
  HL_STATUS_PANIC = 9,
} HlStatus;

// Terminal status of [`hl_flow`].
typedef enum HlFlowStatus {
  HL_FLOW_STATUS_CONVERGED = 0,
  HL_FLOW_STATUS_MAX_ITER = 1,
  HL_FLOW_STATUS_Q_ESCAPED = 2,
} HlFlowStatus;

// Eigenbases of `d*` on closed 2-forms up to a degree.
typedef struct HlBank HlBank;

// Quadrature grid on S³.
typedef struct HlGrid HlGrid;

// Map S³ → S² sampled on a grid.
typedef struct HlMap HlMap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty when none. The pointer
// stays valid until the next failing call on the same thread.
const char *hl_last_error(void);

// Library version as a static NUL-terminated string.
const char *hl_version(void);

// Builds a grid with `n_t` Gauss nodes and `n_ang` (even) nodes per angle.
//
// # Safety
// `out` must be valid for a pointer write.
enum HlStatus hl_grid_new(size_t n_t, size_t n_ang, struct HlGrid **out);

// # Safety
// `grid` must come from [`hl_grid_new`] and not be used afterwards.
void hl_grid_free(struct HlGrid *grid);

// Node count, or 0 for a null handle.
//
// # Safety
// `grid` must be null or a live handle.
size_t hl_grid_len(const struct HlGrid *grid);

// Copies the ambient coordinates, four per node, into `out[0..4·len]`.
//
// # Safety
// `out` must hold `out_len` doubles.
enum HlStatus hl_grid_ambient(const struct HlGrid *grid, double *out, size_t out_len);

// Quadrature `Σ fᵢwᵢ` of nodal values.
//
// # Safety
// `f` must hold `len` doubles; `out` must be writable.
enum HlStatus hl_grid_integrate(const struct HlGrid *grid,
                                const double *f,
                                size_t len,
                                double *out);

// Samples a built-in map such as `hopf`, `psi2-hopf` or `hopf-rot:7`.
//
// # Safety
// `spec` must be a NUL-terminated string; `out` must be writable.
enum HlStatus hl_map_from_spec(const struct HlGrid *grid, const char *spec, struct HlMap **out);

// Map from `3·n_nodes` nodal values; each triple must be a unit vector.
//
// # Safety
// `values` must hold `3·n_nodes` doubles; `out` must be writable.
enum HlStatus hl_map_from_values(const double *values, size_t n_nodes, struct HlMap **out);

// # Safety
// `map` must come from this library and not be used afterwards.
void hl_map_free(struct HlMap *map);

// Copies the nodal values, three per node, into `out[0..3·len]`.
//
// # Safety
// `out` must hold `out_len` doubles.
enum HlStatus hl_map_values(const struct HlMap *map, double *out, size_t out_len);

// Eigenbases for every `k ≤ k_max` and both signs.
//
// # Safety
// `out` must be writable.
enum HlStatus hl_bank_new(size_t k_max, struct HlBank **out);

// # Safety
// `bank` must come from [`hl_bank_new`] and not be used afterwards.
void hl_bank_free(struct HlBank *bank);

// Faddeev-Skyrme energy `∫|du|² + ρ⁻²∫¼|du∧du|²`.
//
// # Safety
// Handles must be live; `out` must be writable.
enum HlStatus hl_fs_energy(const struct HlMap *map,
                           const struct HlGrid *grid,
                           double rho,
                           double *out);

// Hopf invariant of `map` from the spectral expansion truncated at `k`.
//
// # Safety
// Handles must be live; `out` must be writable.
enum HlStatus hl_hopf_invariant(const struct HlMap *map,
                                const struct HlBank *bank,
                                const struct HlGrid *grid,
                                size_t k,
                                double *out);

// Runs the gradient flow with default settings at coupling `rho` and at
// most `max_iter` iterations. The terminal map is returned as a new handle.
//
// # Safety
// Handles must be live; every output pointer must be writable.
enum HlStatus hl_flow(const struct HlMap *map,
                      const struct HlBank *bank,
                      const struct HlGrid *grid,
                      double rho,
                      size_t max_iter,
                      struct HlMap **out_map,
                      double *out_energy,
                      enum HlFlowStatus *out_status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOPFLAB_H */
