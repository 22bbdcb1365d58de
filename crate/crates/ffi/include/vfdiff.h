#ifndef VFDIFF_H
#define VFDIFF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VfStatus {
  VF_STATUS_OK = 0,
  VF_STATUS_NULL_POINTER = 1,
  VF_STATUS_INVALID_ARGUMENT = 2,
  VF_STATUS_HYPOTHESIS_VIOLATED = 3,
  VF_STATUS_SOLVER_FAILED = 4,
  VF_STATUS_TRANSPORT_FAILED = 5,
  VF_STATUS_OUT_OF_RANGE = 6,
  VF_STATUS_PANIC = 7,
} VfStatus;

typedef enum VfBoundary {
  VF_BOUNDARY_WALL = 0,
  VF_BOUNDARY_INFLOW = 1,
  VF_BOUNDARY_OUTFLOW = 2,
} VfBoundary;

typedef struct VfGrid VfGrid;

typedef struct VfSolution VfSolution;

/**
 * Spatially uniform coefficients of the reaction problem. A mobility
 * scale of 0 switches the drift off. With `strict` unset the positivity
 * lower bounds are not enforced (box and step checks still apply).
 */
typedef struct VfP1Params {
  double alpha;
  double beta;
  double alpha0;
  double beta0;
  double mobility_scale;
  bool strict;
} VfP1Params;

/**
 * Spatially uniform coefficients of the boundary-driven problem. A gate
 * exponent of 1 is the linear gate. `strict` as in [`VfP1Params`].
 */
typedef struct VfP2Params {
  double a;
  double b;
  double a0;
  double b0;
  double mobility_scale;
  double gate_exponent;
  bool strict;
} VfP2Params;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *vf_last_error_message(void);

/**
 * Uniform grid of `cells` cells on `[0, length]`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum VfStatus vf_grid_new_1d(size_t cells,
                             double length,
                             enum VfBoundary left,
                             enum VfBoundary right,
                             struct VfGrid **out);

/**
 * Uniform `nx` by `ny` grid on `[0, lx] x [0, ly]`, one tag per edge.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum VfStatus vf_grid_new_2d(size_t nx,
                             size_t ny,
                             double lx,
                             double ly,
                             enum VfBoundary left,
                             enum VfBoundary right,
                             enum VfBoundary bottom,
                             enum VfBoundary top,
                             struct VfGrid **out);

/**
 * # Safety
 * `grid` must come from a `vf_grid_new_*` call and not be freed twice.
 */
void vf_grid_free(struct VfGrid *grid);

/**
 * Number of cells, or 0 for a null grid.
 *
 * # Safety
 * `grid` must be null or a live grid handle.
 */
size_t vf_grid_num_cells(const struct VfGrid *grid);

/**
 * Solves the reaction problem with uniform coefficients. `potential`
 * (nullable, zero when null) and `u0` hold one value per cell.
 *
 * # Safety
 * Pointers must be valid for `vf_grid_num_cells(grid)` values; `out` must
 * be a valid pointer.
 */
enum VfStatus vf_solve_p1(const struct VfGrid *grid,
                          const struct VfP1Params *params,
                          const double *potential,
                          const double *u0,
                          double t_final,
                          size_t steps,
                          struct VfSolution **out);

/**
 * Solves the boundary-driven problem with uniform coefficients.
 *
 * # Safety
 * As for [`vf_solve_p1`].
 */
enum VfStatus vf_solve_p2(const struct VfGrid *grid,
                          const struct VfP2Params *params,
                          const double *potential,
                          const double *u0,
                          double t_final,
                          size_t steps,
                          struct VfSolution **out);

/**
 * # Safety
 * `sol` must come from a solve call and not be freed twice.
 */
void vf_solution_free(struct VfSolution *sol);

/**
 * Number of stored time levels (steps + 1), or 0 for a null handle.
 *
 * # Safety
 * `sol` must be null or a live solution handle.
 */
size_t vf_solution_num_levels(const struct VfSolution *sol);

/**
 * Copies time level `k` into `buf`, which holds `len` values.
 *
 * # Safety
 * `sol` must be a live handle and `buf` valid for `len` writes.
 */
enum VfStatus vf_solution_level(const struct VfSolution *sol, size_t k, double *buf, size_t len);

/**
 * Total mass at time level `k`.
 *
 * # Safety
 * `sol` must be a live handle and `out` a valid pointer.
 */
enum VfStatus vf_solution_mass(const struct VfSolution *sol, size_t k, double *out);

/**
 * Order-`r` Wasserstein distance between two weighted point sets on the line.
 *
 * # Safety
 * `x`, `wx` must be valid for `n` reads, `y`, `wy` for `m`; `out` must be valid.
 */
enum VfStatus vf_wasserstein_1d(const double *x,
                                const double *wx,
                                size_t n,
                                const double *y,
                                const double *wy,
                                size_t m,
                                double r,
                                double *out);

/**
 * Exact optimal transport between weights `p` (length `m`) and `q`
 * (length `n`) for the row-major `m x n` cost matrix, already raised to the
 * power `r`. Writes `(optimal cost)^(1/r)` to `out` and, when `plan` is not
 * null, the optimal coupling in row-major order.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum VfStatus vf_wasserstein_discrete(const double *p,
                                      size_t m,
                                      const double *q,
                                      size_t n,
                                      const double *cost,
                                      double r,
                                      double *out,
                                      double *plan);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VFDIFF_H */
