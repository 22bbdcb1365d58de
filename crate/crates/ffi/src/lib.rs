//! C interface to the vfdiff solvers and exact transport.
//!
//! Every function returns a [`VfStatus`]; on failure the message is kept per
//! thread and can be read with [`vf_last_error_message`]. Handles are opaque
//! and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use vfdiff::grid::{BoundarySegment, BoundaryTag, Grid, Side, TimeGrid};
use vfdiff::solver::{
    solve_p1, solve_p2, GateFunction, MobilityFunction, ParamFieldP1, ParamFieldP2, SolutionField, SolverError, SolverOptions,
    SpaceTimeField,
};
use vfdiff::stochastic::EmpiricalDistribution;
use vfdiff::transport::{wasserstein_1d, wasserstein_discrete};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    HypothesisViolated = 3,
    SolverFailed = 4,
    TransportFailed = 5,
    OutOfRange = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VfBoundary {
    Wall = 0,
    Inflow = 1,
    Outflow = 2,
}

impl From<VfBoundary> for BoundaryTag {
    fn from(b: VfBoundary) -> Self {
        match b {
            VfBoundary::Wall => BoundaryTag::Wall,
            VfBoundary::Inflow => BoundaryTag::Inflow,
            VfBoundary::Outflow => BoundaryTag::Outflow,
        }
    }
}

/// Spatially uniform coefficients of the reaction problem. A mobility
/// scale of 0 switches the drift off. With `strict` unset the positivity
/// lower bounds are not enforced (box and step checks still apply).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VfP1Params {
    pub alpha: f64,
    pub beta: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub mobility_scale: f64,
    pub strict: bool,
}

/// Spatially uniform coefficients of the boundary-driven problem. A gate
/// exponent of 1 is the linear gate. `strict` as in [`VfP1Params`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VfP2Params {
    pub a: f64,
    pub b: f64,
    pub a0: f64,
    pub b0: f64,
    pub mobility_scale: f64,
    pub gate_exponent: f64,
    pub strict: bool,
}

pub struct VfGrid(Grid);

pub struct VfSolution(SolutionField);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(VfStatus, String);

fn fail<T>(status: VfStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            VfStatus::Panic
        }
    }
}

unsafe fn slice_in<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return fail(VfStatus::NullPointer, format!("{what} is null"));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    match p.as_mut() {
        Some(r) => Ok(r),
        None => fail(VfStatus::NullPointer, format!("{what} is null")),
    }
}

fn solver_failure(e: SolverError) -> Failure {
    match e {
        SolverError::Hypothesis(h) => Failure(VfStatus::HypothesisViolated, h.to_string()),
        e => Failure(VfStatus::SolverFailed, e.to_string()),
    }
}

fn options(strict: bool) -> SolverOptions {
    if strict {
        SolverOptions::default()
    } else {
        SolverOptions::test_mode()
    }
}

fn mobility(scale: f64) -> MobilityFunction {
    if scale == 0.0 {
        MobilityFunction::Zero
    } else {
        MobilityFunction::Logistic { scale }
    }
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Uniform grid of `cells` cells on `[0, length]`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vf_grid_new_1d(
    cells: usize,
    length: f64,
    left: VfBoundary,
    right: VfBoundary,
    out: *mut *mut VfGrid,
) -> VfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let g = Grid::interval(cells, length, left.into(), right.into())
            .map_err(|e| Failure(VfStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(VfGrid(g)));
        Ok(())
    })
}

/// Uniform `nx` by `ny` grid on `[0, lx] x [0, ly]`, one tag per edge.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn vf_grid_new_2d(
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    left: VfBoundary,
    right: VfBoundary,
    bottom: VfBoundary,
    top: VfBoundary,
    out: *mut *mut VfGrid,
) -> VfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let segments: Vec<BoundarySegment> = [(Side::Left, left), (Side::Right, right), (Side::Bottom, bottom), (Side::Top, top)]
            .into_iter()
            .filter(|(_, t)| *t != VfBoundary::Wall)
            .map(|(s, t)| BoundarySegment::whole(s, t.into()))
            .collect();
        let g = Grid::build(2, &[nx, ny], &[lx, ly], &segments).map_err(|e| Failure(VfStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(VfGrid(g)));
        Ok(())
    })
}

/// # Safety
/// `grid` must come from a `vf_grid_new_*` call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vf_grid_free(grid: *mut VfGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of cells, or 0 for a null grid.
///
/// # Safety
/// `grid` must be null or a live grid handle.
#[no_mangle]
pub unsafe extern "C" fn vf_grid_num_cells(grid: *const VfGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.num_cells())
}

unsafe fn common_inputs<'a>(
    grid: *const VfGrid,
    potential: *const f64,
    u0: *const f64,
    t_final: f64,
    steps: usize,
) -> Result<(&'a Grid, Vec<f64>, Vec<f64>, TimeGrid), Failure> {
    let grid = &grid.as_ref().ok_or(Failure(VfStatus::NullPointer, "grid is null".into()))?.0;
    let n = grid.num_cells();
    let v = if potential.is_null() { vec![0.0; n] } else { slice_in(potential, n, "potential")?.to_vec() };
    let u0 = slice_in(u0, n, "u0")?.to_vec();
    let tg = TimeGrid::new(t_final, steps).map_err(|e| Failure(VfStatus::InvalidArgument, e.to_string()))?;
    Ok((grid, v, u0, tg))
}

/// Solves the reaction problem with uniform coefficients. `potential`
/// (nullable, zero when null) and `u0` hold one value per cell.
///
/// # Safety
/// Pointers must be valid for `vf_grid_num_cells(grid)` values; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vf_solve_p1(
    grid: *const VfGrid,
    params: *const VfP1Params,
    potential: *const f64,
    u0: *const f64,
    t_final: f64,
    steps: usize,
    out: *mut *mut VfSolution,
) -> VfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let p = *params.as_ref().ok_or(Failure(VfStatus::NullPointer, "params is null".into()))?;
        let (grid, v, u0, tg) = common_inputs(grid, potential, u0, t_final, steps)?;
        let mut field = ParamFieldP1::uniform(grid, p.alpha, p.beta, mobility(p.mobility_scale), 0.0);
        field.alpha0 = p.alpha0;
        field.beta0 = p.beta0;
        field.potential = SpaceTimeField::stationary(v);
        field.u0 = u0;
        let sol = solve_p1(&field, grid, &tg, &options(p.strict)).map_err(solver_failure)?;
        *out = Box::into_raw(Box::new(VfSolution(sol)));
        Ok(())
    })
}

/// Solves the boundary-driven problem with uniform coefficients.
///
/// # Safety
/// As for [`vf_solve_p1`].
#[no_mangle]
pub unsafe extern "C" fn vf_solve_p2(
    grid: *const VfGrid,
    params: *const VfP2Params,
    potential: *const f64,
    u0: *const f64,
    t_final: f64,
    steps: usize,
    out: *mut *mut VfSolution,
) -> VfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let p = *params.as_ref().ok_or(Failure(VfStatus::NullPointer, "params is null".into()))?;
        let (grid, v, u0, tg) = common_inputs(grid, potential, u0, t_final, steps)?;
        let gate = if p.gate_exponent == 1.0 { GateFunction::Linear } else { GateFunction::Power { exponent: p.gate_exponent } };
        let mut field = ParamFieldP2::uniform(grid, p.a, p.b, mobility(p.mobility_scale), gate, 0.0);
        field.a0 = p.a0;
        field.b0 = p.b0;
        field.potential = SpaceTimeField::stationary(v);
        field.u0 = u0;
        let sol = solve_p2(&field, grid, &tg, &options(p.strict)).map_err(solver_failure)?;
        *out = Box::into_raw(Box::new(VfSolution(sol)));
        Ok(())
    })
}

/// # Safety
/// `sol` must come from a solve call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vf_solution_free(sol: *mut VfSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Number of stored time levels (steps + 1), or 0 for a null handle.
///
/// # Safety
/// `sol` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn vf_solution_num_levels(sol: *const VfSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.0.num_levels())
}

/// Copies time level `k` into `buf`, which holds `len` values.
///
/// # Safety
/// `sol` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn vf_solution_level(sol: *const VfSolution, k: usize, buf: *mut f64, len: usize) -> VfStatus {
    guard(|| {
        let s = &sol.as_ref().ok_or(Failure(VfStatus::NullPointer, "solution is null".into()))?.0;
        if buf.is_null() {
            return fail(VfStatus::NullPointer, "buf is null");
        }
        if k >= s.num_levels() {
            return fail(VfStatus::OutOfRange, format!("level {k} of {}", s.num_levels()));
        }
        if len != s.num_cells() {
            return fail(VfStatus::InvalidArgument, format!("buffer holds {len} values, level has {}", s.num_cells()));
        }
        slice::from_raw_parts_mut(buf, len).copy_from_slice(s.level(k));
        Ok(())
    })
}

/// Total mass at time level `k`.
///
/// # Safety
/// `sol` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vf_solution_mass(sol: *const VfSolution, k: usize, out: *mut f64) -> VfStatus {
    guard(|| {
        let s = &sol.as_ref().ok_or(Failure(VfStatus::NullPointer, "solution is null".into()))?.0;
        let out = out_ptr(out, "out")?;
        if k >= s.num_levels() {
            return fail(VfStatus::OutOfRange, format!("level {k} of {}", s.num_levels()));
        }
        *out = s.mass(k);
        Ok(())
    })
}

/// Order-`r` Wasserstein distance between two weighted point sets on the line.
///
/// # Safety
/// `x`, `wx` must be valid for `n` reads, `y`, `wy` for `m`; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vf_wasserstein_1d(
    x: *const f64,
    wx: *const f64,
    n: usize,
    y: *const f64,
    wy: *const f64,
    m: usize,
    r: f64,
    out: *mut f64,
) -> VfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let dist = |a, w, len, what| -> Result<EmpiricalDistribution, Failure> {
            let atoms = slice_in(a, len, what)?.to_vec();
            let weights = slice_in(w, len, what)?.to_vec();
            EmpiricalDistribution::new(atoms, weights).map_err(|e| Failure(VfStatus::InvalidArgument, e.to_string()))
        };
        let (p, q) = (dist(x, wx, n, "x")?, dist(y, wy, m, "y")?);
        *out = wasserstein_1d(&p, &q, r).map_err(|e| Failure(VfStatus::TransportFailed, e.to_string()))?;
        Ok(())
    })
}

/// Exact optimal transport between weights `p` (length `m`) and `q`
/// (length `n`) for the row-major `m x n` cost matrix, already raised to the
/// power `r`. Writes `(optimal cost)^(1/r)` to `out` and, when `plan` is not
/// null, the optimal coupling in row-major order.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn vf_wasserstein_discrete(
    p: *const f64,
    m: usize,
    q: *const f64,
    n: usize,
    cost: *const f64,
    r: f64,
    out: *mut f64,
    plan: *mut f64,
) -> VfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let p = slice_in(p, m, "p")?;
        let q = slice_in(q, n, "q")?;
        let c = slice_in(cost, m * n, "cost")?;
        let rows: Vec<Vec<f64>> = if n == 0 { Vec::new() } else { c.chunks(n).map(|r| r.to_vec()).collect() };
        let (d, pl) = wasserstein_discrete(p, q, &rows, r).map_err(|e| Failure(VfStatus::TransportFailed, e.to_string()))?;
        *out = d;
        if !plan.is_null() {
            let dst = slice::from_raw_parts_mut(plan, m * n);
            for (chunk, row) in dst.chunks_mut(n).zip(&pl.coupling) {
                chunk.copy_from_slice(row);
            }
        }
        Ok(())
    })
}
