//! Cell-centered finite-volume time stepping for the reaction problem (P1)
//! and the inflow/outflow problem (P2).
//!
//! Each step solves
//!
//! ```text
//! vol/dt (u' - u) + sum_faces T (u'_i - u'_j) + D u' = -div_h F(w) + E(w)
//! ```
//!
//! where `T = area/distance` (implicit two-point diffusion), `F` is the drift
//! flux with two-sided upwinding of the split mobility `f = p q`,
//!
//! ```text
//! F_ij = area * ( [dV]^+ p(w_i) q(w_j) - [dV]^- p(w_j) q(w_i) ),  dV = (V_j - V_i)/distance
//! ```
//!
//! `E` collects reactions (P1) or the gated inflow `a g(u)` (P2), and `D`
//! is the implicit diagonal (outflow `b` for P2, `beta` in the Picard map for
//! P1). In the IMEX scheme `w = u`; the Picard scheme iterates `w` to the
//! fixed point of the map `w -> u'`.
//!
//! Under the step limit returned by [`max_stable_step_p1`] /
//! [`max_stable_step_p2`] the explicit part keeps every cell in `[0, 1]` and
//! the implicit operator is an M-matrix with row sums at least `vol/dt`, so
//! the new iterate stays in `[0, 1]`. Bounds are asserted, never clamped.

mod export;
mod linear;
pub mod params;

use thiserror::Error;

use crate::grid::{BoundaryTag, FaceKind, Grid, GridError, TimeGrid};
use linear::{solve_refined, BandedCholesky};
pub use params::{
    max_interior_laplacian, Forcing, GateFunction, Hypothesis, HypothesisViolation, MobilityFunction, ParamFieldP1, ParamFieldP2,
    SpaceTimeField, Validation, HARMONIC_TOLERANCE,
};

/// Allowed excursion outside `[0, 1]`.
pub const BOX_TOLERANCE: f64 = 1e-10;
/// Relative residual accepted from the linear solve.
pub const LINEAR_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("time step {dt} exceeds the bound-preserving limit {limit}")]
    StepRestrictionViolated { dt: f64, limit: f64 },
    #[error("no convergence: {0}")]
    NonConvergence(String),
    #[error("Picard map is not contracting (residual ratio {ratio} at iteration {iteration})")]
    NoContraction { iteration: usize, ratio: f64 },
    #[error("box constraint violated: min {min}, max {max}")]
    BoxConstraintViolated { min: f64, max: f64 },
    #[error("expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Hypothesis(#[from] HypothesisViolation),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("step {step}: {source}")]
    AtStep { step: usize, source: Box<SolverError> },
}

impl SolverError {
    fn at_step(self, step: usize) -> Self {
        SolverError::AtStep { step, source: Box::new(self) }
    }
}

/// Time discretization of the nonlinear terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    /// Drift and reactions explicit, diffusion (and outflow) implicit.
    Imex,
    /// Fixed point of the linearized map, mobility frozen at the previous iterate.
    Picard { tol: f64, max_iter: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub scheme: Scheme,
    pub validation: Validation,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { scheme: Scheme::Imex, validation: Validation::Strict }
    }
}

impl SolverOptions {
    pub fn test_mode() -> Self {
        Self { validation: Validation::Test, ..Self::default() }
    }
}

/// Totals of one step: boundary (or reaction) fluxes and the mass at the end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxRecord {
    pub inflow_total: f64,
    pub outflow_total: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub iterations: usize,
    pub residual: f64,
}

/// Discrete trajectory `u(t_k, x_i)` for `k = 0..=num_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    time_grid: TimeGrid,
    num_cells: usize,
    cell_volume: f64,
    values: Vec<f64>,
    flux_log: Vec<FluxRecord>,
    diagnostics: Vec<StepDiagnostics>,
}

impl SolutionField {
    /// Trajectory from explicit time levels, without flux bookkeeping.
    pub fn from_levels(time_grid: TimeGrid, grid: &Grid, levels: Vec<Vec<f64>>) -> Result<Self, SolverError> {
        let n = grid.num_cells();
        if levels.len() != time_grid.num_steps() + 1 {
            return Err(SolverError::ShapeMismatch { expected: time_grid.num_steps() + 1, got: levels.len() });
        }
        let mut values = Vec::with_capacity(n * levels.len());
        for l in &levels {
            if l.len() != n {
                return Err(SolverError::ShapeMismatch { expected: n, got: l.len() });
            }
            values.extend_from_slice(l);
        }
        Ok(Self {
            time_grid,
            num_cells: n,
            cell_volume: grid.cell_volume(),
            values,
            flux_log: Vec::new(),
            diagnostics: Vec::new(),
        })
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn num_levels(&self) -> usize {
        self.values.len() / self.num_cells
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.values[k * self.num_cells..(k + 1) * self.num_cells]
    }

    pub fn levels(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.num_cells)
    }

    pub fn mass(&self, k: usize) -> f64 {
        self.cell_volume * self.level(k).iter().sum::<f64>()
    }

    /// Per-step fluxes; entry `k` belongs to the step from `t_k` to `t_{k+1}`.
    pub fn flux_log(&self) -> &[FluxRecord] {
        &self.flux_log
    }

    pub fn diagnostics(&self) -> &[StepDiagnostics] {
        &self.diagnostics
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `self - other` level by level.
    pub fn difference(&self, other: &Self) -> Result<Self, SolverError> {
        if self.values.len() != other.values.len() || self.num_cells != other.num_cells {
            return Err(SolverError::ShapeMismatch { expected: self.values.len(), got: other.values.len() });
        }
        Ok(Self {
            time_grid: self.time_grid.clone(),
            num_cells: self.num_cells,
            cell_volume: self.cell_volume,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            flux_log: Vec::new(),
            diagnostics: Vec::new(),
        })
    }
}

fn check_box(u: &[f64]) -> Result<(), SolverError> {
    let (min, max) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(min >= -BOX_TOLERANCE) || !(max <= 1.0 + BOX_TOLERANCE) {
        return Err(SolverError::BoxConstraintViolated { min, max });
    }
    Ok(())
}

fn l2_distance(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    (grid.cell_volume() * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).sqrt()
}

/// Net drift outflow `sum_faces F_ij` of every cell.
fn drift_outflow(grid: &Grid, mobility: &MobilityFunction, v: &[f64], w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.num_cells()];
    if mobility.is_zero() {
        return out;
    }
    for face in grid.interior_faces() {
        if let FaceKind::Interior { lower: i, upper: j } = face.kind {
            let dv = (v[j] - v[i]) / face.distance;
            let flux = if dv > 0.0 {
                dv * mobility.increasing_part(w[i]) * mobility.decreasing_part(w[j])
            } else {
                dv * mobility.increasing_part(w[j]) * mobility.decreasing_part(w[i])
            };
            let flux = face.area * flux;
            out[i] += flux;
            out[j] -= flux;
        }
    }
    out
}

/// `sum_faces area/vol * |dV|` for every cell.
fn drift_rate(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; grid.num_cells()];
    for face in grid.interior_faces() {
        if let FaceKind::Interior { lower: i, upper: j } = face.kind {
            let r = face.area * ((v[j] - v[i]) / face.distance).abs() / grid.cell_volume();
            s[i] += r;
            s[j] += r;
        }
    }
    s
}

/// Problem-specific terms of one step.
trait StepTerms {
    fn grid(&self) -> &Grid;
    fn mobility(&self) -> &MobilityFunction;
    fn potential(&self, step: usize) -> &[f64];
    /// Implicit diagonal `D`.
    fn implicit_diag(&self, step: usize, scheme: &Scheme) -> Vec<f64>;
    /// Explicit part `E(w)` added to the right-hand side; `u` is the old level.
    fn explicit(&self, step: usize, time: f64, u: &[f64], w: &[f64], scheme: &Scheme) -> Vec<f64>;
    /// `(inflow, outflow)` totals consistent with the assembled step.
    fn balance(&self, step: usize, time: f64, u: &[f64], w: &[f64], u_new: &[f64], scheme: &Scheme) -> (f64, f64);
    /// True if the linearized map does not depend on the iterate.
    fn iterate_independent(&self) -> bool;
}

struct P1Terms<'a> {
    grid: &'a Grid,
    p: &'a ParamFieldP1,
}

impl StepTerms for P1Terms<'_> {
    fn grid(&self) -> &Grid {
        self.grid
    }

    fn mobility(&self) -> &MobilityFunction {
        &self.p.mobility
    }

    fn potential(&self, step: usize) -> &[f64] {
        self.p.potential.at_step(step)
    }

    fn implicit_diag(&self, step: usize, scheme: &Scheme) -> Vec<f64> {
        match scheme {
            Scheme::Imex => vec![0.0; self.grid.num_cells()],
            Scheme::Picard { .. } => self.p.beta.at_step(step).iter().map(|b| b * self.grid.cell_volume()).collect(),
        }
    }

    fn explicit(&self, step: usize, time: f64, u: &[f64], w: &[f64], scheme: &Scheme) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        let alpha = self.p.alpha.at_step(step);
        let beta = self.p.beta.at_step(step);
        let f = &self.p.mobility;
        let mut e: Vec<f64> = match scheme {
            Scheme::Imex => (0..u.len()).map(|i| vol * (alpha[i] * f.evaluate(u[i]) - beta[i] * u[i])).collect(),
            Scheme::Picard { .. } => (0..u.len()).map(|i| vol * alpha[i] * f.evaluate(w[i])).collect(),
        };
        if let Some(src) = &self.p.forcing {
            for (i, ei) in e.iter_mut().enumerate() {
                *ei += vol * (src.0)(time, self.grid.cell_center(i));
            }
        }
        e
    }

    fn balance(&self, step: usize, time: f64, u: &[f64], w: &[f64], u_new: &[f64], scheme: &Scheme) -> (f64, f64) {
        let vol = self.grid.cell_volume();
        let alpha = self.p.alpha.at_step(step);
        let beta = self.p.beta.at_step(step);
        let f = &self.p.mobility;
        let (w, removed) = match scheme {
            Scheme::Imex => (u, u),
            Scheme::Picard { .. } => (w, u_new),
        };
        let mut inflow: f64 = (0..u.len()).map(|i| vol * alpha[i] * f.evaluate(w[i])).sum();
        if let Some(src) = &self.p.forcing {
            inflow += (0..u.len()).map(|i| vol * (src.0)(time, self.grid.cell_center(i))).sum::<f64>();
        }
        let outflow = (0..u.len()).map(|i| vol * beta[i] * removed[i]).sum();
        (inflow, outflow)
    }

    fn iterate_independent(&self) -> bool {
        self.p.mobility.is_zero()
    }
}

struct P2Terms<'a> {
    grid: &'a Grid,
    p: &'a ParamFieldP2,
    inflow_faces: Vec<(usize, f64)>,
    outflow_faces: Vec<(usize, f64)>,
}

impl<'a> P2Terms<'a> {
    fn new(grid: &'a Grid, p: &'a ParamFieldP2) -> Self {
        let cells = |tag| {
            grid.faces_with_tag(tag)
                .map(|(_, f)| match f.kind {
                    FaceKind::Boundary { cell, .. } => (cell, f.area),
                    FaceKind::Interior { .. } => unreachable!(),
                })
                .collect()
        };
        Self { grid, p, inflow_faces: cells(BoundaryTag::Inflow), outflow_faces: cells(BoundaryTag::Outflow) }
    }
}

impl StepTerms for P2Terms<'_> {
    fn grid(&self) -> &Grid {
        self.grid
    }

    fn mobility(&self) -> &MobilityFunction {
        &self.p.mobility
    }

    fn potential(&self, step: usize) -> &[f64] {
        self.p.potential.at_step(step)
    }

    fn implicit_diag(&self, step: usize, _scheme: &Scheme) -> Vec<f64> {
        let mut d = vec![0.0; self.grid.num_cells()];
        for (&(cell, area), b) in self.outflow_faces.iter().zip(self.p.b.at_step(step)) {
            d[cell] += area * b;
        }
        d
    }

    fn explicit(&self, step: usize, _time: f64, u: &[f64], w: &[f64], scheme: &Scheme) -> Vec<f64> {
        let w = match scheme {
            Scheme::Imex => u,
            Scheme::Picard { .. } => w,
        };
        let mut e = vec![0.0; self.grid.num_cells()];
        for (&(cell, area), a) in self.inflow_faces.iter().zip(self.p.a.at_step(step)) {
            e[cell] += area * a * self.p.gate.evaluate(w[cell]);
        }
        e
    }

    fn balance(&self, step: usize, _time: f64, u: &[f64], w: &[f64], u_new: &[f64], scheme: &Scheme) -> (f64, f64) {
        let w = match scheme {
            Scheme::Imex => u,
            Scheme::Picard { .. } => w,
        };
        let inflow = self
            .inflow_faces
            .iter()
            .zip(self.p.a.at_step(step))
            .map(|(&(cell, area), a)| area * a * self.p.gate.evaluate(w[cell]))
            .sum();
        let outflow =
            self.outflow_faces.iter().zip(self.p.b.at_step(step)).map(|(&(cell, area), b)| area * b * u_new[cell]).sum();
        (inflow, outflow)
    }

    fn iterate_independent(&self) -> bool {
        self.p.mobility.is_zero() && self.inflow_faces.is_empty()
    }
}

struct StepOutput {
    u: Vec<f64>,
    inflow: f64,
    outflow: f64,
    iterations: usize,
    residual: f64,
}

/// Assembles and solves one linear step, caching the factorization while
/// the implicit diagonal is unchanged.
struct Stepper<'t, T: StepTerms> {
    terms: &'t T,
    dt: f64,
    cache: Option<(Vec<f64>, BandedCholesky)>,
}

impl<'t, T: StepTerms> Stepper<'t, T> {
    fn new(terms: &'t T, dt: f64) -> Self {
        Self { terms, dt, cache: None }
    }

    /// One application of the linearized map: `u` old level, `w` iterate.
    fn apply(&mut self, step: usize, time: f64, u: &[f64], w: &[f64], scheme: &Scheme) -> Result<Vec<f64>, SolverError> {
        let grid = self.terms.grid();
        let vol_dt = grid.cell_volume() / self.dt;
        let diag = self.terms.implicit_diag(step, scheme);
        let drift = drift_outflow(grid, self.terms.mobility(), self.terms.potential(step), w);
        let explicit = self.terms.explicit(step, time, u, w, scheme);
        let rhs: Vec<f64> = (0..u.len()).map(|i| vol_dt * u[i] - drift[i] + explicit[i]).collect();

        let refactor = match &self.cache {
            Some((d, _)) => d != &diag,
            None => true,
        };
        if refactor {
            let fac = BandedCholesky::diffusion(grid, self.dt, &diag)
                .ok_or_else(|| SolverError::NonConvergence("diffusion operator is not positive definite".into()))?;
            self.cache = Some((diag, fac));
        }
        let (d, fac) = self.cache.as_ref().unwrap();
        let (x, res) = solve_refined(fac, grid, self.dt, d, &rhs);
        if !(res <= LINEAR_TOLERANCE) {
            return Err(SolverError::NonConvergence(format!("linear residual {res:e}")));
        }
        Ok(x)
    }

    fn advance(&mut self, step: usize, time: f64, u: &[f64], scheme: &Scheme) -> Result<StepOutput, SolverError> {
        match *scheme {
            Scheme::Imex => {
                let u_new = self.apply(step, time, u, u, scheme)?;
                let (inflow, outflow) = self.terms.balance(step, time, u, u, &u_new, scheme);
                Ok(StepOutput { u: u_new, inflow, outflow, iterations: 1, residual: 0.0 })
            }
            Scheme::Picard { tol, max_iter } => {
                let out = self.picard(step, time, u, u, tol, max_iter)?;
                let (inflow, outflow) = self.terms.balance(step, time, u, &out.last_iterate, &out.solution, scheme);
                Ok(StepOutput { u: out.solution, inflow, outflow, iterations: out.iterations, residual: out.residual })
            }
        }
    }

    fn picard(
        &mut self,
        step: usize,
        time: f64,
        u: &[f64],
        guess: &[f64],
        tol: f64,
        max_iter: usize,
    ) -> Result<PicardOutcome, SolverError> {
        if !(tol > 0.0) || max_iter == 0 {
            return Err(SolverError::NonConvergence(format!("invalid Picard settings tol = {tol}, max_iter = {max_iter}")));
        }
        let scheme = Scheme::Picard { tol, max_iter };
        let grid = self.terms.grid();
        let mut w = guess.to_vec();
        let mut prev_residual = f64::INFINITY;
        let mut non_contracting = 0;
        for it in 1..=max_iter {
            let next = self.apply(step, time, u, &w, &scheme)?;
            let residual = if self.terms.iterate_independent() { 0.0 } else { l2_distance(grid, &next, &w) };
            if residual <= tol {
                return Ok(PicardOutcome { solution: next, last_iterate: w, iterations: it, residual });
            }
            if residual >= prev_residual {
                non_contracting += 1;
                if non_contracting >= 3 {
                    return Err(SolverError::NoContraction { iteration: it, ratio: residual / prev_residual });
                }
            } else {
                non_contracting = 0;
            }
            prev_residual = residual;
            w = next;
        }
        Err(SolverError::NonConvergence(format!("Picard iteration stalled after {max_iter} iterations")))
    }
}

/// Result of [`picard_inner_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct PicardOutcome {
    pub solution: Vec<f64>,
    /// Iterate the mobility was frozen at in the final application.
    pub last_iterate: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Data frozen for one step of the Picard map: the old level `u_prev`, the
/// coefficients, and the step index/time that select the coefficient slice.
#[derive(Debug, Clone, Copy)]
pub enum FrozenStep<'a> {
    P1 { params: &'a ParamFieldP1, grid: &'a Grid, step: usize, time: f64, u_prev: &'a [f64] },
    P2 { params: &'a ParamFieldP2, grid: &'a Grid, step: usize, time: f64, u_prev: &'a [f64] },
}

/// Iterates the linearized map (mobility at the previous iterate) from
/// `u_guess` until the discrete L2 change drops to `tol`.
pub fn picard_inner_solve(
    u_guess: &[f64],
    frozen: &FrozenStep<'_>,
    dt: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PicardOutcome, SolverError> {
    match *frozen {
        FrozenStep::P1 { params, grid, step, time, u_prev } => {
            check_shape(grid, u_guess)?;
            check_shape(grid, u_prev)?;
            let terms = P1Terms { grid, p: params };
            Stepper::new(&terms, dt).picard(step, time, u_prev, u_guess, tol, max_iter)
        }
        FrozenStep::P2 { params, grid, step, time, u_prev } => {
            check_shape(grid, u_guess)?;
            check_shape(grid, u_prev)?;
            let terms = P2Terms::new(grid, params);
            Stepper::new(&terms, dt).picard(step, time, u_prev, u_guess, tol, max_iter)
        }
    }
}

fn check_shape(grid: &Grid, u: &[f64]) -> Result<(), SolverError> {
    if u.len() != grid.num_cells() {
        return Err(SolverError::ShapeMismatch { expected: grid.num_cells(), got: u.len() });
    }
    Ok(())
}

fn segment_starts(fields: &[&SpaceTimeField]) -> Vec<usize> {
    let mut s: Vec<usize> = fields.iter().flat_map(|f| f.segments().iter().map(|(k, _)| *k)).collect();
    s.sort_unstable();
    s.dedup();
    s
}

fn limit_from_rate(rate: f64) -> f64 {
    if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    }
}

fn p1_rate(grid: &Grid, p: &ParamFieldP1, step: usize) -> f64 {
    let (lp, pmax, lq, qmax) = p.mobility.split_bounds();
    let s = drift_rate(grid, p.potential.at_step(step));
    let alpha = p.alpha.at_step(step);
    let beta = p.beta.at_step(step);
    (0..grid.num_cells())
        .map(|i| {
            let lower = lp * qmax * s[i] + beta[i];
            let upper = lq * pmax * (s[i] + alpha[i]);
            lower.max(upper)
        })
        .fold(0.0, f64::max)
}

fn p2_rate(terms: &P2Terms<'_>, step: usize) -> f64 {
    let grid = terms.grid;
    let p = terms.p;
    let (lp, pmax, lq, qmax) = p.mobility.split_bounds();
    let s = drift_rate(grid, p.potential.at_step(step));
    let mut gate_rate = vec![0.0; grid.num_cells()];
    for (&(cell, area), a) in terms.inflow_faces.iter().zip(p.a.at_step(step)) {
        gate_rate[cell] += p.gate.lipschitz_constant() * area * a / grid.cell_volume();
    }
    (0..grid.num_cells()).map(|i| (lp * qmax * s[i]).max(lq * pmax * s[i] + gate_rate[i])).fold(0.0, f64::max)
}

/// Largest step size for which a (P1) step keeps `[0, 1]` invariant, over
/// every coefficient segment.
pub fn max_stable_step_p1(params: &ParamFieldP1, grid: &Grid) -> f64 {
    let rate = segment_starts(&[&params.alpha, &params.beta, &params.potential])
        .into_iter()
        .map(|k| p1_rate(grid, params, k))
        .fold(0.0, f64::max);
    limit_from_rate(rate)
}

/// Largest step size for which a (P2) step keeps `[0, 1]` invariant.
pub fn max_stable_step_p2(params: &ParamFieldP2, grid: &Grid) -> f64 {
    let terms = P2Terms::new(grid, params);
    let rate =
        segment_starts(&[&params.a, &params.b, &params.potential]).into_iter().map(|k| p2_rate(&terms, k)).fold(0.0, f64::max);
    limit_from_rate(rate)
}

fn check_restriction(dt: f64, limit: f64) -> Result<(), SolverError> {
    if dt > limit * (1.0 + 1e-12) {
        return Err(SolverError::StepRestrictionViolated { dt, limit });
    }
    Ok(())
}

/// Timing of a single step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    /// Step index `k` selecting the coefficient slice.
    pub step: usize,
    /// Time `t_k` at the start of the step.
    pub time: f64,
    pub dt: f64,
}

/// One IMEX step of (P1) from `u_k`.
pub fn step_p1(u_k: &[f64], params: &ParamFieldP1, grid: &Grid, ctx: StepContext) -> Result<Vec<f64>, SolverError> {
    check_shape(grid, u_k)?;
    check_restriction(ctx.dt, limit_from_rate(p1_rate(grid, params, ctx.step)))?;
    let terms = P1Terms { grid, p: params };
    let out = Stepper::new(&terms, ctx.dt).advance(ctx.step, ctx.time, u_k, &Scheme::Imex)?;
    check_box(&out.u)?;
    Ok(out.u)
}

/// One IMEX step of (P2) from `u_k`; returns the new level and the
/// `(inflow, outflow)` totals of the step.
pub fn step_p2(u_k: &[f64], params: &ParamFieldP2, grid: &Grid, ctx: StepContext) -> Result<(Vec<f64>, f64, f64), SolverError> {
    check_shape(grid, u_k)?;
    let terms = P2Terms::new(grid, params);
    check_restriction(ctx.dt, limit_from_rate(p2_rate(&terms, ctx.step)))?;
    let out = Stepper::new(&terms, ctx.dt).advance(ctx.step, ctx.time, u_k, &Scheme::Imex)?;
    check_box(&out.u)?;
    Ok((out.u, out.inflow, out.outflow))
}

fn run<T: StepTerms>(terms: &T, u0: &[f64], tg: &TimeGrid, scheme: Scheme) -> Result<SolutionField, SolverError> {
    let grid = terms.grid();
    let n = grid.num_cells();
    let dt = tg.step_size();
    let mut values = Vec::with_capacity(n * (tg.num_steps() + 1));
    values.extend_from_slice(u0);
    let mut flux_log = Vec::with_capacity(tg.num_steps());
    let mut diagnostics = Vec::with_capacity(tg.num_steps());
    let mut stepper = Stepper::new(terms, dt);
    let mut u = u0.to_vec();
    for k in 0..tg.num_steps() {
        let out = stepper.advance(k, tg.time(k), &u, &scheme).map_err(|e| e.at_step(k))?;
        check_box(&out.u).map_err(|e| e.at_step(k))?;
        u = out.u;
        flux_log.push(FluxRecord {
            inflow_total: out.inflow,
            outflow_total: out.outflow,
            mass: grid.cell_volume() * u.iter().sum::<f64>(),
        });
        diagnostics.push(StepDiagnostics { iterations: out.iterations, residual: out.residual });
        values.extend_from_slice(&u);
    }
    Ok(SolutionField { time_grid: tg.clone(), num_cells: n, cell_volume: grid.cell_volume(), values, flux_log, diagnostics })
}

/// Full trajectory of (P1) with no-flux boundary.
pub fn solve_p1(params: &ParamFieldP1, grid: &Grid, tg: &TimeGrid, opts: &SolverOptions) -> Result<SolutionField, SolverError> {
    params.validate(grid, opts.validation)?;
    check_restriction(tg.step_size(), max_stable_step_p1(params, grid))?;
    run(&P1Terms { grid, p: params }, &params.u0, tg, opts.scheme)
}

/// Full trajectory of (P2) with gated inflow and linear outflow.
pub fn solve_p2(params: &ParamFieldP2, grid: &Grid, tg: &TimeGrid, opts: &SolverOptions) -> Result<SolutionField, SolverError> {
    params.validate(grid, opts.validation)?;
    if opts.validation == Validation::Strict {
        grid.require_outflow()?;
    }
    check_restriction(tg.step_size(), max_stable_step_p2(params, grid))?;
    run(&P2Terms::new(grid, params), &params.u0, tg, opts.scheme)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundarySegment, Side};

    fn interval(n: usize, left: BoundaryTag, right: BoundaryTag) -> Grid {
        Grid::interval(n, 1.0, left, right).unwrap()
    }

    fn ctx(dt: f64) -> StepContext {
        StepContext { step: 0, time: 0.0, dt }
    }

    #[test]
    fn uniform_linear_decay_one_step() {
        let g = interval(8, BoundaryTag::Wall, BoundaryTag::Wall);
        let p = ParamFieldP1::uniform(&g, 1.0, 2.0, MobilityFunction::Zero, 0.6);
        let u = step_p1(&p.u0, &p, &g, ctx(0.01)).unwrap();
        for v in u {
            assert!((v - 0.6 * (1.0 - 0.01 * 2.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let g = Grid::build(2, &[6, 5], &[1.0, 1.0], &[]).unwrap();
        let mut p = ParamFieldP1::uniform(&g, 1.0, 1.0, MobilityFunction::Logistic { scale: 1.0 }, 0.0);
        p.potential = SpaceTimeField::stationary((0..g.num_cells()).map(|c| g.cell_center(c)[0]).collect());
        let u = step_p1(&p.u0, &p, &g, ctx(0.01)).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_restriction_enforced() {
        let g = interval(4, BoundaryTag::Wall, BoundaryTag::Wall);
        let p = ParamFieldP1::uniform(&g, 1.0, 10.0, MobilityFunction::Zero, 0.5);
        let limit = max_stable_step_p1(&p, &g);
        assert!((limit - 0.1).abs() < 1e-15);
        assert!(matches!(step_p1(&p.u0, &p, &g, ctx(0.2)), Err(SolverError::StepRestrictionViolated { .. })));
    }

    #[test]
    fn p2_first_step_from_empty_domain() {
        let g = interval(10, BoundaryTag::Inflow, BoundaryTag::Outflow);
        let p = ParamFieldP2::uniform(&g, 1.0, 0.5, MobilityFunction::Zero, GateFunction::Linear, 0.0);
        let dt = 0.01;
        let (u, inflow, outflow) = step_p2(&p.u0, &p, &g, ctx(dt)).unwrap();
        let mass: f64 = u.iter().sum::<f64>() * g.cell_volume();
        assert_eq!(inflow, g.boundary_measure(BoundaryTag::Inflow));
        assert!(outflow > 0.0 && outflow < inflow);
        assert!((mass - dt * (inflow - outflow)).abs() < 1e-15);
    }

    #[test]
    fn p2_pure_outflow_at_capacity() {
        let g = Grid::build(
            2,
            &[4, 4],
            &[1.0, 1.0],
            &[BoundarySegment::whole(Side::Left, BoundaryTag::Inflow), BoundarySegment::whole(Side::Right, BoundaryTag::Outflow)],
        )
        .unwrap();
        let p = ParamFieldP2::uniform(&g, 1.0, 1.0, MobilityFunction::Logistic { scale: 1.0 }, GateFunction::Linear, 1.0);
        let dt = 0.01;
        let (u, inflow, outflow) = step_p2(&p.u0, &p, &g, ctx(dt)).unwrap();
        let dm = (u.iter().sum::<f64>() - p.u0.iter().sum::<f64>()) * g.cell_volume();
        assert_eq!(inflow, 0.0);
        // outflow is implicit, so the balance uses the new boundary values
        assert!((dm + dt * outflow).abs() < 1e-15);
        assert!(dm < 0.0);
        assert!(dm >= -dt * g.boundary_measure(BoundaryTag::Outflow) - 1e-15);
    }

    #[test]
    fn picard_converges_immediately_without_mobility() {
        let g = interval(6, BoundaryTag::Wall, BoundaryTag::Wall);
        let p = ParamFieldP1::uniform(&g, 1.0, 1.0, MobilityFunction::Zero, 0.4);
        let frozen = FrozenStep::P1 { params: &p, grid: &g, step: 0, time: 0.0, u_prev: &p.u0 };
        let out = picard_inner_solve(&p.u0, &frozen, 0.01, 1e-12, 5).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.residual, 0.0);
    }

    #[test]
    fn picard_from_fixed_point_takes_one_iteration() {
        let g = interval(16, BoundaryTag::Wall, BoundaryTag::Wall);
        let mut p = ParamFieldP1::uniform(&g, 1.0, 1.0, MobilityFunction::Logistic { scale: 1.0 }, 0.3);
        p.potential = SpaceTimeField::stationary((0..16).map(|c| g.cell_center(c)[0]).collect());
        p.u0 = (0..16).map(|c| 0.2 + 0.5 * g.cell_center(c)[0]).collect();
        let frozen = FrozenStep::P1 { params: &p, grid: &g, step: 0, time: 0.0, u_prev: &p.u0 };
        let first = picard_inner_solve(&p.u0, &frozen, 0.01, 1e-13, 50).unwrap();
        assert!(first.iterations > 1);
        let again = picard_inner_solve(&first.solution, &frozen, 0.01, 1e-12, 50).unwrap();
        assert_eq!(again.iterations, 1);
        assert!(again.residual < 1e-13);
    }

    #[test]
    fn no_contraction_detected() {
        // a huge step makes the frozen-mobility map expansive
        let g = interval(16, BoundaryTag::Wall, BoundaryTag::Wall);
        let mut p = ParamFieldP1::uniform(&g, 50.0, 1.0, MobilityFunction::Logistic { scale: 1.0 }, 0.5);
        p.u0 = (0..16).map(|c| if c % 2 == 0 { 0.1 } else { 0.9 }).collect();
        let frozen = FrozenStep::P1 { params: &p, grid: &g, step: 0, time: 0.0, u_prev: &p.u0 };
        let err = picard_inner_solve(&p.u0, &frozen, 10.0, 1e-12, 200).unwrap_err();
        assert!(matches!(err, SolverError::NoContraction { .. } | SolverError::NonConvergence(_)), "{err:?}");
    }

    #[test]
    fn solve_error_carries_step_index() {
        let g = interval(4, BoundaryTag::Wall, BoundaryTag::Wall);
        let mut p = ParamFieldP1::uniform(&g, 1.0, 1.0, MobilityFunction::Zero, 0.5);
        p.u0 = vec![0.5; 3];
        let tg = TimeGrid::new(1.0, 10).unwrap();
        assert!(matches!(solve_p1(&p, &g, &tg, &SolverOptions::default()), Err(SolverError::Hypothesis(_))));
    }
}
