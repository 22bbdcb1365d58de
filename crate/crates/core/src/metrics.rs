//! Parameter-space metrics, the discrete `L2(0,T; H1)` norm, and the
//! empirical Lipschitz-stability harness.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{BoundaryTag, FaceKind, Grid, TimeGrid};
use crate::problem::{Coefficient, Perturbation, Problem};
use crate::solver::{ParamFieldP1, ParamFieldP2, SolutionField, SolverError, SolverOptions, SpaceTimeField};

/// Perturbation scales of the stability ladder.
pub const LADDER_SCALES: [f64; 4] = [1.0, 0.5, 0.25, 0.125];
/// Parameter distances below this are treated as zero.
pub const DEGENERATE_DISTANCE: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("parameter sets live on different grids")]
    GridMismatch,
    #[error("parameter sets belong to different problem kinds")]
    KindMismatch,
    #[error("coefficient {0:?} does not exist for this problem kind")]
    ForeignCoefficient(Coefficient),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("parameter distance {0:e} is too small to form a ratio")]
    DegeneratePerturbation(f64),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("solve at scale {scale}: {source}")]
    Solver { scale: f64, source: SolverError },
}

/// `sqrt( sum_k tau_k ( sum_i vol u_i^2 + sum_faces area*distance*|grad u|^2 ) )`
/// with trapezoid weights `tau_k` and the two-point gradient on interior faces.
pub fn norm_l2h1(u: &SolutionField, grid: &Grid) -> f64 {
    let tg = u.time_grid();
    let vol = grid.cell_volume();
    let faces = grid.interior_faces();
    let mut total = 0.0;
    for (k, lvl) in u.levels().enumerate() {
        let l2: f64 = vol * lvl.iter().map(|v| v * v).sum::<f64>();
        let h1: f64 = faces
            .iter()
            .map(|f| match f.kind {
                FaceKind::Interior { lower, upper } => {
                    let g = (lvl[upper] - lvl[lower]) / f.distance;
                    f.area * f.distance * g * g
                }
                FaceKind::Boundary { .. } => 0.0,
            })
            .sum();
        total += tg.trapezoid_weight(k) * (l2 + h1);
    }
    total.sqrt()
}

/// `‖u - v‖` in the norm of [`norm_l2h1`].
pub fn distance_l2h1(u: &SolutionField, v: &SolutionField, grid: &Grid) -> Result<f64, MetricError> {
    let d = u.difference(v).map_err(|_| MetricError::GridMismatch)?;
    Ok(norm_l2h1(&d, grid))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// Discrete `W^{1,inf}` size of a cell field: the larger of the nodal maximum
/// and the maximum two-point gradient across interior faces.
fn w1inf(grid: &Grid, w: &[f64]) -> f64 {
    let nodal = w.iter().fold(0.0, |m, v| f64::max(m, v.abs()));
    let grad = grid.interior_faces().iter().fold(0.0, |m, f| match f.kind {
        FaceKind::Interior { lower, upper } => f64::max(m, ((w[upper] - w[lower]) / f.distance).abs()),
        FaceKind::Boundary { .. } => m,
    });
    nodal.max(grad)
}

fn check_points(a: &SpaceTimeField, b: &SpaceTimeField, n: usize) -> Result<(), MetricError> {
    if a.num_points() != n || b.num_points() != n {
        return Err(MetricError::GridMismatch);
    }
    Ok(())
}

/// Segments of the joint piecewise structure that lie inside the horizon,
/// with their durations.
fn joint_segments(a: &SpaceTimeField, b: &SpaceTimeField, tg: &TimeGrid) -> Vec<(usize, f64)> {
    let starts: Vec<usize> = a.joint_breakpoints(b).into_iter().filter(|&s| s < tg.num_steps()).collect();
    starts
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let end = starts.get(i + 1).copied().unwrap_or(tg.num_steps());
            (s, (end - s) as f64 * tg.step_size())
        })
        .collect()
}

fn sup_in_time(a: &SpaceTimeField, b: &SpaceTimeField, tg: &TimeGrid) -> f64 {
    joint_segments(a, b, tg).into_iter().fold(0.0, |m, (s, _)| m.max(sup_diff(a.at_step(s), b.at_step(s))))
}

fn l2_initial(grid: &Grid, a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != grid.num_cells() || b.len() != grid.num_cells() {
        return Err(MetricError::GridMismatch);
    }
    Ok((grid.cell_volume() * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).sqrt())
}

fn potential_difference(a: &SpaceTimeField, b: &SpaceTimeField, s: usize) -> Vec<f64> {
    a.at_step(s).iter().zip(b.at_step(s)).map(|(x, y)| x - y).collect()
}

/// `d1 = ‖Δα‖_inf + ‖Δβ‖_inf + sup_t ‖ΔV‖_{W1,inf} + ‖Δu0‖_L2`.
pub fn metric_d1(p: &ParamFieldP1, q: &ParamFieldP1, grid: &Grid, tg: &TimeGrid) -> Result<f64, MetricError> {
    let n = grid.num_cells();
    check_points(&p.alpha, &q.alpha, n)?;
    check_points(&p.beta, &q.beta, n)?;
    check_points(&p.potential, &q.potential, n)?;
    let v = joint_segments(&p.potential, &q.potential, tg)
        .into_iter()
        .fold(0.0, |m, (s, _)| f64::max(m, w1inf(grid, &potential_difference(&p.potential, &q.potential, s))));
    Ok(sup_in_time(&p.alpha, &q.alpha, tg) + sup_in_time(&p.beta, &q.beta, tg) + v + l2_initial(grid, &p.u0, &q.u0)?)
}

/// `d2 = ‖Δa‖_inf(Γ_in) + ‖Δb‖_inf(Γ_out) + ‖ΔV‖_{L2(W1,inf)} + ‖Δu0‖_L2`.
pub fn metric_d2(p: &ParamFieldP2, q: &ParamFieldP2, grid: &Grid, tg: &TimeGrid) -> Result<f64, MetricError> {
    check_points(&p.a, &q.a, grid.faces_with_tag(BoundaryTag::Inflow).count())?;
    check_points(&p.b, &q.b, grid.faces_with_tag(BoundaryTag::Outflow).count())?;
    check_points(&p.potential, &q.potential, grid.num_cells())?;
    let v2: f64 = joint_segments(&p.potential, &q.potential, tg)
        .into_iter()
        .map(|(s, dur)| dur * w1inf(grid, &potential_difference(&p.potential, &q.potential, s)).powi(2))
        .sum();
    Ok(sup_in_time(&p.a, &q.a, tg) + sup_in_time(&p.b, &q.b, tg) + v2.sqrt() + l2_initial(grid, &p.u0, &q.u0)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderEntry {
    pub scale: f64,
    pub param_distance: f64,
    pub solution_distance: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// Values at the full perturbation (scale 1).
    pub param_distance: f64,
    pub solution_distance: f64,
    pub ratio: f64,
    /// Empirical Lipschitz constant: the largest ratio on the ladder.
    pub bound_constant: f64,
    pub perturbation_ladder: Vec<LadderEntry>,
}

impl StabilityReport {
    pub fn max_ratio(&self) -> f64 {
        self.perturbation_ladder.iter().map(|e| e.ratio).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_ratio(&self) -> f64 {
        self.perturbation_ladder.iter().map(|e| e.ratio).fold(f64::INFINITY, f64::min)
    }

    /// `max ratio / min ratio` over the ladder.
    pub fn spread(&self) -> f64 {
        self.max_ratio() / self.min_ratio()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "scale,param_distance,solution_distance,ratio")?;
        for e in &self.perturbation_ladder {
            writeln!(out, "{},{},{},{}", e.scale, e.param_distance, e.solution_distance, e.ratio)?;
        }
        writeln!(out, "max,,,{}", self.bound_constant)
    }
}

/// Solves `base` and `base + s * delta` for every ladder scale and reports
/// `‖S(p) - S(q)‖ / d(p, q)`.
pub fn stability_experiment(
    base: &Problem,
    delta: &Perturbation,
    grid: &Grid,
    tg: &TimeGrid,
    opts: &SolverOptions,
) -> Result<StabilityReport, StabilityError> {
    stability_ladder(base, delta, grid, tg, opts, &LADDER_SCALES)
}

pub fn stability_ladder(
    base: &Problem,
    delta: &Perturbation,
    grid: &Grid,
    tg: &TimeGrid,
    opts: &SolverOptions,
    scales: &[f64],
) -> Result<StabilityReport, StabilityError> {
    let perturbed: Vec<Problem> = scales.iter().map(|&s| base.perturbed(delta, s)).collect::<Result<_, _>>()?;
    let distances: Vec<f64> = perturbed.iter().map(|q| base.distance(q, grid, tg)).collect::<Result<_, _>>()?;
    if let Some(&d) = distances.iter().find(|&&d| d < DEGENERATE_DISTANCE) {
        return Err(StabilityError::DegeneratePerturbation(d));
    }
    let solve = |p: &Problem, scale: f64| p.solve(grid, tg, opts).map_err(|source| StabilityError::Solver { scale, source });
    let (reference, others) = rayon::join(
        || solve(base, 0.0),
        || perturbed.par_iter().zip(scales).map(|(q, &s)| solve(q, s)).collect::<Result<Vec<_>, _>>(),
    );
    let reference = reference?;
    let others = others?;
    let ladder: Vec<LadderEntry> = scales
        .iter()
        .zip(&distances)
        .zip(&others)
        .map(|((&scale, &param_distance), sol)| {
            let solution_distance = distance_l2h1(&reference, sol, grid).expect("same grid and time grid");
            LadderEntry { scale, param_distance, solution_distance, ratio: solution_distance / param_distance }
        })
        .collect();
    let first = ladder[0];
    let bound = ladder.iter().map(|e| e.ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityReport {
        param_distance: first.param_distance,
        solution_distance: first.solution_distance,
        ratio: first.ratio,
        bound_constant: bound,
        perturbation_ladder: ladder,
    })
}

/// Least-squares fit of `ratio(T) = c1 * exp(c2 * T / 2)` on `log ratio`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthFit {
    pub c1: f64,
    pub c2: f64,
}

impl GrowthFit {
    pub fn predict(&self, t: f64) -> f64 {
        self.c1 * (self.c2 * t / 2.0).exp()
    }
}

pub fn fit_growth(horizons: &[f64], ratios: &[f64]) -> Option<GrowthFit> {
    if horizons.len() != ratios.len() || horizons.len() < 2 || ratios.iter().any(|&r| !(r > 0.0)) {
        return None;
    }
    let n = horizons.len() as f64;
    let xs: Vec<f64> = horizons.iter().map(|t| t / 2.0).collect();
    let ys: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let c2 = sxy / sxx;
    Some(GrowthFit { c1: (my - c2 * mx).exp(), c2 })
}

/// Runs the ladder on each time grid and fits the growth of the largest
/// ratio in the horizon.
pub fn stability_growth(
    base: &Problem,
    delta: &Perturbation,
    grid: &Grid,
    time_grids: &[TimeGrid],
    opts: &SolverOptions,
) -> Result<(Vec<StabilityReport>, Option<GrowthFit>), StabilityError> {
    let reports: Vec<StabilityReport> =
        time_grids.iter().map(|tg| stability_experiment(base, delta, grid, tg, opts)).collect::<Result<_, _>>()?;
    let horizons: Vec<f64> = time_grids.iter().map(|t| t.t_final()).collect();
    let ratios: Vec<f64> = reports.iter().map(|r| r.bound_constant).collect();
    Ok((reports, fit_growth(&horizons, &ratios)))
}
