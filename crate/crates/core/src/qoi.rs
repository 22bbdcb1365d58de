//! Quantities of interest: Lipschitz functionals of a discrete trajectory,
//! each carrying a certified Lipschitz constant with respect to
//! [`norm_l2h1`](crate::metrics::norm_l2h1).
//!
//! Pointwise-in-time functionals only see one time level `k`, while the
//! norm weights that level by its trapezoid weight `tau_k`. Their constants
//! therefore carry a factor `1/sqrt(tau_k)`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, TimeGrid};
use crate::solver::SolutionField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QoIError {
    #[error("time {0} is not a level of the time grid")]
    TimeOffGrid(f64),
    #[error("empty time window [{0}, {1}]")]
    EmptyWindow(f64, f64),
    #[error("region contains no cell centers")]
    EmptyRegion,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Axis-aligned box; a cell belongs to it when its center does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: [f64; 2],
    #[serde(default = "Region::full_axis")]
    pub y: [f64; 2],
}

impl Region {
    fn full_axis() -> [f64; 2] {
        [f64::NEG_INFINITY, f64::INFINITY]
    }

    pub fn interval(x0: f64, x1: f64) -> Self {
        Self { x: [x0, x1], y: Self::full_axis() }
    }

    pub fn rect(x: [f64; 2], y: [f64; 2]) -> Self {
        Self { x, y }
    }

    pub fn cells(&self, grid: &Grid) -> Vec<usize> {
        (0..grid.num_cells())
            .filter(|&c| {
                let [cx, cy] = grid.cell_center(c);
                self.x[0] <= cx && cx <= self.x[1] && self.y[0] <= cy && cy <= self.y[1]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QoIKind {
    SubdomainMass { cells: Vec<usize>, t: f64 },
    TimeWindowMass { t1: f64, t2: f64 },
    SuperlevelMeasure { c: f64, eps: f64, t: f64 },
}

impl QoIKind {
    pub fn label(&self) -> &'static str {
        match self {
            QoIKind::SubdomainMass { .. } => "subdomain_mass",
            QoIKind::TimeWindowMass { .. } => "timewindow_mass",
            QoIKind::SuperlevelMeasure { .. } => "superlevel",
        }
    }
}

/// A functional together with its Lipschitz constant for a fixed grid and
/// time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QoISpec {
    pub kind: QoIKind,
    pub lipschitz_constant: f64,
}

fn level(tg: &TimeGrid, t: f64) -> Result<usize, QoIError> {
    tg.level_of(t).ok_or(QoIError::TimeOffGrid(t))
}

impl QoISpec {
    pub fn subdomain_mass(grid: &Grid, tg: &TimeGrid, region: &Region, t: f64) -> Result<Self, QoIError> {
        let k = level(tg, t)?;
        let cells = region.cells(grid);
        if cells.is_empty() {
            return Err(QoIError::EmptyRegion);
        }
        let measure = cells.len() as f64 * grid.cell_volume();
        Ok(Self { lipschitz_constant: (measure / tg.trapezoid_weight(k)).sqrt(), kind: QoIKind::SubdomainMass { cells, t } })
    }

    pub fn timewindow_mass(grid: &Grid, tg: &TimeGrid, t1: f64, t2: f64) -> Result<Self, QoIError> {
        let k1 = level(tg, t1)?;
        let k2 = level(tg, t2)?;
        if k2 <= k1 {
            return Err(QoIError::EmptyWindow(t1, t2));
        }
        Ok(Self { lipschitz_constant: ((t2 - t1) * grid.domain_measure()).sqrt(), kind: QoIKind::TimeWindowMass { t1, t2 } })
    }

    pub fn superlevel(grid: &Grid, tg: &TimeGrid, c: f64, eps: f64, t: f64) -> Result<Self, QoIError> {
        if !(0.0..=1.0).contains(&c) {
            return Err(QoIError::InvalidParameter(format!("threshold c = {c} outside [0, 1]")));
        }
        if !(eps > 0.0) {
            return Err(QoIError::InvalidParameter(format!("width eps = {eps} must be positive")));
        }
        let k = level(tg, t)?;
        Ok(Self {
            lipschitz_constant: 3.0 / (4.0 * eps) * (grid.domain_measure() / tg.trapezoid_weight(k)).sqrt(),
            kind: QoIKind::SuperlevelMeasure { c, eps, t },
        })
    }

    pub fn evaluate(&self, u: &SolutionField) -> Result<f64, QoIError> {
        match &self.kind {
            QoIKind::SubdomainMass { cells, t } => {
                let k = level(u.time_grid(), *t)?;
                let lvl = u.level(k);
                Ok(u.cell_volume() * cells.iter().map(|&c| lvl[c]).sum::<f64>())
            }
            QoIKind::TimeWindowMass { t1, t2 } => qoi_timewindow_mass(u, *t1, *t2),
            QoIKind::SuperlevelMeasure { c, eps, t } => qoi_superlevel(u, *c, *eps, *t),
        }
    }
}

/// `sum_{cells in region} vol * u(t)`.
pub fn qoi_subdomain_mass(u: &SolutionField, grid: &Grid, region: &Region, t: f64) -> Result<f64, QoIError> {
    let k = level(u.time_grid(), t)?;
    let cells = region.cells(grid);
    if cells.is_empty() {
        return Err(QoIError::EmptyRegion);
    }
    let lvl = u.level(k);
    Ok(u.cell_volume() * cells.iter().map(|&c| lvl[c]).sum::<f64>())
}

/// Trapezoid rule in time of the total mass over `[t1, t2]`.
pub fn qoi_timewindow_mass(u: &SolutionField, t1: f64, t2: f64) -> Result<f64, QoIError> {
    let tg = u.time_grid();
    let k1 = level(tg, t1)?;
    let k2 = level(tg, t2)?;
    if k2 <= k1 {
        return Err(QoIError::EmptyWindow(t1, t2));
    }
    let dt = tg.step_size();
    let mut total = 0.0;
    for k in k1..=k2 {
        let w = if k == k1 || k == k2 { 0.5 * dt } else { dt };
        total += w * u.mass(k);
    }
    Ok(total)
}

/// Cubic smoothstep ramp from 0 at `c - eps` to 1 at `c + eps`.
pub fn chi_eps(v: f64, c: f64, eps: f64) -> f64 {
    if v <= c - eps {
        return 0.0;
    }
    if v >= c + eps {
        return 1.0;
    }
    let r = (v - c + eps) / (2.0 * eps);
    r * r * (3.0 - 2.0 * r)
}

/// Lipschitz constant of [`chi_eps`] in `v`.
pub fn chi_eps_lipschitz(eps: f64) -> f64 {
    3.0 / (4.0 * eps)
}

/// `sum_i vol * chi_eps(u_i(t))`.
pub fn qoi_superlevel(u: &SolutionField, c: f64, eps: f64, t: f64) -> Result<f64, QoIError> {
    if !(eps > 0.0) {
        return Err(QoIError::InvalidParameter(format!("width eps = {eps} must be positive")));
    }
    let k = level(u.time_grid(), t)?;
    Ok(u.cell_volume() * u.level(k).iter().map(|&v| chi_eps(v, c, eps)).sum::<f64>())
}

/// One row of the QoI results table.
#[derive(Debug, Clone, PartialEq)]
pub struct QoIRecord {
    pub run_id: String,
    pub qoi_kind: String,
    pub params_hash: String,
    pub value: f64,
}

pub fn write_qoi_csv<W: Write>(mut out: W, rows: &[QoIRecord]) -> io::Result<()> {
    writeln!(out, "run_id,qoi_kind,params_hash,value")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.run_id, r.qoi_kind, r.params_hash, r.value)?;
    }
    Ok(())
}
