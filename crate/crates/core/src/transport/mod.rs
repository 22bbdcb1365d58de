//! Exact discrete optimal transport, nested distances on scenario trees and
//! the checks built on them.

mod gluing;
mod nested;
mod simplex;

use std::io::{self, Write};

use thiserror::Error;

use crate::grid::{Grid, TimeGrid};
use crate::metrics::MetricError;
use crate::problem::Problem;
use crate::stochastic::{EmpiricalDistribution, StochasticError, TreeError};

pub use gluing::{gluing_bound_check, GluingConfig, GluingReport, GluingRow};
pub use nested::{nested_distance, LpPathCost, MaxPathCost, NestedResult, NodePairCost, ParameterPathCost, PathCost};

/// Marginals may differ in total mass by at most this much.
pub const MASS_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("empty distribution")]
    EmptyDistribution,
    #[error("marginal masses differ: {0} vs {1}")]
    InfeasibleWeights(f64, f64),
    #[error("cost matrix is {got_rows}x{got_cols}, expected {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, got_rows: usize, got_cols: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("trees have different stage structure ({0} vs {1} stages)")]
    StageMismatch(usize, usize),
    #[error("transportation simplex did not terminate")]
    NoTermination,
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
    #[error("solve failed: {0}")]
    Solver(String),
}

/// An optimal coupling with its marginals and cost `sum pi_ij c_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub coupling: Vec<Vec<f64>>,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
    pub cost: f64,
}

impl TransportPlan {
    /// Largest deviation of the coupling's marginals from the inputs.
    pub fn marginal_residual(&self) -> f64 {
        let rows = self.coupling.iter().zip(&self.row_marginal).map(|(r, w)| (r.iter().sum::<f64>() - w).abs());
        let cols =
            (0..self.col_marginal.len()).map(|j| (self.coupling.iter().map(|r| r[j]).sum::<f64>() - self.col_marginal[j]).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "row,col,mass")?;
        for (i, r) in self.coupling.iter().enumerate() {
            for (j, m) in r.iter().enumerate() {
                if *m != 0.0 {
                    writeln!(out, "{i},{j},{m}")?;
                }
            }
        }
        Ok(())
    }
}

fn check_weights(w: &[f64]) -> Result<f64, TransportError> {
    if w.is_empty() {
        return Err(TransportError::EmptyDistribution);
    }
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(TransportError::InvalidInput("weights must be finite and nonnegative".into()));
    }
    Ok(w.iter().sum())
}

/// Exact optimal transport between weight vectors `p` and `q` for the cost
/// matrix `cost` (already raised to the power `r`). Returns
/// `(optimal value)^(1/r)` and an optimal plan.
pub fn wasserstein_discrete(p: &[f64], q: &[f64], cost: &[Vec<f64>], r: f64) -> Result<(f64, TransportPlan), TransportError> {
    if !(r >= 1.0) {
        return Err(TransportError::InvalidInput(format!("order r = {r} must be at least 1")));
    }
    let (sp, sq) = (check_weights(p)?, check_weights(q)?);
    if (sp - sq).abs() > MASS_TOLERANCE {
        return Err(TransportError::InfeasibleWeights(sp, sq));
    }
    let (m, n) = (p.len(), q.len());
    if cost.len() != m || cost.iter().any(|row| row.len() != n) {
        return Err(TransportError::ShapeMismatch {
            rows: m,
            cols: n,
            got_rows: cost.len(),
            got_cols: cost.first().map_or(0, |r| r.len()),
        });
    }
    let flat: Vec<f64> = cost.iter().flatten().copied().collect();
    if flat.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(TransportError::InvalidInput("costs must be finite and nonnegative".into()));
    }
    let sol = simplex::solve(p, q, &flat).ok_or(TransportError::NoTermination)?;
    let plan = TransportPlan {
        coupling: sol.flow.chunks(n).map(|c| c.to_vec()).collect(),
        row_marginal: p.to_vec(),
        col_marginal: q.to_vec(),
        cost: sol.value,
    };
    Ok((sol.value.max(0.0).powf(1.0 / r), plan))
}

/// `|x - y|^r` cost between the atoms of two distributions.
pub fn power_cost(p: &EmpiricalDistribution, q: &EmpiricalDistribution, r: f64) -> Vec<Vec<f64>> {
    p.atoms.iter().map(|x| q.atoms.iter().map(|y| (x - y).abs().powf(r)).collect()).collect()
}

/// Order-`r` Wasserstein distance on the real line via the monotone
/// (quantile) coupling.
pub fn wasserstein_1d(p: &EmpiricalDistribution, q: &EmpiricalDistribution, r: f64) -> Result<f64, TransportError> {
    if !(r >= 1.0) {
        return Err(TransportError::InvalidInput(format!("order r = {r} must be at least 1")));
    }
    let (sp, sq) = (check_weights(&p.weights)?, check_weights(&q.weights)?);
    if (sp - sq).abs() > MASS_TOLERANCE {
        return Err(TransportError::InfeasibleWeights(sp, sq));
    }
    let sorted = |d: &EmpiricalDistribution| {
        let mut v: Vec<(f64, f64)> = d.atoms.iter().copied().zip(d.weights.iter().copied()).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let (a, b) = (sorted(p), sorted(q));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let m = ra.min(rb);
        total += m * (a[i].0 - b[j].0).abs().powf(r);
        ra -= m;
        rb -= m;
        if ra <= rb {
            i += 1;
            if i < a.len() {
                ra = a[i].1;
            }
        } else {
            j += 1;
            if j < b.len() {
                rb = b[j].1;
            }
        }
    }
    Ok(total.max(0.0).powf(1.0 / r))
}

/// Both sides of `|E_P Phi - E_Q Phi| <= L_Phi * L_S * d1(P, Q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrReport {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Compares the mean difference of `Phi o S` samples against the
/// Lipschitz bound. Violations are reported, not raised.
pub fn kr_check(phi_p: &EmpiricalDistribution, phi_q: &EmpiricalDistribution, l_phi: f64, l_s: f64, d1_hat: f64) -> KrReport {
    let lhs = (phi_p.mean() - phi_q.mean()).abs();
    let rhs = l_phi * l_s * d1_hat;
    KrReport { lhs, rhs, slack: rhs - lhs, holds: lhs <= rhs }
}

/// Empirical order-1 Wasserstein distance between equally weighted
/// parameter samples, with `d1`/`d2` as ground metric.
pub fn empirical_parameter_distance(p: &[Problem], q: &[Problem], grid: &Grid, tg: &TimeGrid) -> Result<f64, TransportError> {
    if p.is_empty() || q.is_empty() {
        return Err(TransportError::EmptyDistribution);
    }
    let cost: Vec<Vec<f64>> =
        p.iter().map(|a| q.iter().map(|b| a.distance(b, grid, tg)).collect::<Result<Vec<_>, _>>()).collect::<Result<_, _>>()?;
    let wp = vec![1.0 / p.len() as f64; p.len()];
    let wq = vec![1.0 / q.len() as f64; q.len()];
    Ok(wasserstein_discrete(&wp, &wq, &cost, 1.0)?.0)
}
