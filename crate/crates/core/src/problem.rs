//! Uniform handle over the two problem families, used by the stability
//! harness, the stochastic models and the CLI.

use serde::{Deserialize, Serialize};

use crate::grid::{Grid, TimeGrid};
use crate::metrics::{metric_d1, metric_d2, MetricError};
use crate::solver::{
    solve_p1, solve_p2, HypothesisViolation, ParamFieldP1, ParamFieldP2, SolutionField, SolverError, SolverOptions,
    SpaceTimeField, Validation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    P1,
    P2,
}

/// Coefficient fields that can be perturbed or modulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coefficient {
    Alpha,
    Beta,
    A,
    B,
    Potential,
}

#[derive(Debug, Clone)]
pub enum Problem {
    P1(ParamFieldP1),
    P2(ParamFieldP2),
}

/// Additive change `q = p + s * delta` of a parameter set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Perturbation {
    pub coefficients: Vec<(Coefficient, SpaceTimeField)>,
    pub u0: Option<Vec<f64>>,
}

impl Perturbation {
    pub fn coefficient(target: Coefficient, delta: SpaceTimeField) -> Self {
        Self { coefficients: vec![(target, delta)], u0: None }
    }

    pub fn initial(delta: Vec<f64>) -> Self {
        Self { coefficients: Vec::new(), u0: Some(delta) }
    }

    pub fn and(mut self, other: Perturbation) -> Self {
        self.coefficients.extend(other.coefficients);
        if let Some(d) = other.u0 {
            self.u0 = Some(match self.u0 {
                Some(a) => a.iter().zip(&d).map(|(x, y)| x + y).collect(),
                None => d,
            });
        }
        self
    }
}

impl Problem {
    pub fn kind(&self) -> ProblemKind {
        match self {
            Problem::P1(_) => ProblemKind::P1,
            Problem::P2(_) => ProblemKind::P2,
        }
    }

    pub fn u0(&self) -> &[f64] {
        match self {
            Problem::P1(p) => &p.u0,
            Problem::P2(p) => &p.u0,
        }
    }

    pub fn u0_mut(&mut self) -> &mut Vec<f64> {
        match self {
            Problem::P1(p) => &mut p.u0,
            Problem::P2(p) => &mut p.u0,
        }
    }

    pub fn field(&self, c: Coefficient) -> Option<&SpaceTimeField> {
        match (self, c) {
            (Problem::P1(p), Coefficient::Alpha) => Some(&p.alpha),
            (Problem::P1(p), Coefficient::Beta) => Some(&p.beta),
            (Problem::P2(p), Coefficient::A) => Some(&p.a),
            (Problem::P2(p), Coefficient::B) => Some(&p.b),
            (Problem::P1(p), Coefficient::Potential) => Some(&p.potential),
            (Problem::P2(p), Coefficient::Potential) => Some(&p.potential),
            _ => None,
        }
    }

    pub fn field_mut(&mut self, c: Coefficient) -> Option<&mut SpaceTimeField> {
        match (self, c) {
            (Problem::P1(p), Coefficient::Alpha) => Some(&mut p.alpha),
            (Problem::P1(p), Coefficient::Beta) => Some(&mut p.beta),
            (Problem::P2(p), Coefficient::A) => Some(&mut p.a),
            (Problem::P2(p), Coefficient::B) => Some(&mut p.b),
            (Problem::P1(p), Coefficient::Potential) => Some(&mut p.potential),
            (Problem::P2(p), Coefficient::Potential) => Some(&mut p.potential),
            _ => None,
        }
    }

    /// `self + scale * delta`. Coefficients foreign to the problem kind or
    /// with the wrong number of points are rejected.
    pub fn perturbed(&self, delta: &Perturbation, scale: f64) -> Result<Problem, MetricError> {
        let mut q = self.clone();
        for (c, d) in &delta.coefficients {
            let f = q.field_mut(*c).ok_or(MetricError::ForeignCoefficient(*c))?;
            if f.num_points() != d.num_points() {
                return Err(MetricError::GridMismatch);
            }
            *f = f.add_scaled(d, scale);
        }
        if let Some(d) = &delta.u0 {
            let u0 = q.u0_mut();
            if u0.len() != d.len() {
                return Err(MetricError::GridMismatch);
            }
            for (u, du) in u0.iter_mut().zip(d) {
                *u += scale * du;
            }
        }
        Ok(q)
    }

    pub fn validate(&self, grid: &Grid, mode: Validation) -> Result<Vec<String>, HypothesisViolation> {
        match self {
            Problem::P1(p) => p.validate(grid, mode),
            Problem::P2(p) => p.validate(grid, mode),
        }
    }

    pub fn solve(&self, grid: &Grid, tg: &TimeGrid, opts: &SolverOptions) -> Result<SolutionField, SolverError> {
        match self {
            Problem::P1(p) => solve_p1(p, grid, tg, opts),
            Problem::P2(p) => solve_p2(p, grid, tg, opts),
        }
    }

    /// `d1` or `d2` between parameter sets of the same kind.
    pub fn distance(&self, other: &Problem, grid: &Grid, tg: &TimeGrid) -> Result<f64, MetricError> {
        match (self, other) {
            (Problem::P1(p), Problem::P1(q)) => metric_d1(p, q, grid, tg),
            (Problem::P2(p), Problem::P2(q)) => metric_d2(p, q, grid, tg),
            _ => Err(MetricError::KindMismatch),
        }
    }
}
