//! Coefficient sets for the reaction problem (P1) and the inflow/outflow
//! problem (P2), together with the hypothesis checks both solvers rely on.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::grid::{BoundaryTag, Grid};

/// Scalar field that is piecewise constant in time. Each segment starts at a
/// step index and holds one value per spatial point (cell or boundary face).
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    segments: Vec<(usize, Vec<f64>)>,
}

impl SpaceTimeField {
    pub fn constant(points: usize, value: f64) -> Self {
        Self::stationary(vec![value; points])
    }

    pub fn stationary(values: Vec<f64>) -> Self {
        Self { segments: vec![(0, values)] }
    }

    /// One slice per segment; `starts[0]` must be 0 and starts must increase.
    pub fn piecewise(starts: Vec<usize>, slices: Vec<Vec<f64>>) -> Self {
        assert_eq!(starts.len(), slices.len(), "one slice per segment");
        assert!(!starts.is_empty() && starts[0] == 0, "first segment must start at step 0");
        assert!(starts.windows(2).all(|w| w[0] < w[1]), "segment starts must increase");
        let n = slices[0].len();
        assert!(slices.iter().all(|s| s.len() == n), "all slices must have the same length");
        Self { segments: starts.into_iter().zip(slices).collect() }
    }

    pub fn num_points(&self) -> usize {
        self.segments[0].1.len()
    }

    pub fn segments(&self) -> &[(usize, Vec<f64>)] {
        &self.segments
    }

    fn segment_index(&self, step: usize) -> usize {
        self.segments.partition_point(|(s, _)| *s <= step) - 1
    }

    /// Values on the step interval `[t_k, t_{k+1}]`.
    pub fn at_step(&self, step: usize) -> &[f64] {
        &self.segments[self.segment_index(step)].1
    }

    pub fn min(&self) -> f64 {
        self.segments.iter().flat_map(|(_, v)| v.iter().copied()).fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.segments.iter().flat_map(|(_, v)| v.iter().copied()).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.segments.iter().all(|(_, v)| v.iter().all(|x| x.is_finite()))
    }

    /// Sorted union of the segment starts of two fields.
    pub fn joint_breakpoints(&self, other: &Self) -> Vec<usize> {
        let mut b: Vec<usize> = self.segments.iter().chain(&other.segments).map(|(s, _)| *s).collect();
        b.sort_unstable();
        b.dedup();
        b
    }

    /// Pointwise `self + scale * other`, on the joint breakpoints.
    pub fn add_scaled(&self, other: &Self, scale: f64) -> Self {
        assert_eq!(self.num_points(), other.num_points());
        let starts = self.joint_breakpoints(other);
        let slices =
            starts.iter().map(|&s| self.at_step(s).iter().zip(other.at_step(s)).map(|(a, b)| a + scale * b).collect()).collect();
        Self::piecewise(starts, slices)
    }
}

/// Volume-filling mobility `f`, stored as a product `f = p * q` with `p`
/// nondecreasing and vanishing at 0 and `q` nonincreasing and vanishing at 1.
/// The split drives the two-sided upwinding of the drift flux.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MobilityFunction {
    /// `f = 0`.
    Zero,
    /// `f(u) = scale * u * (1 - u)`.
    Logistic { scale: f64 },
}

impl MobilityFunction {
    pub fn evaluate(&self, u: f64) -> f64 {
        self.increasing_part(u) * self.decreasing_part(u)
    }

    /// `p(u)`.
    pub fn increasing_part(&self, u: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Logistic { scale } => scale * u,
        }
    }

    /// `q(u)`.
    pub fn decreasing_part(&self, u: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Logistic { .. } => 1.0 - u,
        }
    }

    /// `L_f`, the Lipschitz constant of `f` on `[0, 1]`.
    pub fn lipschitz_constant(&self) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Logistic { scale } => scale.abs(),
        }
    }

    /// `(L_p, max p, L_q, max q)` on `[0, 1]`.
    pub(crate) fn split_bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Self::Zero => (0.0, 0.0, 0.0, 0.0),
            Self::Logistic { scale } => (scale, scale, 1.0, 1.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero) || matches!(self, Self::Logistic { scale } if *scale == 0.0)
    }

    fn check(&self) -> Result<(), String> {
        match *self {
            Self::Zero => Ok(()),
            Self::Logistic { scale } if scale >= 0.0 && scale.is_finite() => Ok(()),
            Self::Logistic { scale } => Err(format!("logistic mobility scale must be finite and >= 0, got {scale}")),
        }
    }
}

/// Inflow gate `g` with `g(0) = 1`, `g(1) = 0`, nonincreasing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateFunction {
    /// `g(u) = 1 - u`.
    Linear,
    /// `g(u) = (1 - u)^exponent`, exponent >= 1.
    Power { exponent: f64 },
}

impl GateFunction {
    pub fn evaluate(&self, u: f64) -> f64 {
        match *self {
            Self::Linear => 1.0 - u,
            Self::Power { exponent } => (1.0 - u).max(0.0).powf(exponent),
        }
    }

    /// `L_g` on `[0, 1]`.
    pub fn lipschitz_constant(&self) -> f64 {
        match *self {
            Self::Linear => 1.0,
            Self::Power { exponent } => exponent,
        }
    }

    fn check(&self) -> Result<(), String> {
        match *self {
            Self::Linear => Ok(()),
            Self::Power { exponent } if exponent >= 1.0 && exponent.is_finite() => Ok(()),
            Self::Power { exponent } => Err(format!("gate exponent must be >= 1, got {exponent}")),
        }
    }
}

/// Additional volumetric source `S(t, x)` evaluated at cell centers; used for
/// manufactured-solution verification.
#[derive(Clone)]
pub struct Forcing(pub Arc<dyn Fn(f64, [f64; 2]) -> f64 + Send + Sync>);

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Forcing(..)")
    }
}

/// Coefficients of the reaction problem.
#[derive(Debug, Clone)]
pub struct ParamFieldP1 {
    pub alpha: SpaceTimeField,
    pub beta: SpaceTimeField,
    pub potential: SpaceTimeField,
    pub mobility: MobilityFunction,
    pub u0: Vec<f64>,
    /// Declared lower bounds `alpha_0`, `beta_0`.
    pub alpha0: f64,
    pub beta0: f64,
    pub forcing: Option<Forcing>,
}

/// Coefficients of the inflow/outflow problem. `a` lives on the inflow faces
/// and `b` on the outflow faces, both in canonical face order.
#[derive(Debug, Clone)]
pub struct ParamFieldP2 {
    pub a: SpaceTimeField,
    pub b: SpaceTimeField,
    pub potential: SpaceTimeField,
    pub mobility: MobilityFunction,
    pub gate: GateFunction,
    pub u0: Vec<f64>,
    pub a0: f64,
    pub b0: f64,
}

/// Strict mode enforces every hypothesis; test mode admits the boundary
/// cases analytic oracles live on (zero rates, empty inflow, non-harmonic
/// potentials reported as warnings).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Validation {
    #[default]
    Strict,
    Test,
}

/// Named hypothesis on the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    H1,
    H2,
    H3,
    H4,
    H1p,
    H2p,
    H3p,
    H4p,
    H5p,
    /// Mobility conditions for the inflow/outflow problem.
    Hf,
    /// Array sizes consistent with the grid.
    Shape,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::H1 => "H1 (0 <= u0 <= 1)",
            Self::H2 => "H2 (bounded potential)",
            Self::H3 => "H3 (alpha >= alpha0 > 0, beta >= beta0 > 0)",
            Self::H4 => "H4 (f(0) = f(1) = 0, f >= 0, Lipschitz)",
            Self::H1p => "H1' (0 <= u0 <= 1)",
            Self::H2p => "H2' (disjoint inflow/outflow, nonempty outflow)",
            Self::H3p => "H3' (g decreasing, g(0) = 1, g(1) = 0)",
            Self::H4p => "H4' (a0 <= a <= 1, b0 <= b <= 1, a0, b0 > 0)",
            Self::H5p => "H5' (harmonic potential)",
            Self::Hf => "Hf (f(0) = f(1) = 0, f >= 0, Lipschitz)",
            Self::Shape => "shape",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("hypothesis {hypothesis} violated: {message}")]
pub struct HypothesisViolation {
    pub hypothesis: Hypothesis,
    pub message: String,
}

fn violation(hypothesis: Hypothesis, message: impl Into<String>) -> HypothesisViolation {
    HypothesisViolation { hypothesis, message: message.into() }
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<(), HypothesisViolation> {
    if got != expected {
        return Err(violation(Hypothesis::Shape, format!("{what} has {got} values, grid needs {expected}")));
    }
    Ok(())
}

fn check_initial(u0: &[f64], h: Hypothesis) -> Result<(), HypothesisViolation> {
    if let Some((i, v)) = u0.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(violation(h, format!("u0[{i}] = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Largest discrete Laplacian magnitude over cells that touch no boundary.
pub fn max_interior_laplacian(grid: &Grid, v: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for cell in 0..grid.num_cells() {
        if !grid.is_interior_cell(cell) {
            continue;
        }
        let mut lap = 0.0;
        for &fid in grid.cell_faces(cell) {
            let face = &grid.faces()[fid];
            let n = grid.neighbor_across(cell, fid).expect("interior cell");
            lap += face.area / face.distance * (v[n] - v[cell]);
        }
        worst = worst.max((lap / grid.cell_volume()).abs());
    }
    worst
}

pub const HARMONIC_TOLERANCE: f64 = 1e-8;

impl ParamFieldP1 {
    /// Stationary coefficients built from constants.
    pub fn uniform(grid: &Grid, alpha: f64, beta: f64, mobility: MobilityFunction, u0: f64) -> Self {
        let n = grid.num_cells();
        Self {
            alpha: SpaceTimeField::constant(n, alpha),
            beta: SpaceTimeField::constant(n, beta),
            potential: SpaceTimeField::constant(n, 0.0),
            mobility,
            u0: vec![u0; n],
            alpha0: alpha,
            beta0: beta,
            forcing: None,
        }
    }

    /// Checks H1-H4; returns warnings that did not fail validation.
    pub fn validate(&self, grid: &Grid, mode: Validation) -> Result<Vec<String>, HypothesisViolation> {
        let n = grid.num_cells();
        check_len("u0", self.u0.len(), n)?;
        check_len("alpha", self.alpha.num_points(), n)?;
        check_len("beta", self.beta.num_points(), n)?;
        check_len("potential", self.potential.num_points(), n)?;
        check_initial(&self.u0, Hypothesis::H1)?;
        if !self.potential.is_finite() {
            return Err(violation(Hypothesis::H2, "potential has non-finite values"));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(violation(Hypothesis::H3, "rates have non-finite values"));
        }
        match mode {
            Validation::Strict => {
                if !(self.alpha0 > 0.0) || !(self.beta0 > 0.0) {
                    return Err(violation(
                        Hypothesis::H3,
                        format!("alpha0 = {}, beta0 = {} must be positive", self.alpha0, self.beta0),
                    ));
                }
                if self.alpha.min() < self.alpha0 {
                    return Err(violation(
                        Hypothesis::H3,
                        format!("min alpha = {} < alpha0 = {}", self.alpha.min(), self.alpha0),
                    ));
                }
                if self.beta.min() < self.beta0 {
                    return Err(violation(Hypothesis::H3, format!("min beta = {} < beta0 = {}", self.beta.min(), self.beta0)));
                }
            }
            Validation::Test => {
                if self.alpha.min() < 0.0 || self.beta.min() < 0.0 {
                    return Err(violation(Hypothesis::H3, "rates must be nonnegative"));
                }
            }
        }
        self.mobility.check().map_err(|m| violation(Hypothesis::H4, m))?;
        Ok(Vec::new())
    }
}

impl ParamFieldP2 {
    /// Stationary coefficients built from constants.
    pub fn uniform(grid: &Grid, a: f64, b: f64, mobility: MobilityFunction, gate: GateFunction, u0: f64) -> Self {
        let n_in = grid.faces_with_tag(BoundaryTag::Inflow).count();
        let n_out = grid.faces_with_tag(BoundaryTag::Outflow).count();
        Self {
            a: SpaceTimeField::constant(n_in, a),
            b: SpaceTimeField::constant(n_out, b),
            potential: SpaceTimeField::constant(grid.num_cells(), 0.0),
            mobility,
            gate,
            u0: vec![u0; grid.num_cells()],
            a0: a,
            b0: b,
        }
    }

    /// Checks H1'-H5' and the mobility conditions.
    pub fn validate(&self, grid: &Grid, mode: Validation) -> Result<Vec<String>, HypothesisViolation> {
        let mut warnings = Vec::new();
        let n = grid.num_cells();
        let n_in = grid.faces_with_tag(BoundaryTag::Inflow).count();
        let n_out = grid.faces_with_tag(BoundaryTag::Outflow).count();
        check_len("u0", self.u0.len(), n)?;
        check_len("potential", self.potential.num_points(), n)?;
        check_len("a", self.a.num_points(), n_in)?;
        check_len("b", self.b.num_points(), n_out)?;
        check_initial(&self.u0, Hypothesis::H1p)?;

        if n_out == 0 {
            match mode {
                Validation::Strict => return Err(violation(Hypothesis::H2p, "outflow boundary is empty")),
                Validation::Test => warnings.push("outflow boundary is empty".to_string()),
            }
        }
        if n_in == 0 {
            match mode {
                Validation::Strict => return Err(violation(Hypothesis::H2p, "inflow boundary is empty")),
                Validation::Test => warnings.push("inflow boundary is empty".to_string()),
            }
        }

        self.gate.check().map_err(|m| violation(Hypothesis::H3p, m))?;
        self.mobility.check().map_err(|m| violation(Hypothesis::Hf, m))?;

        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(violation(Hypothesis::H4p, "boundary rates have non-finite values"));
        }
        let (lo_a, lo_b) = match mode {
            Validation::Strict => {
                if !(self.a0 > 0.0) {
                    return Err(violation(Hypothesis::H4p, format!("a0 = {} must be positive", self.a0)));
                }
                if !(self.b0 > 0.0) {
                    return Err(violation(Hypothesis::H4p, format!("b0 = {} must be positive", self.b0)));
                }
                (self.a0, self.b0)
            }
            Validation::Test => (0.0, 0.0),
        };
        if n_in > 0 && (self.a.min() < lo_a || self.a.max() > 1.0) {
            return Err(violation(
                Hypothesis::H4p,
                format!("a ranges over [{}, {}], outside [{lo_a}, 1]", self.a.min(), self.a.max()),
            ));
        }
        if n_out > 0 && (self.b.min() < lo_b || self.b.max() > 1.0) {
            return Err(violation(
                Hypothesis::H4p,
                format!("b ranges over [{}, {}], outside [{lo_b}, 1]", self.b.min(), self.b.max()),
            ));
        }

        if !self.potential.is_finite() {
            return Err(violation(Hypothesis::H5p, "potential has non-finite values"));
        }
        for (start, v) in self.potential.segments() {
            let lap = max_interior_laplacian(grid, v);
            if lap > HARMONIC_TOLERANCE {
                let msg = format!("discrete Laplacian of V reaches {lap:e} on the segment starting at step {start}");
                match mode {
                    Validation::Strict => return Err(violation(Hypothesis::H5p, msg)),
                    Validation::Test => warnings.push(msg),
                }
            }
        }
        Ok(warnings)
    }
}
