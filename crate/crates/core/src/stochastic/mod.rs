//! Random parameter processes revealed stage by stage, Monte Carlo QoI
//! distributions and scenario trees.
//!
//! A model draws one scalar `xi_k` per stage,
//! `xi_k = rho * xi_{k-1} + eta_k` with independent innovations `eta_k`,
//! and adds `weight * xi_k * profile(x)` to the selected coefficients on the
//! steps of stage `k`.

mod tree;

use std::io::{self, Write};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BoundaryTag, Grid, TimeGrid};
use crate::problem::{Coefficient, Problem};
use crate::qoi::{QoIError, QoISpec};
use crate::solver::{HypothesisViolation, SolverError, SolverOptions, SpaceTimeField, Validation};

pub use tree::{ScenarioTree, TreeError, TreeNode};

/// Largest number of leaves a scenario tree may have.
pub const MAX_LEAVES: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StochasticError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Hypothesis(#[from] HypothesisViolation),
    #[error("sample {index}: {source}")]
    Sample { index: u64, source: SolverError },
    #[error("sample {index}: {source}")]
    Qoi { index: u64, source: QoIError },
    #[error("tree would have {0} leaves, more than the limit of 1e6")]
    ExplosionGuard(f64),
    #[error("branching {branching} does not match the {atoms} atoms of the stage-{stage} law")]
    QuantizationMismatch { stage: usize, branching: usize, atoms: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Law of the innovation `eta_k` of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum StageLaw {
    Uniform { lo: f64, hi: f64 },
    Discrete { atoms: Vec<f64>, probs: Vec<f64> },
}

impl StageLaw {
    pub fn point(v: f64) -> Self {
        StageLaw::Discrete { atoms: vec![v], probs: vec![1.0] }
    }

    fn check(&self) -> Result<(), String> {
        match self {
            StageLaw::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(format!("uniform law needs finite lo <= hi, got [{lo}, {hi}]"));
                }
            }
            StageLaw::Discrete { atoms, probs } => {
                if atoms.is_empty() || atoms.len() != probs.len() {
                    return Err("discrete law needs one probability per atom".into());
                }
                if atoms.iter().any(|a| !a.is_finite()) || probs.iter().any(|p| !(*p >= 0.0)) {
                    return Err("discrete law has non-finite atoms or negative probabilities".into());
                }
                if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err("discrete law probabilities must sum to 1".into());
                }
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            StageLaw::Uniform { lo, hi } => (*lo, *hi),
            StageLaw::Discrete { atoms, .. } => {
                (atoms.iter().copied().fold(f64::INFINITY, f64::min), atoms.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            StageLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
            StageLaw::Discrete { atoms, probs } => atoms.iter().zip(probs).map(|(a, p)| a * p).sum(),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            StageLaw::Uniform { lo, hi } => {
                if lo == hi {
                    *lo
                } else {
                    rng.random_range(*lo..*hi)
                }
            }
            StageLaw::Discrete { atoms, probs } => {
                let r: f64 = rng.random();
                let mut acc = 0.0;
                for (a, p) in atoms.iter().zip(probs) {
                    acc += p;
                    if r < acc {
                        return *a;
                    }
                }
                *atoms.last().unwrap()
            }
        }
    }

    /// `branching` equal-probability quantile midpoints (continuous laws),
    /// the atoms themselves (discrete laws with matching count), or the mean
    /// for a single branch.
    pub fn quantize(&self, branching: usize, stage: usize) -> Result<Vec<(f64, f64)>, StochasticError> {
        if branching == 0 {
            return Err(StochasticError::InvalidModel(format!("branching of stage {stage} must be at least 1")));
        }
        if branching == 1 {
            return Ok(vec![(self.mean(), 1.0)]);
        }
        match self {
            StageLaw::Uniform { lo, hi } => {
                let m = branching as f64;
                Ok((0..branching).map(|j| (lo + (hi - lo) * (j as f64 + 0.5) / m, 1.0 / m)).collect())
            }
            StageLaw::Discrete { atoms, probs } => {
                if atoms.len() != branching {
                    return Err(StochasticError::QuantizationMismatch { stage, branching, atoms: atoms.len() });
                }
                Ok(atoms.iter().copied().zip(probs.iter().copied()).collect())
            }
        }
    }
}

/// Spatial shape of a modulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Profile {
    Constant,
    /// The x coordinate.
    LinearX,
    /// Separable Gaussian bump `exp(-|x - center|^2 / (2 width^2))`.
    Bump {
        center: [f64; 2],
        width: f64,
    },
}

impl Profile {
    pub fn evaluate(&self, x: [f64; 2], dim: usize) -> f64 {
        match *self {
            Profile::Constant => 1.0,
            Profile::LinearX => x[0],
            Profile::Bump { center, width } => {
                let g = |d: f64| (-d * d / (2.0 * width * width)).exp();
                let gy = if dim == 2 { g(x[1] - center[1]) } else { 1.0 };
                g(x[0] - center[0]) * gy
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub target: Coefficient,
    pub profile: Profile,
    pub weight: f64,
}

/// Stagewise random perturbation of a deterministic template.
#[derive(Debug, Clone)]
pub struct RandomParamModel {
    base: Problem,
    grid: Grid,
    time_grid: TimeGrid,
    laws: Vec<StageLaw>,
    memory: f64,
    modulations: Vec<Modulation>,
    root_seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the stream of sample `index`.
pub fn sample_seed(root_seed: u64, index: u64) -> u64 {
    splitmix64(root_seed ^ splitmix64(index))
}

impl RandomParamModel {
    /// `laws` holds one law per stage, or a single law shared by all stages.
    /// `memory` is the autoregressive coefficient `rho` in `[0, 1)`.
    ///
    /// The model is rejected unless the realizations at the extreme values
    /// of every `xi_k` pass strict validation. Since coefficients are affine
    /// in `xi_k` and the admissible sets are intervals, this covers every
    /// realization.
    pub fn new(
        base: Problem,
        grid: Grid,
        time_grid: TimeGrid,
        laws: Vec<StageLaw>,
        memory: f64,
        modulations: Vec<Modulation>,
        root_seed: u64,
    ) -> Result<Self, StochasticError> {
        let stages = time_grid.num_stages();
        let laws = match laws.len() {
            1 => vec![laws[0].clone(); stages],
            n if n == stages => laws,
            n => return Err(StochasticError::InvalidModel(format!("{n} laws for {stages} stages"))),
        };
        for l in &laws {
            l.check().map_err(StochasticError::InvalidModel)?;
        }
        if !(0.0..1.0).contains(&memory) {
            return Err(StochasticError::InvalidModel(format!("memory {memory} outside [0, 1)")));
        }
        for m in &modulations {
            if base.field(m.target).is_none() {
                return Err(StochasticError::InvalidModel(format!("{:?} is not a coefficient of this problem", m.target)));
            }
            if !m.weight.is_finite() {
                return Err(StochasticError::InvalidModel("modulation weight must be finite".into()));
            }
        }
        let model = Self { base, grid, time_grid, laws, memory, modulations, root_seed };
        let (lo, hi) = model.xi_ranges();
        model.realize(&lo)?.validate(&model.grid, Validation::Strict)?;
        model.realize(&hi)?.validate(&model.grid, Validation::Strict)?;
        Ok(model)
    }

    pub fn base(&self) -> &Problem {
        &self.base
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn laws(&self) -> &[StageLaw] {
        &self.laws
    }

    pub fn memory(&self) -> f64 {
        self.memory
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn num_stages(&self) -> usize {
        self.laws.len()
    }

    /// Same model with a different root seed.
    pub fn with_seed(&self, root_seed: u64) -> Self {
        Self { root_seed, ..self.clone() }
    }

    /// Componentwise smallest and largest attainable `xi` paths.
    fn xi_ranges(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(self.laws.len());
        let mut hi = Vec::with_capacity(self.laws.len());
        let (mut a, mut b) = (0.0, 0.0);
        for law in &self.laws {
            let (l, h) = law.bounds();
            a = self.memory * a + l;
            b = self.memory * b + h;
            lo.push(a);
            hi.push(b);
        }
        (lo, hi)
    }

    fn points(&self, target: Coefficient) -> Vec<[f64; 2]> {
        let g = &self.grid;
        match target {
            Coefficient::A => g.faces_with_tag(BoundaryTag::Inflow).map(|(_, f)| g.face_center(f)).collect(),
            Coefficient::B => g.faces_with_tag(BoundaryTag::Outflow).map(|(_, f)| g.face_center(f)).collect(),
            _ => (0..g.num_cells()).map(|c| g.cell_center(c)).collect(),
        }
    }

    /// Parameter set for one `xi` path (one value per stage).
    pub fn realize(&self, xi: &[f64]) -> Result<Problem, StochasticError> {
        if xi.len() != self.num_stages() {
            return Err(StochasticError::InvalidModel(format!("path has {} stages, model has {}", xi.len(), self.num_stages())));
        }
        let mut p = self.base.clone();
        let stage_starts = &self.time_grid.stage_steps()[..self.num_stages()];
        let mut targets: Vec<Coefficient> = self.modulations.iter().map(|m| m.target).collect();
        targets.sort_by_key(|c| *c as u8);
        targets.dedup();
        for target in targets {
            let points = self.points(target);
            let shapes: Vec<(f64, Vec<f64>)> = self
                .modulations
                .iter()
                .filter(|m| m.target == target)
                .map(|m| (m.weight, points.iter().map(|&x| m.profile.evaluate(x, self.grid.dim())).collect()))
                .collect();
            let field = p.field_mut(target).expect("checked at construction");
            let mut starts: Vec<usize> = field.segments().iter().map(|(s, _)| *s).chain(stage_starts.iter().copied()).collect();
            starts.sort_unstable();
            starts.dedup();
            let slices = starts
                .iter()
                .map(|&s| {
                    let k = xi[self.time_grid.stage_of_step(s)];
                    let mut v = field.at_step(s).to_vec();
                    for (w, shape) in &shapes {
                        for (vi, si) in v.iter_mut().zip(shape) {
                            *vi += w * k * si;
                        }
                    }
                    v
                })
                .collect();
            *field = SpaceTimeField::piecewise(starts, slices);
        }
        Ok(p)
    }

    /// The `xi` path of sample `index`.
    pub fn sample_xi(&self, index: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(self.root_seed, index));
        let mut prev = 0.0;
        self.laws
            .iter()
            .map(|law| {
                prev = self.memory * prev + law.draw(&mut rng);
                prev
            })
            .collect()
    }

    /// Parameter set of sample `index`; deterministic in `(root_seed, index)`.
    pub fn sample_path(&self, index: u64) -> Result<Problem, StochasticError> {
        let p = self.realize(&self.sample_xi(index))?;
        p.validate(&self.grid, Validation::Strict)?;
        Ok(p)
    }

    /// Scenario tree with `branching[k]` children per node at stage `k + 1`.
    pub fn build_scenario_tree(&self, branching: &[usize]) -> Result<ScenarioTree, StochasticError> {
        self.build_conditional_tree(&[], branching)
    }

    /// Tree of the remaining stages after observing the first
    /// `history.len()` values of `xi`. `branching` covers all stages; only
    /// its entries for unobserved stages are used.
    pub fn build_conditional_tree(&self, history: &[f64], branching: &[usize]) -> Result<ScenarioTree, StochasticError> {
        let n = self.num_stages();
        if branching.len() != n {
            return Err(StochasticError::InvalidModel(format!("{} branching factors for {n} stages", branching.len())));
        }
        if history.len() > n {
            return Err(StochasticError::InvalidModel("history longer than the horizon".into()));
        }
        let t = history.len();
        let leaves: f64 = branching[t..].iter().map(|&b| b as f64).product();
        if leaves > MAX_LEAVES as f64 {
            return Err(StochasticError::ExplosionGuard(leaves));
        }
        let quantized: Vec<Vec<(f64, f64)>> =
            (t..n).map(|k| self.laws[k].quantize(branching[k], k + 1)).collect::<Result<_, _>>()?;
        let stage_times = self.time_grid.stage_times();
        let (mut tree, start) = if t == 0 {
            (ScenarioTree::new(stage_times), 0.0)
        } else {
            let root_values = vec![history[t - 1]];
            let past = history[..t - 1].iter().map(|&v| vec![v]).collect();
            (ScenarioTree::with_history(stage_times, past, root_values), history[t - 1])
        };
        let mut frontier = vec![(tree.root(), start)];
        for atoms in &quantized {
            let mut next = Vec::with_capacity(frontier.len() * atoms.len());
            for &(node, prev) in &frontier {
                for &(eta, prob) in atoms {
                    let v = self.memory * prev + eta;
                    next.push((tree.add_child(node, prob, vec![v])?, v));
                }
            }
            frontier = next;
        }
        Ok(tree)
    }

    /// `xi` path of a tree node: history plus the values along the branch.
    pub fn xi_of_path(path: &[Vec<f64>]) -> Vec<f64> {
        path.iter().map(|v| v[0]).collect()
    }
}

/// Weighted atoms on the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn uniform(atoms: Vec<f64>) -> Self {
        let w = 1.0 / atoms.len() as f64;
        Self { weights: vec![w; atoms.len()], atoms }
    }

    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self, StochasticError> {
        let d = Self { atoms, weights };
        d.check().map_err(StochasticError::InvalidModel)?;
        Ok(d)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.atoms.is_empty() || self.atoms.len() != self.weights.len() {
            return Err("distribution needs one weight per atom".into());
        }
        if self.atoms.iter().any(|a| !a.is_finite()) {
            return Err("atoms must be finite".into());
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err("weights must be nonnegative and sum to 1".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.atoms.iter().zip(&self.weights).map(|(a, w)| w * (a - m) * (a - m)).sum()
    }

    /// Pools equally weighted sample sets into one equally weighted set.
    pub fn concat_uniform(parts: &[EmpiricalDistribution]) -> Self {
        Self::uniform(parts.iter().flat_map(|p| p.atoms.iter().copied()).collect())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "atom,weight")?;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            writeln!(out, "{a},{w}")?;
        }
        Ok(())
    }
}

/// Equally weighted QoI values of samples `0..n_samples`.
pub fn monte_carlo_qoi(
    model: &RandomParamModel,
    qoi: &QoISpec,
    n_samples: u64,
    opts: &SolverOptions,
) -> Result<EmpiricalDistribution, StochasticError> {
    monte_carlo_range(model, qoi, 0..n_samples, opts)
}

/// Equally weighted QoI values of the samples with the given indices. The
/// result does not depend on the number of threads.
pub fn monte_carlo_range(
    model: &RandomParamModel,
    qoi: &QoISpec,
    indices: Range<u64>,
    opts: &SolverOptions,
) -> Result<EmpiricalDistribution, StochasticError> {
    if indices.is_empty() {
        return Err(StochasticError::InvalidModel("at least one sample is required".into()));
    }
    let values: Vec<f64> = indices
        .into_par_iter()
        .map(|i| {
            let p = model.sample_path(i)?;
            let u =
                p.solve(&model.grid, &model.time_grid, opts).map_err(|source| StochasticError::Sample { index: i, source })?;
            qoi.evaluate(&u).map_err(|source| StochasticError::Qoi { index: i, source })
        })
        .collect::<Result<_, _>>()?;
    Ok(EmpiricalDistribution::uniform(values))
}
