//! Conditional QoI discrepancy versus the conditional nested distance as
//! information is revealed.

use std::io::{self, Write};

use rayon::prelude::*;

use super::{nested_distance, ParameterPathCost, TransportError};
use crate::metrics::GrowthFit;
use crate::qoi::QoISpec;
use crate::solver::SolverOptions;
use crate::stochastic::{RandomParamModel, ScenarioTree};

/// Allowed relative increase of the ratio between consecutive observation times.
pub const MONOTONE_SLACK: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct GluingConfig {
    /// Children per node at each stage.
    pub branching: Vec<usize>,
    /// Number of revealed stages at each observation time (0 = nothing observed).
    pub observed_stages: Vec<usize>,
    /// Fitted stability growth `c1 exp(c2 T / 2)`.
    pub growth: GrowthFit,
    pub l_phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GluingRow {
    pub observed_stages: usize,
    pub time: f64,
    /// `|E_P[Phi | F_t] - E_Q[Phi | F_t]|`.
    pub lhs: f64,
    /// `nd_2` of the conditional trees.
    pub nested: f64,
    /// `lhs / nested`, undefined when the nested distance vanishes.
    pub ratio: Option<f64>,
    /// `c1 exp(c2 (T - t) / 2) max(1, sqrt(C_H (T - t)))`.
    pub factor: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GluingReport {
    /// Common observed `xi` path the trees are conditioned on.
    pub history: Vec<f64>,
    /// Empirical `max nd_2^2 / (T - t)` over the observation times.
    pub c_h: f64,
    pub rows: Vec<GluingRow>,
    /// Ratios are non-increasing in `t` up to [`MONOTONE_SLACK`].
    pub monotone: bool,
}

impl GluingReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "observed_stages,t,lhs,nested,ratio,factor,rhs,holds")?;
        for r in &self.rows {
            let ratio = r.ratio.map_or(String::new(), |v| v.to_string());
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.observed_stages, r.time, r.lhs, r.nested, ratio, r.factor, r.rhs, r.holds
            )?;
        }
        Ok(())
    }
}

/// The middle branch of `model`'s tree: at each stage the child of index
/// `branching / 2`.
fn reference_history(model: &RandomParamModel, branching: &[usize]) -> Result<Vec<f64>, TransportError> {
    let tree = model.build_scenario_tree(branching)?;
    let mut node = tree.root();
    let mut xi = Vec::new();
    while !tree.children(node).is_empty() {
        let ch = tree.children(node);
        node = ch[ch.len() / 2];
        xi.push(tree.nodes()[node].values[0]);
    }
    Ok(xi)
}

fn conditional_mean(
    model: &RandomParamModel,
    tree: &ScenarioTree,
    qoi: &QoISpec,
    opts: &SolverOptions,
) -> Result<f64, TransportError> {
    let leaves = tree.leaf_probabilities();
    let terms: Vec<f64> = leaves
        .par_iter()
        .map(|&(leaf, prob)| {
            let params = model.realize(&RandomParamModel::xi_of_path(&tree.path(leaf)))?;
            let u = params.solve(model.grid(), model.time_grid(), opts).map_err(|e| TransportError::Solver(e.to_string()))?;
            let v = qoi.evaluate(&u).map_err(|e| TransportError::Solver(e.to_string()))?;
            Ok(prob * v)
        })
        .collect::<Result<_, TransportError>>()?;
    Ok(terms.iter().sum())
}

/// Conditions both models on a common history (the middle branch of `p`'s
/// tree) at each observation time and compares the QoI discrepancy with the
/// conditional `nd_2`.
pub fn gluing_bound_check(
    p: &RandomParamModel,
    q: &RandomParamModel,
    qoi: &QoISpec,
    cfg: &GluingConfig,
    opts: &SolverOptions,
) -> Result<GluingReport, TransportError> {
    if p.time_grid() != q.time_grid() {
        return Err(TransportError::StageMismatch(p.num_stages(), q.num_stages()));
    }
    if p.grid().num_cells() != q.grid().num_cells() {
        return Err(TransportError::InvalidInput("models live on different grids".into()));
    }
    let n = p.num_stages();
    if cfg.observed_stages.iter().any(|&s| s > n) {
        return Err(TransportError::InvalidInput(format!("cannot observe more than {n} stages")));
    }
    let history = reference_history(p, &cfg.branching)?;
    let stage_times = p.time_grid().stage_times();
    let horizon = p.time_grid().t_final();
    let cost = ParameterPathCost { left: p, right: q };

    let mut raw = Vec::with_capacity(cfg.observed_stages.len());
    for &s in &cfg.observed_stages {
        let tp = p.build_conditional_tree(&history[..s], &cfg.branching)?;
        let tq = q.build_conditional_tree(&history[..s], &cfg.branching)?;
        let lhs = (conditional_mean(p, &tp, qoi, opts)? - conditional_mean(q, &tq, qoi, opts)?).abs();
        let nested = nested_distance(&tp, &tq, 2.0, &cost)?.distance;
        raw.push((s, stage_times[s], lhs, nested));
    }

    let c_h = raw.iter().filter(|r| horizon - r.1 > 0.0).map(|r| r.3 * r.3 / (horizon - r.1)).fold(0.0, f64::max);
    let rows: Vec<GluingRow> = raw
        .into_iter()
        .map(|(s, t, lhs, nested)| {
            let tau = horizon - t;
            let factor = cfg.growth.predict(tau) * (c_h * tau).sqrt().max(1.0);
            let rhs = cfg.l_phi * factor * nested;
            GluingRow {
                observed_stages: s,
                time: t,
                lhs,
                nested,
                ratio: (nested > 1e-14).then(|| lhs / nested),
                factor,
                rhs,
                holds: lhs <= rhs,
            }
        })
        .collect();
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    let monotone = ratios.windows(2).all(|w| w[1] <= w[0] * (1.0 + MONOTONE_SLACK));
    Ok(GluingReport { history, c_h, rows, monotone })
}
