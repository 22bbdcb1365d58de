use rayon::prelude::*;

use super::{wasserstein_discrete, TransportError};
use crate::stochastic::{RandomParamModel, ScenarioTree};

/// Ground distance between two full paths, one entry per stage.
pub trait PathCost: Sync {
    fn distance(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, TransportError>;
}

/// `(sum over stages and components |a - b|^p)^(1/p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpPathCost {
    pub p: f64,
}

impl PathCost for LpPathCost {
    fn distance(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, TransportError> {
        let s: f64 = a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs().powf(self.p))).sum();
        Ok(s.powf(1.0 / self.p))
    }
}

/// Largest componentwise difference over all stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxPathCost;

impl PathCost for MaxPathCost {
    fn distance(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, TransportError> {
        Ok(a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs())).fold(0.0, f64::max))
    }
}

/// Parameter-space distance (`d1` or `d2`) between the realizations of two
/// `xi` paths under two models on the same grid and time grid.
#[derive(Debug, Clone, Copy)]
pub struct ParameterPathCost<'a> {
    pub left: &'a RandomParamModel,
    pub right: &'a RandomParamModel,
}

impl PathCost for ParameterPathCost<'_> {
    fn distance(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, TransportError> {
        let pa = self.left.realize(&RandomParamModel::xi_of_path(a))?;
        let pb = self.right.realize(&RandomParamModel::xi_of_path(b))?;
        Ok(pa.distance(&pb, self.left.grid(), self.left.time_grid())?)
    }
}

/// Optimal value of the subproblem rooted at a node pair (`r`-th power).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodePairCost {
    pub stage: usize,
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestedResult {
    pub distance: f64,
    pub stagewise_costs: Vec<NodePairCost>,
    /// Wasserstein distance between the leaf-path laws, ignoring the filtrations.
    pub flat_wasserstein: f64,
}

fn nodes_by_stage(t: &ScenarioTree) -> Vec<Vec<usize>> {
    let mut by = vec![Vec::new(); t.num_stages() + 1];
    for n in t.nodes() {
        by[n.stage].push(n.id);
    }
    by
}

/// Nested distance of order `r` by backward recursion over node pairs.
pub fn nested_distance(
    t1: &ScenarioTree,
    t2: &ScenarioTree,
    r: f64,
    cost: &dyn PathCost,
) -> Result<NestedResult, TransportError> {
    if !(r >= 1.0) {
        return Err(TransportError::InvalidInput(format!("order r = {r} must be at least 1")));
    }
    t1.check()?;
    t2.check()?;
    if t1.num_stages() != t2.num_stages() || t1.root_stage() != t2.root_stage() {
        return Err(TransportError::StageMismatch(t1.num_stages(), t2.num_stages()));
    }
    let last = t1.num_stages();
    let first = t1.root_stage();
    let (s1, s2) = (nodes_by_stage(t1), nodes_by_stage(t2));
    let n2 = t2.nodes().len();
    let mut value = vec![f64::NAN; t1.nodes().len() * n2];
    let mut stagewise = Vec::new();

    let leaf_pairs: Vec<(usize, usize)> = s1[last].iter().flat_map(|&a| s2[last].iter().map(move |&b| (a, b))).collect();
    let leaf_values: Vec<f64> = leaf_pairs
        .par_iter()
        .map(|&(a, b)| Ok(cost.distance(&t1.path(a), &t2.path(b))?.powf(r)))
        .collect::<Result<_, TransportError>>()?;
    for (&(a, b), &v) in leaf_pairs.iter().zip(&leaf_values) {
        value[a * n2 + b] = v;
        stagewise.push(NodePairCost { stage: last, left: a, right: b, value: v });
    }

    for stage in (first..last).rev() {
        let pairs: Vec<(usize, usize)> = s1[stage].iter().flat_map(|&a| s2[stage].iter().map(move |&b| (a, b))).collect();
        let vals: Vec<f64> = pairs
            .par_iter()
            .map(|&(a, b)| {
                let (ca, cb) = (t1.children(a), t2.children(b));
                let pa: Vec<f64> = ca.iter().map(|&c| t1.nodes()[c].prob).collect();
                let pb: Vec<f64> = cb.iter().map(|&c| t2.nodes()[c].prob).collect();
                let m: Vec<Vec<f64>> = ca.iter().map(|&x| cb.iter().map(|&y| value[x * n2 + y]).collect()).collect();
                Ok(wasserstein_discrete(&pa, &pb, &m, 1.0)?.1.cost)
            })
            .collect::<Result<_, TransportError>>()?;
        for (&(a, b), &v) in pairs.iter().zip(&vals) {
            value[a * n2 + b] = v;
            stagewise.push(NodePairCost { stage, left: a, right: b, value: v });
        }
    }

    let leaves1 = t1.leaf_probabilities();
    let leaves2 = t2.leaf_probabilities();
    let m: Vec<Vec<f64>> = leaves1.iter().map(|&(a, _)| leaves2.iter().map(|&(b, _)| value[a * n2 + b]).collect()).collect();
    let w1: Vec<f64> = leaves1.iter().map(|x| x.1).collect();
    let w2: Vec<f64> = leaves2.iter().map(|x| x.1).collect();
    let flat = wasserstein_discrete(&w1, &w2, &m, r)?.0;

    Ok(NestedResult { distance: value[0].max(0.0).powf(1.0 / r), stagewise_costs: stagewise, flat_wasserstein: flat })
}
