mod common;

use vfdiff::grid::{BoundaryTag, Grid, TimeGrid};
use vfdiff::problem::{Coefficient, Problem};
use vfdiff::qoi::{QoISpec, Region};
use vfdiff::solver::{MobilityFunction, ParamFieldP1, SolverOptions};
use vfdiff::stochastic::{
    monte_carlo_qoi, monte_carlo_range, EmpiricalDistribution, Modulation, Profile, RandomParamModel, ScenarioTree, StageLaw,
    StochasticError,
};

fn grid() -> Grid {
    Grid::interval(8, 1.0, BoundaryTag::Wall, BoundaryTag::Wall).unwrap()
}

fn model(law: StageLaw, stages: usize, memory: f64, seed: u64) -> RandomParamModel {
    let g = grid();
    let tg = TimeGrid::with_equal_stages(0.5, 10 * stages, stages).unwrap();
    let mut p = ParamFieldP1::uniform(&g, 1.0, 1.0, MobilityFunction::Logistic { scale: 1.0 }, 0.5);
    p.alpha0 = 0.5;
    let mods = vec![Modulation { target: Coefficient::Alpha, profile: Profile::Constant, weight: 1.0 }];
    RandomParamModel::new(Problem::P1(p), g, tg, vec![law], memory, mods, seed).unwrap()
}

fn mass_qoi(m: &RandomParamModel) -> QoISpec {
    QoISpec::subdomain_mass(m.grid(), m.time_grid(), &Region::interval(0.0, 0.5), 0.5).unwrap()
}

#[test]
fn point_law_samples_are_the_base() {
    let m = model(StageLaw::point(0.0), 2, 0.3, 1);
    let Problem::P1(b) = m.base() else { panic!() };
    for i in [0, 17, 999] {
        let Problem::P1(p) = m.sample_path(i).unwrap() else { panic!() };
        for k in 0..20 {
            assert_eq!(p.alpha.at_step(k), b.alpha.at_step(k));
        }
    }
}

#[test]
fn same_index_same_sample() {
    let m = model(StageLaw::Uniform { lo: -0.1, hi: 0.1 }, 2, 0.5, 3);
    let again = model(StageLaw::Uniform { lo: -0.1, hi: 0.1 }, 2, 0.5, 3);
    for i in 0..20 {
        assert_eq!(m.sample_xi(i), again.sample_xi(i));
    }
}

#[test]
fn modulated_alpha_has_base_mean() {
    let m = model(StageLaw::Uniform { lo: -0.1, hi: 0.1 }, 1, 0.0, 11);
    let n = 10_000;
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let Problem::P1(p) = m.sample_path(i).unwrap() else { panic!() };
            p.alpha.at_step(0)[3]
        })
        .collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    let se = 0.2 / 12f64.sqrt() / (n as f64).sqrt();
    assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean}, se {se}");
}

#[test]
fn single_sample_equals_direct_solve() {
    let m = model(StageLaw::Uniform { lo: -0.2, hi: 0.2 }, 2, 0.5, 5);
    let q = mass_qoi(&m);
    let opts = SolverOptions::default();
    let d = monte_carlo_qoi(&m, &q, 1, &opts).unwrap();
    let u = m.sample_path(0).unwrap().solve(m.grid(), m.time_grid(), &opts).unwrap();
    assert_eq!(d.atoms, vec![q.evaluate(&u).unwrap()]);
    assert_eq!(d.weights, vec![1.0]);
}

#[test]
fn split_ranges_merge_to_full_run() {
    let m = model(StageLaw::Uniform { lo: -0.2, hi: 0.2 }, 2, 0.5, 9);
    let q = mass_qoi(&m);
    let opts = SolverOptions::default();
    let a = monte_carlo_range(&m, &q, 0..500, &opts).unwrap();
    let b = monte_carlo_range(&m, &q, 500..1000, &opts).unwrap();
    let full = monte_carlo_qoi(&m, &q, 1000, &opts).unwrap();
    let merged = EmpiricalDistribution::concat_uniform(&[a, b]);
    assert_eq!(merged.atoms, full.atoms);
    assert!(merged.weights.iter().zip(&full.weights).all(|(x, y)| (x - y).abs() < 1e-18));
}

#[test]
fn degenerate_law_has_zero_variance() {
    let m = model(StageLaw::point(0.05), 3, 0.2, 2);
    let d = monte_carlo_qoi(&m, &mass_qoi(&m), 40, &SolverOptions::default()).unwrap();
    assert!(d.atoms.iter().all(|&a| a == d.atoms[0]));
    assert!(d.variance() < 1e-30);
}

#[test]
fn single_branch_tree_is_a_path() {
    let m = model(StageLaw::Uniform { lo: -0.1, hi: 0.1 }, 3, 0.5, 0);
    let t = m.build_scenario_tree(&[1, 1, 1]).unwrap();
    let leaves = t.leaf_probabilities();
    assert_eq!(leaves.len(), 1);
    assert_eq!(leaves[0].1, 1.0);
    assert!(t.path(leaves[0].0).iter().all(|v| v[0] == 0.0));
}

#[test]
fn two_by_two_tree_enumerates_the_product() {
    let m = model(StageLaw::Uniform { lo: -0.1, hi: 0.1 }, 2, 0.0, 0);
    let t = m.build_scenario_tree(&[2, 2]).unwrap();
    t.check().unwrap();
    let atoms = [-0.05, 0.05];
    let mut paths: Vec<(f64, f64)> = t
        .leaf_probabilities()
        .into_iter()
        .map(|(leaf, p)| {
            assert!((p - 0.25).abs() < 1e-15);
            let path = t.path(leaf);
            (path[0][0], path[1][0])
        })
        .collect();
    paths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let expected: Vec<(f64, f64)> = atoms.iter().flat_map(|&a| atoms.iter().map(move |&b| (a, b))).collect();
    assert_eq!(paths.len(), 4);
    for (p, e) in paths.iter().zip(&expected) {
        assert!((p.0 - e.0).abs() < 1e-15 && (p.1 - e.1).abs() < 1e-15);
    }
}

#[test]
fn subtree_leaf_probabilities_are_conditional() {
    let mut rng = common::rng(21);
    let t = common::random_tree(&mut rng, &[3, 2, 2]);
    for node in 0..t.nodes().len() {
        let sub = t.conditional_subtree(node).unwrap();
        sub.check().unwrap();
        let pn = t.absolute_prob(node);
        let mut expected: Vec<f64> = t
            .leaf_probabilities()
            .into_iter()
            .filter(|&(leaf, _)| {
                let mut cur = Some(leaf);
                while let Some(c) = cur {
                    if c == node {
                        return true;
                    }
                    cur = t.nodes()[c].parent;
                }
                false
            })
            .map(|(_, p)| p / pn)
            .collect();
        let mut got: Vec<f64> = sub.leaf_probabilities().into_iter().map(|(_, p)| p).collect();
        expected.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-14, "node {node}: {g} vs {e}");
        }
    }
}

#[test]
fn tree_text_round_trip() {
    let mut rng = common::rng(4);
    let t = common::random_tree(&mut rng, &[2, 3]);
    assert_eq!(ScenarioTree::from_text(&t.to_text()).unwrap(), t);
    let sub = t.conditional_subtree(2).unwrap();
    assert_eq!(ScenarioTree::from_text(&sub.to_text()).unwrap(), sub);
}

#[test]
fn huge_trees_are_refused() {
    let m = model(StageLaw::Uniform { lo: -0.1, hi: 0.1 }, 3, 0.0, 0);
    let err = m.build_scenario_tree(&[1000, 1000, 2]).unwrap_err();
    assert!(matches!(err, StochasticError::ExplosionGuard(l) if l == 2e6));
    assert!(m.build_scenario_tree(&[100, 100, 100]).is_ok());
}
