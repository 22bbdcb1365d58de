mod common;

use proptest::prelude::*;
use rand::Rng;
use vfdiff::grid::{BoundarySegment, BoundaryTag, Grid, Side, TimeGrid};
use vfdiff::metrics::{distance_l2h1, metric_d1, metric_d2, norm_l2h1, stability_experiment, StabilityError};
use vfdiff::problem::{Coefficient, Perturbation, Problem};
use vfdiff::solver::{GateFunction, MobilityFunction, ParamFieldP1, ParamFieldP2, SolutionField, SolverOptions, SpaceTimeField};

fn unit(n: usize) -> Grid {
    Grid::interval(n, 1.0, BoundaryTag::Wall, BoundaryTag::Wall).unwrap()
}

fn centers(g: &Grid) -> Vec<f64> {
    (0..g.num_cells()).map(|c| g.cell_center(c)[0]).collect()
}

#[test]
fn norm_of_static_linear_profile() {
    let g = unit(1000);
    let tg = TimeGrid::new(1.0, 4).unwrap();
    let u = SolutionField::from_levels(tg, &g, vec![centers(&g); 5]).unwrap();
    assert!((norm_l2h1(&u, &g) - (4.0f64 / 3.0).sqrt()).abs() < 1e-3);
}

#[test]
fn d1_of_constant_shifts() {
    let g = unit(20);
    let tg = TimeGrid::new(1.0, 10).unwrap();
    let p = ParamFieldP1::uniform(&g, 1.0, 1.0, MobilityFunction::Zero, 0.5);
    let mut q = p.clone();
    q.alpha = SpaceTimeField::constant(20, 1.1);
    q.beta = SpaceTimeField::constant(20, 1.2);
    q.potential = SpaceTimeField::constant(20, 0.3);
    q.u0 = vec![0.55; 20];
    assert!((metric_d1(&p, &q, &g, &tg).unwrap() - 0.65).abs() < 1e-12);
    assert!((metric_d1(&q, &p, &g, &tg).unwrap() - 0.65).abs() < 1e-12);
}

#[test]
fn d2_of_doubled_potential() {
    let g = Grid::interval(100, 1.0, BoundaryTag::Inflow, BoundaryTag::Outflow).unwrap();
    let tg = TimeGrid::new(1.0, 20).unwrap();
    let mut p = ParamFieldP2::uniform(&g, 0.5, 0.5, MobilityFunction::Zero, GateFunction::Linear, 0.0);
    p.potential = SpaceTimeField::stationary(centers(&g));
    let mut q = p.clone();
    q.potential = SpaceTimeField::stationary(centers(&g).iter().map(|x| 2.0 * x).collect());
    assert!((metric_d2(&p, &q, &g, &tg).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn decay_rate_ratio_matches_closed_form() {
    let g = unit(10);
    let tg = TimeGrid::new(1.0, 1000).unwrap();
    let opts = SolverOptions::test_mode();
    let p = ParamFieldP1::uniform(&g, 1.0, 1.0, MobilityFunction::Zero, 1.0);
    let mut q = p.clone();
    q.beta = SpaceTimeField::constant(10, 1.1);
    let (pp, qq) = (Problem::P1(p), Problem::P1(q));
    let d = pp.distance(&qq, &g, &tg).unwrap();
    assert!((d - 0.1).abs() < 1e-12);
    let dist = distance_l2h1(&pp.solve(&g, &tg, &opts).unwrap(), &qq.solve(&g, &tg, &opts).unwrap(), &g).unwrap();
    // int_0^1 (e^{-t} - e^{-1.1 t})^2 dt
    let exact = ((1.0 - (-2.0f64).exp()) / 2.0 - 2.0 * (1.0 - (-2.1f64).exp()) / 2.1 + (1.0 - (-2.2f64).exp()) / 2.2).sqrt();
    let ratio = dist / d;
    assert!((ratio / (exact / 0.1) - 1.0).abs() < 0.02, "{ratio} vs {}", exact / 0.1);
}

#[test]
fn corridor_ladder_is_locally_linear() {
    let g = Grid::build(
        2,
        &[16, 4],
        &[4.0, 1.0],
        &[BoundarySegment::whole(Side::Left, BoundaryTag::Inflow), BoundarySegment::whole(Side::Right, BoundaryTag::Outflow)],
    )
    .unwrap();
    let mut p = ParamFieldP2::uniform(&g, 0.6, 0.6, MobilityFunction::Logistic { scale: 1.0 }, GateFunction::Linear, 0.0);
    p.a0 = 0.2;
    p.b0 = 0.2;
    p.potential = SpaceTimeField::stationary((0..g.num_cells()).map(|c| -g.cell_center(c)[0]).collect());
    let delta = Perturbation::coefficient(Coefficient::A, SpaceTimeField::constant(4, 0.2))
        .and(Perturbation::coefficient(Coefficient::B, SpaceTimeField::constant(4, -0.1)));
    let tg = TimeGrid::new(1.0, 200).unwrap();
    let report = stability_experiment(&Problem::P2(p), &delta, &g, &tg, &SolverOptions::default()).unwrap();
    assert!(report.perturbation_ladder.iter().all(|e| e.ratio.is_finite() && e.ratio > 0.0));
    assert!(report.spread() < 1.2, "spread {}", report.spread());
    for e in &report.perturbation_ladder {
        assert!(e.solution_distance <= report.bound_constant * e.param_distance * (1.0 + 1e-12));
    }
}

#[test]
fn degenerate_perturbation_is_reported() {
    let g = unit(8);
    let tg = TimeGrid::new(0.5, 20).unwrap();
    let p = Problem::P1(ParamFieldP1::uniform(&g, 1.0, 1.0, MobilityFunction::Zero, 0.5));
    let delta = Perturbation::coefficient(Coefficient::Alpha, SpaceTimeField::constant(8, 1e-16));
    let err = stability_experiment(&p, &delta, &g, &tg, &SolverOptions::default()).unwrap_err();
    assert!(matches!(err, StabilityError::DegeneratePerturbation(_)));
}

fn random_p1(rng: &mut impl Rng, g: &Grid) -> ParamFieldP1 {
    let n = g.num_cells();
    let mut field = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
    let mut p = ParamFieldP1::uniform(g, 1.0, 1.0, MobilityFunction::Zero, 0.5);
    p.alpha = SpaceTimeField::piecewise(vec![0, 5], vec![field(0.5, 1.5), field(0.5, 1.5)]);
    p.beta = SpaceTimeField::stationary(field(0.5, 1.5));
    p.potential = SpaceTimeField::piecewise(vec![0, 3], vec![field(-1.0, 1.0), field(-1.0, 1.0)]);
    p.u0 = field(0.0, 1.0);
    p
}

fn random_p2(rng: &mut impl Rng, g: &Grid) -> ParamFieldP2 {
    let mut p = ParamFieldP2::uniform(g, 0.5, 0.5, MobilityFunction::Zero, GateFunction::Linear, 0.0);
    p.a = SpaceTimeField::piecewise(vec![0, 4], vec![vec![rng.random_range(0.1..1.0)], vec![rng.random_range(0.1..1.0)]]);
    p.b = SpaceTimeField::stationary(vec![rng.random_range(0.1..1.0)]);
    let slope = rng.random_range(-2.0..2.0);
    p.potential = SpaceTimeField::piecewise(vec![0, 7], vec![vec![0.0; 6], (0..6).map(|i| slope * i as f64).collect()]);
    p.u0 = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn d1_is_a_metric(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let g = unit(6);
        let tg = TimeGrid::new(1.0, 10).unwrap();
        let (a, b, c) = (random_p1(&mut rng, &g), random_p1(&mut rng, &g), random_p1(&mut rng, &g));
        let d = |x: &ParamFieldP1, y: &ParamFieldP1| metric_d1(x, y, &g, &tg).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!(d(&a, &b) > 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-14);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn d2_is_a_metric(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let g = Grid::interval(6, 1.0, BoundaryTag::Inflow, BoundaryTag::Outflow).unwrap();
        let tg = TimeGrid::new(1.0, 10).unwrap();
        let (a, b, c) = (random_p2(&mut rng, &g), random_p2(&mut rng, &g), random_p2(&mut rng, &g));
        let d = |x: &ParamFieldP2, y: &ParamFieldP2| metric_d2(x, y, &g, &tg).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!(d(&a, &b) > 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-14);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn norm_is_one_lipschitz(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let g = Grid::build(2, &[4, 3], &[1.0, 0.5], &[]).unwrap();
        let tg = TimeGrid::new(0.7, 6).unwrap();
        let mut levels = || -> Vec<Vec<f64>> { (0..7).map(|_| (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).collect() };
        let u = SolutionField::from_levels(tg.clone(), &g, levels()).unwrap();
        let v = SolutionField::from_levels(tg, &g, levels()).unwrap();
        let gap = (norm_l2h1(&u, &g) - norm_l2h1(&v, &g)).abs();
        prop_assert!(gap <= distance_l2h1(&u, &v, &g).unwrap() + 1e-12);
    }
}
