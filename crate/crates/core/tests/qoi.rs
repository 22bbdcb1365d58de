mod common;

use proptest::prelude::*;
use rand::Rng;
use vfdiff::grid::{BoundarySegment, BoundaryTag, Grid, Side, TimeGrid};
use vfdiff::metrics::distance_l2h1;
use vfdiff::qoi::{
    chi_eps, chi_eps_lipschitz, qoi_subdomain_mass, qoi_superlevel, qoi_timewindow_mass, QoIError, QoISpec, Region,
};
use vfdiff::solver::{
    solve_p1, solve_p2, GateFunction, MobilityFunction, ParamFieldP1, ParamFieldP2, SolutionField, SolverOptions, SpaceTimeField,
};

fn field(grid: &Grid, tg: &TimeGrid, f: impl Fn(usize, usize) -> f64) -> SolutionField {
    let levels = (0..=tg.num_steps()).map(|k| (0..grid.num_cells()).map(|c| f(k, c)).collect()).collect();
    SolutionField::from_levels(tg.clone(), grid, levels).unwrap()
}

#[test]
fn subdomain_mass_matches_csv_summation() {
    let g = Grid::build(
        2,
        &[16, 4],
        &[4.0, 1.0],
        &[BoundarySegment::whole(Side::Left, BoundaryTag::Inflow), BoundarySegment::whole(Side::Right, BoundaryTag::Outflow)],
    )
    .unwrap();
    let mut p = ParamFieldP2::uniform(&g, 0.7, 0.7, MobilityFunction::Logistic { scale: 1.0 }, GateFunction::Linear, 0.0);
    p.potential = SpaceTimeField::stationary((0..g.num_cells()).map(|c| -g.cell_center(c)[0]).collect());
    let tg = TimeGrid::new(1.0, 100).unwrap();
    let u = solve_p2(&p, &g, &tg, &SolverOptions::default()).unwrap();

    let mut csv = Vec::new();
    u.write_trajectory_csv(&mut csv).unwrap();
    let region = Region::rect([1.0, 3.0], [0.0, 0.5]);
    let inside = |c: usize| {
        let [x, y] = g.cell_center(c);
        (1.0..=3.0).contains(&x) && (0.0..=0.5).contains(&y)
    };
    let mut oracle = 0.0;
    for line in String::from_utf8(csv).unwrap().lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let (k, cell, v): (usize, usize, f64) = (cols[0].parse().unwrap(), cols[2].parse().unwrap(), cols[3].parse().unwrap());
        if k == 50 && inside(cell) {
            oracle += v * 0.25 * 0.25;
        }
    }
    let value = qoi_subdomain_mass(&u, &g, &region, 0.5).unwrap();
    assert!((value - oracle).abs() < 1e-14, "{value} vs {oracle}");
    assert!(value > 0.0);
}

#[test]
fn window_mass_of_decaying_solution() {
    let g = Grid::interval(8, 1.0, BoundaryTag::Wall, BoundaryTag::Wall).unwrap();
    let p = ParamFieldP1::uniform(&g, 1.0, 1.0, MobilityFunction::Zero, 1.0);
    let tg = TimeGrid::new(1.0, 1000).unwrap();
    let u = solve_p1(&p, &g, &tg, &SolverOptions::default()).unwrap();
    let v = qoi_timewindow_mass(&u, 0.0, 1.0).unwrap();
    assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-3);
}

#[test]
fn window_and_time_errors() {
    let g = Grid::interval(4, 1.0, BoundaryTag::Wall, BoundaryTag::Wall).unwrap();
    let tg = TimeGrid::new(1.0, 10).unwrap();
    let u = field(&g, &tg, |_, _| 0.5);
    assert!(matches!(qoi_timewindow_mass(&u, 0.5, 0.5), Err(QoIError::EmptyWindow(..))));
    assert!(matches!(qoi_superlevel(&u, 0.5, 0.1, 0.55), Err(QoIError::TimeOffGrid(_))));
    assert!((qoi_timewindow_mass(&u, 0.2, 0.7).unwrap() - 0.25).abs() < 1e-14);
    assert!((qoi_subdomain_mass(&u, &g, &Region::interval(0.0, 1.0), 1.0).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn smoothstep_slope_by_dense_scan() {
    for eps in [0.2, 0.05, 0.01] {
        let c = 0.4;
        let n = 200_000;
        let h = 2.0 * eps / n as f64;
        let slope = (0..n)
            .map(|i| {
                let v = c - eps + i as f64 * h;
                (chi_eps(v + h, c, eps) - chi_eps(v, c, eps)) / h
            })
            .fold(0.0, f64::max);
        assert!((slope / chi_eps_lipschitz(eps) - 1.0).abs() < 1e-3, "eps {eps}: {slope}");
        assert_eq!(chi_eps(c, c, eps), 0.5);
        assert_eq!(chi_eps(c - eps, c, eps), 0.0);
        assert_eq!(chi_eps(c + eps, c, eps), 1.0);
    }
}

#[test]
fn superlevel_approaches_cell_count() {
    let g = Grid::interval(200, 1.0, BoundaryTag::Wall, BoundaryTag::Wall).unwrap();
    let tg = TimeGrid::new(1.0, 1).unwrap();
    let profile = |c: usize| {
        let x = g.cell_center(c)[0];
        0.5 + 0.4 * (3.0 * x).sin()
    };
    let u = field(&g, &tg, |_, c| profile(c));
    let c = 0.7;
    let exact = (0..200).filter(|&i| profile(i) > c).count() as f64 / 200.0;
    let mut last = f64::INFINITY;
    for eps in [0.1, 0.05, 0.025] {
        let band = (0..200).filter(|&i| (profile(i) - c).abs() < eps).count() as f64 / 200.0;
        let err = (qoi_superlevel(&u, c, eps, 1.0).unwrap() - exact).abs();
        assert!(err <= band + 1e-14, "eps {eps}: {err} > {band}");
        assert!(band <= last);
        last = band;
    }
}

#[test]
fn lipschitz_certificates_on_random_pairs() {
    let mut rng = common::rng(9);
    let g = Grid::build(2, &[6, 5], &[1.2, 1.0], &[]).unwrap();
    let tg = TimeGrid::new(0.5, 10).unwrap();
    let specs = [
        QoISpec::subdomain_mass(&g, &tg, &Region::rect([0.0, 0.6], [0.0, 1.0]), 0.25).unwrap(),
        QoISpec::subdomain_mass(&g, &tg, &Region::rect([0.0, 1.2], [0.0, 1.0]), 0.0).unwrap(),
        QoISpec::timewindow_mass(&g, &tg, 0.1, 0.4).unwrap(),
        QoISpec::superlevel(&g, &tg, 0.5, 0.05, 0.5).unwrap(),
    ];
    for _ in 0..100 {
        let a: Vec<Vec<f64>> = (0..=10).map(|_| (0..30).map(|_| rng.random_range(0.0..=1.0)).collect()).collect();
        let scale = rng.random_range(0.0..0.3);
        let b: Vec<Vec<f64>> =
            a.iter().map(|l| l.iter().map(|v| (v + scale * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0)).collect()).collect();
        let u = field(&g, &tg, |k, c| a[k][c]);
        let v = field(&g, &tg, |k, c| b[k][c]);
        let dist = distance_l2h1(&u, &v, &g).unwrap();
        for s in &specs {
            let diff = (s.evaluate(&u).unwrap() - s.evaluate(&v).unwrap()).abs();
            assert!(diff <= s.lipschitz_constant * dist + 1e-14, "{:?}: {diff} > {}", s.kind, s.lipschitz_constant * dist);
        }
    }
}

proptest! {
    #[test]
    fn chi_is_monotone(v1 in -0.5..1.5f64, v2 in -0.5..1.5f64, c1 in 0.0..1.0f64, c2 in 0.0..1.0f64, eps in 0.001..0.5f64) {
        let (lo, hi) = (v1.min(v2), v1.max(v2));
        prop_assert!(chi_eps(lo, c1, eps) <= chi_eps(hi, c1, eps));
        let (cl, ch) = (c1.min(c2), c1.max(c2));
        prop_assert!(chi_eps(v1, ch, eps) <= chi_eps(v1, cl, eps));
    }

    #[test]
    fn qois_are_monotone(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let g = Grid::interval(12, 1.0, BoundaryTag::Wall, BoundaryTag::Wall).unwrap();
        let tg = TimeGrid::new(1.0, 4).unwrap();
        let a: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..=1.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| (x + rng.random_range(0.0..0.2)).min(1.0)).collect();
        let u = field(&g, &tg, |k, c| a[k * 12 + c]);
        let v = field(&g, &tg, |k, c| b[k * 12 + c]);
        let specs = [
            QoISpec::subdomain_mass(&g, &tg, &Region::interval(0.2, 0.7), 0.5).unwrap(),
            QoISpec::timewindow_mass(&g, &tg, 0.0, 1.0).unwrap(),
            QoISpec::superlevel(&g, &tg, 0.4, 0.1, 0.75).unwrap(),
        ];
        for s in &specs {
            prop_assert!(s.evaluate(&u).unwrap() <= s.evaluate(&v).unwrap() + 1e-15);
        }
    }
}
