//! Independent oracles and random instance generators shared by the
//! integration tests. Nothing here calls the transport solver.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfdiff::stochastic::ScenarioTree;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random probability vector with entries bounded away from zero.
pub fn random_weights(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

/// Basic solution of the transportation problem on the cell set `basis`,
/// or `None` if the cells do not form a spanning tree of the bipartite
/// row/column graph.
fn tree_solution(p: &[f64], q: &[f64], basis: &[(usize, usize)]) -> Option<Vec<Vec<f64>>> {
    let (m, n) = (p.len(), q.len());
    let mut flow = vec![vec![0.0; n]; m];
    let mut row_left = p.to_vec();
    let mut col_left = q.to_vec();
    let mut alive: Vec<bool> = vec![true; basis.len()];
    let mut row_done = vec![false; m];
    let mut col_done = vec![false; n];
    // Peel leaves: a row or column touching exactly one live cell fixes that cell.
    for _ in 0..basis.len() {
        let mut progressed = false;
        for r in 0..m {
            if row_done[r] {
                continue;
            }
            let cells: Vec<usize> = (0..basis.len()).filter(|&k| alive[k] && basis[k].0 == r).collect();
            if cells.len() == 1 {
                let k = cells[0];
                let c = basis[k].1;
                let v = row_left[r];
                flow[r][c] = v;
                col_left[c] -= v;
                row_left[r] = 0.0;
                alive[k] = false;
                row_done[r] = true;
                progressed = true;
            }
        }
        for c in 0..n {
            if col_done[c] {
                continue;
            }
            let cells: Vec<usize> = (0..basis.len()).filter(|&k| alive[k] && basis[k].1 == c).collect();
            if cells.len() == 1 {
                let k = cells[0];
                let r = basis[k].0;
                let v = col_left[c];
                flow[r][c] = v;
                row_left[r] -= v;
                col_left[c] = 0.0;
                alive[k] = false;
                col_done[c] = true;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    if alive.iter().any(|&a| a) {
        return None; // contains a cycle
    }
    // Every row and column must be covered for the tree to span.
    let rows_hit = (0..m).all(|r| basis.iter().any(|b| b.0 == r));
    let cols_hit = (0..n).all(|c| basis.iter().any(|b| b.1 == c));
    (rows_hit && cols_hit).then_some(flow)
}

fn combinations(k: usize, n: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, k: usize, n: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, k, n, cur, f);
            cur.pop();
        }
    }
    rec(0, k, n, &mut Vec::new(), f);
}

/// Every vertex of the transportation polytope of `(p, q)`: basic solutions
/// for all spanning trees of `K_{m,n}` with nonnegative flows.
pub fn transport_vertices(p: &[f64], q: &[f64]) -> Vec<Vec<Vec<f64>>> {
    let (m, n) = (p.len(), q.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let mut out = Vec::new();
    combinations(m + n - 1, m * n, &mut |idx| {
        let basis: Vec<(usize, usize)> = idx.iter().map(|&k| cells[k]).collect();
        if let Some(flow) = tree_solution(p, q, &basis) {
            if flow.iter().flatten().all(|&x| x >= -1e-12) {
                out.push(flow);
            }
        }
    });
    out
}

pub fn plan_cost(plan: &[Vec<f64>], cost: &[Vec<f64>]) -> f64 {
    plan.iter().zip(cost).map(|(r, c)| r.iter().zip(c).map(|(x, y)| x * y).sum::<f64>()).sum()
}

/// Brute-force optimum of the transportation LP by vertex enumeration.
pub fn lp_vertex_optimum(p: &[f64], q: &[f64], cost: &[Vec<f64>]) -> f64 {
    transport_vertices(p, q).iter().map(|v| plan_cost(v, cost)).fold(f64::INFINITY, f64::min)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for perm in permutations(n - 1) {
        for pos in 0..=perm.len() {
            let mut p = perm.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

/// Best north-west-corner plan over all row and column orderings. Each is a
/// vertex, so this bounds the optimum from above.
pub fn nw_corner_best(p: &[f64], q: &[f64], cost: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for rows in permutations(p.len()) {
        for cols in permutations(q.len()) {
            let mut a: Vec<f64> = rows.iter().map(|&i| p[i]).collect();
            let mut b: Vec<f64> = cols.iter().map(|&j| q[j]).collect();
            let (mut i, mut j, mut total) = (0, 0, 0.0);
            while i < a.len() && j < b.len() {
                let x = a[i].min(b[j]);
                total += x * cost[rows[i]][cols[j]];
                a[i] -= x;
                b[j] -= x;
                if a[i] <= b[j] {
                    i += 1;
                } else {
                    j += 1;
                }
            }
            best = best.min(total);
        }
    }
    best
}

/// Random tree with the given branching per stage, probabilities bounded
/// away from zero and scalar values in `[0, 1)`.
pub fn random_tree(rng: &mut impl Rng, branching: &[usize]) -> ScenarioTree {
    let times: Vec<f64> = (0..=branching.len()).map(|k| k as f64).collect();
    let mut t = ScenarioTree::new(times);
    let mut frontier = vec![t.root()];
    for &b in branching {
        let mut next = Vec::new();
        for &node in &frontier {
            for w in random_weights(rng, b) {
                next.push(t.add_child(node, w, vec![rng.random_range(0.0..1.0)]).unwrap());
            }
        }
        frontier = next;
    }
    t
}

/// Nested distance of two two-stage trees by exhaustive enumeration of
/// stagewise couplings: every vertex coupling of the first-stage children
/// combined with every vertex coupling of each pair of second-stage
/// conditionals. `cost(a, b)` is the leaf-pair cost (already to the power `r`).
pub fn nested_two_stage_oracle(t1: &ScenarioTree, t2: &ScenarioTree, cost: impl Fn(usize, usize) -> f64) -> f64 {
    let c1 = t1.children(t1.root()).to_vec();
    let c2 = t2.children(t2.root()).to_vec();
    let p1: Vec<f64> = c1.iter().map(|&c| t1.nodes()[c].prob).collect();
    let p2: Vec<f64> = c2.iter().map(|&c| t2.nodes()[c].prob).collect();

    // For every pair of first-stage nodes, the costs of all inner vertex couplings.
    let inner: Vec<Vec<Vec<f64>>> = c1
        .iter()
        .map(|&a| {
            c2.iter()
                .map(|&b| {
                    let la = t1.children(a);
                    let lb = t2.children(b);
                    let wa: Vec<f64> = la.iter().map(|&x| t1.nodes()[x].prob).collect();
                    let wb: Vec<f64> = lb.iter().map(|&y| t2.nodes()[y].prob).collect();
                    let cm: Vec<Vec<f64>> = la.iter().map(|&x| lb.iter().map(|&y| cost(x, y)).collect()).collect();
                    transport_vertices(&wa, &wb).iter().map(|v| plan_cost(v, &cm)).collect()
                })
                .collect()
        })
        .collect();

    let outer = transport_vertices(&p1, &p2);
    let pairs: Vec<(usize, usize)> = (0..c1.len()).flat_map(|i| (0..c2.len()).map(move |j| (i, j))).collect();
    let mut best = f64::INFINITY;
    // Odometer over the choice of inner vertex per first-stage pair.
    let sizes: Vec<usize> = pairs.iter().map(|&(i, j)| inner[i][j].len()).collect();
    let mut choice = vec![0usize; pairs.len()];
    loop {
        for v in &outer {
            let total: f64 = pairs.iter().zip(&choice).map(|(&(i, j), &k)| v[i][j] * inner[i][j][k]).sum();
            best = best.min(total);
        }
        let mut pos = 0;
        while pos < choice.len() {
            choice[pos] += 1;
            if choice[pos] < sizes[pos] {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
        if pos == choice.len() {
            break;
        }
    }
    best
}

/// Exact solution of `u' = A u + c` for symmetric 2x2 `A`.
pub fn linear_2x2(a: [[f64; 2]; 2], c: [f64; 2], u0: [f64; 2], t: f64) -> [f64; 2] {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let ustar = [-(a[1][1] * c[0] - a[0][1] * c[1]) / det, -(-a[1][0] * c[0] + a[0][0] * c[1]) / det];
    let tr = a[0][0] + a[1][1];
    let disc = ((a[0][0] - a[1][1]).powi(2) / 4.0 + a[0][1] * a[1][0]).sqrt();
    let (l1, l2) = (tr / 2.0 + disc, tr / 2.0 - disc);
    // e^{At} = (e^{l1 t}(A - l2 I) - e^{l2 t}(A - l1 I)) / (l1 - l2)
    let (e1, e2) = ((l1 * t).exp(), (l2 * t).exp());
    let m = |i: usize, j: usize| {
        let id = if i == j { 1.0 } else { 0.0 };
        (e1 * (a[i][j] - l2 * id) - e2 * (a[i][j] - l1 * id)) / (l1 - l2)
    };
    let d = [u0[0] - ustar[0], u0[1] - ustar[1]];
    [ustar[0] + m(0, 0) * d[0] + m(0, 1) * d[1], ustar[1] + m(1, 0) * d[0] + m(1, 1) * d[1]]
}
