//! Transportation simplex on a spanning-tree basis.

use std::collections::VecDeque;

/// Optimal flow of a balanced transportation problem.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SimplexSolution {
    pub flow: Vec<f64>,
    pub value: f64,
    pub pivots: usize,
}

/// Minimizes `sum c_ij x_ij` subject to row sums `supply` and column sums
/// `demand` (which must balance). `cost` is row-major `m x n`.
///
/// Starts from the north-west-corner basis (degenerate zeros included so the
/// basis always has `m + n - 1` cells), enters the lowest-index cell with a
/// negative reduced cost and leaves the lowest-index cell among the ties.
pub(crate) fn solve(supply: &[f64], demand: &[f64], cost: &[f64]) -> Option<SimplexSolution> {
    let (m, n) = (supply.len(), demand.len());
    debug_assert_eq!(cost.len(), m * n);
    let mut flow = vec![0.0; m * n];
    let mut basic = vec![false; m * n];

    let (mut s, mut d) = (supply.to_vec(), demand.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let x = s[i].min(d[j]).max(0.0);
        flow[i * n + j] = x;
        basic[i * n + j] = true;
        s[i] -= x;
        d[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i == m - 1 || (j < n - 1 && d[j] < s[i]) {
            j += 1;
        } else {
            i += 1;
        }
    }

    let scale = cost.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1.0);
    let tol = 1e-12 * scale;
    let max_pivots = 50 * (m * n).pow(2) + 100;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut pivots = 0;
    loop {
        potentials(m, n, &basic, cost, &mut u, &mut v);
        let entering = (0..m * n).find(|&k| !basic[k] && cost[k] - u[k / n] - v[k % n] < -tol);
        let Some(e) = entering else { break };
        if pivots == max_pivots {
            return None;
        }
        pivots += 1;
        let cycle = basis_path(m, n, &basic, e % n, e / n);
        // cells on the path alternate -, +, -, ... starting next to the entering cell
        let (theta, leave) = cycle
            .iter()
            .step_by(2)
            .map(|&k| (flow[k], k))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .expect("cycle has a decreasing cell");
        flow[e] += theta;
        for (pos, &k) in cycle.iter().enumerate() {
            if pos % 2 == 0 {
                flow[k] -= theta;
            } else {
                flow[k] += theta;
            }
        }
        flow[leave] = 0.0;
        basic[leave] = false;
        basic[e] = true;
    }
    let value = flow.iter().zip(cost).map(|(x, c)| x * c).sum();
    Some(SimplexSolution { flow, value, pivots })
}

/// Dual potentials with `u_0 = 0` and `u_i + v_j = c_ij` on basic cells.
fn potentials(m: usize, n: usize, basic: &[bool], cost: &[f64], u: &mut [f64], v: &mut [f64]) {
    let mut seen_row = vec![false; m];
    let mut seen_col = vec![false; n];
    let mut queue = VecDeque::new();
    u[0] = 0.0;
    seen_row[0] = true;
    queue.push_back((true, 0));
    while let Some((is_row, k)) = queue.pop_front() {
        if is_row {
            for j in 0..n {
                if basic[k * n + j] && !seen_col[j] {
                    v[j] = cost[k * n + j] - u[k];
                    seen_col[j] = true;
                    queue.push_back((false, j));
                }
            }
        } else {
            for i in 0..m {
                if basic[i * n + k] && !seen_row[i] {
                    u[i] = cost[i * n + k] - v[k];
                    seen_row[i] = true;
                    queue.push_back((true, i));
                }
            }
        }
    }
}

/// Basic cells on the tree path from column `col` to row `row`, in order.
fn basis_path(m: usize, n: usize, basic: &[bool], col: usize, row: usize) -> Vec<usize> {
    // nodes: rows 0..m, columns m..m+n; parent edge stored as the cell index
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; m + n];
    let mut visited = vec![false; m + n];
    let start = m + col;
    visited[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == row {
            break;
        }
        if node < m {
            for j in 0..n {
                let (k, next) = (node * n + j, m + j);
                if basic[k] && !visited[next] {
                    visited[next] = true;
                    parent[next] = Some((node, k));
                    queue.push_back(next);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                let k = i * n + j;
                if basic[k] && !visited[i] {
                    visited[i] = true;
                    parent[i] = Some((node, k));
                    queue.push_back(i);
                }
            }
        }
    }
    let mut path = Vec::new();
    let mut node = row;
    while node != start {
        let (prev, cell) = parent[node].expect("basis is a spanning tree");
        path.push(cell);
        node = prev;
    }
    path.reverse();
    path
}
