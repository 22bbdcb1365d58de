//! Banded Cholesky factorization of the implicit diffusion operator
//! `vol/dt * I + L + diag(extra)`, where `L` is the two-point-flux Laplacian.

use crate::grid::{FaceKind, Grid};

/// Symmetric positive definite band matrix in lower band storage.
#[derive(Debug, Clone)]
pub(crate) struct BandedCholesky {
    n: usize,
    bw: usize,
    /// `l[i * (bw + 1) + (i - j)]` holds `L[i][j]` for `i - bw <= j <= i`.
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Factors the diffusion operator. Returns `None` if the matrix is not
    /// positive definite.
    pub fn diffusion(grid: &Grid, dt: f64, extra_diag: &[f64]) -> Option<Self> {
        let n = grid.num_cells();
        let bw = if grid.dim() == 1 { 1 } else { grid.cells_per_axis()[0] };
        let w = bw + 1;
        let mut a = vec![0.0; n * w];
        let vol_dt = grid.cell_volume() / dt;
        for i in 0..n {
            a[i * w] = vol_dt + extra_diag[i];
        }
        for face in grid.interior_faces() {
            if let FaceKind::Interior { lower, upper } = face.kind {
                let t = face.area / face.distance;
                a[lower * w] += t;
                a[upper * w] += t;
                a[upper * w + (upper - lower)] -= t;
            }
        }
        // in-place factorization
        for j in 0..n {
            let kmin = j.saturating_sub(bw);
            let mut d = a[j * w];
            for k in kmin..j {
                let v = a[j * w + (j - k)];
                d -= v * v;
            }
            if !(d > 0.0) {
                return None;
            }
            let d = d.sqrt();
            a[j * w] = d;
            for i in j + 1..(j + bw + 1).min(n) {
                let kmin = i.saturating_sub(bw);
                let mut s = a[i * w + (i - j)];
                for k in kmin..j {
                    s -= a[i * w + (i - k)] * a[j * w + (j - k)];
                }
                a[i * w + (i - j)] = s / d;
            }
        }
        Some(Self { n, bw, l: a })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let mut s = x[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.l[i * w + (i - k)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for k in i + 1..(i + self.bw + 1).min(self.n) {
                s -= self.l[k * w + (k - i)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
    }
}

/// `y = A x` for the diffusion operator, computed from the grid directly.
pub(crate) fn apply_diffusion(grid: &Grid, dt: f64, extra_diag: &[f64], x: &[f64], y: &mut [f64]) {
    let vol_dt = grid.cell_volume() / dt;
    for i in 0..x.len() {
        y[i] = (vol_dt + extra_diag[i]) * x[i];
    }
    for face in grid.interior_faces() {
        if let FaceKind::Interior { lower, upper } = face.kind {
            let t = face.area / face.distance;
            let d = t * (x[lower] - x[upper]);
            y[lower] += d;
            y[upper] -= d;
        }
    }
}

/// Solves `A x = rhs` with one step of iterative refinement and returns the
/// relative residual `|A x - rhs|_inf / |rhs|_inf`.
pub(crate) fn solve_refined(fac: &BandedCholesky, grid: &Grid, dt: f64, extra_diag: &[f64], rhs: &[f64]) -> (Vec<f64>, f64) {
    let mut x = rhs.to_vec();
    fac.solve_in_place(&mut x);
    let mut ax = vec![0.0; x.len()];
    apply_diffusion(grid, dt, extra_diag, &x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    fac.solve_in_place(&mut r);
    for (xi, ri) in x.iter_mut().zip(&r) {
        *xi += ri;
    }
    apply_diffusion(grid, dt, extra_diag, &x, &mut ax);
    let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let res = rhs.iter().zip(&ax).fold(0.0f64, |m, (b, a)| m.max((b - a).abs()));
    (x, res / scale)
}
