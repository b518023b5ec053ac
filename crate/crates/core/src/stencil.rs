//! Shared finite-difference stencils on the computational grid.
//!
//! Interior nodes use centered second-order differences. Non-periodic edges
//! use one-sided second-order formulas so the order stays uniform. Periodic
//! directions wrap; a coordinate field that grows by one domain extent per
//! period passes that extent as `jump` so the stencil sees the unwrapped
//! values across the seam.

use ndarray::Array2;

use crate::grid::ComputationalGrid;

/// First derivative in xi of a node field.
pub(crate) fn diff_xi(v: &Array2<f64>, grid: &ComputationalGrid, jump: f64) -> Array2<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let h2 = 2.0 * grid.dxi;
    let mut out = Array2::zeros((nx, ny));
    for j in 0..ny {
        for i in 0..nx {
            let d = if grid.periodic_x {
                let vp = if i + 1 == nx { v[[0, j]] + jump } else { v[[i + 1, j]] };
                let vm = if i == 0 { v[[nx - 1, j]] - jump } else { v[[i - 1, j]] };
                (vp - vm) / h2
            } else if i == 0 {
                (-3.0 * v[[0, j]] + 4.0 * v[[1, j]] - v[[2, j]]) / h2
            } else if i == nx - 1 {
                (3.0 * v[[nx - 1, j]] - 4.0 * v[[nx - 2, j]] + v[[nx - 3, j]]) / h2
            } else {
                (v[[i + 1, j]] - v[[i - 1, j]]) / h2
            };
            out[[i, j]] = d;
        }
    }
    out
}

/// First derivative in eta of a node field.
pub(crate) fn diff_eta(v: &Array2<f64>, grid: &ComputationalGrid, jump: f64) -> Array2<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let h2 = 2.0 * grid.deta;
    let mut out = Array2::zeros((nx, ny));
    for j in 0..ny {
        for i in 0..nx {
            let d = if grid.periodic_y {
                let vp = if j + 1 == ny { v[[i, 0]] + jump } else { v[[i, j + 1]] };
                let vm = if j == 0 { v[[i, ny - 1]] - jump } else { v[[i, j - 1]] };
                (vp - vm) / h2
            } else if j == 0 {
                (-3.0 * v[[i, 0]] + 4.0 * v[[i, 1]] - v[[i, 2]]) / h2
            } else if j == ny - 1 {
                (3.0 * v[[i, ny - 1]] - 4.0 * v[[i, ny - 2]] + v[[i, ny - 3]]) / h2
            } else {
                (v[[i, j + 1]] - v[[i, j - 1]]) / h2
            };
            out[[i, j]] = d;
        }
    }
    out
}

/// Like [`diff_xi`] but with first-order one-sided differences at
/// non-periodic edges. Second-order one-sided formulas can report a negative
/// slope on strongly graded monotone meshes, so metric terms use this
/// variant to keep edge Jacobians positive whenever the mesh is valid.
pub(crate) fn diff_xi_metric(v: &Array2<f64>, grid: &ComputationalGrid, jump: f64) -> Array2<f64> {
    if grid.periodic_x {
        return diff_xi(v, grid, jump);
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = diff_xi(v, grid, jump);
    for j in 0..ny {
        out[[0, j]] = (v[[1, j]] - v[[0, j]]) / grid.dxi;
        out[[nx - 1, j]] = (v[[nx - 1, j]] - v[[nx - 2, j]]) / grid.dxi;
    }
    out
}

pub(crate) fn diff_eta_metric(v: &Array2<f64>, grid: &ComputationalGrid, jump: f64) -> Array2<f64> {
    if grid.periodic_y {
        return diff_eta(v, grid, jump);
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = diff_eta(v, grid, jump);
    for i in 0..nx {
        out[[i, 0]] = (v[[i, 1]] - v[[i, 0]]) / grid.deta;
        out[[i, ny - 1]] = (v[[i, ny - 1]] - v[[i, ny - 2]]) / grid.deta;
    }
    out
}

/// First derivative of a 1D line with one-sided second-order ends.
pub(crate) fn diff_line(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    let h2 = 2.0 * h;
    let mut out = vec![0.0; n];
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / h2;
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - v[i - 1]) / h2;
    }
    out[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / h2;
    out
}
