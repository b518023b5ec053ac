//! Deterministic solves of the parabolic mesh generator
//! `x_t = (grad rho / rho) . grad x + lap x` (and the same for `y`):
//! subdomain and single-domain stepping, the 1D boundary-line generator,
//! and the periodic whole-grid stepper.
//!
//! Forward Euler is used internally with enough equal sub-steps to satisfy
//! the diffusion limit `dt <= min(dxi^2, deta^2) / 4` and the drift limit
//! `dt <= dxi / |drift|`, both with a safety factor.

use ndarray::Array2;

use crate::density::DensityField;
use crate::error::{Error, Result};
use crate::grid::{IndexBox, PhysicalMesh, Side};

/// Where a set of boundary values came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    PhysicalBoundary,
    StochasticInterface,
}

/// (x, y) node values along the four edges of a box, corners included in
/// both adjacent edges.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeValues {
    pub west: Vec<[f64; 2]>,
    pub east: Vec<[f64; 2]>,
    pub south: Vec<[f64; 2]>,
    pub north: Vec<[f64; 2]>,
}

impl EdgeValues {
    pub fn side(&self, s: Side) -> &[[f64; 2]] {
        match s {
            Side::West => &self.west,
            Side::East => &self.east,
            Side::South => &self.south,
            Side::North => &self.north,
        }
    }
}

/// Dirichlet data for a mesh step: edge values at the step start and end.
/// Values at interior sub-steps are interpolated linearly in time.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub at_n: EdgeValues,
    pub at_np1: EdgeValues,
    pub provenance: Provenance,
}

impl BoundaryData {
    /// Static data taken from the current mesh over a box: start and end
    /// values coincide. Useful for steady problems.
    pub fn static_from_mesh(mesh: &PhysicalMesh, bx: &IndexBox, provenance: Provenance) -> Self {
        let edge = |side: Side| -> Vec<[f64; 2]> {
            match side {
                Side::West => (bx.j_lo..=bx.j_hi)
                    .map(|ju| [mesh.x_at(bx.i_lo as isize, ju as isize), mesh.y_at(bx.i_lo as isize, ju as isize)])
                    .collect(),
                Side::East => (bx.j_lo..=bx.j_hi)
                    .map(|ju| [mesh.x_at(bx.i_hi as isize, ju as isize), mesh.y_at(bx.i_hi as isize, ju as isize)])
                    .collect(),
                Side::South => (bx.i_lo..=bx.i_hi)
                    .map(|iu| [mesh.x_at(iu as isize, bx.j_lo as isize), mesh.y_at(iu as isize, bx.j_lo as isize)])
                    .collect(),
                Side::North => (bx.i_lo..=bx.i_hi)
                    .map(|iu| [mesh.x_at(iu as isize, bx.j_hi as isize), mesh.y_at(iu as isize, bx.j_hi as isize)])
                    .collect(),
            }
        };
        let values = EdgeValues { west: edge(Side::West), east: edge(Side::East), south: edge(Side::South), north: edge(Side::North) };
        Self { at_n: values.clone(), at_np1: values, provenance }
    }

    /// Sample the data at a continuous position along an edge and a time
    /// fraction `theta` in `[0, 1]` between the step start and end. The edge
    /// coordinate is the computational coordinate along the edge mapped to
    /// `[0, 1]` over the stored nodes.
    pub fn sample(&self, side: Side, coord: f64, theta: f64) -> [f64; 2] {
        let a = edge_lerp(self.at_n.side(side), coord);
        if theta == 0.0 {
            return a;
        }
        let b = edge_lerp(self.at_np1.side(side), coord);
        if theta == 1.0 {
            return b;
        }
        [a[0] + theta * (b[0] - a[0]), a[1] + theta * (b[1] - a[1])]
    }

    /// Corner consistency between adjacent edges, and the fixed coordinate
    /// components for physical-boundary data.
    pub fn validate(&self, lx: f64, ly: f64, tol: f64) -> Result<()> {
        for values in [&self.at_n, &self.at_np1] {
            let w = &values.west;
            let e = &values.east;
            let s = &values.south;
            let n = &values.north;
            let pairs = [
                (w[0], s[0]),
                (w[w.len() - 1], n[0]),
                (e[0], s[s.len() - 1]),
                (e[e.len() - 1], n[n.len() - 1]),
            ];
            for (a, b) in pairs {
                if (a[0] - b[0]).abs() > tol || (a[1] - b[1]).abs() > tol {
                    return Err(Error::InvalidConfig { reason: "inconsistent corner values in boundary data".into() });
                }
            }
            if self.provenance == Provenance::PhysicalBoundary {
                if w.iter().any(|v| v[0].abs() > tol) || e.iter().any(|v| (v[0] - lx).abs() > tol) {
                    return Err(Error::InvalidConfig { reason: "west/east boundary x values not fixed".into() });
                }
                if s.iter().any(|v| v[1].abs() > tol) || n.iter().any(|v| (v[1] - ly).abs() > tol) {
                    return Err(Error::InvalidConfig { reason: "south/north boundary y values not fixed".into() });
                }
            }
        }
        Ok(())
    }
}

fn edge_lerp(values: &[[f64; 2]], coord: f64) -> [f64; 2] {
    let span = (values.len() - 1) as f64;
    let pos = (coord * span).clamp(0.0, span);
    let i0 = (pos.floor() as usize).min(values.len() - 2);
    let t = pos - i0 as f64;
    let a = values[i0];
    if t == 0.0 {
        return a;
    }
    let b = values[i0 + 1];
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Limits for the internal forward-Euler sub-stepping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLimits {
    pub safety: f64,
    pub substep_cap: usize,
}

impl Default for StepLimits {
    fn default() -> Self {
        Self { safety: 0.8, substep_cap: 200_000 }
    }
}

/// Number of equal forward-Euler sub-steps needed for `dt` under the
/// diffusion and drift limits.
pub fn stability_substeps(dt: f64, dxi: f64, deta: f64, max_drift: [f64; 2], limits: &StepLimits) -> Result<usize> {
    let mut limit = dxi.powi(2).min(deta.powi(2)) / 4.0;
    if max_drift[0] > 0.0 {
        limit = limit.min(dxi / max_drift[0]);
    }
    if max_drift[1] > 0.0 {
        limit = limit.min(deta / max_drift[1]);
    }
    let dt_stable = limits.safety * limit;
    // Tiny slack so exact ratios are not pushed up by rounding noise.
    let m = ((dt / dt_stable - 1e-9).ceil().max(1.0)) as usize;
    if m > limits.substep_cap {
        return Err(Error::SubstepCapExceeded { required: m, cap: limits.substep_cap });
    }
    Ok(m)
}

/// Solution of a box step: unwrapped node coordinates over the whole box,
/// boundary rows set to the supplied Dirichlet data at the step end.
#[derive(Debug, Clone)]
pub struct BoxSolution {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

#[inline]
fn lerp_theta(a: [f64; 2], b: [f64; 2], theta: f64) -> [f64; 2] {
    if theta == 1.0 {
        b
    } else if theta == 0.0 {
        a
    } else {
        [a[0] + theta * (b[0] - a[0]), a[1] + theta * (b[1] - a[1])]
    }
}

/// Advance the mesh over one box with Dirichlet boundary data.
pub fn step_mesh_2d(
    mesh_n: &PhysicalMesh,
    field: &DensityField,
    bx: &IndexBox,
    bc: &BoundaryData,
    dt: f64,
    limits: &StepLimits,
) -> Result<BoxSolution> {
    let grid = &mesh_n.grid;
    let (ni, nj) = (bx.ni(), bx.nj());
    if bc.at_n.west.len() != nj || bc.at_n.south.len() != ni {
        return Err(Error::InvalidConfig { reason: "boundary data does not match box extents".into() });
    }

    let mut x = Array2::zeros((ni, nj));
    let mut y = Array2::zeros((ni, nj));
    let mut drift_xi = Array2::zeros((ni, nj));
    let mut drift_eta = Array2::zeros((ni, nj));
    let mut max_drift = [0.0f64; 2];
    for li in 0..ni {
        for lj in 0..nj {
            let iu = (bx.i_lo + li) as isize;
            let ju = (bx.j_lo + lj) as isize;
            x[[li, lj]] = mesh_n.x_at(iu, ju);
            y[[li, lj]] = mesh_n.y_at(iu, ju);
            let (i, _) = grid.wrap_i(iu);
            let (j, _) = grid.wrap_j(ju);
            let d = field.drift_at_node(i, j);
            drift_xi[[li, lj]] = d[0];
            drift_eta[[li, lj]] = d[1];
            max_drift[0] = max_drift[0].max(d[0].abs());
            max_drift[1] = max_drift[1].max(d[1].abs());
        }
    }

    let m = stability_substeps(dt, grid.dxi, grid.deta, max_drift, limits)?;
    let dt_sub = dt / m as f64;
    let inv_dxi2 = 1.0 / (grid.dxi * grid.dxi);
    let inv_deta2 = 1.0 / (grid.deta * grid.deta);
    let inv_2dxi = 1.0 / (2.0 * grid.dxi);
    let inv_2deta = 1.0 / (2.0 * grid.deta);

    let mut xn = x.clone();
    let mut yn = y.clone();
    for step in 0..m {
        for li in 1..ni - 1 {
            for lj in 1..nj - 1 {
                let rhs = |v: &Array2<f64>| {
                    let lap = (v[[li + 1, lj]] - 2.0 * v[[li, lj]] + v[[li - 1, lj]]) * inv_dxi2
                        + (v[[li, lj + 1]] - 2.0 * v[[li, lj]] + v[[li, lj - 1]]) * inv_deta2;
                    let adv = drift_xi[[li, lj]] * (v[[li + 1, lj]] - v[[li - 1, lj]]) * inv_2dxi
                        + drift_eta[[li, lj]] * (v[[li, lj + 1]] - v[[li, lj - 1]]) * inv_2deta;
                    adv + lap
                };
                xn[[li, lj]] = x[[li, lj]] + dt_sub * rhs(&x);
                yn[[li, lj]] = y[[li, lj]] + dt_sub * rhs(&y);
            }
        }
        let theta = (step + 1) as f64 / m as f64;
        for lj in 0..nj {
            let w = lerp_theta(bc.at_n.west[lj], bc.at_np1.west[lj], theta);
            let e = lerp_theta(bc.at_n.east[lj], bc.at_np1.east[lj], theta);
            xn[[0, lj]] = w[0];
            yn[[0, lj]] = w[1];
            xn[[ni - 1, lj]] = e[0];
            yn[[ni - 1, lj]] = e[1];
        }
        for li in 0..ni {
            let s = lerp_theta(bc.at_n.south[li], bc.at_np1.south[li], theta);
            let n = lerp_theta(bc.at_n.north[li], bc.at_np1.north[li], theta);
            xn[[li, 0]] = s[0];
            yn[[li, 0]] = s[1];
            xn[[li, nj - 1]] = n[0];
            yn[[li, nj - 1]] = n[1];
        }
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut y, &mut yn);
    }
    Ok(BoxSolution { x, y })
}

/// Advance a 1D boundary line `x_t = (rho_xi / rho) x_xi + x_xixi` with fixed
/// endpoints. `spacing` is the computational node spacing along the line.
pub fn step_boundary_mesh_1d(
    line: &[f64],
    rho_line: &[f64],
    spacing: f64,
    dt: f64,
    limits: &StepLimits,
) -> Result<Vec<f64>> {
    let n = line.len();
    if n < 3 || rho_line.len() != n {
        return Err(Error::InvalidConfig { reason: "boundary line needs at least 3 matching nodes".into() });
    }
    let drho = crate::stencil::diff_line(rho_line, spacing);
    let drift: Vec<f64> = drho.iter().zip(rho_line).map(|(&d, &r)| d / r).collect();
    let max_d = drift.iter().fold(0.0f64, |m, &d| m.max(d.abs()));
    let m = stability_substeps(dt, spacing, spacing, [max_d, 0.0], limits)?;
    let dt_sub = dt / m as f64;
    let inv_h2 = 1.0 / (spacing * spacing);
    let inv_2h = 1.0 / (2.0 * spacing);

    let mut v = line.to_vec();
    let mut vn = v.clone();
    for _ in 0..m {
        for i in 1..n - 1 {
            let lap = (v[i + 1] - 2.0 * v[i] + v[i - 1]) * inv_h2;
            let adv = drift[i] * (v[i + 1] - v[i - 1]) * inv_2h;
            vn[i] = v[i] + dt_sub * (adv + lap);
        }
        std::mem::swap(&mut v, &mut vn);
    }
    Ok(v)
}

/// Advance a fully periodic mesh over the whole grid; derivative stencils see
/// the periodically extended coordinates across the seam.
pub fn step_mesh_periodic(mesh_n: &PhysicalMesh, field: &DensityField, dt: f64, limits: &StepLimits) -> Result<PhysicalMesh> {
    let grid = mesh_n.grid;
    if !grid.fully_periodic() {
        return Err(Error::InvalidConfig { reason: "periodic stepper requires a fully periodic grid".into() });
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let (lx, ly) = (mesh_n.domain.lx, mesh_n.domain.ly);
    let max_drift = field.max_drift();
    let m = stability_substeps(dt, grid.dxi, grid.deta, max_drift, limits)?;
    let dt_sub = dt / m as f64;
    let inv_dxi2 = 1.0 / (grid.dxi * grid.dxi);
    let inv_deta2 = 1.0 / (grid.deta * grid.deta);
    let inv_2dxi = 1.0 / (2.0 * grid.dxi);
    let inv_2deta = 1.0 / (2.0 * grid.deta);

    let mut x = mesh_n.x.clone();
    let mut y = mesh_n.y.clone();
    let mut xn = x.clone();
    let mut yn = y.clone();
    for _ in 0..m {
        for i in 0..nx {
            for j in 0..ny {
                // Neighbor values, unwrapped across the seam for each field's
                // own periodic direction.
                let (ie, iw) = ((i + 1) % nx, (i + nx - 1) % nx);
                let (jn, js) = ((j + 1) % ny, (j + ny - 1) % ny);
                let x_e = x[[ie, j]] + if i + 1 == nx { lx } else { 0.0 };
                let x_w = x[[iw, j]] - if i == 0 { lx } else { 0.0 };
                let y_e = y[[ie, j]];
                let y_w = y[[iw, j]];
                let x_n = x[[i, jn]];
                let x_s = x[[i, js]];
                let y_n = y[[i, jn]] + if j + 1 == ny { ly } else { 0.0 };
                let y_s = y[[i, js]] - if j == 0 { ly } else { 0.0 };
                let d = field.drift_at_node(i, j);
                let rhs_x = d[0] * (x_e - x_w) * inv_2dxi
                    + d[1] * (x_n - x_s) * inv_2deta
                    + (x_e - 2.0 * x[[i, j]] + x_w) * inv_dxi2
                    + (x_n - 2.0 * x[[i, j]] + x_s) * inv_deta2;
                let rhs_y = d[0] * (y_e - y_w) * inv_2dxi
                    + d[1] * (y_n - y_s) * inv_2deta
                    + (y_e - 2.0 * y[[i, j]] + y_w) * inv_dxi2
                    + (y_n - 2.0 * y[[i, j]] + y_s) * inv_deta2;
                xn[[i, j]] = x[[i, j]] + dt_sub * rhs_x;
                yn[[i, j]] = y[[i, j]] + dt_sub * rhs_y;
            }
        }
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut y, &mut yn);
    }
    Ok(PhysicalMesh { grid, domain: mesh_n.domain, x, y, time: mesh_n.time + dt })
}
