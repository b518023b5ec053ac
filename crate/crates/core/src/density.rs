//! Mesh density function and grid interpolation.
//!
//! [`DensityField`] stores the positive density `rho` together with its
//! computational-coordinate gradient on grid nodes, frozen at the time it was
//! built. Walkers sample the drift `grad(rho)/rho` by bilinear interpolation;
//! mesh coordinates are evaluated at walker end points with local bicubic
//! interpolation.
//!
//! The bicubic kernel is the local 4x4 tensor-product cubic through the
//! surrounding nodes, with the stencil shifted inward near non-periodic
//! edges. It reproduces cubic polynomials exactly and converges at fourth
//! order in the interior. All interpolants are written in anchored form
//! (node value plus weighted differences) so constant fields and nodal
//! values are reproduced bit-exactly.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComputationalGrid, PhysicalMesh};
use crate::physics;
use crate::stencil;

/// Choice of the arc-length weight `alpha` in `rho = sqrt(1 + alpha |grad u|^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// Fixed weight.
    Fixed(f64),
    /// `alpha = c / max |grad u|^2`, recomputed every time the density is built.
    Adaptive(f64),
}

impl AlphaMode {
    pub fn resolve(&self, max_grad_sq: f64) -> Result<f64> {
        let alpha = match *self {
            AlphaMode::Fixed(a) => a,
            // The floor keeps alpha finite when the field is flat; the
            // product alpha * |grad u|^2 is then exactly zero anyway.
            AlphaMode::Adaptive(c) => c / max_grad_sq.max(1e-300),
        };
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidConfig { reason: format!("resolved alpha {alpha} not positive and finite") });
        }
        Ok(alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub alpha: AlphaMode,
    /// Optional 9-point averaging passes applied to rho before it is
    /// differentiated. Off by default.
    #[serde(default)]
    pub smoothing_passes: usize,
}

impl DensityConfig {
    pub fn fixed(alpha: f64) -> Self {
        Self { alpha: AlphaMode::Fixed(alpha), smoothing_passes: 0 }
    }

    pub fn adaptive(c: f64) -> Self {
        Self { alpha: AlphaMode::Adaptive(c), smoothing_passes: 0 }
    }
}

/// Mesh density `rho` and its grid gradient, frozen at `frozen_time`.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub grid: ComputationalGrid,
    pub rho: Array2<f64>,
    pub grad_xi: Array2<f64>,
    pub grad_eta: Array2<f64>,
    pub frozen_time: f64,
}

impl DensityField {
    /// Build a field from given nodal rho values; gradients are the standard
    /// stencils of this crate.
    pub fn from_rho(grid: ComputationalGrid, rho: Array2<f64>, frozen_time: f64) -> Result<Self> {
        if rho.dim() != (grid.nx, grid.ny) {
            return Err(Error::GridMismatch);
        }
        for &r in rho.iter() {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::NonFinite { context: "density rho" });
            }
        }
        let grad_xi = stencil::diff_xi(&rho, &grid, 0.0);
        let grad_eta = stencil::diff_eta(&rho, &grid, 0.0);
        Ok(Self { grid, rho, grad_xi, grad_eta, frozen_time })
    }

    /// Drift `grad(rho)/rho` at a point, with the gradient and rho each
    /// sampled by bilinear interpolation.
    pub fn drift_at(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let gx = sample_bilinear(&self.grid, &self.grad_xi, p)?;
        let ge = sample_bilinear(&self.grid, &self.grad_eta, p)?;
        let r = sample_bilinear(&self.grid, &self.rho, p)?;
        Ok([gx / r, ge / r])
    }

    /// Drift at a stored grid node, used by the deterministic steppers.
    #[inline]
    pub fn drift_at_node(&self, i: usize, j: usize) -> [f64; 2] {
        let r = self.rho[[i, j]];
        [self.grad_xi[[i, j]] / r, self.grad_eta[[i, j]] / r]
    }

    /// Largest drift magnitude per direction over all nodes, for CFL limits.
    pub fn max_drift(&self) -> [f64; 2] {
        let mut m = [0.0f64; 2];
        for ((i, j), _) in self.rho.indexed_iter() {
            let d = self.drift_at_node(i, j);
            m[0] = m[0].max(d[0].abs());
            m[1] = m[1].max(d[1].abs());
        }
        m
    }
}

/// Build the arc-length density `rho = sqrt(1 + alpha (u_x^2 + u_y^2))` from a
/// scalar field on the current mesh. The physical gradient is taken with the
/// chain-rule stencils of [`physics`], so `rho >= 1` everywhere.
pub fn build_arclength_density(u: &Array2<f64>, mesh: &PhysicalMesh, cfg: &DensityConfig) -> Result<DensityField> {
    if u.dim() != (mesh.grid.nx, mesh.grid.ny) {
        return Err(Error::GridMismatch);
    }
    for &v in u.iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { context: "adaptation field u" });
        }
    }
    let metrics = physics::metric_terms(mesh)?;
    let (ux, uy) = physics::physical_gradient(u, &metrics);
    let mut grad_sq = Array2::zeros(u.dim());
    let mut max_grad_sq = 0.0f64;
    for ((i, j), g) in grad_sq.indexed_iter_mut() {
        let s = ux[[i, j]] * ux[[i, j]] + uy[[i, j]] * uy[[i, j]];
        *g = s;
        max_grad_sq = max_grad_sq.max(s);
    }
    let alpha = cfg.alpha.resolve(max_grad_sq)?;
    let mut rho = grad_sq.mapv(|s| (1.0 + alpha * s).sqrt());
    for _ in 0..cfg.smoothing_passes {
        rho = smooth_once(&rho, &mesh.grid);
    }
    DensityField::from_rho(mesh.grid, rho, mesh.time)
}

/// One pass of the 9-point [1 2 1] x [1 2 1] / 16 smoother, renormalized at
/// non-periodic edges.
fn smooth_once(v: &Array2<f64>, grid: &ComputationalGrid) -> Array2<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let w1 = [1.0, 2.0, 1.0];
    let mut out = Array2::zeros((nx, ny));
    for i in 0..nx {
        for j in 0..ny {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (di, wi) in (-1i64..=1).zip(w1) {
                for (dj, wj) in (-1i64..=1).zip(w1) {
                    let ii = i as i64 + di;
                    let jj = j as i64 + dj;
                    let ii = if grid.periodic_x {
                        ii.rem_euclid(nx as i64)
                    } else if ii < 0 || ii >= nx as i64 {
                        continue;
                    } else {
                        ii
                    };
                    let jj = if grid.periodic_y {
                        jj.rem_euclid(ny as i64)
                    } else if jj < 0 || jj >= ny as i64 {
                        continue;
                    } else {
                        jj
                    };
                    acc += wi * wj * v[[ii as usize, jj as usize]];
                    wsum += wi * wj;
                }
            }
            out[[i, j]] = acc / wsum;
        }
    }
    out
}

/// Location of a coordinate inside the node lattice of one axis: base node
/// `i0` and fractional offset `t` in `[0, 1)`. Positions within 1e-12 of a
/// node snap onto it so nodal values are reproduced bit-exactly.
#[derive(Debug, Clone, Copy)]
struct AxisLoc {
    i0: usize,
    t: f64,
    /// Position in index units, consistent with `i0 + t`.
    pos: f64,
}

const SNAP: f64 = 1e-12;
const EDGE_SLACK: f64 = 1e-9;

fn locate(coord: f64, n: usize, periodic: bool) -> Option<AxisLoc> {
    if !coord.is_finite() {
        return None;
    }
    if periodic {
        let w = coord - coord.floor();
        let mut pos = w * n as f64;
        if pos >= n as f64 {
            pos = 0.0;
        }
        let mut i0 = pos.floor() as usize;
        if i0 >= n {
            i0 = 0;
        }
        let mut t = pos - i0 as f64;
        if t < SNAP {
            t = 0.0;
        } else if t > 1.0 - SNAP {
            i0 = (i0 + 1) % n;
            t = 0.0;
        }
        Some(AxisLoc { i0, t, pos: i0 as f64 + t })
    } else {
        let span = (n - 1) as f64;
        let pos = coord * span;
        if pos < -EDGE_SLACK * span || pos > span * (1.0 + EDGE_SLACK) {
            return None;
        }
        let pos = pos.clamp(0.0, span);
        let mut i0 = pos.floor() as usize;
        if i0 > n - 1 {
            i0 = n - 1;
        }
        let mut t = pos - i0 as f64;
        if t < SNAP {
            t = 0.0;
        } else if t > 1.0 - SNAP {
            i0 += 1;
            t = 0.0;
        }
        Some(AxisLoc { i0, t, pos: i0 as f64 + t })
    }
}

#[inline]
fn lerp_anchor(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + t * (b - a)
    }
}

/// Tensor-product linear interpolation on the containing cell.
pub fn sample_bilinear(grid: &ComputationalGrid, values: &Array2<f64>, p: [f64; 2]) -> Result<f64> {
    let ax = locate(p[0], grid.nx, grid.periodic_x).ok_or(Error::OutOfDomain(p[0], p[1]))?;
    let ay = locate(p[1], grid.ny, grid.periodic_y).ok_or(Error::OutOfDomain(p[0], p[1]))?;
    let i1 = if grid.periodic_x { (ax.i0 + 1) % grid.nx } else { (ax.i0 + 1).min(grid.nx - 1) };
    let j1 = if grid.periodic_y { (ay.i0 + 1) % grid.ny } else { (ay.i0 + 1).min(grid.ny - 1) };
    let row0 = lerp_anchor(values[[ax.i0, ay.i0]], values[[i1, ay.i0]], ax.t);
    if ay.t == 0.0 {
        return Ok(row0);
    }
    let row1 = lerp_anchor(values[[ax.i0, j1]], values[[i1, j1]], ax.t);
    Ok(lerp_anchor(row0, row1, ay.t))
}

/// Cubic Lagrange basis on nodes {0, 1, 2, 3} evaluated at `q`, returned as
/// the weights of nodes 0, 2, 3 relative to anchor node 1.
#[inline]
fn cubic_weights(q: f64) -> [f64; 3] {
    let l0 = -(q - 1.0) * (q - 2.0) * (q - 3.0) / 6.0;
    let l2 = -q * (q - 1.0) * (q - 3.0) / 2.0;
    let l3 = q * (q - 1.0) * (q - 2.0) / 6.0;
    [l0, l2, l3]
}

#[inline]
fn cubic_anchor(v: [f64; 4], q: f64) -> f64 {
    let [l0, l2, l3] = cubic_weights(q);
    v[1] + l0 * (v[0] - v[1]) + l2 * (v[2] - v[1]) + l3 * (v[3] - v[1])
}

/// Stencil description along one axis for the cubic kernel.
enum AxisStencil {
    /// Single node (exactly on a node).
    Node(usize),
    /// Four unwrapped node indices plus the evaluation point in stencil units.
    Cubic([isize; 4], f64),
    /// Quadratic over all three nodes (non-periodic n == 3).
    Quad(f64),
    /// Linear fallback (periodic n == 3).
    Linear(usize, usize, f64, bool),
}

fn cubic_axis_stencil(loc: AxisLoc, n: usize, periodic: bool) -> AxisStencil {
    if loc.t == 0.0 {
        return AxisStencil::Node(loc.i0);
    }
    if periodic {
        if n < 4 {
            let i1 = (loc.i0 + 1) % n;
            return AxisStencil::Linear(loc.i0, i1, loc.t, i1 < loc.i0 || loc.i0 + 1 == n);
        }
        let b = loc.i0 as isize - 1;
        AxisStencil::Cubic([b, b + 1, b + 2, b + 3], 1.0 + loc.t)
    } else {
        if n < 4 {
            return AxisStencil::Quad(loc.pos);
        }
        let s = (loc.i0 as isize - 1).clamp(0, n as isize - 4);
        AxisStencil::Cubic([s, s + 1, s + 2, s + 3], loc.pos - s as f64)
    }
}

/// Local tensor-product cubic interpolation. `jump` gives the value increase
/// per period in each direction, so periodically extended coordinate fields
/// are sampled with unwrapped stencil values; pass `[0.0, 0.0]` for plain
/// scalar fields.
pub fn sample_bicubic_unwrapped(
    grid: &ComputationalGrid,
    values: &Array2<f64>,
    p: [f64; 2],
    jump: [f64; 2],
) -> Result<f64> {
    let ax = locate(p[0], grid.nx, grid.periodic_x).ok_or(Error::OutOfDomain(p[0], p[1]))?;
    let ay = locate(p[1], grid.ny, grid.periodic_y).ok_or(Error::OutOfDomain(p[0], p[1]))?;
    let sx = cubic_axis_stencil(ax, grid.nx, grid.periodic_x);
    let sy = cubic_axis_stencil(ay, grid.ny, grid.periodic_y);

    let fetch = |iu: isize, ju: isize| -> f64 {
        let (i, kx) = grid.wrap_i(iu);
        let (j, ky) = grid.wrap_j(ju);
        values[[i, j]] + kx as f64 * jump[0] + ky as f64 * jump[1]
    };

    let along_x = |ju: isize| -> f64 {
        match &sx {
            AxisStencil::Node(i0) => fetch(*i0 as isize, ju),
            AxisStencil::Cubic(idx, q) => {
                cubic_anchor([fetch(idx[0], ju), fetch(idx[1], ju), fetch(idx[2], ju), fetch(idx[3], ju)], *q)
            }
            AxisStencil::Quad(pos) => quad_anchor([fetch(0, ju), fetch(1, ju), fetch(2, ju)], *pos),
            AxisStencil::Linear(i0, i1, t, wrapped) => {
                let b = fetch(*i1 as isize, ju) + if *wrapped { jump[0] } else { 0.0 };
                lerp_anchor(fetch(*i0 as isize, ju), b, *t)
            }
        }
    };

    let out = match &sy {
        AxisStencil::Node(j0) => along_x(*j0 as isize),
        AxisStencil::Cubic(idx, q) => {
            cubic_anchor([along_x(idx[0]), along_x(idx[1]), along_x(idx[2]), along_x(idx[3])], *q)
        }
        AxisStencil::Quad(pos) => quad_anchor([along_x(0), along_x(1), along_x(2)], *pos),
        AxisStencil::Linear(j0, j1, t, wrapped) => {
            let b = along_x(*j1 as isize) + if *wrapped { jump[1] } else { 0.0 };
            lerp_anchor(along_x(*j0 as isize), b, *t)
        }
    };
    Ok(out)
}

#[inline]
fn quad_anchor(v: [f64; 3], q: f64) -> f64 {
    let w0 = (q - 1.0) * (q - 2.0) / 2.0;
    let w2 = q * (q - 1.0) / 2.0;
    v[1] + w0 * (v[0] - v[1]) + w2 * (v[2] - v[1])
}

/// Tensor-product cubic interpolation of a plain scalar field.
pub fn sample_bicubic(grid: &ComputationalGrid, values: &Array2<f64>, p: [f64; 2]) -> Result<f64> {
    sample_bicubic_unwrapped(grid, values, p, [0.0, 0.0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PhysicalDomain;
    use proptest::prelude::*;

    fn grid(n: usize) -> ComputationalGrid {
        ComputationalGrid::new(n, n, false, false).unwrap()
    }

    fn field_on(g: &ComputationalGrid, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
        Array2::from_shape_fn((g.nx, g.ny), |(i, j)| f(g.xi(i), g.eta(j)))
    }

    #[test]
    fn bilinear_reproduces_bilinear_function() {
        let g = grid(3);
        let v = field_on(&g, |x, y| x * y);
        assert!((sample_bilinear(&g, &v, [0.5, 0.5]).unwrap() - 0.25).abs() < 1e-15);
        assert!((sample_bilinear(&g, &v, [0.25, 0.25]).unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn bilinear_linear_exact_at_random_points() {
        use rand::{Rng, SeedableRng};
        let g = grid(9);
        let v = field_on(&g, |x, y| 1.5 * x - 0.75 * y + 0.2);
        let mut rng = rand::rngs::SmallRng::seed_from_u64(11);
        for _ in 0..100 {
            let p = [rng.random::<f64>(), rng.random::<f64>()];
            let got = sample_bilinear(&g, &v, p).unwrap();
            let want = 1.5 * p[0] - 0.75 * p[1] + 0.2;
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn bilinear_cell_center_of_hand_corners() {
        // Single-cell values 1, 2, 3, 4 at (i, j) = (0,0), (1,0), (0,1), (1,1),
        // evaluated at the cell center: (1 + 2 + 3 + 4) / 4.
        let g = grid(3);
        let mut v = Array2::zeros((3, 3));
        v[[0, 0]] = 1.0;
        v[[1, 0]] = 2.0;
        v[[0, 1]] = 3.0;
        v[[1, 1]] = 4.0;
        let got = sample_bilinear(&g, &v, [0.25, 0.25]).unwrap();
        assert!((got - 2.5).abs() < 1e-15);
    }

    #[test]
    fn bilinear_rejects_outside_nonperiodic() {
        let g = grid(5);
        let v = field_on(&g, |x, _| x);
        assert!(sample_bilinear(&g, &v, [1.5, 0.5]).is_err());
        assert!(sample_bilinear(&g, &v, [0.5, -0.2]).is_err());
    }

    #[test]
    fn bicubic_constant_everywhere_exact() {
        let g = grid(7);
        let v = Array2::from_elem((7, 7), 4.75);
        for p in [[0.0, 0.0], [0.13, 0.87], [0.5, 0.5], [1.0, 0.32], [0.999, 0.001]] {
            assert_eq!(sample_bicubic(&g, &v, p).unwrap(), 4.75);
        }
    }

    #[test]
    fn bicubic_cubic_polynomial_exact_interior() {
        let g = grid(9);
        let f = |x: f64, y: f64| 2.0 * x * x * x - x * x * y + 3.0 * x * y * y - 0.5 * y * y * y + x - 2.0 * y + 1.0;
        let v = field_on(&g, f);
        for p in [[0.3, 0.4], [0.55, 0.61], [0.21, 0.79], [0.48, 0.52]] {
            let got = sample_bicubic(&g, &v, p).unwrap();
            assert!((got - f(p[0], p[1])).abs() < 1e-12, "p = {p:?}");
        }
    }

    #[test]
    fn bicubic_fourth_order_refinement() {
        // Smooth non-polynomial field; interior error should drop ~16x per
        // halving of the spacing.
        let f = |x: f64, y: f64| (2.0 * x).sin() * (1.5 * y).cos();
        let mut errs = Vec::new();
        for n in [17usize, 33, 65] {
            let g = grid(n);
            let v = field_on(&g, f);
            let mut e = 0.0f64;
            for k in 0..50 {
                let p = [0.25 + 0.5 * (k as f64 / 49.0), 0.3 + 0.4 * ((k * 7 % 50) as f64 / 49.0)];
                e = e.max((sample_bicubic(&g, &v, p).unwrap() - f(p[0], p[1])).abs());
            }
            errs.push(e);
        }
        let s1 = (errs[0] / errs[1]).log2();
        let s2 = (errs[1] / errs[2]).log2();
        assert!(s1 > 3.5 && s1 < 4.6, "slope {s1}");
        assert!(s2 > 3.5 && s2 < 4.6, "slope {s2}");
    }

    #[test]
    fn bicubic_periodic_seam_consistency() {
        let g = ComputationalGrid::new(12, 12, true, true).unwrap();
        let f = |x: f64, y: f64| (std::f64::consts::TAU * x).sin() + (std::f64::consts::TAU * y).cos();
        let v = field_on(&g, f);
        for p in [[0.96875, 0.5], [0.015625, 0.75], [0.0, 0.40625]] {
            let a = sample_bicubic(&g, &v, p).unwrap();
            let b = sample_bicubic(&g, &v, [p[0] + 1.0, p[1]]).unwrap();
            assert_eq!(a, b);
            let c = sample_bilinear(&g, &v, p).unwrap();
            let d = sample_bilinear(&g, &v, [p[0] + 1.0, p[1]]).unwrap();
            assert_eq!(c, d);
        }
    }

    #[test]
    fn bicubic_unwrapped_tracks_coordinate_field() {
        // x = 2 xi on a periodic grid: sampling just past the seam must
        // continue linearly instead of folding back.
        let g = ComputationalGrid::new(10, 10, true, true).unwrap();
        let v = field_on(&g, |x, _| 2.0 * x);
        let got = sample_bicubic_unwrapped(&g, &v, [0.95, 0.5], [2.0, 0.0]).unwrap();
        assert!((got - 1.9).abs() < 1e-12);
        let got = sample_bicubic_unwrapped(&g, &v, [0.05, 0.5], [2.0, 0.0]).unwrap();
        assert!((got - 0.1).abs() < 1e-12);
    }

    #[test]
    fn nodal_values_bit_exact() {
        let g = grid(6);
        let v = field_on(&g, |x, y| (x * 17.0).sin() + y * 0.123);
        for i in 0..6 {
            for j in 0..6 {
                let p = [g.xi(i), g.eta(j)];
                assert_eq!(sample_bilinear(&g, &v, p).unwrap(), v[[i, j]]);
                assert_eq!(sample_bicubic(&g, &v, p).unwrap(), v[[i, j]]);
            }
        }
    }

    #[test]
    fn drift_zero_for_uniform_density() {
        let g = grid(9);
        let f = DensityField::from_rho(g, Array2::from_elem((9, 9), 1.0), 0.0).unwrap();
        for p in [[0.1, 0.9], [0.5, 0.5], [0.7, 0.31]] {
            assert_eq!(f.drift_at(p).unwrap(), [0.0, 0.0]);
        }
    }

    #[test]
    fn drift_of_exponential_matches_sinh_ratio() {
        let g = grid(21);
        let h = g.dxi;
        let rho = field_on(&g, |x, _| x.exp());
        let f = DensityField::from_rho(g, rho, 0.0).unwrap();
        let expected = h.sinh() / h;
        let d = f.drift_at([g.xi(10), g.eta(10)]).unwrap();
        assert!((d[0] - expected).abs() < 1e-13, "{} vs {}", d[0], expected);
        assert!(d[1].abs() < 1e-13);
    }

    #[test]
    fn drift_at_cell_midpoint_matches_brute_force() {
        let g = grid(11);
        let rho = field_on(&g, |x, y| 1.0 + 0.5 * (3.0 * x).sin() + 0.25 * y * y);
        let f = DensityField::from_rho(g, rho, 0.0).unwrap();
        let (i, j) = (4, 6);
        let p = [g.xi(i) + 0.5 * g.dxi, g.eta(j) + 0.5 * g.deta];
        let bl = |a: &Array2<f64>| 0.25 * (a[[i, j]] + a[[i + 1, j]] + a[[i, j + 1]] + a[[i + 1, j + 1]]);
        let want = [bl(&f.grad_xi) / bl(&f.rho), bl(&f.grad_eta) / bl(&f.rho)];
        let got = f.drift_at(p).unwrap();
        assert!((got[0] - want[0]).abs() < 1e-13);
        assert!((got[1] - want[1]).abs() < 1e-13);
    }

    #[test]
    fn arclength_density_constant_field() {
        let g = grid(9);
        let dom = PhysicalDomain::new(1.0, 1.0, false, false).unwrap();
        let mesh = PhysicalMesh::uniform(g, dom, 0.0);
        let u = Array2::from_elem((9, 9), 2.5);
        let f = build_arclength_density(&u, &mesh, &DensityConfig::adaptive(10.0)).unwrap();
        for &r in f.rho.iter() {
            assert_eq!(r, 1.0);
        }
        for &d in f.grad_xi.iter().chain(f.grad_eta.iter()) {
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn adaptive_alpha_caps_peak_density() {
        let g = grid(41);
        let dom = PhysicalDomain::new(1.0, 1.0, false, false).unwrap();
        let mesh = PhysicalMesh::uniform(g, dom, 0.0);
        let u = field_on(&g, |x, y| ((x - 0.5) * 8.0).tanh() + 0.3 * y);
        let f = build_arclength_density(&u, &mesh, &DensityConfig::adaptive(10.0)).unwrap();
        let max_rho = f.rho.iter().cloned().fold(0.0f64, f64::max);
        assert!((max_rho - 11.0f64.sqrt()).abs() < 1e-12, "max rho {max_rho}");
    }

    #[test]
    fn density_rejects_nonfinite_input() {
        let g = grid(5);
        let dom = PhysicalDomain::new(1.0, 1.0, false, false).unwrap();
        let mesh = PhysicalMesh::uniform(g, dom, 0.0);
        let mut u = Array2::from_elem((5, 5), 1.0);
        u[[2, 2]] = f64::NAN;
        assert!(build_arclength_density(&u, &mesh, &DensityConfig::fixed(0.2)).is_err());
    }

    proptest! {
        /// Scaling rho by a power of two leaves the drift bit-identical;
        /// arbitrary positive factors leave it equal to machine precision.
        #[test]
        fn drift_invariant_under_density_scaling(k in -6i32..7, px in 0.02f64..0.98, py in 0.02f64..0.98) {
            let g = grid(17);
            let rho = field_on(&g, |x, y| 1.0 + 0.4 * (5.0 * x).sin().abs() + 0.3 * y);
            let c = 2.0f64.powi(k);
            let f1 = DensityField::from_rho(g, rho.clone(), 0.0).unwrap();
            let f2 = DensityField::from_rho(g, rho.mapv(|r| c * r), 0.0).unwrap();
            let d1 = f1.drift_at([px, py]).unwrap();
            let d2 = f2.drift_at([px, py]).unwrap();
            prop_assert_eq!(d1, d2);

            let f3 = DensityField::from_rho(g, rho.mapv(|r| 3.0 * r), 0.0).unwrap();
            let d3 = f3.drift_at([px, py]).unwrap();
            prop_assert!((d1[0] - d3[0]).abs() <= 1e-13 * (1.0 + d1[0].abs()));
            prop_assert!((d1[1] - d3[1]).abs() <= 1e-13 * (1.0 + d1[1].abs()));
        }
    }
}
