//! Computational-domain geometry: uniform grids, periodicity, subdomain
//! decomposition and interface-node enumeration.
//!
//! The computational domain is the unit square. In a non-periodic direction
//! with `n` nodes the coordinates are `i / (n - 1)`, so the first node sits at
//! 0 and the last at 1. In a periodic direction they are `i / n` and node `n`
//! is identified with node 0.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use ndarray::Array2;

use crate::error::{Error, Result};

/// One of the four edges of the computational square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// xi = 0
    West,
    /// xi = 1
    East,
    /// eta = 0
    South,
    /// eta = 1
    North,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::West, Side::East, Side::South, Side::North];
}

/// Uniform tensor grid on the computational square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputationalGrid {
    pub nx: usize,
    pub ny: usize,
    pub periodic_x: bool,
    pub periodic_y: bool,
    /// Node spacing in xi: `1/(nx-1)` non-periodic, `1/nx` periodic.
    pub dxi: f64,
    /// Node spacing in eta.
    pub deta: f64,
}

impl ComputationalGrid {
    pub fn new(nx: usize, ny: usize, periodic_x: bool, periodic_y: bool) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::GridTooSmall { nx, ny });
        }
        let dxi = if periodic_x { 1.0 / nx as f64 } else { 1.0 / (nx - 1) as f64 };
        let deta = if periodic_y { 1.0 / ny as f64 } else { 1.0 / (ny - 1) as f64 };
        Ok(Self { nx, ny, periodic_x, periodic_y, dxi, deta })
    }

    /// xi coordinate of node column `i`.
    #[inline]
    pub fn xi(&self, i: usize) -> f64 {
        i as f64 * self.dxi
    }

    /// eta coordinate of node row `j`.
    #[inline]
    pub fn eta(&self, j: usize) -> f64 {
        j as f64 * self.deta
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    /// Number of cells per direction: a periodic direction closes the last
    /// cell across the seam.
    pub fn cell_counts(&self) -> (usize, usize) {
        let cx = if self.periodic_x { self.nx } else { self.nx - 1 };
        let cy = if self.periodic_y { self.ny } else { self.ny - 1 };
        (cx, cy)
    }

    /// Wrap an unwrapped column index onto stored nodes; returns the node
    /// index and the number of full periods crossed (0 for non-periodic).
    #[inline]
    pub fn wrap_i(&self, iu: isize) -> (usize, i64) {
        wrap_index(iu, self.nx, self.periodic_x)
    }

    #[inline]
    pub fn wrap_j(&self, ju: isize) -> (usize, i64) {
        wrap_index(ju, self.ny, self.periodic_y)
    }

    pub fn fully_periodic(&self) -> bool {
        self.periodic_x && self.periodic_y
    }

    /// Whether a stored node index lies on the physical boundary of the
    /// computational square. Periodic directions have no boundary.
    pub fn on_boundary(&self, i: usize, j: usize) -> bool {
        (!self.periodic_x && (i == 0 || i == self.nx - 1))
            || (!self.periodic_y && (j == 0 || j == self.ny - 1))
    }

    /// Build a `px` by `py` subdomain decomposition.
    pub fn decompose(&self, px: usize, py: usize) -> Result<Decomposition> {
        Decomposition::new(self, px, py)
    }
}

#[inline]
fn wrap_index(iu: isize, n: usize, periodic: bool) -> (usize, i64) {
    if periodic {
        let n = n as isize;
        let w = iu.rem_euclid(n);
        let k = (iu - w) / n;
        (w as usize, k as i64)
    } else {
        debug_assert!(iu >= 0 && (iu as usize) < n);
        (iu as usize, 0)
    }
}

/// Rectangular physical domain `[0, Lx] x [0, Ly]` (half-open when periodic).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalDomain {
    pub lx: f64,
    pub ly: f64,
    pub periodic_x: bool,
    pub periodic_y: bool,
}

impl PhysicalDomain {
    pub fn new(lx: f64, ly: f64, periodic_x: bool, periodic_y: bool) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::InvalidConfig { reason: format!("non-positive extents {lx} x {ly}") });
        }
        Ok(Self { lx, ly, periodic_x, periodic_y })
    }
}

/// Mesh-node coordinates indexed by the computational grid.
///
/// Periodic directions store one value per node; the coordinate one period
/// over is recovered by adding the domain extent (see [`PhysicalMesh::x_at`]).
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalMesh {
    pub grid: ComputationalGrid,
    pub domain: PhysicalDomain,
    /// x coordinates, shape (nx, ny), index [i, j].
    pub x: Array2<f64>,
    /// y coordinates, shape (nx, ny).
    pub y: Array2<f64>,
    pub time: f64,
}

impl PhysicalMesh {
    /// The uniform mesh `x = Lx * xi`, `y = Ly * eta`.
    pub fn uniform(grid: ComputationalGrid, domain: PhysicalDomain, time: f64) -> Self {
        let x = Array2::from_shape_fn((grid.nx, grid.ny), |(i, _)| domain.lx * grid.xi(i));
        let y = Array2::from_shape_fn((grid.nx, grid.ny), |(_, j)| domain.ly * grid.eta(j));
        Self { grid, domain, x, y, time }
    }

    /// x coordinate at an unwrapped node index, extended periodically.
    #[inline]
    pub fn x_at(&self, iu: isize, ju: isize) -> f64 {
        let (i, kx) = self.grid.wrap_i(iu);
        let (j, _) = self.grid.wrap_j(ju);
        self.x[[i, j]] + kx as f64 * self.domain.lx
    }

    /// y coordinate at an unwrapped node index, extended periodically.
    #[inline]
    pub fn y_at(&self, iu: isize, ju: isize) -> f64 {
        let (i, _) = self.grid.wrap_i(iu);
        let (j, ky) = self.grid.wrap_j(ju);
        self.y[[i, j]] + ky as f64 * self.domain.ly
    }

    /// Cell Jacobian of the cell whose lower-left node is `(i, j)`, assembled
    /// from averages of opposite edge differences. Entries are
    /// `[[x_xi, x_eta], [y_xi, y_eta]]`.
    pub fn cell_jacobian(&self, i: usize, j: usize) -> [[f64; 2]; 2] {
        let (i, j) = (i as isize, j as isize);
        let x00 = self.x_at(i, j);
        let x10 = self.x_at(i + 1, j);
        let x01 = self.x_at(i, j + 1);
        let x11 = self.x_at(i + 1, j + 1);
        let y00 = self.y_at(i, j);
        let y10 = self.y_at(i + 1, j);
        let y01 = self.y_at(i, j + 1);
        let y11 = self.y_at(i + 1, j + 1);
        let x_xi = 0.5 * ((x10 - x00) + (x11 - x01)) / self.grid.dxi;
        let x_eta = 0.5 * ((x01 - x00) + (x11 - x10)) / self.grid.deta;
        let y_xi = 0.5 * ((y10 - y00) + (y11 - y01)) / self.grid.dxi;
        let y_eta = 0.5 * ((y01 - y00) + (y11 - y10)) / self.grid.deta;
        [[x_xi, x_eta], [y_xi, y_eta]]
    }

    /// Check that every cell Jacobian has positive determinant.
    pub fn check_untangled(&self) -> Result<()> {
        let (cx, cy) = self.grid.cell_counts();
        for i in 0..cx {
            for j in 0..cy {
                let jm = self.cell_jacobian(i, j);
                let det = jm[0][0] * jm[1][1] - jm[0][1] * jm[1][0];
                if !(det > 0.0) {
                    return Err(Error::TangledMesh { time: self.time, i, j });
                }
            }
        }
        Ok(())
    }

    /// Check the fixed boundary values of the non-periodic generator:
    /// `x = 0` on the west edge, `x = Lx` on the east edge, and likewise
    /// for `y` on the south/north edges.
    pub fn check_fixed_boundaries(&self, tol: f64) -> Result<()> {
        if !self.grid.periodic_x {
            for j in 0..self.grid.ny {
                if self.x[[0, j]].abs() > tol || (self.x[[self.grid.nx - 1, j]] - self.domain.lx).abs() > tol {
                    return Err(Error::InvalidConfig { reason: format!("x boundary violated at j = {j}") });
                }
            }
        }
        if !self.grid.periodic_y {
            for i in 0..self.grid.nx {
                if self.y[[i, 0]].abs() > tol || (self.y[[i, self.grid.ny - 1]] - self.domain.ly).abs() > tol {
                    return Err(Error::InvalidConfig { reason: format!("y boundary violated at i = {i}") });
                }
            }
        }
        Ok(())
    }
}

/// Inclusive index box `[i_lo..i_hi] x [j_lo..j_hi]` in unwrapped indices.
/// In a periodic direction the upper bound may equal the node count, meaning
/// the wrapped first node one period over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexBox {
    pub i_lo: usize,
    pub i_hi: usize,
    pub j_lo: usize,
    pub j_hi: usize,
}

impl IndexBox {
    pub fn ni(&self) -> usize {
        self.i_hi - self.i_lo + 1
    }

    pub fn nj(&self) -> usize {
        self.j_hi - self.j_lo + 1
    }
}

/// Subdomain decomposition of the computational grid.
///
/// Boxes tile the index set and adjacent boxes share exactly one index line.
/// `interface_nodes` holds the stored (wrapped) indices of nodes interior to
/// the computational square that lie on a shared box edge; nodes on the
/// physical boundary are never interface nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub px: usize,
    pub py: usize,
    pub boxes: Vec<IndexBox>,
    pub interface_nodes: Vec<(usize, usize)>,
    /// Vertical interface lines (constant stored column index).
    pub lines_x: Vec<usize>,
    /// Horizontal interface lines (constant stored row index).
    pub lines_y: Vec<usize>,
    grid: ComputationalGrid,
}

impl Decomposition {
    pub fn new(grid: &ComputationalGrid, px: usize, py: usize) -> Result<Self> {
        if px == 0 || py == 0 {
            return Err(Error::InvalidDecomposition { reason: "subdomain counts must be at least 1".into() });
        }
        if px > grid.nx - 2 || py > grid.ny - 2 {
            return Err(Error::InvalidDecomposition {
                reason: format!("{px}x{py} subdomains do not fit a {}x{} grid", grid.nx, grid.ny),
            });
        }
        // A periodic direction left whole while the other is split would need
        // mixed periodic/Dirichlet subdomain solves, which no experiment uses.
        if (grid.periodic_x && px == 1 && py > 1) || (grid.periodic_y && py == 1 && px > 1) {
            return Err(Error::InvalidDecomposition {
                reason: "a periodic direction requires at least 2 subdomains unless the decomposition is 1x1".into(),
            });
        }

        let splits_x = split_indices(grid.nx, grid.periodic_x, px);
        let splits_y = split_indices(grid.ny, grid.periodic_y, py);

        let bounds_x = bounds(grid.nx, grid.periodic_x, &splits_x);
        let bounds_y = bounds(grid.ny, grid.periodic_y, &splits_y);

        let mut boxes = Vec::with_capacity(px * py);
        for bj in bounds_y.windows(2) {
            for bi in bounds_x.windows(2) {
                boxes.push(IndexBox { i_lo: bi[0], i_hi: bi[1], j_lo: bj[0], j_hi: bj[1] });
            }
        }

        // Interface lines: the interior splits, plus the seam line 0 when the
        // direction is periodic and actually split.
        let lines_x = interface_lines(grid.periodic_x, px, &splits_x);
        let lines_y = interface_lines(grid.periodic_y, py, &splits_y);

        let mut set = BTreeSet::new();
        let j_range: Vec<usize> = if grid.periodic_y { (0..grid.ny).collect() } else { (1..grid.ny - 1).collect() };
        let i_range: Vec<usize> = if grid.periodic_x { (0..grid.nx).collect() } else { (1..grid.nx - 1).collect() };
        for &s in &lines_x {
            for &j in &j_range {
                set.insert((s, j));
            }
        }
        for &s in &lines_y {
            for &i in &i_range {
                set.insert((i, s));
            }
        }

        Ok(Self {
            px,
            py,
            boxes,
            interface_nodes: set.into_iter().collect(),
            lines_x,
            lines_y,
            grid: *grid,
        })
    }

    pub fn grid(&self) -> &ComputationalGrid {
        &self.grid
    }

    pub fn has_interfaces(&self) -> bool {
        !self.interface_nodes.is_empty()
    }

    /// Ordered node list along a vertical interface line (stored indices).
    pub fn vertical_line_nodes(&self, line: usize) -> Vec<(usize, usize)> {
        let range: Box<dyn Iterator<Item = usize>> = if self.grid.periodic_y {
            Box::new(0..self.grid.ny)
        } else {
            Box::new(1..self.grid.ny - 1)
        };
        range.map(|j| (line, j)).collect()
    }

    /// Ordered node list along a horizontal interface line.
    pub fn horizontal_line_nodes(&self, line: usize) -> Vec<(usize, usize)> {
        let range: Box<dyn Iterator<Item = usize>> = if self.grid.periodic_x {
            Box::new(0..self.grid.nx)
        } else {
            Box::new(1..self.grid.nx - 1)
        };
        range.map(|i| (i, line)).collect()
    }
}

/// Interior split indices: `round(k * span / p)` for `k = 1..p-1`, where the
/// span is `n - 1` for a non-periodic direction and `n` for a periodic one.
fn split_indices(n: usize, periodic: bool, p: usize) -> Vec<usize> {
    let span = if periodic { n } else { n - 1 } as f64;
    (1..p).map(|k| (k as f64 * span / p as f64).round() as usize).collect()
}

fn bounds(n: usize, periodic: bool, splits: &[usize]) -> Vec<usize> {
    let mut b = Vec::with_capacity(splits.len() + 2);
    b.push(0);
    b.extend_from_slice(splits);
    b.push(if periodic { n } else { n - 1 });
    b
}

fn interface_lines(periodic: bool, p: usize, splits: &[usize]) -> Vec<usize> {
    if p == 1 {
        return Vec::new();
    }
    let mut lines = Vec::with_capacity(splits.len() + 1);
    if periodic {
        lines.push(0);
    }
    lines.extend_from_slice(splits);
    lines
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn grid_41_nonperiodic_layout() {
        let g = ComputationalGrid::new(41, 41, false, false).unwrap();
        assert_eq!(g.dxi, 1.0 / 40.0);
        assert_eq!(g.deta, 1.0 / 40.0);
        assert_eq!(g.node_count(), 1681);
        assert_eq!(g.xi(0), 0.0);
        assert_eq!(g.xi(40), 1.0);
    }

    #[test]
    fn grid_smallest() {
        let g = ComputationalGrid::new(3, 3, false, false).unwrap();
        let nodes: Vec<f64> = (0..3).map(|i| g.xi(i)).collect();
        assert_eq!(nodes, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn grid_periodic_layout_wraps() {
        let g = ComputationalGrid::new(41, 41, true, true).unwrap();
        assert_eq!(g.dxi, 1.0 / 41.0);
        // Node 41 is identified with node 0, one period over.
        assert_eq!(g.wrap_i(41), (0, 1));
        assert_eq!(g.wrap_i(-1), (40, -1));
        assert_eq!(g.wrap_i(82), (0, 2));
    }

    #[test]
    fn grid_rejects_small_counts() {
        assert!(ComputationalGrid::new(2, 41, false, false).is_err());
        assert!(ComputationalGrid::new(41, 1, false, false).is_err());
    }

    /// Brute-force enumeration of the interface cross for a 2x2 split.
    fn cross_oracle(n: usize, split: usize) -> BTreeSet<(usize, usize)> {
        let mut set = BTreeSet::new();
        for j in 1..n - 1 {
            set.insert((split, j));
        }
        for i in 1..n - 1 {
            set.insert((i, split));
        }
        set
    }

    #[test]
    fn decompose_2x2_41() {
        let g = ComputationalGrid::new(41, 41, false, false).unwrap();
        let d = g.decompose(2, 2).unwrap();
        assert_eq!(d.lines_x, vec![20]);
        assert_eq!(d.lines_y, vec![20]);
        assert_eq!(d.boxes.len(), 4);
        for b in &d.boxes {
            assert_eq!(b.ni(), 21);
            assert_eq!(b.nj(), 21);
        }
        assert_eq!(d.interface_nodes.len(), 77);
        let oracle = cross_oracle(41, 20);
        let got: BTreeSet<_> = d.interface_nodes.iter().copied().collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn decompose_1x1_trivial() {
        let g = ComputationalGrid::new(41, 41, false, false).unwrap();
        let d = g.decompose(1, 1).unwrap();
        assert_eq!(d.boxes.len(), 1);
        assert!(d.interface_nodes.is_empty());
        assert_eq!(d.boxes[0], IndexBox { i_lo: 0, i_hi: 40, j_lo: 0, j_hi: 40 });
    }

    #[test]
    fn decompose_3x3_rounding() {
        let g = ComputationalGrid::new(41, 41, false, false).unwrap();
        let d = g.decompose(3, 3).unwrap();
        assert_eq!(d.lines_x, vec![13, 27]);
        assert_eq!(d.lines_y, vec![13, 27]);
    }

    #[test]
    fn decompose_rejects_oversplit() {
        let g = ComputationalGrid::new(5, 5, false, false).unwrap();
        assert!(g.decompose(4, 1).is_err());
        assert!(g.decompose(3, 3).is_ok());
    }

    #[test]
    fn decompose_periodic_has_seam_line() {
        let g = ComputationalGrid::new(41, 41, true, true).unwrap();
        let d = g.decompose(2, 2).unwrap();
        assert_eq!(d.lines_x, vec![0, 21]);
        assert_eq!(d.lines_y, vec![0, 21]);
        // Two full node lines per direction, intersections counted once.
        assert_eq!(d.interface_nodes.len(), 4 * 41 - 4);
        // Every interface node is interior by construction.
        for &(i, j) in &d.interface_nodes {
            assert!(!g.on_boundary(i, j));
        }
    }

    #[test]
    fn decompose_periodic_rejects_mixed_whole_direction() {
        let g = ComputationalGrid::new(41, 41, true, true).unwrap();
        assert!(g.decompose(1, 2).is_err());
        assert!(g.decompose(1, 1).is_ok());
    }

    #[test]
    fn boxes_tile_and_overlap_on_lines_only() {
        for (nx, ny, px, py, per) in [(41, 41, 2, 2, false), (41, 41, 3, 3, false), (41, 31, 4, 2, false), (41, 41, 3, 3, true)] {
            let g = ComputationalGrid::new(nx, ny, per, per).unwrap();
            let d = g.decompose(px, py).unwrap();
            let mut cover = Array2::<u32>::zeros((nx, ny));
            for b in &d.boxes {
                for iu in b.i_lo..=b.i_hi {
                    for ju in b.j_lo..=b.j_hi {
                        let (i, _) = g.wrap_i(iu as isize);
                        let (j, _) = g.wrap_j(ju as isize);
                        cover[[i, j]] += 1;
                    }
                }
            }
            let lx: BTreeSet<_> = d.lines_x.iter().copied().collect();
            let ly: BTreeSet<_> = d.lines_y.iter().copied().collect();
            for i in 0..nx {
                for j in 0..ny {
                    let c = cover[[i, j]];
                    assert!(c >= 1, "node ({i},{j}) uncovered");
                    let on_line_x = lx.contains(&i);
                    let on_line_y = ly.contains(&j);
                    // Nodes off every shared line are owned by exactly one box.
                    if !on_line_x && !on_line_y {
                        assert_eq!(c, 1, "node ({i},{j}) multiply covered");
                    } else {
                        assert!(c >= 2, "interface-line node ({i},{j}) not shared");
                    }
                }
            }
        }
    }

    #[test]
    fn decompose_is_deterministic() {
        let g = ComputationalGrid::new(41, 41, false, false).unwrap();
        let a = g.decompose(3, 4).unwrap();
        let b = g.decompose(3, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_mesh_boundaries_and_jacobians() {
        let g = ComputationalGrid::new(11, 9, false, false).unwrap();
        let dom = PhysicalDomain::new(2.0, 1.0, false, false).unwrap();
        let m = PhysicalMesh::uniform(g, dom, 0.0);
        m.check_fixed_boundaries(0.0).unwrap();
        m.check_untangled().unwrap();
        let jm = m.cell_jacobian(3, 4);
        assert!((jm[0][0] - 2.0).abs() < 1e-13);
        assert!((jm[1][1] - 1.0).abs() < 1e-13);
        assert!(jm[0][1].abs() < 1e-13 && jm[1][0].abs() < 1e-13);
    }

    #[test]
    fn periodic_mesh_extension() {
        let g = ComputationalGrid::new(8, 8, true, true).unwrap();
        let dom = PhysicalDomain::new(2.0, 2.0, true, true).unwrap();
        let m = PhysicalMesh::uniform(g, dom, 0.0);
        assert!((m.x_at(8, 0) - 2.0).abs() < 1e-15);
        assert!((m.x_at(-1, 0) - (m.x[[7, 0]] - 2.0)).abs() < 1e-15);
        m.check_untangled().unwrap();
    }

    #[test]
    fn tangled_mesh_detected() {
        let g = ComputationalGrid::new(3, 3, false, false).unwrap();
        let dom = PhysicalDomain::new(1.0, 1.0, false, false).unwrap();
        let mut m = PhysicalMesh::uniform(g, dom, 0.0);
        // Fold the center node past the east column.
        m.x[[1, 1]] = 1.5;
        assert!(matches!(m.check_untangled(), Err(Error::TangledMesh { .. })));
    }
}
