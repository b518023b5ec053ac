//! Shared fixtures for the kernel benchmarks.

use ndarray::Array2;
use sddmesh_core::{ComputationalGrid, DensityField, PhysicalDomain, PhysicalMesh};

/// A periodic mesh/density pair with a smooth non-trivial density.
pub fn periodic_fixture(n: usize) -> (PhysicalMesh, DensityField) {
    let grid = ComputationalGrid::new(n, n, true, true).unwrap();
    let domain = PhysicalDomain::new(2.0, 2.0, true, true).unwrap();
    let mesh = PhysicalMesh::uniform(grid, domain, 0.0);
    let rho = Array2::from_shape_fn((n, n), |(i, j)| {
        let xi = grid.xi(i);
        let eta = grid.eta(j);
        1.0 + 2.0 * (std::f64::consts::TAU * xi).sin().powi(2) * (std::f64::consts::TAU * eta).cos().powi(2)
    });
    let field = DensityField::from_rho(grid, rho, 0.0).unwrap();
    (mesh, field)
}

/// A non-periodic mesh/density pair on the unit square.
pub fn dirichlet_fixture(n: usize) -> (PhysicalMesh, DensityField) {
    let grid = ComputationalGrid::new(n, n, false, false).unwrap();
    let domain = PhysicalDomain::new(1.0, 1.0, false, false).unwrap();
    let mesh = PhysicalMesh::uniform(grid, domain, 0.0);
    let rho = Array2::from_shape_fn((n, n), |(i, j)| {
        let xi = grid.xi(i);
        let eta = grid.eta(j);
        1.0 + 3.0 * (-60.0 * (xi + eta - 1.0).powi(2)).exp()
    });
    let field = DensityField::from_rho(grid, rho, 0.0).unwrap();
    (mesh, field)
}
