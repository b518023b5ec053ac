//! Mesh quality and error metrics.
//!
//! The geometric cell quality is `Q = tr(J^T J) / (2 sqrt(det(J^T J)))` with
//! `J` the cell Jacobian from averaged edge differences; `Q >= 1`, with
//! equality exactly for square cells. Decomposed runs are compared against
//! the single-domain reference through the per-cell ratio
//! `R = Q_reference / Q_candidate`, reported as max and mean over cells.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::PhysicalMesh;
use crate::physics::{PhysField, PhysState};

/// Per-cell quality values plus optional comparison metrics.
#[derive(Debug, Clone)]
pub struct QualityReport {
    pub q: Array2<f64>,
    pub r_max: Option<f64>,
    pub r_mean: Option<f64>,
    pub l_inf: Option<f64>,
    pub time: f64,
    pub decomposition: (usize, usize),
}

impl QualityReport {
    pub fn new(mesh: &PhysicalMesh, decomposition: (usize, usize)) -> Result<Self> {
        Ok(Self {
            q: cell_qualities(mesh)?,
            r_max: None,
            r_mean: None,
            l_inf: None,
            time: mesh.time,
            decomposition,
        })
    }

    pub fn with_reference(mut self, reference: &PhysicalMesh, candidate: &PhysicalMesh) -> Result<Self> {
        let (r_max, r_mean) = quality_ratio(reference, candidate)?;
        self.r_max = Some(r_max);
        self.r_mean = Some(r_mean);
        Ok(self)
    }
}

/// Quality of the cell whose lower-left node is `(i, j)`.
pub fn cell_quality(mesh: &PhysicalMesh, i: usize, j: usize) -> Result<f64> {
    let jm = mesh.cell_jacobian(i, j);
    let det = jm[0][0] * jm[1][1] - jm[0][1] * jm[1][0];
    if !(det > 0.0) {
        return Err(Error::TangledMesh { time: mesh.time, i, j });
    }
    let tr = jm[0][0] * jm[0][0] + jm[0][1] * jm[0][1] + jm[1][0] * jm[1][0] + jm[1][1] * jm[1][1];
    Ok(0.5 * tr / det)
}

/// Quality of every cell.
pub fn cell_qualities(mesh: &PhysicalMesh) -> Result<Array2<f64>> {
    let (cx, cy) = mesh.grid.cell_counts();
    let mut q = Array2::zeros((cx, cy));
    for i in 0..cx {
        for j in 0..cy {
            q[[i, j]] = cell_quality(mesh, i, j)?;
        }
    }
    Ok(q)
}

/// Per-cell ratio `Q_reference / Q_candidate`, reduced to (max, mean).
pub fn quality_ratio(reference: &PhysicalMesh, candidate: &PhysicalMesh) -> Result<(f64, f64)> {
    if reference.grid != candidate.grid {
        return Err(Error::GridMismatch);
    }
    let qr = cell_qualities(reference)?;
    let qc = cell_qualities(candidate)?;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for (a, b) in qr.iter().zip(qc.iter()) {
        let r = a / b;
        max = max.max(r);
        sum += r;
    }
    Ok((max, sum / qr.len() as f64))
}

/// Max-norm error of the state's primary scalar against an exact solution
/// evaluated at the mesh nodes.
pub fn linf_error(state: &PhysState, mesh: &PhysicalMesh, exact: impl Fn(f64, f64, f64) -> f64, t: f64) -> f64 {
    let field = match &state.field {
        PhysField::Burgers { u } | PhysField::Prescribed { u } => u,
        PhysField::ShallowWater { h, .. } => h,
    };
    let mut e = 0.0f64;
    for ((i, j), &v) in field.indexed_iter() {
        e = e.max((v - exact(mesh.x[[i, j]], mesh.y[[i, j]], t)).abs());
    }
    e
}
