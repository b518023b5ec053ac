//! Monte-Carlo point solver for the linearized mesh generator.
//!
//! Interface values of the mesh equation over one time step are written as an
//! expectation over drift-diffusion walkers started at the target node. Each
//! walker integrates `d Phi = (grad rho / rho) dt + sqrt(2) dW` with
//! Euler-Maruyama sub-steps; on Dirichlet domains a Brownian-bridge test
//! detects boundary exits between sub-steps, and exits contribute boundary
//! data while survivors contribute the previous mesh evaluated at the final
//! position. Periodic domains need no exit test; winding counts recover the
//! periodically extended coordinates.
//!
//! Every walker draws from a counter-based stream keyed by
//! (seed, time step, node, replicate), so results are bit-identical for any
//! execution order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{sample_bicubic, sample_bicubic_unwrapped, DensityField};
use crate::error::{Error, Result};
use crate::grid::{ComputationalGrid, PhysicalMesh, Side};
use crate::meshpde::BoundaryData;

/// State of one walker in computational coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkerState {
    pub pos: [f64; 2],
    /// Elapsed sub-time within the current mesh step.
    pub clock: f64,
    /// Signed periodic wrap counts in xi and eta.
    pub winding: [i64; 2],
    pub alive: bool,
}

impl WalkerState {
    pub fn at(pos: [f64; 2]) -> Self {
        Self { pos, clock: 0.0, winding: [0, 0], alive: true }
    }
}

/// Monte-Carlo parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    /// Replicates per interface node.
    pub n: usize,
    /// Sub-steps per mesh time step.
    pub k: usize,
    /// Sub-step size `dt / k`; rebuilt from the step size on validation.
    #[serde(skip)]
    pub dt_s: f64,
    pub seed: u64,
    /// Estimate every `stride`-th interface node, interpolating the rest.
    pub stride: usize,
}

impl McConfig {
    pub fn new(n: usize, k: usize, dt: f64, seed: u64, stride: usize) -> Result<Self> {
        if n == 0 || k == 0 || stride == 0 {
            return Err(Error::InvalidConfig { reason: "mc.n, mc.k and mc.stride must be at least 1".into() });
        }
        Ok(Self { n, k, dt_s: dt / k as f64, seed, stride })
    }
}

/// A detected boundary exit within one sub-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitEvent {
    /// Exit time measured from the start of the sub-step, in `[0, dt_s]`.
    pub time_in_substep: f64,
    /// Exit point on the boundary of the computational square.
    pub point: [f64; 2],
    pub side: Side,
}

impl ExitEvent {
    /// Coordinate along the exit edge (eta on west/east, xi on south/north).
    pub fn edge_coord(&self) -> f64 {
        match self.side {
            Side::West | Side::East => self.point[1],
            Side::South | Side::North => self.point[0],
        }
    }
}

/// Mean and standard error of the sampled physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEstimate {
    pub mean_x: f64,
    pub mean_y: f64,
    pub stderr_x: f64,
    pub stderr_y: f64,
}

impl PointEstimate {
    pub fn from_samples(samples: &[[f64; 2]]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::InvalidConfig { reason: "no samples".into() });
        }
        let mut sx = 0.0;
        let mut sy = 0.0;
        for s in samples {
            sx += s[0];
            sy += s[1];
        }
        let mean_x = sx / n as f64;
        let mean_y = sy / n as f64;
        let (mut vx, mut vy) = (0.0, 0.0);
        for s in samples {
            vx += (s[0] - mean_x) * (s[0] - mean_x);
            vy += (s[1] - mean_y) * (s[1] - mean_y);
        }
        let (stderr_x, stderr_y) = if n > 1 {
            let denom = (n * (n - 1)) as f64;
            ((vx / denom).sqrt(), (vy / denom).sqrt())
        } else {
            (0.0, 0.0)
        };
        if !(mean_x.is_finite() && mean_y.is_finite()) {
            return Err(Error::NonFinite { context: "point estimate" });
        }
        Ok(Self { mean_x, mean_y, stderr_x, stderr_y })
    }
}

/// Counter-based random streams: one independent ChaCha stream per
/// (time step, node, replicate) work item.
#[derive(Debug, Clone, Copy)]
pub struct RandomStream {
    seed: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replicate_rng(&self, step: u64, node: u64, replicate: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&step.to_le_bytes());
        key[16..24].copy_from_slice(&node.to_le_bytes());
        key[24..32].copy_from_slice(&replicate.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

/// One Euler-Maruyama sub-step: drift from the frozen density plus
/// `sqrt(2 dt_s)` times a standard normal pair; periodic directions wrap and
/// update the winding counts.
pub fn advance_walker(w: &WalkerState, field: &DensityField, dt_s: f64, gauss: [f64; 2]) -> Result<WalkerState> {
    debug_assert!(w.alive);
    let drift = field.drift_at(w.pos)?;
    if !(drift[0].is_finite() && drift[1].is_finite()) {
        return Err(Error::NonFinite { context: "walker drift" });
    }
    let amp = (2.0 * dt_s).sqrt();
    let mut pos = [
        w.pos[0] + drift[0] * dt_s + amp * gauss[0],
        w.pos[1] + drift[1] * dt_s + amp * gauss[1],
    ];
    let mut winding = w.winding;
    if field.grid.periodic_x {
        let k = pos[0].floor();
        pos[0] -= k;
        winding[0] += k as i64;
    }
    if field.grid.periodic_y {
        let k = pos[1].floor();
        pos[1] -= k;
        winding[1] += k as i64;
    }
    Ok(WalkerState { pos, clock: w.clock + dt_s, winding, alive: true })
}

/// Closed-form probability that a Brownian bridge (per-coordinate diffusion
/// coefficient 2) between interior distances `d1` and `d2` from an edge
/// crosses that edge within `dt_s`.
pub fn bridge_crossing_probability(d1: f64, d2: f64, dt_s: f64) -> f64 {
    let arg = d1 * d2 / dt_s;
    if arg > 50.0 {
        0.0
    } else {
        (-arg).exp()
    }
}

struct EdgeGeom {
    side: Side,
    /// Axis the edge bounds: 0 for xi, 1 for eta.
    axis: usize,
    /// Boundary coordinate on that axis.
    level: f64,
}

fn edges(grid: &ComputationalGrid) -> Vec<EdgeGeom> {
    let mut e = Vec::with_capacity(4);
    if !grid.periodic_x {
        e.push(EdgeGeom { side: Side::West, axis: 0, level: 0.0 });
        e.push(EdgeGeom { side: Side::East, axis: 0, level: 1.0 });
    }
    if !grid.periodic_y {
        e.push(EdgeGeom { side: Side::South, axis: 1, level: 0.0 });
        e.push(EdgeGeom { side: Side::North, axis: 1, level: 1.0 });
    }
    e
}

/// Boundary exit test for one sub-step from `prev` to `next`.
///
/// If `next` lies outside the domain the exit is certain: the exit point is
/// the first intersection of the segment with an edge and the exit time is
/// the linear fraction along the segment. Otherwise a linear Brownian bridge
/// decides: each edge is tested independently with crossing probability
/// `exp(-d_prev * d_next / dt_s)` against the uniform draw `u`, the declared
/// crossing of highest probability wins, the exit point is the orthogonal
/// projection of the segment midpoint onto that edge and the exit time is
/// half the sub-step.
pub fn exit_test(
    prev: [f64; 2],
    next: [f64; 2],
    grid: &ComputationalGrid,
    dt_s: f64,
    u: f64,
) -> Result<Option<ExitEvent>> {
    let edges = edges(grid);
    if edges.is_empty() {
        return Err(Error::InvalidConfig { reason: "exit test needs a non-periodic direction".into() });
    }
    for e in &edges {
        let d = signed_inside_distance(prev, e);
        if d < 0.0 {
            return Err(Error::OutOfDomain(prev[0], prev[1]));
        }
    }

    // Certain crossing: next is outside at least one edge.
    let mut first: Option<(f64, &EdgeGeom)> = None;
    for e in &edges {
        let dn = signed_inside_distance(next, e);
        if dn < 0.0 {
            let dp = signed_inside_distance(prev, e);
            let s = dp / (dp - dn);
            if first.map_or(true, |(s0, _)| s < s0) {
                first = Some((s, e));
            }
        }
    }
    if let Some((s, e)) = first {
        let mut point = [prev[0] + s * (next[0] - prev[0]), prev[1] + s * (next[1] - prev[1])];
        point[e.axis] = e.level;
        point[1 - e.axis] = point[1 - e.axis].clamp(0.0, 1.0);
        return Ok(Some(ExitEvent { time_in_substep: s * dt_s, point, side: e.side }));
    }

    // Bridge test: both end points inside.
    let mut best: Option<(f64, &EdgeGeom)> = None;
    for e in &edges {
        let p = bridge_crossing_probability(signed_inside_distance(prev, e), signed_inside_distance(next, e), dt_s);
        if u < p && best.map_or(true, |(p0, _)| p > p0) {
            best = Some((p, e));
        }
    }
    Ok(best.map(|(_, e)| {
        let mid = [0.5 * (prev[0] + next[0]), 0.5 * (prev[1] + next[1])];
        let mut point = mid;
        point[e.axis] = e.level;
        point[1 - e.axis] = point[1 - e.axis].clamp(0.0, 1.0);
        ExitEvent { time_in_substep: 0.5 * dt_s, point, side: e.side }
    }))
}

#[inline]
fn signed_inside_distance(p: [f64; 2], e: &EdgeGeom) -> f64 {
    if e.level == 0.0 {
        p[e.axis]
    } else {
        e.level - p[e.axis]
    }
}

fn node_id(grid: &ComputationalGrid, node: (usize, usize)) -> u64 {
    (node.0 * grid.ny + node.1) as u64
}

/// Monte-Carlo estimate of the mesh position at an interior node of a
/// Dirichlet (non-periodic) domain after one step of size `dt`.
///
/// Exits at survival time `tau` contribute the boundary data at time
/// `t^n + (dt - tau)`, interpolated linearly along the edge and in time.
/// Survivors contribute the previous mesh sampled bicubically at the final
/// walker position.
#[allow(clippy::too_many_arguments)]
pub fn estimate_point_dirichlet(
    start: (usize, usize),
    mesh_n: &PhysicalMesh,
    field: &DensityField,
    bdata: &BoundaryData,
    dt: f64,
    mc: &McConfig,
    stream: &RandomStream,
    step_index: u64,
) -> Result<PointEstimate> {
    let grid = mesh_n.grid;
    if grid.periodic_x || grid.periodic_y {
        return Err(Error::InvalidConfig { reason: "dirichlet estimator requires a non-periodic grid".into() });
    }
    if grid.on_boundary(start.0, start.1) {
        return Err(Error::InvalidConfig { reason: "estimator start must be an interior node".into() });
    }
    let start_pos = [grid.xi(start.0), grid.eta(start.1)];
    let id = node_id(&grid, start);
    let dt_s = dt / mc.k as f64;

    let samples: Vec<[f64; 2]> = (0..mc.n as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream.replicate_rng(step_index, id, rep);
            let mut pos = start_pos;
            for k in 0..mc.k {
                let g0: f64 = rng.sample(StandardNormal);
                let g1: f64 = rng.sample(StandardNormal);
                let u: f64 = rng.random();
                let drift = field.drift_at(pos)?;
                let amp = (2.0 * dt_s).sqrt();
                let next = [pos[0] + drift[0] * dt_s + amp * g0, pos[1] + drift[1] * dt_s + amp * g1];
                if let Some(ev) = exit_test(pos, next, &grid, dt_s, u)? {
                    let tau = k as f64 * dt_s + ev.time_in_substep;
                    let theta = ((dt - tau) / dt).clamp(0.0, 1.0);
                    return Ok(bdata.sample(ev.side, ev.edge_coord(), theta));
                }
                if !(next[0].is_finite() && next[1].is_finite()) {
                    return Err(Error::NonFinite { context: "walker position" });
                }
                pos = next;
            }
            let x = sample_bicubic(&grid, &mesh_n.x, pos)?;
            let y = sample_bicubic(&grid, &mesh_n.y, pos)?;
            Ok([x, y])
        })
        .collect::<Result<_>>()?;
    PointEstimate::from_samples(&samples)
}

/// Run one periodic walker for `k` sub-steps, drawing normal pairs from `draw`.
pub(crate) fn periodic_walk(
    start: [f64; 2],
    field: &DensityField,
    k: usize,
    dt_s: f64,
    draw: &mut impl FnMut() -> [f64; 2],
) -> Result<WalkerState> {
    let mut w = WalkerState::at(start);
    for _ in 0..k {
        w = advance_walker(&w, field, dt_s, draw())?;
        if !(w.pos[0].is_finite() && w.pos[1].is_finite()) {
            return Err(Error::NonFinite { context: "walker position" });
        }
    }
    Ok(w)
}

/// Evaluate the periodically extended previous mesh at a walker end state:
/// bicubic in the wrapped position plus one domain extent per winding.
pub(crate) fn periodic_eval(mesh_n: &PhysicalMesh, w: &WalkerState) -> Result<[f64; 2]> {
    let grid = mesh_n.grid;
    let x = sample_bicubic_unwrapped(&grid, &mesh_n.x, w.pos, [mesh_n.domain.lx, 0.0])?
        + w.winding[0] as f64 * mesh_n.domain.lx;
    let y = sample_bicubic_unwrapped(&grid, &mesh_n.y, w.pos, [0.0, mesh_n.domain.ly])?
        + w.winding[1] as f64 * mesh_n.domain.ly;
    Ok([x, y])
}

/// Monte-Carlo estimate of the mesh position at a node of a fully periodic
/// domain after one step of size `dt`. No exit test is needed.
pub fn estimate_point_periodic(
    start: (usize, usize),
    mesh_n: &PhysicalMesh,
    field: &DensityField,
    dt: f64,
    mc: &McConfig,
    stream: &RandomStream,
    step_index: u64,
) -> Result<PointEstimate> {
    let grid = mesh_n.grid;
    if !grid.fully_periodic() {
        return Err(Error::InvalidConfig { reason: "periodic estimator requires a fully periodic grid".into() });
    }
    let start_pos = [grid.xi(start.0), grid.eta(start.1)];
    let id = node_id(&grid, start);
    let dt_s = dt / mc.k as f64;

    let samples: Vec<[f64; 2]> = (0..mc.n as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream.replicate_rng(step_index, id, rep);
            let mut draw = || {
                let g0: f64 = rng.sample(StandardNormal);
                let g1: f64 = rng.sample(StandardNormal);
                [g0, g1]
            };
            let w = periodic_walk(start_pos, field, mc.k, dt_s, &mut draw)?;
            periodic_eval(mesh_n, &w)
        })
        .collect::<Result<_>>()?;
    PointEstimate::from_samples(&samples)
}
