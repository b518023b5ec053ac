//! Orchestration of the alternating mesh/physics loop.
//!
//! Each step freezes the density at the current solution, advances the four
//! 1D boundary lines (non-periodic problems), estimates the subdomain
//! interface values by the Monte-Carlo point solver, solves every subdomain
//! deterministically with those Dirichlet values, assembles the new mesh and
//! finally integrates the physical PDE on the mesh pair. The single-domain
//! reference runs the same loop with a 1x1 decomposition and no Monte-Carlo.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{build_arclength_density, DensityConfig, DensityField};
use crate::error::{Error, Result};
use crate::grid::{ComputationalGrid, Decomposition, PhysicalDomain, PhysicalMesh};
use crate::meshpde::{
    step_boundary_mesh_1d, step_mesh_2d, step_mesh_periodic, BoundaryData, EdgeValues, Provenance, StepLimits,
};
use crate::physics::{
    burgers_exact, step_burgers, step_shallow_water, BurgersBoundary, PhysField, PhysState,
};
use crate::stochastic::{
    estimate_point_dirichlet, estimate_point_periodic, McConfig, PointEstimate, RandomStream,
};

/// Default seed; all randomness in a run flows from it.
pub const DEFAULT_SEED: u64 = 314_159_265_358_979;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    BurgersDirichlet,
    FiveRing,
    BurgersPeriodic,
    ShallowWater,
}

impl Problem {
    pub fn is_periodic(&self) -> bool {
        !matches!(self, Problem::BurgersDirichlet)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Problem::BurgersDirichlet => "burgers-dirichlet",
            Problem::FiveRing => "five-ring",
            Problem::BurgersPeriodic => "burgers-periodic",
            Problem::ShallowWater => "shallow-water",
        }
    }
}

/// Problem-specific physical parameters; unused entries are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsParams {
    /// Burgers diffusion coefficient.
    pub nu: f64,
    /// Mean value of the periodic Burgers initial condition.
    pub u0: f64,
    /// Amplitude of the periodic Burgers initial condition.
    pub amplitude: f64,
    /// Ring sharpness of the five-ring adaptation field.
    pub ring_r: f64,
    /// Shallow-water base level.
    pub base_height: f64,
    /// Shallow-water pile height above the base level.
    pub pile_height: f64,
    /// Shallow-water pile Gaussian radius.
    pub pile_radius: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            nu: 0.005,
            u0: 0.75,
            amplitude: 0.5,
            ring_r: 30.0,
            base_height: 10.0,
            pile_height: 2.5,
            pile_radius: 0.5,
        }
    }
}

/// Fully resolved run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub problem: Problem,
    pub nx: usize,
    pub ny: usize,
    /// Decomposition used by [`run_sdd`].
    pub px: usize,
    pub py: usize,
    pub dt: f64,
    pub t0: f64,
    pub t_final: f64,
    pub mc: McConfig,
    pub density: DensityConfig,
    #[serde(default)]
    pub physics: PhysicsParams,
    /// Relax the initial mesh to the density of the initial solution before
    /// time stepping starts.
    pub pre_adapt: bool,
    #[serde(default)]
    pub record_all: bool,
    #[serde(default)]
    pub record_times: Vec<f64>,
    #[serde(default = "default_substep_cap")]
    pub substep_cap: usize,
}

fn default_substep_cap() -> usize {
    200_000
}

impl SimulationConfig {
    /// Published parameters for one of the four experiments.
    pub fn paper(problem: Problem) -> Self {
        let tau = std::f64::consts::TAU;
        let (dt, t0, t_final, n, k, density, pre_adapt) = match problem {
            Problem::BurgersDirichlet => (1e-3, 0.25, 0.75, 10_000, 10, DensityConfig::adaptive(10.0), true),
            Problem::FiveRing => {
                // The ring density reaches ~9 with near-unit cell Peclet
                // between tangent rings; without smoothing the mesh tangles
                // within a few steps at this resolution.
                let mut d = DensityConfig::fixed(0.2);
                d.smoothing_passes = 2;
                (5e-4, 0.0, 0.05, 10_000, 1, d, false)
            }
            Problem::BurgersPeriodic => (5e-3, 0.0, 1.0, 1_000, 1, DensityConfig::adaptive(10.0), false),
            Problem::ShallowWater => (5e-3, 0.0, 0.15, 1_000, 1, DensityConfig::adaptive(10.0), false),
        };
        let mut physics = PhysicsParams::default();
        if problem == Problem::BurgersPeriodic {
            physics.nu = 0.001;
        }
        let _ = tau;
        Self {
            problem,
            nx: 41,
            ny: 41,
            px: 2,
            py: 2,
            dt,
            t0,
            t_final,
            mc: McConfig::new(n, k, dt, DEFAULT_SEED, 1).expect("valid"),
            density,
            physics,
            pre_adapt,
            record_all: false,
            record_times: Vec::new(),
            substep_cap: default_substep_cap(),
        }
    }

    pub fn domain(&self) -> Result<PhysicalDomain> {
        let periodic = self.problem.is_periodic();
        let (lx, ly) = match self.problem {
            Problem::BurgersDirichlet => (1.0, 1.0),
            Problem::FiveRing => (2.0, 2.0),
            Problem::BurgersPeriodic | Problem::ShallowWater => (std::f64::consts::TAU, std::f64::consts::TAU),
        };
        PhysicalDomain::new(lx, ly, periodic, periodic)
    }

    pub fn grid(&self) -> Result<ComputationalGrid> {
        let periodic = self.problem.is_periodic();
        ComputationalGrid::new(self.nx, self.ny, periodic, periodic)
    }

    /// Number of time steps; fails when `dt` does not divide the interval.
    pub fn step_count(&self) -> Result<usize> {
        let span = self.t_final - self.t0;
        if !(span > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidConfig { reason: "need t_final > t0 and dt > 0".into() });
        }
        let steps = (span / self.dt).round();
        if steps < 1.0 || (steps * self.dt - span).abs() > 1e-9 * span.max(1.0) {
            return Err(Error::InvalidConfig { reason: format!("dt {} does not divide t_final - t0 {}", self.dt, span) });
        }
        Ok(steps as usize)
    }

    /// Check and finish the configuration; recomputes the derived sub-step.
    pub fn validate(&mut self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::GridTooSmall { nx: self.nx, ny: self.ny });
        }
        if self.mc.n == 0 || self.mc.k == 0 || self.mc.stride == 0 {
            return Err(Error::InvalidConfig { reason: "mc.n, mc.k and mc.stride must be at least 1".into() });
        }
        self.step_count()?;
        self.mc.dt_s = self.dt / self.mc.k as f64;
        Ok(())
    }

    fn limits(&self) -> StepLimits {
        StepLimits { safety: 0.8, substep_cap: self.substep_cap }
    }
}

/// The five-ring adaptation field on the `[0, 2) x [0, 2)` domain (ring
/// centers at the domain center and half-diagonal offsets).
pub fn five_ring_u(x: f64, y: f64, r: f64) -> f64 {
    let xs = x - 1.0;
    let ys = y - 1.0;
    let ring = |cx: f64, cy: f64| (r * ((xs - cx).powi(2) + (ys - cy).powi(2) - 0.125)).tanh();
    ring(0.0, 0.0) + ring(0.5, 0.5) + ring(0.5, -0.5) + ring(-0.5, 0.5) + ring(-0.5, -0.5)
}

/// Initial physical state on a given mesh.
pub fn initial_state(cfg: &SimulationConfig, mesh: &PhysicalMesh) -> PhysState {
    let shape = (mesh.grid.nx, mesh.grid.ny);
    let field = match cfg.problem {
        Problem::BurgersDirichlet => PhysField::Burgers {
            u: Array2::from_shape_fn(shape, |(i, j)| burgers_exact(mesh.x[[i, j]], mesh.y[[i, j]], cfg.t0, cfg.physics.nu)),
        },
        Problem::BurgersPeriodic => PhysField::Burgers {
            u: Array2::from_shape_fn(shape, |(i, j)| {
                cfg.physics.u0 + cfg.physics.amplitude * (mesh.x[[i, j]] + mesh.y[[i, j]] - std::f64::consts::TAU).sin()
            }),
        },
        Problem::ShallowWater => {
            let c = std::f64::consts::PI;
            let r2 = cfg.physics.pile_radius * cfg.physics.pile_radius;
            PhysField::ShallowWater {
                u: Array2::zeros(shape),
                v: Array2::zeros(shape),
                h: Array2::from_shape_fn(shape, |(i, j)| {
                    let d2 = (mesh.x[[i, j]] - c).powi(2) + (mesh.y[[i, j]] - c).powi(2);
                    cfg.physics.base_height + cfg.physics.pile_height * (-d2 / r2).exp()
                }),
            }
        }
        Problem::FiveRing => PhysField::Prescribed {
            u: Array2::from_shape_fn(shape, |(i, j)| five_ring_u(mesh.x[[i, j]], mesh.y[[i, j]], cfg.physics.ring_r)),
        },
    };
    PhysState { time: mesh.time, field }
}

fn step_physics(cfg: &SimulationConfig, state: &PhysState, mesh_n: &PhysicalMesh, mesh_np1: &PhysicalMesh) -> Result<PhysState> {
    match cfg.problem {
        Problem::BurgersDirichlet => {
            let nu = cfg.physics.nu;
            let exact = move |x: f64, y: f64, t: f64| burgers_exact(x, y, t, nu);
            step_burgers(state, mesh_n, mesh_np1, cfg.dt, nu, &BurgersBoundary::Dirichlet(&exact))
        }
        Problem::BurgersPeriodic => step_burgers(state, mesh_n, mesh_np1, cfg.dt, cfg.physics.nu, &BurgersBoundary::Periodic),
        Problem::ShallowWater => step_shallow_water(state, mesh_n, mesh_np1, cfg.dt),
        Problem::FiveRing => {
            let shape = (mesh_np1.grid.nx, mesh_np1.grid.ny);
            Ok(PhysState {
                time: state.time + cfg.dt,
                field: PhysField::Prescribed {
                    u: Array2::from_shape_fn(shape, |(i, j)| {
                        five_ring_u(mesh_np1.x[[i, j]], mesh_np1.y[[i, j]], cfg.physics.ring_r)
                    }),
                },
            })
        }
    }
}

/// One stochastic interface estimate, or a value interpolated along the
/// interface line between estimated neighbors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceValue {
    pub estimate: PointEstimate,
    pub interpolated: bool,
}

/// Map from stored node index to its interface value.
pub type InterfaceSolution = BTreeMap<(usize, usize), InterfaceValue>;

/// Snapshot of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub time: f64,
    pub mesh: PhysicalMesh,
    pub state: PhysState,
    pub interface: Option<InterfaceSolution>,
}

/// Advance the four 1D boundary lines of a non-periodic mesh and return the
/// boundary data spanning the step.
pub fn advance_boundary_lines(mesh: &PhysicalMesh, field: &DensityField, dt: f64, limits: &StepLimits) -> Result<BoundaryData> {
    let grid = mesh.grid;
    let (nx, ny) = (grid.nx, grid.ny);
    if grid.periodic_x || grid.periodic_y {
        return Err(Error::InvalidConfig { reason: "boundary lines exist only on non-periodic grids".into() });
    }

    let y_west: Vec<f64> = (0..ny).map(|j| mesh.y[[0, j]]).collect();
    let y_east: Vec<f64> = (0..ny).map(|j| mesh.y[[nx - 1, j]]).collect();
    let x_south: Vec<f64> = (0..nx).map(|i| mesh.x[[i, 0]]).collect();
    let x_north: Vec<f64> = (0..nx).map(|i| mesh.x[[i, ny - 1]]).collect();

    let rho_west: Vec<f64> = (0..ny).map(|j| field.rho[[0, j]]).collect();
    let rho_east: Vec<f64> = (0..ny).map(|j| field.rho[[nx - 1, j]]).collect();
    let rho_south: Vec<f64> = (0..nx).map(|i| field.rho[[i, 0]]).collect();
    let rho_north: Vec<f64> = (0..nx).map(|i| field.rho[[i, ny - 1]]).collect();

    let y_west_new = step_boundary_mesh_1d(&y_west, &rho_west, grid.deta, dt, limits)?;
    let y_east_new = step_boundary_mesh_1d(&y_east, &rho_east, grid.deta, dt, limits)?;
    let x_south_new = step_boundary_mesh_1d(&x_south, &rho_south, grid.dxi, dt, limits)?;
    let x_north_new = step_boundary_mesh_1d(&x_north, &rho_north, grid.dxi, dt, limits)?;

    let lx = mesh.domain.lx;
    let ly = mesh.domain.ly;
    let pair = |xs: &[f64], ys: &[f64]| -> Vec<[f64; 2]> { xs.iter().zip(ys).map(|(&x, &y)| [x, y]).collect() };
    let at_n = EdgeValues {
        west: pair(&vec![0.0; ny], &y_west),
        east: pair(&vec![lx; ny], &y_east),
        south: pair(&x_south, &vec![0.0; nx]),
        north: pair(&x_north, &vec![ly; nx]),
    };
    let at_np1 = EdgeValues {
        west: pair(&vec![0.0; ny], &y_west_new),
        east: pair(&vec![lx; ny], &y_east_new),
        south: pair(&x_south_new, &vec![0.0; nx]),
        north: pair(&x_north_new, &vec![ly; nx]),
    };
    Ok(BoundaryData { at_n, at_np1, provenance: Provenance::PhysicalBoundary })
}

/// Estimate every `stride`-th interface node by Monte-Carlo and fill the
/// remaining interface nodes by linear interpolation along their line.
/// Line endpoints and line crossings are always estimated.
pub fn stochastic_interface_solve(
    dec: &Decomposition,
    mesh_n: &PhysicalMesh,
    field: &DensityField,
    bdata: Option<&BoundaryData>,
    dt: f64,
    mc: &McConfig,
    step_index: u64,
) -> Result<InterfaceSolution> {
    let grid = *dec.grid();
    let periodic = grid.fully_periodic();
    if !periodic && bdata.is_none() {
        return Err(Error::MissingBoundaryData);
    }

    // Ordered node lists per interface line.
    let mut lines: Vec<Vec<(usize, usize)>> = Vec::new();
    for &s in &dec.lines_x {
        lines.push(dec.vertical_line_nodes(s));
    }
    for &s in &dec.lines_y {
        lines.push(dec.horizontal_line_nodes(s));
    }

    let cross_x: BTreeSet<usize> = dec.lines_x.iter().copied().collect();
    let cross_y: BTreeSet<usize> = dec.lines_y.iter().copied().collect();
    let is_crossing = |n: &(usize, usize)| cross_x.contains(&n.0) && cross_y.contains(&n.1);

    let mut estimated: BTreeSet<(usize, usize)> = BTreeSet::new();
    for nodes in &lines {
        let last = nodes.len() - 1;
        for (idx, node) in nodes.iter().enumerate() {
            let on_stride = idx % mc.stride == 0;
            let endpoint = !periodic && (idx == 0 || idx == last);
            if on_stride || endpoint || is_crossing(node) {
                estimated.insert(*node);
            }
        }
    }

    let stream = RandomStream::new(mc.seed);
    let targets: Vec<(usize, usize)> = estimated.iter().copied().collect();
    let results: Vec<((usize, usize), PointEstimate)> = targets
        .par_iter()
        .map(|&node| {
            let est = if periodic {
                estimate_point_periodic(node, mesh_n, field, dt, mc, &stream, step_index)?
            } else {
                estimate_point_dirichlet(node, mesh_n, field, bdata.unwrap(), dt, mc, &stream, step_index)?
            };
            Ok((node, est))
        })
        .collect::<Result<_>>()?;

    let mut map: InterfaceSolution = results
        .into_iter()
        .map(|(node, estimate)| (node, InterfaceValue { estimate, interpolated: false }))
        .collect();

    if mc.stride > 1 {
        for (line_idx, nodes) in lines.iter().enumerate() {
            let vertical = line_idx < dec.lines_x.len();
            fill_line(&mut map, nodes, &estimated, periodic, vertical, mesh_n.domain.lx, mesh_n.domain.ly);
        }
    }
    Ok(map)
}

/// Linear interpolation along one interface line between estimated anchors.
/// On periodic lines the gap between the last anchor and the seam wraps, with
/// the line-parallel coordinate continued by one period.
fn fill_line(
    map: &mut InterfaceSolution,
    nodes: &[(usize, usize)],
    estimated: &BTreeSet<(usize, usize)>,
    periodic: bool,
    vertical: bool,
    lx: f64,
    ly: f64,
) {
    let anchors: Vec<usize> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| estimated.contains(n))
        .map(|(idx, _)| idx)
        .collect();
    debug_assert!(!anchors.is_empty());

    let mut segments: Vec<(usize, usize, [f64; 2])> = Vec::new();
    for w in anchors.windows(2) {
        segments.push((w[0], w[1], [0.0, 0.0]));
    }
    if periodic && *anchors.last().unwrap() + 1 < nodes.len() {
        // Wrap segment back to the first anchor one period over.
        let jump = if vertical { [0.0, ly] } else { [lx, 0.0] };
        segments.push((*anchors.last().unwrap(), anchors[0] + nodes.len(), jump));
    }

    for (a, b, jump) in segments {
        let va = map[&nodes[a]].estimate;
        let vb = map[&nodes[b % nodes.len()]].estimate;
        let vb = PointEstimate { mean_x: vb.mean_x + jump[0], mean_y: vb.mean_y + jump[1], ..vb };
        for idx in a + 1..b {
            let node = nodes[idx % nodes.len()];
            if estimated.contains(&node) {
                continue;
            }
            let w = (idx - a) as f64 / (b - a) as f64;
            let lerp = |p: f64, q: f64| p + w * (q - p);
            map.insert(
                node,
                InterfaceValue {
                    estimate: PointEstimate {
                        mean_x: lerp(va.mean_x, vb.mean_x),
                        mean_y: lerp(va.mean_y, vb.mean_y),
                        stderr_x: lerp(va.stderr_x, vb.stderr_x),
                        stderr_y: lerp(va.stderr_y, vb.stderr_y),
                    },
                    interpolated: true,
                },
            );
        }
    }
}

/// Dirichlet data for one box edge node at the end of the step.
fn np1_edge_value(
    grid: &ComputationalGrid,
    domain: &PhysicalDomain,
    global: Option<&BoundaryData>,
    interface: Option<&InterfaceSolution>,
    iu: usize,
    ju: usize,
) -> Result<[f64; 2]> {
    let (i, kx) = grid.wrap_i(iu as isize);
    let (j, ky) = grid.wrap_j(ju as isize);
    if grid.on_boundary(i, j) {
        let g = global.ok_or(Error::MissingBoundaryData)?;
        let v = if i == 0 {
            g.at_np1.west[j]
        } else if i == grid.nx - 1 {
            g.at_np1.east[j]
        } else if j == 0 {
            g.at_np1.south[i]
        } else {
            g.at_np1.north[i]
        };
        Ok(v)
    } else {
        let v = interface
            .and_then(|m| m.get(&(i, j)))
            .ok_or_else(|| Error::InvalidDecomposition { reason: format!("no interface value at ({i}, {j})") })?;
        Ok([v.estimate.mean_x + kx as f64 * domain.lx, v.estimate.mean_y + ky as f64 * domain.ly])
    }
}

fn box_boundary_data(
    mesh_n: &PhysicalMesh,
    bx: &crate::grid::IndexBox,
    global: Option<&BoundaryData>,
    interface: Option<&InterfaceSolution>,
) -> Result<BoundaryData> {
    let grid = &mesh_n.grid;
    let domain = &mesh_n.domain;
    let at = |iu: usize, ju: usize| [mesh_n.x_at(iu as isize, ju as isize), mesh_n.y_at(iu as isize, ju as isize)];
    let np1 = |iu: usize, ju: usize| np1_edge_value(grid, domain, global, interface, iu, ju);

    let mut west_n = Vec::with_capacity(bx.nj());
    let mut west_p = Vec::with_capacity(bx.nj());
    let mut east_n = Vec::with_capacity(bx.nj());
    let mut east_p = Vec::with_capacity(bx.nj());
    for ju in bx.j_lo..=bx.j_hi {
        west_n.push(at(bx.i_lo, ju));
        west_p.push(np1(bx.i_lo, ju)?);
        east_n.push(at(bx.i_hi, ju));
        east_p.push(np1(bx.i_hi, ju)?);
    }
    let mut south_n = Vec::with_capacity(bx.ni());
    let mut south_p = Vec::with_capacity(bx.ni());
    let mut north_n = Vec::with_capacity(bx.ni());
    let mut north_p = Vec::with_capacity(bx.ni());
    for iu in bx.i_lo..=bx.i_hi {
        south_n.push(at(iu, bx.j_lo));
        south_p.push(np1(iu, bx.j_lo)?);
        north_n.push(at(iu, bx.j_hi));
        north_p.push(np1(iu, bx.j_hi)?);
    }
    Ok(BoundaryData {
        at_n: EdgeValues { west: west_n, east: east_n, south: south_n, north: north_n },
        at_np1: EdgeValues { west: west_p, east: east_p, south: south_p, north: north_p },
        provenance: Provenance::StochasticInterface,
    })
}

/// Solve every box and assemble the mesh at the end of the step: global
/// boundary from the 1D solves, interface nodes from the estimates (shared,
/// never duplicated per side) and box interiors from their own solves.
pub(crate) fn advance_mesh_decomposed(
    mesh_n: &PhysicalMesh,
    field: &DensityField,
    dec: &Decomposition,
    global: Option<&BoundaryData>,
    interface: Option<&InterfaceSolution>,
    dt: f64,
    limits: &StepLimits,
) -> Result<PhysicalMesh> {
    let solutions: Vec<crate::meshpde::BoxSolution> = dec
        .boxes
        .par_iter()
        .map(|bx| {
            let bc = box_boundary_data(mesh_n, bx, global, interface)?;
            step_mesh_2d(mesh_n, field, bx, &bc, dt, limits)
        })
        .collect::<Result<_>>()?;

    let mut out = mesh_n.clone();
    out.time = mesh_n.time + dt;
    if let Some(g) = global {
        let grid = &out.grid;
        for j in 0..grid.ny {
            out.x[[0, j]] = g.at_np1.west[j][0];
            out.y[[0, j]] = g.at_np1.west[j][1];
            out.x[[grid.nx - 1, j]] = g.at_np1.east[j][0];
            out.y[[grid.nx - 1, j]] = g.at_np1.east[j][1];
        }
        for i in 0..grid.nx {
            out.x[[i, 0]] = g.at_np1.south[i][0];
            out.y[[i, 0]] = g.at_np1.south[i][1];
            out.x[[i, grid.ny - 1]] = g.at_np1.north[i][0];
            out.y[[i, grid.ny - 1]] = g.at_np1.north[i][1];
        }
    }
    if let Some(ifc) = interface {
        for (&(i, j), v) in ifc {
            out.x[[i, j]] = v.estimate.mean_x;
            out.y[[i, j]] = v.estimate.mean_y;
        }
    }
    for (bx, sol) in dec.boxes.iter().zip(&solutions) {
        for li in 1..bx.ni() - 1 {
            for lj in 1..bx.nj() - 1 {
                let (i, _) = out.grid.wrap_i((bx.i_lo + li) as isize);
                let (j, _) = out.grid.wrap_j((bx.j_lo + lj) as isize);
                out.x[[i, j]] = sol.x[[li, lj]];
                out.y[[i, j]] = sol.y[[li, lj]];
            }
        }
    }
    Ok(out)
}

/// Relax the mesh to near-steady adaptation for the initial solution before
/// time stepping begins; deterministic single-domain iteration.
fn pre_adapt_mesh(cfg: &SimulationConfig, mut mesh: PhysicalMesh) -> Result<PhysicalMesh> {
    let limits = cfg.limits();
    let grid = mesh.grid;
    let dec = grid.decompose(1, 1)?;
    let tol = 1e-10 * mesh.domain.lx.max(mesh.domain.ly);
    for _ in 0..2000 {
        let state = initial_state(cfg, &mesh);
        let field = build_arclength_density(state.adaptation_scalar(), &mesh, &cfg.density)?;
        let next = if grid.fully_periodic() {
            step_mesh_periodic(&mesh, &field, cfg.dt, &limits)?
        } else {
            let bdata = advance_boundary_lines(&mesh, &field, cfg.dt, &limits)?;
            advance_mesh_decomposed(&mesh, &field, &dec, Some(&bdata), None, cfg.dt, &limits)?
        };
        let mut moved = 0.0f64;
        for ((i, j), &v) in next.x.indexed_iter() {
            moved = moved.max((v - mesh.x[[i, j]]).abs()).max((next.y[[i, j]] - mesh.y[[i, j]]).abs());
        }
        mesh = next;
        if moved < tol {
            break;
        }
    }
    mesh.time = cfg.t0;
    Ok(mesh)
}

/// Initial mesh (uniform, optionally pre-adapted) and state for a run.
pub fn initial_mesh_and_state(cfg: &SimulationConfig) -> Result<(PhysicalMesh, PhysState)> {
    let grid = cfg.grid()?;
    let domain = cfg.domain()?;
    let mut mesh = PhysicalMesh::uniform(grid, domain, cfg.t0);
    if cfg.pre_adapt {
        mesh = pre_adapt_mesh(cfg, mesh)?;
    }
    let state = initial_state(cfg, &mesh);
    Ok((mesh, state))
}

/// Run the stochastic domain decomposition loop with the configured
/// decomposition.
pub fn run_sdd(cfg: &SimulationConfig) -> Result<Vec<StepRecord>> {
    run_loop(cfg, cfg.px, cfg.py)
}

/// Run the deterministic single-domain reference: the same loop with a 1x1
/// decomposition and no Monte-Carlo work.
pub fn run_reference(cfg: &SimulationConfig) -> Result<Vec<StepRecord>> {
    run_loop(cfg, 1, 1)
}

fn run_loop(cfg: &SimulationConfig, px: usize, py: usize) -> Result<Vec<StepRecord>> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    let limits = cfg.limits();
    let grid = cfg.grid()?;
    let dec = grid.decompose(px, py)?;
    let steps = cfg.step_count()?;

    let (mut mesh, mut state) = initial_mesh_and_state(&cfg)?;
    mesh.check_untangled()?;

    let mut records = Vec::new();
    if cfg.record_all {
        records.push(StepRecord { time: cfg.t0, mesh: mesh.clone(), state: state.clone(), interface: None });
    }

    for m in 0..steps {
        let t_np1 = cfg.t0 + (m + 1) as f64 * cfg.dt;
        let field = build_arclength_density(state.adaptation_scalar(), &mesh, &cfg.density)?;

        let (interface, mut mesh_np1) = if grid.fully_periodic() && !dec.has_interfaces() {
            (None, step_mesh_periodic(&mesh, &field, cfg.dt, &limits)?)
        } else {
            let bdata = if grid.fully_periodic() {
                None
            } else {
                Some(advance_boundary_lines(&mesh, &field, cfg.dt, &limits)?)
            };
            let interface = if dec.has_interfaces() {
                Some(stochastic_interface_solve(&dec, &mesh, &field, bdata.as_ref(), cfg.dt, &cfg.mc, m as u64)?)
            } else {
                None
            };
            let next = advance_mesh_decomposed(&mesh, &field, &dec, bdata.as_ref(), interface.as_ref(), cfg.dt, &limits)?;
            (interface, next)
        };
        mesh_np1.time = t_np1;
        mesh_np1.check_untangled()?;

        let mut state_np1 = step_physics(&cfg, &state, &mesh, &mesh_np1)?;
        state_np1.time = t_np1;

        let wanted = cfg.record_all
            || m + 1 == steps
            || cfg.record_times.iter().any(|&rt| (t_np1 - rt).abs() <= 1e-9);
        if wanted {
            records.push(StepRecord { time: t_np1, mesh: mesh_np1.clone(), state: state_np1.clone(), interface });
        }

        mesh = mesh_np1;
        state = state_np1;
    }
    Ok(records)
}

/// Record closest to a requested time, within tolerance.
pub fn record_at(records: &[StepRecord], t: f64) -> Option<&StepRecord> {
    records.iter().find(|r| (r.time - t).abs() <= 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensityField;
    use crate::grid::IndexBox;

    fn tiny(problem: Problem) -> SimulationConfig {
        let mut cfg = SimulationConfig::paper(problem);
        cfg.nx = 17;
        cfg.ny = 17;
        cfg.t_final = cfg.t0 + 5.0 * cfg.dt;
        cfg.mc = McConfig::new(60, cfg.mc.k, cfg.dt, 7, 1).unwrap();
        cfg.record_all = true;
        cfg
    }

    #[test]
    fn degenerate_decomposition_equals_reference() {
        for problem in [Problem::BurgersDirichlet, Problem::FiveRing, Problem::BurgersPeriodic, Problem::ShallowWater] {
            let mut cfg = tiny(problem);
            cfg.px = 1;
            cfg.py = 1;
            let a = run_sdd(&cfg).unwrap();
            let b = run_reference(&cfg).unwrap();
            assert_eq!(a.len(), b.len());
            for (ra, rb) in a.iter().zip(&b) {
                assert_eq!(ra.mesh, rb.mesh, "{problem:?}");
                assert_eq!(ra.state, rb.state);
            }
        }
    }

    #[test]
    fn sdd_runs_are_deterministic_across_thread_counts() {
        let mut cfg = tiny(Problem::FiveRing);
        cfg.px = 2;
        cfg.py = 2;
        let a = run_sdd(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_sdd(&cfg).unwrap());
        let c = run_sdd(&cfg).unwrap();
        for ((ra, rb), rc) in a.iter().zip(&b).zip(&c) {
            assert_eq!(ra.mesh, rb.mesh);
            assert_eq!(ra.mesh, rc.mesh);
            assert_eq!(ra.state, rb.state);
        }
    }

    #[test]
    fn step_times_are_exact() {
        let cfg = tiny(Problem::ShallowWater);
        let recs = run_reference(&cfg).unwrap();
        for (m, r) in recs.iter().enumerate() {
            let want = cfg.t0 + m as f64 * cfg.dt;
            assert_eq!(r.time, want);
            assert_eq!(r.state.time, want);
            assert_eq!(r.mesh.time, want);
        }
    }

    #[test]
    fn interface_nodes_carry_estimates_in_assembled_mesh() {
        let mut cfg = tiny(Problem::FiveRing);
        cfg.px = 2;
        cfg.py = 2;
        let recs = run_sdd(&cfg).unwrap();
        // Skip the initial record; later ones hold the interface solution.
        let r = &recs[1];
        let ifc = r.interface.as_ref().unwrap();
        assert!(!ifc.is_empty());
        for (&(i, j), v) in ifc {
            assert_eq!(r.mesh.x[[i, j]], v.estimate.mean_x);
            assert_eq!(r.mesh.y[[i, j]], v.estimate.mean_y);
        }
    }

    #[test]
    fn uniform_density_keeps_mesh_uniform_and_physics_matches_fixed_grid() {
        // Density forced to 1: the mesh stepper is the identity up to
        // roundoff and the physical solve reduces to a fixed-grid solve.
        let cfg = tiny(Problem::BurgersPeriodic);
        let grid = cfg.grid().unwrap();
        let domain = cfg.domain().unwrap();
        let mesh = PhysicalMesh::uniform(grid, domain, 0.0);
        let field = DensityField::from_rho(grid, Array2::from_elem((grid.nx, grid.ny), 1.0), 0.0).unwrap();
        let next = step_mesh_periodic(&mesh, &field, cfg.dt, &cfg.limits()).unwrap();
        let mut moved = 0.0f64;
        for ((i, j), &v) in next.x.indexed_iter() {
            moved = moved.max((v - mesh.x[[i, j]]).abs());
        }
        assert!(moved < 1e-13, "mesh moved {moved}");

        let state = initial_state(&cfg, &mesh);
        let on_moving = step_physics(&cfg, &state, &mesh, &next).unwrap();
        let on_fixed = step_physics(&cfg, &state, &mesh, &mesh).unwrap();
        match (&on_moving.field, &on_fixed.field) {
            (PhysField::Burgers { u: a }, PhysField::Burgers { u: b }) => {
                let mut d = 0.0f64;
                for (x, y) in a.iter().zip(b.iter()) {
                    d = d.max((x - y).abs());
                }
                assert!(d < 1e-10, "fixed-grid mismatch {d}");
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn interface_solve_counts_and_stride() {
        let cfg = SimulationConfig::paper(Problem::BurgersDirichlet);
        let grid = cfg.grid().unwrap();
        let domain = cfg.domain().unwrap();
        let mesh = PhysicalMesh::uniform(grid, domain, 0.0);
        let field = DensityField::from_rho(grid, Array2::from_elem((grid.nx, grid.ny), 1.0), 0.0).unwrap();
        let dec = grid.decompose(2, 2).unwrap();
        let limits = StepLimits::default();
        let bdata = advance_boundary_lines(&mesh, &field, cfg.dt, &limits).unwrap();

        let mc = McConfig::new(40, 2, cfg.dt, 5, 1).unwrap();
        let sol = stochastic_interface_solve(&dec, &mesh, &field, Some(&bdata), cfg.dt, &mc, 0).unwrap();
        assert_eq!(sol.len(), 77);
        assert!(sol.values().all(|v| !v.interpolated));

        let mc4 = McConfig::new(40, 2, cfg.dt, 5, 4).unwrap();
        let sol4 = stochastic_interface_solve(&dec, &mesh, &field, Some(&bdata), cfg.dt, &mc4, 0).unwrap();
        assert_eq!(sol4.len(), 77);
        // Line endpoints are estimated.
        assert!(!sol4[&(20, 1)].interpolated);
        assert!(!sol4[&(20, 39)].interpolated);
        assert!(!sol4[&(1, 20)].interpolated);
        assert!(!sol4[&(39, 20)].interpolated);
        // The crossing is estimated even off-stride.
        assert!(!sol4[&(20, 20)].interpolated);
        // Interpolated nodes lie on the chord between their anchors.
        let a = sol4[&(20, 5)].estimate;
        let b = sol4[&(20, 9)].estimate;
        for (j, w) in [(6usize, 0.25), (7, 0.5), (8, 0.75)] {
            let v = &sol4[&(20, j)];
            assert!(v.interpolated);
            assert!((v.estimate.mean_x - (a.mean_x + w * (b.mean_x - a.mean_x))).abs() < 1e-14);
            assert!((v.estimate.mean_y - (a.mean_y + w * (b.mean_y - a.mean_y))).abs() < 1e-14);
        }
        // Uniform density: every estimate sits on the uniform mesh to
        // within Monte-Carlo error.
        for (&(i, j), v) in &sol {
            let want = [domain.lx * grid.xi(i), domain.ly * grid.eta(j)];
            assert!((v.estimate.mean_x - want[0]).abs() < 3.0 * v.estimate.stderr_x + 1e-12, "node ({i},{j})");
            assert!((v.estimate.mean_y - want[1]).abs() < 3.0 * v.estimate.stderr_y + 1e-12);
        }
    }

    #[test]
    fn periodic_interface_fill_wraps_with_period_jump() {
        let mut cfg = SimulationConfig::paper(Problem::FiveRing);
        cfg.nx = 16;
        cfg.ny = 16;
        let grid = cfg.grid().unwrap();
        let domain = cfg.domain().unwrap();
        let mesh = PhysicalMesh::uniform(grid, domain, 0.0);
        let field = DensityField::from_rho(grid, Array2::from_elem((16, 16), 1.0), 0.0).unwrap();
        let dec = grid.decompose(2, 2).unwrap();
        // Stride larger than the remaining gap forces a wrap segment on each
        // line: anchors at 0, 6, 12 leave 13..15 interpolated around the seam.
        let mc = McConfig::new(200, 1, cfg.dt, 3, 6).unwrap();
        let sol = stochastic_interface_solve(&dec, &mesh, &field, None, cfg.dt, &mc, 0).unwrap();
        let v = &sol[&(0, 14)];
        assert!(v.interpolated);
        // On the uniform mesh the wrapped chord stays on the uniform lattice.
        let want_y = domain.ly * grid.eta(14);
        assert!((v.estimate.mean_y - want_y).abs() < 3.0 * 0.02 + 1e-2, "y {} vs {}", v.estimate.mean_y, want_y);
    }

    #[test]
    fn five_ring_field_shape() {
        // At the domain center the central ring term is tanh(-30/8) while the
        // four offset rings each contribute about +1; on the central ring
        // radius the central term vanishes.
        let r = 30.0;
        let center = five_ring_u(1.0, 1.0, r);
        assert!((center - 3.0).abs() < 0.01, "center value {center}");
        let on_ring = five_ring_u(1.0 + 0.125f64.sqrt(), 1.0, r);
        assert!((on_ring - 4.0).abs() < 0.05, "on-ring value {on_ring}");
    }

    #[test]
    fn five_ring_density_peaks_on_ring_shoulders() {
        let cfg = SimulationConfig::paper(Problem::FiveRing);
        let (mesh, state) = initial_mesh_and_state(&cfg).unwrap();
        let field = build_arclength_density(state.adaptation_scalar(), &mesh, &cfg.density).unwrap();
        let mut best = (0usize, 0usize);
        let mut max_rho = 0.0f64;
        for ((i, j), &r) in field.rho.indexed_iter() {
            if r > max_rho {
                max_rho = r;
                best = (i, j);
            }
        }
        assert!(max_rho > 1.5, "density did not adapt (max {max_rho})");
        // The steepest slope of each tanh ring sits where the squared
        // distance to its center is near 1/8.
        let (x, y) = (mesh.x[[best.0, best.1]] - 1.0, mesh.y[[best.0, best.1]] - 1.0);
        let centers = [(0.0, 0.0), (0.5, 0.5), (0.5, -0.5), (-0.5, 0.5), (-0.5, -0.5)];
        let d2 = centers
            .iter()
            .map(|(cx, cy)| (x - cx).powi(2) + (y - cy).powi(2))
            .fold(f64::INFINITY, f64::min);
        assert!((d2 - 0.125).abs() < 0.06, "max-density node at squared distance {d2}");
    }

    #[test]
    fn config_validation_errors() {
        let mut cfg = SimulationConfig::paper(Problem::FiveRing);
        cfg.dt = 0.0003;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig { .. })));
        let mut cfg = SimulationConfig::paper(Problem::FiveRing);
        cfg.nx = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn whole_box_helper_consistency() {
        // box_boundary_data over the whole grid with global data only.
        let cfg = SimulationConfig::paper(Problem::BurgersDirichlet);
        let grid = cfg.grid().unwrap();
        let domain = cfg.domain().unwrap();
        let mesh = PhysicalMesh::uniform(grid, domain, 0.0);
        let field = DensityField::from_rho(grid, Array2::from_elem((grid.nx, grid.ny), 1.0), 0.0).unwrap();
        let bdata = advance_boundary_lines(&mesh, &field, cfg.dt, &StepLimits::default()).unwrap();
        bdata.validate(domain.lx, domain.ly, 1e-12).unwrap();
        let bx = IndexBox { i_lo: 0, i_hi: grid.nx - 1, j_lo: 0, j_hi: grid.ny - 1 };
        let bc = box_boundary_data(&mesh, &bx, Some(&bdata), None).unwrap();
        assert_eq!(bc.at_np1.west.len(), grid.ny);
        assert_eq!(bc.at_np1.south.len(), grid.nx);
    }
}
