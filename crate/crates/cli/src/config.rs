//! TOML run configuration: a required problem id plus optional overrides of
//! the published defaults. Unknown keys are rejected.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sddmesh_core::driver::{Problem, SimulationConfig};
use sddmesh_core::{AlphaMode, DensityConfig, McConfig};

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct McOverrides {
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DensityOverrides {
    /// `{ fixed = 0.2 }` or `{ adaptive = 10.0 }`.
    pub alpha: Option<AlphaMode>,
    pub smoothing_passes: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsOverrides {
    pub nu: Option<f64>,
    pub u0: Option<f64>,
    pub amplitude: Option<f64>,
    pub ring_r: Option<f64>,
    pub base_height: Option<f64>,
    pub pile_height: Option<f64>,
    pub pile_radius: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputOverrides {
    /// Times at which mesh snapshots are written; defaults to the final time.
    pub snapshot_times: Option<Vec<f64>>,
    /// Decompositions for the table sweep, e.g. ["2x2", "3x3"].
    pub decompositions: Option<Vec<String>>,
}

/// On-disk configuration document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub problem: Problem,
    #[serde(default)]
    pub nx: Option<usize>,
    #[serde(default)]
    pub ny: Option<usize>,
    #[serde(default)]
    pub px: Option<usize>,
    #[serde(default)]
    pub py: Option<usize>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub t0: Option<f64>,
    #[serde(default)]
    pub t_final: Option<f64>,
    #[serde(default)]
    pub pre_adapt: Option<bool>,
    #[serde(default)]
    pub substep_cap: Option<usize>,
    #[serde(default)]
    pub mc: McOverrides,
    #[serde(default)]
    pub density: DensityOverrides,
    #[serde(default)]
    pub physics: PhysicsOverrides,
    #[serde(default)]
    pub output: OutputOverrides,
}

/// Resolved experiment: simulation parameters plus output controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub sim: SimulationConfig,
    pub snapshot_times: Vec<f64>,
    pub decompositions: Vec<(usize, usize)>,
}

pub fn parse_decomposition(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once('x').with_context(|| format!("decomposition {s:?} is not of the form PxQ"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

/// Parse a configuration document and resolve it against the per-problem
/// defaults; unknown keys are rejected by the deserializer.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    let file: FileConfig = toml::from_str(text).context("invalid configuration")?;
    resolve(file)
}

pub fn resolve(file: FileConfig) -> Result<ExperimentSpec> {
    let mut sim = SimulationConfig::paper(file.problem);
    if let Some(v) = file.nx {
        sim.nx = v;
    }
    if let Some(v) = file.ny {
        sim.ny = v;
    }
    if let Some(v) = file.px {
        sim.px = v;
    }
    if let Some(v) = file.py {
        sim.py = v;
    }
    if let Some(v) = file.dt {
        sim.dt = v;
    }
    if let Some(v) = file.t0 {
        sim.t0 = v;
    }
    if let Some(v) = file.t_final {
        sim.t_final = v;
    }
    if let Some(v) = file.pre_adapt {
        sim.pre_adapt = v;
    }
    if let Some(v) = file.substep_cap {
        sim.substep_cap = v;
    }
    let mc = &file.mc;
    sim.mc = McConfig::new(
        mc.n.unwrap_or(sim.mc.n),
        mc.k.unwrap_or(sim.mc.k),
        sim.dt,
        mc.seed.unwrap_or(sim.mc.seed),
        mc.stride.unwrap_or(sim.mc.stride),
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;
    sim.density = DensityConfig {
        alpha: file.density.alpha.unwrap_or(sim.density.alpha),
        smoothing_passes: file.density.smoothing_passes.unwrap_or(sim.density.smoothing_passes),
    };
    if let Some(v) = file.physics.nu {
        sim.physics.nu = v;
    }
    if let Some(v) = file.physics.u0 {
        sim.physics.u0 = v;
    }
    if let Some(v) = file.physics.amplitude {
        sim.physics.amplitude = v;
    }
    if let Some(v) = file.physics.ring_r {
        sim.physics.ring_r = v;
    }
    if let Some(v) = file.physics.base_height {
        sim.physics.base_height = v;
    }
    if let Some(v) = file.physics.pile_height {
        sim.physics.pile_height = v;
    }
    if let Some(v) = file.physics.pile_radius {
        sim.physics.pile_radius = v;
    }
    sim.validate().map_err(|e| anyhow::anyhow!("{e}"))?;

    let snapshot_times = file.output.snapshot_times.unwrap_or_else(|| vec![sim.t_final]);
    for &t in &snapshot_times {
        if t < sim.t0 - 1e-12 || t > sim.t_final + 1e-12 {
            bail!("snapshot time {t} outside [{}, {}]", sim.t0, sim.t_final);
        }
    }
    let decompositions = match &file.output.decompositions {
        Some(list) => list.iter().map(|s| parse_decomposition(s)).collect::<Result<Vec<_>>>()?,
        None => vec![(sim.px, sim.py)],
    };
    sim.record_times = snapshot_times.clone();
    Ok(ExperimentSpec { sim, snapshot_times, decompositions })
}

/// Serialize a resolved simulation config back to a full TOML document that
/// parses to the same configuration.
pub fn serialize_config(spec: &ExperimentSpec) -> Result<String> {
    let sim = &spec.sim;
    let file = FileConfig {
        problem: sim.problem,
        nx: Some(sim.nx),
        ny: Some(sim.ny),
        px: Some(sim.px),
        py: Some(sim.py),
        dt: Some(sim.dt),
        t0: Some(sim.t0),
        t_final: Some(sim.t_final),
        pre_adapt: Some(sim.pre_adapt),
        substep_cap: Some(sim.substep_cap),
        mc: McOverrides {
            n: Some(sim.mc.n),
            k: Some(sim.mc.k),
            seed: Some(sim.mc.seed),
            stride: Some(sim.mc.stride),
        },
        density: DensityOverrides {
            alpha: Some(sim.density.alpha),
            smoothing_passes: Some(sim.density.smoothing_passes),
        },
        physics: PhysicsOverrides {
            nu: Some(sim.physics.nu),
            u0: Some(sim.physics.u0),
            amplitude: Some(sim.physics.amplitude),
            ring_r: Some(sim.physics.ring_r),
            base_height: Some(sim.physics.base_height),
            pile_height: Some(sim.physics.pile_height),
            pile_radius: Some(sim.physics.pile_radius),
        },
        output: OutputOverrides {
            snapshot_times: Some(spec.snapshot_times.clone()),
            decompositions: Some(spec.decompositions.iter().map(|(p, q)| format!("{p}x{q}")).collect()),
        },
    };
    Ok(toml::to_string_pretty(&file)?)
}
