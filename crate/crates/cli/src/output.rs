//! File outputs: mesh snapshots, quality tables and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sddmesh_core::PhysicalMesh;

pub const QUALITY_TABLE_HEADER: &str = "t_f,decomposition,l_inf,r_max,r_mean";

/// Plain-text mesh snapshot: metadata comment lines, a column header, then
/// one row per node.
pub fn write_mesh_snapshot(path: &Path, mesh: &PhysicalMesh, label: &str, decomposition: (usize, usize)) -> Result<()> {
    let g = &mesh.grid;
    let mut out = String::new();
    out.push_str(&format!("# label: {label}\n"));
    out.push_str(&format!("# time: {}\n", mesh.time));
    out.push_str(&format!("# grid: {}x{} periodic_x={} periodic_y={}\n", g.nx, g.ny, g.periodic_x, g.periodic_y));
    out.push_str(&format!("# domain: {} x {}\n", mesh.domain.lx, mesh.domain.ly));
    out.push_str(&format!("# decomposition: {}x{}\n", decomposition.0, decomposition.1));
    out.push_str("i,j,xi,eta,x,y\n");
    for i in 0..g.nx {
        for j in 0..g.ny {
            out.push_str(&format!("{i},{j},{},{},{},{}\n", g.xi(i), g.eta(j), mesh.x[[i, j]], mesh.y[[i, j]]));
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct QualityRow {
    pub t_f: f64,
    pub decomposition: (usize, usize),
    pub l_inf: Option<f64>,
    pub r_max: Option<f64>,
    pub r_mean: Option<f64>,
}

/// Table rows mirroring the published layout: one row per final time and
/// decomposition, ratios rounded to two decimals.
pub fn write_quality_table(path: &Path, rows: &[QualityRow]) -> Result<()> {
    let mut out = String::from(QUALITY_TABLE_HEADER);
    out.push('\n');
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let fmt_r = |v: Option<f64>| v.map(|x| format!("{:.2}", x)).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{}x{},{},{},{}\n",
            r.t_f,
            r.decomposition.0,
            r.decomposition.1,
            fmt_opt(r.l_inf),
            fmt_r(r.r_max),
            fmt_r(r.r_mean),
        ));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Run manifest: resolved configuration echo, seed, version, wall-clock and
/// the produced files with checksums.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config: String,
    pub wall_clock_s: f64,
    pub files: Vec<ManifestFile>,
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn build_manifest(config_echo: String, seed: u64, wall_clock_s: f64, files: &[PathBuf]) -> Result<RunManifest> {
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        entries.push(ManifestFile {
            path: f
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| f.display().to_string()),
            bytes: fs::metadata(f)?.len(),
            sha256: sha256_hex(f)?,
        });
    }
    Ok(RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config: config_echo,
        wall_clock_s,
        files: entries,
    })
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(manifest)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Re-hash every file listed in a manifest and fail on any mismatch.
pub fn verify_manifest(manifest_path: &Path) -> Result<()> {
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    for f in &manifest.files {
        let p = dir.join(&f.path);
        if !p.exists() {
            bail!("manifest lists missing file {}", f.path);
        }
        let h = sha256_hex(&p)?;
        if h != f.sha256 {
            bail!("checksum mismatch for {}: {} vs {}", f.path, h, f.sha256);
        }
    }
    Ok(())
}
