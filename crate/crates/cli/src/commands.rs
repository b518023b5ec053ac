//! Experiment drivers behind the CLI verbs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};

use sddmesh_core::driver::{self, run_reference, run_sdd, Problem, SimulationConfig, StepRecord};
use sddmesh_core::physics::burgers_exact;
use sddmesh_core::quality::{linf_error, quality_ratio};

use crate::config::{serialize_config, ExperimentSpec};
use crate::output::{
    build_manifest, write_manifest, write_mesh_snapshot, write_quality_table, QualityRow, RunManifest,
};

fn exact_solution(sim: &SimulationConfig) -> Option<impl Fn(f64, f64, f64) -> f64 + Copy> {
    match sim.problem {
        Problem::BurgersDirichlet => {
            let nu = sim.physics.nu;
            Some(move |x: f64, y: f64, t: f64| burgers_exact(x, y, t, nu))
        }
        _ => None,
    }
}

fn snapshot_records<'a>(records: &'a [StepRecord], times: &[f64]) -> Vec<&'a StepRecord> {
    times.iter().filter_map(|&t| driver::record_at(records, t)).collect()
}

/// Run the reference and every requested decomposition, write snapshots and
/// the quality table, and return the manifest.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunManifest> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let start = Instant::now();
    let mut files: Vec<PathBuf> = Vec::new();
    let mut rows: Vec<QualityRow> = Vec::new();

    let sim = &spec.sim;
    let reference = run_reference(sim).map_err(|e| anyhow::anyhow!("reference run: {e}"))?;
    for rec in snapshot_records(&reference, &spec.snapshot_times) {
        let path = out_dir.join(format!("mesh_sd_t{:.4}.csv", rec.time));
        write_mesh_snapshot(&path, &rec.mesh, "sd", (1, 1))?;
        files.push(path);
    }

    for &(px, py) in &spec.decompositions {
        let mut cfg = sim.clone();
        cfg.px = px;
        cfg.py = py;
        let records = run_sdd(&cfg).map_err(|e| anyhow::anyhow!("{px}x{py} run: {e}"))?;
        let label = format!("{px}x{py}");
        for rec in snapshot_records(&records, &spec.snapshot_times) {
            let path = out_dir.join(format!("mesh_{label}_t{:.4}.csv", rec.time));
            write_mesh_snapshot(&path, &rec.mesh, &label, (px, py))?;
            files.push(path);

            let refrec = driver::record_at(&reference, rec.time)
                .with_context(|| format!("no reference record at t = {}", rec.time))?;
            let (r_max, r_mean) = quality_ratio(&refrec.mesh, &rec.mesh).map_err(|e| anyhow::anyhow!("{e}"))?;
            let l_inf = exact_solution(sim).map(|f| linf_error(&rec.state, &rec.mesh, f, rec.time));
            rows.push(QualityRow { t_f: rec.time, decomposition: (px, py), l_inf, r_max: Some(r_max), r_mean: Some(r_mean) });
        }
    }

    rows.sort_by(|a, b| a.t_f.partial_cmp(&b.t_f).unwrap().then(a.decomposition.cmp(&b.decomposition)));
    let table = out_dir.join("quality_table.csv");
    write_quality_table(&table, &rows)?;
    files.push(table);

    let manifest = build_manifest(serialize_config(spec)?, sim.mc.seed, start.elapsed().as_secs_f64(), &files)?;
    let manifest_path = out_dir.join("manifest.json");
    write_manifest(&manifest_path, &manifest)?;
    crate::output::verify_manifest(&manifest_path)?;
    Ok(manifest)
}

/// Short reduced-N sanity checks over all four problems; returns an error if
/// any check fails.
pub fn run_check(out_dir: Option<&Path>) -> Result<()> {
    let mut failures = Vec::new();
    let started = Instant::now();

    // Degenerate equivalence on short runs.
    for problem in [Problem::BurgersDirichlet, Problem::FiveRing, Problem::BurgersPeriodic, Problem::ShallowWater] {
        let mut cfg = SimulationConfig::paper(problem);
        cfg.t_final = cfg.t0 + 5.0 * cfg.dt;
        cfg.px = 1;
        cfg.py = 1;
        cfg.record_all = true;
        let a = run_sdd(&cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
        let b = run_reference(&cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
        let same = a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| x.mesh == y.mesh && x.state == y.state);
        println!(
            "[{}] check: {} 1x1 equivalence",
            if same { "ok" } else { "FAIL" },
            problem.name()
        );
        if !same {
            failures.push(format!("{} degenerate equivalence", problem.name()));
        }
    }

    // Reduced five-ring quality comparison.
    let mut cfg = SimulationConfig::paper(Problem::FiveRing);
    cfg.t_final = 0.01;
    cfg.mc.n = 500;
    let reference = run_reference(&cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
    cfg.px = 2;
    cfg.py = 2;
    let sdd = run_sdd(&cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
    let (r_max, r_mean) = quality_ratio(
        &reference.last().unwrap().mesh,
        &sdd.last().unwrap().mesh,
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;
    let ok = r_mean >= 0.98 && r_max >= 0.95;
    println!(
        "[{}] check: five-ring 2x2 at t=0.01, N=500: R_max = {r_max:.3}, R_mean = {r_mean:.3}",
        if ok { "ok" } else { "FAIL" }
    );
    if !ok {
        failures.push("five-ring reduced quality".into());
    }

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("check_summary.txt"),
            format!("failures: {}\nelapsed_s: {:.1}\n", failures.len(), started.elapsed().as_secs_f64()),
        )?;
    }
    if !failures.is_empty() {
        bail!("checks failed: {}", failures.join(", "));
    }
    println!("all checks passed in {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}
