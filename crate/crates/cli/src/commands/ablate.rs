use std::path::Path;

use air_core::harness::{paired_run, PairedRun};
use air_core::ReinforcementConfig;
use rayon::prelude::*;

use crate::args::{parse_epsilon, AblateArgs};
use crate::commands::simulate::{decoder_config, scene_config};
use crate::error::{CliError, CliResult};
use crate::output::Table;
use crate::{resolve_config, with_pool};

pub const PARAMETERS: [&str; 8] = [
    "top_q",
    "tau",
    "epsilon",
    "patch_count",
    "layer_gate",
    "sinkhorn_max_iter",
    "injection_mode",
    "uncertainty_threshold",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub name: String,
    pub values: Vec<String>,
}

pub fn parse_sweep(spec: &str) -> CliResult<Sweep> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("sweep `{spec}` is not name=v1,v2,...")))?;
    let name = name.trim().to_string();
    if !PARAMETERS.contains(&name.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown sweep parameter `{name}`; valid: {}",
            PARAMETERS.join(", ")
        )));
    }
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(CliError::Usage(format!("sweep `{name}` has no values")));
    }
    Ok(Sweep { name, values })
}

/// Sets one parameter from its textual grid value.
pub fn apply(cfg: &mut ReinforcementConfig, name: &str, value: &str) -> CliResult<()> {
    let bad = |e: &dyn std::fmt::Display| CliError::Usage(format!("{name}={value}: {e}"));
    match name {
        "top_q" => cfg.top_q = value.parse().map_err(|e| bad(&e))?,
        "tau" => cfg.tau = value.parse().map_err(|e| bad(&e))?,
        "epsilon" => cfg.epsilon = parse_epsilon(value).map_err(|e| bad(&e))?,
        "patch_count" => cfg.patch_count = value.parse().map_err(|e| bad(&e))?,
        "layer_gate" => cfg.layer_gate = Some(value.parse().map_err(|e: String| bad(&e))?),
        "sinkhorn_max_iter" => cfg.sinkhorn_max_iter = value.parse().map_err(|e| bad(&e))?,
        "injection_mode" => cfg.injection_mode = value.parse().map_err(|e: String| bad(&e))?,
        "uncertainty_threshold" => {
            cfg.uncertainty_threshold = if value == "none" {
                None
            } else {
                Some(value.parse().map_err(|e| bad(&e))?)
            }
        }
        _ => return Err(CliError::Usage(format!("unknown sweep parameter `{name}`"))),
    }
    cfg.validate().map_err(|e| bad(&e))
}

/// Every combination of sweep values, first sweep varying slowest.
pub fn grid(sweeps: &[Sweep]) -> Vec<Vec<String>> {
    sweeps.iter().fold(vec![Vec::new()], |acc, s| {
        acc.iter()
            .flat_map(|prefix| {
                s.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect()
    })
}

pub fn run(a: &AblateArgs) -> CliResult<()> {
    let base = resolve_config(&a.config)?;
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let sweeps = a
        .sweep
        .iter()
        .map(|s| parse_sweep(s))
        .collect::<CliResult<Vec<_>>>()?;
    let points = grid(&sweeps);
    let configs = points
        .iter()
        .map(|p| {
            let mut cfg = base.clone();
            for (s, v) in sweeps.iter().zip(p) {
                apply(&mut cfg, &s.name, v)?;
            }
            Ok(cfg)
        })
        .collect::<CliResult<Vec<_>>>()?;
    decoder_config(&a.harness, base.seed).validate()?;

    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|i| (base.seed..base.seed + a.seeds).map(move |s| (i, s)))
        .collect();
    let runs: Vec<PairedRun> = with_pool(base.threads, || {
        jobs.par_iter()
            .map(|&(i, seed)| {
                let cfg = &configs[i];
                let dc = decoder_config(&a.harness, seed);
                Ok(paired_run(
                    &dc,
                    &scene_config(cfg),
                    cfg,
                    a.harness.steps,
                    seed,
                )?)
            })
            .collect()
    })?;

    let names: Vec<&str> = sweeps.iter().map(|s| s.name.as_str()).collect();
    let per_point: Vec<&[PairedRun]> = runs.chunks(a.seeds as usize).collect();
    write_grid(&a.out_dir.join("ablate.csv"), &names, &points, &per_point)?;
    write_patches(
        &a.out_dir.join("ablate_patches.csv"),
        &names,
        &points,
        &per_point,
    )?;
    println!(
        "{} grid points x {} seeds -> {}",
        points.len(),
        a.seeds,
        a.out_dir.join("ablate.csv").display()
    );
    Ok(())
}

fn write_grid(
    path: &Path,
    names: &[&str],
    points: &[Vec<String>],
    runs: &[&[PairedRun]],
) -> CliResult<()> {
    const METRICS: [&str; 12] = [
        "seeds",
        "mean_uplift",
        "positive_fraction",
        "salient_on",
        "salient_off",
        "background_on",
        "selected_patches",
        "salient_patches_selected",
        "chair_i_on",
        "chair_i_off",
        "chair_s_on",
        "decode_ms",
    ];
    let header: Vec<&str> = names.iter().copied().chain(METRICS).collect();
    let mut t = Table::new(&header)?;
    for (p, rs) in points.iter().zip(runs) {
        let n = rs.len() as f64;
        let on = |k: &str| rs.iter().map(|r| r.on.metrics[k]).sum::<f64>() / n;
        let off = |k: &str| rs.iter().map(|r| r.off.metrics[k]).sum::<f64>() / n;
        let mut row = p.clone();
        row.extend([
            rs.len().to_string(),
            (rs.iter().map(|r| r.uplift()).sum::<f64>() / n).to_string(),
            (rs.iter().filter(|r| r.uplift() > 0.0).count() as f64 / n).to_string(),
            on("final_salient_similarity").to_string(),
            off("final_salient_similarity").to_string(),
            on("final_background_similarity").to_string(),
            on("selected_patches").to_string(),
            on("salient_patches_selected").to_string(),
            on("chair_i").to_string(),
            off("chair_i").to_string(),
            on("chair_s").to_string(),
            (rs.iter().map(|r| r.on.timings["decode_ms"]).sum::<f64>() / n).to_string(),
        ]);
        t.row(row)?;
    }
    t.save(path)
}

/// Long format: one row per grid point, seed, gated layer and patch.
fn write_patches(
    path: &Path,
    names: &[&str],
    points: &[Vec<String>],
    runs: &[&[PairedRun]],
) -> CliResult<()> {
    let header: Vec<&str> = names
        .iter()
        .copied()
        .chain([
            "seed",
            "layer",
            "m",
            "d_ot",
            "d_cos",
            "converged",
            "selected",
        ])
        .collect();
    let mut t = Table::new(&header)?;
    for (p, rs) in points.iter().zip(runs) {
        for r in rs.iter() {
            for sel in &r.on.selections {
                for s in &sel.scores {
                    let mut row = p.clone();
                    row.extend([
                        r.seed.to_string(),
                        sel.layer.to_string(),
                        s.index.to_string(),
                        s.d_ot.to_string(),
                        s.d_cos.to_string(),
                        s.converged.to_string(),
                        sel.selected.contains(&s.index).to_string(),
                    ]);
                    t.row(row)?;
                }
            }
        }
    }
    t.save(path)
}
