use air_core::harness::{margin_experiment, MarginReport};
use air_core::ot::Epsilon;
use serde::Serialize;

use crate::args::MarginArgs;
use crate::error::CliResult;
use crate::output::{write_json, Table};
use crate::{resolve_config, with_pool};

/// Summary written to `margin_report.json`; per-trial values go to the CSV.
#[derive(Serialize)]
struct Summary<'a> {
    trials: usize,
    q: usize,
    n: usize,
    d: usize,
    seed: u64,
    epsilon_factor: f64,
    patch_model: air_core::harness::PatchModel,
    amplified_fraction: f64,
    dominance_violations: usize,
    unconverged: usize,
    mean_differential: f64,
    config: &'a air_core::ReinforcementConfig,
}

pub fn run(a: &MarginArgs) -> CliResult<()> {
    let cfg = resolve_config(&a.config)?;
    let report = with_pool(cfg.threads, || {
        Ok(margin_experiment(
            a.trials,
            a.q,
            a.n,
            a.d,
            Epsilon::Relative(a.epsilon_factor),
            cfg.seed,
            a.patch_model,
            cfg.sinkhorn_params(),
        )?)
    })?;

    if report.unconverged > 0 {
        log::warn!(
            "{} of {} trials had a sinkhorn solve stop at the iteration cap",
            report.unconverged,
            report.trials
        );
    }
    let csv_path = a.out_dir.join("margins.csv");
    write_samples(&csv_path, &report)?;
    let mean_differential =
        report.samples.iter().map(|s| s.differential).sum::<f64>() / report.trials as f64;
    write_json(
        &a.out_dir.join("margin_report.json"),
        &Summary {
            trials: report.trials,
            q: report.q,
            n: report.n,
            d: report.d,
            seed: report.seed,
            epsilon_factor: a.epsilon_factor,
            patch_model: report.patch_model,
            amplified_fraction: report.amplified_fraction,
            dominance_violations: report.dominance_violations,
            unconverged: report.unconverged,
            mean_differential,
            config: &cfg,
        },
    )?;
    println!(
        "{} trials: amplified fraction {}, dominance violations {} -> {}",
        report.trials,
        report.amplified_fraction,
        report.dominance_violations,
        csv_path.display()
    );
    Ok(())
}

fn write_samples(path: &std::path::Path, report: &MarginReport) -> CliResult<()> {
    let mut t = Table::new(&[
        "trial",
        "d_ot_1",
        "d_ot_2",
        "d_cos_1",
        "d_cos_2",
        "margin_ot",
        "margin_cos",
        "differential",
        "amplified",
        "converged",
    ])?;
    for s in &report.samples {
        t.row([
            s.trial.to_string(),
            s.d_ot_1.to_string(),
            s.d_ot_2.to_string(),
            s.d_cos_1.to_string(),
            s.d_cos_2.to_string(),
            s.margin_ot.to_string(),
            s.margin_cos.to_string(),
            s.differential.to_string(),
            s.amplified.to_string(),
            s.converged.to_string(),
        ])?;
    }
    t.save(path)
}
