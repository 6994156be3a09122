use std::path::Path;

use air_core::patch::{score_patches, select_patches, PatchScore};

use crate::args::ScoreArgs;
use crate::error::CliResult;
use crate::output::Table;
use crate::{check_patch_widths, read_matrix, read_patch_dir, resolve_config, with_pool};

pub const HEADER: [&str; 5] = ["m", "d_ot", "d_cos", "converged", "selected"];

pub fn run(a: &ScoreArgs) -> CliResult<()> {
    let cfg = resolve_config(&a.config)?;
    let h_prime = read_matrix(&a.h_prime)?;
    let patches = read_patch_dir(&a.patches)?;
    check_patch_widths(&patches, h_prime.cols())?;
    let scores = with_pool(cfg.threads, || {
        Ok(score_patches(
            &h_prime,
            &patches,
            cfg.epsilon,
            cfg.sinkhorn_params(),
        )?)
    })?;
    let selected = select_patches(&scores, cfg.tau);
    warn_unconverged(&scores);
    write_scores(&a.out, &scores, &selected)?;
    println!(
        "scored {} patches, {} selected at tau={} -> {}",
        scores.len(),
        selected.len(),
        cfg.tau,
        a.out.display()
    );
    Ok(())
}

pub fn write_scores(path: &Path, scores: &[PatchScore], selected: &[usize]) -> CliResult<()> {
    let mut t = Table::new(&HEADER)?;
    for s in scores {
        t.row([
            s.index.to_string(),
            s.d_ot.to_string(),
            s.d_cos.to_string(),
            s.converged.to_string(),
            selected.contains(&s.index).to_string(),
        ])?;
    }
    t.save(path)
}

/// One warning for all patches whose Sinkhorn solve hit the iteration cap.
pub fn warn_unconverged(scores: &[PatchScore]) {
    let n = scores.iter().filter(|s| !s.converged).count();
    if n > 0 {
        log::warn!(
            "{n} of {} sinkhorn solves stopped at the iteration cap",
            scores.len()
        );
    }
}
