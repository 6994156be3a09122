use air_core::ffn::{air_ffn_forward, FfnWeights};
use air_core::patch::{select_and_fuse, CostSpace, PatchScore};
use air_core::reduction::{effective_top_q, select_top_q};
use serde::Serialize;

use crate::args::InjectArgs;
use crate::error::{CliError, CliResult};
use crate::output::{write_json, write_npy};
use crate::{check_patch_widths, read_matrix, read_patch_dir, resolve_config, with_pool};

#[derive(Serialize)]
struct Selection {
    layer: usize,
    gated: bool,
    retained: Vec<usize>,
    selected: Vec<usize>,
    fused_rows: usize,
    scores: Vec<PatchScore>,
}

pub fn run(a: &InjectArgs) -> CliResult<()> {
    let cfg = resolve_config(&a.config)?;
    if a.layer == 0 || a.layer > a.layers {
        return Err(CliError::Usage(format!(
            "--layer {} is outside 1..={}",
            a.layer, a.layers
        )));
    }
    let hidden = read_matrix(&a.hidden)?;
    let w = FfnWeights::new(read_matrix(&a.w1)?, read_matrix(&a.w2)?, a.ffn_activation)?;
    let patches = read_patch_dir(&a.patches)?;
    check_patch_widths(&patches, hidden.cols())?;

    let (start, end) = a.visual_rows.unwrap_or((0, hidden.rows()));
    if end > hidden.rows() {
        return Err(CliError::Dimension(format!(
            "visual rows {start}:{end} exceed the {} hidden rows",
            hidden.rows()
        )));
    }
    let rows: Vec<usize> = (start..end).collect();
    let visual = hidden.select_rows(&rows)?;
    let reduced = select_top_q(&visual, effective_top_q(cfg.top_q, visual.rows()))?;
    let reference = match cfg.cost_space {
        CostSpace::Hidden => reduced.h_prime.clone(),
        CostSpace::Projector => {
            let path = a.visual_tokens.as_ref().ok_or_else(|| {
                CliError::Usage("--cost-space projector needs --visual-tokens".into())
            })?;
            let z = read_matrix(path)?;
            if z.shape() != visual.shape() {
                return Err(CliError::Dimension(format!(
                    "visual tokens are {:?}, visual hidden rows are {:?}",
                    z.shape(),
                    visual.shape()
                )));
            }
            z.select_rows(&reduced.selected_indices)?
        }
    };
    let inj = cfg.injection(a.layers, a.ffn_activation);
    let (sel, out) = with_pool(cfg.threads, || {
        let sel = select_and_fuse(
            &reference,
            &patches,
            cfg.tau,
            cfg.epsilon,
            cfg.sinkhorn_params(),
        )?;
        let out = air_ffn_forward(&hidden, &rows, &w, &reduced, &sel.fused, &inj, a.layer)?;
        Ok((sel, out))
    })?;

    super::score::warn_unconverged(&sel.scores);
    let npy_path = a.out_dir.join("output.npy");
    let json_path = a.out_dir.join("selection.json");
    write_npy(&npy_path, &out)?;
    write_json(
        &json_path,
        &Selection {
            layer: a.layer,
            gated: inj.gate.contains(a.layer),
            retained: reduced.selected_indices,
            selected: sel.selected.clone(),
            fused_rows: sel.fused.rows(),
            scores: sel.scores,
        },
    )?;
    println!(
        "layer {}: {} patches selected, {} fused rows -> {}",
        a.layer,
        sel.selected.len(),
        sel.fused.rows(),
        npy_path.display()
    );
    Ok(())
}
