use std::path::Path;

use air_core::harness::{
    paired_run, PairedRun, SceneConfig, SyntheticScene, ToyDecoder, ToyDecoderConfig,
};
use air_core::ReinforcementConfig;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{HarnessArgs, SimulateArgs};
use crate::error::{CliError, CliResult};
use crate::output::{write_json, write_npy, Table};
use crate::{resolve_config, with_pool};

pub fn decoder_config(h: &HarnessArgs, seed: u64) -> ToyDecoderConfig {
    ToyDecoderConfig {
        layers: h.layers,
        d_model: h.d_model,
        d_ff: h.d_ff,
        heads: h.heads,
        seq_len: h.seq_len,
        visual_tokens: h.visual_tokens,
        vocab: h.vocab,
        seed,
    }
}

pub fn scene_config(cfg: &ReinforcementConfig) -> SceneConfig {
    SceneConfig {
        patch_count: cfg.patch_count,
        ..Default::default()
    }
}

/// Paired decodes for seeds `cfg.seed .. cfg.seed + seeds`, in seed order.
pub fn paired_runs(
    cfg: &ReinforcementConfig,
    h: &HarnessArgs,
    seeds: u64,
) -> CliResult<Vec<PairedRun>> {
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let dc = decoder_config(h, cfg.seed);
    dc.validate()?;
    let sc = scene_config(cfg);
    (cfg.seed..cfg.seed + seeds)
        .into_par_iter()
        .map(|seed| Ok(paired_run(&dc, &sc, cfg, h.steps, seed)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seeds: u64,
    pub first_seed: u64,
    pub steps: usize,
    pub layer_gate: String,
    pub mean_uplift: f64,
    pub positive_fraction: f64,
    /// Per-layer means over seeds.
    pub salient_on: Vec<f64>,
    pub salient_off: Vec<f64>,
    pub background_on: Vec<f64>,
    pub background_off: Vec<f64>,
    pub chair_i_on: f64,
    pub chair_i_off: f64,
    pub chair_s_on: f64,
    pub chair_s_off: f64,
}

pub fn summarize(cfg: &ReinforcementConfig, h: &HarnessArgs, runs: &[PairedRun]) -> Summary {
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&PairedRun) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let curve = |f: &dyn Fn(&PairedRun) -> &Vec<f64>| {
        let mut out = vec![0.0; h.layers];
        for r in runs {
            for (o, v) in out.iter_mut().zip(f(r)) {
                *o += v / n;
            }
        }
        out
    };
    let gate = cfg
        .layer_gate
        .unwrap_or_else(|| air_core::LayerGate::default_for(h.layers));
    Summary {
        seeds: runs.len() as u64,
        first_seed: cfg.seed,
        steps: h.steps,
        layer_gate: gate.to_string(),
        mean_uplift: mean(&|r| r.uplift()),
        positive_fraction: runs.iter().filter(|r| r.uplift() > 0.0).count() as f64 / n,
        salient_on: curve(&|r| &r.on.similarity["salient"]),
        salient_off: curve(&|r| &r.off.similarity["salient"]),
        background_on: curve(&|r| &r.on.similarity["background"]),
        background_off: curve(&|r| &r.off.similarity["background"]),
        chair_i_on: mean(&|r| r.on.metrics["chair_i"]),
        chair_i_off: mean(&|r| r.off.metrics["chair_i"]),
        chair_s_on: mean(&|r| r.on.metrics["chair_s"]),
        chair_s_off: mean(&|r| r.off.metrics["chair_s"]),
    }
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a ReinforcementConfig,
    decoder: ToyDecoderConfig,
    scene: SceneConfig,
    summary: &'a Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<&'a [PairedRun]>,
}

pub fn run(a: &SimulateArgs) -> CliResult<()> {
    let cfg = resolve_config(&a.config)?;
    let runs = with_pool(cfg.threads, || paired_runs(&cfg, &a.harness, a.seeds))?;
    let summary = summarize(&cfg, &a.harness, &runs);

    let csv_path = a.out_dir.join("simulate.csv");
    write_runs(&csv_path, &runs)?;
    write_json(
        &a.out_dir.join("report.json"),
        &Report {
            config: &cfg,
            decoder: decoder_config(&a.harness, cfg.seed),
            scene: scene_config(&cfg),
            summary: &summary,
            runs: a.full_reports.then_some(runs.as_slice()),
        },
    )?;
    if let Some(dir) = &a.dump_scene {
        dump_scene(dir, &cfg, &a.harness)?;
    }
    println!(
        "{} seeds, gate {}: mean uplift {:.4}, positive in {:.0}% -> {}",
        summary.seeds,
        summary.layer_gate,
        summary.mean_uplift,
        100.0 * summary.positive_fraction,
        csv_path.display()
    );
    Ok(())
}

fn write_runs(path: &Path, runs: &[PairedRun]) -> CliResult<()> {
    let mut t = Table::new(&[
        "seed",
        "uplift",
        "salient_on",
        "salient_off",
        "background_on",
        "background_off",
        "selected_patches",
        "salient_patches_selected",
        "chair_i_on",
        "chair_i_off",
        "chair_s_on",
        "chair_s_off",
        "tokens_on",
        "tokens_off",
        "decode_on_ms",
        "decode_off_ms",
    ])?;
    let tokens = |t: &[usize]| {
        t.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    for r in runs {
        let (on, off) = (&r.on, &r.off);
        t.row([
            r.seed.to_string(),
            r.uplift().to_string(),
            on.metrics["final_salient_similarity"].to_string(),
            off.metrics["final_salient_similarity"].to_string(),
            on.metrics["final_background_similarity"].to_string(),
            off.metrics["final_background_similarity"].to_string(),
            on.metrics["selected_patches"].to_string(),
            on.metrics["salient_patches_selected"].to_string(),
            on.metrics["chair_i"].to_string(),
            off.metrics["chair_i"].to_string(),
            on.metrics["chair_s"].to_string(),
            off.metrics["chair_s"].to_string(),
            tokens(&on.tokens),
            tokens(&off.tokens),
            on.timings["decode_ms"].to_string(),
            off.timings["decode_ms"].to_string(),
        ])?;
    }
    t.save(path)
}

#[derive(Serialize)]
struct SceneIndex {
    seed: u64,
    salient_rows: Vec<usize>,
    salient_patch_indices: Vec<usize>,
    salient_object: usize,
    background_object: usize,
}

/// Writes the scene of the first seed: all visual tokens, both clusters and
/// one file per patch, which `score` and `inject` read back directly.
fn dump_scene(dir: &Path, cfg: &ReinforcementConfig, h: &HarnessArgs) -> CliResult<()> {
    let decoder = ToyDecoder::new(decoder_config(h, cfg.seed))?;
    let scene = SyntheticScene::generate(&decoder, &scene_config(cfg), cfg.seed)?;
    write_npy(&dir.join("visual_tokens.npy"), &scene.visual_tokens)?;
    write_npy(&dir.join("salient_tokens.npy"), &scene.salient_tokens)?;
    write_npy(&dir.join("background_tokens.npy"), &scene.background_tokens)?;
    for p in &scene.patches {
        write_npy(
            &dir.join("patches")
                .join(format!("patch_{:03}.npy", p.index)),
            &p.tokens,
        )?;
    }
    write_json(
        &dir.join("scene.json"),
        &SceneIndex {
            seed: cfg.seed,
            salient_rows: scene.salient_rows,
            salient_patch_indices: scene.salient_patch_indices,
            salient_object: scene.salient_object,
            background_object: scene.background_object,
        },
    )
}
