//! Wall-time of the plain FFN against the reinforced one on desk-scale
//! inputs, plus the patch-scoring cost that selection adds per layer.

use std::time::Instant;

use air_core::ffn::{air_ffn_forward, ffn_forward, FfnWeights, InjectionMode};
use air_core::harness::rng::{gaussian_matrix, stream_rng};
use air_core::harness::{rms_norm, SceneConfig, SyntheticScene, ToyDecoder};
use air_core::patch::{score_patch, select_and_fuse, PatchEmbedding};
use air_core::reduction::{effective_top_q, select_top_q};
use air_core::{Activation, Matrix, ReinforcementConfig};
use serde::Serialize;

use crate::args::BenchArgs;
use crate::commands::simulate::{decoder_config, scene_config};
use crate::error::{CliError, CliResult};
use crate::output::write_json;
use crate::{resolve_config, with_pool};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl Timing {
    pub fn from_samples(mut ms: Vec<f64>) -> Self {
        ms.sort_by(f64::total_cmp);
        let pick = |p: f64| ms[((p * ms.len() as f64).ceil() as usize).clamp(1, ms.len()) - 1];
        Self {
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p50_ms: pick(0.5),
            p95_ms: pick(0.95),
        }
    }
}

fn time(
    warmup: usize,
    iterations: usize,
    mut f: impl FnMut() -> CliResult<()>,
) -> CliResult<Timing> {
    for _ in 0..warmup {
        f()?;
    }
    let mut ms = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        f()?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(Timing::from_samples(ms))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub config: ReinforcementConfig,
    pub rows: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub layer: usize,
    pub patches: usize,
    pub selected: Vec<usize>,
    pub fused_rows: usize,
    pub iterations: usize,
    pub base_forward: Timing,
    pub air_forward: Timing,
    pub off_forward: Timing,
    /// Reduction, scoring and fusion for one layer.
    pub selection: Timing,
    /// Sequential Sinkhorn scoring of all patches, then of twice as many.
    pub sinkhorn_total: Timing,
    pub sinkhorn_total_doubled: Timing,
    pub sinkhorn_per_patch_ms: f64,
    /// `air_forward / base_forward` at the median.
    pub overhead_ratio: f64,
    pub off_ratio: f64,
    pub sinkhorn_doubling_ratio: f64,
    /// Forward plus one selection against the plain forward, at the median.
    pub with_selection_ratio: f64,
}

fn scene(
    a: &BenchArgs,
    cfg: &ReinforcementConfig,
    patch_count: usize,
) -> CliResult<SyntheticScene> {
    let decoder = ToyDecoder::new(decoder_config(&a.harness, cfg.seed))?;
    let sc = SceneConfig {
        patch_count,
        ..scene_config(cfg)
    };
    Ok(SyntheticScene::generate(&decoder, &sc, cfg.seed)?)
}

pub fn bench(a: &BenchArgs, cfg: &ReinforcementConfig) -> CliResult<BenchReport> {
    if a.iterations == 0 {
        return Err(CliError::Usage("--iterations must be at least 1".into()));
    }
    let h = &a.harness;
    let scene1 = scene(a, cfg, cfg.patch_count)?;
    let scene2 = scene(a, cfg, 2 * cfg.patch_count)?;

    let mut rng = stream_rng(cfg.seed, 0xbe7c);
    let prompt = gaussian_matrix(&mut rng, h.seq_len, h.d_model, 1.0);
    let hidden = rms_norm(&Matrix::vstack(
        &[&scene1.visual_tokens, &prompt],
        h.d_model,
    )?)?;
    let w = FfnWeights::new(
        gaussian_matrix(&mut rng, h.d_model, h.d_ff, 1.0 / (h.d_model as f64).sqrt()),
        gaussian_matrix(&mut rng, h.d_model, h.d_ff, 1.0 / (h.d_ff as f64).sqrt()),
        Activation::GeluTanh,
    )?;
    let rows: Vec<usize> = (0..scene1.visual_tokens.rows()).collect();
    let q = effective_top_q(cfg.top_q, rows.len());
    let inj = cfg.injection(h.layers, w.activation);
    let off = air_core::InjectionConfig {
        mode: InjectionMode::Off,
        ..inj
    };
    let layer = inj.gate.end();

    let select = || -> CliResult<_> {
        let visual = hidden.select_rows(&rows)?;
        let reduced = select_top_q(&visual, q)?;
        let sel = select_and_fuse(
            &reduced.h_prime,
            &scene1.patches,
            cfg.tau,
            cfg.epsilon,
            cfg.sinkhorn_params(),
        )?;
        Ok((reduced, sel))
    };
    let (reduced, sel) = select()?;
    let (it, wu) = (a.iterations, a.warmup);

    let base_forward = time(wu, it, || {
        ffn_forward(&hidden, &w).map(drop).map_err(Into::into)
    })?;
    let air_forward = time(wu, it, || {
        air_ffn_forward(&hidden, &rows, &w, &reduced, &sel.fused, &inj, layer)
            .map(drop)
            .map_err(Into::into)
    })?;
    let off_forward = time(wu, it, || {
        air_ffn_forward(&hidden, &rows, &w, &reduced, &sel.fused, &off, layer)
            .map(drop)
            .map_err(Into::into)
    })?;
    let selection = time(wu, it, || select().map(drop))?;
    let score_all = |patches: &[PatchEmbedding]| -> CliResult<()> {
        for p in patches {
            score_patch(&reduced.h_prime, p, cfg.epsilon, cfg.sinkhorn_params())?;
        }
        Ok(())
    };
    let sinkhorn_total = time(wu, it, || score_all(&scene1.patches))?;
    let sinkhorn_total_doubled = time(wu, it, || score_all(&scene2.patches))?;

    Ok(BenchReport {
        config: cfg.clone(),
        rows: hidden.rows(),
        d_model: h.d_model,
        d_ff: h.d_ff,
        layer,
        patches: scene1.patches.len(),
        selected: sel.selected.clone(),
        fused_rows: sel.fused.rows(),
        iterations: it,
        sinkhorn_per_patch_ms: sinkhorn_total.mean_ms / scene1.patches.len().max(1) as f64,
        overhead_ratio: air_forward.p50_ms / base_forward.p50_ms,
        off_ratio: off_forward.p50_ms / base_forward.p50_ms,
        sinkhorn_doubling_ratio: sinkhorn_total_doubled.p50_ms / sinkhorn_total.p50_ms,
        with_selection_ratio: (air_forward.p50_ms + selection.p50_ms) / base_forward.p50_ms,
        base_forward,
        air_forward,
        off_forward,
        selection,
        sinkhorn_total,
        sinkhorn_total_doubled,
    })
}

pub fn run(a: &BenchArgs) -> CliResult<()> {
    let cfg = resolve_config(&a.config)?;
    let report = with_pool(cfg.threads, || bench(a, &cfg))?;
    write_json(&a.out, &report)?;
    println!(
        "base {:.3} ms, air {:.3} ms (ratio {:.3}), sinkhorn {:.3} ms/patch -> {}",
        report.base_forward.p50_ms,
        report.air_forward.p50_ms,
        report.overhead_ratio,
        report.sinkhorn_per_patch_ms,
        a.out.display()
    );
    Ok(())
}
