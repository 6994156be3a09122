//! End-to-end harness: a toy decoder over synthetic scenes, plus the
//! analysis experiments built on it.

mod decoder;
mod margin;
mod metrics;
pub mod rng;
mod scene;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ReinforcementConfig;
use crate::error::Result;
use crate::ffn::InjectionMode;
use crate::matrix::Matrix;

pub use decoder::{
    argmax, entropy_ratio, rms_norm, AirInputs, DecodeTrace, SelectionRecord, ToyDecoder,
    ToyDecoderConfig,
};
pub use margin::{margin_experiment, margin_pair, MarginReport, MarginSample, PatchModel};
pub use metrics::{chair_metrics, layer_similarity, Caption, ChairScores};
pub use scene::{SceneConfig, SyntheticScene, MIN_CENTROID_SEPARATION};

/// Generated tokens per pseudo-sentence when scoring captions.
pub const SENTENCE_TOKENS: usize = 4;

/// Serializable record of one harness run. Everything except `timings` is a
/// pure function of the inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub run_id: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub tokens: Vec<usize>,
    pub logits: Vec<Vec<f32>>,
    /// `[step][layer]` last-position hidden state after each block.
    pub final_hidden: Vec<Vec<Vec<f32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefill_hidden: Option<Vec<Matrix>>,
    pub selections: Vec<SelectionRecordOwned>,
    pub injections: Vec<(usize, usize)>,
    /// Per-layer similarity curves keyed by target set.
    pub similarity: BTreeMap<String, Vec<f64>>,
    pub metrics: BTreeMap<String, f64>,
    pub timings: BTreeMap<String, f64>,
}

/// [`SelectionRecord`] in a form that also deserializes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecordOwned {
    pub layer: usize,
    pub retained: Vec<usize>,
    pub selected: Vec<usize>,
    pub fused_rows: usize,
    pub scores: Vec<crate::patch::PatchScore>,
}

impl From<SelectionRecord> for SelectionRecordOwned {
    fn from(r: SelectionRecord) -> Self {
        Self {
            layer: r.layer,
            retained: r.retained,
            selected: r.selected,
            fused_rows: r.fused_rows,
            scores: r.scores,
        }
    }
}

impl ExperimentReport {
    /// The report with wall-clock fields cleared, for equality checks.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: BTreeMap::new(),
            ..self.clone()
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// Splits generated tokens into pseudo-sentences and scores object mentions
/// (ids below `objects`) against the scene's objects.
pub fn caption_from_tokens(tokens: &[usize], objects: usize, truth: &[usize]) -> Caption<usize> {
    Caption {
        ground_truth: truth.iter().copied().collect(),
        sentences: tokens
            .chunks(SENTENCE_TOKENS)
            .map(|c| {
                c.iter()
                    .copied()
                    .filter(|&t| t < objects)
                    .collect::<BTreeSet<_>>()
            })
            .collect(),
    }
}

/// Greedy decoding of `steps` tokens over `scene` with reinforcement set up
/// by `air`, recorded into a report.
pub fn run_toy_decode(
    cfg: &ToyDecoderConfig,
    scene: &SyntheticScene,
    air: &ReinforcementConfig,
    steps: usize,
) -> Result<ExperimentReport> {
    let decoder = ToyDecoder::new(cfg.clone())?;
    run_with_decoder(&decoder, scene, air, steps, false)
}

/// As [`run_toy_decode`] with a prebuilt decoder; `record_prefill` keeps the
/// hidden states of every prefill position.
pub fn run_with_decoder(
    decoder: &ToyDecoder,
    scene: &SyntheticScene,
    air: &ReinforcementConfig,
    steps: usize,
    record_prefill: bool,
) -> Result<ExperimentReport> {
    air.validate()?;
    let started = Instant::now();
    let inputs = AirInputs {
        config: air,
        patches: &scene.patches,
        visual_tokens: &scene.visual_tokens,
    };
    let trace = decoder.decode(&scene.visual_tokens, Some(&inputs), steps, record_prefill)?;
    let elapsed = started.elapsed().as_secs_f64() * 1e3;

    let mut similarity = BTreeMap::new();
    let salient = layer_similarity(&trace.final_hidden, &scene.salient_tokens)?;
    let background = layer_similarity(&trace.final_hidden, &scene.background_tokens)?;

    let caption = caption_from_tokens(
        &trace.tokens,
        decoder.config().objects(),
        &scene.ground_truth_objects(),
    );
    let chair = chair_metrics(std::slice::from_ref(&caption))?;
    let mut metrics = BTreeMap::new();
    metrics.insert(
        "final_salient_similarity".into(),
        *salient.last().unwrap_or(&0.0),
    );
    metrics.insert(
        "final_background_similarity".into(),
        *background.last().unwrap_or(&0.0),
    );
    metrics.insert("chair_i".into(), chair.chair_i);
    metrics.insert("chair_s".into(), chair.chair_s);
    metrics.insert("object_mentions".into(), caption.mentioned().len() as f64);
    metrics.insert(
        "selected_patches".into(),
        trace
            .selections
            .iter()
            .map(|s| s.selected.len())
            .sum::<usize>() as f64,
    );
    metrics.insert(
        "salient_patches_selected".into(),
        trace
            .selections
            .iter()
            .flat_map(|s| &s.selected)
            .filter(|m| scene.salient_patch_indices.contains(m))
            .count() as f64,
    );
    metrics.insert("injected_layer_steps".into(), trace.injections.len() as f64);
    similarity.insert("salient".to_string(), salient);
    similarity.insert("background".to_string(), background);

    let mut timings = BTreeMap::new();
    timings.insert("decode_ms".to_string(), elapsed);

    Ok(ExperimentReport {
        run_id: format!(
            "decode-{}-seed{}",
            mode_name(air.injection_mode),
            decoder.config().seed
        ),
        config: serde_json::json!({
            "air": air,
            "decoder": decoder.config(),
            "steps": steps,
        }),
        seed: decoder.config().seed,
        tokens: trace.tokens,
        logits: trace.logits,
        final_hidden: trace.final_hidden,
        prefill_hidden: trace.prefill_hidden,
        selections: trace.selections.into_iter().map(Into::into).collect(),
        injections: trace.injections,
        similarity,
        metrics,
        timings,
    })
}

fn mode_name(mode: InjectionMode) -> &'static str {
    match mode {
        InjectionMode::AllRows => "all_rows",
        InjectionMode::RetainedRows => "retained_rows",
        InjectionMode::Off => "off",
    }
}

/// Reinforced and unreinforced decodes of the same scene and decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    pub seed: u64,
    pub on: ExperimentReport,
    pub off: ExperimentReport,
}

impl PairedRun {
    /// Final-layer salient similarity with reinforcement minus without.
    pub fn uplift(&self) -> f64 {
        self.on.metric("final_salient_similarity").unwrap_or(0.0)
            - self.off.metric("final_salient_similarity").unwrap_or(0.0)
    }
}

/// Builds the decoder and scene for `seed` and decodes with and without
/// reinforcement. The decoder seed and the scene seed are both `seed`.
pub fn paired_run(
    decoder_cfg: &ToyDecoderConfig,
    scene_cfg: &SceneConfig,
    air: &ReinforcementConfig,
    steps: usize,
    seed: u64,
) -> Result<PairedRun> {
    let decoder = ToyDecoder::new(ToyDecoderConfig {
        seed,
        ..decoder_cfg.clone()
    })?;
    let scene = SyntheticScene::generate(&decoder, scene_cfg, seed)?;
    let on = run_with_decoder(&decoder, &scene, air, steps, false)?;
    let off_cfg = ReinforcementConfig {
        injection_mode: InjectionMode::Off,
        ..air.clone()
    };
    let off = run_with_decoder(&decoder, &scene, &off_cfg, steps, false)?;
    Ok(PairedRun { seed, on, off })
}
