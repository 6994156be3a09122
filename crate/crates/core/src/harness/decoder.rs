//! A small pre-norm transformer decoder with fixed random weights.
//!
//! Nothing is trained: the decoder exists to carry hidden states through
//! layers so the reinforcement path can be exercised end to end. Each block
//! is `x += attn(rmsnorm(x))·Wo; x += ffn(rmsnorm(x))`, attention is causal,
//! and the unembedding is tied to the token embedding table.

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::config::ReinforcementConfig;
use crate::error::{Error, Result};
use crate::ffn::{air_ffn_forward, ffn_forward, FfnWeights, InjectionConfig, InjectionMode};
use crate::matrix::{dot, Matrix};
use crate::patch::{select_and_fuse, CostSpace, PatchEmbedding, PatchScore};
use crate::reduction::{effective_top_q, select_top_q};

use super::rng::{gaussian_matrix, stream_rng, unit_vector};

/// Scale of the attention and FFN output projections relative to
/// `1/sqrt(fan_in)`; keeps each block a small update on the residual stream.
const ATTN_OUT_SCALE: f64 = 0.005;
const FFN_OUT_SCALE: f64 = 0.005;
const RMS_EPS: f64 = 1e-6;
/// Share of every embedding's squared norm along one common direction.
/// Embedding tables of real language models are anisotropic in this way,
/// and it keeps any two token directions positively correlated.
const EMBED_SHARED: f64 = 0.3;
const MAX_OBJECTS: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyDecoderConfig {
    pub layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    /// Text prompt tokens between the visual tokens and the generated ones.
    pub seq_len: usize,
    /// Visual tokens per scene (`K`).
    pub visual_tokens: usize,
    pub vocab: usize,
    pub seed: u64,
}

impl Default for ToyDecoderConfig {
    fn default() -> Self {
        Self {
            layers: 12,
            d_model: 64,
            d_ff: 256,
            heads: 1,
            seq_len: 8,
            visual_tokens: 576,
            vocab: 64,
            seed: 0,
        }
    }
}

impl ToyDecoderConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("heads", self.heads),
            ("seq_len", self.seq_len),
            ("visual_tokens", self.visual_tokens),
            ("vocab", self.vocab),
        ] {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Parameter(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    /// Token ids `0..objects()` name scene objects.
    pub fn objects(&self) -> usize {
        self.vocab.min(MAX_OBJECTS)
    }
}

#[derive(Clone, Debug)]
struct Block {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
    ffn: FfnWeights,
}

#[derive(Clone, Debug)]
pub struct ToyDecoder {
    cfg: ToyDecoderConfig,
    /// `vocab × d`; rows `0..objects` are the object prototypes.
    embed: Matrix,
    blocks: Vec<Block>,
    prompt: Vec<usize>,
}

/// Everything the reinforcement path needs for one decode.
#[derive(Clone, Debug)]
pub struct AirInputs<'a> {
    pub config: &'a ReinforcementConfig,
    pub patches: &'a [PatchEmbedding],
    /// Projector-space visual tokens, used when the cost space is
    /// [`CostSpace::Projector`].
    pub visual_tokens: &'a Matrix,
}

/// Patch selection made at one gated layer during prefill.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionRecord {
    pub layer: usize,
    pub retained: Vec<usize>,
    pub selected: Vec<usize>,
    pub fused_rows: usize,
    pub scores: Vec<PatchScore>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DecodeTrace {
    pub tokens: Vec<usize>,
    /// Logits of every generation step.
    pub logits: Vec<Vec<f32>>,
    /// `[step][layer]` hidden state of the last position after each block.
    pub final_hidden: Vec<Vec<Vec<f32>>>,
    /// Hidden states of every prefill position after each block, when asked for.
    pub prefill_hidden: Option<Vec<Matrix>>,
    pub selections: Vec<SelectionRecord>,
    /// `(step, layer)` pairs where a non-empty injection was applied.
    pub injections: Vec<(usize, usize)>,
}

struct LayerCache {
    keys: Vec<f32>,
    values: Vec<f32>,
    len: usize,
}

struct LayerAir {
    reduced: crate::reduction::ReducedTokens,
    fused: Matrix,
}

impl ToyDecoder {
    pub fn new(cfg: ToyDecoderConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut rng = stream_rng(cfg.seed, 0);
        let shared = unit_vector(&mut rng, d);
        let (a, b) = (EMBED_SHARED.sqrt(), (1.0 - EMBED_SHARED).sqrt());
        let mut embed = Vec::with_capacity(cfg.vocab * d);
        for _ in 0..cfg.vocab {
            let r = unit_vector(&mut rng, d);
            let v: Vec<f64> = shared.iter().zip(&r).map(|(s, r)| a * s + b * r).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            embed.extend(v.into_iter().map(|x| (x / n) as f32));
        }
        let embed = Matrix::new(cfg.vocab, d, embed)?;

        let in_std = 1.0 / (d as f64).sqrt();
        let blocks = (0..cfg.layers)
            .map(|l| {
                let mut rng = stream_rng(cfg.seed, 1 + l as u64);
                let wq = gaussian_matrix(&mut rng, d, d, in_std);
                let wk = gaussian_matrix(&mut rng, d, d, in_std);
                let wv = gaussian_matrix(&mut rng, d, d, in_std);
                let wo = gaussian_matrix(&mut rng, d, d, ATTN_OUT_SCALE * in_std);
                let w1 = gaussian_matrix(&mut rng, d, cfg.d_ff, in_std);
                let w2 = gaussian_matrix(
                    &mut rng,
                    d,
                    cfg.d_ff,
                    FFN_OUT_SCALE / (cfg.d_ff as f64).sqrt(),
                );
                Ok(Block {
                    wq,
                    wk,
                    wv,
                    wo,
                    ffn: FfnWeights::new(w1, w2, Activation::GeluTanh)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let objects = cfg.objects();
        let mut rng = stream_rng(cfg.seed, 1 + cfg.layers as u64);
        let text = cfg.vocab - objects;
        let prompt = (0..cfg.seq_len)
            .map(|_| {
                if text == 0 {
                    rand::Rng::gen_range(&mut rng, 0..cfg.vocab)
                } else {
                    objects + rand::Rng::gen_range(&mut rng, 0..text)
                }
            })
            .collect();

        Ok(Self {
            cfg,
            embed,
            blocks,
            prompt,
        })
    }

    pub fn config(&self) -> &ToyDecoderConfig {
        &self.cfg
    }

    pub fn ffn_activation(&self) -> Activation {
        Activation::GeluTanh
    }

    /// Prototype direction of object `id`.
    pub fn object_prototype(&self, id: usize) -> &[f32] {
        self.embed.row(id)
    }

    pub fn prompt(&self) -> &[usize] {
        &self.prompt
    }

    /// Greedy decoding of `steps` tokens after the visual tokens and the prompt.
    ///
    /// With `air = None`, or with injection mode `Off`, this is the plain
    /// decoder. Patch selection happens once per gated layer during prefill;
    /// the fused tokens are then reused for every generated position.
    pub fn decode(
        &self,
        visual: &Matrix,
        air: Option<&AirInputs<'_>>,
        steps: usize,
        record_prefill: bool,
    ) -> Result<DecodeTrace> {
        let d = self.cfg.d_model;
        if visual.cols() != d {
            return Err(Error::shape(
                "decode",
                format!(
                    "visual tokens have width {}, decoder expects {d}",
                    visual.cols()
                ),
            ));
        }
        if steps == 0 {
            return Err(Error::Parameter("steps must be at least 1".into()));
        }
        let prompt = self.embed.select_rows(&self.prompt)?;
        let mut x = Matrix::vstack(&[visual, &prompt], d)?;
        let visual_rows: Vec<usize> = (0..visual.rows()).collect();

        let injection = air.map(|a| a.config.injection(self.cfg.layers, self.ffn_activation()));
        let top_q = air.map(|a| effective_top_q(a.config.top_q, visual.rows()));

        let mut caches: Vec<LayerCache> = (0..self.cfg.layers)
            .map(|_| LayerCache {
                keys: Vec::new(),
                values: Vec::new(),
                len: 0,
            })
            .collect();
        let mut layer_air: Vec<Option<LayerAir>> = (0..self.cfg.layers).map(|_| None).collect();
        let mut trace = DecodeTrace {
            prefill_hidden: record_prefill.then(Vec::new),
            ..Default::default()
        };

        for step in 0..steps {
            let mut layer_finals = Vec::with_capacity(self.cfg.layers);
            for (li, block) in self.blocks.iter().enumerate() {
                let layer = li + 1;
                let a = rms_norm(&x)?;
                let attn = self.attention(block, &a, &mut caches[li])?;
                x = x.add(&attn.matmul(&block.wo)?)?;

                let b = rms_norm(&x)?;
                if step == 0 {
                    if let (Some(air), Some(inj), Some(q)) = (air, injection.as_ref(), top_q) {
                        if inj.mode != InjectionMode::Off
                            && inj.gate.contains(layer)
                            && !air.patches.is_empty()
                        {
                            let (rec, state) = select_for_layer(&b, &visual_rows, q, air, layer)?;
                            trace.selections.push(rec);
                            layer_air[li] = Some(state);
                        }
                    }
                }
                let fires = match (air, &layer_air[li]) {
                    (Some(air), Some(state)) if state.fused.rows() > 0 => {
                        self.uncertain(&b, air.config.uncertainty_threshold)?
                    }
                    _ => false,
                };
                let f = match (fires, injection.as_ref(), &layer_air[li]) {
                    (true, Some(inj), Some(state)) => {
                        let rows: &[usize] = if step == 0 { &visual_rows } else { &[] };
                        let inj = effective_for_chunk(inj, step);
                        if inj.mode != InjectionMode::Off {
                            trace.injections.push((step, layer));
                        }
                        air_ffn_forward(
                            &b,
                            rows,
                            &block.ffn,
                            &state.reduced,
                            &state.fused,
                            &inj,
                            layer,
                        )?
                    }
                    _ => ffn_forward(&b, &block.ffn)?,
                };
                x = x.add(&f)?;

                layer_finals.push(x.row(x.rows() - 1).to_vec());
                if step == 0 {
                    if let Some(rec) = trace.prefill_hidden.as_mut() {
                        rec.push(x.clone());
                    }
                }
            }
            let logits = self.logits(x.row(x.rows() - 1))?;
            let next = argmax(&logits);
            trace.tokens.push(next);
            trace.logits.push(logits);
            trace.final_hidden.push(layer_finals);
            x = self.embed.select_rows(&[next])?;
        }
        Ok(trace)
    }

    /// Causal attention of the rows of `a` against the cache plus `a` itself.
    fn attention(&self, block: &Block, a: &Matrix, cache: &mut LayerCache) -> Result<Matrix> {
        let d = self.cfg.d_model;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let q = a.matmul(&block.wq)?;
        cache.keys.extend_from_slice(a.matmul(&block.wk)?.data());
        cache.values.extend_from_slice(a.matmul(&block.wv)?.data());
        let offset = cache.len;
        cache.len += a.rows();

        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0f32; a.rows() * d];
        let mut scores = Vec::with_capacity(cache.len);
        let mut acc = vec![0.0f64; dh];
        for i in 0..a.rows() {
            let visible = offset + i + 1;
            for h in 0..heads {
                let qi = &q.row(i)[h * dh..(h + 1) * dh];
                scores.clear();
                scores.extend(
                    (0..visible).map(|j| {
                        dot(qi, &cache.keys[j * d + h * dh..j * d + (h + 1) * dh]) * scale
                    }),
                );
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                acc.iter_mut().for_each(|v| *v = 0.0);
                for (j, w) in scores.iter().enumerate() {
                    let vj = &cache.values[j * d + h * dh..j * d + (h + 1) * dh];
                    for (s, &v) in acc.iter_mut().zip(vj) {
                        *s += w * f64::from(v);
                    }
                }
                for (o, s) in out[i * d + h * dh..i * d + (h + 1) * dh]
                    .iter_mut()
                    .zip(&acc)
                {
                    *o = (s / z) as f32;
                }
            }
        }
        Matrix::new(a.rows(), d, out)
    }

    /// Tied-unembedding logits for one hidden state.
    pub fn logits(&self, hidden: &[f32]) -> Result<Vec<f32>> {
        let h = rms_norm(&Matrix::new(1, hidden.len(), hidden.to_vec())?)?;
        Ok(h.matmul_transposed(&self.embed)?.into_data())
    }

    /// Logit-lens uncertainty gate on the last row of `b`.
    fn uncertain(&self, b: &Matrix, threshold: Option<f64>) -> Result<bool> {
        let Some(t) = threshold else {
            return Ok(true);
        };
        let logits = self
            .embed
            .matmul_transposed(&b.select_rows(&[b.rows() - 1])?)?;
        Ok(entropy_ratio(logits.data()) > t)
    }
}

/// Decode steps only see generated positions, which are never retained
/// visual rows.
fn effective_for_chunk(inj: &InjectionConfig, step: usize) -> InjectionConfig {
    if step > 0 && inj.mode == InjectionMode::RetainedRows {
        InjectionConfig {
            mode: InjectionMode::Off,
            ..*inj
        }
    } else {
        *inj
    }
}

fn select_for_layer(
    b: &Matrix,
    visual_rows: &[usize],
    top_q: usize,
    air: &AirInputs<'_>,
    layer: usize,
) -> Result<(SelectionRecord, LayerAir)> {
    let cfg = air.config;
    let vis = b.select_rows(visual_rows)?;
    let reduced = select_top_q(&vis, top_q)?;
    let reference = match cfg.cost_space {
        CostSpace::Hidden => reduced.h_prime.clone(),
        CostSpace::Projector => air.visual_tokens.select_rows(&reduced.selected_indices)?,
    };
    let sel = select_and_fuse(
        &reference,
        air.patches,
        cfg.tau,
        cfg.epsilon,
        cfg.sinkhorn_params(),
    )?;
    let rec = SelectionRecord {
        layer,
        retained: reduced.selected_indices.clone(),
        selected: sel.selected.clone(),
        fused_rows: sel.fused.rows(),
        scores: sel.scores,
    };
    Ok((
        rec,
        LayerAir {
            reduced,
            fused: sel.fused,
        },
    ))
}

/// `x / rms(x)` per row.
pub fn rms_norm(x: &Matrix) -> Result<Matrix> {
    let d = x.cols() as f64;
    let mut out = Vec::with_capacity(x.data().len());
    for r in x.row_iter() {
        let rms = (dot(r, r) / d + RMS_EPS).sqrt();
        out.extend(r.iter().map(|&v| (f64::from(v) / rms) as f32));
    }
    Matrix::new(x.rows(), x.cols(), out)
}

/// Shannon entropy of `softmax(logits)` divided by `ln(len)`.
pub fn entropy_ratio(logits: &[f32]) -> f64 {
    if logits.len() < 2 {
        return 0.0;
    }
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
    let e: Vec<f64> = logits.iter().map(|&v| (f64::from(v) - max).exp()).collect();
    let z: f64 = e.iter().sum();
    let h: f64 = e
        .iter()
        .map(|x| x / z)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    h / (logits.len() as f64).ln()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
