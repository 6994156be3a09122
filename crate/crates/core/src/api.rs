//! Entry points for embedding the engine in an external decoding pipeline.
//!
//! These take plain matrices and a key/value config so a foreign-language
//! wrapper only has to convert buffers and mappings. They keep no state.

use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::ReinforcementConfig;
use crate::error::{Error, Result};
use crate::ffn::{air_ffn_forward, FfnWeights};
use crate::matrix::Matrix;
use crate::patch::{select_and_fuse, PatchEmbedding, PatchScore};
use crate::reduction::{select_top_q, ReducedTokens};

/// Keeps the `q` visual tokens farthest from their prototype.
pub fn reduce(h_v: &Matrix, q: usize) -> Result<ReducedTokens> {
    select_top_q(h_v, q)
}

/// Where the injected FFN sits in the host decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSite {
    /// 1-indexed layer of this FFN.
    pub layer: usize,
    /// Decoder depth, used to resolve a default layer gate.
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineOutput {
    pub scores: Vec<PatchScore>,
    pub selected: Vec<usize>,
    /// FFN output for the rows of `h_prime`, with the re-injection term
    /// where the config and layer allow it.
    pub injected_rows: Matrix,
}

/// Scores `patches` against the retained rows, selects by `tau` and runs the
/// FFN with re-injection over those rows. Patch `m` is `patches[m]`.
pub fn score_select_inject(
    h_prime: &Matrix,
    patches: &[Matrix],
    config: &Map<String, Value>,
    ffn: &FfnWeights,
    site: LayerSite,
) -> Result<PipelineOutput> {
    let cfg = ReinforcementConfig::from_map(config)?;
    if site.layer == 0 || site.layer > site.layers {
        return Err(Error::Parameter(format!(
            "layer {} is outside 1..={}",
            site.layer, site.layers
        )));
    }
    let patches: Vec<PatchEmbedding> = patches
        .iter()
        .enumerate()
        .map(|(index, tokens)| PatchEmbedding {
            index,
            tokens: tokens.clone(),
        })
        .collect();
    let sel = select_and_fuse(
        h_prime,
        &patches,
        cfg.tau,
        cfg.epsilon,
        cfg.sinkhorn_params(),
    )?;
    // every row is a retained visual row
    let rows: Vec<usize> = (0..h_prime.rows()).collect();
    let reduced = ReducedTokens {
        selected_indices: rows.clone(),
        h_prime: h_prime.clone(),
        prototype: Vec::new(),
        distances: Vec::new(),
    };
    let inj = cfg.injection(site.layers, ffn.activation);
    let injected_rows =
        air_ffn_forward(h_prime, &rows, ffn, &reduced, &sel.fused, &inj, site.layer)?;
    Ok(PipelineOutput {
        scores: sel.scores,
        selected: sel.selected,
        injected_rows,
    })
}
