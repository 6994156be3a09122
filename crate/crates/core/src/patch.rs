//! OT alignment scores for image patches, τ-selection and fusion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{cosine_cost, Matrix};
use crate::ot::{cosine_baseline, ot_distance, sinkhorn, uniform, Epsilon, SinkhornParams};

/// Default selection threshold on `d_ot`.
pub const DEFAULT_TAU: f64 = 0.06;
/// Default number of candidate patches.
pub const DEFAULT_PATCH_COUNT: usize = 12;

/// Token embeddings of one image patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchEmbedding {
    pub index: usize,
    pub tokens: Matrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchScore {
    pub index: usize,
    pub d_ot: f64,
    pub d_cos: f64,
    pub converged: bool,
}

/// Which rows the patch costs are measured against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSpace {
    /// The retained hidden-state rows.
    #[default]
    Hidden,
    /// The projector-space visual tokens at the retained positions.
    Projector,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionResult {
    pub tau: f64,
    /// Indices `m` with `d_ot(m) ≤ τ`, ascending.
    pub selected: Vec<usize>,
    /// Selected patches' rows stacked in ascending `m`.
    pub fused: Matrix,
    pub scores: Vec<PatchScore>,
}

/// Scores one patch: cosine costs against `reference`, a uniform-marginal
/// Sinkhorn plan, its transport cost and the uniform-plan baseline.
pub fn score_patch(
    reference: &Matrix,
    patch: &PatchEmbedding,
    epsilon: Epsilon,
    params: SinkhornParams,
) -> Result<PatchScore> {
    if reference.rows() == 0 {
        return Err(Error::Empty("reference rows for patch scoring"));
    }
    if patch.tokens.rows() == 0 {
        return Err(Error::Empty("patch without tokens"));
    }
    let cost = cosine_cost(reference, &patch.tokens)?;
    let d_cos = cosine_baseline(&cost)?;
    let eps = epsilon.resolve(d_cos);
    let plan = sinkhorn(
        &cost,
        &uniform(cost.rows()),
        &uniform(cost.cols()),
        eps,
        params,
    )?;
    if !plan.converged {
        log::debug!(
            "sinkhorn for patch {} stopped after {} iterations with marginal error {:.3e}",
            patch.index,
            plan.iterations,
            plan.marginal_error
        );
    }
    Ok(PatchScore {
        index: patch.index,
        d_ot: ot_distance(&plan, &cost)?,
        d_cos,
        converged: plan.converged,
    })
}

/// Scores every patch, fanning out over the current rayon pool. The output
/// order follows `patches` and does not depend on the pool size.
pub fn score_patches(
    reference: &Matrix,
    patches: &[PatchEmbedding],
    epsilon: Epsilon,
    params: SinkhornParams,
) -> Result<Vec<PatchScore>> {
    patches
        .par_iter()
        .map(|p| score_patch(reference, p, epsilon, params))
        .collect()
}

/// `{ m : d_ot(m) ≤ τ }` in ascending order.
pub fn select_patches(scores: &[PatchScore], tau: f64) -> Vec<usize> {
    let mut sel: Vec<usize> = scores
        .iter()
        .filter(|s| s.d_ot <= tau)
        .map(|s| s.index)
        .collect();
    sel.sort_unstable();
    sel.dedup();
    sel
}

/// Stacks the token rows of the selected patches in ascending patch index.
pub fn fuse_patches(patches: &[PatchEmbedding], selected: &[usize]) -> Result<Matrix> {
    let cols = patches.first().map_or(0, |p| p.tokens.cols());
    let mut order = selected.to_vec();
    order.sort_unstable();
    order.dedup();
    let parts = order
        .iter()
        .map(|&m| {
            patches
                .iter()
                .find(|p| p.index == m)
                .map(|p| &p.tokens)
                .ok_or(Error::IndexOutOfRange {
                    what: "patch set",
                    index: m,
                    len: patches.len(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::vstack(&parts, cols)
}

/// Scores, thresholds and fuses in one pass.
pub fn select_and_fuse(
    reference: &Matrix,
    patches: &[PatchEmbedding],
    tau: f64,
    epsilon: Epsilon,
    params: SinkhornParams,
) -> Result<SelectionResult> {
    let scores = score_patches(reference, patches, epsilon, params)?;
    let selected = select_patches(&scores, tau);
    let fused = if patches.is_empty() {
        Matrix::zeros(0, reference.cols())
    } else {
        fuse_patches(patches, &selected)?
    };
    Ok(SelectionResult {
        tau,
        selected,
        fused,
        scores,
    })
}
