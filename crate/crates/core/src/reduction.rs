//! Prototype-based visual token reduction.
//!
//! Tokens far from the mean of all visual tokens carry the cues the mean does
//! not summarize; the `Top_Q` farthest are kept, in their original order.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Default number of retained tokens.
pub const DEFAULT_TOP_Q: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReducedTokens {
    /// Original row indices of the retained tokens, strictly ascending.
    pub selected_indices: Vec<usize>,
    /// The retained rows, `selected_indices.len() × d`.
    pub h_prime: Matrix,
    pub prototype: Vec<f64>,
    /// L2 distance of every input row to the prototype.
    pub distances: Vec<f64>,
}

impl ReducedTokens {
    pub fn len(&self) -> usize {
        self.selected_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected_indices.is_empty()
    }
}

/// Mean of the rows.
pub fn compute_prototype(tokens: &Matrix) -> Result<Vec<f64>> {
    let sums = column_sums(tokens)?;
    let k = tokens.rows() as f64;
    Ok(sums.into_iter().map(|s| s / k).collect())
}

fn column_sums(tokens: &Matrix) -> Result<Vec<f64>> {
    if tokens.rows() == 0 {
        return Err(Error::Empty("prototype of zero tokens"));
    }
    let mut sums = vec![0.0f64; tokens.cols()];
    for r in tokens.row_iter() {
        for (s, &v) in sums.iter_mut().zip(r) {
            *s += f64::from(v);
        }
    }
    Ok(sums)
}

/// Clamps a requested `Top_Q` to the number of available tokens.
pub fn effective_top_q(requested: usize, available: usize) -> usize {
    if requested > available {
        log::warn!("top_q {requested} exceeds {available} visual tokens; keeping all of them");
        available
    } else {
        requested
    }
}

/// Keeps the `q` rows farthest from the prototype.
///
/// Ties go to the smaller original index. Ranking uses `‖K·h_k − Σ_j h_j‖`,
/// which equals `K · d(h_k, h_p)` but avoids the division, so adding the same
/// vector to every row cannot reorder tokens through rounding when the shifted
/// values are exactly representable.
pub fn select_top_q(tokens: &Matrix, q: usize) -> Result<ReducedTokens> {
    let k = tokens.rows();
    if q == 0 || q > k {
        return Err(Error::Parameter(format!(
            "top_q must lie in 1..={k}, got {q}"
        )));
    }
    let sums = column_sums(tokens)?;
    let kf = k as f64;
    let scaled: Vec<f64> = tokens
        .row_iter()
        .map(|r| {
            r.iter()
                .zip(&sums)
                .map(|(&v, s)| {
                    let d = kf * f64::from(v) - s;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| match scaled[j].total_cmp(&scaled[i]) {
        Ordering::Equal => i.cmp(&j),
        o => o,
    });
    let mut selected_indices = order[..q].to_vec();
    selected_indices.sort_unstable();

    Ok(ReducedTokens {
        h_prime: tokens.select_rows(&selected_indices)?,
        selected_indices,
        prototype: sums.iter().map(|s| s / kf).collect(),
        distances: scaled.into_iter().map(|d| d / kf).collect(),
    })
}
