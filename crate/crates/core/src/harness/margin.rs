//! Margin sensitivity of the OT score versus the uniform-plan baseline.
//!
//! Each trial draws a reference token set and two patches, scores both, and
//! compares `|Δd_ot|` with `|Δd_cos|`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ot::{Epsilon, SinkhornParams};
use crate::patch::{score_patch, PatchEmbedding};

use super::rng::{gaussian, gaussian_matrix, stream_rng};

/// How patch tokens relate to the reference tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchModel {
    /// Each patch token is `α·h + sqrt(1 − α²)·g` for a reference row `h`
    /// and fresh Gaussian `g`, with one `α ~ U(0, 1)` per patch: crops of the
    /// same image that keep more or less of its content.
    #[default]
    NoisyView,
    /// Patch tokens are i.i.d. Gaussian, unrelated to the reference.
    Independent,
}

impl std::str::FromStr for PatchModel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "noisy_view" => Ok(Self::NoisyView),
            "independent" => Ok(Self::Independent),
            _ => Err(format!(
                "unknown patch model `{s}` (expected noisy_view or independent)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginSample {
    pub trial: usize,
    pub d_ot_1: f64,
    pub d_ot_2: f64,
    pub d_cos_1: f64,
    pub d_cos_2: f64,
    pub margin_ot: f64,
    pub margin_cos: f64,
    /// `margin_ot − margin_cos`
    pub differential: f64,
    pub amplified: bool,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub trials: usize,
    pub q: usize,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub patch_model: PatchModel,
    /// Share of trials with `|Δd_ot| ≥ |Δd_cos|`.
    pub amplified_fraction: f64,
    /// Patches scored with `d_ot > d_cos + 1e-9`.
    pub dominance_violations: usize,
    pub unconverged: usize,
    pub samples: Vec<MarginSample>,
}

/// Scores two patches against `reference` and compares their margins.
pub fn margin_pair(
    reference: &Matrix,
    first: &Matrix,
    second: &Matrix,
    epsilon: Epsilon,
    params: SinkhornParams,
) -> Result<MarginSample> {
    let score = |tokens: &Matrix, index| {
        score_patch(
            reference,
            &PatchEmbedding {
                index,
                tokens: tokens.clone(),
            },
            epsilon,
            params,
        )
    };
    let (s1, s2) = (score(first, 0)?, score(second, 1)?);
    let margin_ot = (s1.d_ot - s2.d_ot).abs();
    let margin_cos = (s1.d_cos - s2.d_cos).abs();
    Ok(MarginSample {
        trial: 0,
        d_ot_1: s1.d_ot,
        d_ot_2: s2.d_ot,
        d_cos_1: s1.d_cos,
        d_cos_2: s2.d_cos,
        margin_ot,
        margin_cos,
        differential: margin_ot - margin_cos,
        amplified: margin_ot >= margin_cos,
        converged: s1.converged && s2.converged,
    })
}

fn draw_patch(
    rng: &mut rand_chacha::ChaCha8Rng,
    reference: &Matrix,
    n: usize,
    model: PatchModel,
) -> Result<Matrix> {
    let d = reference.cols();
    match model {
        PatchModel::Independent => Ok(gaussian_matrix(rng, n, d, 1.0)),
        PatchModel::NoisyView => {
            use rand::Rng;
            let alpha: f64 = rng.gen_range(0.0..1.0);
            let noise = (1.0 - alpha * alpha).sqrt();
            let q = reference.rows();
            let mut rows: Vec<usize> = (0..q).collect();
            rand::seq::SliceRandom::shuffle(rows.as_mut_slice(), rng);
            let mut data = Vec::with_capacity(n * d);
            for i in 0..n {
                let src = match rows.get(i) {
                    Some(&r) => r,
                    None => rng.gen_range(0..q),
                };
                for &h in reference.row(src) {
                    data.push((alpha * f64::from(h) + noise * gaussian(rng)) as f32);
                }
            }
            Matrix::new(n, d, data)
        }
    }
}

/// Runs `trials` independent margin comparisons. Trial `t` draws from its
/// own random stream, so the report is identical for any thread count.
#[allow(clippy::too_many_arguments)]
pub fn margin_experiment(
    trials: usize,
    q: usize,
    n: usize,
    d: usize,
    epsilon: Epsilon,
    seed: u64,
    model: PatchModel,
    params: SinkhornParams,
) -> Result<MarginReport> {
    if trials == 0 || q == 0 || n == 0 || d == 0 {
        return Err(Error::Parameter(
            "trials, q, n and d must all be at least 1".into(),
        ));
    }
    epsilon.validate()?;
    let samples = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let reference = gaussian_matrix(&mut rng, q, d, 1.0);
            let p1 = draw_patch(&mut rng, &reference, n, model)?;
            let p2 = draw_patch(&mut rng, &reference, n, model)?;
            let mut s = margin_pair(&reference, &p1, &p2, epsilon, params)?;
            s.trial = t;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;

    let amplified = samples.iter().filter(|s| s.amplified).count();
    let dominance_violations = samples
        .iter()
        .map(|s| {
            usize::from(s.d_ot_1 > s.d_cos_1 + 1e-9) + usize::from(s.d_ot_2 > s.d_cos_2 + 1e-9)
        })
        .sum();
    Ok(MarginReport {
        trials,
        q,
        n,
        d,
        seed,
        patch_model: model,
        amplified_fraction: amplified as f64 / trials as f64,
        dominance_violations,
        unconverged: samples.iter().filter(|s| !s.converged).count(),
        samples,
    })
}
