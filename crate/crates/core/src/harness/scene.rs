//! Synthetic multimodal scenes with a planted salient object.
//!
//! A scene is a raster of `K` visual tokens: a contiguous block drawn tightly
//! around one object prototype (the salient object) inside a looser
//! background cluster around another. Patches are contiguous token windows
//! with small Gaussian jitter; a fixed share of them is cut from the salient
//! block.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::patch::{PatchEmbedding, DEFAULT_PATCH_COUNT};

use super::decoder::ToyDecoder;
use super::rng::{gaussian, stream_rng};

/// Minimum `1 − cos` between the salient and background centroids.
pub const MIN_CENTROID_SEPARATION: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub salient_tokens: usize,
    /// Per-coordinate standard deviation around the salient prototype.
    pub salient_spread: f64,
    pub background_spread: f64,
    pub patch_count: usize,
    pub patch_size: usize,
    /// Share of patches cut from the salient block, rounded up.
    pub salient_patch_fraction: f64,
    pub jitter: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            salient_tokens: 120,
            salient_spread: 0.02,
            background_spread: 0.05,
            patch_count: DEFAULT_PATCH_COUNT,
            patch_size: 16,
            salient_patch_fraction: 1.0 / 3.0,
            jitter: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyntheticScene {
    /// All visual tokens in raster order.
    pub visual_tokens: Matrix,
    /// Rows of `visual_tokens` that belong to the salient object.
    pub salient_rows: Vec<usize>,
    pub salient_tokens: Matrix,
    pub background_tokens: Matrix,
    pub patches: Vec<PatchEmbedding>,
    pub salient_patch_indices: Vec<usize>,
    /// Object id of every visual token.
    pub object_labels: Vec<usize>,
    pub salient_object: usize,
    pub background_object: usize,
}

impl SyntheticScene {
    /// Object ids present in the scene.
    pub fn ground_truth_objects(&self) -> Vec<usize> {
        let mut v = vec![self.salient_object, self.background_object];
        v.sort_unstable();
        v
    }

    /// Draws a scene for `decoder`, whose object prototypes anchor the two
    /// clusters.
    pub fn generate(decoder: &ToyDecoder, cfg: &SceneConfig, seed: u64) -> Result<Self> {
        let dc = decoder.config();
        let (k, d) = (dc.visual_tokens, dc.d_model);
        let n = cfg.patch_size;
        if dc.objects() < 2 {
            return Err(Error::Parameter(
                "scenes need at least two object tokens".into(),
            ));
        }
        if cfg.salient_tokens == 0 || cfg.salient_tokens >= k {
            return Err(Error::Parameter(format!(
                "salient_tokens must lie in 1..{k}, got {}",
                cfg.salient_tokens
            )));
        }
        if n == 0 || n > cfg.salient_tokens {
            return Err(Error::Parameter(format!(
                "patch_size must lie in 1..={}, got {n}",
                cfg.salient_tokens
            )));
        }
        let mut rng = stream_rng(seed, 0x5ce7e);

        let (salient_object, background_object) = pick_objects(decoder, &mut rng)?;
        let s_centroid = decoder.object_prototype(salient_object).to_vec();
        let b_centroid = decoder.object_prototype(background_object).to_vec();

        let start = rng.gen_range(0..=k - cfg.salient_tokens);
        let salient_rows: Vec<usize> = (start..start + cfg.salient_tokens).collect();
        let mut data = Vec::with_capacity(k * d);
        let mut labels = Vec::with_capacity(k);
        for i in 0..k {
            let salient = (start..start + cfg.salient_tokens).contains(&i);
            let (c, spread, label) = if salient {
                (&s_centroid, cfg.salient_spread, salient_object)
            } else {
                (&b_centroid, cfg.background_spread, background_object)
            };
            data.extend(
                c.iter()
                    .map(|&v| (f64::from(v) + spread * gaussian(&mut rng)) as f32),
            );
            labels.push(label);
        }
        let visual_tokens = Matrix::new(k, d, data)?;
        let background_rows: Vec<usize> = (0..k).filter(|i| !salient_rows.contains(i)).collect();

        // window starts fully inside the salient block, or fully outside it
        let salient_starts: Vec<usize> = (start..=start + cfg.salient_tokens - n).collect();
        let background_starts: Vec<usize> = (0..=k - n)
            .filter(|&s| s + n <= start || s >= start + cfg.salient_tokens)
            .collect();
        let n_salient = ((cfg.patch_count as f64 * cfg.salient_patch_fraction).ceil() as usize)
            .min(cfg.patch_count);
        if background_starts.is_empty() && n_salient < cfg.patch_count {
            return Err(Error::Parameter(
                "no room for background patches outside the salient block".into(),
            ));
        }
        let mut kinds: Vec<bool> = (0..cfg.patch_count).map(|m| m < n_salient).collect();
        kinds.shuffle(&mut rng);

        let mut patches = Vec::with_capacity(cfg.patch_count);
        let mut salient_patch_indices = Vec::new();
        for (m, &salient) in kinds.iter().enumerate() {
            let pool = if salient {
                &salient_starts
            } else {
                &background_starts
            };
            let s = pool[rng.gen_range(0..pool.len())];
            let rows = visual_tokens.select_rows(&(s..s + n).collect::<Vec<_>>())?;
            let jittered = rows
                .data()
                .iter()
                .map(|&v| (f64::from(v) + cfg.jitter * gaussian(&mut rng)) as f32)
                .collect();
            patches.push(PatchEmbedding {
                index: m,
                tokens: Matrix::new(n, d, jittered)?,
            });
            if salient {
                salient_patch_indices.push(m);
            }
        }

        Ok(Self {
            salient_tokens: visual_tokens.select_rows(&salient_rows)?,
            background_tokens: visual_tokens.select_rows(&background_rows)?,
            visual_tokens,
            salient_rows,
            patches,
            salient_patch_indices,
            object_labels: labels,
            salient_object,
            background_object,
        })
    }
}

fn pick_objects(decoder: &ToyDecoder, rng: &mut impl Rng) -> Result<(usize, usize)> {
    let objects = decoder.config().objects();
    let mut pairs: Vec<(usize, usize)> = (0..objects)
        .flat_map(|a| (0..objects).filter(move |&b| b != a).map(move |b| (a, b)))
        .filter(|&(a, b)| {
            let (pa, pb) = (decoder.object_prototype(a), decoder.object_prototype(b));
            let cos = dot(pa, pb) / (dot(pa, pa) * dot(pb, pb)).sqrt();
            1.0 - cos >= MIN_CENTROID_SEPARATION
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::Domain(
            "no pair of object prototypes is separated enough".into(),
        ));
    }
    pairs.sort_unstable();
    Ok(pairs[rng.gen_range(0..pairs.len())])
}
