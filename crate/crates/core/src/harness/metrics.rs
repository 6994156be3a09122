use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::reduction::compute_prototype;

/// Mean cosine similarity, per layer, between the recorded last-position
/// hidden states (`[step][layer]`) and the centroid of `targets`.
pub fn layer_similarity(final_hidden: &[Vec<Vec<f32>>], targets: &Matrix) -> Result<Vec<f64>> {
    let layers = final_hidden
        .first()
        .map(Vec::len)
        .filter(|&l| l > 0)
        .ok_or(Error::Empty("no recorded hidden states"))?;
    let centroid: Vec<f32> = compute_prototype(targets)?
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let cn = dot(&centroid, &centroid).sqrt();
    let mut out = vec![0.0; layers];
    for step in final_hidden {
        if step.len() != layers {
            return Err(Error::shape(
                "layer_similarity",
                format!("step records {} layers, expected {layers}", step.len()),
            ));
        }
        for (o, h) in out.iter_mut().zip(step) {
            if h.len() != centroid.len() {
                return Err(Error::shape(
                    "layer_similarity",
                    format!(
                        "hidden width {} vs target width {}",
                        h.len(),
                        centroid.len()
                    ),
                ));
            }
            let hn = dot(h, h).sqrt();
            *o += if hn == 0.0 || cn == 0.0 {
                0.0
            } else {
                dot(h, &centroid) / (hn * cn)
            };
        }
    }
    let steps = final_hidden.len() as f64;
    Ok(out.into_iter().map(|s| s / steps).collect())
}

/// One generated caption: the ground-truth objects of its image and the
/// objects mentioned in each sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption<T: Ord> {
    pub ground_truth: BTreeSet<T>,
    pub sentences: Vec<BTreeSet<T>>,
}

impl<T: Ord + Clone> Caption<T> {
    pub fn mentioned(&self) -> BTreeSet<T> {
        self.sentences.iter().flatten().cloned().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChairScores {
    /// Hallucinated mentions over all mentions.
    pub chair_i: f64,
    /// Sentences with a hallucinated mention over all sentences.
    pub chair_s: f64,
    /// No object was mentioned anywhere; `chair_i` was set to 0.
    pub no_mentions: bool,
    /// No sentence was given; `chair_s` was set to 0.
    pub no_sentences: bool,
}

/// Instance- and sentence-level hallucination ratios. A mention is
/// hallucinated when it is not among the caption's ground-truth objects.
pub fn chair_metrics<T: Ord + Clone>(captions: &[Caption<T>]) -> Result<ChairScores> {
    if captions.is_empty() {
        return Err(Error::Empty("chair metrics need at least one caption"));
    }
    let (mut mentioned, mut hallucinated) = (0usize, 0usize);
    let (mut sentences, mut bad_sentences) = (0usize, 0usize);
    for c in captions {
        let m = c.mentioned();
        mentioned += m.len();
        hallucinated += m.difference(&c.ground_truth).count();
        sentences += c.sentences.len();
        bad_sentences += c
            .sentences
            .iter()
            .filter(|s| !s.is_subset(&c.ground_truth))
            .count();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(ChairScores {
        chair_i: ratio(hallucinated, mentioned),
        chair_s: ratio(bad_sentences, sentences),
        no_mentions: mentioned == 0,
        no_sentences: sentences == 0,
    })
}
