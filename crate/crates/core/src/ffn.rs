//! Feed-forward block with additive visual re-injection.

use serde::{Deserialize, Serialize};

use crate::activation::{apply_activation, Activation};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::reduction::ReducedTokens;

/// FFN weights; the block computes `φ(H·W1)·W2ᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FfnWeights {
    /// `d × d_ff`
    pub w1: Matrix,
    /// `d × d_ff`, applied transposed.
    pub w2: Matrix,
    pub activation: Activation,
}

impl FfnWeights {
    pub fn new(w1: Matrix, w2: Matrix, activation: Activation) -> Result<Self> {
        if w1.shape() != w2.shape() {
            return Err(Error::shape(
                "FfnWeights::new",
                format!(
                    "W1 {:?} and W2 {:?} must both be d x d_ff",
                    w1.shape(),
                    w2.shape()
                ),
            ));
        }
        Ok(Self { w1, w2, activation })
    }

    pub fn d_model(&self) -> usize {
        self.w1.rows()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    /// Every sequence row receives `φ(H·Z̃ᵀ)·Z̃`.
    #[default]
    AllRows,
    /// Only the retained visual positions receive `φ(H'·Z̃ᵀ)·Z̃`.
    RetainedRows,
    Off,
}

impl std::str::FromStr for InjectionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "all_rows" => Ok(Self::AllRows),
            "retained_rows" => Ok(Self::RetainedRows),
            "off" => Ok(Self::Off),
            _ => Err(format!(
                "unknown injection mode `{s}` (expected all_rows, retained_rows or off)"
            )),
        }
    }
}

/// Inclusive range of 1-indexed decoder layers where injection is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[usize; 2]", into = "[usize; 2]")]
pub struct LayerGate {
    start: usize,
    end: usize,
}

impl LayerGate {
    /// Best-performing range on a 32-layer decoder.
    pub const REFERENCE: (usize, usize) = (26, 32);
    const REFERENCE_DEPTH: usize = 32;

    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::Parameter(format!(
                "layer gate start {start} exceeds end {end}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn contains(&self, layer: usize) -> bool {
        (self.start..=self.end).contains(&layer)
    }

    /// Maps a range given for a 32-layer model onto `layers` layers,
    /// keeping the same fraction of the stack.
    pub fn rescale(start: usize, end: usize, layers: usize) -> Self {
        let map = |l: usize| {
            ((l.saturating_sub(1)) * layers / Self::REFERENCE_DEPTH + 1).clamp(1, layers.max(1))
        };
        let (s, e) = (
            map(start),
            (end * layers).div_ceil(Self::REFERENCE_DEPTH).max(1),
        );
        Self {
            start: s.min(e),
            end: e,
        }
    }

    /// The reference range rescaled to a `layers`-deep decoder.
    pub fn default_for(layers: usize) -> Self {
        Self::rescale(Self::REFERENCE.0, Self::REFERENCE.1, layers)
    }

    /// The last third of a `layers`-deep decoder.
    pub fn last_third(layers: usize) -> Self {
        let span = layers.div_ceil(3).max(1);
        Self {
            start: layers.saturating_sub(span) + 1,
            end: layers.max(1),
        }
    }
}

impl TryFrom<[usize; 2]> for LayerGate {
    type Error = Error;

    fn try_from(v: [usize; 2]) -> Result<Self> {
        LayerGate::new(v[0], v[1])
    }
}

impl From<LayerGate> for [usize; 2] {
    fn from(g: LayerGate) -> Self {
        [g.start, g.end]
    }
}

impl std::fmt::Display for LayerGate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

impl std::str::FromStr for LayerGate {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| format!("layer gate `{s}` must look like START-END"))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad layer index `{x}`"))
        };
        LayerGate::new(parse(a)?, parse(b)?).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    pub mode: InjectionMode,
    /// Activation applied to the re-injection scores.
    pub activation: Activation,
    pub gate: LayerGate,
}

/// `φ(H·W1)·W2ᵀ`.
pub fn ffn_forward(h: &Matrix, w: &FfnWeights) -> Result<Matrix> {
    if h.cols() != w.d_model() {
        return Err(Error::shape(
            "ffn_forward",
            format!("hidden width {} vs weight rows {}", h.cols(), w.d_model()),
        ));
    }
    let inner = apply_activation(&h.matmul(&w.w1)?, w.activation)?;
    inner.matmul_transposed(&w.w2)
}

/// `φ(H·Zᵀ)·Z`. An empty `Z` contributes nothing.
pub fn reinject_full(h: &Matrix, z: &Matrix, act: Activation) -> Result<Matrix> {
    if z.rows() == 0 {
        if z.cols() != h.cols() && z.cols() != 0 {
            return Err(Error::shape(
                "reinject_full",
                format!("hidden width {} vs token width {}", h.cols(), z.cols()),
            ));
        }
        return Ok(Matrix::zeros(h.rows(), h.cols()));
    }
    if z.cols() != h.cols() {
        return Err(Error::shape(
            "reinject_full",
            format!("hidden width {} vs token width {}", h.cols(), z.cols()),
        ));
    }
    let scores = apply_activation(&h.matmul_transposed(z)?, act)?;
    scores.matmul(z)
}

/// FFN output plus the re-injection of the fused patch tokens `fused`.
///
/// Returns the plain FFN output untouched when `layer` (1-indexed) is outside
/// the gate, the mode is `Off`, or `fused` has no rows. In `RetainedRows`
/// mode, `reduced.selected_indices[q]` names visual token `q` whose sequence
/// position is `visual_rows[...]`; only those rows change.
pub fn air_ffn_forward(
    h: &Matrix,
    visual_rows: &[usize],
    w: &FfnWeights,
    reduced: &ReducedTokens,
    fused: &Matrix,
    cfg: &InjectionConfig,
    layer: usize,
) -> Result<Matrix> {
    let base = ffn_forward(h, w)?;
    if cfg.mode == InjectionMode::Off || !cfg.gate.contains(layer) || fused.rows() == 0 {
        return Ok(base);
    }
    if fused.cols() != h.cols() {
        return Err(Error::shape(
            "air_ffn_forward",
            format!("fused width {} vs hidden width {}", fused.cols(), h.cols()),
        ));
    }
    match cfg.mode {
        InjectionMode::AllRows => base.add(&reinject_full(h, fused, cfg.activation)?),
        InjectionMode::RetainedRows => {
            let positions = retained_positions(visual_rows, reduced, h.rows())?;
            let term = reinject_full(&reduced.h_prime, fused, cfg.activation)?;
            let d = h.cols();
            let mut out = base.into_data();
            for (q, &pos) in positions.iter().enumerate() {
                let dst = &mut out[pos * d..(pos + 1) * d];
                for (o, t) in dst.iter_mut().zip(term.row(q)) {
                    *o += t;
                }
            }
            Matrix::new(h.rows(), d, out)
        }
        InjectionMode::Off => unreachable!(),
    }
}

fn retained_positions(
    visual_rows: &[usize],
    reduced: &ReducedTokens,
    seq_len: usize,
) -> Result<Vec<usize>> {
    if let Some(&bad) = visual_rows.iter().find(|&&r| r >= seq_len) {
        return Err(Error::IndexOutOfRange {
            what: "sequence rows",
            index: bad,
            len: seq_len,
        });
    }
    reduced
        .selected_indices
        .iter()
        .map(|&i| {
            visual_rows.get(i).copied().ok_or(Error::IndexOutOfRange {
                what: "visual rows",
                index: i,
                len: visual_rows.len(),
            })
        })
        .collect()
}
