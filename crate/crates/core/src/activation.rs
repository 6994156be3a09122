use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matrix::Matrix;

/// Nonlinearity applied inside the FFN and to the re-injection scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Silu,
    /// GELU, tanh approximation.
    #[default]
    GeluTanh,
    /// Softmax over each row.
    SoftmaxRowwise,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Identity,
        Activation::Relu,
        Activation::Silu,
        Activation::GeluTanh,
        Activation::SoftmaxRowwise,
    ];

    /// Scalar form. `SoftmaxRowwise` has none and is returned unchanged.
    #[inline]
    pub fn scalar(self, x: f64) -> f64 {
        match self {
            Activation::Identity | Activation::SoftmaxRowwise => x,
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::GeluTanh => {
                const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
                0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Silu => "silu",
            Activation::GeluTanh => "gelu_tanh",
            Activation::SoftmaxRowwise => "softmax_rowwise",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Activation::ALL.iter().map(|a| a.name()).collect();
                format!(
                    "unknown activation `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

/// Applies `act` elementwise, or per row for softmax. The shape is unchanged.
pub fn apply_activation(m: &Matrix, act: Activation) -> Result<Matrix> {
    let (rows, cols) = m.shape();
    match act {
        Activation::Identity => Ok(m.clone()),
        Activation::SoftmaxRowwise => {
            let mut out = Vec::with_capacity(rows * cols);
            for r in m.row_iter() {
                let max = r
                    .iter()
                    .fold(f64::NEG_INFINITY, |a, &v| a.max(f64::from(v)));
                let exps: Vec<f64> = r.iter().map(|&v| (f64::from(v) - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                out.extend(exps.iter().map(|e| (e / z) as f32));
            }
            Matrix::new(rows, cols, out)
        }
        _ => Matrix::new(
            rows,
            cols,
            m.data()
                .iter()
                .map(|&v| act.scalar(f64::from(v)) as f32)
                .collect(),
        ),
    }
}
