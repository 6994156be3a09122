use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::Matrix;

/// Seeded generator for one independent unit of work. Distinct `stream`s
/// give independent sequences, so parallel work units draw the same numbers
/// whatever order they run in.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `rows × cols` matrix with i.i.d. `N(0, std²)` entries.
pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| (gaussian(rng) * std) as f32)
        .collect();
    Matrix::new(rows, cols, data).expect("gaussian samples are finite")
}

/// Unit vector drawn uniformly from the sphere.
pub fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}
