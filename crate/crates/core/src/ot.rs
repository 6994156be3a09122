//! Entropic optimal transport between two discrete distributions.
//!
//! [`sinkhorn`] runs the Sinkhorn-Knopp scaling iterations on the dual
//! potentials in the log domain, which keeps the Gibbs kernel `exp(-C/ε)`
//! representable for ε down to about `1e-3 · mean(C)`. Plans are kept in
//! `f64`: the transport cost of a near-uniform plan differs from the plain
//! mean of `C` by less than single precision can resolve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Tolerance on `Σ a = 1` and `Σ b = 1`.
pub const MARGINAL_SUM_TOL: f64 = 1e-9;
/// Largest square instance [`exact_matching_ot`] will enumerate.
pub const EXACT_MATCHING_MAX_N: usize = 7;

/// Regularization strength, either absolute or relative to `mean(C)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Epsilon {
    Absolute(f64),
    Relative(f64),
}

impl Epsilon {
    /// Relative factor used when a config says `"auto"`.
    pub const AUTO_FACTOR: f64 = 0.1;

    pub fn auto() -> Self {
        Epsilon::Relative(Self::AUTO_FACTOR)
    }

    /// Absolute ε for a cost matrix with the given mean. An all-zero cost
    /// matrix makes every feasible plan optimal, so a relative ε falls back
    /// to the bare factor there.
    pub fn resolve(self, mean_cost: f64) -> f64 {
        match self {
            Epsilon::Absolute(e) => e,
            Epsilon::Relative(f) if mean_cost > 0.0 => f * mean_cost,
            Epsilon::Relative(f) => f,
        }
    }

    pub fn validate(self) -> Result<()> {
        let v = match self {
            Epsilon::Absolute(v) | Epsilon::Relative(v) => v,
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "epsilon must be positive, got {v}"
            )))
        }
    }
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::auto()
    }
}

/// Stopping rule for [`sinkhorn`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    pub max_iter: usize,
    /// Bound on the L1 marginal error of both marginals.
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

/// An entropic transport plan and the metadata of the solve that produced it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    plan: Vec<f64>,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `max(‖T·1 − a‖₁, ‖Tᵀ·1 − b‖₁)`.
    pub marginal_error: f64,
}

impl TransportPlan {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.plan
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.plan
            .chunks(self.cols.max(1))
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for r in self.plan.chunks(self.cols.max(1)) {
            for (acc, v) in s.iter_mut().zip(r) {
                *acc += v;
            }
        }
        s
    }

    /// `h(T) = −Σ T log T`, with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self
            .plan
            .iter()
            .filter(|&&t| t > 0.0)
            .map(|&t| t * t.ln())
            .sum::<f64>()
    }

    /// The plan rounded to single precision.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_parts_unchecked(
            self.rows,
            self.cols,
            self.plan.iter().map(|&v| v as f32).collect(),
        )
    }
}

/// Uniform probability vector of length `n`.
pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_marginal(v: &[f64], name: &str, expected_len: usize) -> Result<()> {
    if v.len() != expected_len {
        return Err(Error::shape(
            "sinkhorn",
            format!(
                "{name} has length {}, cost matrix needs {expected_len}",
                v.len()
            ),
        ));
    }
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Domain(format!(
            "{name} has negative or non-finite mass"
        )));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > MARGINAL_SUM_TOL {
        return Err(Error::Domain(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

/// Numerically stable `log Σ exp(x_i)`; all `-inf` inputs give `-inf`.
#[inline]
fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Solves `min ⟨T, C⟩ − ε h(T)` subject to `T·1 = a`, `Tᵀ·1 = b`.
///
/// Iterates on the scaled potentials `u = f/ε`, `v = g/ε`. After every
/// column update the column marginal is exact, so convergence is judged on
/// the row marginal using the log-sums the next row update needs anyway.
/// A solve that exhausts `max_iter` still returns its plan with
/// `converged = false`.
pub fn sinkhorn(
    cost: &Matrix,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    params: SinkhornParams,
) -> Result<TransportPlan> {
    let (q, n) = cost.shape();
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Parameter(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    if q == 0 || n == 0 {
        return Err(Error::Empty("sinkhorn cost matrix"));
    }
    check_marginal(a, "row marginal", q)?;
    check_marginal(b, "column marginal", n)?;
    if cost.data().iter().any(|&c| c < 0.0) {
        return Err(Error::Domain("cost matrix has negative entries".into()));
    }

    // scaled costs, row-major and column-major copies
    let c_rows: Vec<f64> = cost
        .data()
        .iter()
        .map(|&c| f64::from(c) / epsilon)
        .collect();
    let mut c_cols = vec![0.0; q * n];
    for i in 0..q {
        for j in 0..n {
            c_cols[j * q + i] = c_rows[i * n + j];
        }
    }
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();

    let mut u = vec![0.0f64; q];
    let mut v = vec![0.0f64; n];
    let mut row_lse = vec![0.0f64; q];
    let mut iterations = 0;

    let compute_row_lse = |v: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &c_rows[i * n..(i + 1) * n];
            *o = log_sum_exp(v.iter().zip(row).map(|(vj, c)| vj - c));
        }
    };

    while iterations < params.max_iter {
        compute_row_lse(&v, &mut row_lse);
        if iterations > 0 {
            let err: f64 = row_lse
                .iter()
                .zip(&u)
                .zip(a)
                .map(|((r, ui), ai)| ((ui + r).exp() - ai).abs())
                .sum();
            if err <= params.tol {
                break;
            }
        }
        for ((ui, la), r) in u.iter_mut().zip(&log_a).zip(&row_lse) {
            *ui = la - r;
        }
        for (j, vj) in v.iter_mut().enumerate() {
            let col = &c_cols[j * q..(j + 1) * q];
            *vj = log_b[j] - log_sum_exp(u.iter().zip(col).map(|(ui, c)| ui - c));
        }
        iterations += 1;
    }

    let mut plan = Vec::with_capacity(q * n);
    for i in 0..q {
        for j in 0..n {
            plan.push((u[i] + v[j] - c_rows[i * n + j]).exp());
        }
    }
    let mut out = TransportPlan {
        rows: q,
        cols: n,
        plan,
        row_marginal: a.to_vec(),
        col_marginal: b.to_vec(),
        epsilon,
        iterations,
        converged: false,
        marginal_error: 0.0,
    };
    let l1 = |s: Vec<f64>, t: &[f64]| s.iter().zip(t).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let row_err = l1(out.row_sums(), a);
    let col_err = l1(out.col_sums(), b);
    out.marginal_error = row_err.max(col_err);
    out.converged = out.marginal_error <= params.tol;
    Ok(out)
}

/// `⟨T, C⟩`, accumulated row by row in `f64`.
pub fn ot_distance(plan: &TransportPlan, cost: &Matrix) -> Result<f64> {
    if plan.shape() != cost.shape() {
        return Err(Error::shape(
            "ot_distance",
            format!("plan {:?} vs cost {:?}", plan.shape(), cost.shape()),
        ));
    }
    Ok(plan
        .values()
        .iter()
        .zip(cost.data())
        .fold(0.0, |s, (t, &c)| s + t * f64::from(c)))
}

/// Transport cost under the uniform plan `1/(QN)`, i.e. the mean of `C`.
pub fn cosine_baseline(cost: &Matrix) -> Result<f64> {
    if cost.data().is_empty() {
        return Err(Error::Empty("cosine_baseline cost matrix"));
    }
    cost.mean()
}

/// Exact OT value for a square cost matrix with uniform marginals, by
/// enumerating every permutation: `(1/n) · min_σ Σ_i C(i, σ(i))`.
pub fn exact_matching_ot(cost: &Matrix) -> Result<f64> {
    let (r, c) = cost.shape();
    if r != c {
        return Err(Error::Unsupported(format!(
            "exact matching needs a square matrix, got {r}x{c}"
        )));
    }
    if r == 0 || r > EXACT_MATCHING_MAX_N {
        return Err(Error::Unsupported(format!(
            "exact matching enumerates permutations only for 1 <= n <= {EXACT_MATCHING_MAX_N}, got {r}"
        )));
    }
    let mut perm: Vec<usize> = (0..r).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let s: f64 = p
            .iter()
            .enumerate()
            .map(|(i, &j)| f64::from(cost.get(i, j)))
            .sum();
        best = best.min(s);
    });
    Ok(best / r as f64)
}

fn permute(p: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}
