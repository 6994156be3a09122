use air_core::ffn::{
    air_ffn_forward, ffn_forward, FfnWeights, InjectionConfig, InjectionMode, LayerGate,
};
use air_core::npy::{from_bytes, to_bytes};
use air_core::ot::{cosine_baseline, ot_distance, sinkhorn, uniform, SinkhornParams};
use air_core::patch::{select_patches, PatchScore};
use air_core::reduction::select_top_q;
use air_core::{cosine_cost, Activation, Matrix};
use proptest::prelude::*;
use std::path::Path;

fn matrix(
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-4.0f32..4.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
    })
}

/// Two matrices with the same number of columns.
fn pair(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (Matrix, Matrix)> {
    (1..=max_rows, 1..=max_rows, 1..=max_cols).prop_flat_map(|(q, n, d)| {
        (
            prop::collection::vec(-2.0f32..2.0, q * d)
                .prop_map(move |v| Matrix::new(q, d, v).unwrap()),
            prop::collection::vec(-2.0f32..2.0, n * d)
                .prop_map(move |v| Matrix::new(n, d, v).unwrap()),
        )
    })
}

fn cost_matrix() -> impl Strategy<Value = Matrix> {
    (1usize..=12, 1usize..=12).prop_flat_map(|(q, n)| {
        prop::collection::vec(0.0f32..2.0, q * n).prop_map(move |v| Matrix::new(q, n, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cosine_costs_lie_in_zero_two((a, b) in pair(6, 6)) {
        let c = cosine_cost(&a, &b).unwrap();
        prop_assert_eq!(c.shape(), (a.rows(), b.rows()));
        prop_assert!(c.data().iter().all(|&x| (-1e-6..=2.0 + 1e-6).contains(&x)));
    }

    #[test]
    fn sinkhorn_plan_is_feasible(cost in cost_matrix(), rel in 0.01f64..10.0) {
        let eps = rel * cosine_baseline(&cost).unwrap().max(1e-3);
        let (q, n) = cost.shape();
        let plan = sinkhorn(&cost, &uniform(q), &uniform(n), eps, SinkhornParams::default()).unwrap();
        prop_assert!(plan.values().iter().all(|&t| t >= 0.0 && t.is_finite()));
        if plan.converged {
            let row: f64 = plan.row_sums().iter().map(|s| (s - 1.0 / q as f64).abs()).sum();
            let col: f64 = plan.col_sums().iter().map(|s| (s - 1.0 / n as f64).abs()).sum();
            prop_assert!(row <= 1e-6 && col <= 1e-6, "row {} col {}", row, col);
        }
    }

    #[test]
    fn entropic_cost_never_exceeds_uniform_plan(cost in cost_matrix(), exp in -3i32..3) {
        let mean = cosine_baseline(&cost).unwrap();
        let eps = 10f64.powi(exp) * mean.max(1e-3);
        let (q, n) = cost.shape();
        let plan = sinkhorn(&cost, &uniform(q), &uniform(n), eps, SinkhornParams::default()).unwrap();
        prop_assert!(ot_distance(&plan, &cost).unwrap() <= mean + 1e-9);
    }

    #[test]
    fn top_q_keeps_the_farthest_rows(tokens in matrix(1..30, 1..6), frac in 0.0f64..1.0) {
        let q = 1 + ((tokens.rows() - 1) as f64 * frac) as usize;
        let r = select_top_q(&tokens, q).unwrap();
        prop_assert_eq!(r.selected_indices.len(), q);
        prop_assert!(r.selected_indices.windows(2).all(|w| w[0] < w[1]));
        let kept_min = r.selected_indices.iter().map(|&i| r.distances[i]).fold(f64::INFINITY, f64::min);
        for i in (0..tokens.rows()).filter(|i| !r.selected_indices.contains(i)) {
            prop_assert!(r.distances[i] <= kept_min);
        }
    }

    #[test]
    fn selection_grows_with_tau(
        d_ots in prop::collection::vec(0.0f64..2.0, 0..20),
        mut taus in prop::collection::vec(-0.1f64..2.1, 2..8),
    ) {
        let scores: Vec<PatchScore> = d_ots
            .iter()
            .enumerate()
            .map(|(index, &d_ot)| PatchScore { index, d_ot, d_cos: d_ot, converged: true })
            .collect();
        taus.sort_by(f64::total_cmp);
        for w in taus.windows(2) {
            let small = select_patches(&scores, w[0]);
            let large = select_patches(&scores, w[1]);
            prop_assert!(small.iter().all(|m| large.contains(m)));
        }
    }

    #[test]
    fn npy_round_trips(m in matrix(0..9, 0..9)) {
        let bytes = to_bytes(&m);
        prop_assert_eq!(bytes.len() % 64, (m.data().len() * 4) % 64);
        let back = from_bytes(&bytes, Path::new("prop.npy")).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        prop_assert!(back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn injection_fallbacks_are_exact(
        h in matrix(2..7, 4..5),
        w1 in matrix(4..5, 6..7),
        w2 in matrix(4..5, 6..7),
        z in matrix(1..5, 4..5),
        layer in 1usize..=12,
    ) {
        let w = FfnWeights::new(w1, w2, Activation::GeluTanh).unwrap();
        let base = ffn_forward(&h, &w).unwrap();
        let rows: Vec<usize> = (0..h.rows()).collect();
        let reduced = select_top_q(&h, 1).unwrap();
        let gate = LayerGate::new(9, 12).unwrap();
        let cfg = |mode| InjectionConfig { mode, activation: Activation::GeluTanh, gate };
        let empty = Matrix::zeros(0, 4);

        let off = air_ffn_forward(&h, &rows, &w, &reduced, &z, &cfg(InjectionMode::Off), layer).unwrap();
        prop_assert_eq!(&off, &base);
        for mode in [InjectionMode::AllRows, InjectionMode::RetainedRows] {
            let none = air_ffn_forward(&h, &rows, &w, &reduced, &empty, &cfg(mode), layer).unwrap();
            prop_assert_eq!(&none, &base);
            if !gate.contains(layer) {
                let out = air_ffn_forward(&h, &rows, &w, &reduced, &z, &cfg(mode), layer).unwrap();
                prop_assert_eq!(&out, &base);
            }
        }
    }

    #[test]
    fn retained_rows_touch_only_retained_positions(
        h in matrix(3..9, 4..5),
        w1 in matrix(4..5, 3..4),
        w2 in matrix(4..5, 3..4),
        z in matrix(1..4, 4..5),
    ) {
        let w = FfnWeights::new(w1, w2, Activation::Relu).unwrap();
        let rows: Vec<usize> = (0..h.rows()).collect();
        let reduced = select_top_q(&h, 2).unwrap();
        let cfg = InjectionConfig {
            mode: InjectionMode::RetainedRows,
            activation: Activation::Relu,
            gate: LayerGate::new(1, 1).unwrap(),
        };
        let base = ffn_forward(&h, &w).unwrap();
        let out = air_ffn_forward(&h, &rows, &w, &reduced, &z, &cfg, 1).unwrap();
        for i in (0..h.rows()).filter(|i| !reduced.selected_indices.contains(i)) {
            prop_assert_eq!(out.row(i), base.row(i));
        }
    }
}
