//! Property tests over randomly shaped inputs.

use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;

use paca::layers::{
    activation_bytes, linear_backward, linear_forward, lora_forward, lora_merge, paca_backward, paca_forward,
    LinearParams, LoRAParams, PaCAParams,
};
use paca::optim::{adamw_step, AdamWConfig, OptimState, OptimizerKind, ParamOptimizer};
use paca::quant::{dequantize_block, nf4_codebook, qpaca_materialize, qpaca_pack, quantize_block};
use paca::selection::select_random;
use paca::tensor::{gather_cols, gather_rows, matmul, matmul_nt, matmul_tn, scatter_cols_add, transpose, IndexSet, Matrix};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-4.0f64..4.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

/// A weight, an input batch and an index set that fit together.
fn layer_case() -> impl Strategy<Value = (Matrix, Matrix, IndexSet)> {
    (1usize..12, 1usize..12, 1usize..6)
        .prop_flat_map(|(d_in, d_out, n)| {
            (matrix(d_out, d_in), matrix(d_in, n), prop::collection::btree_set(0..d_in, 1..=d_in))
        })
        .prop_map(|(w, x, set)| {
            let d_in = w.cols();
            (w, x, IndexSet::new(set.into_iter().collect(), d_in).unwrap())
        })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: Some(Box::new(FileFailurePersistence::Off)), ..ProptestConfig::default() })]

    #[test]
    fn test_transposed_matmuls_agree_bitwise((a, b) in (1usize..8, 1usize..8, 1usize..8)
        .prop_flat_map(|(m, k, n)| (matrix(m, k), matrix(k, n))))
    {
        let ab = matmul(&a, &b).unwrap();
        prop_assert!(matmul_tn(&transpose(&a), &b).unwrap().bitwise_eq(&ab));
        prop_assert!(matmul_nt(&a, &transpose(&b)).unwrap().bitwise_eq(&ab));
    }

    #[test]
    fn test_gather_then_scatter_restores((w, x, idx) in layer_case()) {
        let _ = x;
        let cols = gather_cols(&w, &idx).unwrap();
        let mut zeroed = w.clone();
        scatter_cols_add(&mut zeroed, &idx, &cols, -1.0).unwrap();
        for (k, &j) in idx.indices().iter().enumerate() {
            prop_assert_eq!(cols.col(k), w.col(j));
            prop_assert!(zeroed.col(j).iter().all(|&v| v == 0.0));
        }
        for j in idx.complement() {
            prop_assert_eq!(zeroed.col(j), w.col(j));
        }
        scatter_cols_add(&mut zeroed, &idx, &cols, 1.0).unwrap();
        prop_assert!(zeroed.bitwise_eq(&w));
    }

    #[test]
    fn test_gather_rows_is_gather_cols_of_transpose((w, x, idx) in layer_case()) {
        let _ = w;
        let rows = gather_rows(&x, &idx).unwrap();
        prop_assert!(transpose(&rows).bitwise_eq(&gather_cols(&transpose(&x), &idx).unwrap()));
    }

    #[test]
    fn test_index_set_rejects_unsorted_or_repeated(v in prop::collection::vec(0usize..10, 2..6)) {
        let sorted_unique = v.windows(2).all(|p| p[0] < p[1]);
        prop_assert_eq!(IndexSet::new(v.clone(), 10).is_ok(), sorted_unique);
        let idx = IndexSet::from_unsorted(v.clone(), 10).unwrap();
        let mut dedup = v.clone();
        dedup.sort_unstable();
        dedup.dedup();
        prop_assert_eq!(idx.indices(), &dedup[..]);
    }

    #[test]
    fn test_complement_partitions_domain(set in prop::collection::btree_set(0usize..20, 1..20)) {
        let idx = IndexSet::new(set.iter().copied().collect(), 20).unwrap();
        let comp = idx.complement();
        prop_assert_eq!(comp.len() + idx.len(), 20);
        prop_assert!(comp.iter().all(|&j| !idx.contains(j)));
    }

    #[test]
    fn test_select_random_sorted_distinct_sized(d_in in 1usize..300, frac in 0.0f64..1.0, seed: u64) {
        let r = 1 + ((d_in - 1) as f64 * frac) as usize;
        let idx = select_random(d_in, r, seed).unwrap();
        prop_assert_eq!(idx.len(), r);
        prop_assert!(idx.indices().windows(2).all(|p| p[0] < p[1]));
        prop_assert!(idx.indices().iter().all(|&i| i < d_in));
        prop_assert_eq!(select_random(d_in, r, seed).unwrap(), idx);
    }

    #[test]
    fn test_nf4_block_error_bounded(vals in prop::collection::vec(-50.0f64..50.0, 1..80)) {
        let (codes, absmax) = quantize_block(&vals);
        prop_assert!(absmax as f64 >= vals.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let back: Vec<f64> = dequantize_block(&codes, absmax).unwrap();
        let bound = absmax as f64 * nf4_codebook().max_gap() / 2.0;
        for (v, b) in vals.iter().zip(&back) {
            prop_assert!((v - b).abs() <= bound, "{} vs {}", v, b);
        }
    }

    #[test]
    fn test_qpaca_pack_keeps_selected_columns((w, x, idx) in layer_case(), block in 1usize..10) {
        let _ = x;
        let full = qpaca_materialize(&qpaca_pack(&w, &idx, block).unwrap()).unwrap();
        prop_assert!(gather_cols(&full, &idx).unwrap().bitwise_eq(&gather_cols(&w, &idx).unwrap()));
    }

    #[test]
    fn test_cache_bytes_follow_law((w, x, idx) in layer_case()) {
        let (d_in, n, r) = (w.cols(), x.cols(), idx.len());
        let (_, dense) = linear_forward(&LinearParams::new(w.clone()), &x, true).unwrap();
        prop_assert_eq!(activation_bytes(&dense), d_in * n * 8);
        let (_, partial) = paca_forward(&PaCAParams::new(w.clone(), idx).unwrap(), &x, true).unwrap();
        prop_assert_eq!(activation_bytes(&partial), r * n * 8);
        let lp = LoRAParams::from_parts(Matrix::zeros(r, d_in), Matrix::zeros(w.rows(), r), 1.0).unwrap();
        let (_, lora) = lora_forward(&LinearParams::new(w), &lp, &x, true).unwrap();
        prop_assert_eq!(activation_bytes(&lora), (d_in + r) * n * 8);
        let (_, eval) = linear_forward(&LinearParams::new(x.clone()), &Matrix::zeros(n, 1), false).unwrap();
        prop_assert_eq!(activation_bytes(&eval), 0);
    }

    #[test]
    fn test_full_index_partial_backward_is_dense((w, x, idx) in layer_case(), g_seed in 0u64..1000) {
        let _ = idx;
        let d_in = w.cols();
        let g = Matrix::from_fn(w.rows(), x.cols(), |i, j| ((i * 31 + j * 17 + g_seed as usize) % 9) as f64 - 4.0);
        let dense = LinearParams::new(w.clone());
        let (_, cache) = linear_forward(&dense, &x, true).unwrap();
        let (g_in, g_w) = linear_backward(&dense, &g, &cache).unwrap();
        let pp = PaCAParams::new(w, IndexSet::full(d_in).unwrap()).unwrap();
        let (_, cache) = paca_forward(&pp, &x, true).unwrap();
        let (p_in, p_w) = paca_backward(&pp, &g, &cache).unwrap();
        prop_assert!(p_in.bitwise_eq(&g_in));
        prop_assert!(p_w.bitwise_eq(&g_w));
    }

    #[test]
    fn test_lora_merge_matches_adapter_forward((w, x, idx) in layer_case(), scale in 0.1f64..4.0) {
        let r = idx.len();
        let a = Matrix::from_fn(r, w.cols(), |i, j| ((i + 2 * j) % 5) as f64 / 5.0 - 0.4);
        let b = Matrix::from_fn(w.rows(), r, |i, j| ((3 * i + j) % 7) as f64 / 7.0 - 0.5);
        let base = LinearParams::new(w);
        let lp = LoRAParams::from_parts(a, b, scale).unwrap();
        let (adapted, _) = lora_forward(&base, &lp, &x, false).unwrap();
        let (merged, _) = linear_forward(&lora_merge(&base, &lp).unwrap(), &x, false).unwrap();
        prop_assert!(adapted.max_abs_diff(&merged) <= 1e-10);
    }

    #[test]
    fn test_partial_adamw_equals_dense_on_selected((w, x, idx) in layer_case(), steps in 1usize..5) {
        let _ = x;
        let cfg = AdamWConfig { lr: 0.05, ..AdamWConfig::default() };
        let mut pp = PaCAParams::new(w.clone(), idx.clone()).unwrap();
        let mut opt = ParamOptimizer::new(OptimizerKind::AdamW, w.rows(), idx.len());
        let mut sub = gather_cols(&w, &idx).unwrap();
        let mut state = OptimState::new(w.rows(), idx.len());
        for s in 0..steps {
            let grad = Matrix::from_fn(w.rows(), idx.len(), |i, j| ((i + j + s) % 5) as f64 - 2.0);
            opt.step_partial(&mut pp, &grad, &cfg, cfg.lr).unwrap();
            adamw_step(&mut state, &mut sub, &grad, &cfg).unwrap();
        }
        prop_assert!(gather_cols(pp.w(), &idx).unwrap().bitwise_eq(&sub));
        for j in idx.complement() {
            prop_assert_eq!(pp.w().col(j), w.col(j));
        }
    }
}
