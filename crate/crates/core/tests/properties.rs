mod common;

use common::*;
use normattn::alignment::{
    aer, extract_awi, extract_awo, merge_subwords, AlignmentSet, GoldAlignment, ScoreMatrix, SubwordMap,
};
use normattn::attention::{head_decompose, head_output_direct, HeadAttention};
use normattn::linalg::{affine, affine_to_linear, matmul, singular_values, softmax_row, vecmat, Matrix};
use normattn::stats::{coefficient_of_variation, pearson, spearman};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn finite() -> impl Strategy<Value = f64> {
    -50.0f64..50.0
}

proptest! {
    #[test]
    fn softmax_shift_invariant(xs in prop::collection::vec(finite(), 1..12), c in finite()) {
        let a = softmax_row(&xs).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let b = softmax_row(&shifted).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (p, q) in a.iter().zip(b.iter()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_norm_homogeneous(seed in any::<u64>(), n in 1usize..6, scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rand_head(&mut rng, 3, 2);
        let xs: Vec<_> = (0..n).map(|_| rand_vector(&mut rng, 3)).collect();
        let att = HeadAttention::compute(&xs, &xs, &p).unwrap();
        for i in 0..n {
            for j in 0..n {
                let c = att.contribution(i, j);
                prop_assert!((c.norm() - att.weighted_norm(i, j)).abs() <= 1e-12 * (1.0 + c.norm()));
                prop_assert!((c.scale(scale).norm() - scale * c.norm()).abs() <= 1e-12 * scale * (1.0 + c.norm()));
            }
        }
    }

    #[test]
    fn affine_matches_homogeneous_form(seed in any::<u64>(), d in 1usize..6, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rand_matrix(&mut rng, d, k);
        let b = rand_vec(&mut rng, k);
        let x = rand_vec(&mut rng, d);
        let lin = affine_to_linear(&w, &b).unwrap();
        let mut xh = x.clone();
        xh.push(1.0);
        let yh = vecmat(&xh, &lin).unwrap();
        let y = affine(&x, &w, &b).unwrap();
        for t in 0..k {
            prop_assert!((yh[t] - y[t]).abs() < 1e-12);
        }
        prop_assert!((yh[k] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn svd_transpose_and_frobenius(seed in any::<u64>(), r in 1usize..7, c in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_matrix(&mut rng, r, c);
        let s = singular_values(&a).unwrap();
        let st = singular_values(&a.transpose()).unwrap();
        prop_assert_eq!(s.dim(), r.min(c));
        for (x, y) in s.iter().zip(st.iter()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]) && s.iter().all(|&x| x >= 0.0));
        let energy: f64 = s.iter().map(|x| x * x).sum();
        prop_assert!((energy - a.frobenius_norm().powi(2)).abs() < 1e-9);
    }

    #[test]
    fn decomposition_reconstructs_output(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rand_head(&mut rng, 4, 2);
        let y = rand_vector(&mut rng, 4);
        let xs: Vec<_> = (0..n).map(|_| rand_vector(&mut rng, 4)).collect();
        let direct = head_output_direct(&y, &xs, &p).unwrap();
        let mut sum = vec![0.0; 4];
        for part in head_decompose(&y, &xs, &p).unwrap() {
            for (s, v) in sum.iter_mut().zip(part.iter()) {
                *s += v;
            }
        }
        prop_assert!(rel_err(&sum, &direct) <= 1e-9);
    }

    #[test]
    fn spearman_monotone_invariant_and_symmetric(
        pairs in prop::collection::vec((0u8..6, -5.0f64..5.0), 3..20),
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Ok(r) = spearman(&x, &y) {
            let warped: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            prop_assert!((spearman(&warped, &y).unwrap() - r).abs() < 1e-12);
            prop_assert!((spearman(&y, &x).unwrap() - r).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((pearson(&x, &y).unwrap() - pearson(&y, &x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn cv_scale_invariant(xs in prop::collection::vec(0.1f64..100.0, 1..20), c in 0.01f64..100.0) {
        let a = coefficient_of_variation(&xs).unwrap();
        let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
        prop_assert!((coefficient_of_variation(&scaled).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn argmax_extraction_ignores_positive_rescaling(
        seed in any::<u64>(), t in 1usize..5, s in 2usize..6, c in 0.01f64..100.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = rand_vec(&mut rng, (t + 1) * s).iter().map(|x| x.abs()).collect();
        let a = Matrix::new(t + 1, s, raw).unwrap();
        let sa = ScoreMatrix::new(a.clone(), t, Some(s - 1)).unwrap();
        let sb = ScoreMatrix::new(a.scale(c), t, Some(s - 1)).unwrap();
        prop_assert_eq!(extract_awo(&sa).links, extract_awo(&sb).links);
        prop_assert_eq!(extract_awi(&sa).unwrap().links, extract_awi(&sb).unwrap().links);
    }

    #[test]
    fn awi_is_awo_on_shifted_rows(seed in any::<u64>(), t in 1usize..5, s in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = rand_vec(&mut rng, (t + 1) * s).iter().map(|x| x.abs()).collect();
        let full = Matrix::new(t + 1, s, raw.clone()).unwrap();
        let shifted = Matrix::new(t, s, raw[s..].to_vec()).unwrap();
        let awi = extract_awi(&ScoreMatrix::new(full, t, None).unwrap()).unwrap();
        let awo = extract_awo(&ScoreMatrix::new(shifted, t, None).unwrap());
        prop_assert_eq!(awi.links, awo.links);
        prop_assert!(awi.fallbacks.is_empty());
    }

    #[test]
    fn merge_preserves_row_mass_with_identity_source(
        seed in any::<u64>(), sizes in prop::collection::vec(1usize..4, 1..4), s in 1usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: usize = sizes.iter().sum();
        let mut ranges = Vec::new();
        let mut start = 0;
        for k in &sizes {
            ranges.push(start..start + k);
            start += k;
        }
        let rows: Vec<Vec<f64>> = (0..t).map(|_| softmax_row(&rand_vec(&mut rng, s)).unwrap().into_inner()).collect();
        let sm = ScoreMatrix::new(Matrix::from_rows(&rows).unwrap(), t, None).unwrap();
        let merged = merge_subwords(&sm, &SubwordMap::identity(s), &SubwordMap::new(ranges).unwrap()).unwrap();
        prop_assert_eq!(merged.scores().rows(), sizes.len());
        for r in 0..sizes.len() {
            prop_assert!((merged.scores().row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aer_zero_iff_between_sure_and_possible(
        sure in prop::collection::btree_set((0usize..3, 0usize..3), 0..4),
        extra in prop::collection::btree_set((0usize..3, 0usize..3), 0..4),
        pred in prop::collection::btree_set((0usize..3, 0usize..3), 0..6),
    ) {
        let s: AlignmentSet = sure.iter().copied().collect();
        let p: AlignmentSet = sure.union(&extra).copied().collect();
        let gold = GoldAlignment::new(s.clone(), p.clone());
        let a: AlignmentSet = pred.iter().copied().collect();
        let v = aer(&a, &gold);
        prop_assert!((0.0..=1.0).contains(&v));
        if !(a.is_empty() && s.is_empty()) {
            prop_assert_eq!(v == 0.0, s.is_subset(&a) && a.is_subset(&p));
        }
    }
}

#[test]
fn matmul_associative_on_random_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, b, c) = (rand_matrix(&mut rng, 3, 4), rand_matrix(&mut rng, 4, 2), rand_matrix(&mut rng, 2, 5));
    let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
    let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
    assert!(rel_err(left.data(), right.data()) < 1e-12);
}
