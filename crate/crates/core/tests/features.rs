mod common;

use std::f64::consts::PI;

use common::naive::exact_returns;
use common::shop_from;
use kspace::features::{
    hash_bucket, projection_matrix, rwpe, time_features, FeatureConfig, FeatureError, Featurizer, FrozenRowEncoder,
};
use kspace::relgraph::{sample_neighborhood, HeteroGraph, STATIC_TIME};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

#[test]
fn time_features_at_range_ends() {
    let f = time_features(100, 100, 200, 4);
    assert_eq!(f.len(), 9);
    assert_eq!(f[0], 0.0);
    for j in 0..4 {
        assert_eq!((f[1 + 2 * j], f[2 + 2 * j]), (0.0, 1.0));
    }
    let f = time_features(200, 100, 200, 1);
    assert_eq!(f[0], 1.0);
    assert!(f[1].abs() < 1e-12 && (f[2] - 1.0).abs() < 1e-12);
    assert_eq!(time_features(STATIC_TIME, 0, 1, 2), vec![0.0, 0.0, 1.0, 0.0, 1.0]);
    assert_eq!(time_features(-50, 0, 10, 0), vec![0.0]);
    assert_eq!(time_features(50, 0, 10, 0), vec![1.0]);
}

#[test]
fn time_features_mid_range_by_hand() {
    // t' = 25 of span 100: angles π/2, π, 2π.
    let f = time_features(1_025, 1_000, 1_100, 3);
    let want = [0.25, 1.0, 0.0, 0.0, -1.0, 0.0, 1.0];
    for (a, b) in f.iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{f:?}");
    }
    let f = time_features(1_010, 1_000, 1_100, 2);
    let want = [0.1, (0.2 * PI).sin(), (0.2 * PI).cos(), (0.4 * PI).sin(), (0.4 * PI).cos()];
    for (a, b) in f.iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn time_features_bounded_and_translation_invariant(
        t in -1_000_000i64..1_000_000, lo in -1_000_000i64..1_000_000, span in 1i64..1_000_000, shift in -1_000_000i64..1_000_000,
    ) {
        let a = time_features(t, lo, lo + span, 4);
        let b = time_features(t + shift, lo + shift, lo + span + shift, 4);
        prop_assert!((0.0..=1.0).contains(&a[0]));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((-1.0..=1.0).contains(x));
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

fn toy_graph(orders: &[(usize, f64, Option<i64>)], n_users: usize) -> HeteroGraph {
    let users: Vec<_> = (0..n_users).map(|_| (Some(1.0), None, 0, Some(0))).collect();
    HeteroGraph::build(&shop_from(&users, orders))
}

#[test]
fn rwpe_isolated_node_is_zero() {
    let g = toy_graph(&[], 1);
    assert_eq!(rwpe(&g, 0, 10, 32, 100, 0), vec![0.0; 32]);
}

#[test]
fn rwpe_two_cycle() {
    let g = toy_graph(&[(0, 1.0, Some(5))], 1);
    let v = rwpe(&g, 0, 10, 32, 100, 0);
    for (i, x) in v.iter().enumerate() {
        let s = i + 1;
        assert_eq!(*x, if s % 2 == 0 { 1.0 } else { 0.0 });
    }
    // The edge lies in the future of time 4.
    assert_eq!(rwpe(&g, 0, 4, 32, 100, 0), vec![0.0; 32]);
}

#[test]
fn rwpe_matches_matrix_power_oracle() {
    let orders = [
        (0, 1.0, Some(1)),
        (0, 1.0, Some(2)),
        (1, 1.0, Some(3)),
        (1, 1.0, Some(20)),
        (2, 1.0, Some(4)),
        (0, 1.0, Some(5)),
        (2, 1.0, None),
    ];
    let g = toy_graph(&orders, 3);
    let walks = 4_000;
    for node in [0, 1, 3] {
        let est = rwpe(&g, node, 10, 32, walks, 11);
        let exact = exact_returns(&g, node, 10, 32);
        for (e, x) in est.iter().zip(&exact) {
            let se = (x * (1.0 - x) / walks as f64).sqrt().max(1.0 / walks as f64);
            assert!((e - x).abs() <= 3.0 * se, "node {node}: {e} vs {x}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rwpe_entries_are_probabilities_and_odd_steps_vanish_on_bipartite(
        orders in prop::collection::vec((0usize..5, prop::option::of(0i64..20)), 0..15),
        at in 0i64..25, seed in any::<u64>(),
    ) {
        let orders: Vec<_> = orders.into_iter().map(|(u, t)| (u, 1.0, t)).collect();
        let g = toy_graph(&orders, 5);
        for node in 0..g.num_nodes() {
            let v = rwpe(&g, node, at, 8, 20, seed);
            for (i, x) in v.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(x));
                if i % 2 == 0 {
                    prop_assert_eq!(*x, 0.0);
                }
            }
        }
    }
}

#[test]
fn encoder_all_missing_row_is_zero_and_identical_rows_agree() {
    let b = shop_from(
        &[(None, None, 0, Some(1)), (Some(3.0), Some("eu"), 1, Some(2)), (Some(3.0), Some("eu"), 0, Some(2))],
        &[],
    );
    let enc = FrozenRowEncoder::fit(&b, 16, 8, |_, _| true);
    assert_eq!(enc.encode_row(&b, 0, 0), vec![0.0; 16]);
    assert_eq!(enc.encode_row(&b, 0, 1), enc.encode_row(&b, 0, 2));
    assert_ne!(enc.encode_row(&b, 0, 1), vec![0.0; 16]);
    assert!(matches!(enc.encode_by_name(&b, "nope", 0), Err(FeatureError::UnknownTable(_))));
    let again = FrozenRowEncoder::fit(&b, 16, 8, |_, _| true);
    assert_eq!(enc.digest(), again.digest());
}

#[test]
fn encoder_matches_straight_line_reimplementation() {
    let users = [
        (Some(20.0), Some("eu"), 0, Some(1)),
        (Some(40.0), Some("us"), 1, Some(2)),
        (Some(60.0), None, 1, Some(3)),
        (None, Some("eu"), 0, Some(4)),
    ];
    let b = shop_from(&users, &[]);
    let (d, buckets) = (8, 4);
    // Fit on the first three rows only.
    let enc = FrozenRowEncoder::fit(&b, d, buckets, |_, r| r < 3);

    let mean = 40.0;
    let std = ((400.0 + 0.0 + 400.0) / 3.0f64).sqrt();
    let digest: String = Sha256::digest(serde_json::to_vec(&b.manifest).unwrap()).iter().map(|x| format!("{x:02x}")).collect();
    assert_eq!(digest, b.manifest.digest());
    let width = 1 + buckets;
    let proj = projection_matrix(&digest, 0, width, d);
    for (r, (age, region, _, _)) in users.iter().enumerate() {
        let mut x = vec![0.0; width];
        x[0] = age.map(|a| (a - mean) / std).unwrap_or(0.0);
        if let Some(v) = region {
            let h = Sha256::digest(format!("region\0{v}").as_bytes());
            let bucket = u64::from_le_bytes(h[..8].try_into().unwrap()) % buckets as u64;
            assert_eq!(bucket as usize, hash_bucket("region", v, buckets));
            x[1 + bucket as usize] = 1.0;
        }
        let want: Vec<f64> = (0..d).map(|j| (0..width).map(|i| x[i] * proj[i * d + j]).sum()).collect();
        let got = enc.encode_row(&b, 0, r);
        for (a, w) in got.iter().zip(&want) {
            assert!((a - w).abs() < 1e-12);
        }
    }
    // The label column is never read.
    let mut flipped = users;
    flipped.iter_mut().for_each(|u| u.2 = 1 - u.2);
    let b2 = shop_from(&flipped, &[]);
    let enc2 = FrozenRowEncoder::fit(&b2, d, buckets, |_, r| r < 3);
    assert_eq!(enc.encode_row(&b, 0, 1), enc2.encode_row(&b2, 0, 1));
}

#[test]
fn feature_rows_and_cache_round_trip() {
    let b = shop_from(
        &[(Some(1.0), Some("a"), 0, Some(10)), (Some(2.0), Some("b"), 1, Some(20))],
        &[(0, 3.0, Some(5)), (1, 4.0, Some(15)), (0, 1.0, Some(25))],
    );
    let g = HeteroGraph::build(&b);
    let config = FeatureConfig { d_enc: 8, buckets: 4, rwpe_k: 6, walks: 10, ..Default::default() };
    let enc = FrozenRowEncoder::fit(&b, 8, 4, |_, _| true);
    let f = Featurizer::new(config.clone(), enc.clone(), &b, &g, 5, 25);
    let sub = sample_neighborhood(&g, &[(0, 10), (1, 20)], &[4, 4], 0).unwrap();
    let x = f.subgraph_features(&g, &sub);
    assert_eq!((x.rows(), x.cols()), (sub.num_nodes(), 8 + 9 + 6));
    let row0 = x.row(0).to_vec();
    assert_eq!(&row0[..8], enc.encode_row(&b, 0, 0).as_slice());
    assert_eq!(&row0[8..17], time_features(10, 5, 25, 4).as_slice());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("features.bin");
    f.save_cache(&path).unwrap();
    let g2 = Featurizer::new(config.clone(), enc.clone(), &b, &g, 5, 25);
    assert_eq!(g2.load_cache(&path).unwrap(), f.cached());
    assert_eq!(g2.subgraph_features(&g, &sub), x);

    let other_range = Featurizer::new(config, enc, &b, &g, 0, 25);
    assert!(matches!(other_range.load_cache(&path), Err(FeatureError::StaleCache(_))));
    let b3 = shop_from(&[(Some(1.0), Some("a"), 0, Some(10))], &[]);
    let mut other = b3.manifest.clone();
    other.name = "other".into();
    let b3 = kspace::relgraph::RelationalBundle { manifest: other, ..b3 };
    let g3 = HeteroGraph::build(&b3);
    let enc3 = FrozenRowEncoder::fit(&b3, 8, 4, |_, _| true);
    let stale = Featurizer::new(f.config.clone(), enc3, &b3, &g3, 5, 25);
    assert!(matches!(stale.load_cache(&path), Err(FeatureError::StaleCache(_))));
}
