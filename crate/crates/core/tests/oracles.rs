mod common;

use common::oracle::*;
use common::*;
use hgt_core::fusion::{attend, attention_map};
use hgt_core::graph_encoder::{encode, Init};
use hgt_core::objective::marginalize;
use hgt_core::{Activation, EncoderParams, Variant};
use ndarray::{Array1, Array2};
use rand::Rng;

fn random_params(rng: &mut impl Rng, variant: Variant, depth: usize, d: usize) -> EncoderParams {
    let activation = match rng.random_range(0..3) {
        0 => Activation::Relu,
        1 => Activation::LeakyRelu(0.2),
        _ => Activation::Identity,
    };
    EncoderParams::init(variant, depth, d, activation, Init::Uniform, rng)
}

fn encoder_matches_oracle(
    variant: Variant,
    oracle: fn(&Array2<f64>, &Array2<f64>, &EncoderParams) -> Array2<f64>,
) {
    let mut r = rng(variant as u64 + 11);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = r.random_range(1..=20);
        let d = r.random_range(1..=6);
        let nb = random_graph(&mut r, n, 0.25);
        let x = uniform(&mut r, n, d, 1.0);
        let depth = r.random_range(1..=3);
        let p = random_params(&mut r, variant, depth, d);
        let got = encode(&nb, x.view(), &p).unwrap();
        let want = oracle(&dense_adjacency(&nb), &x, &p);
        worst = worst.max(max_abs_diff(&got, &want));
    }
    assert!(worst <= 1e-10, "{variant:?}: max deviation {worst:e}");
}

#[test]
fn gcn_matches_dense_normalized_adjacency() {
    encoder_matches_oracle(Variant::Gcn, gcn_dense);
}

#[test]
fn gat_matches_per_edge_loop() {
    encoder_matches_oracle(Variant::Gat, gat_loop);
}

#[test]
fn sage_matches_per_edge_loop() {
    encoder_matches_oracle(Variant::Sage, sage_loop);
}

#[test]
fn gat_star_with_random_attention() {
    let mut r = rng(5);
    let nb = vec![vec![1, 2], vec![0], vec![0]];
    let x = uniform(&mut r, 3, 4, 1.0);
    let p = random_params(&mut r, Variant::Gat, 1, 4);
    let got = encode(&nb, x.view(), &p).unwrap();
    assert!(max_abs_diff(&got, &gat_loop(&dense_adjacency(&nb), &x, &p)) <= 1e-10);
}

#[test]
fn marginalize_matches_descendant_enumeration() {
    let mut r = rng(21);
    for _ in 0..50 {
        let h = r.random_range(2..=4);
        let t = random_taxonomy(&mut r, h, 7);
        let n_leaves = t.level_sizes()[h - 1];
        let raw = Array1::from_shape_simple_fn(n_leaves, || r.random_range(0.01..1.0));
        let leaf_p = &raw / raw.sum();
        let got = marginalize(leaf_p.view(), &t).unwrap();
        for l in 0..h {
            for j in 0..t.level_sizes()[l] {
                let want = descendant_mass(&t, l, j, &leaf_p);
                assert!((got[l][j] - want).abs() <= 1e-12, "level {l} node {j}");
            }
        }
    }
}

#[test]
fn attention_matches_loops() {
    let mut r = rng(8);
    for _ in 0..20 {
        let m = r.random_range(1..=6);
        let k = r.random_range(1..=8);
        let d = r.random_range(1..=5);
        let alpha = r.random_range(0.1..2.0);
        let s = uniform(&mut r, m, d, 1.0);
        let p = uniform(&mut r, k, d, 1.0);
        let psi = attention_map(s.view(), p.view()).unwrap();
        let fused = attend(psi.view(), p.view(), alpha).unwrap();
        for i in 0..m {
            let logits: Vec<f64> = (0..k)
                .map(|j| (0..d).map(|c| s[[i, c]] * p[[j, c]]).sum::<f64>() / alpha)
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|v| (v - mx).exp()).sum();
            for c in 0..d {
                let want: f64 = (0..k).map(|j| (logits[j] - mx).exp() / z * p[[j, c]]).sum();
                assert!((fused[[i, c]] - want).abs() < 1e-12);
            }
        }
    }
}
