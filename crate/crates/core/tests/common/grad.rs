//! Finite-difference cases shared by the gradient tests and the acceptance run.

use hgt_core::fusion::{
    attend, attend_backward, attention_map, attention_map_backward, attention_weights,
};
use hgt_core::graph_encoder::{encode, gat_layer, gcn_layer, sage_layer, EncoderPass, Init};
use hgt_core::synth::{generate, SynthSpec};
use hgt_core::trainer::{gradcheck, refresh_prototypes, rel_err, DEFAULT_STEP};
use hgt_core::{
    Activation, EncoderParams, HierGraph, LayerParams, ModelState, Pipeline, Strategy, Toggles,
    TrainConfig, Variant,
};
use ndarray::{s, Array2};
use rand::Rng;

use super::{random_taxonomy, rng, uniform};

/// Max relative error between `analytic` and central differences of `f` around `x0`.
pub fn fd_max_rel(x0: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(x0.len(), analytic.len());
    let mut x = x0.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + DEFAULT_STEP;
        let up = f(&x);
        x[i] = orig - DEFAULT_STEP;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * DEFAULT_STEP);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

pub fn flatten(p: &EncoderParams) -> Vec<f64> {
    p.layers
        .iter()
        .flat_map(|l| l.blocks().into_iter().flat_map(|(_, b)| b.to_vec()))
        .collect()
}

pub fn unflatten(template: &EncoderParams, v: &[f64]) -> EncoderParams {
    let mut p = template.clone();
    let mut at = 0;
    for layer in &mut p.layers {
        for (_, block) in layer.blocks_mut() {
            block.copy_from_slice(&v[at..at + block.len()]);
            at += block.len();
        }
    }
    assert_eq!(at, v.len());
    p
}

const KINK_MARGIN: f64 = 1e-2;

/// Smallest |value| fed to any leaky relu during the forward pass.
pub fn kink_margin(nb: &[Vec<usize>], x: &Array2<f64>, p: &EncoderParams) -> f64 {
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for layer in &p.layers {
        let z = match layer {
            LayerParams::Gcn { weight } => gcn_layer(nb, h.view(), weight, Activation::Identity),
            LayerParams::Gat { weight, attention } => {
                let zw = h.dot(weight);
                let d = weight.ncols();
                let (a_dst, a_src) = (attention.slice(s![..d]), attention.slice(s![d..]));
                for (v, list) in nb.iter().enumerate() {
                    for &u in list.iter().chain(std::iter::once(&v)) {
                        let e = a_dst.dot(&zw.row(v)) + a_src.dot(&zw.row(u));
                        margin = margin.min(e.abs());
                    }
                }
                gat_layer(
                    nb,
                    h.view(),
                    weight,
                    attention,
                    p.attention_slope,
                    Activation::Identity,
                )
            }
            LayerParams::Sage {
                self_weight,
                neighbor_weight,
            } => sage_layer(
                nb,
                h.view(),
                self_weight,
                neighbor_weight,
                Activation::Identity,
            ),
        }
        .unwrap();
        if p.activation != Activation::Identity {
            margin = margin.min(z.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
        }
        h = z.mapv(|v| p.activation.apply(v));
    }
    margin
}

fn weighted_sum(a: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (a * r).sum()
}

/// Encoder on a random hierarchy graph, loss `Σ R ⊙ encode(X)`; returns the
/// worst relative error over parameters and input.
pub fn encoder_case(seed: u64, variant: Variant, depth: usize) -> f64 {
    encoder_case_with(seed, variant, depth, Activation::LeakyRelu(0.2))
}

pub fn encoder_case_with(seed: u64, variant: Variant, depth: usize, activation: Activation) -> f64 {
    let mut r = rng(seed);
    // resample until no pre-activation or attention score sits within reach
    // of a leaky-relu kink, where central differences are meaningless
    let (g, x, p) = loop {
        let levels = r.random_range(2..=3);
        let t = random_taxonomy(&mut r, levels, 6);
        if t.node_count() > 12 {
            continue;
        }
        let g = HierGraph::build(&t);
        let d = r.random_range(2..=8);
        let x = uniform(&mut r, g.node_count(), d, 1.0);
        let p = EncoderParams::init(variant, depth, d, activation, Init::Uniform, &mut r);
        if kink_margin(g.neighbors(), &x, &p) > KINK_MARGIN {
            break (g, x, p);
        }
    };
    let nb = g.neighbors();
    let (k, d) = x.dim();
    let weights = uniform(&mut r, k, d, 1.0);

    let mut pass = EncoderPass::new(nb, &p);
    pass.forward(x.view()).unwrap();
    let (dx, dp) = pass.backward(weights.view()).unwrap();

    let param_err = fd_max_rel(&flatten(&p), &flatten(&dp), |v| {
        weighted_sum(&encode(nb, x.view(), &unflatten(&p, v)).unwrap(), &weights)
    });
    let x_flat: Vec<f64> = x.iter().copied().collect();
    let input_err = fd_max_rel(&x_flat, dx.as_slice().unwrap(), |v| {
        let xi = Array2::from_shape_vec((k, d), v.to_vec()).unwrap();
        weighted_sum(&encode(nb, xi.view(), &p).unwrap(), &weights)
    });
    param_err.max(input_err)
}

/// `Σ R ⊙ attend(attention_map(S, P), P)` w.r.t. `S` and `P`.
pub fn fusion_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let m = r.random_range(2..=8);
    let k = r.random_range(2..=12);
    let d = r.random_range(2..=8);
    let alpha = r.random_range(0.2..1.0);
    let s = uniform(&mut r, m, d, 1.0);
    let p = uniform(&mut r, k, d, 1.0);
    let weights = uniform(&mut r, m, d, 1.0);
    let f = |s: &Array2<f64>, p: &Array2<f64>| {
        let psi = attention_map(s.view(), p.view()).unwrap();
        weighted_sum(&attend(psi.view(), p.view(), alpha).unwrap(), &weights)
    };

    let psi = attention_map(s.view(), p.view()).unwrap();
    let w = attention_weights(psi.view(), alpha);
    let (dpsi, dp_direct) = attend_backward(w.view(), p.view(), alpha, weights.view());
    let (ds, dp_map) = attention_map_backward(s.view(), p.view(), dpsi.view());
    let dp = dp_direct + dp_map;

    let s_flat: Vec<f64> = s.iter().copied().collect();
    let p_flat: Vec<f64> = p.iter().copied().collect();
    let e1 = fd_max_rel(&s_flat, ds.as_slice().unwrap(), |v| {
        f(&Array2::from_shape_vec((m, d), v.to_vec()).unwrap(), &p)
    });
    let e2 = fd_max_rel(&p_flat, dp.as_slice().unwrap(), |v| {
        f(&s, &Array2::from_shape_vec((k, d), v.to_vec()).unwrap())
    });
    e1.max(e2)
}

/// Whole model on a small synthetic hierarchy (K = 8, D = 6), every toggle on.
pub fn pipeline_case(
    seed: u64,
    variant: Variant,
    strategy: Strategy,
    init: Init,
    logit_scale: f64,
) -> hgt_core::trainer::GradReport {
    let spec = SynthSpec {
        branching: vec![2, 3],
        dim: 6,
        train_per_leaf: 2,
        test_per_leaf: 1,
        patches: 3,
        seed,
        ..SynthSpec::default()
    };
    let data = generate(&spec).unwrap();
    let graph = HierGraph::build(&data.taxonomy);
    let mut cfg = TrainConfig::defaults(6, 2);
    cfg.seed = seed;
    cfg.toggles = Toggles::ALL_ON;
    for enc in [&mut cfg.text_encoder, &mut cfg.visual_encoder] {
        enc.variant = variant;
        enc.init = init;
        enc.activation = Activation::LeakyRelu(0.2);
    }
    cfg.loss.strategy = strategy;
    cfg.loss.logit_scale = logit_scale;
    let pipeline = Pipeline::new(&data.taxonomy, &graph, &data.text, &cfg).unwrap();
    let mut state = ModelState::init(&cfg, graph.node_count(), 6).unwrap();
    // move every block off its initial value so no gradient is trivially zero
    let mut r = rng(seed ^ 0xabc);
    for b in state.params.blocks_mut() {
        for v in b.values.iter_mut() {
            *v += r.random_range(-0.1..0.1);
        }
    }
    refresh_prototypes(&pipeline, &mut state, &data.train).unwrap();
    gradcheck(&pipeline, &state, &data.train[..4]).unwrap()
}
