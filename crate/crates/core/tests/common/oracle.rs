//! Slow, loop-based reference implementations.

use hgt_core::{Activation, EncoderParams, LayerParams, Taxonomy};
use ndarray::{Array1, Array2};

use super::leaky;

pub fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => x.max(0.0),
        Activation::LeakyRelu(s) => leaky(x, s),
        Activation::Identity => x,
    }
}

pub fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut s = 0.0;
            for k in 0..a.ncols() {
                s += a[[i, k]] * b[[k, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

/// `act(Â X θ)` per layer with `Â` the row-normalized `A + I`.
pub fn gcn_dense(adj: &Array2<f64>, x: &Array2<f64>, p: &EncoderParams) -> Array2<f64> {
    let n = adj.nrows();
    let mut a_hat = adj + &Array2::<f64>::eye(n);
    for mut row in a_hat.rows_mut() {
        let s: f64 = row.sum();
        row /= s;
    }
    let mut h = x.clone();
    for layer in &p.layers {
        let LayerParams::Gcn { weight } = layer else {
            panic!("gcn expected")
        };
        h = matmul(&matmul(&a_hat, &h), weight).mapv(|v| act(p.activation, v));
    }
    h
}

pub fn gat_loop(adj: &Array2<f64>, x: &Array2<f64>, p: &EncoderParams) -> Array2<f64> {
    let n = adj.nrows();
    let mut h = x.clone();
    for layer in &p.layers {
        let LayerParams::Gat { weight, attention } = layer else {
            panic!("gat expected")
        };
        let d = weight.ncols();
        let z = matmul(&h, weight);
        let mut out = Array2::zeros((n, d));
        for v in 0..n {
            let nbhd: Vec<usize> = (0..n).filter(|&u| u == v || adj[[v, u]] != 0.0).collect();
            let scores: Vec<f64> = nbhd
                .iter()
                .map(|&u| {
                    let mut e = 0.0;
                    for k in 0..d {
                        e += attention[k] * z[[v, k]] + attention[d + k] * z[[u, k]];
                    }
                    leaky(e, p.attention_slope)
                })
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (i, &u) in nbhd.iter().enumerate() {
                for k in 0..d {
                    out[[v, k]] += exps[i] / total * z[[u, k]];
                }
            }
        }
        h = out.mapv(|v| act(p.activation, v));
    }
    h
}

pub fn sage_loop(adj: &Array2<f64>, x: &Array2<f64>, p: &EncoderParams) -> Array2<f64> {
    let n = adj.nrows();
    let mut h = x.clone();
    for layer in &p.layers {
        let LayerParams::Sage {
            self_weight,
            neighbor_weight,
        } = layer
        else {
            panic!("sage expected")
        };
        let d = self_weight.ncols();
        let mut out = Array2::zeros((n, d));
        for v in 0..n {
            let nbrs: Vec<usize> = (0..n).filter(|&u| u != v && adj[[v, u]] != 0.0).collect();
            for k in 0..d {
                let mut s = 0.0;
                for j in 0..h.ncols() {
                    s += h[[v, j]] * self_weight[[j, k]];
                }
                if !nbrs.is_empty() {
                    let mut m = 0.0;
                    for &u in &nbrs {
                        for j in 0..h.ncols() {
                            m += h[[u, j]] * neighbor_weight[[j, k]];
                        }
                    }
                    s += m / nbrs.len() as f64;
                }
                out[[v, k]] = act(p.activation, s);
            }
        }
        h = out;
    }
    h
}

/// Sum of leaf probabilities over every leaf reachable by walking children.
pub fn descendant_mass(t: &Taxonomy, level: usize, node: usize, leaf_p: &Array1<f64>) -> f64 {
    if level + 1 == t.levels() {
        return leaf_p[node];
    }
    t.children(level, node)
        .into_iter()
        .map(|c| descendant_mass(t, level + 1, c, leaf_p))
        .sum()
}
