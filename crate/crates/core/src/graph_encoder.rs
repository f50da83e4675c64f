//! Message-passing encoders over the hierarchy graph.
//!
//! Three single-head variants are provided, each with an analytic backward
//! pass. Features are row vectors, so a layer maps `X (K×D)` to
//! `act(agg(X) · θ)`.
//!
//! * GCN: mean over the closed neighborhood `N(v) ∪ {v}`.
//! * GAT: attention-weighted sum over the closed neighborhood, with scores
//!   `leaky_relu(a_dst·h_v + a_src·h_u)` softmax-normalized per node.
//! * GraphSAGE (mean aggregator): `x_v θ_self + mean_{u ∈ N(v)} x_u θ_nbr`.

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;

use crate::error::{shape_err, HgtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Gcn,
    Gat,
    Sage,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Gcn, Variant::Gat, Variant::Sage];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gcn => "gcn",
            Variant::Gat => "gat",
            Variant::Sage => "sage",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = HgtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Variant::Gcn),
            "gat" => Ok(Variant::Gat),
            "sage" | "graphsage" => Ok(Variant::Sage),
            other => Err(HgtError::Range(format!(
                "unknown encoder variant {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::LeakyRelu(a) => write!(f, "leaky_relu:{a}"),
            Activation::Identity => write!(f, "identity"),
        }
    }
}

/// Accepts `relu`, `identity`, `leaky_relu` (slope 0.2) or `leaky_relu:<slope>`.
impl std::str::FromStr for Activation {
    type Err = HgtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            "leaky_relu" => Ok(Activation::LeakyRelu(0.2)),
            other => {
                let slope = other
                    .strip_prefix("leaky_relu:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|a| a.is_finite())
                    .ok_or_else(|| HgtError::Range(format!("unknown activation {other:?}")))?;
                Ok(Activation::LeakyRelu(slope))
            }
        }
    }
}

/// Starting point for layer weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// Every entry uniform in `(-1/√D, 1/√D)`.
    Uniform,
    /// Weight matrices start at `I` (GraphSAGE neighbor weights at zero),
    /// GAT attention vectors uniform in `(-1/√D, 1/√D)`. The encoder then
    /// starts as plain neighborhood smoothing and keeps the input space.
    #[default]
    Identity,
}

impl Init {
    pub fn name(self) -> &'static str {
        match self {
            Init::Uniform => "uniform",
            Init::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Init {
    type Err = HgtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Init::Uniform),
            "identity" => Ok(Init::Identity),
            other => Err(HgtError::Range(format!("unknown init {other:?}"))),
        }
    }
}

/// Weights of one message-passing layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Gcn {
        weight: Array2<f64>,
    },
    Gat {
        weight: Array2<f64>,
        /// `[a_dst ‖ a_src]`, length `2D`.
        attention: Array1<f64>,
    },
    Sage {
        self_weight: Array2<f64>,
        neighbor_weight: Array2<f64>,
    },
}

impl LayerParams {
    pub fn variant(&self) -> Variant {
        match self {
            LayerParams::Gcn { .. } => Variant::Gcn,
            LayerParams::Gat { .. } => Variant::Gat,
            LayerParams::Sage { .. } => Variant::Sage,
        }
    }

    pub fn zeros(variant: Variant, dim: usize) -> Self {
        let m = || Array2::zeros((dim, dim));
        match variant {
            Variant::Gcn => LayerParams::Gcn { weight: m() },
            Variant::Gat => LayerParams::Gat {
                weight: m(),
                attention: Array1::zeros(2 * dim),
            },
            Variant::Sage => LayerParams::Sage {
                self_weight: m(),
                neighbor_weight: m(),
            },
        }
    }

    pub fn init(variant: Variant, dim: usize, init: Init, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut p = Self::zeros(variant, dim);
        match init {
            Init::Uniform => {
                for (_, block) in p.blocks_mut() {
                    for v in block.iter_mut() {
                        *v = rng.random_range(-bound..bound);
                    }
                }
            }
            Init::Identity => match &mut p {
                LayerParams::Gcn { weight }
                | LayerParams::Sage {
                    self_weight: weight,
                    ..
                } => {
                    weight.diag_mut().fill(1.0);
                }
                LayerParams::Gat { weight, attention } => {
                    weight.diag_mut().fill(1.0);
                    attention.mapv_inplace(|_| rng.random_range(-bound..bound));
                }
            },
        }
        p
    }

    pub fn dim(&self) -> usize {
        match self {
            LayerParams::Gcn { weight } | LayerParams::Gat { weight, .. } => weight.nrows(),
            LayerParams::Sage { self_weight, .. } => self_weight.nrows(),
        }
    }

    /// Named flat views of every tensor in the layer.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        fn flat(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        match self {
            LayerParams::Gcn { weight } => vec![("weight", flat(weight))],
            LayerParams::Gat { weight, attention } => vec![
                ("weight", flat(weight)),
                ("attention", attention.as_slice().expect("standard layout")),
            ],
            LayerParams::Sage {
                self_weight,
                neighbor_weight,
            } => vec![
                ("self_weight", flat(self_weight)),
                ("neighbor_weight", flat(neighbor_weight)),
            ],
        }
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        fn flat(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        match self {
            LayerParams::Gcn { weight } => vec![("weight", flat(weight))],
            LayerParams::Gat { weight, attention } => vec![
                ("weight", flat(weight)),
                (
                    "attention",
                    attention.as_slice_mut().expect("standard layout"),
                ),
            ],
            LayerParams::Sage {
                self_weight,
                neighbor_weight,
            } => vec![
                ("self_weight", flat(self_weight)),
                ("neighbor_weight", flat(neighbor_weight)),
            ],
        }
    }

    /// Tensor shapes in the same order as [`blocks`](Self::blocks).
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let d = self.dim();
        match self {
            LayerParams::Gcn { .. } => vec![vec![d, d]],
            LayerParams::Gat { .. } => vec![vec![d, d], vec![2 * d]],
            LayerParams::Sage { .. } => vec![vec![d, d], vec![d, d]],
        }
    }
}

/// A stack of layers plus the nonlinearity applied after each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub activation: Activation,
    /// Negative slope of the leaky ReLU inside GAT attention scores.
    pub attention_slope: f64,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub const DEFAULT_ATTENTION_SLOPE: f64 = 0.2;

    pub fn init(
        variant: Variant,
        depth: usize,
        dim: usize,
        activation: Activation,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        EncoderParams {
            activation,
            attention_slope: Self::DEFAULT_ATTENTION_SLOPE,
            layers: (0..depth)
                .map(|_| LayerParams::init(variant, dim, init, rng))
                .collect(),
        }
    }

    /// Same structure, every tensor zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            activation: self.activation,
            attention_slope: self.attention_slope,
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.variant(), l.dim()))
                .collect(),
        }
    }

    pub fn variant(&self) -> Variant {
        self.layers[0].variant()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].dim()
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.layers.first() else {
            return Err(HgtError::Range("encoder depth must be >= 1".into()));
        };
        let (variant, dim) = (first.variant(), first.dim());
        if !(self.attention_slope > 0.0 && self.attention_slope < 1.0) {
            return Err(HgtError::Range(format!(
                "attention slope {} outside (0, 1)",
                self.attention_slope
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.variant() != variant {
                return Err(shape_err(format!("layer {i} variant differs from layer 0")));
            }
            let ok = match layer {
                LayerParams::Gcn { weight } => weight.dim() == (dim, dim),
                LayerParams::Gat { weight, attention } => {
                    weight.dim() == (dim, dim) && attention.len() == 2 * dim
                }
                LayerParams::Sage {
                    self_weight,
                    neighbor_weight,
                } => self_weight.dim() == (dim, dim) && neighbor_weight.dim() == (dim, dim),
            };
            if !ok {
                return Err(shape_err(format!("layer {i} tensors are not {dim}x{dim}")));
            }
            if !layer
                .blocks()
                .iter()
                .all(|(_, b)| b.iter().all(|v| v.is_finite()))
            {
                return Err(HgtError::NaN(format!("encoder layer {i}")));
            }
        }
        Ok(())
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &EncoderParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for ((_, x), (_, y)) in a.blocks_mut().into_iter().zip(b.blocks()) {
                for (xi, yi) in x.iter_mut().zip(y) {
                    *xi += yi;
                }
            }
        }
    }
}

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    /// `X θ` (gcn, gat) or the open-neighborhood mean of `X` (sage).
    hidden: Array2<f64>,
    /// gat only: per node, attention weights and raw scores over the closed neighborhood.
    attention: Vec<Vec<f64>>,
    raw_scores: Vec<Vec<f64>>,
}

fn check_input(neighbors: &[Vec<usize>], x: ArrayView2<f64>, dim: usize) -> Result<()> {
    if x.nrows() != neighbors.len() {
        return Err(shape_err(format!(
            "{} feature rows for {} graph nodes",
            x.nrows(),
            neighbors.len()
        )));
    }
    if x.ncols() != dim {
        return Err(shape_err(format!(
            "feature width {} does not match layer width {dim}",
            x.ncols()
        )));
    }
    if let Some(bad) = neighbors.iter().flatten().find(|&&u| u >= neighbors.len()) {
        return Err(shape_err(format!("neighbor index {bad} out of range")));
    }
    Ok(())
}

#[inline]
fn closed_neighborhood(v: usize, open: &[usize]) -> impl Iterator<Item = usize> + '_ {
    std::iter::once(v).chain(open.iter().copied())
}

/// `out[v] = Σ_u w[v][i] · h[u_i]` over the closed neighborhood, in a fixed order.
fn aggregate(neighbors: &[Vec<usize>], h: &Array2<f64>, weights: &[Vec<f64>]) -> Array2<f64> {
    let mut out = Array2::zeros(h.raw_dim());
    for (v, open) in neighbors.iter().enumerate() {
        let mut row = out.row_mut(v);
        for (u, &w) in closed_neighborhood(v, open).zip(&weights[v]) {
            row.scaled_add(w, &h.row(u));
        }
    }
    out
}

fn layer_forward(
    neighbors: &[Vec<usize>],
    x: ArrayView2<f64>,
    layer: &LayerParams,
    activation: Activation,
    attention_slope: f64,
) -> Result<(Array2<f64>, LayerCache)> {
    check_input(neighbors, x, layer.dim())?;
    let d = layer.dim();
    let (pre, hidden, attention, raw_scores) = match layer {
        LayerParams::Gcn { weight } => {
            let h = x.dot(weight);
            let w: Vec<Vec<f64>> = neighbors
                .iter()
                .map(|open| vec![1.0 / (open.len() + 1) as f64; open.len() + 1])
                .collect();
            (aggregate(neighbors, &h, &w), h, w, Vec::new())
        }
        LayerParams::Gat { weight, attention } => {
            let h = x.dot(weight);
            let a_dst = attention.slice(s![..d]);
            let a_src = attention.slice(s![d..]);
            let dst = h.dot(&a_dst);
            let src = h.dot(&a_src);
            let mut alphas = Vec::with_capacity(neighbors.len());
            let mut raws = Vec::with_capacity(neighbors.len());
            for (v, open) in neighbors.iter().enumerate() {
                let raw: Vec<f64> = closed_neighborhood(v, open)
                    .map(|u| dst[v] + src[u])
                    .collect();
                let e: Array1<f64> = raw
                    .iter()
                    .map(|&r| Activation::LeakyRelu(attention_slope).apply(r))
                    .collect();
                alphas.push(crate::linalg::softmax(e.view()).to_vec());
                raws.push(raw);
            }
            (aggregate(neighbors, &h, &alphas), h, alphas, raws)
        }
        LayerParams::Sage {
            self_weight,
            neighbor_weight,
        } => {
            let mut nbr_mean = Array2::zeros(x.raw_dim());
            for (v, open) in neighbors.iter().enumerate() {
                if open.is_empty() {
                    continue;
                }
                let mut row = nbr_mean.row_mut(v);
                for &u in open {
                    row += &x.row(u);
                }
                row /= open.len() as f64;
            }
            let pre = x.dot(self_weight) + nbr_mean.dot(neighbor_weight);
            (pre, nbr_mean, Vec::new(), Vec::new())
        }
    };
    let out = pre.mapv(|v| activation.apply(v));
    Ok((
        out,
        LayerCache {
            input: x.to_owned(),
            pre,
            hidden,
            attention,
            raw_scores,
        },
    ))
}

fn layer_backward(
    neighbors: &[Vec<usize>],
    layer: &LayerParams,
    cache: &LayerCache,
    activation: Activation,
    attention_slope: f64,
    dout: ArrayView2<f64>,
) -> (Array2<f64>, LayerParams) {
    let d = layer.dim();
    let mut dpre = dout.to_owned();
    ndarray::Zip::from(&mut dpre)
        .and(&cache.pre)
        .for_each(|g, &p| *g *= activation.derivative(p));
    let x = &cache.input;
    match layer {
        LayerParams::Gcn { weight } => {
            let mut dh = Array2::zeros(cache.hidden.raw_dim());
            for (v, open) in neighbors.iter().enumerate() {
                for (u, &w) in closed_neighborhood(v, open).zip(&cache.attention[v]) {
                    dh.row_mut(u).scaled_add(w, &dpre.row(v));
                }
            }
            let dw = x.t().dot(&dh);
            let dx = dh.dot(&weight.t());
            (dx, LayerParams::Gcn { weight: dw })
        }
        LayerParams::Gat { weight, attention } => {
            let h = &cache.hidden;
            let a_dst = attention.slice(s![..d]);
            let a_src = attention.slice(s![d..]);
            let mut dh = Array2::zeros(h.raw_dim());
            let mut da = Array1::<f64>::zeros(2 * d);
            for (v, open) in neighbors.iter().enumerate() {
                let alpha = &cache.attention[v];
                let raw = &cache.raw_scores[v];
                let dz = dpre.row(v);
                let dalpha: Vec<f64> = closed_neighborhood(v, open)
                    .map(|u| dz.dot(&h.row(u)))
                    .collect();
                let mean: f64 = alpha.iter().zip(&dalpha).map(|(a, g)| a * g).sum();
                for (i, u) in closed_neighborhood(v, open).enumerate() {
                    dh.row_mut(u).scaled_add(alpha[i], &dz);
                    let de = alpha[i] * (dalpha[i] - mean);
                    let ds = de * Activation::LeakyRelu(attention_slope).derivative(raw[i]);
                    if ds != 0.0 {
                        da.slice_mut(s![..d]).scaled_add(ds, &h.row(v));
                        da.slice_mut(s![d..]).scaled_add(ds, &h.row(u));
                        dh.row_mut(v).scaled_add(ds, &a_dst);
                        dh.row_mut(u).scaled_add(ds, &a_src);
                    }
                }
            }
            let dw = x.t().dot(&dh);
            let dx = dh.dot(&weight.t());
            (
                dx,
                LayerParams::Gat {
                    weight: dw,
                    attention: da,
                },
            )
        }
        LayerParams::Sage {
            self_weight,
            neighbor_weight,
        } => {
            let d_self = x.t().dot(&dpre);
            let d_nbr = cache.hidden.t().dot(&dpre);
            let mut dx = dpre.dot(&self_weight.t());
            let dmean = dpre.dot(&neighbor_weight.t());
            for (v, open) in neighbors.iter().enumerate() {
                if open.is_empty() {
                    continue;
                }
                let scale = 1.0 / open.len() as f64;
                for &u in open {
                    dx.row_mut(u).scaled_add(scale, &dmean.row(v));
                }
            }
            (
                dx,
                LayerParams::Sage {
                    self_weight: d_self,
                    neighbor_weight: d_nbr,
                },
            )
        }
    }
}

/// One GCN layer: `act(mean_{u ∈ N(v) ∪ {v}} x_u · θ)`.
pub fn gcn_layer(
    neighbors: &[Vec<usize>],
    x: ArrayView2<f64>,
    weight: &Array2<f64>,
    activation: Activation,
) -> Result<Array2<f64>> {
    let layer = LayerParams::Gcn {
        weight: weight.clone(),
    };
    Ok(layer_forward(
        neighbors,
        x,
        &layer,
        activation,
        EncoderParams::DEFAULT_ATTENTION_SLOPE,
    )?
    .0)
}

/// One single-head GAT layer.
pub fn gat_layer(
    neighbors: &[Vec<usize>],
    x: ArrayView2<f64>,
    weight: &Array2<f64>,
    attention: &Array1<f64>,
    attention_slope: f64,
    activation: Activation,
) -> Result<Array2<f64>> {
    if attention.len() != 2 * weight.nrows() {
        return Err(shape_err(format!(
            "attention vector has length {}, expected {}",
            attention.len(),
            2 * weight.nrows()
        )));
    }
    let layer = LayerParams::Gat {
        weight: weight.clone(),
        attention: attention.clone(),
    };
    Ok(layer_forward(neighbors, x, &layer, activation, attention_slope)?.0)
}

/// One GraphSAGE mean-aggregator layer; isolated nodes get a zero neighbor term.
pub fn sage_layer(
    neighbors: &[Vec<usize>],
    x: ArrayView2<f64>,
    self_weight: &Array2<f64>,
    neighbor_weight: &Array2<f64>,
    activation: Activation,
) -> Result<Array2<f64>> {
    if self_weight.dim() != neighbor_weight.dim() {
        return Err(shape_err("self and neighbor weights differ in shape"));
    }
    let layer = LayerParams::Sage {
        self_weight: self_weight.clone(),
        neighbor_weight: neighbor_weight.clone(),
    };
    Ok(layer_forward(
        neighbors,
        x,
        &layer,
        activation,
        EncoderParams::DEFAULT_ATTENTION_SLOPE,
    )?
    .0)
}

/// Runs every layer of `params` over `x`.
pub fn encode(
    neighbors: &[Vec<usize>],
    x: ArrayView2<f64>,
    params: &EncoderParams,
) -> Result<Array2<f64>> {
    let mut pass = EncoderPass::new(neighbors, params);
    pass.forward(x)
}

/// A forward/backward pair over a fixed parameter snapshot.
///
/// The activation cache lives in the pass, so concurrent passes over the same
/// parameters do not interfere.
#[derive(Debug)]
pub struct EncoderPass<'a> {
    neighbors: &'a [Vec<usize>],
    params: &'a EncoderParams,
    cache: Option<Vec<LayerCache>>,
}

impl<'a> EncoderPass<'a> {
    pub fn new(neighbors: &'a [Vec<usize>], params: &'a EncoderParams) -> Self {
        EncoderPass {
            neighbors,
            params,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.params.validate()?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(HgtError::NaN("encoder input".into()));
        }
        let mut caches = Vec::with_capacity(self.params.depth());
        let mut cur = x.to_owned();
        for layer in &self.params.layers {
            let (out, cache) = layer_forward(
                self.neighbors,
                cur.view(),
                layer,
                self.params.activation,
                self.params.attention_slope,
            )?;
            caches.push(cache);
            cur = out;
        }
        self.cache = Some(caches);
        Ok(cur)
    }

    /// Gradients w.r.t. the input table and every parameter, given `dL/d(output)`.
    pub fn backward(&self, dout: ArrayView2<f64>) -> Result<(Array2<f64>, EncoderParams)> {
        let caches = self
            .cache
            .as_ref()
            .ok_or_else(|| HgtError::State("encoder backward called before forward".into()))?;
        let last = &caches[caches.len() - 1];
        if dout.dim() != last.pre.dim() {
            return Err(shape_err(format!(
                "upstream gradient {:?} vs output {:?}",
                dout.dim(),
                last.pre.dim()
            )));
        }
        let mut grads = self.params.zeros_like();
        let mut g = dout.to_owned();
        for (i, (layer, cache)) in self.params.layers.iter().zip(caches).enumerate().rev() {
            let (dx, dl) = layer_backward(
                self.neighbors,
                layer,
                cache,
                self.params.activation,
                self.params.attention_slope,
                g.view(),
            );
            grads.layers[i] = dl;
            g = dx;
        }
        Ok((g, grads))
    }
}

/// Sum of squared entries of every gradient tensor, mostly for diagnostics.
pub fn grad_norm_sq(p: &EncoderParams) -> f64 {
    p.layers
        .iter()
        .flat_map(|l| {
            l.blocks()
                .into_iter()
                .map(|(_, b)| b.iter().map(|v| v * v).sum::<f64>())
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path3() -> Vec<Vec<usize>> {
        vec![vec![1], vec![0, 2], vec![1]]
    }

    #[test]
    fn gcn_single_node_identity() {
        let x = array![[0.3, -0.7]];
        let out = gcn_layer(&[vec![]], x.view(), &Array2::eye(2), Activation::Identity).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn gcn_path_scalars() {
        // closed-neighborhood means: (1+2)/2, (1+2+3)/3, (2+3)/2
        let x = array![[1.0], [2.0], [3.0]];
        let out = gcn_layer(&path3(), x.view(), &array![[1.0]], Activation::Identity).unwrap();
        for (o, e) in out.iter().zip([1.5, 2.0, 2.5]) {
            assert!((o - e).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weights_annihilate() {
        let x = array![[1.0, -2.0], [0.5, 4.0], [3.0, 1.0]];
        let z = Array2::zeros((2, 2));
        let g = gcn_layer(&path3(), x.view(), &z, Activation::Relu).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let s = sage_layer(&path3(), x.view(), &z, &z, Activation::Relu).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gat_isolated_node_is_linear_map() {
        let x = array![[0.4, -1.0]];
        let w = array![[1.0, 2.0], [0.5, -1.0]];
        let a = array![0.3, -0.2, 0.9, 0.1];
        let out = gat_layer(&[vec![]], x.view(), &w, &a, 0.2, Activation::Relu).unwrap();
        let expect = x.dot(&w).mapv(|v: f64| v.max(0.0));
        assert_eq!(out, expect);
    }

    #[test]
    fn sage_path_scalars() {
        // open-neighborhood means: 2, (1+3)/2, 2
        let x = array![[1.0], [2.0], [3.0]];
        let one = array![[1.0]];
        let out = sage_layer(&path3(), x.view(), &one, &one, Activation::Identity).unwrap();
        assert_eq!(out.column(0).to_vec(), vec![3.0, 4.0, 5.0]);
        let lone = sage_layer(
            &[vec![]],
            array![[7.0]].view(),
            &one,
            &one,
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(lone[[0, 0]], 7.0);
    }

    #[test]
    fn two_gcn_layers_on_path() {
        let p = EncoderParams {
            activation: Activation::Identity,
            attention_slope: 0.2,
            layers: vec![
                LayerParams::Gcn {
                    weight: array![[1.0]]
                };
                2
            ],
        };
        let out = encode(&path3(), array![[1.0], [2.0], [3.0]].view(), &p).unwrap();
        for (o, e) in out.iter().zip([1.75, 2.0, 2.25]) {
            assert!((o - e).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert!(matches!(
            gcn_layer(&path3(), x.view(), &Array2::eye(2), Activation::Identity),
            Err(HgtError::Shape(_))
        ));
        assert!(matches!(
            gcn_layer(
                &[vec![1], vec![0]],
                x.view(),
                &Array2::eye(3),
                Activation::Identity
            ),
            Err(HgtError::Shape(_))
        ));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = EncoderParams::init(
            Variant::Gat,
            2,
            3,
            Activation::LeakyRelu(0.2),
            Init::Uniform,
            &mut rng,
        );
        let nb = path3();
        let pass = EncoderPass::new(&nb, &p);
        assert!(matches!(
            pass.backward(Array2::zeros((3, 3)).view()),
            Err(HgtError::State(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for variant in Variant::ALL {
            let p = EncoderParams::init(
                variant,
                3,
                3,
                Activation::LeakyRelu(0.2),
                Init::Uniform,
                &mut rng,
            );
            let nb = path3();
            let mut pass = EncoderPass::new(&nb, &p);
            let x = array![[0.1, 0.2, 0.3], [-0.4, 0.5, 0.6], [0.7, -0.8, 0.9]];
            pass.forward(x.view()).unwrap();
            let (dx, g) = pass.backward(Array2::zeros((3, 3)).view()).unwrap();
            assert!(dx.iter().all(|&v| v == 0.0));
            assert_eq!(grad_norm_sq(&g), 0.0);
        }
    }

    #[test]
    fn identity_gcn_weight_gradient_closed_form() {
        // dL/dθ = (Â x)ᵀ · upstream
        let x = array![[1.0, 0.5], [2.0, -1.0], [3.0, 0.0]];
        let up = array![[0.2, -0.1], [0.7, 0.3], [-0.5, 1.0]];
        let p = EncoderParams {
            activation: Activation::Identity,
            attention_slope: 0.2,
            layers: vec![LayerParams::Gcn {
                weight: array![[0.9, 0.1], [-0.3, 1.2]],
            }],
        };
        let nb = path3();
        let mut pass = EncoderPass::new(&nb, &p);
        pass.forward(x.view()).unwrap();
        let (_, g) = pass.backward(up.view()).unwrap();
        let a_hat = array![
            [0.5, 0.5, 0.0],
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [0.0, 0.5, 0.5]
        ];
        let expect = a_hat.dot(&x).t().dot(&up);
        let LayerParams::Gcn { weight } = &g.layers[0] else {
            unreachable!()
        };
        for (a, b) in weight.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn validate_rejects_bad_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = EncoderParams::init(
            Variant::Gat,
            1,
            2,
            Activation::LeakyRelu(0.2),
            Init::Uniform,
            &mut rng,
        );
        p.attention_slope = 1.5;
        assert!(p.validate().is_err());
        p.attention_slope = 0.2;
        p.layers.clear();
        assert!(p.validate().is_err());
    }
}
