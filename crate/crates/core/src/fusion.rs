//! Prototype attention fusion and the λ-weighted logit combination.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{shape_err, HgtError, Result};
use crate::linalg;
use crate::objective::Strategy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Softmax temperature applied to the attention map.
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl FusionConfig {
    pub const DEFAULT_LAMBDA1: f64 = 1.0;
    pub const DEFAULT_LAMBDA2: f64 = 0.2;

    /// Defaults for embedding width `dim`: α = 1/√D, λ1 = 1, λ2 = 0.2.
    pub fn for_dim(dim: usize) -> Self {
        FusionConfig {
            alpha: 1.0 / (dim as f64).sqrt(),
            lambda1: Self::DEFAULT_LAMBDA1,
            lambda2: Self::DEFAULT_LAMBDA2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(HgtError::Range(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(HgtError::Range(
                "lambda1 and lambda2 must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Scores for all `K` nodes plus the level layout needed to split them.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsBundle {
    pub scores: Array1<f64>,
    pub level_ranges: Vec<Range<usize>>,
    pub strategy: Strategy,
}

/// `ψ = spatial · protosᵀ`, shape `(M+v) × K`.
pub fn attention_map(spatial: ArrayView2<f64>, protos: ArrayView2<f64>) -> Result<Array2<f64>> {
    if spatial.ncols() != protos.ncols() {
        return Err(shape_err(format!(
            "spatial width {} vs prototype width {}",
            spatial.ncols(),
            protos.ncols()
        )));
    }
    Ok(spatial.dot(&protos.t()))
}

/// Row-wise `softmax(ψ / α)`.
pub fn attention_weights(psi: ArrayView2<f64>, alpha: f64) -> Array2<f64> {
    linalg::softmax_rows(psi.mapv(|v| v / alpha).view())
}

/// `softmax(ψ/α) · protos`: each fused row is a convex combination of prototypes.
pub fn attend(psi: ArrayView2<f64>, protos: ArrayView2<f64>, alpha: f64) -> Result<Array2<f64>> {
    if psi.ncols() != protos.nrows() {
        return Err(shape_err(format!(
            "attention map has {} columns for {} prototypes",
            psi.ncols(),
            protos.nrows()
        )));
    }
    if !(alpha > 0.0) {
        return Err(HgtError::Range(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    Ok(attention_weights(psi, alpha).dot(&protos))
}

/// Gradients of [`attend`] w.r.t. `ψ` and the prototypes.
pub fn attend_backward(
    weights: ArrayView2<f64>,
    protos: ArrayView2<f64>,
    alpha: f64,
    dfused: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let dprotos = weights.t().dot(&dfused);
    let dweights = dfused.dot(&protos.t());
    let dpsi = linalg::softmax_rows_backward(weights, dweights.view()) / alpha;
    (dpsi, dprotos)
}

/// Gradients of [`attention_map`] w.r.t. the spatial rows and the prototypes.
pub fn attention_map_backward(
    spatial: ArrayView2<f64>,
    protos: ArrayView2<f64>,
    dpsi: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    (dpsi.dot(&protos), dpsi.t().dot(&spatial))
}

/// `λ1 · f̃_v F̂_tᵀ + λ2 · f̂_v F̂_tᵀ`. A missing fused feature drops the λ2 term.
pub fn combine_logits(
    global_prompted: ArrayView1<f64>,
    global_fused: Option<ArrayView1<f64>>,
    text_hat: ArrayView2<f64>,
    cfg: &FusionConfig,
    level_ranges: &[Range<usize>],
    strategy: Strategy,
) -> Result<LogitsBundle> {
    let d = text_hat.ncols();
    if global_prompted.len() != d || global_fused.is_some_and(|g| g.len() != d) {
        return Err(shape_err(format!(
            "global feature width differs from text width {d}"
        )));
    }
    if level_ranges.last().map(|r| r.end) != Some(text_hat.nrows()) {
        return Err(shape_err("level ranges do not cover the text table"));
    }
    let mut scores = text_hat.dot(&global_prompted) * cfg.lambda1;
    if let Some(fused) = global_fused {
        scores.scaled_add(cfg.lambda2, &text_hat.dot(&fused));
    }
    if !scores.iter().all(|v| v.is_finite()) {
        return Err(HgtError::NaN("logits".into()));
    }
    Ok(LogitsBundle {
        scores,
        level_ranges: level_ranges.to_vec(),
        strategy,
    })
}
