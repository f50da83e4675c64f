//! Central finite-difference verification of the analytic backward pass.

use super::{ModelState, Params, Pipeline};
use crate::embedding_store::ImageFeatures;
use crate::error::Result;

/// Finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-4;
/// Blocks whose max relative error exceeds this are flagged.
pub const FLAG_THRESHOLD: f64 = 1e-3;
/// Denominator floor of the relative error, so entries that are zero on both
/// sides compare by absolute difference.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub len: usize,
    pub max_rel_err: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
    pub flagged: bool,
}

impl BlockReport {
    /// True when either gradient has a visibly nonzero entry.
    pub fn active(&self) -> bool {
        self.max_abs_analytic > 1e-12 || self.max_abs_numeric > 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub blocks: Vec<BlockReport>,
    pub threshold: f64,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn flagged(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| b.flagged)
            .map(|b| b.name.as_str())
            .collect()
    }

    pub fn active_blocks(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| b.active())
            .map(|b| b.name.as_str())
            .collect()
    }

    /// Plain-text table, one block per line.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<36} {:>6} {:>12} {:>12} {}\n",
            "block", "size", "max_rel_err", "max|grad|", "status"
        );
        for b in &self.blocks {
            let status = if b.flagged {
                "FLAGGED"
            } else if b.active() {
                "ok"
            } else {
                "inactive"
            };
            out.push_str(&format!(
                "{:<36} {:>6} {:>12.3e} {:>12.3e} {}\n",
                b.name, b.len, b.max_rel_err, b.max_abs_analytic, status
            ));
        }
        out
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Central differences of `f` w.r.t. every parameter entry.
pub fn numeric_gradient(
    params: &Params,
    step: f64,
    f: impl Fn(&Params) -> Result<f64>,
) -> Result<Params> {
    let mut grads = params.zeros_like();
    let mut probe = params.clone();
    let n_blocks = params.blocks().len();
    for b in 0..n_blocks {
        let len = params.blocks()[b].values.len();
        for i in 0..len {
            let orig = probe.blocks()[b].values[i];
            probe.blocks_mut()[b].values[i] = orig + step;
            let up = f(&probe)?;
            probe.blocks_mut()[b].values[i] = orig - step;
            let down = f(&probe)?;
            probe.blocks_mut()[b].values[i] = orig;
            grads.blocks_mut()[b].values[i] = (up - down) / (2.0 * step);
        }
    }
    Ok(grads)
}

/// Per-block comparison of two gradient sets with identical layout.
pub fn compare_gradients(analytic: &Params, numeric: &Params, threshold: f64) -> GradReport {
    let blocks = analytic
        .blocks()
        .into_iter()
        .zip(numeric.blocks())
        .map(|(a, n)| {
            let mut max_rel = 0.0f64;
            let mut max_a = 0.0f64;
            let mut max_n = 0.0f64;
            for (&x, &y) in a.values.iter().zip(n.values) {
                max_rel = max_rel.max(rel_err(x, y));
                max_a = max_a.max(x.abs());
                max_n = max_n.max(y.abs());
            }
            BlockReport {
                name: a.name,
                len: a.values.len(),
                max_rel_err: max_rel,
                max_abs_analytic: max_a,
                max_abs_numeric: max_n,
                flagged: max_rel > threshold,
            }
        })
        .collect();
    GradReport { blocks, threshold }
}

/// Compares the pipeline's analytic gradient of the mean loss over `samples`
/// with central finite differences. Prototypes are held fixed, as in training.
pub fn gradcheck(
    pipeline: &Pipeline<'_>,
    state: &ModelState,
    samples: &[ImageFeatures],
) -> Result<GradReport> {
    let batch: Vec<&ImageFeatures> = samples.iter().collect();
    let (_, analytic) = pipeline.loss_and_grad(state, &batch)?;
    let numeric = numeric_gradient(&state.params, DEFAULT_STEP, |p| {
        pipeline.loss_with_params(p, state.prototypes.as_ref(), &batch)
    })?;
    Ok(compare_gradients(&analytic, &numeric, FLAG_THRESHOLD))
}
