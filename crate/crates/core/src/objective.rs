//! Per-level logits, the two CLIP-compatible probability strategies and the
//! weighted multi-level cross-entropy.
//!
//! A per-level linear-classifier head is not offered: similarity-based models
//! have no per-level linear layers to attach it to.

use ndarray::{Array1, ArrayView1};

use crate::error::{shape_err, HgtError, Result};
use crate::fusion::LogitsBundle;
use crate::hierarchy::Taxonomy;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Independent softmax within each level.
    #[default]
    MultiLabel,
    /// Softmax over leaves, summed up the tree for coarser levels.
    Marginalization,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::MultiLabel => "multi_label",
            Strategy::Marginalization => "marginalization",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = HgtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi_label" | "multi-label" => Ok(Strategy::MultiLabel),
            "marginalization" | "marginalisation" => Ok(Strategy::Marginalization),
            other => Err(HgtError::Range(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub level_weights: Vec<f64>,
    pub strategy: Strategy,
    /// Fixed multiplier applied to similarity scores inside the softmax
    /// (CLIP's logit scale). Does not change any argmax.
    pub logit_scale: f64,
}

impl LossConfig {
    pub const DEFAULT_LOGIT_SCALE: f64 = 100.0;

    /// `w = [1, …, 1, 2]`: the finest level counts double.
    pub fn default_for_levels(h: usize) -> Self {
        let mut w = vec![1.0; h];
        if let Some(last) = w.last_mut() {
            *last = 2.0;
        }
        LossConfig {
            level_weights: w,
            strategy: Strategy::MultiLabel,
            logit_scale: Self::DEFAULT_LOGIT_SCALE,
        }
    }

    pub fn validate(&self, h: usize) -> Result<()> {
        if self.level_weights.len() != h {
            return Err(shape_err(format!(
                "{} level weights for {h} levels",
                self.level_weights.len()
            )));
        }
        if !self.level_weights.iter().all(|&w| w > 0.0 && w.is_finite()) {
            return Err(HgtError::Range("level weights must be positive".into()));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(HgtError::Range("logit scale must be positive".into()));
        }
        Ok(())
    }
}

/// Splits the score vector into one slice per level.
pub fn partition(b: &LogitsBundle) -> Result<Vec<Array1<f64>>> {
    let mut expected = 0;
    for r in &b.level_ranges {
        if r.start != expected || r.end < r.start {
            return Err(shape_err("level ranges are not contiguous"));
        }
        expected = r.end;
    }
    if expected != b.scores.len() {
        return Err(shape_err(format!(
            "level ranges cover {expected} scores, bundle has {}",
            b.scores.len()
        )));
    }
    Ok(b.level_ranges
        .iter()
        .map(|r| b.scores.slice(ndarray::s![r.clone()]).to_owned())
        .collect())
}

/// Independent softmax inside every level.
pub fn multi_label_probs(levels: &[Array1<f64>]) -> Vec<Array1<f64>> {
    levels.iter().map(|z| linalg::softmax(z.view())).collect()
}

/// Per-level probabilities from a distribution over leaves.
///
/// A node's probability is the total mass of the leaves below it.
pub fn marginalize(leaf_probs: ArrayView1<f64>, taxonomy: &Taxonomy) -> Result<Vec<Array1<f64>>> {
    let h = taxonomy.levels();
    let sizes = taxonomy.level_sizes();
    if leaf_probs.len() != sizes[h - 1] {
        return Err(HgtError::Prob(format!(
            "{} leaf probabilities for {} leaves",
            leaf_probs.len(),
            sizes[h - 1]
        )));
    }
    if !leaf_probs.iter().all(|&p| p >= 0.0 && p.is_finite()) {
        return Err(HgtError::Prob(
            "leaf probabilities must be finite and nonnegative".into(),
        ));
    }
    let total = linalg::pairwise_sum(&leaf_probs.to_vec());
    if (total - 1.0).abs() > 1e-9 {
        return Err(HgtError::Prob(format!("leaf probabilities sum to {total}")));
    }
    let mut out = vec![Array1::zeros(0); h];
    out[h - 1] = leaf_probs.to_owned();
    for l in (0..h - 1).rev() {
        let mut acc = Array1::zeros(sizes[l]);
        for (c, &p) in taxonomy.parents(l + 1).iter().enumerate() {
            acc[p] += out[l + 1][c];
        }
        out[l] = acc;
    }
    Ok(out)
}

/// Per-level probabilities of a bundle under its strategy, with scores multiplied by `scale`.
pub fn level_probabilities(
    b: &LogitsBundle,
    taxonomy: &Taxonomy,
    scale: f64,
) -> Result<Vec<Array1<f64>>> {
    let levels: Vec<Array1<f64>> = partition(b)?.into_iter().map(|z| z * scale).collect();
    match b.strategy {
        Strategy::MultiLabel => Ok(multi_label_probs(&levels)),
        Strategy::Marginalization => {
            let leaf = linalg::softmax(levels[levels.len() - 1].view());
            marginalize(leaf.view(), taxonomy)
        }
    }
}

fn argmax(x: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Per-level argmax predictions (indices within each level).
pub fn predict(b: &LogitsBundle, taxonomy: &Taxonomy) -> Result<Vec<usize>> {
    match b.strategy {
        Strategy::MultiLabel => Ok(partition(b)?.iter().map(|z| argmax(z.view())).collect()),
        Strategy::Marginalization => Ok(level_probabilities(b, taxonomy, 1.0)?
            .iter()
            .map(|p| argmax(p.view()))
            .collect()),
    }
}

/// Loss value, per-level cross-entropies and `dL/dscores`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub per_level: Vec<f64>,
    pub grad: Array1<f64>,
}

/// `Σ_i w_i · CE(GT_i, logits_i)` and its gradient w.r.t. the raw scores.
pub fn hier_loss(
    b: &LogitsBundle,
    gt: &[usize],
    taxonomy: &Taxonomy,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    let h = taxonomy.levels();
    cfg.validate(h)?;
    if gt.len() != h {
        return Err(shape_err(format!(
            "label path of length {} for {h} levels",
            gt.len()
        )));
    }
    let sizes = taxonomy.level_sizes();
    if let Some(l) = (0..h).find(|&l| gt[l] >= sizes[l]) {
        return Err(HgtError::Data(format!(
            "label {} out of range at level {}",
            gt[l],
            l + 1
        )));
    }
    let levels = partition(b)?;
    let s = cfg.logit_scale;
    let mut grad = Array1::zeros(b.scores.len());
    let mut per_level = Vec::with_capacity(h);

    match b.strategy {
        Strategy::MultiLabel => {
            for (l, z) in levels.iter().enumerate() {
                let zs = z * s;
                let ce = linalg::log_sum_exp(zs.view()) - zs[gt[l]];
                let mut g = linalg::softmax(zs.view());
                g[gt[l]] -= 1.0;
                let w = cfg.level_weights[l];
                let r = b.level_ranges[l].clone();
                grad.slice_mut(ndarray::s![r]).scaled_add(w * s, &g);
                per_level.push(ce);
            }
        }
        Strategy::Marginalization => {
            if !taxonomy.is_consistent_path(gt) {
                return Err(HgtError::Data(format!(
                    "label path {gt:?} is not a tree path"
                )));
            }
            let leaf_z = &levels[h - 1] * s;
            let p = linalg::softmax(leaf_z.view());
            let probs = marginalize(p.view(), taxonomy)?;
            let n_leaves = sizes[h - 1];
            let ancestors: Vec<Vec<usize>> =
                (0..n_leaves).map(|j| taxonomy.ancestor_path(j)).collect();
            let mut g_leaf = Array1::<f64>::zeros(n_leaves);
            for l in 0..h {
                let mass = probs[l][gt[l]];
                if !(mass > 0.0) {
                    return Err(HgtError::Prob(format!(
                        "zero marginal probability at ground-truth node on level {}",
                        l + 1
                    )));
                }
                per_level.push(-mass.ln());
                let w = cfg.level_weights[l];
                for j in 0..n_leaves {
                    let inside = if ancestors[j][l] == gt[l] {
                        p[j] / mass
                    } else {
                        0.0
                    };
                    g_leaf[j] += w * s * (p[j] - inside);
                }
            }
            let r = b.level_ranges[h - 1].clone();
            grad.slice_mut(ndarray::s![r]).assign(&g_leaf);
        }
    }
    let loss = per_level
        .iter()
        .zip(&cfg.level_weights)
        .map(|(ce, w)| w * ce)
        .sum();
    Ok(LossOutput {
        loss,
        per_level,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn bundle(scores: Array1<f64>, sizes: &[usize], strategy: Strategy) -> LogitsBundle {
        let mut ranges = Vec::new();
        let mut start = 0;
        for &k in sizes {
            ranges.push(start..start + k);
            start += k;
        }
        LogitsBundle {
            scores,
            level_ranges: ranges,
            strategy,
        }
    }

    fn four_leaves() -> Taxonomy {
        Taxonomy::parse("#levels 2\n1\tP1\t-\n1\tP2\t-\n2\ta\tP1\n2\tb\tP1\n2\tc\tP2\n2\td\tP2\n")
            .unwrap()
    }

    #[test]
    fn partition_slices() {
        let b = bundle(
            array![1.0, 2.0, 3.0, 4.0, 5.0],
            &[2, 3],
            Strategy::MultiLabel,
        );
        let parts = partition(&b).unwrap();
        assert_eq!(parts, vec![array![1.0, 2.0], array![3.0, 4.0, 5.0]]);
        let one = bundle(array![1.0, 2.0], &[2], Strategy::MultiLabel);
        assert_eq!(partition(&one).unwrap().len(), 1);
        let bad = bundle(array![1.0, 2.0], &[3], Strategy::MultiLabel);
        assert!(matches!(partition(&bad), Err(HgtError::Shape(_))));
    }

    #[test]
    fn cifar_sized_partition() {
        let b = bundle(Array1::zeros(120), &[20, 100], Strategy::MultiLabel);
        let parts = partition(&b).unwrap();
        assert_eq!((parts[0].len(), parts[1].len()), (20, 100));
    }

    #[test]
    fn multi_label_examples() {
        let p = multi_label_probs(&[Array1::from_elem(4, 0.3)]);
        assert!(p[0].iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let q = multi_label_probs(&[array![3f64.ln(), 0.0]]);
        assert!((q[0][0] - 0.75).abs() < 1e-15 && (q[0][1] - 0.25).abs() < 1e-15);
        let a = multi_label_probs(&[array![0.1, 0.9], array![1.0, 2.0, 3.0]]);
        let b = multi_label_probs(&[array![0.1, 0.9], array![3.0, 1.0, 2.0]]);
        assert_eq!(a[0], b[0]);
    }

    #[test]
    fn marginalize_examples() {
        let t = four_leaves();
        let m = marginalize(array![0.3, 0.2, 0.4, 0.1].view(), &t).unwrap();
        assert!((m[0][0] - 0.5).abs() < 1e-15 && (m[0][1] - 0.5).abs() < 1e-15);
        let one_hot = marginalize(array![0.0, 0.0, 1.0, 0.0].view(), &t).unwrap();
        assert_eq!(one_hot[0], array![0.0, 1.0]);
        assert!(matches!(
            marginalize(array![0.5, 0.5, 0.5, -0.5].view(), &t),
            Err(HgtError::Prob(_))
        ));
        assert!(matches!(
            marginalize(array![0.5, 0.2, 0.2, 0.0].view(), &t),
            Err(HgtError::Prob(_))
        ));
    }

    #[test]
    fn uniform_level_costs_ln_k() {
        let t = Taxonomy::parse("#levels 1\n1\ta\t-\n1\tb\t-\n1\tc\t-\n1\td\t-\n").unwrap();
        let b = bundle(Array1::from_elem(4, 0.7), &[4], Strategy::MultiLabel);
        let cfg = LossConfig {
            level_weights: vec![1.0],
            ..LossConfig::default_for_levels(1)
        };
        let out = hier_loss(&b, &[2], &t, &cfg).unwrap();
        assert!((out.loss - 4f64.ln()).abs() < 1e-12);
        assert!((out.loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn default_weights_double_the_fine_level() {
        let t = four_leaves();
        let cfg = LossConfig::default_for_levels(2);
        assert_eq!(cfg.level_weights, vec![1.0, 2.0]);
        let b = bundle(
            array![0.1, -0.2, 0.3, 0.05, -0.1, 0.2],
            &[2, 4],
            Strategy::MultiLabel,
        );
        let out = hier_loss(&b, &[1, 2], &t, &cfg).unwrap();
        assert!((out.loss - (out.per_level[0] + 2.0 * out.per_level[1])).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_at_ground_truth_is_prob_error() {
        let t = four_leaves();
        let b = bundle(
            array![0.0, 0.0, -1e6, -1e6, 1e6, 0.0],
            &[2, 4],
            Strategy::Marginalization,
        );
        let cfg = LossConfig {
            strategy: Strategy::Marginalization,
            ..LossConfig::default_for_levels(2)
        };
        assert!(matches!(
            hier_loss(&b, &[0, 0], &t, &cfg),
            Err(HgtError::Prob(_))
        ));
    }

    #[test]
    fn predict_by_strategy() {
        let t = four_leaves();
        // level-1 scores favour P1 but the leaf mass favours P2
        let scores = array![5.0, 0.0, 0.30, 0.0, 0.25, 0.25];
        let ml = predict(&bundle(scores.clone(), &[2, 4], Strategy::MultiLabel), &t).unwrap();
        assert_eq!(ml, vec![0, 0]);
        let mg = predict(&bundle(scores, &[2, 4], Strategy::Marginalization), &t).unwrap();
        assert_eq!(mg, vec![1, 0]);
    }
}
