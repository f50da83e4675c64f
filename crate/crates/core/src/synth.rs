//! Seeded hierarchy-aligned Gaussian clusters.
//!
//! Level-1 means are random unit vectors; every child mean is its parent's
//! mean shifted by `offset` along a random unit direction. Each image carries
//! `patches` spatial rows drawn around its leaf mean with per-coordinate
//! noise `sigma`. A class's text feature is one more draw from the same
//! distribution: its mean plus `sigma` noise.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding_store::{ImageFeatures, TextTable};
use crate::error::{HgtError, Result};
use crate::hierarchy::{HierarchySource, Taxonomy};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Children per node, one entry per level; the first entry is the number
    /// of level-1 classes.
    pub branching: Vec<usize>,
    pub dim: usize,
    pub train_per_leaf: usize,
    pub test_per_leaf: usize,
    pub patches: usize,
    pub sigma: f64,
    pub offset: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            branching: vec![4, 3],
            dim: 16,
            train_per_leaf: 40,
            test_per_leaf: 20,
            patches: 16,
            sigma: 0.35,
            offset: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn levels(&self) -> usize {
        self.branching.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.branching.len() < 2 {
            return Err(HgtError::Range(
                "synthetic data needs at least 2 levels".into(),
            ));
        }
        if self.branching.iter().any(|&b| b < 2) {
            return Err(HgtError::Range(
                "every branching factor must be at least 2".into(),
            ));
        }
        if self.dim == 0 || self.patches == 0 || self.train_per_leaf == 0 {
            return Err(HgtError::Range(
                "dim, patches and train_per_leaf must be positive".into(),
            ));
        }
        for (name, v) in [("sigma", self.sigma), ("offset", self.offset)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(HgtError::Range(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub taxonomy: Taxonomy,
    /// Level-major class means, one row per node.
    pub means: Array2<f64>,
    pub text: TextTable,
    pub train: Vec<ImageFeatures>,
    pub test: Vec<ImageFeatures>,
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| StandardNormal.sample(rng))
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    loop {
        let v = gaussian(rng, d);
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn build_taxonomy(branching: &[usize]) -> Result<Taxonomy> {
    let mut names = Vec::with_capacity(branching.len());
    let mut parents = Vec::with_capacity(branching.len());
    let mut width = 1;
    for (l, &b) in branching.iter().enumerate() {
        let prev = width;
        width *= b;
        names.push((0..width).map(|j| format!("l{}_{j}", l + 1)).collect());
        parents.push(if l == 0 {
            Vec::new()
        } else {
            (0..width).map(|j| j / b).collect::<Vec<_>>()
        });
        debug_assert_eq!(width / b, prev);
    }
    Taxonomy::new(names, parents, HierarchySource::GroundTruth)
}

fn sample_images(
    rng: &mut ChaCha8Rng,
    spec: &SynthSpec,
    taxonomy: &Taxonomy,
    leaf_means: &[Array1<f64>],
    per_leaf: usize,
) -> Result<Vec<ImageFeatures>> {
    let mut out = Vec::with_capacity(per_leaf * leaf_means.len());
    for (leaf, mean) in leaf_means.iter().enumerate() {
        for _ in 0..per_leaf {
            let mut spatial = Array2::zeros((spec.patches, spec.dim));
            for mut row in spatial.rows_mut() {
                let noise = gaussian(rng, spec.dim);
                row.assign(&(mean + &(noise * spec.sigma)));
            }
            out.push(ImageFeatures::new(spatial, taxonomy.ancestor_path(leaf))?);
        }
    }
    Ok(out)
}

/// Generates taxonomy, text table, train and test images from one seed.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let taxonomy = build_taxonomy(&spec.branching)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;

    let mut levels: Vec<Vec<Array1<f64>>> = Vec::with_capacity(spec.levels());
    levels.push((0..spec.branching[0]).map(|_| unit(&mut rng, d)).collect());
    for l in 1..spec.levels() {
        let row: Vec<Array1<f64>> = taxonomy
            .parents(l)
            .iter()
            .map(|&p| &levels[l - 1][p] + &(unit(&mut rng, d) * spec.offset))
            .collect();
        levels.push(row);
    }

    let k = taxonomy.node_count();
    let mut means = Array2::zeros((k, d));
    let mut text = Array2::zeros((k, d));
    for (v, m) in levels.iter().flatten().enumerate() {
        means.row_mut(v).assign(m);
        text.row_mut(v)
            .assign(&(m + &(gaussian(&mut rng, d) * spec.sigma)));
    }

    let leaves = levels.last().expect("at least two levels");
    let train = sample_images(&mut rng, spec, &taxonomy, leaves, spec.train_per_leaf)?;
    let test = sample_images(&mut rng, spec, &taxonomy, leaves, spec.test_per_leaf)?;
    Ok(SynthData {
        taxonomy,
        means,
        text: TextTable::new(text)?,
        train,
        test,
    })
}
