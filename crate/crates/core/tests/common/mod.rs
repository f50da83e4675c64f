#![allow(dead_code)]

pub mod grad;
pub mod oracle;

use hgt_core::{HierarchySource, Taxonomy};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, bound: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.random_range(-bound..bound))
}

/// Undirected simple graph on `n` nodes as sorted neighbor lists; isolated nodes allowed.
pub fn random_graph(rng: &mut impl Rng, n: usize, p: f64) -> Vec<Vec<usize>> {
    let mut nb = vec![Vec::new(); n];
    for v in 0..n {
        for u in v + 1..n {
            if rng.random_bool(p) {
                nb[v].push(u);
                nb[u].push(v);
            }
        }
    }
    nb
}

pub fn dense_adjacency(nb: &[Vec<usize>]) -> Array2<f64> {
    let n = nb.len();
    let mut a = Array2::zeros((n, n));
    for (v, list) in nb.iter().enumerate() {
        for &u in list {
            a[[v, u]] = 1.0;
        }
    }
    a
}

/// Random valid taxonomy with `levels` levels; every non-leaf node has a child.
pub fn random_taxonomy(rng: &mut impl Rng, levels: usize, max_width: usize) -> Taxonomy {
    let mut names = Vec::new();
    let mut parents = Vec::new();
    let mut width = rng.random_range(1..=max_width.min(4));
    for l in 0..levels {
        names.push((0..width).map(|j| format!("n{l}_{j}")).collect::<Vec<_>>());
        if l == 0 {
            parents.push(Vec::new());
        } else {
            let prev = names[l - 1].len();
            let mut ps: Vec<usize> = (0..prev).collect();
            while ps.len() < width {
                ps.push(rng.random_range(0..prev));
            }
            ps.shuffle(rng);
            parents.push(ps);
        }
        if l + 1 < levels {
            width = rng.random_range(width..=max_width.max(width));
        }
    }
    Taxonomy::new(names, parents, HierarchySource::GroundTruth).unwrap()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}
