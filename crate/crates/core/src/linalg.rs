//! Dense row-wise kernels shared by the forward and backward passes.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{HgtError, Result};

/// Norms below this are treated as zero vectors.
pub const NORM_EPS: f64 = 1e-12;

pub fn l2_norm(x: ArrayView1<f64>) -> f64 {
    x.dot(&x).sqrt()
}

/// Returns `x / |x|` together with `|x|`.
pub fn normalize(x: ArrayView1<f64>) -> Result<(Array1<f64>, f64)> {
    let n = l2_norm(x);
    if !(n > NORM_EPS) {
        return Err(HgtError::Normalization { row: 0 });
    }
    Ok((x.mapv(|v| v / n), n))
}

/// Gradient of `y = x/|x|` given `y`, `|x|` and `dL/dy`.
pub fn normalize_backward(y: ArrayView1<f64>, norm: f64, dy: ArrayView1<f64>) -> Array1<f64> {
    let proj = y.dot(&dy);
    (&dy - &(&y * proj)) / norm
}

pub fn normalize_rows(x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut out = x.to_owned();
    let mut norms = Array1::zeros(x.nrows());
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let n = l2_norm(row.view());
        if !(n > NORM_EPS) {
            return Err(HgtError::Normalization { row: i });
        }
        row.mapv_inplace(|v| v / n);
        norms[i] = n;
    }
    Ok((out, norms))
}

pub fn normalize_rows_backward(
    y: ArrayView2<f64>,
    norms: ArrayView1<f64>,
    dy: ArrayView2<f64>,
) -> Array2<f64> {
    let mut dx = Array2::zeros(y.raw_dim());
    for i in 0..y.nrows() {
        let g = normalize_backward(y.row(i), norms[i], dy.row(i));
        dx.row_mut(i).assign(&g);
    }
    dx
}

/// Softmax over one vector with max subtraction.
pub fn softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e = z.mapv(|v| (v - m).exp());
    let s: f64 = e.sum();
    e.mapv_inplace(|v| v / s);
    e
}

/// `log(sum(exp(z)))`, stabilized.
pub fn log_sum_exp(z: ArrayView1<f64>) -> f64 {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_rows(z: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(z.raw_dim());
    for (i, row) in z.axis_iter(Axis(0)).enumerate() {
        out.row_mut(i).assign(&softmax(row));
    }
    out
}

/// Gradient through a row-wise softmax: `dz = s * (ds - <s, ds>)`.
pub fn softmax_rows_backward(s: ArrayView2<f64>, ds: ArrayView2<f64>) -> Array2<f64> {
    let mut dz = Array2::zeros(s.raw_dim());
    for i in 0..s.nrows() {
        let dot = s.row(i).dot(&ds.row(i));
        let row = &s.row(i) * &(&ds.row(i) - dot);
        dz.row_mut(i).assign(&row);
    }
    dz
}

pub fn mean_rows(x: ArrayView2<f64>) -> Result<Array1<f64>> {
    if x.nrows() == 0 {
        return Err(HgtError::EmptyInput("mean over zero rows".into()));
    }
    let mut acc = Array1::zeros(x.ncols());
    for row in x.axis_iter(Axis(0)) {
        acc += &row;
    }
    Ok(acc / x.nrows() as f64)
}

/// Pairwise (cascade) summation of scalars; result does not depend on thread scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Pairwise reduction of an ordered list of items with a binary `add`.
pub fn pairwise_reduce<T: Clone>(items: &[T], add: &impl Fn(&T, &T) -> T) -> Option<T> {
    match items.len() {
        0 => None,
        1 => Some(items[0].clone()),
        n => {
            let (a, b) = items.split_at(n / 2);
            let left = pairwise_reduce(a, add)?;
            let right = pairwise_reduce(b, add)?;
            Some(add(&left, &right))
        }
    }
}

pub fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_is_overflow_safe() {
        let s = softmax(array![1e4, -1e4, 0.0].view());
        assert!((s.sum() - 1.0).abs() < 1e-15);
        assert_eq!(s[0], 1.0);
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(matches!(
            normalize(array![0.0, 0.0].view()),
            Err(HgtError::Normalization { .. })
        ));
        let m = array![[1.0, 0.0], [0.0, 0.0]];
        assert!(matches!(
            normalize_rows(m.view()),
            Err(HgtError::Normalization { row: 1 })
        ));
    }

    #[test]
    fn normalize_backward_matches_finite_difference() {
        let x = array![0.3, -1.2, 0.7];
        let w = array![0.5, 0.1, -0.9];
        let (y, n) = normalize(x.view()).unwrap();
        let g = normalize_backward(y.view(), n, w.view());
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fp = normalize(xp.view()).unwrap().0.dot(&w);
            let fm = normalize(xm.view()).unwrap().0.dot(&w);
            assert!(((fp - fm) / (2.0 * h) - g[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        assert_eq!(pairwise_sum(&[1.0, 2.0, 3.0, 4.0]), 10.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }
}
