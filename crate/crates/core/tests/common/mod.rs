#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries uniform in `[0, 1)`.
pub fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.random::<f64>())
}

pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.sample(StandardNormal))
}

pub fn normal_vector(n: usize, r: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| r.sample(StandardNormal))
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn rel_frobenius(a: &Array2<f64>, reference: &Array2<f64>) -> f64 {
    frobenius(&(a - reference)) / frobenius(reference).max(f64::MIN_POSITIVE)
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Gauss-Jordan elimination with partial pivoting; independent of the
/// crate's Cholesky path.
pub fn gauss_solve(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    let m = b.ncols();
    let mut aug = Array2::zeros((n, n + m));
    for i in 0..n {
        for j in 0..n {
            aug[[i, j]] = a[[i, j]];
        }
        for j in 0..m {
            aug[[i, n + j]] = b[[i, j]];
        }
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[[x, col]].abs().total_cmp(&aug[[y, col]].abs()))
            .unwrap();
        assert!(aug[[pivot, col]].abs() > 1e-300, "singular oracle system");
        if pivot != col {
            for j in 0..n + m {
                aug.swap([pivot, j], [col, j]);
            }
        }
        let diag = aug[[col, col]];
        for j in 0..n + m {
            aug[[col, j]] /= diag;
        }
        for i in 0..n {
            if i != col {
                let f = aug[[i, col]];
                if f != 0.0 {
                    for j in 0..n + m {
                        aug[[i, j]] -= f * aug[[col, j]];
                    }
                }
            }
        }
    }
    Array2::from_shape_fn((n, m), |(i, j)| aug[[i, n + j]])
}

/// Column means of `rows` of `x`.
pub fn mean_of_rows(x: &Array2<f64>, rows: &[usize]) -> Array1<f64> {
    let mut m = Array1::zeros(x.ncols());
    for &r in rows {
        m += &x.row(r);
    }
    m / rows.len() as f64
}

/// Central finite-difference gradient of `f` at `w`.
pub fn finite_difference(w: &Array2<f64>, h: f64, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(w.dim());
    let mut probe = w.clone();
    for idx in ndarray::indices(w.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        g[idx] = (up - down) / (2.0 * h);
    }
    g
}
