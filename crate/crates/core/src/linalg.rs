//! Small dense matrix helpers on flat row-major `Vec<f64>` storage.
//! Systems in scope have N <= 64, so plain Gaussian elimination and a
//! scaling-and-squaring exponential are sufficient.

use crate::error::{Error, Result};

/// C = A (n x m) * B (m x k), row-major.
pub fn matmul(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..m {
            let aij = a[i * m + j];
            if aij == 0.0 {
                continue;
            }
            for l in 0..k {
                c[i * k + l] += aij * b[j * k + l];
            }
        }
    }
    c
}

pub fn matvec(a: &[f64], x: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..m {
            s += a[i * m + j] * x[j];
        }
        y[i] = s;
    }
    y
}

pub fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// Solve A X = B for X, where A is n x n and B is n x k, by Gaussian
/// elimination with partial pivoting.
pub fn solve(a: &[f64], b: &[f64], n: usize, k: usize, method: &'static str) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        let mut best = m[col * n + col].abs();
        for r in col + 1..n {
            let v = m[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-300 {
            return Err(Error::SingularMatrix { method });
        }
        if piv != col {
            for j in 0..n {
                m.swap(col * n + j, piv * n + j);
            }
            for j in 0..k {
                x.swap(col * k + j, piv * k + j);
            }
        }
        let d = m[col * n + col];
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[r * n + j] -= f * m[col * n + j];
            }
            for j in 0..k {
                x[r * k + j] -= f * x[col * k + j];
            }
        }
    }
    for i in 0..n {
        let d = m[i * n + i];
        for j in 0..k {
            x[i * k + j] /= d;
        }
    }
    Ok(x)
}

/// Max absolute row sum (induced infinity norm).
pub fn norm_inf(a: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
