//! LTI recurrent scan, the Krylov/convolutional form, and deterministic
//! operation counting for the kernel precomputation.

use crate::error::{Error, Result};
use crate::ssm::DiscreteSsm;

/// Precomputed convolution kernel and its Krylov matrix.
#[derive(Debug, Clone)]
pub struct KernelBundle {
    /// N x L matrix with column k equal to Abar^k Bbar (row-major N x L).
    pub krylov: Vec<f64>,
    pub n: usize,
    pub l: usize,
    /// Length-L kernel (Cbar Bbar, Cbar Abar Bbar, ...).
    pub kernel: Vec<f64>,
    /// Exact number of scalar multiplications spent building krylov and kernel.
    pub mul_count: u64,
}

/// Run the recurrence h_k = Abar h_{k-1} + Bbar x_k, y_k = Cbar h_k.
/// Returns the output sequence and the final state.
pub fn scan_recurrent(
    sys: &DiscreteSsm,
    x: &[f64],
    h0: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.is_empty() {
        return Err(Error::InvalidDimension("empty input sequence".into()));
    }
    let n = sys.n;
    let mut h = match h0 {
        Some(h0) if h0.len() != n => {
            return Err(Error::ShapeMismatch(format!(
                "h0 length {} != state dim {}",
                h0.len(),
                n
            )))
        }
        Some(h0) => h0.to_vec(),
        None => vec![0.0; n],
    };
    let mut y = Vec::with_capacity(x.len());
    let mut next = vec![0.0; n];
    for &xk in x {
        for i in 0..n {
            let mut s = sys.bbar[i] * xk;
            for j in 0..n {
                s += sys.abar[i * n + j] * h[j];
            }
            next[i] = s;
        }
        std::mem::swap(&mut h, &mut next);
        y.push(h.iter().zip(&sys.cbar).map(|(hi, ci)| hi * ci).sum());
    }
    Ok((y, h))
}

/// Build the Krylov matrix (Bbar, Abar Bbar, ..., Abar^{L-1} Bbar) and
/// the kernel Cbar * Krylov, counting scalar multiplications exactly:
/// N^2 per matrix-vector step (L-1 steps) plus N*L for the final
/// Cbar product.
pub fn build_kernel(sys: &DiscreteSsm, l: usize) -> Result<KernelBundle> {
    if l == 0 {
        return Err(Error::InvalidDimension("kernel length 0".into()));
    }
    let n = sys.n;
    let mut krylov = vec![0.0; n * l];
    let mut mul_count: u64 = 0;
    let mut col = sys.bbar.clone();
    for i in 0..n {
        krylov[i * l] = col[i];
    }
    for k in 1..l {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += sys.abar[i * n + j] * col[j];
                mul_count += 1;
            }
            next[i] = s;
        }
        col = next;
        for i in 0..n {
            krylov[i * l + k] = col[i];
        }
    }
    let mut kernel = vec![0.0; l];
    for k in 0..l {
        let mut s = 0.0;
        for i in 0..n {
            s += sys.cbar[i] * krylov[i * l + k];
            mul_count += 1;
        }
        kernel[k] = s;
    }
    Ok(KernelBundle {
        krylov,
        n,
        l,
        kernel,
        mul_count,
    })
}

/// Causal convolution y_k = sum_i kernel[i] * x[k-i].
pub fn scan_conv(bundle: &KernelBundle, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != bundle.l {
        return Err(Error::LengthMismatch(format!(
            "kernel length {} != sequence length {}",
            bundle.l,
            x.len()
        )));
    }
    let mut y = vec![0.0; x.len()];
    for k in 0..x.len() {
        let mut s = 0.0;
        for i in 0..=k {
            s += bundle.kernel[i] * x[k - i];
        }
        y[k] = s;
    }
    Ok(y)
}
