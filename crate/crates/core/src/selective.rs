//! Selective (input-dependent) scan: the recurrence with per-step
//! B, C and step size derived from the input, the per-index kernel
//! inspection showing why no single convolution kernel exists, and the
//! gated block built around the scan.

use crate::act;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Projection weights producing input-dependent B, C and step size.
/// The state transition is diagonal per channel: row d of `a` is the
/// diagonal state matrix for channel d.
#[derive(Debug, Clone)]
pub struct SelectiveParams {
    pub d: usize,
    pub n: usize,
    /// D x N per-channel state decay.
    pub a: Vec<f64>,
    /// D x N input projection for B, plus bias of length N.
    pub w_b: Vec<f64>,
    pub bias_b: Vec<f64>,
    /// D x N input projection for C, plus bias of length N.
    pub w_c: Vec<f64>,
    pub bias_c: Vec<f64>,
    /// D x 1 projection for the shared step-size logit, plus scalar bias.
    pub w_delta: Vec<f64>,
    pub bias_delta: f64,
    /// Per-channel step-size parameter added before the softplus.
    pub delta_param: Vec<f64>,
}

impl SelectiveParams {
    pub fn zeros(d: usize, n: usize) -> Self {
        SelectiveParams {
            d,
            n,
            a: vec![0.0; d * n],
            w_b: vec![0.0; d * n],
            bias_b: vec![0.0; n],
            w_c: vec![0.0; d * n],
            bias_c: vec![0.0; n],
            w_delta: vec![0.0; d],
            bias_delta: 0.0,
            delta_param: vec![0.0; d],
        }
    }

    /// Random input-dependent configuration with stable decay.
    pub fn random(rng: &mut Rng, d: usize, n: usize, scale: f64) -> Self {
        let mut p = SelectiveParams::zeros(d, n);
        for v in &mut p.a {
            *v = -rng.uniform(0.2, 2.0);
        }
        for v in &mut p.w_b {
            *v = rng.uniform(-scale, scale);
        }
        for v in &mut p.bias_b {
            *v = rng.uniform(-scale, scale);
        }
        for v in &mut p.w_c {
            *v = rng.uniform(-scale, scale);
        }
        for v in &mut p.bias_c {
            *v = rng.uniform(-scale, scale);
        }
        for v in &mut p.w_delta {
            *v = rng.uniform(-scale, scale);
        }
        p.bias_delta = rng.uniform(-scale, scale);
        for v in &mut p.delta_param {
            *v = rng.uniform(-scale, scale);
        }
        p
    }

    /// Constant-parameter configuration: no input projections, so the
    /// scan degenerates to an LTI system.
    pub fn constant(d: usize, n: usize, a: f64, b: f64, c: f64, delta_param: f64) -> Self {
        let mut p = SelectiveParams::zeros(d, n);
        p.a.fill(a);
        p.bias_b.fill(b);
        p.bias_c.fill(c);
        p.delta_param.fill(delta_param);
        p
    }

    /// Memoryless route: the state decays to zero within one step and
    /// the effective leading kernel tap is exactly 1, so y_k == x_k.
    pub fn memoryless(d: usize) -> Self {
        let mut p = SelectiveParams::constant(d, 1, -1e9, 1.0, 1.0, 0.0);
        p.delta_param.fill(act::softplus_inverse(1.0));
        p
    }
}

/// Per-index discrete parameters produced during a selective scan.
#[derive(Debug, Clone)]
pub struct SelectiveStep {
    /// D x N state transition exp(delta_k[d] * a[d][n]).
    pub a_bar: Vec<f64>,
    /// D x N input map delta_k[d] * b_k[n].
    pub b_bar: Vec<f64>,
}

struct ScanTrace {
    l: usize,
    /// L x D step sizes after the softplus.
    delta: Vec<f64>,
    /// L x D pre-softplus logits.
    delta_pre: Vec<f64>,
    /// L x N input-dependent B rows.
    b: Vec<f64>,
    /// L x N input-dependent C rows.
    c: Vec<f64>,
    /// L x D x N transitions.
    a_bar: Vec<f64>,
    /// L x D x N states.
    h: Vec<f64>,
    /// L x D outputs.
    y: Vec<f64>,
}

fn run_scan(p: &SelectiveParams, x: &Tensor) -> Result<ScanTrace> {
    let dims = x.dims();
    if dims.len() != 2 || dims[1] != p.d {
        return Err(Error::ShapeMismatch(format!(
            "selective scan expects L x {} input, got {:?}",
            p.d, dims
        )));
    }
    let (l, d, n) = (dims[0], p.d, p.n);
    let xd = x.data();
    let mut t = ScanTrace {
        l,
        delta: vec![0.0; l * d],
        delta_pre: vec![0.0; l * d],
        b: vec![0.0; l * n],
        c: vec![0.0; l * n],
        a_bar: vec![0.0; l * d * n],
        h: vec![0.0; l * d * n],
        y: vec![0.0; l * d],
    };
    for k in 0..l {
        let xk = &xd[k * d..(k + 1) * d];
        let s: f64 = xk
            .iter()
            .zip(&p.w_delta)
            .map(|(xi, wi)| xi * wi)
            .sum::<f64>()
            + p.bias_delta;
        for di in 0..d {
            let pre = p.delta_param[di] + s;
            t.delta_pre[k * d + di] = pre;
            t.delta[k * d + di] = act::softplus(pre);
        }
        for ni in 0..n {
            let mut bv = p.bias_b[ni];
            let mut cv = p.bias_c[ni];
            for di in 0..d {
                bv += xk[di] * p.w_b[di * n + ni];
                cv += xk[di] * p.w_c[di * n + ni];
            }
            t.b[k * n + ni] = bv;
            t.c[k * n + ni] = cv;
        }
        for di in 0..d {
            let dk = t.delta[k * d + di];
            let mut yk = 0.0;
            for ni in 0..n {
                let prod = dk * p.a[di * n + ni];
                if prod > 50.0 {
                    return Err(Error::NumericRange(format!(
                        "delta*A = {prod} at index {k}, channel {di}"
                    )));
                }
                let abar = prod.exp();
                let hprev = if k == 0 {
                    0.0
                } else {
                    t.h[((k - 1) * d + di) * n + ni]
                };
                let h = abar * hprev + dk * t.b[k * n + ni] * xk[di];
                t.a_bar[(k * d + di) * n + ni] = abar;
                t.h[(k * d + di) * n + ni] = h;
                yk += t.c[k * n + ni] * h;
            }
            if !yk.is_finite() {
                return Err(Error::NumericRange(format!(
                    "non-finite output at index {k}, channel {di}"
                )));
            }
            t.y[k * d + di] = yk;
        }
    }
    Ok(t)
}

/// Selective scan over an L x D sequence. Returns the L x D output and
/// the per-index discrete parameter records.
pub fn selective_scan(p: &SelectiveParams, x: &Tensor) -> Result<(Tensor, Vec<SelectiveStep>)> {
    let t = run_scan(p, x)?;
    let (d, n) = (p.d, p.n);
    let steps = (0..t.l)
        .map(|k| {
            let a_bar = t.a_bar[k * d * n..(k + 1) * d * n].to_vec();
            let mut b_bar = vec![0.0; d * n];
            for di in 0..d {
                for ni in 0..n {
                    b_bar[di * n + ni] = t.delta[k * d + di] * t.b[k * n + ni];
                }
            }
            SelectiveStep { a_bar, b_bar }
        })
        .collect();
    let y = Tensor::new(vec![t.l, d], t.y)?;
    Ok((y, steps))
}

/// Reverse-mode gradient of the scan output with respect to its input,
/// for fixed parameters: given gy (L x D), returns gx (L x D). The
/// adjoint runs the recurrence backwards and routes gradients through
/// the input-dependent B, C and step size.
pub fn selective_scan_vjp(p: &SelectiveParams, x: &Tensor, gy: &Tensor) -> Result<Tensor> {
    if !gy.same_shape(x) {
        return Err(Error::ShapeMismatch("vjp cotangent shape".into()));
    }
    let t = run_scan(p, x)?;
    let (l, d, n) = (t.l, p.d, p.n);
    let xd = x.data();
    let gyd = gy.data();
    let mut gx = vec![0.0; l * d];
    let mut gh = vec![0.0; d * n];
    for k in (0..l).rev() {
        let xk = &xd[k * d..(k + 1) * d];
        let mut g_c = vec![0.0; n];
        let mut g_b = vec![0.0; n];
        let mut g_delta = vec![0.0; d];
        // output: y_k[d] = sum_n C_k[n] h_k[d][n]
        for di in 0..d {
            let g = gyd[k * d + di];
            for ni in 0..n {
                gh[di * n + ni] += g * t.c[k * n + ni];
                g_c[ni] += g * t.h[(k * d + di) * n + ni];
            }
        }
        // recurrence: h_k = abar h_{k-1} + delta B x, abar = exp(delta a)
        for di in 0..d {
            let dk = t.delta[k * d + di];
            let mut gxk = 0.0;
            for ni in 0..n {
                let g = gh[di * n + ni];
                let abar = t.a_bar[(k * d + di) * n + ni];
                let hprev = if k == 0 {
                    0.0
                } else {
                    t.h[((k - 1) * d + di) * n + ni]
                };
                let bkn = t.b[k * n + ni];
                g_delta[di] += g * (hprev * abar * p.a[di * n + ni] + bkn * xk[di]);
                g_b[ni] += g * dk * xk[di];
                gxk += g * dk * bkn;
                gh[di * n + ni] = g * abar;
            }
            gx[k * d + di] += gxk;
        }
        // projections back to x_k
        let mut g_s = 0.0;
        for di in 0..d {
            g_s += g_delta[di] * act::softplus_deriv(t.delta_pre[k * d + di]);
        }
        for di in 0..d {
            let mut g = g_s * p.w_delta[di];
            for ni in 0..n {
                g += g_b[ni] * p.w_b[di * n + ni] + g_c[ni] * p.w_c[di * n + ni];
            }
            gx[k * d + di] += g;
        }
    }
    Tensor::new(vec![l, d], gx)
}

/// Per-index leading (and second) convolution kernel taps of a
/// selective scan, with a flag reporting whether they are unified
/// across all indices.
#[derive(Debug, Clone)]
pub struct KernelDrift {
    /// L x D leading taps Cbar_k Bbar_k per channel.
    pub first_taps: Tensor,
    /// (L-1) x D second taps Cbar_k Abar_k Bbar_{k-1}.
    pub second_taps: Tensor,
    pub unified: bool,
}

pub fn kernel_drift(p: &SelectiveParams, x: &Tensor) -> Result<KernelDrift> {
    let t = run_scan(p, x)?;
    let (l, d, n) = (t.l, p.d, p.n);
    if l < 2 {
        return Err(Error::InvalidDimension("kernel drift needs L >= 2".into()));
    }
    let mut first = vec![0.0; l * d];
    let mut second = vec![0.0; (l - 1) * d];
    for k in 0..l {
        for di in 0..d {
            let dk = t.delta[k * d + di];
            let mut tap = 0.0;
            for ni in 0..n {
                tap += t.c[k * n + ni] * dk * t.b[k * n + ni];
            }
            first[k * d + di] = tap;
            if k >= 1 {
                let dprev = t.delta[(k - 1) * d + di];
                let mut tap2 = 0.0;
                for ni in 0..n {
                    tap2 += t.c[k * n + ni]
                        * t.a_bar[(k * d + di) * n + ni]
                        * dprev
                        * t.b[(k - 1) * n + ni];
                }
                second[(k - 1) * d + di] = tap2;
            }
        }
    }
    let tol = 1e-12;
    let mut unified = true;
    for di in 0..d {
        for k in 1..l {
            if (first[k * d + di] - first[di]).abs() > tol {
                unified = false;
            }
        }
        for k in 1..l - 1 {
            if (second[k * d + di] - second[di]).abs() > tol {
                unified = false;
            }
        }
    }
    Ok(KernelDrift {
        first_taps: Tensor::new(vec![l, d], first)?,
        second_taps: Tensor::new(vec![l - 1, d], second)?,
        unified,
    })
}

/// Weights of the gated block wrapping the selective scan: input
/// projections to an expanded width, a causal depth-wise 1D conv on the
/// scan branch, and an output projection.
#[derive(Debug, Clone)]
pub struct MambaWeights {
    pub d: usize,
    /// Expanded inner width (default 2 * d).
    pub e: usize,
    /// E x D scan-branch input projection.
    pub w_in_a: Vec<f64>,
    pub b_in_a: Vec<f64>,
    /// E x D gate-branch input projection.
    pub w_in_b: Vec<f64>,
    pub b_in_b: Vec<f64>,
    /// E x K causal depth-wise conv taps (tap 0 is the current step).
    pub conv_k: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub k_taps: usize,
    pub sel: SelectiveParams,
    /// D x E output projection.
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl MambaWeights {
    pub fn zeros(d: usize, n: usize) -> Self {
        let e = 2 * d;
        MambaWeights {
            d,
            e,
            w_in_a: vec![0.0; e * d],
            b_in_a: vec![0.0; e],
            w_in_b: vec![0.0; e * d],
            b_in_b: vec![0.0; e],
            conv_k: vec![0.0; e * 4],
            conv_b: vec![0.0; e],
            k_taps: 4,
            sel: SelectiveParams::zeros(e, n),
            w_out: vec![0.0; d * e],
            b_out: vec![0.0; d],
        }
    }

    pub fn random(rng: &mut Rng, d: usize, n: usize, scale: f64) -> Self {
        let mut w = MambaWeights::zeros(d, n);
        for v in w
            .w_in_a
            .iter_mut()
            .chain(&mut w.b_in_a)
            .chain(&mut w.w_in_b)
            .chain(&mut w.b_in_b)
            .chain(&mut w.conv_k)
            .chain(&mut w.conv_b)
            .chain(&mut w.w_out)
            .chain(&mut w.b_out)
        {
            *v = rng.uniform(-scale, scale);
        }
        w.sel = SelectiveParams::random(rng, w.e, n, scale);
        w
    }
}

fn linear(x: &[f64], w: &[f64], b: &[f64], l: usize, din: usize, dout: usize) -> Vec<f64> {
    let mut y = vec![0.0; l * dout];
    for t in 0..l {
        for o in 0..dout {
            let mut s = b[o];
            for i in 0..din {
                s += w[o * din + i] * x[t * din + i];
            }
            y[t * dout + o] = s;
        }
    }
    y
}

/// gx for y = linear(x): gx[t][i] = sum_o gy[t][o] w[o][i].
fn linear_vjp(gy: &[f64], w: &[f64], l: usize, din: usize, dout: usize) -> Vec<f64> {
    let mut gx = vec![0.0; l * din];
    for t in 0..l {
        for o in 0..dout {
            let g = gy[t * dout + o];
            for i in 0..din {
                gx[t * din + i] += g * w[o * din + i];
            }
        }
    }
    gx
}

fn causal_dwconv1d(x: &[f64], k: &[f64], b: &[f64], l: usize, e: usize, taps: usize) -> Vec<f64> {
    let mut y = vec![0.0; l * e];
    for t in 0..l {
        for c in 0..e {
            let mut s = b[c];
            for j in 0..taps.min(t + 1) {
                s += k[c * taps + j] * x[(t - j) * e + c];
            }
            y[t * e + c] = s;
        }
    }
    y
}

fn causal_dwconv1d_vjp(gy: &[f64], k: &[f64], l: usize, e: usize, taps: usize) -> Vec<f64> {
    let mut gx = vec![0.0; l * e];
    for t in 0..l {
        for c in 0..e {
            let g = gy[t * e + c];
            for j in 0..taps.min(t + 1) {
                gx[(t - j) * e + c] += g * k[c * taps + j];
            }
        }
    }
    gx
}

/// Gated selective-scan block: Linear-in, then (causal depth-wise conv,
/// SiLU, selective scan) gated by the SiLU of the second branch, then
/// Linear-out. Shape preserving on L x D sequences.
pub fn vanilla_mamba_block(x: &Tensor, w: &MambaWeights) -> Result<Tensor> {
    let dims = x.dims();
    if dims.len() != 2 || dims[1] != w.d {
        return Err(Error::ShapeMismatch(format!(
            "mamba block expects L x {}, got {:?}",
            w.d, dims
        )));
    }
    let l = dims[0];
    let a_pre = linear(x.data(), &w.w_in_a, &w.b_in_a, l, w.d, w.e);
    let b_pre = linear(x.data(), &w.w_in_b, &w.b_in_b, l, w.d, w.e);
    let conv = causal_dwconv1d(&a_pre, &w.conv_k, &w.conv_b, l, w.e, w.k_taps);
    let a_act: Vec<f64> = conv.iter().map(|&v| act::silu(v)).collect();
    let (sel_y, _) = selective_scan(&w.sel, &Tensor::new(vec![l, w.e], a_act)?)?;
    let gated: Vec<f64> = sel_y
        .data()
        .iter()
        .zip(&b_pre)
        .map(|(s, g)| s * act::silu(*g))
        .collect();
    let y = linear(&gated, &w.w_out, &w.b_out, l, w.e, w.d);
    Tensor::new(vec![l, w.d], y)
}

/// Gradient of the gated block output with respect to its input.
pub fn vanilla_mamba_block_vjp(x: &Tensor, w: &MambaWeights, gy: &Tensor) -> Result<Tensor> {
    let l = x.dims()[0];
    let a_pre = linear(x.data(), &w.w_in_a, &w.b_in_a, l, w.d, w.e);
    let b_pre = linear(x.data(), &w.w_in_b, &w.b_in_b, l, w.d, w.e);
    let conv = causal_dwconv1d(&a_pre, &w.conv_k, &w.conv_b, l, w.e, w.k_taps);
    let a_act: Vec<f64> = conv.iter().map(|&v| act::silu(v)).collect();
    let a_act_t = Tensor::new(vec![l, w.e], a_act)?;
    let (sel_y, _) = selective_scan(&w.sel, &a_act_t)?;

    let g_gated = linear_vjp(gy.data(), &w.w_out, l, w.e, w.d);
    let mut g_sel = vec![0.0; l * w.e];
    let mut g_bpre = vec![0.0; l * w.e];
    for i in 0..l * w.e {
        g_sel[i] = g_gated[i] * act::silu(b_pre[i]);
        g_bpre[i] = g_gated[i] * sel_y.data()[i] * act::silu_deriv(b_pre[i]);
    }
    let g_a_act = selective_scan_vjp(&w.sel, &a_act_t, &Tensor::new(vec![l, w.e], g_sel)?)?;
    let g_conv: Vec<f64> = g_a_act
        .data()
        .iter()
        .zip(&conv)
        .map(|(g, &c)| g * act::silu_deriv(c))
        .collect();
    let g_apre = causal_dwconv1d_vjp(&g_conv, &w.conv_k, l, w.e, w.k_taps);
    let mut gx = linear_vjp(&g_apre, &w.w_in_a, l, w.d, w.e);
    let gx_b = linear_vjp(&g_bpre, &w.w_in_b, l, w.d, w.e);
    for (a, b) in gx.iter_mut().zip(&gx_b) {
        *a += b;
    }
    Tensor::new(vec![l, w.d], gx)
}
