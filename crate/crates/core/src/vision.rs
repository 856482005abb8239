//! 2D machinery: patchify/unpatchify, the bidirectional and four-route
//! cross scans over patch grids, the micro-primitives (depth-wise and
//! point-wise convs, normalization, activations), and the three vision
//! blocks built from them.

use crate::act;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::selective::{selective_scan, selective_scan_vjp, SelectiveParams};
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// patchify

/// Flattened image patches with the geometry needed to invert the mapping.
#[derive(Debug, Clone)]
pub struct PatchSequence {
    /// N x E token matrix, N = (H*W)/(hp*wp), E = C*hp*wp.
    pub tokens: Tensor,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub hp: usize,
    pub wp: usize,
}

pub fn patchify(img: &Tensor, hp: usize, wp: usize) -> Result<PatchSequence> {
    let &[c, h, w] = match img.dims() {
        [c, h, w] => &[*c, *h, *w],
        other => {
            return Err(Error::ShapeMismatch(format!(
                "patchify expects (C,H,W), got {:?}",
                other
            )))
        }
    };
    if hp == 0 || wp == 0 || h % hp != 0 || w % wp != 0 {
        return Err(Error::InvalidDimension(format!(
            "patch {hp}x{wp} does not divide {h}x{w}"
        )));
    }
    let (gh, gw) = (h / hp, w / wp);
    let e = c * hp * wp;
    let mut tokens = vec![0.0; gh * gw * e];
    for py in 0..gh {
        for px in 0..gw {
            let tok = py * gw + px;
            let mut off = tok * e;
            for ch in 0..c {
                for dy in 0..hp {
                    for dx in 0..wp {
                        tokens[off] = img.at(&[ch, py * hp + dy, px * wp + dx]);
                        off += 1;
                    }
                }
            }
        }
    }
    Ok(PatchSequence {
        tokens: Tensor::new(vec![gh * gw, e], tokens)?,
        c,
        h,
        w,
        hp,
        wp,
    })
}

pub fn unpatchify(ps: &PatchSequence) -> Result<Tensor> {
    let (gh, gw) = (ps.h / ps.hp, ps.w / ps.wp);
    let mut img = Tensor::zeros(vec![ps.c, ps.h, ps.w]);
    let e = ps.c * ps.hp * ps.wp;
    for py in 0..gh {
        for px in 0..gw {
            let tok = py * gw + px;
            let mut off = tok * e;
            for ch in 0..ps.c {
                for dy in 0..ps.hp {
                    for dx in 0..ps.wp {
                        img.set(&[ch, py * ps.hp + dy, px * ps.wp + dx], ps.tokens.data()[off]);
                        off += 1;
                    }
                }
            }
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// scan routes

/// The four cross-scan orderings over an H x W grid. Each is a bijection
/// from scan position to row-major grid index; the backward routes are
/// the exact reverses of the forward ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanRoute {
    RowFwd,
    RowBwd,
    ColFwd,
    ColBwd,
}

impl ScanRoute {
    pub const ALL: [ScanRoute; 4] = [
        ScanRoute::RowFwd,
        ScanRoute::RowBwd,
        ScanRoute::ColFwd,
        ScanRoute::ColBwd,
    ];

    /// perm[k] = row-major grid index visited at scan position k.
    pub fn permutation(&self, h: usize, w: usize) -> Vec<usize> {
        match self {
            ScanRoute::RowFwd => (0..h * w).collect(),
            ScanRoute::RowBwd => (0..h * w).rev().collect(),
            ScanRoute::ColFwd => {
                let mut p = Vec::with_capacity(h * w);
                for x in 0..w {
                    for y in 0..h {
                        p.push(y * w + x);
                    }
                }
                p
            }
            ScanRoute::ColBwd => {
                let mut p = ScanRoute::ColFwd.permutation(h, w);
                p.reverse();
                p
            }
        }
    }
}

// ---------------------------------------------------------------------------
// 1D and 2D selective scans over grids

fn gather_rows(seq: &Tensor, perm: &[usize]) -> Tensor {
    let d = seq.dims()[1];
    let mut out = vec![0.0; seq.len()];
    for (k, &src) in perm.iter().enumerate() {
        out[k * d..(k + 1) * d].copy_from_slice(&seq.data()[src * d..(src + 1) * d]);
    }
    Tensor::new(vec![perm.len(), d], out).unwrap()
}

fn scatter_rows(seq: &Tensor, perm: &[usize]) -> Tensor {
    let d = seq.dims()[1];
    let mut out = vec![0.0; seq.len()];
    for (k, &dst) in perm.iter().enumerate() {
        out[dst * d..(dst + 1) * d].copy_from_slice(&seq.data()[k * d..(k + 1) * d]);
    }
    Tensor::new(vec![perm.len(), d], out).unwrap()
}

/// Bidirectional scan over a token sequence: forward route plus the
/// reversed backward route, summed in place.
pub fn vim_scan(fwd: &SelectiveParams, bwd: &SelectiveParams, seq: &Tensor) -> Result<Tensor> {
    let n = seq.dims()[0];
    let (yf, _) = selective_scan(fwd, seq)?;
    let rev: Vec<usize> = (0..n).rev().collect();
    let (yb, _) = selective_scan(bwd, &gather_rows(seq, &rev))?;
    let yb = scatter_rows(&yb, &rev);
    let mut out = yf;
    for (a, b) in out.data_mut().iter_mut().zip(yb.data()) {
        *a += b;
    }
    Ok(out)
}

pub fn vim_scan_vjp(
    fwd: &SelectiveParams,
    bwd: &SelectiveParams,
    seq: &Tensor,
    gy: &Tensor,
) -> Result<Tensor> {
    let n = seq.dims()[0];
    let rev: Vec<usize> = (0..n).rev().collect();
    let mut gx = selective_scan_vjp(fwd, seq, gy)?;
    let g_rev = selective_scan_vjp(bwd, &gather_rows(seq, &rev), &gather_rows(gy, &rev))?;
    let g_rev = scatter_rows(&g_rev, &rev);
    for (a, b) in gx.data_mut().iter_mut().zip(g_rev.data()) {
        *a += b;
    }
    Ok(gx)
}

/// Four-route cross scan over an H x W grid of D-channel tokens:
/// permute, scan, inverse-permute per route, then sum the four results.
pub fn ss2d(routes: &[SelectiveParams; 4], seq: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    if seq.dims()[0] != h * w {
        return Err(Error::ShapeMismatch(format!(
            "grid {}x{} needs {} tokens, got {}",
            h,
            w,
            h * w,
            seq.dims()[0]
        )));
    }
    let mut out = Tensor::zeros(seq.dims().to_vec());
    for (route, p) in ScanRoute::ALL.iter().zip(routes) {
        let perm = route.permutation(h, w);
        let (y, _) = selective_scan(p, &gather_rows(seq, &perm))?;
        let y = scatter_rows(&y, &perm);
        for (a, b) in out.data_mut().iter_mut().zip(y.data()) {
            *a += b;
        }
    }
    Ok(out)
}

pub fn ss2d_vjp(
    routes: &[SelectiveParams; 4],
    seq: &Tensor,
    h: usize,
    w: usize,
    gy: &Tensor,
) -> Result<Tensor> {
    let mut gx = Tensor::zeros(seq.dims().to_vec());
    for (route, p) in ScanRoute::ALL.iter().zip(routes) {
        let perm = route.permutation(h, w);
        let g = selective_scan_vjp(p, &gather_rows(seq, &perm), &gather_rows(gy, &perm))?;
        let g = scatter_rows(&g, &perm);
        for (a, b) in gx.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }
    Ok(gx)
}

// ---------------------------------------------------------------------------
// micro-primitives on (C, H, W) tensors

fn chw(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.dims() {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::ShapeMismatch(format!(
            "{what} expects (C,H,W), got {:?}",
            other
        ))),
    }
}

/// Depth-wise 3x3 convolution, zero padding, stride 1.
/// Kernel layout: C x 3 x 3, bias length C.
pub fn dwconv3x3(x: &Tensor, kernel: &[f64], bias: &[f64]) -> Result<Tensor> {
    let (c, h, w) = chw(x, "dwconv3x3")?;
    if kernel.len() != c * 9 || bias.len() != c {
        return Err(Error::ShapeMismatch("dwconv3x3 kernel/bias".into()));
    }
    let mut out = Tensor::zeros(vec![c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let mut s = bias[ch];
                for dy in 0..3usize {
                    for dx in 0..3usize {
                        let iy = y as isize + dy as isize - 1;
                        let ix = xx as isize + dx as isize - 1;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        s += kernel[ch * 9 + dy * 3 + dx] * x.at(&[ch, iy as usize, ix as usize]);
                    }
                }
                out.set(&[ch, y, xx], s);
            }
        }
    }
    Ok(out)
}

/// Adjoint of dwconv3x3 with respect to its input: correlation with the
/// spatially flipped kernel.
pub fn dwconv3x3_vjp(gy: &Tensor, kernel: &[f64]) -> Result<Tensor> {
    let (c, h, w) = chw(gy, "dwconv3x3_vjp")?;
    let mut gx = Tensor::zeros(vec![c, h, w]);
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let g = gy.at(&[ch, y, xx]);
                if g == 0.0 {
                    continue;
                }
                for dy in 0..3usize {
                    for dx in 0..3usize {
                        let iy = y as isize + dy as isize - 1;
                        let ix = xx as isize + dx as isize - 1;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        let off = gx.offset(&[ch, iy as usize, ix as usize]);
                        gx.data_mut()[off] += g * kernel[ch * 9 + dy * 3 + dx];
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Point-wise (1x1) convolution: weights Cout x Cin, bias Cout.
pub fn pwconv(x: &Tensor, weight: &[f64], bias: &[f64], c_out: usize) -> Result<Tensor> {
    let (c, h, w) = chw(x, "pwconv")?;
    if weight.len() != c_out * c || bias.len() != c_out {
        return Err(Error::ShapeMismatch("pwconv weight/bias".into()));
    }
    let mut out = Tensor::zeros(vec![c_out, h, w]);
    for o in 0..c_out {
        for y in 0..h {
            for xx in 0..w {
                let mut s = bias[o];
                for i in 0..c {
                    s += weight[o * c + i] * x.at(&[i, y, xx]);
                }
                out.set(&[o, y, xx], s);
            }
        }
    }
    Ok(out)
}

pub fn pwconv_vjp(gy: &Tensor, weight: &[f64], c_in: usize) -> Result<Tensor> {
    let (c_out, h, w) = chw(gy, "pwconv_vjp")?;
    let mut gx = Tensor::zeros(vec![c_in, h, w]);
    for o in 0..c_out {
        for y in 0..h {
            for xx in 0..w {
                let g = gy.at(&[o, y, xx]);
                for i in 0..c_in {
                    let off = gx.offset(&[i, y, xx]);
                    gx.data_mut()[off] += g * weight[o * c_in + i];
                }
            }
        }
    }
    Ok(gx)
}

/// Per-channel batch-norm statistics and affine parameters (inference
/// mode only; stats are caller-supplied).
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    /// Identity statistics: mean 0, var 1-eps offset so the scale is 1.
    pub fn identity(c: usize) -> Self {
        BatchNorm {
            mean: vec![0.0; c],
            var: vec![1.0; c],
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            eps: 0.0,
        }
    }
}

pub fn batchnorm_infer(x: &Tensor, bn: &BatchNorm) -> Result<Tensor> {
    let (c, h, w) = chw(x, "batchnorm_infer")?;
    if bn.mean.len() != c || bn.var.len() != c || bn.gamma.len() != c || bn.beta.len() != c {
        return Err(Error::ShapeMismatch("batchnorm parameter length".into()));
    }
    if bn.var.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidDimension("negative variance".into()));
    }
    let mut out = Tensor::zeros(vec![c, h, w]);
    for ch in 0..c {
        let scale = bn.gamma[ch] / (bn.var[ch] + bn.eps).sqrt();
        let shift = bn.beta[ch] - bn.mean[ch] * scale;
        for y in 0..h {
            for xx in 0..w {
                out.set(&[ch, y, xx], scale * x.at(&[ch, y, xx]) + shift);
            }
        }
    }
    Ok(out)
}

pub fn batchnorm_infer_vjp(gy: &Tensor, bn: &BatchNorm) -> Result<Tensor> {
    let (c, h, w) = chw(gy, "batchnorm_infer_vjp")?;
    let mut gx = gy.clone();
    for ch in 0..c {
        let scale = bn.gamma[ch] / (bn.var[ch] + bn.eps).sqrt();
        for y in 0..h {
            for xx in 0..w {
                let off = gx.offset(&[ch, y, xx]);
                gx.data_mut()[off] = gy.at(&[ch, y, xx]) * scale;
            }
        }
    }
    Ok(gx)
}

/// Per-position layer normalization across channels, with per-channel
/// affine parameters.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl LayerNorm {
    pub fn identity(c: usize) -> Self {
        LayerNorm {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            eps: 1e-5,
        }
    }
}

pub fn layernorm_channels(x: &Tensor, ln: &LayerNorm) -> Result<Tensor> {
    let (c, h, w) = chw(x, "layernorm_channels")?;
    if ln.gamma.len() != c || ln.beta.len() != c {
        return Err(Error::ShapeMismatch("layernorm parameter length".into()));
    }
    let mut out = Tensor::zeros(vec![c, h, w]);
    for y in 0..h {
        for xx in 0..w {
            let mut mean = 0.0;
            for ch in 0..c {
                mean += x.at(&[ch, y, xx]);
            }
            mean /= c as f64;
            let mut var = 0.0;
            for ch in 0..c {
                let d = x.at(&[ch, y, xx]) - mean;
                var += d * d;
            }
            var /= c as f64;
            let inv = 1.0 / (var + ln.eps).sqrt();
            for ch in 0..c {
                let v = (x.at(&[ch, y, xx]) - mean) * inv;
                out.set(&[ch, y, xx], ln.gamma[ch] * v + ln.beta[ch]);
            }
        }
    }
    Ok(out)
}

pub fn layernorm_channels_vjp(x: &Tensor, ln: &LayerNorm, gy: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(x, "layernorm_channels_vjp")?;
    let mut gx = Tensor::zeros(vec![c, h, w]);
    let cf = c as f64;
    for y in 0..h {
        for xx in 0..w {
            let mut mean = 0.0;
            for ch in 0..c {
                mean += x.at(&[ch, y, xx]);
            }
            mean /= cf;
            let mut var = 0.0;
            for ch in 0..c {
                let d = x.at(&[ch, y, xx]) - mean;
                var += d * d;
            }
            var /= cf;
            let inv = 1.0 / (var + ln.eps).sqrt();
            // g through xhat = (x - mean) * inv
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for ch in 0..c {
                let g = gy.at(&[ch, y, xx]) * ln.gamma[ch];
                let xhat = (x.at(&[ch, y, xx]) - mean) * inv;
                sum_g += g;
                sum_gx += g * xhat;
            }
            for ch in 0..c {
                let g = gy.at(&[ch, y, xx]) * ln.gamma[ch];
                let xhat = (x.at(&[ch, y, xx]) - mean) * inv;
                let val = inv * (g - sum_g / cf - xhat * sum_gx / cf);
                gx.set(&[ch, y, xx], val);
            }
        }
    }
    Ok(gx)
}

// ---------------------------------------------------------------------------
// grid <-> sequence views for the scan-based blocks

/// Row-major flatten of (C,H,W) to (H*W) x C tokens.
pub fn grid_to_seq(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(x, "grid_to_seq")?;
    let mut out = vec![0.0; c * h * w];
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                out[(y * w + xx) * c + ch] = x.at(&[ch, y, xx]);
            }
        }
    }
    Tensor::new(vec![h * w, c], out)
}

pub fn seq_to_grid(seq: &Tensor, c: usize, h: usize, w: usize) -> Result<Tensor> {
    if seq.dims() != [h * w, c] {
        return Err(Error::ShapeMismatch("seq_to_grid".into()));
    }
    let mut out = Tensor::zeros(vec![c, h, w]);
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                out.set(&[ch, y, xx], seq.data()[(y * w + xx) * c + ch]);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// vanilla VSS block

/// Gated block with the four-route cross scan in place of the 1D scan.
#[derive(Debug, Clone)]
pub struct VanillaVssWeights {
    pub d: usize,
    pub e: usize,
    /// E x D input projection, scan branch.
    pub w_in_a: Vec<f64>,
    pub b_in_a: Vec<f64>,
    /// E x D input projection, gate branch.
    pub w_in_b: Vec<f64>,
    pub b_in_b: Vec<f64>,
    /// E x 3 x 3 depth-wise kernel on the scan branch.
    pub dw_k: Vec<f64>,
    pub dw_b: Vec<f64>,
    pub routes: [SelectiveParams; 4],
    /// D x E output projection.
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl VanillaVssWeights {
    pub fn zeros(d: usize, n: usize) -> Self {
        let e = 2 * d;
        VanillaVssWeights {
            d,
            e,
            w_in_a: vec![0.0; e * d],
            b_in_a: vec![0.0; e],
            w_in_b: vec![0.0; e * d],
            b_in_b: vec![0.0; e],
            dw_k: vec![0.0; e * 9],
            dw_b: vec![0.0; e],
            routes: std::array::from_fn(|_| SelectiveParams::zeros(e, n)),
            w_out: vec![0.0; d * e],
            b_out: vec![0.0; d],
        }
    }

    pub fn random(rng: &mut Rng, d: usize, n: usize, scale: f64) -> Self {
        let mut w = VanillaVssWeights::zeros(d, n);
        for v in w
            .w_in_a
            .iter_mut()
            .chain(&mut w.b_in_a)
            .chain(&mut w.w_in_b)
            .chain(&mut w.b_in_b)
            .chain(&mut w.dw_k)
            .chain(&mut w.dw_b)
            .chain(&mut w.w_out)
            .chain(&mut w.b_out)
        {
            *v = rng.uniform(-scale, scale);
        }
        w.routes = std::array::from_fn(|_| SelectiveParams::random(rng, w.e, n, scale));
        w
    }
}

pub fn vanilla_vss_block(x: &Tensor, w: &VanillaVssWeights) -> Result<Tensor> {
    let (c, h, wd) = chw(x, "vanilla_vss_block")?;
    if c != w.d {
        return Err(Error::ShapeMismatch("vanilla VSS channel count".into()));
    }
    let a_pre = pwconv(x, &w.w_in_a, &w.b_in_a, w.e)?;
    let b_pre = pwconv(x, &w.w_in_b, &w.b_in_b, w.e)?;
    let conv = dwconv3x3(&a_pre, &w.dw_k, &w.dw_b)?;
    let a_act = conv.map(act::silu);
    let scanned = seq_to_grid(
        &ss2d(&w.routes, &grid_to_seq(&a_act)?, h, wd)?,
        w.e,
        h,
        wd,
    )?;
    let mut gated = scanned;
    for (g, b) in gated.data_mut().iter_mut().zip(b_pre.data()) {
        *g *= act::silu(*b);
    }
    pwconv(&gated, &w.w_out, &w.b_out, w.d)
}

pub fn vanilla_vss_block_vjp(x: &Tensor, w: &VanillaVssWeights, gy: &Tensor) -> Result<Tensor> {
    let (_, h, wd) = chw(x, "vanilla_vss_block_vjp")?;
    let a_pre = pwconv(x, &w.w_in_a, &w.b_in_a, w.e)?;
    let b_pre = pwconv(x, &w.w_in_b, &w.b_in_b, w.e)?;
    let conv = dwconv3x3(&a_pre, &w.dw_k, &w.dw_b)?;
    let a_act = conv.map(act::silu);
    let a_seq = grid_to_seq(&a_act)?;
    let scanned = seq_to_grid(&ss2d(&w.routes, &a_seq, h, wd)?, w.e, h, wd)?;

    let g_gated = pwconv_vjp(gy, &w.w_out, w.e)?;
    let mut g_scanned = g_gated.clone();
    let mut g_bpre = g_gated;
    for ((gs, gb), (s, b)) in g_scanned
        .data_mut()
        .iter_mut()
        .zip(g_bpre.data_mut())
        .zip(scanned.data().iter().zip(b_pre.data()))
    {
        let gv = *gs;
        *gs = gv * act::silu(*b);
        *gb = gv * s * act::silu_deriv(*b);
    }
    let g_seq = ss2d_vjp(
        &w.routes,
        &a_seq,
        h,
        wd,
        &grid_to_seq(&g_scanned)?,
    )?;
    let mut g_conv = seq_to_grid(&g_seq, w.e, h, wd)?;
    for (g, c) in g_conv.data_mut().iter_mut().zip(conv.data()) {
        *g *= act::silu_deriv(*c);
    }
    let g_apre = dwconv3x3_vjp(&g_conv, &w.dw_k)?;
    let mut gx = pwconv_vjp(&g_apre, &w.w_in_a, w.d)?;
    let gx_b = pwconv_vjp(&g_bpre, &w.w_in_b, w.d)?;
    for (a, b) in gx.data_mut().iter_mut().zip(gx_b.data()) {
        *a += b;
    }
    Ok(gx)
}

// ---------------------------------------------------------------------------
// VSS block (Transformer-encoder topology)

#[derive(Debug, Clone)]
pub struct VssWeights {
    pub d: usize,
    /// FFN hidden width.
    pub f: usize,
    pub ln1: LayerNorm,
    pub routes: [SelectiveParams; 4],
    pub ln2: LayerNorm,
    /// F x D then D x F point-wise FFN.
    pub ffn_w1: Vec<f64>,
    pub ffn_b1: Vec<f64>,
    pub ffn_w2: Vec<f64>,
    pub ffn_b2: Vec<f64>,
}

impl VssWeights {
    pub fn zeros(d: usize, n: usize) -> Self {
        let f = 2 * d;
        VssWeights {
            d,
            f,
            ln1: LayerNorm::identity(d),
            routes: std::array::from_fn(|_| SelectiveParams::zeros(d, n)),
            ln2: LayerNorm::identity(d),
            ffn_w1: vec![0.0; f * d],
            ffn_b1: vec![0.0; f],
            ffn_w2: vec![0.0; d * f],
            ffn_b2: vec![0.0; d],
        }
    }

    pub fn random(rng: &mut Rng, d: usize, n: usize, scale: f64) -> Self {
        let mut w = VssWeights::zeros(d, n);
        for v in w
            .ffn_w1
            .iter_mut()
            .chain(&mut w.ffn_b1)
            .chain(&mut w.ffn_w2)
            .chain(&mut w.ffn_b2)
        {
            *v = rng.uniform(-scale, scale);
        }
        for v in w.ln1.gamma.iter_mut().chain(&mut w.ln2.gamma) {
            *v = rng.uniform(0.5, 1.5);
        }
        for v in w.ln1.beta.iter_mut().chain(&mut w.ln2.beta) {
            *v = rng.uniform(-scale, scale);
        }
        w.routes = std::array::from_fn(|_| SelectiveParams::random(rng, d, n, scale));
        w
    }
}

fn ffn(x: &Tensor, w: &VssWeights) -> Result<Tensor> {
    let hidden = pwconv(x, &w.ffn_w1, &w.ffn_b1, w.f)?;
    pwconv(&hidden.map(act::gelu), &w.ffn_w2, &w.ffn_b2, w.d)
}

fn ffn_vjp(x: &Tensor, w: &VssWeights, gy: &Tensor) -> Result<Tensor> {
    let hidden = pwconv(x, &w.ffn_w1, &w.ffn_b1, w.f)?;
    let mut g_hidden = pwconv_vjp(gy, &w.ffn_w2, w.f)?;
    for (g, hv) in g_hidden.data_mut().iter_mut().zip(hidden.data()) {
        *g *= act::gelu_deriv(*hv);
    }
    pwconv_vjp(&g_hidden, &w.ffn_w1, w.d)
}

/// Transformer-encoder topology: x + SS2D(LN(x)), then + FFN(LN(.)).
pub fn vss_block(x: &Tensor, w: &VssWeights) -> Result<Tensor> {
    let (c, h, wd) = chw(x, "vss_block")?;
    if c != w.d {
        return Err(Error::ShapeMismatch("VSS channel count".into()));
    }
    let normed = layernorm_channels(x, &w.ln1)?;
    let scanned = seq_to_grid(&ss2d(&w.routes, &grid_to_seq(&normed)?, h, wd)?, c, h, wd)?;
    let mut mid = x.clone();
    for (m, s) in mid.data_mut().iter_mut().zip(scanned.data()) {
        *m += s;
    }
    let normed2 = layernorm_channels(&mid, &w.ln2)?;
    let f = ffn(&normed2, w)?;
    let mut out = mid;
    for (o, fv) in out.data_mut().iter_mut().zip(f.data()) {
        *o += fv;
    }
    Ok(out)
}

pub fn vss_block_vjp(x: &Tensor, w: &VssWeights, gy: &Tensor) -> Result<Tensor> {
    let (c, h, wd) = chw(x, "vss_block_vjp")?;
    let normed = layernorm_channels(x, &w.ln1)?;
    let n_seq = grid_to_seq(&normed)?;
    let scanned = seq_to_grid(&ss2d(&w.routes, &n_seq, h, wd)?, c, h, wd)?;
    let mut mid = x.clone();
    for (m, s) in mid.data_mut().iter_mut().zip(scanned.data()) {
        *m += s;
    }
    let normed2 = layernorm_channels(&mid, &w.ln2)?;

    // out = mid + ffn(ln2(mid))
    let g_ffn_in = ffn_vjp(&normed2, w, gy)?;
    let mut g_mid = layernorm_channels_vjp(&mid, &w.ln2, &g_ffn_in)?;
    for (g, gy_v) in g_mid.data_mut().iter_mut().zip(gy.data()) {
        *g += gy_v;
    }
    // mid = x + ss2d(ln1(x))
    let g_seq = ss2d_vjp(&w.routes, &n_seq, h, wd, &grid_to_seq(&g_mid)?)?;
    let g_normed = seq_to_grid(&g_seq, c, h, wd)?;
    let mut gx = layernorm_channels_vjp(x, &w.ln1, &g_normed)?;
    for (g, gm) in gx.data_mut().iter_mut().zip(g_mid.data()) {
        *g += gm;
    }
    Ok(gx)
}

// ---------------------------------------------------------------------------
// CrackMamba block

/// Two branches plus a skip connection. The attention branch derives a
/// sigmoid map through the cross scan, the local branch extracts
/// features through a point-wise conv, and the output is
/// x + features * attention.
#[derive(Debug, Clone)]
pub struct CrackMambaWeights {
    pub d: usize,
    pub ln: LayerNorm,
    /// D x 3 x 3 depth-wise kernel on the attention branch.
    pub dw_k: Vec<f64>,
    pub dw_b: Vec<f64>,
    pub routes: [SelectiveParams; 4],
    pub bn: BatchNorm,
    /// D x D point-wise conv on the local branch.
    pub pw_w: Vec<f64>,
    pub pw_b: Vec<f64>,
}

impl CrackMambaWeights {
    pub fn zeros(d: usize, n: usize) -> Self {
        CrackMambaWeights {
            d,
            ln: LayerNorm::identity(d),
            dw_k: vec![0.0; d * 9],
            dw_b: vec![0.0; d],
            routes: std::array::from_fn(|_| SelectiveParams::zeros(d, n)),
            bn: BatchNorm::identity(d),
            pw_w: vec![0.0; d * d],
            pw_b: vec![0.0; d],
        }
    }

    pub fn random(rng: &mut Rng, d: usize, n: usize, scale: f64) -> Self {
        let mut w = CrackMambaWeights::zeros(d, n);
        for v in w
            .dw_k
            .iter_mut()
            .chain(&mut w.dw_b)
            .chain(&mut w.pw_w)
            .chain(&mut w.pw_b)
        {
            *v = rng.uniform(-scale, scale);
        }
        w.routes = std::array::from_fn(|_| SelectiveParams::random(rng, d, n, scale));
        w
    }
}

/// Forward pass returning (output, attention map).
pub fn crackmamba_block(x: &Tensor, w: &CrackMambaWeights) -> Result<(Tensor, Tensor)> {
    let (c, h, wd) = chw(x, "crackmamba_block")?;
    if c != w.d {
        return Err(Error::ShapeMismatch("CrackMamba channel count".into()));
    }
    // attention branch: LN -> DWConv -> SiLU -> SS2D -> Sigmoid
    let normed = layernorm_channels(x, &w.ln)?;
    let conv = dwconv3x3(&normed, &w.dw_k, &w.dw_b)?;
    let scanned = seq_to_grid(
        &ss2d(&w.routes, &grid_to_seq(&conv.map(act::silu))?, h, wd)?,
        c,
        h,
        wd,
    )?;
    let am = scanned.map(act::sigmoid);
    // local branch: BN -> PWConv -> GELU
    let feats = pwconv(&batchnorm_infer(x, &w.bn)?, &w.pw_w, &w.pw_b, c)?.map(act::gelu);
    let mut out = x.clone();
    for ((o, f), a) in out
        .data_mut()
        .iter_mut()
        .zip(feats.data())
        .zip(am.data())
    {
        *o += f * a;
    }
    Ok((out, am))
}

pub fn crackmamba_block_vjp(x: &Tensor, w: &CrackMambaWeights, gy: &Tensor) -> Result<Tensor> {
    let (c, h, wd) = chw(x, "crackmamba_block_vjp")?;
    let normed = layernorm_channels(x, &w.ln)?;
    let conv = dwconv3x3(&normed, &w.dw_k, &w.dw_b)?;
    let silu_conv = conv.map(act::silu);
    let seq = grid_to_seq(&silu_conv)?;
    let scanned = seq_to_grid(&ss2d(&w.routes, &seq, h, wd)?, c, h, wd)?;
    let am = scanned.map(act::sigmoid);
    let bn_x = batchnorm_infer(x, &w.bn)?;
    let pw = pwconv(&bn_x, &w.pw_w, &w.pw_b, c)?;
    let feats = pw.map(act::gelu);

    // out = x + feats * am
    let mut g_feats = gy.clone();
    let mut g_am = gy.clone();
    for ((gf, ga), (f, a)) in g_feats
        .data_mut()
        .iter_mut()
        .zip(g_am.data_mut())
        .zip(feats.data().iter().zip(am.data()))
    {
        let g = *gf;
        *gf = g * a;
        *ga = g * f;
    }
    // local branch
    let mut g_pw = g_feats;
    for (g, pv) in g_pw.data_mut().iter_mut().zip(pw.data()) {
        *g *= act::gelu_deriv(*pv);
    }
    let g_bnx = pwconv_vjp(&g_pw, &w.pw_w, c)?;
    let g_local = batchnorm_infer_vjp(&g_bnx, &w.bn)?;
    // attention branch
    let mut g_scanned = g_am;
    for (g, sv) in g_scanned.data_mut().iter_mut().zip(scanned.data()) {
        *g *= act::sigmoid_deriv(*sv);
    }
    let g_seq = ss2d_vjp(&w.routes, &seq, h, wd, &grid_to_seq(&g_scanned)?)?;
    let mut g_conv = seq_to_grid(&g_seq, c, h, wd)?;
    for (g, cv) in g_conv.data_mut().iter_mut().zip(conv.data()) {
        *g *= act::silu_deriv(*cv);
    }
    let g_normed = dwconv3x3_vjp(&g_conv, &w.dw_k)?;
    let g_attn = layernorm_channels_vjp(x, &w.ln, &g_normed)?;

    let mut gx = gy.clone();
    for ((g, a), b) in gx
        .data_mut()
        .iter_mut()
        .zip(g_local.data())
        .zip(g_attn.data())
    {
        *g += a + b;
    }
    Ok(gx)
}
