//! Effective-receptive-field pipeline: per-pixel contributions of the
//! central output unit (reverse-mode through a block graph), clamping,
//! log compression, normalization, cross-profile statistics, a finite-
//! difference oracle, and a synthetic crack-image generator.

use crate::act;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::selective::{
    vanilla_mamba_block, vanilla_mamba_block_vjp, MambaWeights, SelectiveParams,
};
use crate::tensor::Tensor;
use crate::vision::{
    batchnorm_infer, batchnorm_infer_vjp, crackmamba_block, crackmamba_block_vjp, dwconv3x3,
    dwconv3x3_vjp, grid_to_seq, layernorm_channels, layernorm_channels_vjp, pwconv, pwconv_vjp,
    seq_to_grid, ss2d, ss2d_vjp, vanilla_vss_block, vanilla_vss_block_vjp, vim_scan, vim_scan_vjp,
    vss_block, vss_block_vjp, BatchNorm, CrackMambaWeights, LayerNorm, VanillaVssWeights,
    VssWeights,
};

// ---------------------------------------------------------------------------
// block graph

/// One differentiable stage operating on a (C,H,W) tensor. Sequence
/// blocks view the grid as row-major tokens.
#[derive(Debug, Clone)]
pub enum GraphBlock {
    Identity,
    Scale(f64),
    DwConv { kernel: Vec<f64>, bias: Vec<f64> },
    PwConv { weight: Vec<f64>, bias: Vec<f64>, c_in: usize, c_out: usize },
    BatchNorm(BatchNorm),
    LayerNorm(LayerNorm),
    Silu,
    Gelu,
    Sigmoid,
    Ss2d(Box<[SelectiveParams; 4]>),
    Vim { fwd: Box<SelectiveParams>, bwd: Box<SelectiveParams> },
    Mamba(Box<MambaWeights>),
    VanillaVss(Box<VanillaVssWeights>),
    Vss(Box<VssWeights>),
    CrackMamba(Box<CrackMambaWeights>),
}

fn grid_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.dims() {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::ShapeMismatch(format!(
            "graph blocks expect (C,H,W), got {:?}",
            other
        ))),
    }
}

impl GraphBlock {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (c, h, w) = grid_dims(x)?;
        match self {
            GraphBlock::Identity => Ok(x.clone()),
            GraphBlock::Scale(s) => {
                let s = *s;
                Ok(x.map(move |v| s * v))
            }
            GraphBlock::DwConv { kernel, bias } => dwconv3x3(x, kernel, bias),
            GraphBlock::PwConv { weight, bias, c_in, c_out } => {
                if *c_in != c {
                    return Err(Error::ShapeMismatch("pwconv block channel count".into()));
                }
                pwconv(x, weight, bias, *c_out)
            }
            GraphBlock::BatchNorm(bn) => batchnorm_infer(x, bn),
            GraphBlock::LayerNorm(ln) => layernorm_channels(x, ln),
            GraphBlock::Silu => Ok(x.map(act::silu)),
            GraphBlock::Gelu => Ok(x.map(act::gelu)),
            GraphBlock::Sigmoid => Ok(x.map(act::sigmoid)),
            GraphBlock::Ss2d(routes) => {
                seq_to_grid(&ss2d(routes, &grid_to_seq(x)?, h, w)?, c, h, w)
            }
            GraphBlock::Vim { fwd, bwd } => {
                seq_to_grid(&vim_scan(fwd, bwd, &grid_to_seq(x)?)?, c, h, w)
            }
            GraphBlock::Mamba(mw) => {
                seq_to_grid(&vanilla_mamba_block(&grid_to_seq(x)?, mw)?, c, h, w)
            }
            GraphBlock::VanillaVss(vw) => vanilla_vss_block(x, vw),
            GraphBlock::Vss(vw) => vss_block(x, vw),
            GraphBlock::CrackMamba(cw) => Ok(crackmamba_block(x, cw)?.0),
        }
    }

    /// Vector-Jacobian product with respect to the block input.
    pub fn vjp(&self, x: &Tensor, gy: &Tensor) -> Result<Tensor> {
        let (c, h, w) = grid_dims(x)?;
        match self {
            GraphBlock::Identity => Ok(gy.clone()),
            GraphBlock::Scale(s) => {
                let s = *s;
                Ok(gy.map(move |v| s * v))
            }
            GraphBlock::DwConv { kernel, .. } => dwconv3x3_vjp(gy, kernel),
            GraphBlock::PwConv { weight, c_in, .. } => pwconv_vjp(gy, weight, *c_in),
            GraphBlock::BatchNorm(bn) => batchnorm_infer_vjp(gy, bn),
            GraphBlock::LayerNorm(ln) => layernorm_channels_vjp(x, ln, gy),
            GraphBlock::Silu => elementwise_vjp(x, gy, act::silu_deriv),
            GraphBlock::Gelu => elementwise_vjp(x, gy, act::gelu_deriv),
            GraphBlock::Sigmoid => elementwise_vjp(x, gy, act::sigmoid_deriv),
            GraphBlock::Ss2d(routes) => {
                let g = ss2d_vjp(routes, &grid_to_seq(x)?, h, w, &grid_to_seq(gy)?)?;
                seq_to_grid(&g, c, h, w)
            }
            GraphBlock::Vim { fwd, bwd } => {
                let g = vim_scan_vjp(fwd, bwd, &grid_to_seq(x)?, &grid_to_seq(gy)?)?;
                seq_to_grid(&g, c, h, w)
            }
            GraphBlock::Mamba(mw) => {
                let g = vanilla_mamba_block_vjp(&grid_to_seq(x)?, mw, &grid_to_seq(gy)?)?;
                seq_to_grid(&g, c, h, w)
            }
            GraphBlock::VanillaVss(vw) => vanilla_vss_block_vjp(x, vw, gy),
            GraphBlock::Vss(vw) => vss_block_vjp(x, vw, gy),
            GraphBlock::CrackMamba(cw) => crackmamba_block_vjp(x, cw, gy),
        }
    }
}

fn elementwise_vjp(x: &Tensor, gy: &Tensor, df: fn(f64) -> f64) -> Result<Tensor> {
    let mut g = gy.clone();
    for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
        *gv *= df(*xv);
    }
    Ok(g)
}

/// Ordered chain of blocks with a consistent shape chain.
#[derive(Debug, Clone)]
pub struct BlockGraph {
    pub blocks: Vec<GraphBlock>,
}

impl BlockGraph {
    pub fn new(blocks: Vec<GraphBlock>) -> Self {
        BlockGraph { blocks }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for b in &self.blocks {
            cur = b.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Gradient of sum(gy . output) with respect to the input, by
    /// recomputing intermediates and walking the chain backwards.
    pub fn vjp(&self, x: &Tensor, gy: &Tensor) -> Result<Tensor> {
        let mut inputs = Vec::with_capacity(self.blocks.len());
        let mut cur = x.clone();
        for b in &self.blocks {
            inputs.push(cur.clone());
            cur = b.forward(&cur)?;
        }
        let mut g = gy.clone();
        for (b, inp) in self.blocks.iter().rev().zip(inputs.iter().rev()) {
            g = b.vjp(inp, &g)?;
        }
        Ok(g)
    }
}

// ---------------------------------------------------------------------------
// contribution pipeline

/// Per-image contributions of the central output unit to every input
/// pixel.
#[derive(Debug, Clone)]
pub struct ContributionMap {
    /// One (C,H,W) gradient tensor per image, in batch order.
    pub per_image: Vec<Tensor>,
    pub h: usize,
    pub w: usize,
}

/// Seed gradient: 1 at the central spatial unit of every output channel.
fn central_seed(out: &Tensor) -> Result<Tensor> {
    let (c, h, w) = grid_dims(out)?;
    if h == 0 || w == 0 {
        return Err(Error::InvalidDimension("empty output".into()));
    }
    let mut gy = Tensor::zeros(vec![c, h, w]);
    for ch in 0..c {
        gy.set(&[ch, h / 2, w / 2], 1.0);
    }
    Ok(gy)
}

/// Sum over output channels of the central output unit — the scalar the
/// contribution derivative is taken of.
pub fn central_unit_sum(graph: &BlockGraph, image: &Tensor) -> Result<f64> {
    let out = graph.forward(image)?;
    let (c, h, w) = grid_dims(&out)?;
    Ok((0..c).map(|ch| out.at(&[ch, h / 2, w / 2])).sum())
}

pub fn contribution(graph: &BlockGraph, images: &[Tensor]) -> Result<ContributionMap> {
    if images.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (_, h, w) = grid_dims(&images[0])?;
    let mut per_image = Vec::with_capacity(images.len());
    for img in images {
        let out = graph.forward(img)?;
        let gy = central_seed(&out)?;
        let g = graph.vjp(img, &gy)?;
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("contribution gradient".into()));
        }
        per_image.push(g);
    }
    Ok(ContributionMap { per_image, h, w })
}

/// Clamp, aggregate over images and channels, log-compress, and
/// normalize by the maximum. Errors if no contribution is positive.
pub fn erf_image(cm: &ContributionMap) -> Result<Tensor> {
    let mut acc = Tensor::zeros(vec![cm.h, cm.w]);
    for g in &cm.per_image {
        let (c, h, w) = grid_dims(g)?;
        if (h, w) != (cm.h, cm.w) {
            return Err(Error::ShapeMismatch("contribution map geometry".into()));
        }
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let off = acc.offset(&[y, x]);
                    acc.data_mut()[off] += g.at(&[ch, y, x]).max(0.0);
                }
            }
        }
    }
    let mut max = 0.0f64;
    for v in acc.data_mut() {
        *v = (*v + 1.0).log10();
        max = max.max(*v);
    }
    if max <= 0.0 {
        return Err(Error::DegenerateMap);
    }
    for v in acc.data_mut() {
        *v /= max;
    }
    Ok(acc)
}

/// Central finite differences of the central-unit sum with respect to
/// each input pixel.
pub fn fd_gradient_oracle(graph: &BlockGraph, image: &Tensor, step: f64) -> Result<Tensor> {
    let mut g = Tensor::zeros(image.dims().to_vec());
    for idx in 0..image.len() {
        let mut plus = image.clone();
        plus.data_mut()[idx] += step;
        let mut minus = image.clone();
        minus.data_mut()[idx] -= step;
        let fp = central_unit_sum(graph, &plus)?;
        let fm = central_unit_sum(graph, &minus)?;
        g.data_mut()[idx] = (fp - fm) / (2.0 * step);
    }
    Ok(g)
}

/// Maximum relative disagreement between two gradient tensors, with the
/// denominator floored at 1e-8.
pub fn max_relative_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch("gradient comparison".into()));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-8))
        .fold(0.0, f64::max))
}

// ---------------------------------------------------------------------------
// cross profile

#[derive(Debug, Clone, Copy)]
pub struct CrossProfile {
    pub cross_mean: f64,
    pub off_cross_mean: f64,
    pub center_is_max: bool,
}

/// Mean over the central row and column versus the rest; requires odd
/// spatial dims so the center is unambiguous.
pub fn cross_profile(erf: &Tensor) -> Result<CrossProfile> {
    let (h, w) = match erf.dims() {
        [h, w] => (*h, *w),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "cross_profile expects (H,W), got {:?}",
                other
            )))
        }
    };
    if h % 2 == 0 || w % 2 == 0 {
        return Err(Error::InvalidDimension(
            "cross_profile requires odd dims".into(),
        ));
    }
    let (cy, cx) = (h / 2, w / 2);
    let mut cross_sum = 0.0;
    let mut cross_n = 0usize;
    let mut off_sum = 0.0;
    let mut off_n = 0usize;
    let mut max = f64::NEG_INFINITY;
    for y in 0..h {
        for x in 0..w {
            let v = erf.at(&[y, x]);
            max = max.max(v);
            if y == cy || x == cx {
                cross_sum += v;
                cross_n += 1;
            } else {
                off_sum += v;
                off_n += 1;
            }
        }
    }
    Ok(CrossProfile {
        cross_mean: cross_sum / cross_n as f64,
        off_cross_mean: if off_n == 0 { 0.0 } else { off_sum / off_n as f64 },
        center_is_max: erf.at(&[cy, cx]) >= max,
    })
}

// ---------------------------------------------------------------------------
// synthetic crack images

/// Random-walk crack images with matching binary masks, deterministic
/// per seed. The crack is a width-wide polyline of intensity 1 over a
/// uniform-noise background in [0, noise].
pub fn synth_cracks(
    rng: &mut Rng,
    count: usize,
    size: usize,
    width: usize,
    noise: f64,
) -> Result<Vec<(Tensor, Tensor)>> {
    if width == 0 || size < 16 {
        return Err(Error::InvalidDimension(
            "synth_cracks needs width >= 1 and size >= 16".into(),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut img = Tensor::zeros(vec![1, size, size]);
        let mut mask = Tensor::zeros(vec![1, size, size]);
        if noise > 0.0 {
            for v in img.data_mut() {
                *v = rng.uniform(0.0, noise);
            }
        }
        // left-to-right walk; y is the top of the width-wide stamp and
        // stays clamped so the stamp fits inside the image
        let y_max = size - width;
        let mut y = (rng.next_u64() as usize) % (y_max + 1);
        for x in 0..size {
            for dy in 0..width {
                img.set(&[0, y + dy, x], 1.0);
                mask.set(&[0, y + dy, x], 1.0);
            }
            let step = (rng.next_u64() % 3) as i64 - 1;
            y = (y as i64 + step).clamp(0, y_max as i64) as usize;
        }
        out.push((img, mask));
    }
    Ok(out)
}
