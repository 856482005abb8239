//! Dense row-major tensor of f64 values plus the binary file format
//! used to exchange tensors between commands.
//!
//! File layout: magic `STNS`, u8 version (1), u8 dtype (1 = f64),
//! u8 rank, u8 pad (0), `rank` little-endian u32 extents, then the
//! row-major f64 payload in little-endian order.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Dense row-major multidimensional array. Immutable after construction
/// in normal use; cheap to clone and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidDimension("zero extent".into()));
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(Error::DimsOverflow)?;
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {:?} imply {} elements, got {}",
                dims,
                len,
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims,
            data: vec![0.0; len],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major linear offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        for (i, &d) in idx.iter().zip(&self.dims) {
            debug_assert!(*i < d);
            off = off * d + i;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    /// Elementwise map with the same shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.dims == other.dims
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => return Err(Error::Truncated),
            n => filled += n,
        }
    }
    Ok(())
}

pub fn tensor_write(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut f = File::create(path)?;
    let mut buf = Vec::with_capacity(8 + 4 * t.rank() + 8 * t.len());
    buf.extend_from_slice(b"STNS");
    buf.push(1); // version
    buf.push(1); // dtype f64
    buf.push(t.rank() as u8);
    buf.push(0); // pad
    for &d in t.dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn tensor_read(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut f = File::open(path)?;
    let mut head = [0u8; 8];
    read_exact_or_truncated(&mut f, &mut head)?;
    if &head[0..4] != b"STNS" {
        return Err(Error::BadMagic);
    }
    if head[4] != 1 {
        return Err(Error::UnsupportedFormat(format!("version {}", head[4])));
    }
    if head[5] != 1 {
        return Err(Error::UnsupportedFormat(format!("dtype {}", head[5])));
    }
    let rank = head[6] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        read_exact_or_truncated(&mut f, &mut b)?;
        dims.push(u32::from_le_bytes(b) as usize);
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidDimension("zero extent in file".into()));
    }
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::DimsOverflow)?;
    // cap payloads at 1 GiB to catch corrupt headers before allocating
    if len.checked_mul(8).map_or(true, |b| b > 1 << 30) {
        return Err(Error::DimsOverflow);
    }
    let mut payload = vec![0u8; len * 8];
    read_exact_or_truncated(&mut f, &mut payload)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(dims, data)
}
