//! Real gradient vectors <-> complex OFDM symbol blocks.
//!
//! A length-`d` gradient is zero-padded to `2sN` entries with `N = ceil(d / 2s)`.
//! Block `n` (zero-based) takes its real parts from entries `2ns .. 2ns + s` and
//! its imaginary parts from `2ns + s .. 2(n+1)s`.

use std::ops::{Deref, Index};

use num_complex::Complex64;

use crate::error::{ensure_len, invalid, Error, Result};

/// A device's stochastic gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    values: Vec<f64>,
    device_id: usize,
}

impl GradientEstimate {
    pub fn new(values: Vec<f64>, device_id: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("gradient must have at least one entry"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        Ok(Self { values, device_id })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn device_id(&self) -> usize {
        self.device_id
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl Deref for GradientEstimate {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// The payload of one OFDM symbol: one complex value per subchannel.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolBlock(Vec<Complex64>);

impl SymbolBlock {
    pub fn new(values: Vec<Complex64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("symbol block must have at least one subchannel"));
        }
        if !values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFinite("symbol block"));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_vec_unchecked(values: Vec<Complex64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[Complex64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Squared Euclidean norm.
    pub fn energy(&self) -> f64 {
        self.0.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

impl Index<usize> for SymbolBlock {
    type Output = Complex64;

    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

/// Number of symbols needed for a length-`d` vector over `s` subchannels.
pub fn num_blocks(d: usize, s: usize) -> usize {
    d.div_ceil(2 * s)
}

pub fn pack(gradient: &[f64], s: usize) -> Result<Vec<SymbolBlock>> {
    if s == 0 {
        return Err(invalid("subchannel count s must be at least 1"));
    }
    if gradient.is_empty() {
        return Err(invalid("gradient must have at least one entry"));
    }
    if !gradient.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let at = |idx: usize| gradient.get(idx).copied().unwrap_or(0.0);
    let blocks = (0..num_blocks(gradient.len(), s))
        .map(|n| {
            let base = 2 * n * s;
            let values = (0..s)
                .map(|i| Complex64::new(at(base + i), at(base + s + i)))
                .collect();
            SymbolBlock(values)
        })
        .collect();
    Ok(blocks)
}

/// Inverse of [`pack`]; padding entries beyond `d` are dropped.
pub fn unpack(blocks: &[SymbolBlock], d: usize) -> Result<Vec<f64>> {
    let first = blocks
        .first()
        .ok_or_else(|| invalid("cannot unpack an empty block list"))?;
    let s = first.len();
    if s == 0 {
        return Err(invalid("symbol blocks must be nonempty"));
    }
    for block in blocks {
        ensure_len("unpack block length", s, block.len())?;
    }
    if d == 0 {
        return Err(invalid("target dimension d must be at least 1"));
    }
    ensure_len("unpack block count", num_blocks(d, s), blocks.len())?;

    let mut out = vec![0.0; 2 * s * blocks.len()];
    for (n, block) in blocks.iter().enumerate() {
        let base = 2 * n * s;
        for (i, v) in block.0.iter().enumerate() {
            out[base + i] = v.re;
            out[base + s + i] = v.im;
        }
    }
    out.truncate(d);
    Ok(out)
}
