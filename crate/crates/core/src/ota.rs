//! Over-the-air gradient averaging without transmitter CSI.
//!
//! Devices send `alpha_t` times their packed gradients simultaneously. The
//! parameter server knows every gain and combines its antennas with the
//! conjugate of the summed gains,
//!
//! ```text
//! y[n][i] = (1/K) sum_k (sum_m h[n][m][k][i])^* y[n][k][i]
//! ```
//!
//! then divides by `alpha_t * M * sigma_h^2` to estimate the average gradient.
//! As `K` grows, `(1/K) sum_k |h|^2 -> sigma_h^2` and the cross-device and noise
//! terms vanish.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    check_tx, draw_gain_row, draw_noise_row, superpose_into, ChannelRealization, Dims, DrawSeed,
    NoiseRealization, ReceivedSignal,
};
use crate::error::{ensure_len, invalid, Error, Result};
use crate::packing::{num_blocks, pack, GradientEstimate, SymbolBlock};

/// Power allocation factor `alpha_t` over iterations `t = 1..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PowerSchedule {
    Constant { alpha: f64 },
    /// `alpha_t = alpha0 + slope * t`.
    LinearRamp { alpha0: f64, slope: f64 },
}

impl PowerSchedule {
    /// `alpha_t = 1 + t / 1000`.
    pub fn ramp_per_thousand() -> Self {
        PowerSchedule::LinearRamp {
            alpha0: 1.0,
            slope: 1e-3,
        }
    }

    pub fn alpha(&self, t: usize) -> f64 {
        match *self {
            PowerSchedule::Constant { alpha } => alpha,
            PowerSchedule::LinearRamp { alpha0, slope } => alpha0 + slope * t as f64,
        }
    }

    /// Checks `alpha_t > 0` for every `t` in `1..=iterations`.
    pub fn validate(&self, iterations: usize) -> Result<()> {
        // alpha_t is affine in t, so the endpoints suffice.
        for t in [1, iterations.max(1)] {
            let a = self.alpha(t);
            if !(a > 0.0 && a.is_finite()) {
                return Err(invalid(format!(
                    "power allocation factor must be positive, got {a} at t = {t}"
                )));
            }
        }
        Ok(())
    }
}

/// A device's channel input for one iteration and its energy `sum_n ||x^n||^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transmission {
    pub blocks: Vec<SymbolBlock>,
    pub energy: f64,
}

pub fn transmit(gradient: &GradientEstimate, alpha_t: f64, s: usize) -> Result<Transmission> {
    if !(alpha_t > 0.0 && alpha_t.is_finite()) {
        return Err(invalid("alpha_t must be positive"));
    }
    let blocks: Vec<SymbolBlock> = pack(gradient.values(), s)?
        .iter()
        .map(|b| b.scaled(alpha_t))
        .collect();
    let energy = blocks.iter().map(SymbolBlock::energy).sum();
    Ok(Transmission { blocks, energy })
}

/// Combiner output: one length-`s` block per symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedObservation {
    blocks: Vec<SymbolBlock>,
}

impl CombinedObservation {
    pub fn new(blocks: Vec<SymbolBlock>) -> Result<Self> {
        let s = blocks
            .first()
            .ok_or_else(|| invalid("observation needs at least one block"))?
            .len();
        for b in &blocks {
            ensure_len("observation block length", s, b.len())?;
            if !b.values().iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::NonFinite("combined observation"));
            }
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[SymbolBlock] {
        &self.blocks
    }

    pub fn subchannels(&self) -> usize {
        self.blocks[0].len()
    }
}

pub fn combine(rx: &ReceivedSignal, h: &ChannelRealization) -> Result<CombinedObservation> {
    let dims = h.dims();
    ensure_len("received symbols", dims.symbols, rx.symbols())?;
    ensure_len("received antennas", dims.antennas, rx.antennas())?;
    ensure_len("received subchannels", dims.subchannels, rx.subchannels())?;
    let s = dims.subchannels;
    let blocks = (0..dims.symbols)
        .into_par_iter()
        .map(|n| {
            let mut acc = vec![Complex64::new(0.0, 0.0); s];
            let mut weight = vec![Complex64::new(0.0, 0.0); s];
            for k in 0..dims.antennas {
                matched_weight(|m| h.row(n, m, k), dims.devices, &mut weight);
                for ((a, w), y) in acc.iter_mut().zip(&weight).zip(rx.row(n, k)) {
                    *a += w * y;
                }
            }
            finish_block(acc, dims.antennas)
        })
        .collect();
    CombinedObservation::new(blocks)
}

/// `weight[i] = sum_m conj(h[m][i])`, summed in device order.
fn matched_weight<'a>(
    gain_row: impl Fn(usize) -> &'a [Complex64],
    devices: usize,
    weight: &mut [Complex64],
) {
    weight.fill(Complex64::new(0.0, 0.0));
    for m in 0..devices {
        for (w, hv) in weight.iter_mut().zip(gain_row(m)) {
            *w += hv.conj();
        }
    }
}

fn finish_block(acc: Vec<Complex64>, antennas: usize) -> SymbolBlock {
    let k = antennas as f64;
    SymbolBlock::from_vec_unchecked(acc.into_iter().map(|a| a / k).collect())
}

/// Draws the channel and noise for `seed` and returns the combiner output
/// without materializing the full `N x M x K x s` gain tensor.
///
/// Bit-identical to `combine(&propagate(tx, &sample_channel(..), &sample_noise(..)), ..)`.
pub fn receive_combined(
    seed: DrawSeed,
    tx: &[Vec<SymbolBlock>],
    dims: Dims,
    sigma_h_sq: f64,
    sigma_z_sq: f64,
) -> Result<CombinedObservation> {
    dims.validate()?;
    check_tx(tx, dims)?;
    if !(sigma_h_sq > 0.0 && sigma_h_sq.is_finite()) {
        return Err(invalid("sigma_h_sq must be positive"));
    }
    if !(sigma_z_sq >= 0.0 && sigma_z_sq.is_finite()) {
        return Err(invalid("sigma_z_sq must be nonnegative"));
    }
    let s = dims.subchannels;
    let gain_key = seed.channel_key();
    let noise_key = seed.noise_key();
    let zero = Complex64::new(0.0, 0.0);

    let mut blocks = Vec::with_capacity(dims.symbols);
    let mut contributions = vec![zero; dims.antennas * s];
    for n in 0..dims.symbols {
        contributions
            .par_chunks_mut(s)
            .enumerate()
            .for_each_init(
                || (vec![zero; dims.devices * s], vec![zero; s], vec![zero; s], vec![zero; s]),
                |(gains, noise, y, weight), (k, out)| {
                    for (m, row) in gains.chunks_mut(s).enumerate() {
                        draw_gain_row(&gain_key, sigma_h_sq, n, m, k, row);
                    }
                    draw_noise_row(&noise_key, sigma_z_sq, n, k, noise);
                    let row = |m: usize| &gains[m * s..(m + 1) * s];
                    superpose_into(row, tx, n, noise, y);
                    matched_weight(row, dims.devices, weight);
                    for ((o, w), yv) in out.iter_mut().zip(weight.iter()).zip(y.iter()) {
                        *o = w * yv;
                    }
                },
            );
        let mut acc = vec![zero; s];
        for per_antenna in contributions.chunks(s) {
            for (a, c) in acc.iter_mut().zip(per_antenna) {
                *a += c;
            }
        }
        blocks.push(finish_block(acc, dims.antennas));
    }
    CombinedObservation::new(blocks)
}

/// Recovers the average gradient: real and imaginary parts of the combiner
/// output divided by `alpha_t * M * sigma_h^2`, unpacked to length `d`.
pub fn estimate_average_gradient(
    obs: &CombinedObservation,
    alpha_t: f64,
    devices: usize,
    sigma_h_sq: f64,
    d: usize,
) -> Result<Vec<f64>> {
    if !(alpha_t > 0.0 && alpha_t.is_finite()) {
        return Err(invalid("alpha_t must be positive"));
    }
    if !(sigma_h_sq > 0.0 && sigma_h_sq.is_finite()) {
        return Err(invalid("sigma_h_sq must be positive"));
    }
    if devices == 0 {
        return Err(invalid("device count must be at least 1"));
    }
    let s = obs.subchannels();
    if d == 0 {
        return Err(invalid("d must be at least 1"));
    }
    ensure_len("observation symbols", num_blocks(d, s), obs.blocks.len())?;
    let scale = alpha_t * devices as f64 * sigma_h_sq;
    let mut out = vec![0.0; 2 * s * obs.blocks.len()];
    for (n, block) in obs.blocks.iter().enumerate() {
        let base = 2 * n * s;
        for (i, y) in block.values().iter().enumerate() {
            out[base + i] = y.re / scale;
            out[base + s + i] = y.im / scale;
        }
    }
    out.truncate(d);
    Ok(out)
}

/// Signal, cross-device interference and noise parts of the combiner output.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub signal: Vec<Vec<Complex64>>,
    pub interference: Vec<Vec<Complex64>>,
    pub noise: Vec<Vec<Complex64>>,
}

impl Decomposition {
    /// Entrywise `signal + interference + noise`.
    pub fn total(&self) -> Vec<Vec<Complex64>> {
        self.signal
            .iter()
            .zip(&self.interference)
            .zip(&self.noise)
            .map(|((a, b), c)| {
                a.iter()
                    .zip(b)
                    .zip(c)
                    .map(|((x, y), z)| x + y + z)
                    .collect()
            })
            .collect()
    }
}

/// Splits the combiner output into its three terms.
///
/// `packed` holds each device's unscaled packed gradient. The parameter server
/// never sees these separately, so this is a diagnostic, not part of the
/// estimation path. The noise term is `(1/K) sum_k (sum_m h[m][k][i])^* z[k][i]`.
pub fn decompose(
    packed: &[Vec<SymbolBlock>],
    h: &ChannelRealization,
    z: &NoiseRealization,
    alpha_t: f64,
) -> Result<Decomposition> {
    let dims = h.dims();
    check_tx(packed, dims)?;
    ensure_len("noise values", dims.symbols * dims.antennas * dims.subchannels, z.values().len())?;
    let (big_k, s) = (dims.antennas as f64, dims.subchannels);
    let zero = Complex64::new(0.0, 0.0);

    let mut signal = vec![vec![zero; s]; dims.symbols];
    let mut interference = vec![vec![zero; s]; dims.symbols];
    let mut noise = vec![vec![zero; s]; dims.symbols];
    for n in 0..dims.symbols {
        for i in 0..s {
            let g = |m: usize| packed[m][n][i];
            let mut sig = zero;
            for m in 0..dims.devices {
                let hardening: f64 =
                    (0..dims.antennas).map(|k| h.row(n, m, k)[i].norm_sqr()).sum::<f64>() / big_k;
                sig += g(m) * hardening;
            }
            let mut inter = zero;
            let mut noi = zero;
            for k in 0..dims.antennas {
                for m in 0..dims.devices {
                    let hm = h.row(n, m, k)[i].conj();
                    for mp in (0..dims.devices).filter(|&mp| mp != m) {
                        inter += hm * h.row(n, mp, k)[i] * g(mp);
                    }
                    noi += hm * z.row(n, k)[i];
                }
            }
            signal[n][i] = sig * alpha_t;
            interference[n][i] = inter * alpha_t / big_k;
            noise[n][i] = noi / big_k;
        }
    }
    Ok(Decomposition {
        signal,
        interference,
        noise,
    })
}

/// `(1/K) sum_k sum_m sum_{m' != m} h[m][k][i]^* h[m'][k][i]` for every `(n, i)`.
///
/// Computed per antenna as `|sum_m h|^2 - sum_m |h|^2`, so the result is real.
pub fn interference_statistic(h: &ChannelRealization) -> Vec<Vec<Complex64>> {
    let dims = h.dims();
    let s = dims.subchannels;
    (0..dims.symbols)
        .map(|n| {
            (0..s)
                .map(|i| {
                    let total: f64 = (0..dims.antennas)
                        .map(|k| {
                            let mut sum = Complex64::new(0.0, 0.0);
                            let mut own = 0.0;
                            for m in 0..dims.devices {
                                let v = h.row(n, m, k)[i];
                                sum += v;
                                own += v.norm_sqr();
                            }
                            sum.norm_sqr() - own
                        })
                        .sum();
                    Complex64::new(total / dims.antennas as f64, 0.0)
                })
                .collect()
        })
        .collect()
}

/// Per-coefficient signal gain `(1/K) sum_k |h[n][m][k][i]|^2`, laid out `[n][m][i]`.
pub fn effective_gains(h: &ChannelRealization) -> Vec<f64> {
    let dims = h.dims();
    let s = dims.subchannels;
    let mut out = vec![0.0; dims.symbols * dims.devices * s];
    for n in 0..dims.symbols {
        for m in 0..dims.devices {
            let dst = &mut out[(n * dims.devices + m) * s..][..s];
            for k in 0..dims.antennas {
                for (o, v) in dst.iter_mut().zip(h.row(n, m, k)) {
                    *o += v.norm_sqr();
                }
            }
            for o in dst.iter_mut() {
                *o /= dims.antennas as f64;
            }
        }
    }
    out
}
