//! Rayleigh fading multiple-access channel.
//!
//! Gains `h[n][m][k]` and noise `z[n][k]` are length-`s` vectors of i.i.d.
//! circularly symmetric complex Gaussians. Antenna `k` receives
//! `y[n][k][i] = sum_m h[n][m][k][i] * x[n][m][i] + z[n][k][i]`, i.e. the
//! channel acts entrywise per subchannel.
//!
//! Each row (one `(n, m, k)` gain vector or one `(n, k)` noise vector) comes
//! from its own keyed stream, see [`crate::rng`].

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{ensure_len, invalid, Result};
use crate::packing::SymbolBlock;
use crate::rng::{fill_complex_normal, StreamKey, StreamTag, MAX_COORD};

/// Sizes of one iteration's channel use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    /// OFDM symbols per iteration, `N`.
    pub symbols: usize,
    /// Transmitting devices, `M`.
    pub devices: usize,
    /// Receive antennas at the parameter server, `K`.
    pub antennas: usize,
    /// Subchannels per symbol, `s`.
    pub subchannels: usize,
}

impl Dims {
    pub fn new(symbols: usize, devices: usize, antennas: usize, subchannels: usize) -> Self {
        Self {
            symbols,
            devices,
            antennas,
            subchannels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.symbols, self.devices, self.antennas, self.subchannels];
        if all.contains(&0) {
            return Err(invalid(format!("channel dimensions must be positive: {self:?}")));
        }
        if [self.symbols, self.devices, self.antennas]
            .iter()
            .any(|&v| v > MAX_COORD + 1)
        {
            return Err(invalid(format!("channel dimensions too large: {self:?}")));
        }
        Ok(())
    }
}

/// Where a realization's randomness comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DrawSeed {
    pub seed: u64,
    pub iteration: u64,
}

impl DrawSeed {
    pub fn new(seed: u64, iteration: u64) -> Self {
        Self { seed, iteration }
    }

    pub(crate) fn channel_key(&self) -> StreamKey {
        StreamKey::new(self.seed, StreamTag::Channel, self.iteration)
    }

    pub(crate) fn noise_key(&self) -> StreamKey {
        StreamKey::new(self.seed, StreamTag::Noise, self.iteration)
    }
}

/// Draws the gain vector `h[n][m][k]`; shared by the explicit and fused paths.
pub(crate) fn draw_gain_row(
    key: &StreamKey,
    sigma_h_sq: f64,
    n: usize,
    m: usize,
    k: usize,
    row: &mut [Complex64],
) {
    fill_complex_normal(&mut key.rng([n, m, k]), sigma_h_sq, row);
}

/// Draws the noise vector `z[n][k]`. Zero variance yields exact zeros.
pub(crate) fn draw_noise_row(
    key: &StreamKey,
    sigma_z_sq: f64,
    n: usize,
    k: usize,
    row: &mut [Complex64],
) {
    if sigma_z_sq == 0.0 {
        row.fill(Complex64::new(0.0, 0.0));
    } else {
        fill_complex_normal(&mut key.rng([n, k, 0]), sigma_z_sq, row);
    }
}

/// Full CSI for one iteration, laid out `[n][m][k][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    dims: Dims,
    sigma_h_sq: f64,
    gains: Vec<Complex64>,
}

impl ChannelRealization {
    /// Wraps explicit gains, e.g. hand-built test channels.
    pub fn from_gains(dims: Dims, sigma_h_sq: f64, gains: Vec<Complex64>) -> Result<Self> {
        dims.validate()?;
        if !(sigma_h_sq > 0.0 && sigma_h_sq.is_finite()) {
            return Err(invalid("sigma_h_sq must be positive"));
        }
        ensure_len(
            "channel gains",
            dims.symbols * dims.devices * dims.antennas * dims.subchannels,
            gains.len(),
        )?;
        Ok(Self {
            dims,
            sigma_h_sq,
            gains,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn sigma_h_sq(&self) -> f64 {
        self.sigma_h_sq
    }

    /// All gains, flattened `[n][m][k][i]`.
    pub fn gains(&self) -> &[Complex64] {
        &self.gains
    }

    /// The length-`s` gain vector from device `m` to antenna `k` on symbol `n`.
    pub fn row(&self, n: usize, m: usize, k: usize) -> &[Complex64] {
        let d = self.dims;
        let start = ((n * d.devices + m) * d.antennas + k) * d.subchannels;
        &self.gains[start..start + d.subchannels]
    }
}

/// Receiver noise for one iteration, laid out `[n][k][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRealization {
    symbols: usize,
    antennas: usize,
    subchannels: usize,
    sigma_z_sq: f64,
    noise: Vec<Complex64>,
}

impl NoiseRealization {
    pub fn from_values(
        symbols: usize,
        antennas: usize,
        subchannels: usize,
        sigma_z_sq: f64,
        noise: Vec<Complex64>,
    ) -> Result<Self> {
        if symbols == 0 || antennas == 0 || subchannels == 0 {
            return Err(invalid("noise dimensions must be positive"));
        }
        if !(sigma_z_sq >= 0.0 && sigma_z_sq.is_finite()) {
            return Err(invalid("sigma_z_sq must be nonnegative"));
        }
        ensure_len("noise values", symbols * antennas * subchannels, noise.len())?;
        Ok(Self {
            symbols,
            antennas,
            subchannels,
            sigma_z_sq,
            noise,
        })
    }

    /// Noiseless receiver matching `dims`.
    pub fn zeros(dims: Dims) -> Self {
        Self {
            symbols: dims.symbols,
            antennas: dims.antennas,
            subchannels: dims.subchannels,
            sigma_z_sq: 0.0,
            noise: vec![Complex64::new(0.0, 0.0); dims.symbols * dims.antennas * dims.subchannels],
        }
    }

    pub fn sigma_z_sq(&self) -> f64 {
        self.sigma_z_sq
    }

    pub fn values(&self) -> &[Complex64] {
        &self.noise
    }

    pub fn row(&self, n: usize, k: usize) -> &[Complex64] {
        let start = (n * self.antennas + k) * self.subchannels;
        &self.noise[start..start + self.subchannels]
    }

    fn check_against(&self, dims: Dims) -> Result<()> {
        ensure_len("noise symbols", dims.symbols, self.symbols)?;
        ensure_len("noise antennas", dims.antennas, self.antennas)?;
        ensure_len("noise subchannels", dims.subchannels, self.subchannels)
    }
}

/// Per-antenna received symbols, laid out `[n][k][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceivedSignal {
    symbols: usize,
    antennas: usize,
    subchannels: usize,
    y: Vec<Complex64>,
}

impl ReceivedSignal {
    pub fn from_values(
        symbols: usize,
        antennas: usize,
        subchannels: usize,
        y: Vec<Complex64>,
    ) -> Result<Self> {
        ensure_len("received values", symbols * antennas * subchannels, y.len())?;
        Ok(Self {
            symbols,
            antennas,
            subchannels,
            y,
        })
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn subchannels(&self) -> usize {
        self.subchannels
    }

    pub fn values(&self) -> &[Complex64] {
        &self.y
    }

    pub fn row(&self, n: usize, k: usize) -> &[Complex64] {
        let start = (n * self.antennas + k) * self.subchannels;
        &self.y[start..start + self.subchannels]
    }
}

pub fn sample_channel(seed: DrawSeed, dims: Dims, sigma_h_sq: f64) -> Result<ChannelRealization> {
    dims.validate()?;
    if !(sigma_h_sq > 0.0 && sigma_h_sq.is_finite()) {
        return Err(invalid("sigma_h_sq must be positive"));
    }
    let key = seed.channel_key();
    let s = dims.subchannels;
    let mut gains = vec![Complex64::new(0.0, 0.0); dims.symbols * dims.devices * dims.antennas * s];
    gains
        .par_chunks_mut(s)
        .enumerate()
        .for_each(|(row_idx, row)| {
            let k = row_idx % dims.antennas;
            let m = (row_idx / dims.antennas) % dims.devices;
            let n = row_idx / (dims.antennas * dims.devices);
            draw_gain_row(&key, sigma_h_sq, n, m, k, row);
        });
    Ok(ChannelRealization {
        dims,
        sigma_h_sq,
        gains,
    })
}

pub fn sample_noise(
    seed: DrawSeed,
    symbols: usize,
    antennas: usize,
    subchannels: usize,
    sigma_z_sq: f64,
) -> Result<NoiseRealization> {
    Dims::new(symbols, 1, antennas, subchannels).validate()?;
    if !(sigma_z_sq >= 0.0 && sigma_z_sq.is_finite()) {
        return Err(invalid("sigma_z_sq must be nonnegative"));
    }
    let key = seed.noise_key();
    let mut noise = vec![Complex64::new(0.0, 0.0); symbols * antennas * subchannels];
    noise
        .par_chunks_mut(subchannels)
        .enumerate()
        .for_each(|(row_idx, row)| {
            draw_noise_row(&key, sigma_z_sq, row_idx / antennas, row_idx % antennas, row);
        });
    Ok(NoiseRealization {
        symbols,
        antennas,
        subchannels,
        sigma_z_sq,
        noise,
    })
}

/// Checks that `tx` holds `M` devices of `N` blocks of length `s`.
pub(crate) fn check_tx(tx: &[Vec<SymbolBlock>], dims: Dims) -> Result<()> {
    ensure_len("transmitting devices", dims.devices, tx.len())?;
    for blocks in tx {
        ensure_len("symbols per device", dims.symbols, blocks.len())?;
        for block in blocks {
            ensure_len("subchannels per symbol", dims.subchannels, block.len())?;
        }
    }
    Ok(())
}

/// Superposition at antenna `k`: `out = sum_m h_m * x_m + z`, accumulated in device order.
pub(crate) fn superpose_into<'a>(
    gain_row: impl Fn(usize) -> &'a [Complex64],
    tx: &[Vec<SymbolBlock>],
    n: usize,
    noise: &[Complex64],
    out: &mut [Complex64],
) {
    out.fill(Complex64::new(0.0, 0.0));
    for (m, blocks) in tx.iter().enumerate() {
        let x = blocks[n].values();
        for ((acc, hv), xv) in out.iter_mut().zip(gain_row(m)).zip(x) {
            *acc += hv * xv;
        }
    }
    for (acc, zv) in out.iter_mut().zip(noise) {
        *acc += zv;
    }
}

pub fn propagate(
    tx: &[Vec<SymbolBlock>],
    h: &ChannelRealization,
    z: &NoiseRealization,
) -> Result<ReceivedSignal> {
    let dims = h.dims();
    check_tx(tx, dims)?;
    z.check_against(dims)?;
    let s = dims.subchannels;
    let mut y = vec![Complex64::new(0.0, 0.0); dims.symbols * dims.antennas * s];
    y.par_chunks_mut(s).enumerate().for_each(|(row_idx, out)| {
        let n = row_idx / dims.antennas;
        let k = row_idx % dims.antennas;
        superpose_into(|m| h.row(n, m, k), tx, n, z.row(n, k), out);
    });
    Ok(ReceivedSignal {
        symbols: dims.symbols,
        antennas: dims.antennas,
        subchannels: s,
        y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn block(values: &[Complex64]) -> SymbolBlock {
        SymbolBlock::new(values.to_vec()).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let dims = Dims::new(2, 3, 4, 5);
        let a = sample_channel(DrawSeed::new(42, 0), dims, 1.0).unwrap();
        let b = sample_channel(DrawSeed::new(42, 0), dims, 1.0).unwrap();
        assert_eq!(a, b);
        let other = sample_channel(DrawSeed::new(42, 1), dims, 1.0).unwrap();
        assert_ne!(a, other);

        let za = sample_noise(DrawSeed::new(42, 0), 2, 4, 5, 3.0).unwrap();
        let zb = sample_noise(DrawSeed::new(42, 0), 2, 4, 5, 3.0).unwrap();
        assert_eq!(za, zb);
    }

    #[test]
    fn sampling_is_thread_count_independent() {
        let dims = Dims::new(2, 3, 16, 7);
        let reference = sample_channel(DrawSeed::new(9, 5), dims, 2.0).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| sample_channel(DrawSeed::new(9, 5), dims, 2.0).unwrap());
        assert_eq!(reference, single);
    }

    #[test]
    fn rows_are_keyed_by_coordinates() {
        // Growing K must not change the rows that already existed.
        let small = sample_channel(DrawSeed::new(1, 0), Dims::new(1, 2, 2, 3), 1.0).unwrap();
        let large = sample_channel(DrawSeed::new(1, 0), Dims::new(1, 2, 5, 3), 1.0).unwrap();
        for m in 0..2 {
            for k in 0..2 {
                assert_eq!(small.row(0, m, k), large.row(0, m, k));
            }
        }
    }

    #[test]
    fn gain_moments() {
        // 10^6 scalars pooled
        let h = sample_channel(DrawSeed::new(42, 0), Dims::new(1, 10, 100, 1000), 1.0).unwrap();
        let n = h.gains().len() as f64;
        let power = h.gains().iter().map(|v| v.norm_sqr()).sum::<f64>() / n;
        assert!((power - 1.0).abs() < 0.01, "mean |h|^2 = {power}");

        let cross: Vec<f64> = h.gains().iter().map(|v| v.re * v.im).collect();
        let mean = cross.iter().sum::<f64>() / n;
        let var = cross.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(mean.abs() <= 3.0 * se, "mean Re*Im = {mean}, se = {se}");
    }

    #[test]
    fn noise_moments_and_zero_variance() {
        let z = sample_noise(DrawSeed::new(7, 0), 1, 1000, 1000, 20.0).unwrap();
        let n = z.values().len() as f64;
        let power = z.values().iter().map(|v| v.norm_sqr()).sum::<f64>() / n;
        assert!((power - 20.0).abs() < 0.2, "mean |z|^2 = {power}");

        let quiet = sample_noise(DrawSeed::new(7, 0), 2, 3, 4, 0.0).unwrap();
        assert!(quiet.values().iter().all(|v| *v == c(0.0, 0.0)));
    }

    #[test]
    fn sampling_rejects_bad_parameters() {
        assert!(sample_channel(DrawSeed::new(0, 0), Dims::new(0, 1, 1, 1), 1.0).is_err());
        assert!(sample_channel(DrawSeed::new(0, 0), Dims::new(1, 1, 1, 1), 0.0).is_err());
        assert!(sample_channel(DrawSeed::new(0, 0), Dims::new(1, 1, 1, 1), -1.0).is_err());
        assert!(sample_noise(DrawSeed::new(0, 0), 1, 0, 1, 1.0).is_err());
        assert!(sample_noise(DrawSeed::new(0, 0), 1, 1, 1, -1.0).is_err());
    }

    #[test]
    fn identity_channel() {
        let dims = Dims::new(1, 1, 1, 1);
        let h = ChannelRealization::from_gains(dims, 1.0, vec![c(1.0, 0.0)]).unwrap();
        let tx = vec![vec![block(&[c(0.3, -1.2)])]];
        let y = propagate(&tx, &h, &NoiseRealization::zeros(dims)).unwrap();
        assert_eq!(y.values(), &[c(0.3, -1.2)]);
    }

    #[test]
    fn two_device_superposition() {
        let dims = Dims::new(1, 2, 1, 1);
        let h = ChannelRealization::from_gains(dims, 1.0, vec![c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        let tx = vec![vec![block(&[c(1.0, 0.0)])], vec![block(&[c(1.0, 0.0)])]];
        let y = propagate(&tx, &h, &NoiseRealization::zeros(dims)).unwrap();
        assert_eq!(y.values(), &[c(1.0, 1.0)]);
    }

    #[test]
    fn zero_signal_passes_noise_through() {
        let dims = Dims::new(2, 3, 4, 5);
        let h = sample_channel(DrawSeed::new(3, 0), dims, 1.0).unwrap();
        let z = sample_noise(DrawSeed::new(3, 0), 2, 4, 5, 2.0).unwrap();
        let zero = block(&[c(0.0, 0.0); 5]);
        let tx = vec![vec![zero.clone(), zero]; 3];
        let y = propagate(&tx, &h, &z).unwrap();
        assert_eq!(y.values(), z.values());
    }

    #[test]
    fn propagation_is_linear() {
        let dims = Dims::new(2, 3, 2, 4);
        let h = sample_channel(DrawSeed::new(11, 0), dims, 1.0).unwrap();
        let quiet = NoiseRealization::zeros(dims);
        let mk = |off: f64| -> Vec<Vec<SymbolBlock>> {
            (0..3)
                .map(|m| {
                    (0..2)
                        .map(|n| {
                            let v: Vec<Complex64> = (0..4)
                                .map(|i| c(off + (m * 7 + n * 3 + i) as f64, off - i as f64))
                                .collect();
                            block(&v)
                        })
                        .collect()
                })
                .collect()
        };
        let tx1 = mk(0.5);
        let tx2 = mk(-2.0);
        let a = 1.7;
        let combo: Vec<Vec<SymbolBlock>> = tx1
            .iter()
            .zip(&tx2)
            .map(|(b1, b2)| {
                b1.iter()
                    .zip(b2)
                    .map(|(x, y)| {
                        block(
                            &x.values()
                                .iter()
                                .zip(y.values())
                                .map(|(u, v)| u * a + v)
                                .collect::<Vec<_>>(),
                        )
                    })
                    .collect()
            })
            .collect();
        let lhs = propagate(&combo, &h, &quiet).unwrap();
        let y1 = propagate(&tx1, &h, &quiet).unwrap();
        let y2 = propagate(&tx2, &h, &quiet).unwrap();
        for ((l, u), v) in lhs.values().iter().zip(y1.values()).zip(y2.values()) {
            let rhs = u * a + v;
            assert!((l - rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
        }
    }

    #[test]
    fn received_mean_is_zero_over_realizations() {
        // Fixed tx, many independent draws: E[y] = 0 since E[h] = E[z] = 0.
        let dims = Dims::new(1, 2, 1, 1);
        let tx = vec![vec![block(&[c(1.0, -0.5)])], vec![block(&[c(2.0, 0.25)])]];
        let trials = 10_000;
        let ys: Vec<Complex64> = (0..trials)
            .map(|t| {
                let seed = DrawSeed::new(5, t);
                let h = sample_channel(seed, dims, 1.0).unwrap();
                let z = sample_noise(seed, 1, 1, 1, 1.0).unwrap();
                propagate(&tx, &h, &z).unwrap().values()[0]
            })
            .collect();
        let n = trials as f64;
        for part in [|v: &Complex64| v.re, |v: &Complex64| v.im] {
            let xs: Vec<f64> = ys.iter().map(part).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() <= 4.0 * (var / n).sqrt());
        }
    }

    #[test]
    fn propagate_rejects_mismatch() {
        let dims = Dims::new(1, 2, 1, 2);
        let h = sample_channel(DrawSeed::new(0, 0), dims, 1.0).unwrap();
        let z = NoiseRealization::zeros(dims);
        let one = vec![block(&[c(1.0, 0.0), c(0.0, 0.0)])];
        assert!(propagate(&[one.clone()], &h, &z).is_err());
        let short = vec![block(&[c(1.0, 0.0)])];
        assert!(propagate(&[one.clone(), short], &h, &z).is_err());
        let wrong_noise = NoiseRealization::zeros(Dims::new(1, 2, 3, 2));
        assert!(propagate(&[one.clone(), one], &h, &wrong_noise).is_err());
    }
}
