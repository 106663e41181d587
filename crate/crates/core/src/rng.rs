//! Keyed random streams.
//!
//! Every random row (one channel vector, one noise vector, one device's
//! partition, ...) is drawn from its own ChaCha8 stream. The 256-bit key is
//! built from the master seed, a [`StreamTag`] and the iteration; the 64-bit
//! stream id packs up to three row coordinates. Rows can therefore be filled
//! in any order, on any number of threads, with identical results.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Largest coordinate value accepted by [`StreamKey::rng`].
pub const MAX_COORD: usize = (1 << 21) - 1;

/// Distinguishes independent families of draws that share a seed and iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamTag {
    Channel = 1,
    Noise = 2,
    Partition = 3,
    Minibatch = 4,
    SyntheticTrain = 5,
    SyntheticTest = 6,
    SyntheticMeans = 7,
    Probe = 8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub tag: StreamTag,
    pub iteration: u64,
}

impl StreamKey {
    pub fn new(seed: u64, tag: StreamTag, iteration: u64) -> Self {
        Self {
            seed,
            tag,
            iteration,
        }
    }

    /// Generator for the row at `coords`. Each coordinate must be at most [`MAX_COORD`].
    pub fn rng(&self, coords: [usize; 3]) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(self.tag as u64).to_le_bytes());
        key[16..24].copy_from_slice(&self.iteration.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(pack_coords(coords));
        rng
    }
}

fn pack_coords(coords: [usize; 3]) -> u64 {
    assert!(
        coords.iter().all(|&c| c <= MAX_COORD),
        "stream coordinate out of range: {coords:?}"
    );
    ((coords[0] as u64) << 42) | ((coords[1] as u64) << 21) | coords[2] as u64
}

/// One draw from CN(0, variance): real and imaginary parts each N(0, variance/2).
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, std_per_part: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(std_per_part * re, std_per_part * im)
}

/// Fills `row` with i.i.d. CN(0, variance) draws.
pub fn fill_complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64, row: &mut [Complex64]) {
    let sd = (variance / 2.0).sqrt();
    for v in row.iter_mut() {
        *v = complex_normal(rng, sd);
    }
}
