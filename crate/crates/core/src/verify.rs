//! Monte Carlo suites for the channel statistics.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::{sample_channel, Dims, DrawSeed};
use crate::error::{invalid, Result};
use crate::ota::{effective_gains, interference_statistic};
use crate::statcheck::{check_mean_zero, check_relative, check_variance, CheckReport, Tolerance, MonteCarloCheck};

pub const MIN_TRIALS: usize = 1000;

/// `(M, K, sigma_h^2)` triples checked by [`run_suite`].
pub const INTERFERENCE_CASES: [(usize, usize, f64); 3] = [(2, 4, 1.0), (4, 8, 1.0), (8, 16, 2.0)];

/// Antenna counts for the hardening check, each four times the previous.
pub const HARDENING_ANTENNAS: [usize; 4] = [4, 16, 64, 256];

/// `M (M - 1) sigma_h^4 / K`.
pub fn interference_variance(devices: usize, antennas: usize, sigma_h_sq: f64) -> f64 {
    (devices * devices.saturating_sub(1)) as f64 * sigma_h_sq * sigma_h_sq / antennas as f64
}

/// One interference-statistic sample per independent draw (single subchannel).
pub fn interference_samples(
    devices: usize,
    antennas: usize,
    sigma_h_sq: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<Complex64>> {
    let dims = Dims::new(1, devices, antennas, 1);
    (0..trials as u64)
        .into_par_iter()
        .map(|draw| {
            let h = sample_channel(DrawSeed::new(seed, draw), dims, sigma_h_sq)?;
            Ok(interference_statistic(&h)[0][0])
        })
        .collect()
}

/// Mean-zero and variance checks on the interference statistic.
pub fn interference_check(
    devices: usize,
    antennas: usize,
    sigma_h_sq: f64,
    trials: usize,
    seed: u64,
) -> Result<CheckReport> {
    let samples = interference_samples(devices, antennas, sigma_h_sq, trials, seed)?;
    let label = format!("interference M={devices} K={antennas} sigma_h^2={sigma_h_sq}");
    let mut report = check_mean_zero(&format!("{label} mean"), &samples, 4.0)?;
    let expected = interference_variance(devices, antennas, sigma_h_sq);
    if expected > 0.0 {
        report
            .checks
            .push(check_variance(&format!("{label} variance"), &samples, expected, 0.05)?);
    }
    Ok(report)
}

/// Relative RMS deviation of `(1/K) sum_k |h|^2` from `sigma_h^2`, pooled over devices and draws.
pub fn hardening_rms(
    devices: usize,
    antennas: usize,
    sigma_h_sq: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let dims = Dims::new(1, devices, antennas, 1);
    let sq: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|draw| {
            let h = sample_channel(DrawSeed::new(seed, draw), dims, sigma_h_sq)?;
            Ok(effective_gains(&h)
                .iter()
                .map(|g| (g / sigma_h_sq - 1.0).powi(2))
                .sum::<f64>())
        })
        .collect::<Result<_>>()?;
    Ok((sq.iter().sum::<f64>() / (trials * devices) as f64).sqrt())
}

/// Quadrupling `K` should halve the relative RMS deviation; each ratio must lie in `[0.4, 0.6]`.
pub fn hardening_check(
    devices: usize,
    antennas: &[usize],
    sigma_h_sq: f64,
    trials: usize,
    seed: u64,
) -> Result<CheckReport> {
    if antennas.len() < 2 {
        return Err(invalid("hardening check needs at least two antenna counts"));
    }
    let rms = antennas
        .iter()
        .map(|&k| hardening_rms(devices, k, sigma_h_sq, trials, seed))
        .collect::<Result<Vec<_>>>()?;
    let checks = antennas
        .windows(2)
        .zip(rms.windows(2))
        .map(|(k, r)| {
            let ratio = r[1] / r[0];
            let expected = (k[0] as f64 / k[1] as f64).sqrt();
            let mut c = check_relative(
                &format!("hardening rms ratio K={} -> K={}", k[0], k[1]),
                ratio,
                expected,
                0.2,
                trials,
            );
            c.passed = (0.4..=0.6).contains(&ratio);
            c
        })
        .collect();
    Ok(CheckReport { checks })
}

/// For a single device the statistic is identically zero.
pub fn single_device_check(antennas: usize, trials: usize, seed: u64) -> Result<MonteCarloCheck> {
    let samples = interference_samples(1, antennas, 1.0, trials, seed)?;
    let worst = samples.iter().map(|v| v.norm()).fold(0.0, f64::max);
    Ok(MonteCarloCheck {
        name: format!("interference M=1 K={antennas} is zero"),
        observed: worst,
        expected: 0.0,
        tolerance_kind: Tolerance::Absolute,
        tolerance: 0.0,
        trials,
        passed: worst == 0.0,
    })
}

/// Everything `verify-stats` runs.
pub fn run_suite(trials: usize, seed: u64) -> Result<CheckReport> {
    if trials < MIN_TRIALS {
        return Err(invalid(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    let mut checks = Vec::new();
    for (m, k, sigma) in INTERFERENCE_CASES {
        checks.extend(interference_check(m, k, sigma, trials, seed)?.checks);
    }
    checks.push(single_device_check(4, trials, seed)?);
    checks.extend(hardening_check(2, &HARDENING_ANTENNAS, 1.0, trials, seed)?.checks);
    Ok(CheckReport { checks })
}
