//! Monte Carlo checks with auditable reports.

use std::fmt;

use num_complex::Complex64;

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tolerance {
    /// `|observed - expected| <= value * |expected|`.
    Relative,
    /// `|observed - expected| <= value * standard error`.
    StandardErrors,
    /// `|observed - expected| <= value`.
    Absolute,
}

/// Outcome of one statistical check.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloCheck {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance_kind: Tolerance,
    pub tolerance: f64,
    pub trials: usize,
    pub passed: bool,
}

impl fmt::Display for MonteCarloCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tol = match self.tolerance_kind {
            Tolerance::Relative => format!("rel {}", self.tolerance),
            Tolerance::StandardErrors => format!("{} s.e.", self.tolerance),
            Tolerance::Absolute => format!("abs {}", self.tolerance),
        };
        write!(
            f,
            "[{}] {}: observed {:.6} expected {:.6} ({tol}, n = {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.expected,
            self.trials,
        )
    }
}

/// Combined report for several sub-checks.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub checks: Vec<MonteCarloCheck>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.checks.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

fn mean_and_var(xs: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

fn mean_part(
    name: String,
    xs: impl Iterator<Item = f64> + Clone,
    n: usize,
    expected: f64,
    max_se: f64,
) -> MonteCarloCheck {
    let (mean, var) = mean_and_var(xs, n);
    let se = (var / n as f64).sqrt();
    let passed = if se == 0.0 {
        mean == expected
    } else {
        (mean - expected).abs() <= max_se * se
    };
    MonteCarloCheck {
        name,
        observed: mean,
        expected,
        tolerance_kind: Tolerance::StandardErrors,
        tolerance: max_se,
        trials: n,
        passed,
    }
}

/// Sample mean within `max_standard_errors` of `expected`, real and imaginary
/// parts tested separately. A part with zero spread passes only on exact equality.
pub fn check_mean(
    name: &str,
    samples: &[Complex64],
    expected: Complex64,
    max_standard_errors: f64,
) -> Result<CheckReport> {
    if samples.len() < 2 {
        return Err(invalid("mean check needs at least two samples"));
    }
    if !(max_standard_errors > 0.0) {
        return Err(invalid("standard-error threshold must be positive"));
    }
    let n = samples.len();
    Ok(CheckReport {
        checks: vec![
            mean_part(format!("{name} (re)"), samples.iter().map(|v| v.re), n, expected.re, max_standard_errors),
            mean_part(format!("{name} (im)"), samples.iter().map(|v| v.im), n, expected.im, max_standard_errors),
        ],
    })
}

pub fn check_mean_zero(name: &str, samples: &[Complex64], max_standard_errors: f64) -> Result<CheckReport> {
    check_mean(name, samples, Complex64::new(0.0, 0.0), max_standard_errors)
}

/// Unbiased sample variance `sum |x - mean|^2 / (n - 1)`.
pub fn sample_variance(samples: &[Complex64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<Complex64>() / n;
    samples.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (n - 1.0)
}

pub fn check_variance(
    name: &str,
    samples: &[Complex64],
    expected: f64,
    rel_tol: f64,
) -> Result<MonteCarloCheck> {
    if samples.len() < 100 {
        return Err(invalid("variance check needs at least 100 samples"));
    }
    if !(expected > 0.0 && expected.is_finite()) || !(rel_tol > 0.0) {
        return Err(invalid("variance check needs positive expected value and tolerance"));
    }
    let observed = sample_variance(samples);
    Ok(MonteCarloCheck {
        name: name.to_string(),
        observed,
        expected,
        tolerance_kind: Tolerance::Relative,
        tolerance: rel_tol,
        trials: samples.len(),
        passed: (observed - expected).abs() <= rel_tol * expected,
    })
}

/// `|observed - expected| <= rel_tol * |expected|` for a derived statistic.
pub fn check_relative(name: &str, observed: f64, expected: f64, rel_tol: f64, trials: usize) -> MonteCarloCheck {
    MonteCarloCheck {
        name: name.to_string(),
        observed,
        expected,
        tolerance_kind: Tolerance::Relative,
        tolerance: rel_tol,
        trials,
        passed: (observed - expected).abs() <= rel_tol * expected.abs(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// Each successive metric moves in `direction`, allowing backsliding up to
/// `noise_margin`. Parameter values must be strictly increasing.
pub fn check_monotone(
    name: &str,
    series: &[(f64, f64)],
    direction: Direction,
    noise_margin: f64,
) -> Result<MonteCarloCheck> {
    if series.len() < 2 {
        return Err(invalid("monotonicity check needs at least two points"));
    }
    if series.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(invalid("parameter values must be strictly increasing"));
    }
    // worst step against the requested direction
    let worst = series
        .windows(2)
        .map(|w| match direction {
            Direction::Increasing => w[0].1 - w[1].1,
            Direction::Decreasing => w[1].1 - w[0].1,
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(MonteCarloCheck {
        name: name.to_string(),
        observed: worst,
        expected: 0.0,
        tolerance_kind: Tolerance::Absolute,
        tolerance: noise_margin,
        trials: series.len(),
        passed: worst <= noise_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64, scale: f64) -> Vec<Complex64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im) * scale
            })
            .collect()
    }

    #[test]
    fn mean_zero_cases() {
        let zeros = vec![Complex64::new(0.0, 0.0); 10];
        assert!(check_mean_zero("zeros", &zeros, 4.0).unwrap().passed());

        let ones = vec![Complex64::new(1.0, 0.0); 10];
        assert!(!check_mean_zero("ones", &ones, 4.0).unwrap().passed());

        let draws = normals(100_000, 1, 1.0);
        assert!(check_mean_zero("normal", &draws, 4.0).unwrap().passed());

        assert!(check_mean_zero("one", &zeros[..1], 4.0).is_err());
    }

    #[test]
    fn variance_cases() {
        // CN(0, 1): each part N(0, 1/2)
        let draws = normals(100_000, 2, std::f64::consts::FRAC_1_SQRT_2);
        assert!(check_variance("unit", &draws, 1.0, 0.05).unwrap().passed);

        let doubled: Vec<Complex64> = draws.iter().map(|v| v * 2.0).collect();
        let c = check_variance("doubled", &doubled, 1.0, 0.05).unwrap();
        assert!(!c.passed);
        assert!((c.observed - 4.0).abs() < 0.2);

        assert!(check_variance("few", &draws[..50], 1.0, 0.05).is_err());
        assert!(check_variance("neg", &draws, 0.0, 0.05).is_err());
    }

    #[test]
    fn monotone_cases() {
        let inc = Direction::Increasing;
        assert!(check_monotone("a", &[(1.0, 0.5), (5.0, 0.6), (40.0, 0.8)], inc, 0.0).unwrap().passed);
        assert!(check_monotone("b", &[(1.0, 0.5), (5.0, 0.49)], inc, 0.02).unwrap().passed);
        assert!(!check_monotone("c", &[(1.0, 0.8), (5.0, 0.5)], inc, 0.02).unwrap().passed);
        assert!(check_monotone("d", &[(5.0, 0.8), (1.0, 0.5)], inc, 0.02).is_err());
        assert!(check_monotone("e", &[(1.0, 0.8)], inc, 0.02).is_err());
        assert!(check_monotone("f", &[(1.0, 0.8), (2.0, 0.3)], Direction::Decreasing, 0.0).unwrap().passed);
    }

    #[test]
    fn reports_carry_audit_fields() {
        let c = check_relative("ratio", 0.52, 0.5, 0.2, 1000);
        let text = c.to_string();
        for needle in ["PASS", "ratio", "0.52", "0.5", "rel 0.2", "n = 1000"] {
            assert!(text.contains(needle), "{text}");
        }
    }
}
