//! How device gradients reach the parameter server.

use rayon::prelude::*;

use crate::channel::{Dims, DrawSeed};
use crate::config::RunConfig;
use crate::error::{invalid, Result};
use crate::ota::{estimate_average_gradient, receive_combined, transmit, PowerSchedule};
use crate::packing::{num_blocks, GradientEstimate, SymbolBlock};

/// What the parameter server obtains in one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkRound {
    /// Estimate of the average gradient, fed to the optimizer.
    pub estimate: Vec<f64>,
    /// Per-device transmit energy `alpha_t^2 sum_n ||g_m^n||^2`; `None` when nothing is sent over the air.
    pub energies: Option<Vec<f64>>,
}

pub trait GradientLink: Send + Sync {
    fn name(&self) -> &'static str;

    /// Delivers the devices' gradients at iteration `t` (1-based).
    fn aggregate(&self, t: usize, gradients: &[GradientEstimate]) -> Result<LinkRound>;
}

/// Exact mean, accumulated in device order.
pub fn average_gradient(gradients: &[GradientEstimate]) -> Result<Vec<f64>> {
    let first = gradients
        .first()
        .ok_or_else(|| invalid("need at least one gradient"))?;
    let d = first.len();
    let mut acc = vec![0.0; d];
    for g in gradients {
        crate::error::ensure_len("gradient length", d, g.len())?;
        for (a, v) in acc.iter_mut().zip(g.values()) {
            *a += v;
        }
    }
    let m = gradients.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    Ok(acc)
}

/// Error-free shared link: the server receives the true average.
#[derive(Clone, Copy, Debug, Default)]
pub struct ErrorFreeLink;

impl GradientLink for ErrorFreeLink {
    fn name(&self) -> &'static str {
        "error_free"
    }

    fn aggregate(&self, _t: usize, gradients: &[GradientEstimate]) -> Result<LinkRound> {
        Ok(LinkRound {
            estimate: average_gradient(gradients)?,
            energies: None,
        })
    }
}

/// Analog transmission over the fading MAC with matched-sum combining.
#[derive(Clone, Debug)]
pub struct OverTheAirLink {
    pub antennas: usize,
    pub subchannels: usize,
    pub sigma_h_sq: f64,
    pub sigma_z_sq: f64,
    pub power: PowerSchedule,
    pub seed: u64,
}

impl OverTheAirLink {
    pub fn from_config(c: &RunConfig) -> Self {
        Self {
            antennas: c.antennas,
            subchannels: c.s,
            sigma_h_sq: c.sigma_h_sq,
            sigma_z_sq: c.sigma_z_sq,
            power: c.power.clone(),
            seed: c.seed,
        }
    }
}

impl GradientLink for OverTheAirLink {
    fn name(&self) -> &'static str {
        "ota"
    }

    fn aggregate(&self, t: usize, gradients: &[GradientEstimate]) -> Result<LinkRound> {
        let d = gradients
            .first()
            .ok_or_else(|| invalid("need at least one gradient"))?
            .len();
        let alpha = self.power.alpha(t);
        let sent = gradients
            .par_iter()
            .map(|g| transmit(g, alpha, self.subchannels))
            .collect::<Result<Vec<_>>>()?;
        let energies = sent.iter().map(|x| x.energy).collect();
        let tx: Vec<Vec<SymbolBlock>> = sent.into_iter().map(|x| x.blocks).collect();
        let dims = Dims::new(
            num_blocks(d, self.subchannels),
            gradients.len(),
            self.antennas,
            self.subchannels,
        );
        let obs = receive_combined(
            DrawSeed::new(self.seed, t as u64),
            &tx,
            dims,
            self.sigma_h_sq,
            self.sigma_z_sq,
        )?;
        let estimate =
            estimate_average_gradient(&obs, alpha, gradients.len(), self.sigma_h_sq, d)?;
        Ok(LinkRound {
            estimate,
            energies: Some(energies),
        })
    }
}
