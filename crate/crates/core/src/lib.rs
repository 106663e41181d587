//! Analog over-the-air distributed SGD on a Rayleigh fading multiple-access
//! channel with a multi-antenna parameter server.
//!
//! Devices pack their gradients onto OFDM subchannels and transmit them
//! simultaneously. The server sums the antenna signals weighted by the
//! conjugate sum of the devices' gains, which yields a scaled estimate of the
//! average gradient whose interference and noise shrink as antennas are added.

pub mod channel;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod link;
pub mod ota;
pub mod packing;
pub mod registry;
pub mod rng;
pub mod statcheck;
pub mod verify;

pub use channel::{propagate, sample_channel, sample_noise, ChannelRealization, Dims, DrawSeed, NoiseRealization, ReceivedSignal};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use experiment::{power_report, run, run_matrix, MetricsRecord, RunOutput};
pub use learner::{LocalDataset, ModelParams, Optimizer, SoftmaxModel};
pub use link::GradientLink;
pub use ota::{combine, decompose, estimate_average_gradient, receive_combined, transmit, PowerSchedule};
pub use packing::{pack, unpack, GradientEstimate, SymbolBlock};
