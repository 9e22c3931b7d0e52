//! Learning-based maximum-likelihood detection for uplink multiuser MIMO
//! receivers with one-bit ADCs.
//!
//! The crate covers the whole chain used by the `onebit` command-line tool:
//!
//! - [`signal`]: QAM constellations, candidate enumeration, Rayleigh channels,
//!   the real-composite transform, noise, dither and the one-bit quantizer.
//! - [`likelihood`]: likelihood tables built from CSI, learned from pilots,
//!   bias-repaired, or recovered from dithered pilots.
//! - [`detect`]: ML detection over a likelihood table and the one-bit ZF baseline.
//! - [`snr`]: zero-probability counting and offline polynomial SNR mapping.
//! - [`adapt`]: CRC-16 and the CRC-gated post update of likelihood tables.
//! - [`experiment`]: seeded, thread-count independent Monte Carlo sweeps.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod detect;
pub mod error;
pub mod experiment;
pub mod likelihood;
pub mod normal;
pub mod rng;
pub mod signal;
pub mod snr;

pub use error::{Error, Result};

pub use adapt::{AlphaRule, FramePlan, UpdateState};
pub use detect::{ml_detect, zf_detect, DetectionResult, ZfDetector};
pub use experiment::{DetectorKind, ExperimentResult, SimConfig};
pub use likelihood::{LikelihoodTable, PilotObservations};
pub use rng::{Purpose, SeedTree};
pub use signal::{CandidateSet, ChannelRealization, Constellation, LinkParams};
pub use snr::{OfflineDataset, PolyModel};
