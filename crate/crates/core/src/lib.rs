//! Software-defined optical receiver engine.
//!
//! Implements the two real-time DSP chains of a multi-format optical
//! receiver, direct-detection PAM and Kramers-Kronig (KK) coherent QAM,
//! together with a transmitter/channel simulator and a multi-stream
//! block-processing pipeline, so back-to-back Q-factor-vs-OSNR experiments
//! can be run end to end at desk scale.
//!
//! Modules follow the signal path: [`signal`] (types, constellations,
//! PRBS, RRC), [`tx`] (waveform synthesis), [`channel`] (noise loading,
//! band-pass, photodiode, ADC), [`pipeline`] (stream scheduling) driving
//! [`rx_pam`] or [`rx_kk`], and [`metrics`] (BER/Q). [`runner`]
//! orchestrates full experiments for the CLI and the acceptance suite.

pub mod channel;
pub mod fftutil;
pub mod metrics;
pub mod pipeline;
pub mod runner;
pub mod rx_kk;
pub mod rx_pam;
pub mod signal;
pub mod tx;

use thiserror::Error;

pub use num_complex::Complex64;

/// Speed of light, m/s.
pub const C_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("equalizer design fault: {0}")]
    DesignFault(String),
    #[error("chain fault: {0}")]
    ChainFault(String),
    #[error("pipeline fault: {0}")]
    PipelineFault(String),
    #[error("sync failed: {0}")]
    SyncFailed(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
