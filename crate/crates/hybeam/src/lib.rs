//! Hybrid beamforming for multi-user massive MIMO: channel synthesis from a
//! correlated angle/phase model, eigen-based analog precoding, MMSE baseband
//! precoding, gradient-refined receive combining, entropy analytics, and a
//! deterministic batch simulator with CSV/JSON reporting.

pub mod channel;
pub mod cli_io;
pub mod combining;
pub mod entropy;
pub mod metrics;
pub mod numerics;
pub mod precoding;
pub mod quad;
pub mod simulator;
