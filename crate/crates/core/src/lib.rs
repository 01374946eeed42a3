//! Simulation and analysis toolkit for a passive three-junction Josephson-ring
//! circulator.
//!
//! The crate is organised bottom-up:
//!
//! * [`ring`] builds the ring Hamiltonian and island charge operators in a
//!   truncated two-dimensional charge basis.
//! * [`spectrum`] diagonalises it, extracts transition frequencies and runs
//!   flux / gate-charge sweeps over quasiparticle sectors.
//! * [`scattering`] turns eigensystems into port scattering matrices and
//!   scores circulation quality.
//! * [`fit`] extracts reflection dips and fits device parameters to observed
//!   spectral lines.
//! * [`calibration`] inverts the measurement chain `M = B·S·A`.
//! * [`hmm`] is a Gaussian hidden Markov model for quasiparticle-switching
//!   time series, with dwell-time statistics.
//! * [`config`] holds the serialisable run configuration used by the CLI.
//!
//! All energies are frequencies in GHz.

pub mod calibration;
pub mod config;
pub mod error;
pub mod fit;
pub mod hmm;
pub mod numfmt;
pub mod optimize;
pub mod ring;
pub mod scattering;
pub mod spectrum;

pub use error::{Error, Result};
pub use num_complex::Complex64;
