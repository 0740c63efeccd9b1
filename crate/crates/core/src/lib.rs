//! Digital twin of a long-wavelength-pumped PPLN-waveguide upconversion
//! single-photon detector and the pump-scanned single-pixel spectrometer
//! built around it.
//!
//! Module map:
//! - [`dispersion`]: index model, QPM mismatch, tuning map, calibration
//! - [`components`]: filters, volume Bragg grating, APD
//! - [`conversion`]: efficiency and noise versus pump power
//! - [`fom`]: operating point and noise-equivalent power
//! - [`spectrometer`]: response kernel, forward scan, resolution
//! - [`inverse`]: deconvolution and background estimation
//! - [`counting`]: Poisson sampling and detectability
//! - [`config`], [`io`], [`cli`]: configuration, CSV files, command line

pub mod cli;
pub mod components;
pub mod config;
pub mod conversion;
pub mod counting;
pub mod dispersion;
pub mod error;
pub mod fom;
pub mod inverse;
pub mod io;
mod numeric;
pub mod spectrometer;
pub mod spectrum;
pub mod units;

pub use error::{Error, Result};
