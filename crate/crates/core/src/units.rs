//! Physical constants, optical wavelengths and power-unit conversions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planck constant (J·s).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant (J·s).
pub const REDUCED_PLANCK: f64 = PLANCK / (2.0 * std::f64::consts::PI);
/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const MIN_WAVELENGTH_NM: f64 = 100.0;
const MAX_WAVELENGTH_NM: f64 = 20_000.0;

/// A monochromatic optical wave, identified by its vacuum wavelength.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct OpticalWave {
    wavelength_nm: f64,
}

impl OpticalWave {
    pub fn from_nm(wavelength_nm: f64) -> Result<Self> {
        if !wavelength_nm.is_finite()
            || wavelength_nm <= MIN_WAVELENGTH_NM
            || wavelength_nm >= MAX_WAVELENGTH_NM
        {
            return Err(Error::domain(format!(
                "wavelength {wavelength_nm} nm outside ({MIN_WAVELENGTH_NM}, {MAX_WAVELENGTH_NM}) nm"
            )));
        }
        Ok(Self { wavelength_nm })
    }

    pub fn from_frequency_hz(frequency: f64) -> Result<Self> {
        Self::from_nm(SPEED_OF_LIGHT / frequency * 1e9)
    }

    #[inline]
    pub fn nm(&self) -> f64 {
        self.wavelength_nm
    }

    #[inline]
    pub fn um(&self) -> f64 {
        self.wavelength_nm * 1e-3
    }

    #[inline]
    pub fn frequency_hz(&self) -> f64 {
        SPEED_OF_LIGHT / (self.wavelength_nm * 1e-9)
    }

    /// Photon energy h·ν in joules.
    #[inline]
    pub fn photon_energy_j(&self) -> f64 {
        PLANCK * self.frequency_hz()
    }
}

impl TryFrom<f64> for OpticalWave {
    type Error = Error;

    fn try_from(nm: f64) -> Result<Self> {
        Self::from_nm(nm)
    }
}

impl From<OpticalWave> for f64 {
    fn from(w: OpticalWave) -> f64 {
        w.wavelength_nm
    }
}

/// Photon energy h·c/λ for a wavelength given in nm, without range checks.
#[inline]
pub(crate) fn photon_energy_nm(wavelength_nm: f64) -> f64 {
    PLANCK * SPEED_OF_LIGHT / (wavelength_nm * 1e-9)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts / 1e-3).log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn db_to_transmission(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}
