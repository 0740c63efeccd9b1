//! Figures of merit: operating point and noise-equivalent power.

use serde::{Deserialize, Serialize};

use crate::conversion::{ConversionModel, NoiseModel};
use crate::error::{Error, Result};
use crate::units::{watts_to_dbm, OpticalWave, REDUCED_PLANCK};

/// How the noise rate D entering the NEP was labelled by its source.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLabel {
    /// Pump-induced noise plus detector dark counts.
    #[default]
    Total,
    /// Detector dark counts only.
    DarkOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub eta: f64,
    pub noise_cps: f64,
    pub signal: OpticalWave,
    pub noise_label: NoiseLabel,
}

impl OperatingPoint {
    pub fn new(eta: f64, noise_cps: f64, signal: OpticalWave) -> Self {
        Self {
            eta,
            noise_cps,
            signal,
            noise_label: NoiseLabel::Total,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NepConvention {
    /// h·ν·√D / η
    #[default]
    #[serde(rename = "photon_sqrt_d")]
    PhotonSqrtD,
    /// h·ν·√(2D) / η
    #[serde(rename = "shot_sqrt_2d")]
    ShotSqrt2D,
    /// ħ·ν·√D / η, the formula with the reduced Planck constant.
    #[serde(rename = "reduced_planck_sqrt_d")]
    ReducedPlanckSqrtD,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Nep {
    pub watts: f64,
    /// -inf for a noiseless detector.
    pub dbm: f64,
    pub convention: NepConvention,
    pub noise_label: NoiseLabel,
}

pub fn nep(op: &OperatingPoint, convention: NepConvention) -> Result<Nep> {
    if !(op.eta > 0.0 && op.eta <= 1.0) {
        return Err(Error::domain(format!(
            "NEP needs a detection efficiency in (0, 1], got {}",
            op.eta
        )));
    }
    if !(op.noise_cps >= 0.0) {
        return Err(Error::domain(format!(
            "noise rate must be >= 0, got {}",
            op.noise_cps
        )));
    }
    let watts = match convention {
        NepConvention::PhotonSqrtD => op.signal.photon_energy_j() * op.noise_cps.sqrt() / op.eta,
        NepConvention::ShotSqrt2D => {
            op.signal.photon_energy_j() * (2.0 * op.noise_cps).sqrt() / op.eta
        }
        NepConvention::ReducedPlanckSqrtD => {
            REDUCED_PLANCK * op.signal.frequency_hz() * op.noise_cps.sqrt() / op.eta
        }
    };
    Ok(Nep {
        watts,
        dbm: watts_to_dbm(watts),
        convention,
        noise_label: op.noise_label,
    })
}

pub fn operating_point(
    conversion: &ConversionModel,
    noise: &NoiseModel,
    pump_power_mw: f64,
    signal: OpticalWave,
) -> Result<OperatingPoint> {
    Ok(OperatingPoint::new(
        conversion.efficiency(pump_power_mw)?,
        noise.rate(pump_power_mw)?,
        signal,
    ))
}
