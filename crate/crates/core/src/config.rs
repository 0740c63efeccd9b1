//! Experiment configuration (TOML) and the instrument assembled from it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::components::{ApdSpec, FilterElement, FilterKind, Lineshape, VbgState};
use crate::conversion::{fit_conversion, fit_noise, ConversionFit, ConversionModel, NoiseFit, NoiseModel};
use crate::dispersion::{calibrate_operating_point, IndexCorrection, Sellmeier, WaveguideSpec};
use crate::error::{Error, Result};
use crate::fom::NepConvention;
use crate::spectrometer::{signal_grid_for, KernelMode, ScanPlan, SpectrometerSetup, VbgTracking};
use crate::units::OpticalWave;

/// The bundled configuration file.
pub const DEFAULT_CONFIG: &str = include_str!("../config/defaults.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveguideSection {
    pub length_mm: f64,
    pub qpm_period_um: f64,
    pub temperature_c: f64,
    pub pigtail_loss_db: f64,
    pub facet_throughput_loss_db: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Fit to `anchors`.
    #[default]
    OperatingPoint,
    /// Fit to `tuning_map_anchors`.
    TuningMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    #[serde(default)]
    pub mode: CalibrationMode,
    pub anchors: Vec<[f64; 2]>,
    #[serde(default)]
    pub tuning_map_anchors: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VbgSection {
    pub fwhm_nm: f64,
    pub peak: f64,
    #[serde(default)]
    pub lineshape: Lineshape,
    pub tuning_range_nm: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversionSection {
    pub points: Vec<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseInterpretation {
    /// Calibration rates are the total registered noise.
    #[default]
    Total,
    /// Calibration rates exclude detector dark counts, which are added.
    ExcludesDark,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub floor_cps: f64,
    #[serde(default)]
    pub interpretation: NoiseInterpretation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrometerSection {
    pub pump_start_nm: f64,
    pub pump_stop_nm: f64,
    pub pump_step_nm: f64,
    pub dwell_s: f64,
    pub pump_power_mw: f64,
    #[serde(default)]
    pub vbg_tracking: VbgTracking,
    pub signal_step_nm: f64,
    pub signal_margin_nm: f64,
    #[serde(default)]
    pub kernel_mode: KernelMode,
    /// Efficiency at `pump_power_mw`; the calibrated conversion curve is
    /// rescaled to pass through it. Uses the curve as fitted when absent.
    #[serde(default)]
    pub efficiency: Option<f64>,
    /// Pump-independent noise rate; the fitted noise law when absent.
    #[serde(default)]
    pub noise_cps: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conventions {
    #[serde(default)]
    pub nep: NepConvention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub medium: Sellmeier,
    pub waveguide: WaveguideSection,
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub filters: Vec<FilterElement>,
    pub vbg: VbgSection,
    #[serde(default)]
    pub apd: ApdSpec,
    pub conversion: ConversionSection,
    pub noise: NoiseSection,
    pub spectrometer: SpectrometerSection,
    #[serde(default)]
    pub conventions: Conventions,
}

/// A configuration together with the digest of the text it was read from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn positive(path: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::config(path, format!("must be > 0, got {v}")));
    }
    Ok(())
}

fn pairs(v: &[[f64; 2]]) -> Vec<(f64, f64)> {
    v.iter().map(|p| (p[0], p[1])).collect()
}

fn relabel(path: &str, err: Error) -> Error {
    match err {
        Error::Config { .. } => err,
        other => Error::config(path, other.to_string()),
    }
}

impl ExperimentConfig {
    /// Parses and fully validates a configuration, including the fits and
    /// the calibration it implies.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<toml>", e.to_string()))?;
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().message().trim().to_string())
        })?;
        config.validate()?;
        config.instrument()?;
        Ok(config)
    }

    pub fn bundled() -> Self {
        Self::from_toml_str(DEFAULT_CONFIG).expect("bundled configuration is valid")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.medium;
        if !(m.window_um[0] > 0.0 && m.window_um[0] < m.window_um[1]) {
            return Err(Error::config("medium.window_um", "must be an ascending pair of positive values"));
        }
        let w = &self.waveguide;
        positive("waveguide.length_mm", w.length_mm)?;
        positive("waveguide.qpm_period_um", w.qpm_period_um)?;
        self.waveguide_spec_uncalibrated().validate()?;

        let anchors = match self.calibration.mode {
            CalibrationMode::OperatingPoint => ("calibration.anchors", &self.calibration.anchors),
            CalibrationMode::TuningMap => ("calibration.tuning_map_anchors", &self.calibration.tuning_map_anchors),
        };
        if anchors.1.is_empty() {
            return Err(Error::config(anchors.0, "at least one (pump, signal) anchor is required"));
        }
        for (k, a) in anchors.1.iter().enumerate() {
            if !(a[0] > a[1]) {
                return Err(Error::config(
                    format!("{}[{k}]", anchors.0),
                    "pump wavelength must exceed the signal wavelength",
                ));
            }
        }

        for (k, f) in self.filters.iter().enumerate() {
            f.validate(&format!("filters[{k}]"))?;
        }
        positive("vbg.fwhm_nm", self.vbg.fwhm_nm)?;
        if !(self.vbg.peak > 0.0 && self.vbg.peak <= 1.0) {
            return Err(Error::config("vbg.peak", "must lie in (0, 1]"));
        }
        if !(self.vbg.tuning_range_nm[0] < self.vbg.tuning_range_nm[1]) {
            return Err(Error::config("vbg.tuning_range_nm", "must be ascending"));
        }
        self.apd.validate()?;
        if self.conversion.points.len() < 2 {
            return Err(Error::config("conversion.points", "need at least two (power, efficiency) points"));
        }
        if self.noise.points.len() < 2 {
            return Err(Error::config("noise.points", "need at least two (power, rate) points"));
        }
        let s = &self.spectrometer;
        if !(s.pump_start_nm < s.pump_stop_nm) {
            return Err(Error::config("spectrometer.pump_start_nm", "must be below pump_stop_nm"));
        }
        positive("spectrometer.pump_step_nm", s.pump_step_nm)?;
        positive("spectrometer.dwell_s", s.dwell_s)?;
        if !(s.pump_power_mw >= 0.0) {
            return Err(Error::config("spectrometer.pump_power_mw", "must be >= 0"));
        }
        positive("spectrometer.signal_step_nm", s.signal_step_nm)?;
        if !(s.signal_margin_nm >= 0.0) {
            return Err(Error::config("spectrometer.signal_margin_nm", "must be >= 0"));
        }
        if let Some(e) = s.efficiency {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::config("spectrometer.efficiency", "must lie in (0, 1]"));
            }
        }
        if let Some(d) = s.noise_cps {
            if !(d >= 0.0) {
                return Err(Error::config("spectrometer.noise_cps", "must be >= 0"));
            }
        }
        Ok(())
    }

    fn waveguide_spec_uncalibrated(&self) -> WaveguideSpec {
        let w = &self.waveguide;
        WaveguideSpec {
            length_mm: w.length_mm,
            qpm_period_um: w.qpm_period_um,
            temperature_c: w.temperature_c,
            pigtail_loss_db: w.pigtail_loss_db,
            facet_throughput_loss_db: w.facet_throughput_loss_db,
            dispersion_correction: IndexCorrection::zero(),
            medium: self.medium.clone(),
        }
    }

    pub fn scan_plan(&self) -> ScanPlan {
        let s = &self.spectrometer;
        ScanPlan {
            pump_start_nm: s.pump_start_nm,
            pump_stop_nm: s.pump_stop_nm,
            pump_step_nm: s.pump_step_nm,
            dwell_s: s.dwell_s,
            pump_power_mw: s.pump_power_mw,
            vbg_tracking: s.vbg_tracking,
            seed: self.seed,
        }
    }

    /// Calibrates the waveguide, fits the conversion and noise laws and
    /// assembles the spectrometer. Errors carry the offending field path.
    pub fn instrument(&self) -> Result<Instrument> {
        let (path, anchors) = match self.calibration.mode {
            CalibrationMode::OperatingPoint => ("calibration.anchors", &self.calibration.anchors),
            CalibrationMode::TuningMap => ("calibration.tuning_map_anchors", &self.calibration.tuning_map_anchors),
        };
        let waves = anchors
            .iter()
            .map(|a| Ok((OpticalWave::from_nm(a[0])?, OpticalWave::from_nm(a[1])?)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| relabel(path, e))?;
        let waveguide = calibrate_operating_point(&self.waveguide_spec_uncalibrated(), &waves)
            .map_err(|e| relabel(path, e))?;

        let conversion = fit_conversion(&pairs(&self.conversion.points))
            .map_err(|e| relabel("conversion.points", e))?;
        let noise = fit_noise(&pairs(&self.noise.points), self.noise.floor_cps)
            .map_err(|e| relabel("noise.points", e))?;
        let dark = match self.noise.interpretation {
            NoiseInterpretation::Total => 0.0,
            NoiseInterpretation::ExcludesDark => self.apd.dark_rate_cps,
        };
        let noise_model = noise.model.with_added_floor(dark);

        let s = &self.spectrometer;
        let spectrometer_conversion = match s.efficiency {
            Some(e) => conversion
                .model
                .rescaled_to(s.pump_power_mw, e)
                .map_err(|err| relabel("spectrometer.efficiency", err))?,
            None => conversion.model,
        };
        let spectrometer_noise = match s.noise_cps {
            Some(d) => NoiseModel::constant(d).with_added_floor(dark),
            None => noise_model,
        };

        let vbg_base = FilterElement {
            name: "vbg".into(),
            kind: FilterKind::ReflectiveGrating,
            center_nm: 0.5 * (self.vbg.tuning_range_nm[0] + self.vbg.tuning_range_nm[1]),
            fwhm_nm: self.vbg.fwhm_nm,
            peak: self.vbg.peak,
            lineshape: self.vbg.lineshape,
            edge_width_nm: 1.0,
        };
        let vbg = VbgState::new(vbg_base.clone(), vbg_base.center_nm, self.vbg.tuning_range_nm)
            .map_err(|e| relabel("vbg.tuning_range_nm", e))?;

        let plan = self.scan_plan();
        plan.validate().map_err(|e| relabel("spectrometer", e))?;
        let setup = SpectrometerSetup {
            waveguide,
            chain: self.filters.clone(),
            vbg,
            conversion: spectrometer_conversion,
        };
        let signal_grid = signal_grid_for(&setup.waveguide, &plan, s.signal_step_nm, s.signal_margin_nm)
            .map_err(|e| relabel("spectrometer", e))?;
        Ok(Instrument {
            conversion_fit: conversion,
            noise_fit: noise,
            noise: noise_model,
            spectrometer_noise,
            setup,
            plan,
            signal_grid_nm: signal_grid,
            apd: self.apd.clone(),
            kernel_mode: s.kernel_mode,
            nep_convention: self.conventions.nep,
        })
    }
}

impl LoadedConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(Self {
            config: ExperimentConfig::from_toml_str(text)?,
            sha256: sha256_hex(text),
        })
    }

    pub fn bundled() -> Self {
        Self::from_toml_str(DEFAULT_CONFIG).expect("bundled configuration is valid")
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}

/// The calibrated instrument described by a configuration.
#[derive(Clone, Debug)]
pub struct Instrument {
    pub conversion_fit: ConversionFit,
    pub noise_fit: NoiseFit,
    /// Fitted noise law after the dark-count interpretation.
    pub noise: NoiseModel,
    /// Noise law used for spectrometer runs.
    pub spectrometer_noise: NoiseModel,
    /// Waveguide, filters, grating and the spectrometer conversion law.
    pub setup: SpectrometerSetup,
    pub plan: ScanPlan,
    pub signal_grid_nm: Vec<f64>,
    pub apd: ApdSpec,
    pub kernel_mode: KernelMode,
    pub nep_convention: NepConvention,
}

impl Instrument {
    pub fn conversion(&self) -> &ConversionModel {
        &self.conversion_fit.model
    }

    pub fn waveguide(&self) -> &WaveguideSpec {
        &self.setup.waveguide
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_loads() {
        let loaded = LoadedConfig::bundled();
        assert_eq!(loaded.sha256.len(), 64);
        let inst = loaded.config.instrument().unwrap();
        assert!((inst.conversion().efficiency(58.0).unwrap() - 0.286).abs() < 1e-9);
        assert!((inst.setup.conversion.efficiency(30.0).unwrap() - 0.20).abs() < 1e-12);
        assert_eq!(inst.spectrometer_noise.rate(30.0).unwrap(), 60.0);
        assert_eq!(inst.plan.pump_grid().len(), 1201);
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::bundled();
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(c, again);
    }

    fn with(from: &str, to: &str) -> Result<ExperimentConfig> {
        assert!(DEFAULT_CONFIG.contains(from), "{from}");
        ExperimentConfig::from_toml_str(&DEFAULT_CONFIG.replacen(from, to, 1))
    }

    fn path_of(r: Result<ExperimentConfig>) -> String {
        match r {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_fields_report_their_path() {
        assert_eq!(path_of(with("length_mm = 52.0", "length_mm = -1.0")), "waveguide.length_mm");
        assert_eq!(path_of(with("fwhm_nm = 0.05", "fwhm_nm = 0.0")), "vbg.fwhm_nm");
        assert_eq!(path_of(with("peak = 0.98", "peak = 1.5")), "filters[0].peak");
        assert_eq!(path_of(with("dwell_s = 1.0", "dwell_s = 0.0")), "spectrometer.dwell_s");
        assert_eq!(path_of(with("dwell_s = 1.0", "dwell_s = \"long\"")), "spectrometer.dwell_s");
        assert_eq!(path_of(with("length_mm = 52.0", "length_mm = 52.0\nlenght = 3")), "waveguide.lenght");
        assert_eq!(
            path_of(with("anchors = [[1950.0, 1550.0]]", "anchors = [[1950.0, 1550.0], [1950.0, 1551.0]]")),
            "calibration.anchors"
        );
        assert_eq!(
            path_of(with("points = [[58.0, 0.286], [20.0, 0.15]]", "points = [[58.0, 0.1], [20.0, 0.9]]")),
            "conversion.points"
        );
    }

    #[test]
    fn tuning_map_mode_and_dark_interpretation() {
        let c = with("mode = \"operating_point\"", "mode = \"tuning_map\"").unwrap();
        assert_eq!(c.calibration.mode, CalibrationMode::TuningMap);
        let d = with("interpretation = \"total\"", "interpretation = \"excludes_dark\"").unwrap();
        let inst = d.instrument().unwrap();
        assert!((inst.noise.rate(20.0).unwrap() - 50.0).abs() < 1e-9);
        assert_eq!(inst.spectrometer_noise.rate(30.0).unwrap(), 85.0);
    }
}
