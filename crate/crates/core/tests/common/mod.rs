#![allow(dead_code)]

use upconv::config::{CalibrationMode, ExperimentConfig, Instrument};
use upconv::spectrometer::{build_kernel, KernelMode, ResponseKernel, ScanPlan};
use upconv::spectrum::{gaussian_comb, Spectrum};
use upconv::units::dbm_to_watts;

pub const LD_MODES: usize = 5;
pub const LD_SPACING_NM: f64 = 0.5;
/// Mode width above the 0.16 nm resolution scale.
pub const LD_MODE_FWHM_NM: f64 = 0.3;

pub fn instrument() -> Instrument {
    ExperimentConfig::bundled().instrument().unwrap()
}

pub fn three_anchor_instrument() -> Instrument {
    let mut c = ExperimentConfig::bundled();
    c.calibration.mode = CalibrationMode::TuningMap;
    c.instrument().unwrap()
}

pub fn ld_centers(center_nm: f64) -> Vec<f64> {
    let half = (LD_MODES as f64 - 1.0) / 2.0;
    (0..LD_MODES)
        .map(|k| center_nm + LD_SPACING_NM * (k as f64 - half))
        .collect()
}

pub fn multimode_ld(grid: &[f64], center_nm: f64, power_dbm: f64) -> Spectrum {
    gaussian_comb(
        grid,
        &ld_centers(center_nm),
        LD_MODE_FWHM_NM,
        &[1.0; LD_MODES],
        dbm_to_watts(power_dbm),
    )
    .unwrap()
}

/// Kernel of the bundled instrument over a pump sub-window.
pub fn window_kernel(inst: &Instrument, start: f64, stop: f64) -> (ScanPlan, ResponseKernel) {
    let plan = ScanPlan {
        pump_start_nm: start,
        pump_stop_nm: stop,
        ..inst.plan
    };
    let grid = upconv::spectrometer::signal_grid_for(&inst.setup.waveguide, &plan, 0.02, 1.0).unwrap();
    let kernel = build_kernel(&inst.setup, &plan, &grid, KernelMode::Full).unwrap();
    (plan, kernel)
}

pub fn relative_l2(estimate: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

/// Local maxima of `values`, strongest first.
pub fn peaks(grid: &[f64], values: &[f64], count: usize) -> Vec<f64> {
    let mut found: Vec<(f64, f64)> = (1..values.len() - 1)
        .filter(|&j| values[j] > values[j - 1] && values[j] >= values[j + 1])
        .map(|j| (values[j], grid[j]))
        .collect();
    found.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out: Vec<f64> = found.into_iter().take(count).map(|p| p.1).collect();
    out.sort_by(f64::total_cmp);
    out
}
