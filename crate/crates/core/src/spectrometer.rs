//! Pump-scanned single-pixel spectrometer: response kernel, VBG tracking,
//! forward scan and resolution.
//!
//! The pump wavelength selects which signal wavelength is phase matched, and
//! the VBG selects a narrow slice of the upconverted band. The response of
//! scan point `i` to input power at signal wavelength `j` is
//!
//! K[i][j] = η(P) · sinc²(Δk·L/2) · T(λ_SFG) / T(λ_SFG,pm) / (hν_s)
//!
//! where T is the filter chain times the VBG reflection and the reference
//! T(λ_SFG,pm) is evaluated for the phase-matched signal of that pump, so a
//! monochromatic input of power W at the phase-matched peak of a tracked scan
//! registers η(P)·W/hν counts/s.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::components::{chain_transmission, ApdSpec, FilterElement, VbgState};
use crate::conversion::{ConversionModel, NoiseModel};
use crate::counting::sample_counts;
use crate::dispersion::{phase_matched_signal, sfg_nm, sinc_squared, WaveguideSpec};
use crate::error::{Error, Result};
use crate::numeric::bisect;
use crate::spectrum::{bin_widths, uniform_grid, Spectrum, SpectrumUnit};
use crate::units::{photon_energy_nm, OpticalWave};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VbgTracking {
    /// One resonance setpoint for the whole scan.
    Fixed,
    /// The resonance follows the phase-matched SFG wavelength.
    #[default]
    Tracked,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub pump_start_nm: f64,
    pub pump_stop_nm: f64,
    pub pump_step_nm: f64,
    pub dwell_s: f64,
    pub pump_power_mw: f64,
    pub vbg_tracking: VbgTracking,
    pub seed: u64,
}

impl Default for ScanPlan {
    fn default() -> Self {
        Self {
            pump_start_nm: 1920.0,
            pump_stop_nm: 1980.0,
            pump_step_nm: 0.05,
            dwell_s: 1.0,
            pump_power_mw: 30.0,
            vbg_tracking: VbgTracking::Tracked,
            seed: 1,
        }
    }
}

impl ScanPlan {
    pub fn validate(&self) -> Result<()> {
        OpticalWave::from_nm(self.pump_start_nm)?;
        OpticalWave::from_nm(self.pump_stop_nm)?;
        if !(self.pump_start_nm < self.pump_stop_nm) {
            return Err(Error::domain(format!(
                "scan start {} nm must be below stop {} nm",
                self.pump_start_nm, self.pump_stop_nm
            )));
        }
        if !(self.pump_step_nm > 0.0) {
            return Err(Error::domain("pump step must be > 0"));
        }
        if !(self.dwell_s > 0.0) {
            return Err(Error::domain("dwell time must be > 0"));
        }
        if !(self.pump_power_mw >= 0.0) {
            return Err(Error::domain("pump power must be >= 0"));
        }
        Ok(())
    }

    /// Scan points from start in whole steps up to stop. A step larger than
    /// the span gives a single-point scan.
    pub fn pump_grid(&self) -> Vec<f64> {
        uniform_grid(self.pump_start_nm, self.pump_stop_nm, self.pump_step_nm)
    }

    pub fn center_nm(&self) -> f64 {
        0.5 * (self.pump_start_nm + self.pump_stop_nm)
    }
}

/// Everything between the input fibre and the detector that shapes the
/// response, at one pump power.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrometerSetup {
    pub waveguide: WaveguideSpec,
    /// Filters after the waveguide, excluding the VBG.
    pub chain: Vec<FilterElement>,
    pub vbg: VbgState,
    pub conversion: ConversionModel,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// QPM acceptance × filters × VBG.
    #[default]
    Full,
    /// Filters × VBG only, without the QPM acceptance.
    VbgOnly,
}

/// Phase-matched signal for each pump wavelength, computed in parallel.
pub fn tuning_map(wg: &WaveguideSpec, pumps_nm: &[f64]) -> Result<Vec<f64>> {
    pumps_nm
        .par_iter()
        .map(|&p| Ok(phase_matched_signal(OpticalWave::from_nm(p)?, wg)?.nm()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackingSchedule {
    pub pump_nm: Vec<f64>,
    pub phase_matched_signal_nm: Vec<f64>,
    pub phase_matched_sfg_nm: Vec<f64>,
    /// Resonance setpoint used at each scan point.
    pub centers_nm: Vec<f64>,
    /// max − min of the phase-matched SFG wavelength over the scan.
    pub sfg_drift_nm: f64,
    /// A fixed grating would miss part of the scan.
    pub tracking_required: bool,
}

pub fn vbg_tracking_schedule(
    plan: &ScanPlan,
    wg: &WaveguideSpec,
    vbg: &VbgState,
) -> Result<TrackingSchedule> {
    plan.validate()?;
    let pump_nm = plan.pump_grid();
    let signal = tuning_map(wg, &pump_nm)?;
    let sfg: Vec<f64> = pump_nm.iter().zip(&signal).map(|(&p, &s)| sfg_nm(s, p)).collect();
    let (lo, hi) = sfg
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    let drift = hi - lo;
    let centers = match plan.vbg_tracking {
        VbgTracking::Tracked => sfg.clone(),
        VbgTracking::Fixed => {
            let center_pump = plan.center_nm();
            let s = phase_matched_signal(OpticalWave::from_nm(center_pump)?, wg)?.nm();
            vec![sfg_nm(s, center_pump); pump_nm.len()]
        }
    };
    for &c in &centers {
        vbg.check_setpoint(c)?;
    }
    Ok(TrackingSchedule {
        pump_nm,
        phase_matched_signal_nm: signal,
        phase_matched_sfg_nm: sfg,
        centers_nm: centers,
        sfg_drift_nm: drift,
        tracking_required: drift > vbg.fwhm_nm(),
    })
}

/// How much signal band a fixed (untracked) grating covers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UsableSpan {
    /// Grating FWHM × signal span / SFG drift accumulated along the scan.
    pub mean_span_nm: f64,
    /// Signal span of the widest window around the scan centre whose SFG
    /// excursion stays within one grating FWHM.
    pub centered_span_nm: f64,
    pub accumulated_sfg_drift_nm: f64,
    pub signal_span_nm: f64,
}

pub fn fixed_vbg_usable_span(
    wg: &WaveguideSpec,
    plan: &ScanPlan,
    vbg_fwhm_nm: f64,
) -> Result<UsableSpan> {
    let pumps = plan.pump_grid();
    if pumps.len() < 2 {
        return Err(Error::Input("usable span needs at least two scan points".into()));
    }
    let signal = tuning_map(wg, &pumps)?;
    let sfg: Vec<f64> = pumps.iter().zip(&signal).map(|(&p, &s)| sfg_nm(s, p)).collect();
    let accumulated: f64 = sfg.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let signal_span = (signal[signal.len() - 1] - signal[0]).abs();
    let mean_span = if accumulated > 0.0 {
        vbg_fwhm_nm * signal_span / accumulated
    } else {
        f64::INFINITY
    };

    let mid = pumps.len() / 2;
    let mut centered = 0.0;
    for half in 1..=mid.min(pumps.len() - 1 - mid) {
        let window = &sfg[mid - half..=mid + half];
        let (lo, hi) = window
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
        if hi - lo > vbg_fwhm_nm {
            break;
        }
        centered = (signal[mid + half] - signal[mid - half]).abs();
    }
    Ok(UsableSpan {
        mean_span_nm: mean_span,
        centered_span_nm: centered,
        accumulated_sfg_drift_nm: accumulated,
        signal_span_nm: signal_span,
    })
}

/// Dense response matrix, scan points × signal grid, in counts/s per W.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseKernel {
    pump_grid_nm: Vec<f64>,
    signal_grid_nm: Vec<f64>,
    values: Vec<f64>,
    /// Phase-matched signal per scan point.
    mapped_signal_nm: Vec<f64>,
    /// Resonance setpoint per scan point (empty when unknown).
    vbg_centers_nm: Vec<f64>,
    /// Column range [first, last] holding the nonzero entries of each row.
    support: Vec<(usize, usize)>,
}

impl ResponseKernel {
    /// Kernel from raw parts. Each row's mapped signal is taken at its
    /// largest entry.
    pub fn from_parts(pump_grid_nm: Vec<f64>, signal_grid_nm: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let rows = pump_grid_nm.len();
        let cols = signal_grid_nm.len();
        if rows == 0 || cols < 2 || values.len() != rows * cols {
            return Err(Error::Input(format!(
                "kernel shape mismatch: {rows} × {cols} grid, {} values",
                values.len()
            )));
        }
        if signal_grid_nm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("kernel signal grid must be strictly ascending".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!("kernel entries must be finite and >= 0, found {v}")));
        }
        let mapped = values
            .chunks(cols)
            .map(|row| {
                let (j, _) = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::MIN), |a, (j, &v)| if v > a.1 { (j, v) } else { a });
                signal_grid_nm[j]
            })
            .collect();
        Ok(Self::assemble(pump_grid_nm, signal_grid_nm, values, mapped, Vec::new()))
    }

    fn assemble(
        pump_grid_nm: Vec<f64>,
        signal_grid_nm: Vec<f64>,
        values: Vec<f64>,
        mapped_signal_nm: Vec<f64>,
        vbg_centers_nm: Vec<f64>,
    ) -> Self {
        let cols = signal_grid_nm.len();
        let support = values
            .chunks(cols)
            .map(|row| {
                match (row.iter().position(|&v| v > 0.0), row.iter().rposition(|&v| v > 0.0)) {
                    (Some(a), Some(b)) => (a, b + 1),
                    _ => (0, 0),
                }
            })
            .collect();
        Self {
            pump_grid_nm,
            signal_grid_nm,
            values,
            mapped_signal_nm,
            vbg_centers_nm,
            support,
        }
    }

    pub fn rows(&self) -> usize {
        self.pump_grid_nm.len()
    }

    pub fn cols(&self) -> usize {
        self.signal_grid_nm.len()
    }

    pub fn pump_grid_nm(&self) -> &[f64] {
        &self.pump_grid_nm
    }

    pub fn signal_grid_nm(&self) -> &[f64] {
        &self.signal_grid_nm
    }

    pub fn mapped_signal_nm(&self) -> &[f64] {
        &self.mapped_signal_nm
    }

    pub fn vbg_centers_nm(&self) -> &[f64] {
        &self.vbg_centers_nm
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.get(i, j)).collect()
    }

    /// K·x
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows())
            .into_par_iter()
            .map(|i| {
                let (a, b) = self.support[i];
                self.row(i)[a..b].iter().zip(&x[a..b]).map(|(k, v)| k * v).sum()
            })
            .collect()
    }

    /// Kᵀ·y
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let (a, b) = self.support[i];
            for (o, k) in out[a..b].iter_mut().zip(&self.row(i)[a..b]) {
                *o += k * yi;
            }
        }
        out
    }

    /// Column sums Kᵀ·1.
    pub fn column_sums(&self) -> Vec<f64> {
        self.apply_transpose(&vec![1.0; self.rows()])
    }
}

/// Default signal grid: covers the mapped range of `plan` plus `margin_nm`
/// on each side, on multiples of `step_nm`.
pub fn signal_grid_for(
    wg: &WaveguideSpec,
    plan: &ScanPlan,
    step_nm: f64,
    margin_nm: f64,
) -> Result<Vec<f64>> {
    let ends = tuning_map(wg, &[plan.pump_start_nm, plan.pump_stop_nm])?;
    let lo = ends[0].min(ends[1]) - margin_nm;
    let hi = ends[0].max(ends[1]) + margin_nm;
    let start = (lo / step_nm).floor() * step_nm;
    let n = ((hi - start) / step_nm).ceil() as usize + 1;
    Ok((0..n).map(|k| start + step_nm * k as f64).collect())
}

pub fn build_kernel(
    setup: &SpectrometerSetup,
    plan: &ScanPlan,
    signal_grid_nm: &[f64],
    mode: KernelMode,
) -> Result<ResponseKernel> {
    plan.validate()?;
    if signal_grid_nm.len() < 2 || signal_grid_nm.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input(
            "signal grid must be strictly ascending with at least two points".into(),
        ));
    }
    let wg = &setup.waveguide;
    let vbg = &setup.vbg;
    let schedule = vbg_tracking_schedule(plan, wg, vbg)?;
    let (grid_lo, grid_hi) = (signal_grid_nm[0], signal_grid_nm[signal_grid_nm.len() - 1]);
    let (map_lo, map_hi) = schedule
        .phase_matched_signal_nm
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if map_lo < grid_lo || map_hi > grid_hi {
        let mut gaps = Vec::new();
        if map_lo < grid_lo {
            gaps.push(format!("[{map_lo:.4}, {grid_lo:.4}] nm"));
        }
        if map_hi > grid_hi {
            gaps.push(format!("[{grid_hi:.4}, {map_hi:.4}] nm"));
        }
        return Err(Error::Coverage(format!(
            "signal grid [{grid_lo:.4}, {grid_hi:.4}] nm does not cover the mapped range \
             [{map_lo:.4}, {map_hi:.4}] nm; uncovered {}",
            gaps.join(", ")
        )));
    }

    let eta = setup.conversion.efficiency(plan.pump_power_mw)?;
    let length_um = wg.length_um();
    let signal_k = signal_grid_nm
        .iter()
        .map(|&s| wg.wavenumber_over_2pi(s))
        .collect::<Result<Vec<_>>>()?;
    let energy: Vec<f64> = signal_grid_nm.iter().map(|&s| photon_energy_nm(s)).collect();
    let two_pi = 2.0 * std::f64::consts::PI;

    let rows = (0..schedule.pump_nm.len())
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let p = schedule.pump_nm[i];
            let setpoint = schedule.centers_nm[i];
            let pm_sfg = schedule.phase_matched_sfg_nm[i];
            let reference = chain_transmission(&setup.chain, pm_sfg) * vbg.peak();
            if !(reference > 0.0) {
                return Err(Error::domain(format!(
                    "filter chain blocks the upconverted band at {pm_sfg:.3} nm"
                )));
            }
            let pump_k = wg.wavenumber_over_2pi(p)?;
            let mut row = vec![0.0; signal_grid_nm.len()];
            for (j, &s) in signal_grid_nm.iter().enumerate() {
                let t = sfg_nm(s, p);
                let r = vbg.reflection_at(setpoint, t);
                if r == 0.0 {
                    continue;
                }
                let qpm = match mode {
                    KernelMode::Full => {
                        let dk = two_pi
                            * (wg.wavenumber_over_2pi(t)? - signal_k[j] - pump_k
                                - 1.0 / wg.qpm_period_um);
                        sinc_squared(dk * length_um / 2.0)
                    }
                    KernelMode::VbgOnly => 1.0,
                };
                row[j] = eta * qpm * chain_transmission(&setup.chain, t) * r / reference / energy[j];
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ResponseKernel::assemble(
        schedule.pump_nm,
        signal_grid_nm.to_vec(),
        rows.concat(),
        schedule.phase_matched_signal_nm,
        schedule.centers_nm,
    ))
}

/// One raw spectrum: per scan point expected and sampled counts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanResult {
    pub pump_nm: Vec<f64>,
    pub signal_nm_mapped: Vec<f64>,
    /// counts/s including the noise floor
    pub expected_rate: Vec<f64>,
    pub counts: Vec<u64>,
    pub dwell_s: f64,
    /// Resonance setpoints used (empty when read back from a file).
    pub vbg_centers_nm: Vec<f64>,
    pub noise_floor_cps: f64,
    pub seed: u64,
}

impl ScanResult {
    pub fn len(&self) -> usize {
        self.pump_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pump_nm.is_empty()
    }

    /// Sampled counts divided by dwell.
    pub fn count_rates(&self) -> Vec<f64> {
        self.counts.iter().map(|&k| k as f64 / self.dwell_s).collect()
    }
}

/// Input spectrum (W/nm) → signal-only expected count rate per scan point.
pub fn signal_rates(input: &Spectrum, kernel: &ResponseKernel) -> Result<Vec<f64>> {
    if input.unit() != SpectrumUnit::PowerWPerNm {
        return Err(Error::Input(format!(
            "input spectrum must be in {}, got {}",
            SpectrumUnit::PowerWPerNm.header(),
            input.unit().header()
        )));
    }
    let on_grid = if input.grid_nm() == kernel.signal_grid_nm() {
        input.clone()
    } else {
        input.resample(kernel.signal_grid_nm())?
    };
    let power: Vec<f64> = on_grid
        .values()
        .iter()
        .zip(bin_widths(kernel.signal_grid_nm()))
        .map(|(v, w)| v * w)
        .collect();
    Ok(kernel.apply(&power))
}

pub fn forward_scan(
    input: &Spectrum,
    kernel: &ResponseKernel,
    noise: &NoiseModel,
    plan: &ScanPlan,
    apd: &ApdSpec,
) -> Result<ScanResult> {
    plan.validate()?;
    if plan.pump_grid().len() != kernel.rows() {
        return Err(Error::Input(format!(
            "plan has {} scan points, kernel has {} rows",
            plan.pump_grid().len(),
            kernel.rows()
        )));
    }
    let floor = noise.rate(plan.pump_power_mw)?;
    let expected: Vec<f64> = signal_rates(input, kernel)?
        .into_iter()
        .map(|r| apd.registered_rate(r + floor))
        .collect();
    let counts = expected
        .par_iter()
        .enumerate()
        .map(|(i, &rate)| Ok(sample_counts(rate, plan.dwell_s, &[plan.seed, i as u64])?.counts))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanResult {
        pump_nm: kernel.pump_grid_nm().to_vec(),
        signal_nm_mapped: kernel.mapped_signal_nm().to_vec(),
        expected_rate: expected,
        counts,
        dwell_s: plan.dwell_s,
        vbg_centers_nm: kernel.vbg_centers_nm().to_vec(),
        noise_floor_cps: floor,
        seed: plan.seed,
    })
}

/// Grating FWHM transferred from the SFG band to the signal band at fixed
/// pump: Δλ_s = Δλ_VBG · (λ_s / λ_SFG)².
pub fn analytic_resolution(vbg_fwhm_nm: f64, sfg_nm: f64, signal_nm: f64) -> f64 {
    vbg_fwhm_nm * (signal_nm / sfg_nm).powi(2)
}

/// FWHM, in mapped signal wavelength, of the kernel column nearest
/// `signal_nm` (the response to a monochromatic input across the scan).
pub fn kernel_column_fwhm(kernel: &ResponseKernel, signal_nm: f64) -> Result<f64> {
    let grid = kernel.signal_grid_nm();
    let j = grid
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - signal_nm).abs().total_cmp(&(b.1 - signal_nm).abs()))
        .map(|(j, _)| j)
        .unwrap_or(0);
    let mut profile: Vec<(f64, f64)> = kernel
        .mapped_signal_nm()
        .iter()
        .copied()
        .zip(kernel.column(j))
        .collect();
    profile.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (peak_idx, peak) = profile
        .iter()
        .enumerate()
        .fold((0, 0.0), |a, (k, &(_, v))| if v > a.1 { (k, v) } else { a });
    if !(peak > 0.0) {
        return Err(Error::Coverage(format!(
            "no response at {signal_nm} nm within the scan"
        )));
    }
    let half = peak / 2.0;
    let cross = |a: (f64, f64), b: (f64, f64)| a.0 + (half - a.1) * (b.0 - a.0) / (b.1 - a.1);
    let left = (1..=peak_idx)
        .rev()
        .find(|&k| profile[k - 1].1 < half)
        .map(|k| cross(profile[k - 1], profile[k]));
    let right = (peak_idx + 1..profile.len())
        .find(|&k| profile[k].1 < half)
        .map(|k| cross(profile[k - 1], profile[k]));
    match (left, right) {
        (Some(l), Some(r)) => Ok(r - l),
        _ => Err(Error::Coverage(format!(
            "response at {signal_nm} nm is truncated by the scan edges"
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolutionReport {
    pub signal_nm: f64,
    pub pump_nm: f64,
    pub sfg_nm: f64,
    pub analytic_nm: f64,
    pub numeric_nm: Option<f64>,
    pub warning: Option<String>,
}

/// Both resolution estimates at `signal_nm`. The numeric path needs a kernel
/// whose scan contains the signal; the analytic path assumes tracking.
pub fn resolution(
    setup: &SpectrometerSetup,
    signal_nm: f64,
    kernel: Option<&ResponseKernel>,
    tracking: VbgTracking,
) -> Result<ResolutionReport> {
    let signal = OpticalWave::from_nm(signal_nm)?;
    let pump = crate::dispersion::phase_matched_pump(signal, &setup.waveguide)?.nm();
    let sfg = sfg_nm(signal_nm, pump);
    let numeric_nm = kernel.map(|k| kernel_column_fwhm(k, signal_nm)).transpose()?;
    let warning = (tracking == VbgTracking::Fixed).then(|| {
        "VBG is not tracked: the resolution depends on the position within the scan".to_string()
    });
    Ok(ResolutionReport {
        signal_nm,
        pump_nm: pump,
        sfg_nm: sfg,
        analytic_nm: analytic_resolution(setup.vbg.fwhm_nm(), sfg, signal_nm),
        numeric_nm,
        warning,
    })
}

/// Pump wavelength whose mapped signal equals `signal_nm`, by bisection on
/// the tuning map restricted to `[lo, hi]`.
pub fn pump_for_signal(wg: &WaveguideSpec, signal_nm: f64, lo: f64, hi: f64) -> Result<f64> {
    bisect(
        |p| Ok(phase_matched_signal(OpticalWave::from_nm(p)?, wg)?.nm() - signal_nm),
        lo,
        hi,
        1e-10,
    )
}
