//! Refractive index of the waveguide medium, quasi-phase-matching mismatch and
//! the pump/signal tuning map.
//!
//! Wavelengths cross the public API in nanometres. Internally the index model
//! works in micrometres, and wave-vector mismatches are expressed in rad/µm.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::bisect;
use crate::units::OpticalWave;

/// Largest |Δk| (rad/µm) accepted as phase matched.
pub const PHASE_MATCH_TOLERANCE: f64 = 1e-9;

const COARSE_STEP_NM: f64 = 5.0;

/// Temperature-dependent extraordinary-index Sellmeier equation of the form
///
/// n² = a₁ + b₁f + (a₂ + b₂f)/(λ² − (a₃ + b₃f)²) + (a₄ + b₄f)/(λ² − a₅²) − a₆λ²
///
/// with f = (T − T_ref)(T + T_offset), λ in µm and T in °C.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sellmeier {
    pub a: [f64; 6],
    pub b: [f64; 4],
    pub t_ref_c: f64,
    pub t_offset_c: f64,
    /// Validity window (µm).
    pub window_um: [f64; 2],
}

impl Sellmeier {
    /// Congruent lithium niobate, extraordinary axis (Jundt, Opt. Lett. 22, 1553, 1997).
    pub fn congruent_lithium_niobate() -> Self {
        Self {
            a: [5.35583, 0.100473, 0.20692, 100.0, 11.34927, 1.5334e-2],
            b: [4.629e-7, 3.862e-8, -0.89e-8, 2.657e-5],
            t_ref_c: 24.5,
            t_offset_c: 570.82,
            window_um: [0.4, 5.0],
        }
    }

    pub fn window_nm(&self) -> (f64, f64) {
        (self.window_um[0] * 1e3, self.window_um[1] * 1e3)
    }

    fn check_window(&self, um: f64) -> Result<()> {
        let [lo, hi] = self.window_um;
        if um < lo || um > hi || !um.is_finite() {
            return Err(Error::domain(format!(
                "wavelength {:.3} nm outside Sellmeier validity window [{:.0}, {:.0}] nm",
                um * 1e3,
                lo * 1e3,
                hi * 1e3
            )));
        }
        Ok(())
    }

    /// Bulk index at `um` micrometres, without window checks.
    #[inline]
    pub(crate) fn bulk_index_um(&self, um: f64, temperature_c: f64) -> f64 {
        let [a1, a2, a3, a4, a5, a6] = self.a;
        let [b1, b2, b3, b4] = self.b;
        let f = (temperature_c - self.t_ref_c) * (temperature_c + self.t_offset_c);
        let l2 = um * um;
        let pole = a3 + b3 * f;
        let n2 = a1 + b1 * f + (a2 + b2 * f) / (l2 - pole * pole) + (a4 + b4 * f) / (l2 - a5 * a5)
            - a6 * l2;
        n2.sqrt()
    }

    pub fn bulk_index(&self, wave: OpticalWave, temperature_c: f64) -> Result<f64> {
        self.check_window(wave.um())?;
        Ok(self.bulk_index_um(wave.um(), temperature_c))
    }

    /// Effective index: bulk Sellmeier plus the waveguide correction polynomial.
    pub fn refractive_index(
        &self,
        wave: OpticalWave,
        temperature_c: f64,
        correction: &IndexCorrection,
    ) -> Result<f64> {
        Ok(self.bulk_index(wave, temperature_c)? + correction.eval_um(wave.um()))
    }
}

impl Default for Sellmeier {
    fn default() -> Self {
        Self::congruent_lithium_niobate()
    }
}

/// Effective-index offset δn(λ) = Σ cₖ λᵏ, λ in µm.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexCorrection {
    pub coefficients: Vec<f64>,
}

impl IndexCorrection {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(coefficients: Vec<f64>) -> Self {
        Self { coefficients }
    }

    #[inline]
    pub fn eval_um(&self, um: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * um + c)
    }
}

/// A periodically poled waveguide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveguideSpec {
    pub length_mm: f64,
    pub qpm_period_um: f64,
    pub temperature_c: f64,
    pub pigtail_loss_db: f64,
    pub facet_throughput_loss_db: f64,
    #[serde(default)]
    pub dispersion_correction: IndexCorrection,
    #[serde(default)]
    pub medium: Sellmeier,
}

impl Default for WaveguideSpec {
    fn default() -> Self {
        Self {
            length_mm: 52.0,
            qpm_period_um: 19.6,
            temperature_c: 56.0,
            pigtail_loss_db: 0.7,
            facet_throughput_loss_db: 1.5,
            dispersion_correction: IndexCorrection::zero(),
            medium: Sellmeier::default(),
        }
    }
}

impl WaveguideSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_mm > 0.0) {
            return Err(Error::config("waveguide.length_mm", "must be > 0"));
        }
        if !(self.qpm_period_um > 0.0) {
            return Err(Error::config("waveguide.qpm_period_um", "must be > 0"));
        }
        if !(self.pigtail_loss_db >= 0.0) {
            return Err(Error::config("waveguide.pigtail_loss_db", "must be >= 0"));
        }
        if !(self.facet_throughput_loss_db >= 0.0) {
            return Err(Error::config(
                "waveguide.facet_throughput_loss_db",
                "must be >= 0",
            ));
        }
        Ok(())
    }

    pub fn length_um(&self) -> f64 {
        self.length_mm * 1e3
    }

    pub fn refractive_index(&self, wave: OpticalWave) -> Result<f64> {
        self.medium
            .refractive_index(wave, self.temperature_c, &self.dispersion_correction)
    }

    /// n(λ)/λ in 1/µm, for a wavelength given in nm.
    #[inline]
    pub(crate) fn wavenumber_over_2pi(&self, nm: f64) -> Result<f64> {
        let um = nm * 1e-3;
        self.medium.check_window(um)?;
        let n = self.medium.bulk_index_um(um, self.temperature_c)
            + self.dispersion_correction.eval_um(um);
        Ok(n / um)
    }

    /// Δk in rad/µm for wavelengths in nm.
    pub(crate) fn delta_k_nm(&self, signal_nm: f64, pump_nm: f64) -> Result<f64> {
        let sfg_nm = sfg_nm(signal_nm, pump_nm);
        let k3 = self.wavenumber_over_2pi(sfg_nm)?;
        let k1 = self.wavenumber_over_2pi(signal_nm)?;
        let k2 = self.wavenumber_over_2pi(pump_nm)?;
        Ok(2.0 * PI * (k3 - k1 - k2 - 1.0 / self.qpm_period_um))
    }

    pub(crate) fn with_correction(&self, correction: IndexCorrection) -> Self {
        Self {
            dispersion_correction: correction,
            ..self.clone()
        }
    }
}

/// Phase mismatch and the resulting sinc² efficiency factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseMatchState {
    /// rad/µm
    pub delta_k: f64,
    pub efficiency_factor: f64,
}

impl PhaseMatchState {
    pub fn new(delta_k: f64, length_um: f64) -> Self {
        Self {
            delta_k,
            efficiency_factor: sinc_squared(delta_k * length_um / 2.0),
        }
    }
}

/// sin²(x)/x², equal to 1 at x = 0.
#[inline]
pub fn sinc_squared(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        let s = 1.0 - x2 / 6.0 + x2 * x2 / 120.0;
        s * s
    } else {
        let s = x.sin() / x;
        s * s
    }
}

#[inline]
pub(crate) fn sfg_nm(signal_nm: f64, pump_nm: f64) -> f64 {
    signal_nm * pump_nm / (signal_nm + pump_nm)
}

/// Energy conservation: 1/λ_out = 1/λ_s + 1/λ_p.
pub fn sfg_wavelength(signal: OpticalWave, pump: OpticalWave) -> Result<OpticalWave> {
    OpticalWave::from_nm(sfg_nm(signal.nm(), pump.nm()))
}

pub fn qpm_mismatch(
    signal: OpticalWave,
    pump: OpticalWave,
    wg: &WaveguideSpec,
) -> Result<PhaseMatchState> {
    let dk = wg.delta_k_nm(signal.nm(), pump.nm())?;
    Ok(PhaseMatchState::new(dk, wg.length_um()))
}

/// Walks `from` towards `to` in coarse steps and returns the first bracket
/// with a sign change of `f`.
fn coarse_bracket(
    f: &impl Fn(f64) -> Result<f64>,
    from: f64,
    to: f64,
    step: f64,
) -> Result<Option<(f64, f64)>> {
    let dir = (to - from).signum();
    let mut x0 = from;
    let mut f0 = f(x0)?;
    loop {
        let x1 = if dir > 0.0 {
            (x0 + step).min(to)
        } else {
            (x0 - step).max(to)
        };
        let f1 = f(x1)?;
        if f0 == 0.0 || (f0 < 0.0) != (f1 < 0.0) {
            return Ok(Some((x0.min(x1), x0.max(x1))));
        }
        if x1 == to {
            return Ok(None);
        }
        x0 = x1;
        f0 = f1;
    }
}

/// Signal wavelength phase matched to `pump` (signal shorter than pump).
pub fn phase_matched_signal(pump: OpticalWave, wg: &WaveguideSpec) -> Result<OpticalWave> {
    let (window_lo, _) = wg.medium.window_nm();
    let f = |s: f64| wg.delta_k_nm(s, pump.nm());
    // the SFG wavelength must also stay inside the window
    let lo = window_lo.max(window_lo * pump.nm() / (pump.nm() - window_lo)) + 1e-9;
    let hi = pump.nm() - 1e-6;
    if lo >= hi {
        return Err(Error::Tuning {
            lo_nm: lo,
            hi_nm: hi,
            context: format!("pump {} nm", pump.nm()),
        });
    }
    match coarse_bracket(&f, hi, lo, COARSE_STEP_NM)? {
        Some((a, b)) => OpticalWave::from_nm(bisect(f, a, b, PHASE_MATCH_TOLERANCE)?),
        None => Err(Error::Tuning {
            lo_nm: lo,
            hi_nm: hi,
            context: format!("signal for pump {} nm", pump.nm()),
        }),
    }
}

/// Pump wavelength phase matched to `signal` (pump longer than signal).
pub fn phase_matched_pump(signal: OpticalWave, wg: &WaveguideSpec) -> Result<OpticalWave> {
    let (_, window_hi) = wg.medium.window_nm();
    let f = |p: f64| wg.delta_k_nm(signal.nm(), p);
    let lo = signal.nm() + 1e-6;
    let hi = window_hi - 1e-9;
    match coarse_bracket(&f, lo, hi, COARSE_STEP_NM)? {
        Some((a, b)) => OpticalWave::from_nm(bisect(f, a, b, PHASE_MATCH_TOLERANCE)?),
        None => Err(Error::Tuning {
            lo_nm: lo,
            hi_nm: hi,
            context: format!("pump for signal {} nm", signal.nm()),
        }),
    }
}

/// Full width at half maximum of the sinc² lineshape versus signal wavelength
/// at a fixed pump, reported in both the signal and the SFG band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AcceptanceBandwidth {
    pub phase_matched_signal_nm: f64,
    pub signal_fwhm_nm: f64,
    pub sfg_fwhm_nm: f64,
}

pub fn acceptance_bandwidth(wg: &WaveguideSpec, pump: OpticalWave) -> Result<AcceptanceBandwidth> {
    let center = phase_matched_signal(pump, wg)?.nm();
    let length = wg.length_um();
    let excess = |s: f64| -> Result<f64> {
        Ok(sinc_squared(wg.delta_k_nm(s, pump.nm())? * length / 2.0) - 0.5)
    };
    let crossing = |dir: f64| -> Result<f64> {
        let mut step = 1e-3;
        while step < 100.0 {
            let x = center + dir * step;
            if excess(x)? < 0.0 {
                let (a, b) = if dir > 0.0 {
                    (center + dir * step / 2.0, x)
                } else {
                    (x, center + dir * step / 2.0)
                };
                return bisect(&excess, a, b, 1e-13);
            }
            step *= 1.5;
        }
        Err(Error::Tuning {
            lo_nm: center - 100.0,
            hi_nm: center + 100.0,
            context: "half-maximum crossing of the acceptance lineshape".into(),
        })
    };
    let lo = crossing(-1.0)?;
    let hi = crossing(1.0)?;
    Ok(AcceptanceBandwidth {
        phase_matched_signal_nm: center,
        signal_fwhm_nm: hi - lo,
        sfg_fwhm_nm: sfg_nm(hi, pump.nm()) - sfg_nm(lo, pump.nm()),
    })
}

/// Powers of λ fitted for a given number of anchors. The constant term is
/// Δk-neutral (1/λ₃ − 1/λ₁ − 1/λ₂ = 0) and is never fitted.
fn calibration_powers(anchors: usize) -> &'static [i32] {
    match anchors {
        1 => &[2],
        2 => &[1, 2],
        _ => &[1, 2, 3],
    }
}

/// Fits the effective-index correction so that every (pump, signal) anchor
/// is phase matched. The existing correction of `wg` is discarded first, so
/// re-calibrating with the same anchors is a fixed point.
pub fn calibrate_operating_point(
    wg: &WaveguideSpec,
    anchors: &[(OpticalWave, OpticalWave)],
) -> Result<WaveguideSpec> {
    if anchors.is_empty() {
        return Err(Error::Calibration("at least one anchor is required".into()));
    }
    for (i, a) in anchors.iter().enumerate() {
        for b in &anchors[i + 1..] {
            if (a.0.nm() - b.0.nm()).abs() < 1e-9 {
                return Err(Error::Calibration(format!(
                    "singular fit: duplicate anchor pump wavelength {} nm",
                    a.0.nm()
                )));
            }
        }
    }
    let bulk = wg.with_correction(IndexCorrection::zero());
    let powers = calibration_powers(anchors.len());
    let rows = anchors.len();
    let cols = powers.len();
    let mut design = DMatrix::<f64>::zeros(rows, cols);
    let mut rhs = DVector::<f64>::zeros(rows);
    for (r, (pump, signal)) in anchors.iter().enumerate() {
        let s = signal.um();
        let p = pump.um();
        let t = sfg_nm(signal.nm(), pump.nm()) * 1e-3;
        for (c, &k) in powers.iter().enumerate() {
            design[(r, c)] = 2.0 * PI * (t.powi(k - 1) - s.powi(k - 1) - p.powi(k - 1));
        }
        rhs[r] = -bulk.delta_k_nm(signal.nm(), pump.nm())?;
    }
    let solution = if rows == cols {
        design
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Calibration("singular anchor system".into()))?
    } else {
        design
            .clone()
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| Error::Calibration(e.to_string()))?
    };
    if solution.iter().any(|c| !c.is_finite()) {
        return Err(Error::Calibration("singular anchor system".into()));
    }
    let max_power = *powers.iter().max().unwrap() as usize;
    let mut coefficients = vec![0.0; max_power + 1];
    for (c, &k) in powers.iter().enumerate() {
        coefficients[k as usize] = solution[c];
    }
    Ok(wg.with_correction(IndexCorrection::new(coefficients)))
}

/// QPM period (µm) that phase matches (pump, signal) in `wg`'s medium.
pub fn design_period(pump: OpticalWave, signal: OpticalWave, wg: &WaveguideSpec) -> Result<f64> {
    let sfg = sfg_nm(signal.nm(), pump.nm());
    let inverse = wg.wavenumber_over_2pi(sfg)?
        - wg.wavenumber_over_2pi(signal.nm())?
        - wg.wavenumber_over_2pi(pump.nm())?;
    let period = 1.0 / inverse;
    if !(period > 5.0 && period < 50.0) {
        return Err(Error::Design(format!(
            "required period {period:.4} µm outside (5, 50) µm"
        )));
    }
    Ok(period)
}
