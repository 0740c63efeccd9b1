//! Pump-power dependence of the end-to-end detection efficiency and of the
//! pump-induced noise count rate, plus fits through measured points.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{bisect, scan_then_golden};

/// Pump laser operating state. Power is referenced to the waveguide output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PumpState {
    pub wavelength_nm: f64,
    pub power_mw: f64,
    pub source_max_power_mw: f64,
}

impl PumpState {
    pub fn new(wavelength_nm: f64, power_mw: f64, source_max_power_mw: f64) -> Result<Self> {
        if !(power_mw >= 0.0 && power_mw <= source_max_power_mw) {
            return Err(Error::domain(format!(
                "pump power {power_mw} mW outside [0, {source_max_power_mw}] mW"
            )));
        }
        Ok(Self {
            wavelength_nm,
            power_mw,
            source_max_power_mw,
        })
    }
}

fn check_power(power_mw: f64) -> Result<()> {
    if !(power_mw >= 0.0) || !power_mw.is_finite() {
        return Err(Error::domain(format!(
            "pump power must be a finite value >= 0 mW, got {power_mw}"
        )));
    }
    Ok(())
}

/// η(P) = η_max · sin²(u·√P), the undepleted-signal SFG conversion law with a
/// lumped system efficiency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversionModel {
    pub eta_max: f64,
    /// mW^(-1/2)
    pub coupling_strength: f64,
}

impl ConversionModel {
    pub fn new(eta_max: f64, coupling_strength: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta_max) {
            return Err(Error::domain(format!("eta_max {eta_max} outside [0, 1]")));
        }
        if !(coupling_strength > 0.0) {
            return Err(Error::domain("coupling strength must be > 0"));
        }
        Ok(Self {
            eta_max,
            coupling_strength,
        })
    }

    pub fn efficiency(&self, power_mw: f64) -> Result<f64> {
        check_power(power_mw)?;
        let s = (self.coupling_strength * power_mw.sqrt()).sin();
        Ok(self.eta_max * s * s)
    }

    /// Pump power of maximum conversion, (π / 2u)².
    pub fn optimum_power_mw(&self) -> f64 {
        (FRAC_PI_2 / self.coupling_strength).powi(2)
    }

    /// Same coupling strength, with η_max rescaled so that η(power) = eta.
    pub fn rescaled_to(&self, power_mw: f64, eta: f64) -> Result<Self> {
        check_power(power_mw)?;
        let s = (self.coupling_strength * power_mw.sqrt()).sin().powi(2);
        if s <= 0.0 {
            return Err(Error::domain("cannot rescale at zero conversion"));
        }
        Self::new(eta / s, self.coupling_strength)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConversionFit {
    pub model: ConversionModel,
    /// model − measured, at each input point (input order).
    pub residuals: Vec<f64>,
}

fn sorted_distinct(points: &[(f64, f64)], what: &str) -> Result<Vec<(f64, f64)>> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let distinct = sorted
        .windows(2)
        .filter(|w| (w[1].0 - w[0].0).abs() > 1e-12)
        .count()
        + 1;
    if sorted.len() < 2 || distinct < 2 {
        return Err(Error::Fit(format!(
            "{what} fit is rank deficient: need >= 2 distinct pump powers"
        )));
    }
    Ok(sorted)
}

/// Fits η_max and u through measured (power mW, efficiency) points.
///
/// Two points are solved exactly: the ratio η₂/η₁ = sin²(u√P₂)/sin²(u√P₁) is
/// bisected for u on (0, π/(2√P_max)) and η_max follows. More points are fit
/// by least squares over the same bracket, with η_max eliminated in closed
/// form for each trial u.
pub fn fit_conversion(points: &[(f64, f64)]) -> Result<ConversionFit> {
    for &(p, e) in points {
        if !(p > 0.0) {
            return Err(Error::domain(format!("calibration power {p} mW must be > 0")));
        }
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::domain(format!("efficiency {e} must lie in (0, 1)")));
        }
    }
    let sorted = sorted_distinct(points, "conversion")?;
    let p_max = sorted.last().unwrap().0;
    let u_max = FRAC_PI_2 / p_max.sqrt();

    let u = if sorted.len() == 2 {
        let (p1, e1) = sorted[0];
        let (p2, e2) = sorted[1];
        let target = e2 / e1;
        let ratio = |u: f64| (u * p2.sqrt()).sin().powi(2) / (u * p1.sqrt()).sin().powi(2);
        let lo = u_max * 1e-9;
        let hi = u_max;
        let (r_lo, r_hi) = (ratio(lo), ratio(hi));
        if (r_lo - target) * (r_hi - target) > 0.0 {
            return Err(Error::Fit(format!(
                "no sin² solution: efficiency ratio {target:.4} outside achievable ({:.4}, {:.4}) for u in (0, {u_max:.4}] mW^-1/2",
                r_hi.min(r_lo),
                r_hi.max(r_lo)
            )));
        }
        bisect(|u| Ok(ratio(u) - target), lo, hi, 0.0)?
    } else {
        let sse = |u: f64| {
            let (num, den) = sorted.iter().fold((0.0, 0.0), |(n, d), &(p, e)| {
                let s = (u * p.sqrt()).sin().powi(2);
                (n + e * s, d + s * s)
            });
            let eta = num / den;
            sorted
                .iter()
                .map(|&(p, e)| (eta * (u * p.sqrt()).sin().powi(2) - e).powi(2))
                .sum::<f64>()
        };
        scan_then_golden(sse, u_max * 1e-6, u_max, 4000)
    };

    let eta_max = {
        let (num, den) = sorted.iter().fold((0.0, 0.0), |(n, d), &(p, e)| {
            let s = (u * p.sqrt()).sin().powi(2);
            (n + e * s, d + s * s)
        });
        num / den
    };
    if !(eta_max > 0.0 && eta_max <= 1.0) {
        return Err(Error::Fit(format!(
            "fitted eta_max {eta_max:.4} outside (0, 1]"
        )));
    }
    let model = ConversionModel::new(eta_max, u)?;
    let residuals = points
        .iter()
        .map(|&(p, e)| model.efficiency(p).map(|m| m - e))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConversionFit { model, residuals })
}

/// rate(P) = D₀ + a·P^γ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub floor_cps: f64,
    pub amplitude: f64,
    pub exponent: f64,
}

impl NoiseModel {
    /// Pump-independent rate.
    pub fn constant(rate_cps: f64) -> Self {
        Self {
            floor_cps: rate_cps,
            amplitude: 0.0,
            exponent: 1.0,
        }
    }

    pub fn rate(&self, power_mw: f64) -> Result<f64> {
        check_power(power_mw)?;
        if self.amplitude == 0.0 {
            return Ok(self.floor_cps);
        }
        Ok(self.floor_cps + self.amplitude * power_mw.powf(self.exponent))
    }

    /// Adds a pump-independent floor, e.g. detector dark counts.
    pub fn with_added_floor(&self, extra_cps: f64) -> Self {
        Self {
            floor_cps: self.floor_cps + extra_cps,
            ..*self
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseFit {
    pub model: NoiseModel,
    /// model − measured, at each input point (input order).
    pub residuals: Vec<f64>,
    /// Constant data: the exponent is undetermined and set to 0.
    pub degenerate: bool,
    /// All residuals below 1e-9 of the largest rate.
    pub exact: bool,
}

const MAX_NOISE_EXPONENT: f64 = 8.0;

/// Fits D₀ + a·P^γ through (power mW, counts/s) points.
///
/// With two points the floor is held at `floor_cps` and the power law passes
/// exactly through both. With three or more, `floor_cps` is a lower bound
/// on D₀ and (D₀, a ≥ 0, γ ∈ [0, 8]) are fit by least squares; inconsistent
/// data shows up as nonzero residuals and `exact == false`.
pub fn fit_noise(points: &[(f64, f64)], floor_cps: f64) -> Result<NoiseFit> {
    if !(floor_cps >= 0.0) {
        return Err(Error::domain("noise floor constraint must be >= 0"));
    }
    for &(p, r) in points {
        if !(p > 0.0) {
            return Err(Error::domain(format!("calibration power {p} mW must be > 0")));
        }
        if !(r > 0.0) {
            return Err(Error::domain(format!("noise rate {r} cps must be > 0")));
        }
    }
    let sorted = sorted_distinct(points, "noise")?;
    let scale = sorted.iter().map(|p| p.1).fold(0.0, f64::max);
    let all_equal = sorted.iter().all(|p| (p.1 - sorted[0].1).abs() <= 1e-12 * scale);

    let (model, degenerate) = if all_equal {
        let rate = sorted[0].1;
        if rate < floor_cps {
            return Err(Error::Fit(format!(
                "rate {rate} cps below the floor {floor_cps} cps"
            )));
        }
        (
            NoiseModel {
                floor_cps,
                amplitude: rate - floor_cps,
                exponent: 0.0,
            },
            true,
        )
    } else if sorted.len() == 2 {
        let (p1, r1) = sorted[0];
        let (p2, r2) = sorted[1];
        if r1 <= floor_cps || r2 <= floor_cps {
            return Err(Error::Fit(format!(
                "power law infeasible: rates ({r1}, {r2}) cps must exceed the floor {floor_cps} cps"
            )));
        }
        let exponent = ((r2 - floor_cps) / (r1 - floor_cps)).ln() / (p2 / p1).ln();
        let amplitude = (r1 - floor_cps) / p1.powf(exponent);
        (
            NoiseModel {
                floor_cps,
                amplitude,
                exponent,
            },
            false,
        )
    } else {
        let solve = |gamma: f64| -> (f64, f64, f64) {
            let xs: Vec<f64> = sorted.iter().map(|&(p, _)| p.powf(gamma)).collect();
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = sorted.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = xs.iter().zip(&sorted).map(|(x, p)| (x - mx) * (p.1 - my)).sum();
            let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
            let (mut d0, mut a) = if sxx > 0.0 {
                let a = sxy / sxx;
                (my - a * mx, a)
            } else {
                (my, 0.0)
            };
            if a < 0.0 {
                a = 0.0;
                d0 = my;
            }
            if d0 < floor_cps {
                d0 = floor_cps;
                let num: f64 = xs.iter().zip(&sorted).map(|(x, p)| x * (p.1 - d0)).sum();
                let den: f64 = xs.iter().map(|x| x * x).sum();
                a = (num / den).max(0.0);
            }
            let sse = xs
                .iter()
                .zip(&sorted)
                .map(|(x, p)| (d0 + a * x - p.1).powi(2))
                .sum();
            (d0, a, sse)
        };
        let gamma = scan_then_golden(|g| solve(g).2, 0.0, MAX_NOISE_EXPONENT, 8000);
        let (d0, a, _) = solve(gamma);
        (
            NoiseModel {
                floor_cps: d0,
                amplitude: a,
                exponent: gamma,
            },
            false,
        )
    };

    let residuals = points
        .iter()
        .map(|&(p, r)| model.rate(p).map(|m| m - r))
        .collect::<Result<Vec<_>>>()?;
    let exact = residuals.iter().all(|r| r.abs() <= 1e-9 * scale);
    Ok(NoiseFit {
        model,
        residuals,
        degenerate,
        exact,
    })
}
