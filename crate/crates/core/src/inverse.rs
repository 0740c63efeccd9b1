//! Recovery of the input spectrum from a raw scan.
//!
//! The default solver is Richardson–Lucy on background-subtracted rates,
//! started from a flat spectrum carrying the measured flux. Iteration stops
//! when the Poisson deviance of the model against the counts falls to its
//! expectation (`factor` × number of points), when the estimate stagnates,
//! or at the iteration cap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrometer::{ResponseKernel, ScanResult};
use crate::spectrum::{bin_widths, Spectrum, SpectrumUnit};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Algorithm {
    RichardsonLucy,
    /// Nonnegative-clamped minimiser of ‖Kx − y‖² + α·s·‖x‖², with s the
    /// largest squared column norm of K.
    Tikhonov { alpha: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StopRule {
    /// Stop once the Poisson deviance ≤ factor × number of scan points.
    Discrepancy { factor: f64 },
    /// Run to the iteration cap (or stagnation).
    MaxIterations,
}

/// Which column of the scan is deconvolved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSource {
    #[default]
    Counts,
    /// Noiseless expected rates.
    Expected,
}

/// Safety factor on the expected deviance. The true spectrum itself has a
/// deviance of about N ± √(2N), so a factor of 1 is missed half the time.
pub const DISCREPANCY_FACTOR: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconvolveOptions {
    pub algorithm: Algorithm,
    pub max_iters: usize,
    pub stop: StopRule,
    /// Background rate to subtract; estimated from the scan when absent.
    pub background_cps: Option<f64>,
    pub source: RateSource,
    /// Relative L1 change per iteration below which the estimate is stagnant.
    pub stagnation_tol: f64,
}

impl Default for DeconvolveOptions {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::RichardsonLucy,
            max_iters: 500,
            stop: StopRule::Discrepancy { factor: DISCREPANCY_FACTOR },
            background_cps: None,
            source: RateSource::Counts,
            stagnation_tol: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    DiscrepancyReached,
    MaxIterations,
    Stagnation,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeconvolutionResult {
    /// Recovered spectral power density (W/nm) on the kernel signal grid.
    pub estimate: Spectrum,
    pub iterations_used: usize,
    /// ‖Kx − y‖ / ‖y‖ on background-subtracted rates.
    pub residual_norm: f64,
    pub stop_reason: StopReason,
    pub background_cps: f64,
    /// Σ Kx / Σ y.
    pub flux_ratio: f64,
    /// Final Poisson deviance (counts source only).
    pub deviance: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackgroundWindow {
    /// Seed from the median of the lowest decile of rates, then refine with
    /// the median of all points within 3σ (Poisson) above the running value.
    LowestDecile,
    /// Median of the points whose mapped signal lies outside [lo, hi].
    OutsideSupport { lo_nm: f64, hi_nm: f64 },
}

const MIN_BACKGROUND_POINTS: usize = 5;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Baseline count rate (counts/s) of a scan.
pub fn estimate_background(raw: &ScanResult, window: BackgroundWindow) -> Result<f64> {
    let rates = raw.count_rates();
    match window {
        BackgroundWindow::OutsideSupport { lo_nm, hi_nm } => {
            let mut off: Vec<f64> = rates
                .iter()
                .zip(&raw.signal_nm_mapped)
                .filter(|(_, &s)| s < lo_nm || s > hi_nm)
                .map(|(&r, _)| r)
                .collect();
            if off.len() < MIN_BACKGROUND_POINTS {
                return Err(Error::Estimation(format!(
                    "{} scan points outside [{lo_nm}, {hi_nm}] nm, need {MIN_BACKGROUND_POINTS}",
                    off.len()
                )));
            }
            Ok(median(&mut off).max(0.0))
        }
        BackgroundWindow::LowestDecile => {
            let mut sorted = rates.clone();
            sorted.sort_by(f64::total_cmp);
            let decile = sorted.len().div_ceil(10);
            if decile < MIN_BACKGROUND_POINTS {
                return Err(Error::Estimation(format!(
                    "{} scan points give {decile} in the lowest decile, need {MIN_BACKGROUND_POINTS}",
                    sorted.len()
                )));
            }
            let mut level = median(&mut sorted[..decile].to_vec());
            for _ in 0..50 {
                let cut = level + 3.0 * (level.max(1.0 / raw.dwell_s) / raw.dwell_s).sqrt();
                let mut kept: Vec<f64> = sorted.iter().copied().filter(|&r| r <= cut).collect();
                let next = median(&mut kept);
                if (next - level).abs() <= 1e-12 * level.max(1.0) {
                    break;
                }
                level = next;
            }
            // a baseline has to be flat: if the points it rests on are not
            // at the noise level of a constant rate, the scan holds no
            // off-band region
            let sigma = (level.max(1.0 / raw.dwell_s) / raw.dwell_s).sqrt();
            let off = sorted
                .iter()
                .filter(|&&r| (r - level).abs() <= 3.0 * sigma)
                .count();
            if off < MIN_BACKGROUND_POINTS.max(sorted.len() / 10) {
                return Err(Error::Estimation(
                    "no flat off-band region: the scan is saturated by signal".into(),
                ));
            }
            Ok(level.max(0.0))
        }
    }
}

/// Poisson deviance 2 Σ [n ln(n/μ) − (n − μ)].
pub fn poisson_deviance(observed: &[f64], model: &[f64]) -> f64 {
    2.0 * observed
        .iter()
        .zip(model)
        .map(|(&n, &mu)| {
            let mu = mu.max(1e-300);
            if n > 0.0 {
                n * (n / mu).ln() - (n - mu)
            } else {
                mu
            }
        })
        .sum::<f64>()
}

/// Σ [y ln(Kx) − Kx], the Richardson–Lucy objective up to a constant.
pub fn poisson_log_likelihood(kernel: &ResponseKernel, x: &[f64], y: &[f64]) -> f64 {
    kernel
        .apply(x)
        .iter()
        .zip(y)
        .map(|(&m, &d)| if d > 0.0 { d * m.max(1e-300).ln() - m } else { -m })
        .sum()
}

/// One multiplicative update x ← x · Kᵀ(y / Kx) / Kᵀ1.
pub fn richardson_lucy_step(kernel: &ResponseKernel, x: &[f64], y: &[f64], column_sums: &[f64]) -> Vec<f64> {
    let model = kernel.apply(x);
    let ratio: Vec<f64> = y
        .iter()
        .zip(&model)
        .map(|(&d, &m)| if m > 0.0 { d / m } else { 0.0 })
        .collect();
    let back = kernel.apply_transpose(&ratio);
    x.iter()
        .zip(back.iter().zip(column_sums))
        .map(|(&v, (&b, &c))| if c > 0.0 { v * b / c } else { 0.0 })
        .collect()
}

fn check_consistent(raw: &ScanResult, kernel: &ResponseKernel) -> Result<()> {
    if raw.len() < 3 {
        return Err(Error::Input(format!(
            "raw scan has {} points, need at least 3",
            raw.len()
        )));
    }
    if raw.len() != kernel.rows() {
        return Err(Error::Input(format!(
            "raw scan has {} points but the kernel has {} rows",
            raw.len(),
            kernel.rows()
        )));
    }
    for (a, b) in raw.pump_nm.iter().zip(kernel.pump_grid_nm()) {
        if (a - b).abs() > 1e-6 {
            return Err(Error::Input(format!(
                "raw pump grid ({a} nm) does not match the kernel ({b} nm)"
            )));
        }
    }
    Ok(())
}

/// Signal-grid bands inside the scanned range that no scan point responds to.
fn dead_bands(raw: &ScanResult, kernel: &ResponseKernel, column_sums: &[f64]) -> Vec<(f64, f64)> {
    let (lo, hi) = raw
        .signal_nm_mapped
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let mut bands: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for (&s, &c) in kernel.signal_grid_nm().iter().zip(column_sums) {
        let inside = s >= lo && s <= hi;
        if inside && c <= 0.0 {
            open = Some(match open {
                Some((a, _)) => (a, s),
                None => (s, s),
            });
        } else if let Some(band) = open.take() {
            bands.push(band);
        }
    }
    bands.extend(open);
    bands
}

pub fn deconvolve(
    raw: &ScanResult,
    kernel: &ResponseKernel,
    options: &DeconvolveOptions,
) -> Result<DeconvolutionResult> {
    check_consistent(raw, kernel)?;
    if options.max_iters == 0 {
        return Err(Error::Input("max_iters must be >= 1".into()));
    }
    let background = match options.background_cps {
        Some(b) if b >= 0.0 => b,
        Some(b) => return Err(Error::domain(format!("background {b} cps must be >= 0"))),
        None => estimate_background(raw, BackgroundWindow::LowestDecile)?,
    };
    let rates = match options.source {
        RateSource::Counts => raw.count_rates(),
        RateSource::Expected => raw.expected_rate.clone(),
    };
    let y: Vec<f64> = rates.iter().map(|r| (r - background).max(0.0)).collect();

    let column_sums = kernel.column_sums();
    let dead = dead_bands(raw, kernel, &column_sums);
    if !dead.is_empty() {
        let list: Vec<String> = dead.iter().map(|(a, b)| format!("[{a:.4}, {b:.4}] nm")).collect();
        return Err(Error::UnrecoverableBand(format!(
            "no response inside the scanned range at {}",
            list.join(", ")
        )));
    }

    let observed: Vec<f64> = match options.source {
        RateSource::Counts => raw.counts.iter().map(|&k| k as f64).collect(),
        RateSource::Expected => raw.expected_rate.iter().map(|r| r * raw.dwell_s).collect(),
    };
    let deviance_of = |model: &[f64]| {
        let mu: Vec<f64> = model.iter().map(|m| (m + background) * raw.dwell_s).collect();
        poisson_deviance(&observed, &mu)
    };

    let total: f64 = y.iter().sum();
    let active_sum: f64 = column_sums.iter().sum();
    let (x, iterations, reason) = if total == 0.0 {
        (vec![0.0; kernel.cols()], 0, StopReason::Stagnation)
    } else {
        match options.algorithm {
            Algorithm::RichardsonLucy => {
                let flat = total / active_sum;
                let mut x: Vec<f64> = column_sums
                    .iter()
                    .map(|&c| if c > 0.0 { flat } else { 0.0 })
                    .collect();
                let mut reason = StopReason::MaxIterations;
                let mut iterations = options.max_iters;
                for it in 1..=options.max_iters {
                    let next = richardson_lucy_step(kernel, &x, &y, &column_sums);
                    debug_assert!(next.iter().all(|&v| v >= 0.0));
                    let change: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
                    let norm: f64 = next.iter().sum();
                    x = next;
                    if let StopRule::Discrepancy { factor } = options.stop {
                        if deviance_of(&kernel.apply(&x)) <= factor * raw.len() as f64 {
                            reason = StopReason::DiscrepancyReached;
                            iterations = it;
                            break;
                        }
                    }
                    if norm > 0.0 && change / norm < options.stagnation_tol {
                        reason = StopReason::Stagnation;
                        iterations = it;
                        break;
                    }
                }
                (x, iterations, reason)
            }
            Algorithm::Tikhonov { alpha } => {
                if !(alpha > 0.0) {
                    return Err(Error::domain("Tikhonov alpha must be > 0"));
                }
                tikhonov(kernel, &y, alpha, options.max_iters)
            }
        }
    };

    let model = kernel.apply(&x);
    let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual = model
        .iter()
        .zip(&y)
        .map(|(m, d)| (m - d).powi(2))
        .sum::<f64>()
        .sqrt();
    let widths = bin_widths(kernel.signal_grid_nm());
    let density: Vec<f64> = x.iter().zip(&widths).map(|(v, w)| v / w).collect();
    Ok(DeconvolutionResult {
        estimate: Spectrum::new(kernel.signal_grid_nm().to_vec(), density, SpectrumUnit::PowerWPerNm)?,
        iterations_used: iterations,
        residual_norm: if y_norm > 0.0 { residual / y_norm } else { 0.0 },
        stop_reason: reason,
        background_cps: background,
        flux_ratio: if total > 0.0 { model.iter().sum::<f64>() / total } else { 1.0 },
        deviance: (options.source == RateSource::Counts).then(|| deviance_of(&model)),
    })
}

/// Conjugate gradients on (KᵀK + α·s·I)x = Kᵀy, clamped to x ≥ 0 at the end.
fn tikhonov(kernel: &ResponseKernel, y: &[f64], alpha: f64, max_iters: usize) -> (Vec<f64>, usize, StopReason) {
    let n = kernel.cols();
    let scale = (0..n)
        .map(|j| kernel.column(j).iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    let lambda = alpha * scale;
    let normal = |v: &[f64]| -> Vec<f64> {
        let kv = kernel.apply(v);
        kernel
            .apply_transpose(&kv)
            .iter()
            .zip(v)
            .map(|(a, b)| a + lambda * b)
            .collect()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let b = kernel.apply_transpose(y);
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = 1e-24 * rr;
    let mut reason = StopReason::MaxIterations;
    let mut iterations = max_iters;
    for it in 1..=max_iters {
        let ap = normal(&p);
        let step = rr / dot(&p, &ap);
        for k in 0..n {
            x[k] += step * p[k];
            r[k] -= step * ap[k];
        }
        let next = dot(&r, &r);
        if next <= target {
            reason = StopReason::Stagnation;
            iterations = it;
            break;
        }
        let beta = next / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = next;
    }
    (x.into_iter().map(|v| v.max(0.0)).collect(), iterations, reason)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counting::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    fn scan_from_rates(rates: Vec<f64>, counts: Vec<u64>) -> ScanResult {
        let n = rates.len();
        ScanResult {
            pump_nm: (0..n).map(|i| 1900.0 + i as f64).collect(),
            signal_nm_mapped: (0..n).map(|i| 1500.0 + i as f64).collect(),
            expected_rate: rates,
            counts,
            dwell_s: 1.0,
            vbg_centers_nm: Vec::new(),
            noise_floor_cps: 0.0,
            seed: 0,
        }
    }

    fn random_kernel(rows: usize, cols: usize, seed: u64) -> ResponseKernel {
        let mut rng = rng_for(&[seed]);
        let values = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
        ResponseKernel::from_parts(
            (0..rows).map(|i| 1900.0 + i as f64).collect(),
            (0..cols).map(|j| 1500.0 + j as f64).collect(),
            values,
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn likelihood_ascends_and_stays_nonnegative(seed in 0u64..10_000, rows in 4usize..12, cols in 3usize..10) {
            let k = random_kernel(rows, cols, seed);
            let mut rng = rng_for(&[seed, 1]);
            let truth: Vec<f64> = (0..cols).map(|_| rng.random::<f64>()).collect();
            let y = k.apply(&truth);
            let sums = k.column_sums();
            let mut x = vec![y.iter().sum::<f64>() / sums.iter().sum::<f64>(); cols];
            let mut last = poisson_log_likelihood(&k, &x, &y);
            for _ in 0..50 {
                x = richardson_lucy_step(&k, &x, &y, &sums);
                prop_assert!(x.iter().all(|&v| v >= 0.0));
                let ll = poisson_log_likelihood(&k, &x, &y);
                prop_assert!(ll >= last - 1e-9 * last.abs().max(1.0));
                // flux is preserved by every update
                let flux: f64 = k.apply(&x).iter().sum();
                prop_assert!((flux / y.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                last = ll;
            }
        }
    }

    #[test]
    fn short_scan_is_an_input_error() {
        let k = random_kernel(2, 3, 1);
        let raw = scan_from_rates(vec![1.0, 2.0], vec![1, 2]);
        assert!(matches!(deconvolve(&raw, &k, &DeconvolveOptions::default()), Err(Error::Input(_))));
    }

    #[test]
    fn dead_column_inside_scan_is_unrecoverable() {
        let mut values: Vec<f64> = random_kernel(6, 6, 3).values().to_vec();
        for i in 0..6 {
            values[i * 6 + 2] = 0.0;
        }
        let k = ResponseKernel::from_parts(
            (0..6).map(|i| 1900.0 + i as f64).collect(),
            (0..6).map(|j| 1500.0 + j as f64).collect(),
            values,
        )
        .unwrap();
        let raw = scan_from_rates(vec![10.0; 6], vec![10; 6]);
        let opts = DeconvolveOptions { background_cps: Some(0.0), ..Default::default() };
        match deconvolve(&raw, &k, &opts) {
            Err(Error::UnrecoverableBand(msg)) => assert!(msg.contains("1502")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn background_from_off_band_points() {
        let mut rng = rng_for(&[99]);
        let n = 100;
        let counts: Vec<u64> = (0..n).map(|_| crate::counting::poisson(60.0, &mut rng)).collect();
        let raw = scan_from_rates(vec![60.0; n], counts);
        let b = estimate_background(&raw, BackgroundWindow::OutsideSupport { lo_nm: 0.0, hi_nm: 1.0 }).unwrap();
        assert!((b - 60.0).abs() <= 2.0 * 60f64.sqrt() / (n as f64).sqrt(), "{b}");
        let d = estimate_background(&raw, BackgroundWindow::LowestDecile).unwrap();
        assert!((d - 60.0).abs() <= 2.0 * 60f64.sqrt() / (n as f64).sqrt(), "{d}");
    }

    #[test]
    fn saturated_scan_has_no_background() {
        let n = 200;
        let rates: Vec<f64> = (0..n).map(|i| 1e4 * (1.0 + (i as f64 / 20.0).sin().abs() * 5.0)).collect();
        let counts = rates.iter().map(|&r| r as u64).collect();
        let raw = scan_from_rates(rates, counts);
        assert!(matches!(
            estimate_background(&raw, BackgroundWindow::LowestDecile),
            Err(Error::Estimation(_))
        ));
        let few = scan_from_rates(vec![60.0; 20], vec![60; 20]);
        assert!(estimate_background(&few, BackgroundWindow::LowestDecile).is_err());
    }

    #[test]
    fn tikhonov_recovers_well_conditioned_system() {
        let values: Vec<f64> = (0..25).map(|k| if k / 5 == k % 5 { 2.0 } else { 0.1 }).collect();
        let k = ResponseKernel::from_parts(
            (0..5).map(|i| 1900.0 + i as f64).collect(),
            (0..5).map(|j| 1500.0 + j as f64).collect(),
            values,
        )
        .unwrap();
        let truth = [1.0, 2.0, 3.0, 2.0, 1.0];
        let y = k.apply(&truth);
        let raw = scan_from_rates(y.clone(), y.iter().map(|&v| v as u64).collect());
        let opts = DeconvolveOptions {
            algorithm: Algorithm::Tikhonov { alpha: 1e-12 },
            source: RateSource::Expected,
            background_cps: Some(0.0),
            ..Default::default()
        };
        let out = deconvolve(&raw, &k, &opts).unwrap();
        let widths = bin_widths(k.signal_grid_nm());
        for ((v, w), t) in out.estimate.values().iter().zip(widths).zip(truth) {
            assert!((v * w - t).abs() < 1e-6);
        }
    }
}
