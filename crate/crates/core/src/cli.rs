//! Command-line interface.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{Instrument, LoadedConfig, DEFAULT_CONFIG};
use crate::dispersion::{acceptance_bandwidth, design_period, qpm_mismatch, sfg_wavelength};
use crate::error::{Error, Result};
use crate::fom::{nep, NepConvention, OperatingPoint};
use crate::inverse::{deconvolve, Algorithm, DISCREPANCY_FACTOR, DeconvolveOptions, RateSource, StopRule};
use crate::io::{
    json_report, kernel_from_str, kernel_to_string, read_text, scan_from_str, scan_to_string,
    spectrum_from_str, spectrum_to_string, write_text, Provenance,
};
use crate::spectrometer::{
    build_kernel, fixed_vbg_usable_span, forward_scan, resolution, vbg_tracking_schedule,
    KernelMode, ResponseKernel, ScanPlan, VbgTracking,
};
use crate::spectrum::{gaussian_comb, single_line};
use crate::units::{dbm_to_watts, OpticalWave};

#[derive(Debug, Parser)]
#[command(name = "upconv", version, about = "Upconversion detector and pump-scanned spectrometer model")]
pub struct Cli {
    /// Configuration file (TOML); the bundled defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NepArg {
    PhotonSqrtD,
    ShotSqrt2d,
    ReducedPlanckSqrtD,
}

impl From<NepArg> for NepConvention {
    fn from(a: NepArg) -> Self {
        match a {
            NepArg::PhotonSqrtD => NepConvention::PhotonSqrtD,
            NepArg::ShotSqrt2d => NepConvention::ShotSqrt2D,
            NepArg::ReducedPlanckSqrtD => NepConvention::ReducedPlanckSqrtD,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TrackingArg {
    Fixed,
    Tracked,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KernelModeArg {
    Full,
    VbgOnly,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AlgorithmArg {
    Rl,
    Tikhonov,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SourceArg {
    Counts,
    Expected,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the bundled configuration.
    Defaults,
    /// Poling period, acceptance bandwidth and SFG wavelength for a pump/signal pair.
    DesignQpm {
        #[arg(long, default_value_t = 1950.0)]
        pump: f64,
        #[arg(long, default_value_t = 1550.0)]
        signal: f64,
        /// Waveguide temperature (°C); the configured value when absent.
        #[arg(long)]
        temp: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Efficiency, noise rate and NEP at a pump power.
    Fom {
        #[arg(long)]
        pump_power: f64,
        #[arg(long, value_enum)]
        nep_convention: Option<NepArg>,
        #[arg(long, default_value_t = 1550.0)]
        signal: f64,
        /// Use this efficiency instead of the fitted curve.
        #[arg(long)]
        efficiency: Option<f64>,
        /// Use this noise rate (counts/s) instead of the fitted law.
        #[arg(long)]
        noise_cps: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Tuning map, VBG tracking schedule and fixed-VBG usable span.
    Tuning {
        #[arg(long)]
        json: bool,
    },
    /// Analytic and kernel-based resolution at a signal wavelength.
    Resolution {
        #[arg(long, default_value_t = 1550.0)]
        signal: f64,
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic input spectrum: a comb of gaussian modes or one line.
    Synth {
        #[arg(long, default_value_t = 1550.0)]
        center: f64,
        #[arg(long, default_value_t = 5)]
        modes: usize,
        #[arg(long, default_value_t = 0.5)]
        spacing: f64,
        /// Mode FWHM (nm).
        #[arg(long, default_value_t = 0.3)]
        fwhm: f64,
        /// Total power (dBm).
        #[arg(long, default_value_t = -98.9, allow_hyphen_values = true)]
        power_dbm: f64,
        /// A single line in one grid bin instead of a comb.
        #[arg(long)]
        line: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward-scan an input spectrum (W/nm) and write the raw scan.
    Scan {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        start: Option<f64>,
        #[arg(long)]
        stop: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        dwell: Option<f64>,
        #[arg(long)]
        pump_power: Option<f64>,
        #[arg(long, value_enum)]
        tracking: Option<TrackingArg>,
        #[arg(long, value_enum)]
        kernel_mode: Option<KernelModeArg>,
        /// Also write the response kernel.
        #[arg(long)]
        kernel_out: Option<PathBuf>,
    },
    /// Recover the input spectrum from a raw scan.
    Deconvolve {
        #[arg(long)]
        raw: PathBuf,
        /// Kernel CSV, or `model` to rebuild it from the configuration.
        #[arg(long)]
        kernel: String,
        #[arg(long)]
        out: PathBuf,
        /// JSON report path; printed to stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        #[arg(long, value_enum, default_value = "rl")]
        algorithm: AlgorithmArg,
        #[arg(long, default_value_t = 1e-3)]
        alpha: f64,
        /// Background rate (counts/s); estimated from the scan when absent.
        #[arg(long)]
        background: Option<f64>,
        #[arg(long, value_enum, default_value = "counts")]
        source: SourceArg,
        /// Run to the iteration cap instead of stopping at the discrepancy level.
        #[arg(long)]
        no_discrepancy_stop: bool,
        #[arg(long, value_enum)]
        kernel_mode: Option<KernelModeArg>,
    },
}

/// Process exit code for an error: 2 usage and files, 3 configuration,
/// 4 numerical failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Csv(_) | Error::Input(_) => 2,
        Error::Config { .. } => 3,
        _ => 4,
    }
}

struct Context {
    loaded: LoadedConfig,
    instrument: Instrument,
    seed: u64,
}

impl Context {
    fn load(cli: &Cli) -> Result<Self> {
        let loaded = match &cli.config {
            Some(path) => LoadedConfig::from_path(path)?,
            None => LoadedConfig::bundled(),
        };
        let instrument = loaded.config.instrument()?;
        let seed = cli.seed.unwrap_or(loaded.config.seed);
        Ok(Self {
            loaded,
            instrument,
            seed,
        })
    }

    fn provenance(&self) -> Provenance {
        Provenance::new(&self.loaded.sha256, self.seed)
    }
}

fn emit(out: &mut dyn Write, json: bool, report: &impl Serialize, text: String) -> Result<()> {
    if json {
        writeln!(out, "{}", json_report(report))?;
    } else {
        write!(out, "{text}")?;
    }
    Ok(())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    if let Command::Defaults = cli.command {
        write!(out, "{DEFAULT_CONFIG}")?;
        return Ok(());
    }
    let ctx = Context::load(&cli)?;
    match cli.command {
        Command::Defaults => unreachable!(),
        Command::DesignQpm { pump, signal, temp, json } => design_qpm(&ctx, out, pump, signal, temp, json),
        Command::Fom { pump_power, nep_convention, signal, efficiency, noise_cps, json } => {
            let convention = nep_convention.map(Into::into).unwrap_or(ctx.instrument.nep_convention);
            fom(&ctx, out, pump_power, convention, signal, efficiency, noise_cps, json)
        }
        Command::Tuning { json } => tuning(&ctx, out, json),
        Command::Resolution { signal, json } => resolution_cmd(&ctx, out, signal, json),
        Command::Synth { center, modes, spacing, fwhm, power_dbm, line, out: path } => {
            let grid = &ctx.instrument.signal_grid_nm;
            let power = dbm_to_watts(power_dbm);
            let spectrum = if line {
                single_line(grid, center, power)?
            } else {
                let half = (modes as f64 - 1.0) / 2.0;
                let centers: Vec<f64> = (0..modes).map(|k| center + spacing * (k as f64 - half)).collect();
                gaussian_comb(grid, &centers, fwhm, &vec![1.0; modes], power)?
            };
            let prov = ctx.provenance().with("total_power_dbm", power_dbm);
            write_text(&path, &spectrum_to_string(&spectrum, &prov))?;
            writeln!(out, "wrote {} ({} points)", path.display(), spectrum.len())?;
            Ok(())
        }
        Command::Scan { input, out: path, start, stop, step, dwell, pump_power, tracking, kernel_mode, kernel_out } => {
            let mut plan = ctx.instrument.plan;
            plan.seed = ctx.seed;
            if let Some(v) = start {
                plan.pump_start_nm = v;
            }
            if let Some(v) = stop {
                plan.pump_stop_nm = v;
            }
            if let Some(v) = step {
                plan.pump_step_nm = v;
            }
            if let Some(v) = dwell {
                plan.dwell_s = v;
            }
            if let Some(v) = pump_power {
                plan.pump_power_mw = v;
            }
            if let Some(t) = tracking {
                plan.vbg_tracking = match t {
                    TrackingArg::Fixed => VbgTracking::Fixed,
                    TrackingArg::Tracked => VbgTracking::Tracked,
                };
            }
            let mode = kernel_mode.map(mode_of).unwrap_or(ctx.instrument.kernel_mode);
            scan(&ctx, out, &input, &path, plan, mode, kernel_out)
        }
        Command::Deconvolve {
            raw,
            kernel,
            out: path,
            report,
            max_iters,
            algorithm,
            alpha,
            background,
            source,
            no_discrepancy_stop,
            kernel_mode,
        } => {
            let options = DeconvolveOptions {
                algorithm: match algorithm {
                    AlgorithmArg::Rl => Algorithm::RichardsonLucy,
                    AlgorithmArg::Tikhonov => Algorithm::Tikhonov { alpha },
                },
                max_iters,
                stop: if no_discrepancy_stop {
                    StopRule::MaxIterations
                } else {
                    StopRule::Discrepancy { factor: DISCREPANCY_FACTOR }
                },
                background_cps: background,
                source: match source {
                    SourceArg::Counts => RateSource::Counts,
                    SourceArg::Expected => RateSource::Expected,
                },
                ..DeconvolveOptions::default()
            };
            let mode = kernel_mode.map(mode_of).unwrap_or(ctx.instrument.kernel_mode);
            deconvolve_cmd(&ctx, out, &raw, &kernel, &path, report, options, mode)
        }
    }
}

fn mode_of(a: KernelModeArg) -> KernelMode {
    match a {
        KernelModeArg::Full => KernelMode::Full,
        KernelModeArg::VbgOnly => KernelMode::VbgOnly,
    }
}

#[derive(Serialize)]
struct DesignReport {
    pump_nm: f64,
    signal_nm: f64,
    temperature_c: f64,
    period_um: f64,
    sfg_nm: f64,
    acceptance_signal_fwhm_nm: f64,
    acceptance_sfg_fwhm_nm: f64,
    residual_delta_k: f64,
}

fn design_qpm(ctx: &Context, out: &mut dyn Write, pump: f64, signal: f64, temp: Option<f64>, json: bool) -> Result<()> {
    let mut wg = ctx.instrument.waveguide().clone();
    if let Some(t) = temp {
        wg.temperature_c = t;
    }
    let p = OpticalWave::from_nm(pump)?;
    let s = OpticalWave::from_nm(signal)?;
    let period = design_period(p, s, &wg)?;
    wg.qpm_period_um = period;
    let acc = acceptance_bandwidth(&wg, p)?;
    let report = DesignReport {
        pump_nm: pump,
        signal_nm: signal,
        temperature_c: wg.temperature_c,
        period_um: period,
        sfg_nm: sfg_wavelength(s, p)?.nm(),
        acceptance_signal_fwhm_nm: acc.signal_fwhm_nm,
        acceptance_sfg_fwhm_nm: acc.sfg_fwhm_nm,
        residual_delta_k: qpm_mismatch(s, p, &wg)?.delta_k,
    };
    let text = format!(
        "pump {:.3} nm, signal {:.3} nm, {:.1} C\nperiod_um {:.4}\nsfg_nm {:.3}\nacceptance_fwhm_nm signal {:.4} sfg {:.4}\nresidual_delta_k {:.3e} rad/um\n",
        report.pump_nm,
        report.signal_nm,
        report.temperature_c,
        report.period_um,
        report.sfg_nm,
        report.acceptance_signal_fwhm_nm,
        report.acceptance_sfg_fwhm_nm,
        report.residual_delta_k
    );
    emit(out, json, &report, text)
}

#[derive(Serialize)]
struct FomReport {
    pump_power_mw: f64,
    efficiency: f64,
    noise_cps: f64,
    signal_nm: f64,
    nep_w: Option<f64>,
    nep_dbm: Option<f64>,
    nep_convention: NepConvention,
}

#[allow(clippy::too_many_arguments)]
fn fom(
    ctx: &Context,
    out: &mut dyn Write,
    pump_power: f64,
    convention: NepConvention,
    signal: f64,
    efficiency: Option<f64>,
    noise_cps: Option<f64>,
    json: bool,
) -> Result<()> {
    let eta = match efficiency {
        Some(e) => e,
        None => ctx.instrument.conversion().efficiency(pump_power)?,
    };
    let noise = match noise_cps {
        Some(n) => n,
        None => ctx.instrument.noise.rate(pump_power)?,
    };
    let op = OperatingPoint::new(eta, noise, OpticalWave::from_nm(signal)?);
    let n = nep(&op, convention);
    let report = FomReport {
        pump_power_mw: pump_power,
        efficiency: eta,
        noise_cps: noise,
        signal_nm: signal,
        nep_w: n.as_ref().ok().map(|n| n.watts),
        nep_dbm: n.as_ref().ok().map(|n| n.dbm),
        nep_convention: convention,
    };
    let nep_line = match &n {
        Ok(n) => format!("nep {:.4e} W ({:.2} dBm)\n", n.watts, n.dbm),
        Err(e) => format!("nep undefined: {e}\n"),
    };
    let text = format!(
        "pump_power_mw {pump_power}\nefficiency {eta:.6}\nnoise_cps {noise:.6}\n{nep_line}"
    );
    emit(out, json, &report, text)?;
    n.map(|_| ())
}

#[derive(Serialize)]
struct TuningReport {
    pump_start_nm: f64,
    pump_stop_nm: f64,
    signal_at_start_nm: f64,
    signal_at_stop_nm: f64,
    sfg_drift_nm: f64,
    tracking_required: bool,
    usable_span_mean_nm: f64,
    usable_span_centered_nm: f64,
    vbg_fwhm_nm: f64,
}

fn tuning(ctx: &Context, out: &mut dyn Write, json: bool) -> Result<()> {
    let inst = &ctx.instrument;
    let plan = inst.plan;
    let sched = vbg_tracking_schedule(&plan, inst.waveguide(), &inst.setup.vbg)?;
    let span = fixed_vbg_usable_span(inst.waveguide(), &plan, inst.setup.vbg.fwhm_nm())?;
    let n = sched.phase_matched_signal_nm.len();
    let report = TuningReport {
        pump_start_nm: plan.pump_start_nm,
        pump_stop_nm: plan.pump_stop_nm,
        signal_at_start_nm: sched.phase_matched_signal_nm[0],
        signal_at_stop_nm: sched.phase_matched_signal_nm[n - 1],
        sfg_drift_nm: sched.sfg_drift_nm,
        tracking_required: sched.tracking_required,
        usable_span_mean_nm: span.mean_span_nm,
        usable_span_centered_nm: span.centered_span_nm,
        vbg_fwhm_nm: inst.setup.vbg.fwhm_nm(),
    };
    let text = format!(
        "pump {:.2} -> signal {:.3} nm\npump {:.2} -> signal {:.3} nm\nsfg_drift_nm {:.4}\ntracking_required {}\nfixed_vbg_usable_span_nm mean {:.3} centered {:.3}\n",
        report.pump_start_nm,
        report.signal_at_start_nm,
        report.pump_stop_nm,
        report.signal_at_stop_nm,
        report.sfg_drift_nm,
        report.tracking_required,
        report.usable_span_mean_nm,
        report.usable_span_centered_nm
    );
    emit(out, json, &report, text)
}

fn resolution_cmd(ctx: &Context, out: &mut dyn Write, signal: f64, json: bool) -> Result<()> {
    let inst = &ctx.instrument;
    let pump = crate::dispersion::phase_matched_pump(OpticalWave::from_nm(signal)?, inst.waveguide())?.nm();
    let plan = ScanPlan {
        pump_start_nm: pump - 1.0,
        pump_stop_nm: pump + 1.0,
        pump_step_nm: 0.005,
        ..inst.plan
    };
    let grid = crate::spectrometer::signal_grid_for(inst.waveguide(), &plan, 0.01, 1.0)?;
    let kernel = build_kernel(&inst.setup, &plan, &grid, KernelMode::Full)?;
    let report = resolution(&inst.setup, signal, Some(&kernel), plan.vbg_tracking)?;
    let mut text = format!(
        "signal_nm {:.3}\npump_nm {:.3}\nsfg_nm {:.3}\nanalytic_fwhm_nm {:.4}\nnumeric_fwhm_nm {:.4}\n",
        report.signal_nm,
        report.pump_nm,
        report.sfg_nm,
        report.analytic_nm,
        report.numeric_nm.unwrap_or(f64::NAN)
    );
    if let Some(w) = &report.warning {
        text.push_str(&format!("warning: {w}\n"));
    }
    emit(out, json, &report, text)
}

fn scan(
    ctx: &Context,
    out: &mut dyn Write,
    input: &std::path::Path,
    path: &std::path::Path,
    plan: ScanPlan,
    mode: KernelMode,
    kernel_out: Option<PathBuf>,
) -> Result<()> {
    let (spectrum, _) = spectrum_from_str(&read_text(input)?)?;
    let inst = &ctx.instrument;
    let grid = crate::spectrometer::signal_grid_for(
        inst.waveguide(),
        &plan,
        ctx.loaded.config.spectrometer.signal_step_nm,
        ctx.loaded.config.spectrometer.signal_margin_nm,
    )?;
    let kernel = build_kernel(&inst.setup, &plan, &grid, mode)?;
    let result = forward_scan(&spectrum, &kernel, &inst.spectrometer_noise, &plan, &inst.apd)?;
    let prov = scan_provenance(ctx, &plan, mode, result.noise_floor_cps)?;
    write_text(path, &scan_to_string(&result, &prov))?;
    if let Some(k) = kernel_out {
        write_text(&k, &kernel_to_string(&kernel, &prov))?;
    }
    let peak = result.expected_rate.iter().cloned().fold(0.0, f64::max);
    writeln!(
        out,
        "wrote {} ({} points, dwell {} s assumed, peak expected rate {:.3} cps)",
        path.display(),
        result.len(),
        plan.dwell_s,
        peak
    )?;
    Ok(())
}

fn scan_provenance(ctx: &Context, plan: &ScanPlan, mode: KernelMode, floor: f64) -> Result<Provenance> {
    Ok(ctx
        .provenance()
        .with("dwell_s_assumed", plan.dwell_s)
        .with("pump_power_mw", plan.pump_power_mw)
        .with("efficiency", ctx.instrument.setup.conversion.efficiency(plan.pump_power_mw)?)
        .with("noise_floor_cps", floor)
        .with("vbg_tracking", format!("{:?}", plan.vbg_tracking).to_lowercase())
        .with("kernel_mode", format!("{mode:?}").to_lowercase()))
}

#[derive(Serialize)]
struct DeconvolveReport {
    iterations_used: usize,
    residual_norm: f64,
    stop_reason: crate::inverse::StopReason,
    background_cps: f64,
    flux_ratio: f64,
    deviance: Option<f64>,
    peak_nm: f64,
    config_sha256: String,
    seed: u64,
}

#[allow(clippy::too_many_arguments)]
fn deconvolve_cmd(
    ctx: &Context,
    out: &mut dyn Write,
    raw_path: &std::path::Path,
    kernel_arg: &str,
    path: &std::path::Path,
    report_path: Option<PathBuf>,
    options: DeconvolveOptions,
    mode: KernelMode,
) -> Result<()> {
    let (raw, raw_prov) = scan_from_str(&read_text(raw_path)?)?;
    let kernel: ResponseKernel = if kernel_arg == "model" {
        let inst = &ctx.instrument;
        let n = raw.len();
        let pump_power_mw = match raw_prov.get("pump_power_mw") {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Input(format!("cannot parse pump_power_mw `{v}` in the scan header")))?,
            None => inst.plan.pump_power_mw,
        };
        let vbg_tracking = match raw_prov.get("vbg_tracking") {
            Some("fixed") => VbgTracking::Fixed,
            Some("tracked") => VbgTracking::Tracked,
            Some(v) => return Err(Error::Input(format!("unknown vbg_tracking `{v}` in the scan header"))),
            None => inst.plan.vbg_tracking,
        };
        let plan = ScanPlan {
            pump_power_mw,
            vbg_tracking,
            pump_start_nm: raw.pump_nm[0],
            pump_stop_nm: raw.pump_nm[n - 1],
            pump_step_nm: if n > 1 {
                (raw.pump_nm[n - 1] - raw.pump_nm[0]) / (n - 1) as f64
            } else {
                1.0
            },
            dwell_s: raw.dwell_s,
            seed: raw.seed,
            ..inst.plan
        };
        let grid = crate::spectrometer::signal_grid_for(
            inst.waveguide(),
            &plan,
            ctx.loaded.config.spectrometer.signal_step_nm,
            ctx.loaded.config.spectrometer.signal_margin_nm,
        )?;
        build_kernel(&inst.setup, &plan, &grid, mode)?
    } else {
        kernel_from_str(&read_text(std::path::Path::new(kernel_arg))?)?.0
    };
    let result = deconvolve(&raw, &kernel, &options)?;
    let prov = ctx
        .provenance()
        .with("dwell_s_assumed", raw.dwell_s)
        .with("background_cps", result.background_cps)
        .with("iterations", result.iterations_used);
    write_text(path, &spectrum_to_string(&result.estimate, &prov))?;
    let report = DeconvolveReport {
        iterations_used: result.iterations_used,
        residual_norm: result.residual_norm,
        stop_reason: result.stop_reason,
        background_cps: result.background_cps,
        flux_ratio: result.flux_ratio,
        deviance: result.deviance,
        peak_nm: result.estimate.peak_nm(),
        config_sha256: ctx.loaded.sha256.clone(),
        seed: ctx.seed,
    };
    let json = json_report(&report);
    match report_path {
        Some(p) => {
            write_text(&p, &json)?;
            writeln!(
                out,
                "wrote {} ({} iterations, {:?}, peak {:.3} nm)",
                path.display(),
                result.iterations_used,
                result.stop_reason,
                report.peak_nm
            )?;
        }
        None => writeln!(out, "{json}")?,
    }
    Ok(())
}
