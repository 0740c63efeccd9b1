//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};

use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, FileFailurePersistence, TestRunner};
use rand::Rng;

use common::*;
use upconv::components::{chain_transmission, FilterElement, FilterKind, Lineshape, Transmission, VbgState};
use upconv::counting::{detectability, photon_rate, poisson, rng_for, DetectionOptions};
use upconv::dispersion::{phase_matched_signal, sfg_wavelength, sinc_squared};
use upconv::fom::{nep, operating_point, NepConvention, OperatingPoint};
use upconv::inverse::{deconvolve, DeconvolveOptions, RateSource, StopRule};
use upconv::io::{scan_to_string, Provenance};
use upconv::spectrometer::{
    analytic_resolution, build_kernel, fixed_vbg_usable_span, forward_scan, kernel_column_fwhm,
    pump_for_signal, signal_rates, tuning_map, vbg_tracking_schedule, KernelMode, ScanPlan, VbgTracking,
};
use upconv::spectrum::{single_line, uniform_grid, Spectrum, SpectrumUnit};
use upconv::units::{dbm_to_watts, OpticalWave};

type Outcome = Result<String, String>;

fn nm(x: f64) -> OpticalWave {
    OpticalWave::from_nm(x).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac1_calibration_points() -> Outcome {
    let inst = instrument();
    let mut lines = Vec::new();
    let mut ok = true;
    for (mw, eta, cps) in [(58.0, 0.286, 100.0), (20.0, 0.15, 25.0)] {
        let op = operating_point(inst.conversion(), &inst.noise, mw, nm(1550.0)).map_err(|e| e.to_string())?;
        ok &= (op.eta - eta).abs() <= 1e-6 && (op.noise_cps - cps).abs() <= 1e-6;
        lines.push(format!("{mw} mW -> eta {:.9}, noise {:.9} cps", op.eta, op.noise_cps));
    }
    check(ok, lines.join("; "))
}

fn ac2_nep() -> Outcome {
    let op = OperatingPoint::new(0.20, 60.0, nm(1550.0));
    let a = nep(&op, NepConvention::PhotonSqrtD).map_err(|e| e.to_string())?;
    let b = nep(&op, NepConvention::ShotSqrt2D).map_err(|e| e.to_string())?;
    let ratio = b.watts / a.watts;
    check(
        (a.dbm + 142.0).abs() <= 1.5 && (ratio - 2f64.sqrt()).abs() <= 1e-15,
        format!("{:.3} dBm, sqrt-2 convention ratio {ratio:.17}", a.dbm),
    )
}

fn ac3_resolution() -> Outcome {
    let inst = instrument();
    let analytic = analytic_resolution(0.05, 863.571, 1550.0);
    let pump = pump_for_signal(inst.waveguide(), 1550.0, 1920.0, 1980.0).map_err(|e| e.to_string())?;
    let plan = ScanPlan {
        pump_start_nm: pump - 1.0,
        pump_stop_nm: pump + 1.0,
        pump_step_nm: 0.005,
        ..inst.plan
    };
    let grid = uniform_grid(1548.0, 1552.0, 0.01);
    let kernel = build_kernel(&inst.setup, &plan, &grid, KernelMode::Full).map_err(|e| e.to_string())?;
    let numeric = kernel_column_fwhm(&kernel, 1550.0).map_err(|e| e.to_string())?;
    let agree = (numeric - analytic).abs() / analytic;
    check(
        (analytic - 0.161).abs() < 5e-4 && agree <= 0.10 && (analytic - 0.16).abs() <= 0.01,
        format!("analytic {analytic:.5} nm, kernel FWHM {numeric:.5} nm ({:.2}% apart)", 100.0 * agree),
    )
}

fn ac4_tuning_map() -> Outcome {
    let three = three_anchor_instrument();
    let pumps = uniform_grid(1920.0, 1980.0, 0.05);
    let map = tuning_map(three.waveguide(), &pumps).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (p, s) in [(1920.0, 1570.9), (1950.0, 1550.0), (1980.0, 1532.9)] {
        let got = phase_matched_signal(nm(p), three.waveguide()).map_err(|e| e.to_string())?.nm();
        worst = worst.max((got - s).abs());
    }
    let monotone = map.windows(2).all(|w| w[1] < w[0]);

    let single = instrument();
    let ends: Vec<f64> = [1920.0, 1980.0]
        .iter()
        .map(|&p| phase_matched_signal(nm(p), single.waveguide()).map(|w| w.nm()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let end_err = (ends[0] - 1570.9).abs().max((ends[1] - 1532.9).abs());
    check(
        worst <= 0.1 && monotone && end_err <= 2.0,
        format!(
            "three-anchor worst anchor error {worst:.2e} nm, monotone {monotone}; single-anchor ends {:.3}/{:.3} nm",
            ends[0], ends[1]
        ),
    )
}

fn ac5_photon_budget() -> Outcome {
    let rate = photon_rate(dbm_to_watts(-98.9), nm(1550.0)).map_err(|e| e.to_string())?;
    check(
        (rate / 1.005e6 - 1.0).abs() <= 0.005,
        format!("{rate:.5e} photons/s"),
    )
}

fn ac6_vbg_tracking() -> Outcome {
    let inst = three_anchor_instrument();
    let span = fixed_vbg_usable_span(inst.waveguide(), &inst.plan, inst.setup.vbg.fwhm_nm()).map_err(|e| e.to_string())?;
    let fixed = ScanPlan {
        vbg_tracking: VbgTracking::Fixed,
        ..inst.plan
    };
    let tracked_vbg = VbgState::narrowband(863.571).map_err(|e| e.to_string())?;
    let schedule = vbg_tracking_schedule(&fixed, inst.waveguide(), &tracked_vbg).map_err(|e| e.to_string())?;
    let ratio = span.mean_span_nm / 3.09;
    check(
        (0.5..=2.0).contains(&ratio) && schedule.tracking_required,
        format!(
            "usable span {:.3} nm (SFG drift {:.3} nm over {:.3} nm of signal), tracking_required {}",
            span.mean_span_nm, schedule.sfg_drift_nm, span.signal_span_nm, schedule.tracking_required
        ),
    )
}

fn ac7_round_trip() -> Outcome {
    let inst = instrument();
    let kernel = build_kernel(&inst.setup, &inst.plan, &inst.signal_grid_nm, inst.kernel_mode).map_err(|e| e.to_string())?;
    let truth = multimode_ld(&inst.signal_grid_nm, 1550.0, -98.9);
    let scan = forward_scan(&truth, &kernel, &inst.spectrometer_noise, &inst.plan, &inst.apd).map_err(|e| e.to_string())?;
    let options = DeconvolveOptions {
        background_cps: Some(scan.noise_floor_cps),
        source: RateSource::Expected,
        stop: StopRule::MaxIterations,
        max_iters: 2000,
        ..DeconvolveOptions::default()
    };
    let result = deconvolve(&scan, &kernel, &options).map_err(|e| e.to_string())?;
    let l2 = relative_l2(result.estimate.values(), truth.values());

    let res = analytic_resolution(inst.setup.vbg.fwhm_nm(), 863.571, 1550.0);
    let grid = &inst.signal_grid_nm;
    let mut worst: f64 = 1.0;
    for center in [1540.0, 1550.0, 1560.0] {
        let delta = single_line(grid, center, dbm_to_watts(-98.9)).map_err(|e| e.to_string())?;
        let line = delta.grid_nm()[delta.values().iter().position(|&v| v > 0.0).unwrap()];
        let scan = forward_scan(&delta, &kernel, &inst.spectrometer_noise, &inst.plan, &inst.apd).map_err(|e| e.to_string())?;
        let est = deconvolve(&scan, &kernel, &options).map_err(|e| e.to_string())?.estimate;
        let widths = est.bin_widths();
        let power: Vec<f64> = est.values().iter().zip(&widths).map(|(v, w)| v * w).collect();
        let total: f64 = power.iter().sum();
        let near: f64 = grid
            .iter()
            .zip(&power)
            .filter(|(g, _)| (**g - line).abs() <= res + 1e-9)
            .map(|(_, p)| p)
            .sum();
        worst = worst.min(near / total);
    }
    check(
        l2 < 0.01 && worst >= 0.90,
        format!(
            "5-mode L2 error {:.3}% after {} iterations; worst delta concentration {:.2}%",
            100.0 * l2,
            result.iterations_used,
            100.0 * worst
        ),
    )
}

fn ac8_minimum_detectable_power() -> Outcome {
    let inst = instrument();
    let kernel = build_kernel(&inst.setup, &inst.plan, &inst.signal_grid_nm, inst.kernel_mode).map_err(|e| e.to_string())?;
    let input = single_line(&inst.signal_grid_nm, 1550.0, dbm_to_watts(-135.0)).map_err(|e| e.to_string())?;
    let scan = forward_scan(&input, &kernel, &inst.spectrometer_noise, &inst.plan, &inst.apd).map_err(|e| e.to_string())?;
    let res = analytic_resolution(inst.setup.vbg.fwhm_nm(), 863.571, 1550.0);
    let report = detectability(&scan, nm(1550.0), &DetectionOptions::new(res)).map_err(|e| e.to_string())?;
    check(
        report.detected && report.significance >= 5.0,
        format!(
            "seed {}: peak at {:.3} nm, {:.1} sigma over {:.1} cps background",
            scan.seed, report.peak_found_nm, report.significance, report.background_cps
        ),
    )
}

fn ac9_statistics() -> Outcome {
    let n = 100_000;
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, mu) in [3.5, 100.0, 2.5e4].into_iter().enumerate() {
        let mut rng = rng_for(&[20240601, k as u64]);
        let draws: Vec<f64> = (0..n).map(|_| poisson(mu, &mut rng) as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let fano = var / mean;
        // sd of the sample mean is sqrt(mu/n); of the Fano factor about sqrt(2/n)
        let mean_ok = (mean - mu).abs() <= 3.0 * (mu / n as f64).sqrt();
        let fano_ok = (fano - 1.0).abs() <= 3.0 * (2.0 / n as f64 + 1.0 / (mu * n as f64)).sqrt();
        ok &= mean_ok && fano_ok;
        lines.push(format!("mu {mu}: mean {mean:.4}, Fano {fano:.4}"));
    }

    let inst = instrument();
    let (plan, kernel) = window_kernel(&inst, 1945.0, 1955.0);
    let input = multimode_ld(kernel.signal_grid_nm(), 1550.0, -110.0);
    let render = |threads: usize| -> Result<String, String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        pool.install(|| {
            forward_scan(&input, &kernel, &inst.spectrometer_noise, &plan, &inst.apd)
                .map(|s| scan_to_string(&s, &Provenance::new("x", plan.seed)))
                .map_err(|e| e.to_string())
        })
    };
    let one = render(1)?;
    let identical = [2, 4, 8].iter().map(|&t| render(t)).collect::<Result<Vec<_>, _>>()?.iter().all(|s| *s == one);
    ok &= identical;
    lines.push(format!("scan CSV identical across 1/2/4/8 threads: {identical}"));
    check(ok, lines.join("; "))
}

fn arb_filter() -> impl Strategy<Value = FilterElement> {
    (
        prop_oneof![
            Just(FilterKind::ShortPass),
            Just(FilterKind::LongPass),
            Just(FilterKind::BandPass),
            Just(FilterKind::ReflectiveGrating),
            Just(FilterKind::BroadbandLoss),
        ],
        200.0f64..3000.0,
        1e-3f64..100.0,
        0.0f64..=1.0,
        prop_oneof![Just(Lineshape::Gaussian), Just(Lineshape::TopHat)],
        1e-3f64..50.0,
    )
        .prop_map(|(kind, center_nm, fwhm_nm, peak, lineshape, edge_width_nm)| FilterElement {
            name: "fuzz".into(),
            kind,
            center_nm,
            fwhm_nm,
            peak,
            lineshape,
            edge_width_nm,
        })
}

fn ac10_physics_invariants() -> Outcome {
    let mut rng = rng_for(&[10]);
    let mut energy_err: f64 = 0.0;
    for _ in 0..10_000 {
        let s = nm(1000.0 + 1500.0 * rng.random::<f64>());
        let p = nm(1000.0 + 1500.0 * rng.random::<f64>());
        let t = sfg_wavelength(s, p).map_err(|e| e.to_string())?;
        let sum = s.photon_energy_j() + p.photon_energy_j();
        energy_err = energy_err.max((t.photon_energy_j() - sum).abs() / sum);
    }

    let null_max = (1..=20)
        .map(|k| sinc_squared(k as f64 * std::f64::consts::PI))
        .fold(0.0, f64::max);
    let nulls_ok = null_max < 1e-30 && sinc_squared(0.0) == 1.0;

    let inst = instrument();
    let (_, kernel) = window_kernel(&inst, 1940.0, 1960.0);
    let grid = kernel.signal_grid_nm().to_vec();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let v: Vec<f64> = grid.iter().map(|_| 1e-13 * rng.random::<f64>()).collect();
        Spectrum::new(grid.clone(), v, SpectrumUnit::PowerWPerNm).unwrap()
    };
    let mut linearity: f64 = 0.0;
    for _ in 0..5 {
        let (u, v) = (draw(&mut rng), draw(&mut rng));
        let (a, b) = (rng.random::<f64>() * 3.0, rng.random::<f64>() * 3.0);
        let mix: Vec<f64> = u.values().iter().zip(v.values()).map(|(x, y)| a * x + b * y).collect();
        let mix = Spectrum::new(grid.clone(), mix, SpectrumUnit::PowerWPerNm).unwrap();
        let ru = signal_rates(&u, &kernel).map_err(|e| e.to_string())?;
        let rv = signal_rates(&v, &kernel).map_err(|e| e.to_string())?;
        let rm = signal_rates(&mix, &kernel).map_err(|e| e.to_string())?;
        let scale = rm.iter().cloned().fold(0.0, f64::max);
        for i in 0..rm.len() {
            linearity = linearity.max((rm[i] - (a * ru[i] + b * rv[i])).abs() / scale);
        }
    }

    let mut runner = TestRunner::new(RunnerConfig {
        cases: 2000,
        failure_persistence: Some(Box::new(FileFailurePersistence::Off)),
        ..RunnerConfig::default()
    });
    let fuzz = runner.run(
        &(proptest::collection::vec(arb_filter(), 1..5), 100.0f64..5000.0, 850.0f64..880.0),
        |(chain, w, setpoint)| {
            for f in &chain {
                let t = f.transmission(w);
                prop_assert!((0.0..=1.0).contains(&t), "{:?} at {} nm gives {}", f, w, t);
            }
            let t = chain_transmission(&chain, w);
            prop_assert!((0.0..=1.0).contains(&t));
            let vbg = VbgState::narrowband(865.0).unwrap();
            let r = vbg.reflection_at(setpoint, w);
            prop_assert!((0.0..=1.0).contains(&r));
            Ok(())
        },
    );

    check(
        energy_err <= 1e-12 && nulls_ok && linearity <= 1e-10 && fuzz.is_ok(),
        format!(
            "energy {energy_err:.1e}, largest sinc2 null {null_max:.1e}, superposition {linearity:.1e}, filter fuzz {}",
            match &fuzz {
                Ok(()) => "ok".to_string(),
                Err(e) => e.to_string(),
            }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("AC1 calibration points", ac1_calibration_points),
        ("AC2 noise-equivalent power", ac2_nep),
        ("AC3 resolution", ac3_resolution),
        ("AC4 tuning map", ac4_tuning_map),
        ("AC5 photon budget", ac5_photon_budget),
        ("AC6 grating tracking", ac6_vbg_tracking),
        ("AC7 deconvolution round trip", ac7_round_trip),
        ("AC8 minimum detectable power", ac8_minimum_detectable_power),
        ("AC9 statistical soundness", ac9_statistics),
        ("AC10 physics invariants", ac10_physics_invariants),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
