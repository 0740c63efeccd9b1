use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use upconv::io::{read_text, scan_from_str, spectrum_from_str};

fn upconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_upconv")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn json(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn synth_and_scan(dir: &TempDir, extra: &[&str]) -> (String, String) {
    let input = path(dir, "input.csv");
    let raw = path(dir, "raw.csv");
    let o = upconv(&["synth", "--out", &input]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut args = vec!["scan", "--input", &input, "--out", &raw, "--start", "1945", "--stop", "1955"];
    args.extend_from_slice(extra);
    let o = upconv(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (input, raw)
}

#[test]
fn design_qpm_reproduces_the_poling_period() {
    let v = json(&upconv(&["design-qpm", "--pump", "1950", "--signal", "1550", "--temp", "56", "--json"]));
    assert!((v["period_um"].as_f64().unwrap() - 19.6).abs() <= 0.05);
    assert!((v["sfg_nm"].as_f64().unwrap() - 863.571).abs() < 1e-3);
    assert!(v["residual_delta_k"].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn fom_reports_calibration_points() {
    for (mw, eta, cps) in [("58", 0.286, 100.0), ("20", 0.15, 25.0)] {
        let v = json(&upconv(&["fom", "--pump-power", mw, "--json"]));
        assert!((v["efficiency"].as_f64().unwrap() - eta).abs() < 1e-6);
        assert!((v["noise_cps"].as_f64().unwrap() - cps).abs() < 1e-6);
    }
    let v = json(&upconv(&["fom", "--pump-power", "30", "--efficiency", "0.2", "--noise-cps", "60", "--json"]));
    assert!((v["nep_dbm"].as_f64().unwrap() + 143.04).abs() < 0.01);
}

#[test]
fn fom_at_zero_power_reports_zero_efficiency_and_fails() {
    let o = upconv(&["fom", "--pump-power", "0"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("efficiency 0.000000"));
}

#[test]
fn tuning_reports_tracking_requirement() {
    let v = json(&upconv(&["tuning", "--json"]));
    assert_eq!(v["tracking_required"], true);
    assert!(v["signal_at_start_nm"].as_f64().unwrap() > v["signal_at_stop_nm"].as_f64().unwrap());
    assert!(v["usable_span_mean_nm"].as_f64().unwrap() > 0.0);
}

#[test]
fn resolution_reports_both_paths() {
    let v = json(&upconv(&["resolution", "--signal", "1550", "--json"]));
    let analytic = v["analytic_nm"].as_f64().unwrap();
    let numeric = v["numeric_nm"].as_f64().unwrap();
    assert!((analytic - 0.161).abs() < 5e-4);
    assert!((numeric - analytic).abs() / analytic < 0.1);
}

#[test]
fn zero_input_scan_is_the_noise_floor() {
    let dir = TempDir::new().unwrap();
    let input = path(&dir, "zero.csv");
    let raw = path(&dir, "raw.csv");
    std::fs::write(&input, "wavelength_nm,power_w_per_nm\n1500,0\n1600,0\n").unwrap();
    let o = upconv(&["scan", "--input", &input, "--out", &raw, "--start", "1949", "--stop", "1951"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (scan, prov) = scan_from_str(&read_text(Path::new(&raw)).unwrap()).unwrap();
    assert!(scan.expected_rate.iter().all(|&r| r == 60.0));
    assert_eq!(prov.get("dwell_s_assumed"), Some("1"));
    assert!(prov.get("config_sha256").is_some_and(|h| h.len() == 64));
}

#[test]
fn seeded_scans_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let (_, raw_a) = synth_and_scan(&a, &["--seed", "99"]);
    let (_, raw_b) = synth_and_scan(&b, &["--seed", "99"]);
    let text_a = std::fs::read(&raw_a).unwrap();
    assert_eq!(text_a, std::fs::read(&raw_b).unwrap());
    assert!(String::from_utf8(text_a).unwrap().contains("# seed: 99"));

    let c = TempDir::new().unwrap();
    let (_, raw_c) = synth_and_scan(&c, &["--seed", "100"]);
    assert_ne!(std::fs::read(&raw_a).unwrap(), std::fs::read(&raw_c).unwrap());
}

#[test]
fn scan_then_deconvolve_recovers_the_modes() {
    let dir = TempDir::new().unwrap();
    let kernel = path(&dir, "kernel.csv");
    let (input, raw) = synth_and_scan(&dir, &["--kernel-out", &kernel]);
    let est = path(&dir, "est.csv");
    let report = path(&dir, "report.json");
    for k in [kernel.as_str(), "model"] {
        let o = upconv(&[
            "deconvolve", "--raw", &raw, "--kernel", k, "--out", &est, "--report", &report,
            "--source", "expected", "--background", "60", "--no-discrepancy-stop", "--max-iters", "1000",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let (truth, _) = spectrum_from_str(&read_text(Path::new(&input)).unwrap()).unwrap();
        let (recovered, prov) = spectrum_from_str(&read_text(Path::new(&est)).unwrap()).unwrap();
        assert_eq!(prov.get("iterations"), Some("1000"));
        let truth = truth.resample(recovered.grid_nm()).unwrap();
        let peak = truth.values().iter().cloned().fold(0.0, f64::max);
        let worst = truth
            .values()
            .iter()
            .zip(recovered.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst / peak < 0.05, "{k}: worst deviation {}", worst / peak);
        let v: serde_json::Value = serde_json::from_str(&read_text(Path::new(&report)).unwrap()).unwrap();
        assert!((v["peak_nm"].as_f64().unwrap() - 1550.0).abs() < 1.1);
    }
}

#[test]
fn counts_deconvolution_stops_at_discrepancy() {
    let dir = TempDir::new().unwrap();
    let (_, raw) = synth_and_scan(&dir, &[]);
    let est = path(&dir, "est.csv");
    let o = upconv(&["deconvolve", "--raw", &raw, "--kernel", "model", "--out", &est]);
    let v = json(&o);
    assert_eq!(v["stop_reason"], "discrepancy_reached");
    assert!(v["iterations_used"].as_u64().unwrap() < 500);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let (_, raw) = synth_and_scan(&dir, &[]);
    let est = path(&dir, "est.csv");
    let missing = path(&dir, "missing.csv");
    let o = upconv(&["deconvolve", "--raw", &raw, "--kernel", &missing, "--out", &est]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.csv"));

    assert_eq!(upconv(&["deconvolve", "--raw", &raw, "--out", &est]).status.code(), Some(2));
    assert_eq!(upconv(&["frobnicate"]).status.code(), Some(2));

    let bad = path(&dir, "bad.toml");
    let text = upconv(&["defaults"]).stdout;
    let text = String::from_utf8(text).unwrap().replace("length_mm = 52.0", "length_mm = -1.0");
    std::fs::write(&bad, text).unwrap();
    let o = upconv(&["--config", &bad, "tuning"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("waveguide.length_mm"));
}

#[test]
fn bundled_defaults_round_trip_through_a_file() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "defaults.toml");
    std::fs::write(&cfg, upconv(&["defaults"]).stdout).unwrap();
    let a = json(&upconv(&["--config", &cfg, "tuning", "--json"]));
    let b = json(&upconv(&["tuning", "--json"]));
    assert_eq!(a, b);
}
