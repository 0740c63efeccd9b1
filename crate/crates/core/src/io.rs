//! CSV files for spectra, scans and kernels.
//!
//! Every file starts with `# key: value` comment lines (config digest, seed,
//! dwell assumption) followed by a mandatory header row. Floats are written
//! in shortest round-trip form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::spectrometer::{ResponseKernel, ScanResult};
use crate::spectrum::{Spectrum, SpectrumUnit};

pub const SCAN_HEADER: [&str; 5] = ["pump_nm", "signal_nm_mapped", "expected_rate", "counts", "dwell_s"];
const KERNEL_CORNER: &str = "pump_nm\\signal_nm";

/// Ordered `# key: value` metadata lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub entries: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(config_sha256: &str, seed: u64) -> Self {
        Self {
            entries: vec![
                ("config_sha256".into(), config_sha256.into()),
                ("seed".into(), seed.to_string()),
            ],
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out
    }

    fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .filter_map(|l| {
                let (k, v) = l.trim_start_matches('#').split_once(':')?;
                Some((k.trim().to_string(), v.trim().to_string()))
            })
            .collect();
        Self { entries }
    }
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Input(format!("cannot parse {what} `{field}`")))
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

pub fn spectrum_to_string(spectrum: &Spectrum, provenance: &Provenance) -> String {
    let mut out = provenance.render();
    let _ = writeln!(out, "wavelength_nm,{}", spectrum.unit().header());
    for (g, v) in spectrum.grid_nm().iter().zip(spectrum.values()) {
        let _ = writeln!(out, "{g},{v}");
    }
    out
}

pub fn spectrum_from_str(text: &str) -> Result<(Spectrum, Provenance)> {
    let mut rdr = reader(text);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "wavelength_nm" {
        return Err(Error::Input(format!(
            "spectrum header must be `wavelength_nm,<unit>`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let unit = SpectrumUnit::from_header(&headers[1])
        .ok_or_else(|| Error::Input(format!("unknown spectrum unit `{}`", &headers[1])))?;
    let mut grid = Vec::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record?;
        grid.push(parse_f64(&record[0], "wavelength")?);
        values.push(parse_f64(&record[1], "value")?);
    }
    Ok((Spectrum::new(grid, values, unit)?, Provenance::parse(text)))
}

pub fn scan_to_string(scan: &ScanResult, provenance: &Provenance) -> String {
    let mut out = provenance.render();
    out.push_str(&SCAN_HEADER.join(","));
    out.push('\n');
    for i in 0..scan.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            scan.pump_nm[i], scan.signal_nm_mapped[i], scan.expected_rate[i], scan.counts[i], scan.dwell_s
        );
    }
    out
}

/// Reads a scan. Seed and noise floor come from the comment header when
/// present; the per-point VBG setpoints are not stored and come back empty.
pub fn scan_from_str(text: &str) -> Result<(ScanResult, Provenance)> {
    let mut rdr = reader(text);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != SCAN_HEADER {
        return Err(Error::Input(format!("scan header must be `{}`", SCAN_HEADER.join(","))));
    }
    let mut scan = ScanResult {
        pump_nm: Vec::new(),
        signal_nm_mapped: Vec::new(),
        expected_rate: Vec::new(),
        counts: Vec::new(),
        dwell_s: 0.0,
        vbg_centers_nm: Vec::new(),
        noise_floor_cps: 0.0,
        seed: 0,
    };
    for record in rdr.records() {
        let record = record?;
        scan.pump_nm.push(parse_f64(&record[0], "pump_nm")?);
        scan.signal_nm_mapped.push(parse_f64(&record[1], "signal_nm_mapped")?);
        scan.expected_rate.push(parse_f64(&record[2], "expected_rate")?);
        scan.counts.push(
            record[3]
                .parse::<u64>()
                .map_err(|_| Error::Input(format!("counts must be nonnegative integers, got `{}`", &record[3])))?,
        );
        let dwell = parse_f64(&record[4], "dwell_s")?;
        if scan.pump_nm.len() > 1 && dwell != scan.dwell_s {
            return Err(Error::Input("dwell_s must be the same on every row".into()));
        }
        scan.dwell_s = dwell;
    }
    if scan.is_empty() {
        return Err(Error::Input("scan file has no rows".into()));
    }
    if !(scan.dwell_s > 0.0) {
        return Err(Error::Input("dwell_s must be > 0".into()));
    }
    let provenance = Provenance::parse(text);
    if let Some(s) = provenance.get("seed") {
        scan.seed = s.parse().unwrap_or(0);
    }
    if let Some(f) = provenance.get("noise_floor_cps") {
        scan.noise_floor_cps = parse_f64(f, "noise_floor_cps")?;
    }
    Ok((scan, provenance))
}

pub fn kernel_to_string(kernel: &ResponseKernel, provenance: &Provenance) -> String {
    let mut out = provenance.render();
    out.push_str(KERNEL_CORNER);
    for s in kernel.signal_grid_nm() {
        let _ = write!(out, ",{s}");
    }
    out.push('\n');
    for (i, p) in kernel.pump_grid_nm().iter().enumerate() {
        let _ = write!(out, "{p}");
        for v in kernel.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Kernel with the signal grid in the first row and the pump grid in the
/// first column.
pub fn kernel_from_str(text: &str) -> Result<(ResponseKernel, Provenance)> {
    let mut rdr = reader(text);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 {
        return Err(Error::Input("kernel header must hold the signal grid".into()));
    }
    let signal = headers
        .iter()
        .skip(1)
        .map(|f| parse_f64(f, "signal grid value"))
        .collect::<Result<Vec<_>>>()?;
    let mut pumps = Vec::new();
    let mut values = Vec::with_capacity(signal.len() * 1024);
    for record in rdr.records() {
        let record = record?;
        if record.len() != signal.len() + 1 {
            return Err(Error::Input(format!(
                "kernel row {} has {} values, expected {}",
                pumps.len() + 1,
                record.len().saturating_sub(1),
                signal.len()
            )));
        }
        pumps.push(parse_f64(&record[0], "pump grid value")?);
        for f in record.iter().skip(1) {
            values.push(parse_f64(f, "kernel entry")?);
        }
    }
    Ok((ResponseKernel::from_parts(pumps, signal, values)?, Provenance::parse(text)))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// JSON with sorted keys, for reports written beside the CSV output.
pub fn json_report(value: &impl serde::Serialize) -> String {
    let v = serde_json::to_value(value).expect("report serializes");
    let sorted: BTreeMap<String, serde_json::Value> = match v {
        serde_json::Value::Object(m) => m.into_iter().collect(),
        other => return serde_json::to_string_pretty(&other).expect("json"),
    };
    serde_json::to_string_pretty(&sorted).expect("json")
}
