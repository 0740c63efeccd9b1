//! Sampled optical spectra.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumUnit {
    /// Spectral power density, W/nm.
    PowerWPerNm,
    /// Count rate, counts/s.
    RateCps,
    Relative,
}

impl SpectrumUnit {
    /// Column header used in CSV files.
    pub fn header(&self) -> &'static str {
        match self {
            SpectrumUnit::PowerWPerNm => "power_w_per_nm",
            SpectrumUnit::RateCps => "rate_cps",
            SpectrumUnit::Relative => "relative",
        }
    }

    pub fn from_header(name: &str) -> Option<Self> {
        match name.trim() {
            "power_w_per_nm" => Some(SpectrumUnit::PowerWPerNm),
            "rate_cps" => Some(SpectrumUnit::RateCps),
            "relative" => Some(SpectrumUnit::Relative),
            _ => None,
        }
    }
}

/// Values on a strictly ascending wavelength grid (nm).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Spectrum {
    grid_nm: Vec<f64>,
    values: Vec<f64>,
    unit: SpectrumUnit,
}

impl Spectrum {
    pub fn new(grid_nm: Vec<f64>, values: Vec<f64>, unit: SpectrumUnit) -> Result<Self> {
        if grid_nm.len() < 2 {
            return Err(Error::Input("a spectrum needs at least two grid points".into()));
        }
        if grid_nm.len() != values.len() {
            return Err(Error::Input(format!(
                "grid has {} points but {} values",
                grid_nm.len(),
                values.len()
            )));
        }
        if grid_nm.iter().any(|g| !g.is_finite()) || grid_nm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("wavelength grid must be strictly ascending".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!(
                "spectrum values must be finite and >= 0, found {v}"
            )));
        }
        Ok(Self {
            grid_nm,
            values,
            unit,
        })
    }

    pub fn zeros(grid_nm: Vec<f64>, unit: SpectrumUnit) -> Result<Self> {
        let n = grid_nm.len();
        Self::new(grid_nm, vec![0.0; n], unit)
    }

    pub fn grid_nm(&self) -> &[f64] {
        &self.grid_nm
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unit(&self) -> SpectrumUnit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.grid_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid_nm.is_empty()
    }

    /// Integration weights: half the distance between neighbouring samples,
    /// with half-width bins at both ends.
    pub fn bin_widths(&self) -> Vec<f64> {
        bin_widths(&self.grid_nm)
    }

    /// ∫ values dλ with the `bin_widths` weights.
    pub fn integrate(&self) -> f64 {
        self.values
            .iter()
            .zip(self.bin_widths())
            .map(|(v, w)| v * w)
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.grid_nm.clone(),
            self.values.iter().map(|v| v * factor).collect(),
            self.unit,
        )
    }

    /// Linear interpolation onto `grid_nm`, zero outside the sampled range.
    pub fn resample(&self, grid_nm: &[f64]) -> Result<Self> {
        let values = grid_nm
            .iter()
            .map(|&x| {
                let g = &self.grid_nm;
                if x < g[0] || x > g[g.len() - 1] {
                    return 0.0;
                }
                let k = g.partition_point(|&v| v <= x).clamp(1, g.len() - 1);
                let (x0, x1) = (g[k - 1], g[k]);
                let t = (x - x0) / (x1 - x0);
                self.values[k - 1] * (1.0 - t) + self.values[k] * t
            })
            .collect();
        Self::new(grid_nm.to_vec(), values, self.unit)
    }

    /// Grid position of the largest value.
    pub fn peak_nm(&self) -> f64 {
        let (i, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        self.grid_nm[i]
    }
}

pub(crate) fn bin_widths(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    (0..n)
        .map(|j| {
            let left = if j > 0 { grid[j] - grid[j - 1] } else { 0.0 };
            let right = if j + 1 < n { grid[j + 1] - grid[j] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Uniform grid from `start` to `stop` inclusive (when commensurate).
pub fn uniform_grid(start_nm: f64, stop_nm: f64, step_nm: f64) -> Vec<f64> {
    let n = ((stop_nm - start_nm) / step_nm + 1e-9).floor() as usize + 1;
    (0..n).map(|i| start_nm + step_nm * i as f64).collect()
}

/// Sum of gaussian lines (W/nm) with a common FWHM, normalised so the
/// integrated power equals `total_power_w` on this grid.
pub fn gaussian_comb(
    grid_nm: &[f64],
    centers_nm: &[f64],
    fwhm_nm: f64,
    weights: &[f64],
    total_power_w: f64,
) -> Result<Spectrum> {
    if centers_nm.len() != weights.len() {
        return Err(Error::Input("one weight per mode is required".into()));
    }
    let k = 4.0 * std::f64::consts::LN_2 / (fwhm_nm * fwhm_nm);
    let shape: Vec<f64> = grid_nm
        .iter()
        .map(|&x| {
            centers_nm
                .iter()
                .zip(weights)
                .map(|(c, w)| w * (-k * (x - c) * (x - c)).exp())
                .sum()
        })
        .collect();
    let s = Spectrum::new(grid_nm.to_vec(), shape, SpectrumUnit::PowerWPerNm)?;
    let total = s.integrate();
    if !(total > 0.0) {
        return Err(Error::Input("modes fall outside the grid".into()));
    }
    s.scaled(total_power_w / total)
}

/// All of `power_w` in the grid bin nearest `center_nm`.
pub fn single_line(grid_nm: &[f64], center_nm: f64, power_w: f64) -> Result<Spectrum> {
    let widths = bin_widths(grid_nm);
    let j = grid_nm
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - center_nm).abs().total_cmp(&(b.1 - center_nm).abs()))
        .map(|(j, _)| j)
        .ok_or_else(|| Error::Input("empty grid".into()))?;
    let mut values = vec![0.0; grid_nm.len()];
    values[j] = power_w / widths[j];
    Spectrum::new(grid_nm.to_vec(), values, SpectrumUnit::PowerWPerNm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids_and_values() {
        assert!(Spectrum::new(vec![1.0, 1.0], vec![0.0, 0.0], SpectrumUnit::Relative).is_err());
        assert!(Spectrum::new(vec![2.0, 1.0], vec![0.0, 0.0], SpectrumUnit::Relative).is_err());
        assert!(matches!(
            Spectrum::new(vec![1.0, 2.0], vec![0.0, -1.0], SpectrumUnit::Relative),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn comb_and_line_integrate_to_power() {
        let grid = uniform_grid(1545.0, 1555.0, 0.02);
        let centers: Vec<f64> = (-2..=2).map(|k| 1550.0 + 0.5 * k as f64).collect();
        let s = gaussian_comb(&grid, &centers, 0.3, &[1.0; 5], 1.26e-13).unwrap();
        assert!((s.integrate() - 1.26e-13).abs() < 1e-25);
        let l = single_line(&grid, 1550.003, 3.16e-17).unwrap();
        assert!((l.integrate() - 3.16e-17).abs() < 1e-29);
        assert!((l.peak_nm() - 1550.0).abs() < 1e-9);
    }

    #[test]
    fn resample_is_linear_and_zero_outside() {
        let s = Spectrum::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 4.0], SpectrumUnit::Relative).unwrap();
        let r = s.resample(&[-1.0, 0.5, 1.5, 2.0, 3.0]).unwrap();
        assert_eq!(r.values(), &[0.0, 1.0, 3.0, 4.0, 0.0]);
    }

    #[test]
    fn uniform_grid_is_inclusive() {
        let g = uniform_grid(1920.0, 1980.0, 0.05);
        assert_eq!(g.len(), 1201);
        assert!((g[1200] - 1980.0).abs() < 1e-9);
    }
}
