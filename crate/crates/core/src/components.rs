//! Parametric transmission models for the optical chain behind the waveguide:
//! dichroic mirror, edge and band-pass filters, the angle-tuned volume Bragg
//! grating and the silicon APD.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FOUR_LN2: f64 = 4.0 * std::f64::consts::LN_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    ShortPass,
    LongPass,
    BandPass,
    ReflectiveGrating,
    BroadbandLoss,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lineshape {
    #[default]
    Gaussian,
    TopHat,
}

/// One element of the filter stack.
///
/// `center_nm` is the edge wavelength for the edge kinds. Edge filters roll
/// off with an error-function profile of width `edge_width_nm`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterElement {
    #[serde(default)]
    pub name: String,
    pub kind: FilterKind,
    #[serde(default)]
    pub center_nm: f64,
    #[serde(default)]
    pub fwhm_nm: f64,
    pub peak: f64,
    #[serde(default)]
    pub lineshape: Lineshape,
    #[serde(default = "default_edge_width")]
    pub edge_width_nm: f64,
}

fn default_edge_width() -> f64 {
    1.0
}

impl FilterElement {
    pub fn short_pass(edge_nm: f64, peak: f64) -> Self {
        Self {
            name: format!("spf{edge_nm}"),
            kind: FilterKind::ShortPass,
            center_nm: edge_nm,
            fwhm_nm: 0.0,
            peak,
            lineshape: Lineshape::Gaussian,
            edge_width_nm: default_edge_width(),
        }
    }

    pub fn band_pass(center_nm: f64, fwhm_nm: f64, peak: f64) -> Self {
        Self {
            name: format!("bpf{center_nm}"),
            kind: FilterKind::BandPass,
            center_nm,
            fwhm_nm,
            peak,
            lineshape: Lineshape::Gaussian,
            edge_width_nm: default_edge_width(),
        }
    }

    pub fn reflective_grating(center_nm: f64, fwhm_nm: f64, peak: f64) -> Self {
        Self {
            name: "vbg".into(),
            kind: FilterKind::ReflectiveGrating,
            center_nm,
            fwhm_nm,
            peak,
            lineshape: Lineshape::Gaussian,
            edge_width_nm: default_edge_width(),
        }
    }

    pub fn broadband_loss(transmission: f64) -> Self {
        Self {
            name: "loss".into(),
            kind: FilterKind::BroadbandLoss,
            center_nm: 0.0,
            fwhm_nm: 0.0,
            peak: transmission,
            lineshape: Lineshape::Gaussian,
            edge_width_nm: default_edge_width(),
        }
    }

    pub fn with_lineshape(mut self, lineshape: Lineshape) -> Self {
        self.lineshape = lineshape;
        self
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.peak) {
            return Err(Error::config(format!("{path}.peak"), "must lie in [0, 1]"));
        }
        match self.kind {
            FilterKind::BandPass | FilterKind::ReflectiveGrating => {
                if !(self.fwhm_nm > 0.0) {
                    return Err(Error::config(format!("{path}.fwhm_nm"), "must be > 0"));
                }
                if !(self.center_nm > 0.0) {
                    return Err(Error::config(format!("{path}.center_nm"), "must be > 0"));
                }
            }
            FilterKind::ShortPass | FilterKind::LongPass => {
                if !(self.edge_width_nm > 0.0) {
                    return Err(Error::config(
                        format!("{path}.edge_width_nm"),
                        "must be > 0",
                    ));
                }
            }
            FilterKind::BroadbandLoss => {}
        }
        Ok(())
    }

    /// Band lineshape normalised to 1 at `center`.
    #[inline]
    fn band_shape(&self, center: f64, wavelength_nm: f64) -> f64 {
        let d = wavelength_nm - center;
        match self.lineshape {
            Lineshape::Gaussian => (-FOUR_LN2 * d * d / (self.fwhm_nm * self.fwhm_nm)).exp(),
            Lineshape::TopHat => {
                if d.abs() <= 0.5 * self.fwhm_nm {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    fn transmission_centered(&self, center: f64, wavelength_nm: f64) -> f64 {
        let t = match self.kind {
            FilterKind::ShortPass => {
                0.5 * self.peak * libm::erfc((wavelength_nm - center) / self.edge_width_nm)
            }
            FilterKind::LongPass => {
                0.5 * self.peak * libm::erfc((center - wavelength_nm) / self.edge_width_nm)
            }
            FilterKind::BandPass | FilterKind::ReflectiveGrating => {
                self.peak * self.band_shape(center, wavelength_nm)
            }
            FilterKind::BroadbandLoss => self.peak,
        };
        t.clamp(0.0, 1.0)
    }
}

pub trait Transmission {
    /// Power transmission (or reflection, for gratings) in [0, 1].
    fn transmission(&self, wavelength_nm: f64) -> f64;
}

impl Transmission for FilterElement {
    fn transmission(&self, wavelength_nm: f64) -> f64 {
        self.transmission_centered(self.center_nm, wavelength_nm)
    }
}

/// Product of element transmissions; an empty chain transmits everything.
pub fn chain_transmission(chain: &[FilterElement], wavelength_nm: f64) -> f64 {
    chain.iter().map(|f| f.transmission(wavelength_nm)).product()
}

impl Transmission for [FilterElement] {
    fn transmission(&self, wavelength_nm: f64) -> f64 {
        chain_transmission(self, wavelength_nm)
    }
}

/// A volume Bragg grating whose reflection resonance is set by its angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VbgState {
    pub base: FilterElement,
    pub center_setpoint_nm: f64,
    pub tuning_range_nm: [f64; 2],
}

impl VbgState {
    pub fn new(base: FilterElement, center_setpoint_nm: f64, tuning_range_nm: [f64; 2]) -> Result<Self> {
        let vbg = Self {
            base,
            center_setpoint_nm,
            tuning_range_nm,
        };
        vbg.check_setpoint(center_setpoint_nm)?;
        Ok(vbg)
    }

    /// 0.05 nm FWHM, 95 % peak reflection, tunable over 850–880 nm.
    pub fn narrowband(center_setpoint_nm: f64) -> Result<Self> {
        Self::new(
            FilterElement::reflective_grating(center_setpoint_nm, 0.05, 0.95),
            center_setpoint_nm,
            [850.0, 880.0],
        )
    }

    pub fn check_setpoint(&self, setpoint_nm: f64) -> Result<()> {
        let [lo, hi] = self.tuning_range_nm;
        if !(setpoint_nm >= lo && setpoint_nm <= hi) {
            return Err(Error::Range(format!(
                "VBG setpoint {setpoint_nm:.4} nm outside tuning range [{lo}, {hi}] nm"
            )));
        }
        Ok(())
    }

    /// Returns a grating rotated to a new resonance.
    pub fn with_setpoint(&self, setpoint_nm: f64) -> Result<Self> {
        self.check_setpoint(setpoint_nm)?;
        Ok(Self {
            center_setpoint_nm: setpoint_nm,
            ..self.clone()
        })
    }

    pub fn fwhm_nm(&self) -> f64 {
        self.base.fwhm_nm
    }

    pub fn peak(&self) -> f64 {
        self.base.peak
    }

    /// Reflection at `wavelength_nm` with the resonance at `setpoint_nm`.
    #[inline]
    pub fn reflection_at(&self, setpoint_nm: f64, wavelength_nm: f64) -> f64 {
        self.base.transmission_centered(setpoint_nm, wavelength_nm)
    }
}

impl Transmission for VbgState {
    fn transmission(&self, wavelength_nm: f64) -> f64 {
        self.reflection_at(self.center_setpoint_nm, wavelength_nm)
    }
}

/// Silicon avalanche photodiode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApdSpec {
    pub dark_rate_cps: f64,
    pub quantum_efficiency: f64,
    #[serde(default)]
    pub dead_time_s: f64,
    #[serde(default)]
    pub afterpulse_probability: f64,
}

impl Default for ApdSpec {
    fn default() -> Self {
        Self {
            dark_rate_cps: 25.0,
            quantum_efficiency: 0.65,
            dead_time_s: 0.0,
            afterpulse_probability: 0.0,
        }
    }
}

impl ApdSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dark_rate_cps >= 0.0) {
            return Err(Error::config("apd.dark_rate_cps", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.quantum_efficiency) {
            return Err(Error::config("apd.quantum_efficiency", "must lie in [0, 1]"));
        }
        if !(self.dead_time_s >= 0.0) {
            return Err(Error::config("apd.dead_time_s", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.afterpulse_probability) {
            return Err(Error::config("apd.afterpulse_probability", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Registered rate for an incident count rate: afterpulsing followed by
    /// non-paralyzable dead time. Identity with the default (zero) fields.
    pub fn registered_rate(&self, rate_cps: f64) -> f64 {
        let r = rate_cps * (1.0 + self.afterpulse_probability);
        if self.dead_time_s > 0.0 {
            r / (1.0 + r * self.dead_time_s)
        } else {
            r
        }
    }
}

/// The SFG-path filter stack used by the bundled configuration.
pub fn default_sfg_chain() -> Vec<FilterElement> {
    let mut dichroic = FilterElement::short_pass(1200.0, 0.98);
    dichroic.name = "dichroic".into();
    dichroic.edge_width_nm = 10.0;
    let mut spf = FilterElement::short_pass(945.0, 0.95);
    spf.name = "spf945".into();
    let mut bpf = FilterElement::band_pass(857.0, 20.0, 0.9);
    bpf.name = "bpf857".into();
    vec![dichroic, spf, bpf]
}
