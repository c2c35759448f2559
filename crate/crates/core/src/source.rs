//! SPDC photon-pair source with pump polarization control and pulse-shape
//! overlap decoherence.
//!
//! The pump `c0|H⟩ + c1|V⟩` produces `c0|HH⟩|f_H f_H⟩ + c1|VV⟩|f_V f_V⟩`.
//! Tracing out the pulse shapes leaves a coherence `c0 c1* o²`, where the
//! complex scalar `o` stands in for the shape overlap `⟨f_H|f_V⟩` (each photon
//! contributes one factor). A half-wave plate on the second photon then maps
//! `HH → HV` and `VV → VH`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{c, DensityMatrix, Mat4, C64, HV, VH};

const NORM_TOL: f64 = 1e-9;
const OVERLAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SourceConfigJson", into = "SourceConfigJson")]
pub struct SourceConfig {
    pub c0: C64,
    pub c1: C64,
    /// Pulse-shape overlap `o`, `|o| <= 1`.
    pub overlap: C64,
    /// Signed number of compensator crystals; the sign encodes orientation.
    pub quartz_units: i32,
    /// Shape mismatch contributed by one crystal, in units of the pulse width.
    pub delay_per_quartz: f64,
}

impl SourceConfig {
    /// Pump amplitudes from a half-wave-plate angle; overlap from the crystal stack.
    pub fn from_settings(
        pump_angle: f64,
        quartz_units: i32,
        delay_per_quartz: f64,
    ) -> Result<Self> {
        let (c0, c1) = pump_hwp(pump_angle);
        let overlap = overlap_from_quartz(quartz_units, delay_per_quartz)?;
        let cfg = Self {
            c0,
            c1,
            overlap,
            quartz_units,
            delay_per_quartz,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Balanced pump, explicit overlap. Quartz fields are zeroed.
    pub fn balanced(overlap: C64) -> Self {
        let (c0, c1) = pump_hwp(std::f64::consts::FRAC_PI_8);
        Self {
            c0,
            c1,
            overlap,
            quartz_units: 0,
            delay_per_quartz: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let norm = self.c0.norm_sqr() + self.c1.norm_sqr();
        if !((norm - 1.0).abs() <= NORM_TOL) {
            return Err(Error::invalid(format!(
                "pump amplitudes must satisfy |c0|^2 + |c1|^2 = 1, got {norm}"
            )));
        }
        let o = self.overlap.norm();
        if !(o <= 1.0 + OVERLAP_TOL) {
            return Err(Error::invalid(format!("overlap magnitude {o} exceeds 1")));
        }
        if !(self.delay_per_quartz >= 0.0 && self.delay_per_quartz.is_finite()) {
            return Err(Error::invalid(format!(
                "delay_per_quartz must be finite and >= 0, got {}",
                self.delay_per_quartz
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SourceConfigJson {
    c0_re: f64,
    c0_im: f64,
    c1_re: f64,
    c1_im: f64,
    overlap_re: f64,
    overlap_im: f64,
    quartz_units: i32,
    delay_per_quartz: f64,
}

impl TryFrom<SourceConfigJson> for SourceConfig {
    type Error = Error;

    fn try_from(j: SourceConfigJson) -> Result<Self> {
        let cfg = SourceConfig {
            c0: c(j.c0_re, j.c0_im),
            c1: c(j.c1_re, j.c1_im),
            overlap: c(j.overlap_re, j.overlap_im),
            quartz_units: j.quartz_units,
            delay_per_quartz: j.delay_per_quartz,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<SourceConfig> for SourceConfigJson {
    fn from(s: SourceConfig) -> Self {
        Self {
            c0_re: s.c0.re,
            c0_im: s.c0.im,
            c1_re: s.c1.re,
            c1_im: s.c1.im,
            overlap_re: s.overlap.re,
            overlap_im: s.overlap.im,
            quartz_units: s.quartz_units,
            delay_per_quartz: s.delay_per_quartz,
        }
    }
}

/// Pump amplitudes `(cos 2α, sin 2α)` behind a half-wave plate at angle `α`.
pub fn pump_hwp(angle: f64) -> (C64, C64) {
    let (s, co) = (2.0 * angle).sin_cos();
    (c(co, 0.0), c(s, 0.0))
}

/// Gaussian overlap model `o = exp(-(n·d)²)`.
pub fn overlap_from_quartz(quartz_units: i32, delay_per_quartz: f64) -> Result<C64> {
    if !(delay_per_quartz >= 0.0 && delay_per_quartz.is_finite()) {
        return Err(Error::invalid(format!(
            "delay_per_quartz must be finite and >= 0, got {delay_per_quartz}"
        )));
    }
    let x = f64::from(quartz_units) * delay_per_quartz;
    Ok(c((-x * x).exp(), 0.0))
}

/// Per-crystal delay such that `quartz_units` crystals give overlap `o`.
pub fn delay_for_overlap(quartz_units: i32, overlap: f64) -> Result<f64> {
    if quartz_units == 0 {
        return Err(Error::invalid(
            "cannot calibrate a delay with zero crystals",
        ));
    }
    if !(overlap > 0.0 && overlap <= 1.0) {
        return Err(Error::invalid(format!("overlap {overlap} outside (0, 1]")));
    }
    Ok((-overlap.ln()).sqrt() / f64::from(quartz_units.unsigned_abs()))
}

/// Input state to the filter.
///
/// Diagonal `(0, |c0|², |c1|², 0)` with coherence `⟨HV|ρ|VH⟩ = c0 c1* o²`.
pub fn spdc_input_state(cfg: &SourceConfig) -> Result<DensityMatrix> {
    cfg.validate()?;
    let mut m = Mat4::zeros();
    m[(HV, HV)] = c(cfg.c0.norm_sqr(), 0.0);
    m[(VH, VH)] = c(cfg.c1.norm_sqr(), 0.0);
    let coherence = cfg.c0 * cfg.c1.conj() * cfg.overlap * cfg.overlap;
    m[(HV, VH)] = coherence;
    m[(VH, HV)] = coherence.conj();
    Ok(DensityMatrix::from_matrix(m))
}

/// Real overlap `o >= 0` reproducing a target input concurrence
/// through `C_in = 2|c0||c1| o²`.
pub fn calibrate_overlap(target_concurrence: f64, c0: C64, c1: C64) -> Result<f64> {
    let ceiling = 2.0 * c0.norm() * c1.norm();
    if !(target_concurrence >= 0.0) {
        return Err(Error::invalid(format!(
            "target concurrence must be >= 0, got {target_concurrence}"
        )));
    }
    if target_concurrence > ceiling + 1e-12 {
        return Err(Error::Infeasible(format!(
            "concurrence {target_concurrence} exceeds 2|c0 c1| = {ceiling}"
        )));
    }
    if ceiling == 0.0 {
        return Ok(0.0);
    }
    Ok((target_concurrence / ceiling).min(1.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::concurrence;
    use crate::quantum::{bell_state, ket_to_density, BellKind, PolarizationKet, HH, VV};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, FRAC_PI_8};

    fn max_diff(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
        (a.matrix() - b.matrix())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn pump_angles() {
        let (c0, c1) = pump_hwp(FRAC_PI_8);
        assert_abs_diff_eq!(c0.re, FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(c1.re, FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_eq!(pump_hwp(0.0), (c(1.0, 0.0), c(0.0, 0.0)));
        let (c0, c1) = pump_hwp(FRAC_PI_4);
        assert_abs_diff_eq!(c0.re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c1.re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn quartz_overlap() {
        assert_eq!(overlap_from_quartz(0, 0.7).unwrap(), c(1.0, 0.0));
        assert!(overlap_from_quartz(40, 0.7).unwrap().re < 1e-300);
        assert!(overlap_from_quartz(1, -0.1).is_err());
        // exp(-2x²) = 0.04  ⇒  x = sqrt(ln 25 / 2)
        let x = (25f64.ln() / 2.0).sqrt();
        let d = delay_for_overlap(2, 0.2).unwrap();
        assert_abs_diff_eq!(2.0 * d, x, epsilon = 1e-14);
        let o = overlap_from_quartz(2, d).unwrap();
        assert_abs_diff_eq!((o * o).re, 0.04, epsilon = 1e-14);
        assert_abs_diff_eq!(delay_for_overlap(-2, 0.2).unwrap(), d, epsilon = 0.0);
    }

    #[test]
    fn input_state_examples() {
        let mixed = spdc_input_state(&SourceConfig::balanced(c(0.0, 0.0))).unwrap();
        assert!(max_diff(&mixed, &DensityMatrix::diagonal([0.0, 0.5, 0.5, 0.0])) < 1e-15);

        let bell = spdc_input_state(&SourceConfig::balanced(c(1.0, 0.0))).unwrap();
        let psi = ket_to_density(&bell_state(BellKind::PsiPlus)).unwrap();
        assert!(max_diff(&bell, &psi) < 1e-15);

        for o in [0.0, 0.4, 1.0] {
            let cfg = SourceConfig {
                c0: c(1.0, 0.0),
                c1: c(0.0, 0.0),
                overlap: c(o, 0.0),
                quartz_units: 0,
                delay_per_quartz: 0.0,
            };
            let hv = ket_to_density(&PolarizationKet::basis(HV)).unwrap();
            assert!(max_diff(&spdc_input_state(&cfg).unwrap(), &hv) < 1e-15);
        }
    }

    #[test]
    fn input_state_rejects_bad_config() {
        let mut cfg = SourceConfig::balanced(c(0.5, 0.0));
        cfg.c0 = c(0.9, 0.0);
        assert!(spdc_input_state(&cfg).is_err());
        let cfg = SourceConfig::balanced(c(1.0, 0.1));
        assert!(spdc_input_state(&cfg).is_err());
    }

    #[test]
    fn calibration_examples() {
        let h = c(FRAC_1_SQRT_2, 0.0);
        assert_eq!(calibrate_overlap(0.0, h, h).unwrap(), 0.0);
        let o = calibrate_overlap(0.040, h, h).unwrap();
        assert_abs_diff_eq!(o * o, 0.040, epsilon = 1e-15);
        let rho = spdc_input_state(&SourceConfig::balanced(c(o, 0.0))).unwrap();
        assert_abs_diff_eq!(concurrence(&rho).unwrap(), 0.040, epsilon = 1e-12);
        assert_abs_diff_eq!(calibrate_overlap(1.0, h, h).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(
            calibrate_overlap(0.5, c(1.0, 0.0), c(0.0, 0.0)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn json_keys() {
        let cfg = SourceConfig::from_settings(FRAC_PI_8, -2, 0.6).unwrap();
        let v = serde_json::to_value(cfg).unwrap();
        for key in [
            "c0_re",
            "c0_im",
            "c1_re",
            "c1_im",
            "overlap_re",
            "overlap_im",
            "quartz_units",
            "delay_per_quartz",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: SourceConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
        let bad = serde_json::json!({
            "c0_re": 1.0, "c0_im": 0.0, "c1_re": 1.0, "c1_im": 0.0,
            "overlap_re": 0.0, "overlap_im": 0.0, "quartz_units": 0, "delay_per_quartz": 0.0
        });
        assert!(serde_json::from_value::<SourceConfig>(bad).is_err());
    }

    fn arb_source() -> impl Strategy<Value = SourceConfig> {
        (
            0.0..std::f64::consts::PI,
            -3.0..3.0f64,
            0.0..1.0f64,
            -3.0..3.0f64,
        )
            .prop_map(|(angle, pump_phase, o_mag, o_phase)| {
                let (c0, c1) = pump_hwp(angle);
                SourceConfig {
                    c0,
                    c1: c1 * C64::from_polar(1.0, pump_phase),
                    overlap: C64::from_polar(o_mag, o_phase),
                    quartz_units: 0,
                    delay_per_quartz: 0.0,
                }
            })
    }

    proptest! {
        #[test]
        fn input_state_is_valid_with_closed_form_concurrence(cfg in arb_source()) {
            let rho = spdc_input_state(&cfg).unwrap();
            prop_assert!(rho.validate().passed());
            let expected = 2.0 * cfg.c0.norm() * cfg.c1.norm() * cfg.overlap.norm_sqr();
            prop_assert!((concurrence(&rho).unwrap() - expected).abs() <= 1e-9);
        }

        #[test]
        fn zero_overlap_is_exactly_diagonal(cfg in arb_source()) {
            let cfg = SourceConfig { overlap: c(0.0, 0.0), ..cfg };
            let rho = spdc_input_state(&cfg).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    if i != j {
                        prop_assert!(rho.get(i, j).norm() <= 1e-15);
                    }
                }
            }
            prop_assert_eq!(rho.get(HH, HH), c(0.0, 0.0));
            prop_assert_eq!(rho.get(VV, VV), c(0.0, 0.0));
        }

        #[test]
        fn global_pump_phase_is_irrelevant(cfg in arb_source(), phi in -3.0..3.0f64) {
            let g = C64::from_polar(1.0, phi);
            let rotated = SourceConfig { c0: cfg.c0 * g, c1: cfg.c1 * g, ..cfg };
            let a = spdc_input_state(&cfg).unwrap();
            let b = spdc_input_state(&rotated).unwrap();
            prop_assert!(max_diff(&a, &b) <= 1e-12);
        }
    }
}
