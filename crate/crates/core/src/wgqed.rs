//! Forward models for a two-level emitter coupled to a single-mode
//! waveguide.
//!
//! The transmission amplitude of a detuned probe past one emitter is
//!
//! ```text
//! t(d) = 1 - beta / (1 - 2 i d / Gamma_tot) + fano_amp * exp(i fano_phase)
//! ```
//!
//! where `d` is the detuning from resonance, `beta` the fraction of the
//! emitter decay going into the guided mode and the last term a coherent
//! background reflection that produces the Fano asymmetry of measured
//! dips. Measured transmission is `|t|^2`.
//!
//! With the background off, `|t|^2 = 1 - (2 beta - beta^2) / (1 + x^2)`
//! with `x = 2 d / Gamma_tot`, so the dip half-depth points sit at
//! `d = +- Gamma_tot / 2` for every `beta`: the full width at half depth
//! of the symmetric lineshape *is* `Gamma_tot`. The width extraction in
//! [`crate::lineshape`] relies on this identity.

use crate::scalar::Real;
use num_complex::Complex;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid emitter model: {0}")]
    InvalidEmitter(String),
    #[error("invalid band-edge model: {0}")]
    InvalidBandEdge(String),
    #[error("scan axis must be strictly increasing and non-empty")]
    BadAxis,
    #[error("scan values must be non-negative and match the axis length")]
    BadValues,
}

/// Physical parameters of one waveguide-coupled emitter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmitterModel<R> {
    /// Resonance frequency at the plateau anchor voltage (Hz).
    pub nu0: R,
    /// Total linewidth, FWHM (Hz).
    pub gamma_tot: R,
    /// Waveguide coupling fraction, 0..=1.
    pub beta: R,
    /// Coherent background reflection amplitude (>= 0).
    pub fano_amp: R,
    /// Background phase (rad).
    pub fano_phase: R,
    /// Stark shift of the resonance per gate volt (Hz/V).
    pub stark_slope: R,
    /// Charge plateau `[v_on, v_off]`: gate range where the emitter is
    /// populated (V).
    pub plateau: (R, R),
}

impl<R: Real> EmitterModel<R> {
    pub fn new(
        nu0: R,
        gamma_tot: R,
        beta: R,
        fano_amp: R,
        fano_phase: R,
        stark_slope: R,
        plateau: (R, R),
    ) -> Result<Self, ModelError> {
        if !(gamma_tot > R::zero()) {
            return Err(ModelError::InvalidEmitter("gamma_tot must be > 0".into()));
        }
        if beta < R::zero() || beta > R::one() {
            return Err(ModelError::InvalidEmitter("beta must be in [0, 1]".into()));
        }
        if fano_amp < R::zero() {
            return Err(ModelError::InvalidEmitter("fano_amp must be >= 0".into()));
        }
        if !(plateau.0 < plateau.1) {
            return Err(ModelError::InvalidEmitter("plateau requires v_on < v_off".into()));
        }
        Ok(Self {
            nu0,
            gamma_tot,
            beta,
            fano_amp,
            fano_phase,
            stark_slope,
            plateau,
        })
    }

    /// Simple resonant emitter with no background and a unit plateau,
    /// for synthesis and tests.
    pub fn bare(nu0: R, gamma_tot: R, beta: R) -> Self {
        Self::new(
            nu0,
            gamma_tot,
            beta,
            R::zero(),
            R::zero(),
            R::zero(),
            (R::zero(), R::one()),
        )
        .expect("bare emitter parameters are valid")
    }

    /// Complex transmission amplitude at detuning `delta` (Hz) from `nu0`.
    pub fn transmission_amplitude(&self, delta: R) -> Complex<R> {
        let x = R::of(2.0) * delta / self.gamma_tot;
        let denom = R::one() + x * x;
        // 1/(1 - i x) = (1 + i x)/(1 + x^2)
        let lorentz = Complex::new(R::one() / denom, x / denom);
        let background = Complex::from_polar(self.fano_amp, self.fano_phase);
        Complex::new(R::one(), R::zero()) - lorentz * self.beta + background
    }

    /// Transmission `|t|^2` at detuning `delta` (Hz).
    pub fn transmission(&self, delta: R) -> R {
        self.transmission_amplitude(delta).norm_sqr()
    }

    /// Transmission evaluated on an absolute frequency axis (Hz).
    pub fn transmission_spectrum(&self, axis: &[R]) -> Result<ScanTrace<R>, ModelError> {
        let values: Vec<R> = axis.iter().map(|&nu| self.transmission(nu - self.nu0)).collect();
        ScanTrace::new(axis.to_vec(), values, ScanMeta::default())
    }

    /// Stark-shifted resonance at gate voltage `v_gate`, or `None` outside
    /// the charge plateau (emitter dark).
    pub fn stark_resonance(&self, v_gate: R) -> Option<R> {
        let (v_on, v_off) = self.plateau;
        if v_gate < v_on || v_gate > v_off {
            None
        } else {
            Some(self.nu0 + self.stark_slope * (v_gate - v_on))
        }
    }
}

/// Band-edge transmission envelope of the waveguide.
///
/// A logistic edge in wavelength between 1 and the suppressed floor
/// `10^(-suppression_db/10)`. The logistic steepness is set so the edge
/// term falls ten decades per `edge_width`, which makes the envelope
/// reach the floor (to double precision) within two edge widths past the
/// cutoff while keeping the midpoint exactly at `(1 + floor)/2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandEdgeModel<R> {
    /// Cutoff wavelength (m).
    pub lambda_c: R,
    /// Above-cutoff suppression (dB, >= 20).
    pub suppression_db: R,
    /// Transition width (m).
    pub edge_width: R,
}

impl<R: Real> BandEdgeModel<R> {
    pub fn new(lambda_c: R, suppression_db: R, edge_width: R) -> Result<Self, ModelError> {
        if !(lambda_c > R::zero()) {
            return Err(ModelError::InvalidBandEdge("lambda_c must be > 0".into()));
        }
        if suppression_db < R::of(20.0) {
            return Err(ModelError::InvalidBandEdge(
                "suppression_db must be >= 20 (two orders of magnitude)".into(),
            ));
        }
        if !(edge_width > R::zero()) {
            return Err(ModelError::InvalidBandEdge("edge_width must be > 0".into()));
        }
        Ok(Self {
            lambda_c,
            suppression_db,
            edge_width,
        })
    }

    /// Transmission factor in `[0, 1]` at wavelength `lambda` (m).
    pub fn envelope(&self, lambda: R) -> R {
        let floor = R::of(10.0).powf(-self.suppression_db / R::of(10.0));
        // ln(1e10): ten decades of logistic decay per edge_width.
        let steep = R::of(10.0 * std::f64::consts::LN_10);
        let arg = (self.lambda_c - lambda) / self.edge_width * steep;
        // Numerically safe logistic.
        let s = if arg >= R::zero() {
            R::one() / (R::one() + (-arg).exp())
        } else {
            let e = arg.exp();
            e / (R::one() + e)
        };
        floor + (R::one() - floor) * s
    }
}

/// Acquisition metadata carried along with a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanMeta<R> {
    /// Gate voltage during the scan (V).
    pub gate_v: R,
    /// Optical probe power in the waveguide (W).
    pub power_w: R,
}

impl<R: Real> Default for ScanMeta<R> {
    fn default() -> Self {
        Self {
            gate_v: R::zero(),
            power_w: R::zero(),
        }
    }
}

/// A frequency-ordered sweep of normalized transmission (or count rate).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanTrace<R> {
    /// Strictly increasing frequency samples (Hz).
    pub axis: Vec<R>,
    /// Non-negative transmission / counts, one per axis sample.
    pub values: Vec<R>,
    /// Nominal step (Hz), median of the axis differences.
    pub step: R,
    pub meta: ScanMeta<R>,
}

impl<R: Real> ScanTrace<R> {
    pub fn new(axis: Vec<R>, values: Vec<R>, meta: ScanMeta<R>) -> Result<Self, ModelError> {
        if axis.is_empty() || axis.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(ModelError::BadAxis);
        }
        if values.len() != axis.len() || values.iter().any(|v| !(*v >= R::zero())) {
            return Err(ModelError::BadValues);
        }
        let step = if axis.len() == 1 {
            R::zero()
        } else {
            let diffs: Vec<R> = axis.windows(2).map(|w| w[1] - w[0]).collect();
            crate::stats::median(&diffs)
        };
        Ok(Self {
            axis,
            values,
            step,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emitter(beta: f64, gamma: f64, fano_amp: f64, fano_phase: f64) -> EmitterModel<f64> {
        EmitterModel::new(0.0, gamma, beta, fano_amp, fano_phase, 0.0, (0.0, 1.0)).unwrap()
    }

    #[test]
    fn perfect_coupling_extinguishes_resonance() {
        let m = emitter(1.0, 1e8, 0.0, 0.0);
        let t = m.transmission_amplitude(0.0);
        assert!(t.norm() < 1e-15);
        assert!(m.transmission(0.0) < 1e-30);
    }

    #[test]
    fn half_coupling_on_resonance() {
        // |1 - beta|^2 = 0.25 at beta = 0.5
        let m = emitter(0.5, 1e8, 0.0, 0.0);
        assert!((m.transmission(0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn half_width_point_value() {
        // At d = Gamma/2: T = ((1-beta)^2 + 1)/2 = 0.625 for beta = 0.5
        let m = emitter(0.5, 1e8, 0.0, 0.0);
        assert!((m.transmission(5e7) - 0.625).abs() < 1e-15);
    }

    #[test]
    fn no_emitter_means_unit_transmission() {
        let m = emitter(0.0, 1e8, 0.0, 0.0);
        let axis: Vec<f64> = (0..100).map(|i| -5e8 + 1e7 * i as f64).collect();
        let trace = m.transmission_spectrum(&axis).unwrap();
        assert!(trace.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn spectrum_symmetric_without_fano() {
        let m = EmitterModel::new(1e9, 3e8, 0.7, 0.0, 0.0, 0.0, (0.0, 1.0)).unwrap();
        let n = 401;
        let axis: Vec<f64> = (0..n).map(|i| 1e9 + (i as f64 - 200.0) * 1e7).collect();
        let trace = m.transmission_spectrum(&axis).unwrap();
        for i in 0..n / 2 {
            let a = trace.values[i];
            let b = trace.values[n - 1 - i];
            assert!((a - b).abs() < 1e-12, "asymmetry at {i}: {a} vs {b}");
        }
    }

    #[test]
    fn dense_grid_fwhm_matches_gamma() {
        let gamma = 5e8;
        let m = emitter(0.9, gamma, 0.0, 0.0);
        let step = 1e6;
        let axis: Vec<f64> = (0..4001).map(|i| -2e9 + step * i as f64).collect();
        let t = m.transmission_spectrum(&axis).unwrap();
        let tmin = t.values.iter().cloned().fold(f64::MAX, f64::min);
        let half = (1.0 + tmin) / 2.0;
        let below: Vec<usize> = (0..t.len()).filter(|&i| t.values[i] < half).collect();
        let fwhm = (below.len() as f64) * step;
        assert!(
            (fwhm - gamma).abs() <= 2.0 * step,
            "grid fwhm {fwhm} vs {gamma}"
        );
    }

    #[test]
    fn band_edge_frozen_points() {
        let be = BandEdgeModel::<f64>::new(950.2e-9, 20.0, 0.2e-9).unwrap();
        // Deep pass band.
        assert!(be.envelope(950.2e-9 - 10.0 * 0.2e-9) >= 0.99);
        // Two edge widths into the gap the envelope has reached the floor.
        assert!(be.envelope(950.2e-9 + 2.0 * 0.2e-9) <= 0.01);
        // Midpoint of the chosen logistic.
        let mid = be.envelope(950.2e-9);
        assert!((mid - 0.5 * (1.0 + 0.01)).abs() < 1e-12, "mid = {mid}");
    }

    #[test]
    fn band_edge_monotone_non_increasing() {
        let be = BandEdgeModel::<f64>::new(950.2e-9, 23.0, 0.15e-9).unwrap();
        let mut prev = f64::MAX;
        for i in 0..2000 {
            let lambda = 948e-9 + i as f64 * 2e-12;
            let v = be.envelope(lambda);
            assert!(v <= prev + 1e-15);
            assert!((0.0..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn stark_resonance_plateau() {
        let m = EmitterModel::<f64>::new(3.17e14, 3e8, 0.8, 0.0, 0.0, 1e12, (1.20, 1.24)).unwrap();
        // Plateau anchor.
        assert_eq!(m.stark_resonance(1.20), Some(3.17e14));
        // Outside the blockade regime.
        assert_eq!(m.stark_resonance(1.25), None);
        assert_eq!(m.stark_resonance(1.19), None);
        // Midpoint with 1 GHz/mV over a 40 mV plateau: +20 GHz.
        let m2 = EmitterModel::<f64>::new(3.17e14, 3e8, 0.8, 0.0, 0.0, 1e12, (1.00, 1.04)).unwrap();
        let at_mid = m2.stark_resonance(1.02).unwrap();
        assert!((at_mid - (3.17e14 + 20e9)).abs() < 1.0);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(EmitterModel::new(0.0, 0.0, 0.5, 0.0, 0.0, 0.0, (0.0, 1.0)).is_err());
        assert!(EmitterModel::new(0.0, 1e8, 1.5, 0.0, 0.0, 0.0, (0.0, 1.0)).is_err());
        assert!(EmitterModel::new(0.0, 1e8, 0.5, -0.1, 0.0, 0.0, (0.0, 1.0)).is_err());
        assert!(EmitterModel::new(0.0, 1e8, 0.5, 0.0, 0.0, 0.0, (1.0, 1.0)).is_err());
        assert!(BandEdgeModel::new(950e-9, 10.0, 1e-10).is_err());
        let m = emitter(0.5, 1e8, 0.0, 0.0);
        assert!(m.transmission_spectrum(&[]).is_err());
        assert!(ScanTrace::<f64>::new(vec![1.0, 1.0], vec![0.0, 0.0], ScanMeta::default()).is_err());
        assert!(ScanTrace::<f64>::new(vec![1.0, 2.0], vec![0.0, -0.1], ScanMeta::default()).is_err());
    }

    proptest! {
        /// Half-depth points of the symmetric dip sit at +-Gamma/2 exactly,
        /// independent of beta.
        #[test]
        fn fwhm_identity(beta in 0.05f64..1.0, gamma in 1e8f64..2e9) {
            let m = emitter(beta, gamma, 0.0, 0.0);
            let tmin = m.transmission(0.0);
            let half = (1.0 + tmin) / 2.0;
            let at_half = m.transmission(gamma / 2.0);
            prop_assert!((at_half - half).abs() < 1e-12 * half.max(1e-3));
        }

        /// 0 <= |t|^2 <= (1 + fano_amp)^2; without background, T <= 1.
        #[test]
        fn transmission_bounds(
            beta in 0.0f64..=1.0,
            gamma in 1e7f64..2e9,
            fano in 0.0f64..0.5,
            phase in -std::f64::consts::PI..std::f64::consts::PI,
            x in -50.0f64..50.0,
        ) {
            let m = emitter(beta, gamma, fano, phase);
            let t = m.transmission(x * gamma);
            prop_assert!(t >= 0.0);
            prop_assert!(t <= (1.0 + fano) * (1.0 + fano) + 1e-12);
            if fano == 0.0 {
                prop_assert!(t <= 1.0 + 1e-12);
            }
        }

        /// T(d) = T(-d) to machine precision when the background is off.
        #[test]
        fn symmetry_without_fano(
            beta in 0.0f64..=1.0,
            gamma in 1e7f64..2e9,
            x in 0.0f64..20.0,
        ) {
            let m = emitter(beta, gamma, 0.0, 0.0);
            prop_assert!((m.transmission(x * gamma) - m.transmission(-x * gamma)).abs() < 1e-14);
        }

        /// Resonance is affine in gate voltage across the plateau and the
        /// plateau width is reproduced exactly.
        #[test]
        fn stark_affine(
            slope in -5e12f64..5e12,
            v_on in 0.0f64..1.0,
            width in 0.01f64..0.5,
            u in 0.0f64..=1.0,
        ) {
            let v_off = v_on + width;
            let m = EmitterModel::new(3e14, 1e8, 0.5, 0.0, 0.0, slope, (v_on, v_off)).unwrap();
            let v = v_on + u * width;
            let nu = m.stark_resonance(v).unwrap();
            let expect = 3e14 + slope * (v - v_on);
            prop_assert!((nu - expect).abs() <= 1e-6 * expect.abs().max(1.0));
            prop_assert!(m.stark_resonance(v_on - 1e-9).is_none());
            prop_assert!(m.stark_resonance(v_off + 1e-9).is_none());
        }
    }
}
