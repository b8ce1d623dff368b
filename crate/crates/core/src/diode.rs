//! Implicit Shockley diode with series and parallel resistance.
//!
//! The operating point solves
//!
//! ```text
//! I = i_sat (exp((V - I r_s)/(n V_T)) - 1) + (V - I r_s)/r_p
//! ```
//!
//! for `I` at applied voltage `V`, with `V_T = k_B T / q`. At cryogenic
//! temperature `V_T` is ~138 uV, so the exponent reaches thousands during
//! root bracketing; the solver therefore compares magnitudes in the log
//! domain whenever the exponential would overflow, and the residual is
//! only ever exponentiated where it is representable.
//!
//! The ideality factor and temperature are exactly degenerate (only the
//! product `n T` enters), so fits hold `T` fixed and report `n`.

use crate::optimize::{levenberg_marquardt, numeric_jacobian, LmConfig};
use crate::scalar::Real;
use serde::Serialize;
use thiserror::Error;

/// Boltzmann constant over elementary charge (V/K), exact SI.
const KB_OVER_Q: f64 = 1.380649e-23 / 1.602176634e-19;

/// Thermal voltage `k_B T / q` (V).
pub fn thermal_voltage<R: Real>(temperature: R) -> R {
    R::of(KB_OVER_Q) * temperature
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiodeError {
    #[error("invalid diode parameters: {0}")]
    InvalidParams(String),
    #[error("operating-point solve did not converge (this indicates a bug: the residual is monotone)")]
    NoConvergence,
    #[error("exponential overflow in diode evaluation")]
    Overflow,
    #[error("iv data does not span both branches: {0}")]
    InsufficientSpan(String),
    #[error("iv fit did not converge")]
    NonConvergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiodeParams<R> {
    /// Saturation current (A).
    pub i_sat: R,
    /// Ideality factor (dimensionless, reported at fixed temperature).
    pub n_ideality: R,
    /// Temperature (K).
    pub temperature: R,
    /// Series resistance (Ohm).
    pub r_s: R,
    /// Parallel (shunt) resistance (Ohm).
    pub r_p: R,
}

impl<R: Real> DiodeParams<R> {
    pub fn new(i_sat: R, n_ideality: R, temperature: R, r_s: R, r_p: R) -> Result<Self, DiodeError> {
        for (name, v) in [
            ("i_sat", i_sat),
            ("n_ideality", n_ideality),
            ("temperature", temperature),
            ("r_s", r_s),
            ("r_p", r_p),
        ] {
            if !(v > R::zero() && v.is_finite()) {
                return Err(DiodeError::InvalidParams(format!("{name} must be positive")));
            }
        }
        if r_p <= r_s {
            return Err(DiodeError::InvalidParams("r_p must exceed r_s".into()));
        }
        Ok(Self {
            i_sat,
            n_ideality,
            temperature,
            r_s,
            r_p,
        })
    }

    fn nvt(&self) -> R {
        self.n_ideality * thermal_voltage(self.temperature)
    }
}

/// Solve the operating point at applied voltage `v`.
///
/// Safeguarded Newton on the junction voltage `u = V - I r_s`, with a
/// bisection bracket maintained from the residual sign (computed in the
/// log domain when needed). The residual is strictly increasing in `u`,
/// so the root is unique.
pub fn diode_current<R: Real>(p: &DiodeParams<R>, v: R) -> Result<R, DiodeError> {
    if v == R::zero() {
        return Ok(R::zero());
    }
    let nvt = p.nvt();
    let x_cap = R::max_value().ln() * R::of(0.8);

    // g(u) = i_sat expm1(u/nvt) + u/r_p + (u - v)/r_s, increasing in u.
    let g_val = |u: R| -> R {
        let x = u / nvt;
        p.i_sat * x.exp_m1() + u / p.r_p + (u - v) / p.r_s
    };
    // Sign of g(u) without overflow.
    let g_sign = |u: R| -> i8 {
        let x = u / nvt;
        if x <= x_cap {
            let g = g_val(u);
            if g > R::zero() {
                1
            } else if g < R::zero() {
                -1
            } else {
                0
            }
        } else {
            // i_sat e^x must balance rhs = (v-u)/r_s - u/r_p + i_sat.
            let rhs = (v - u) / p.r_s - u / p.r_p + p.i_sat;
            if rhs <= R::zero() {
                1
            } else {
                let lhs_log = p.i_sat.ln() + x;
                if lhs_log > rhs.ln() {
                    1
                } else {
                    -1
                }
            }
        }
    };

    let (mut lo, mut hi) = if v > R::zero() {
        (R::zero(), v)
    } else {
        (v, R::zero())
    };
    if g_sign(lo) > 0 || g_sign(hi) < 0 {
        return Err(DiodeError::NoConvergence);
    }

    let mut u = (lo + hi) / R::of(2.0);
    let mut iterations = 0usize;
    loop {
        iterations += 1;
        if iterations > 600 {
            return Err(DiodeError::NoConvergence);
        }
        match g_sign(u) {
            1 => hi = u,
            -1 => lo = u,
            _ => break,
        }
        let width = hi - lo;
        if width <= (lo.abs().max(hi.abs())) * R::epsilon() {
            break;
        }
        // Newton proposal; in the overflow region work on
        // h(u) = ln(i_sat) + u/nvt - ln(rhs(u)), same root, tame slope.
        let x = u / nvt;
        let proposal = if x <= x_cap {
            let g = g_val(u);
            let dg = p.i_sat * x.exp() / nvt + R::one() / p.r_p + R::one() / p.r_s;
            u - g / dg
        } else {
            let rhs = (v - u) / p.r_s - u / p.r_p + p.i_sat;
            if rhs > R::zero() {
                let h = p.i_sat.ln() + x - rhs.ln();
                let dh = R::one() / nvt + (R::one() / p.r_s + R::one() / p.r_p) / rhs;
                u - h / dh
            } else {
                R::nan()
            }
        };
        u = if proposal.is_finite() && proposal > lo && proposal < hi {
            proposal
        } else {
            (lo + hi) / R::of(2.0)
        };
    }

    let x = u / nvt;
    if x > x_cap {
        return Err(DiodeError::Overflow);
    }
    Ok(p.i_sat * x.exp_m1() + u / p.r_p)
}

/// Evaluate the I-V curve on a voltage grid.
pub fn iv_curve<R: Real>(p: &DiodeParams<R>, voltages: &[R]) -> Result<Vec<R>, DiodeError> {
    voltages.iter().map(|&v| diode_current(p, v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct IvSigma<R> {
    pub i_sat: R,
    pub n_ideality: R,
    pub r_s: R,
    pub r_p: R,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IvFit<R> {
    pub params: DiodeParams<R>,
    pub sigma: IvSigma<R>,
    /// Sum of squared mixed-space residuals at the solution.
    pub ssr: R,
    pub n_iter: usize,
}

#[derive(Debug, Clone)]
pub struct IvFitConfig<R> {
    /// Current noise floor of the source meter (A); residuals below it are
    /// taken in linear space (down-weighted), above it in log space.
    pub noise_floor: R,
    /// Temperature at which the ideality factor is reported (K).
    pub temperature: R,
    pub lm: LmConfig<R>,
}

impl<R: Real> Default for IvFitConfig<R> {
    fn default() -> Self {
        Self {
            noise_floor: R::of(1e-12),
            temperature: R::of(1.6),
            lm: LmConfig::default(),
        }
    }
}

/// Fit the four diode parameters to (V, I) data covering both branches.
pub fn fit_iv<R: Real>(
    data: &[(R, R)],
    init: Option<DiodeParams<R>>,
    cfg: &IvFitConfig<R>,
) -> Result<IvFit<R>, DiodeError> {
    let m = data.len();
    if m < 8 {
        return Err(DiodeError::InsufficientSpan("need at least 8 points".into()));
    }
    let reverse: Vec<(R, R)> = data.iter().copied().filter(|&(v, _)| v < R::of(-0.02)).collect();
    let i_rev_scale = reverse
        .iter()
        .map(|&(_, i)| i.abs())
        .fold(R::zero(), R::max);
    let forward: Vec<(R, R)> = data
        .iter()
        .copied()
        .filter(|&(v, i)| v > R::zero() && i > (i_rev_scale * R::of(30.0)).max(cfg.noise_floor * R::of(10.0)))
        .collect();
    if reverse.len() < 3 {
        return Err(DiodeError::InsufficientSpan(
            "no reverse-bias branch in the data".into(),
        ));
    }
    if forward.len() < 4 {
        return Err(DiodeError::InsufficientSpan(
            "no forward conduction branch in the data".into(),
        ));
    }

    let p0 = match init {
        Some(p) => p,
        None => initial_params(&reverse, &forward, cfg)?,
    };

    // Internal coordinates: logs of (i_sat, n vt, r_s, r_p).
    let theta0 = [
        p0.i_sat.ln(),
        (p0.n_ideality * thermal_voltage(p0.temperature)).ln(),
        p0.r_s.ln(),
        p0.r_p.ln(),
    ];
    let vs: Vec<R> = data.iter().map(|&(v, _)| v).collect();
    let is: Vec<R> = data.iter().map(|&(_, i)| i).collect();
    let floor = cfg.noise_floor;
    let temp = cfg.temperature;

    let residuals = {
        let vs = vs.clone();
        let is = is.clone();
        move |theta: &[R], out: &mut [R]| -> bool {
            let p = match unpack(theta, temp) {
                Some(p) => p,
                None => return false,
            };
            for k in 0..vs.len() {
                let im = match diode_current(&p, vs[k]) {
                    Ok(i) => i,
                    Err(_) => return false,
                };
                let id = is[k];
                out[k] = if id.abs() > floor && im.abs() > floor && (im > R::zero()) == (id > R::zero())
                {
                    im.abs().ln() - id.abs().ln()
                } else {
                    (im - id) / floor
                };
            }
            true
        }
    };
    let jac = numeric_jacobian(m, R::of(1e-6), R::of(1e-9), residuals.clone());
    let lm = levenberg_marquardt(m, &theta0, residuals, jac, &cfg.lm);
    if !lm.converged() {
        return Err(DiodeError::NonConvergence);
    }
    let params = unpack(&lm.params, temp).ok_or(DiodeError::NonConvergence)?;

    let dof = R::of((m as i64 - 4).max(1) as f64);
    let s = (lm.ssr / dof).sqrt();
    let sigma = match lm.sigma_params(s) {
        Some(sd) => IvSigma {
            i_sat: sd[0] * params.i_sat,
            n_ideality: sd[1] * params.n_ideality,
            r_s: sd[2] * params.r_s,
            r_p: sd[3] * params.r_p,
        },
        None => IvSigma::default(),
    };
    Ok(IvFit {
        params,
        sigma,
        ssr: lm.ssr,
        n_iter: lm.n_iter,
    })
}

fn unpack<R: Real>(theta: &[R], temperature: R) -> Option<DiodeParams<R>> {
    let i_sat = theta[0].exp();
    let nvt = theta[1].exp();
    let r_s = theta[2].exp();
    let r_p = theta[3].exp();
    if ![i_sat, nvt, r_s, r_p].iter().all(|x| x.is_finite() && *x > R::zero()) {
        return None;
    }
    Some(DiodeParams {
        i_sat,
        n_ideality: nvt / thermal_voltage(temperature),
        temperature,
        r_s,
        r_p,
    })
}

fn initial_params<R: Real>(
    reverse: &[(R, R)],
    forward: &[(R, R)],
    cfg: &IvFitConfig<R>,
) -> Result<DiodeParams<R>, DiodeError> {
    // Shunt resistance from the reverse-branch slope.
    let slope_rev = linfit_slope(reverse);
    let r_p0 = if slope_rev > R::zero() {
        (R::one() / slope_rev).max(R::of(1e3))
    } else {
        R::of(1e10)
    };
    // Series resistance from the high-current end: dV/dI.
    let mut fsort = forward.to_vec();
    fsort.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let top = &fsort[fsort.len().saturating_sub((fsort.len() / 5).max(3))..];
    let swapped: Vec<(R, R)> = top.iter().map(|&(v, i)| (i, v)).collect();
    let r_s0 = linfit_slope(&swapped).max(R::of(1e-2));

    // Exponential mid-region: ln(I) vs junction voltage.
    let imax = fsort.last().unwrap().1;
    let mid: Vec<(R, R)> = fsort
        .iter()
        .filter(|&&(_, i)| i > imax * R::of(1e-6) && i < imax * R::of(0.05))
        .map(|&(v, i)| {
            let u = v - i * r_s0;
            (u, (i - u / r_p0).max(i * R::of(0.1)).ln())
        })
        .collect();
    let (nvt0, i_sat0) = if mid.len() >= 3 {
        let slope = linfit_slope(&mid);
        if slope > R::zero() {
            let nvt = R::one() / slope;
            let (su, sl): (R, R) = mid
                .iter()
                .fold((R::zero(), R::zero()), |(a, b), &(u, l)| (a + u, b + l));
            let n_mid = R::of(mid.len() as f64);
            let i_sat = (sl / n_mid - (su / n_mid) / nvt).exp();
            (nvt, i_sat.max(R::of(1e-30)))
        } else {
            (R::of(0.025), R::of(1e-15))
        }
    } else {
        (R::of(0.025), R::of(1e-15))
    };

    DiodeParams::new(
        i_sat0,
        nvt0 / thermal_voltage(cfg.temperature),
        cfg.temperature,
        r_s0,
        r_p0.max(r_s0 * R::of(10.0)),
    )
    .map_err(|_| DiodeError::NonConvergence)
}

fn linfit_slope<R: Real>(pts: &[(R, R)]) -> R {
    let n = R::of(pts.len() as f64);
    let (mut sx, mut sy, mut sxx, mut sxy) = (R::zero(), R::zero(), R::zero(), R::zero());
    for &(x, y) in pts {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let det = n * sxx - sx * sx;
    if det.abs() > R::zero() {
        (n * sxy - sx * sy) / det
    } else {
        R::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// The cryogenic scenario: effective (large) ideality at 1.6 K gives a
    /// ~0.7 V turn-on with a representable saturation current.
    fn scenario_params() -> DiodeParams<f64> {
        let nvt = 0.0277; // V
        DiodeParams::new(1e-20, nvt / thermal_voltage(1.6), 1.6, 7e3, 1e10).unwrap()
    }

    #[test]
    fn thermal_voltage_at_cryo() {
        let vt = thermal_voltage(1.6f64);
        assert!((vt - 1.3788e-4).abs() < 1e-8, "vt = {vt}");
    }

    #[test]
    fn zero_bias_equilibrium() {
        assert_eq!(diode_current(&scenario_params(), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn reverse_branch_dominated_by_shunt() {
        let i = diode_current(&scenario_params(), -1.0).unwrap();
        // -1 V across ~10 GOhm: -0.1 nA within 1%.
        assert!((i + 1.0e-10).abs() < 1.0e-12, "i = {i}");
    }

    #[test]
    fn reverse_saturation_with_huge_shunt() {
        let p = DiodeParams::<f64>::new(1e-12, 1.5, 300.0, 10.0, 1e15).unwrap();
        let i = diode_current(&p, -0.5).unwrap();
        assert!((i + 1e-12).abs() < 1e-14, "i = {i}");
    }

    #[test]
    fn deep_forward_series_asymptote() {
        let p = scenario_params();
        // Deep forward bias: the junction's differential resistance
        // nvt/I falls below 1% of r_s and the slope approaches 1/r_s.
        let i1 = diode_current(&p, 2.95).unwrap();
        let i2 = diode_current(&p, 3.05).unwrap();
        let slope = (i2 - i1) / 0.1;
        assert!(
            (slope - 1.0 / 7e3).abs() / (1.0 / 7e3) < 0.02,
            "slope = {slope}"
        );
        // Turn-on near 0.7 V: nA-scale current.
        let i_knee = diode_current(&p, 0.70).unwrap();
        assert!(i_knee > 0.2e-9 && i_knee < 5e-9, "i(0.7) = {i_knee}");
    }

    #[test]
    fn no_overflow_across_the_sweep_at_cryo_temperature() {
        // n = 1 at 1.6 K: nvt ~ 138 uV, naive exp(V/nvt) overflows at once.
        let p = DiodeParams::new(1e-20, 1.0, 1.6, 7e3, 1e10).unwrap();
        for k in 0..=120 {
            let v = -1.0 + 0.02 * k as f64;
            let i = diode_current(&p, v).unwrap();
            assert!(i.is_finite(), "I({v}) not finite");
        }
    }

    #[test]
    fn residual_below_tolerance() {
        let p = scenario_params();
        let nvt = p.n_ideality * thermal_voltage(p.temperature);
        for &v in &[-1.0, -0.3, 0.2, 0.5, 0.7, 0.9, 1.2] {
            let i = diode_current(&p, v).unwrap();
            let u = v - i * p.r_s;
            let g = p.i_sat * (u / nvt).exp_m1() + u / p.r_p + (u - v) / p.r_s;
            let tol = 1e-10 * i.abs().max(p.i_sat);
            assert!(g.abs() < tol, "residual {g:.3e} at v = {v}, tol {tol:.3e}");
        }
    }

    #[test]
    fn roundtrip_fit_recovers_resistances() {
        let truth = scenario_params();
        let vs: Vec<f64> = (0..60).map(|k| -1.0 + 2.2 * k as f64 / 59.0).collect();
        let data: Vec<(f64, f64)> = vs
            .iter()
            .map(|&v| (v, diode_current(&truth, v).unwrap()))
            .collect();
        let fit = fit_iv(&data, None, &IvFitConfig::default()).unwrap();
        assert!(
            (fit.params.r_s - 7e3).abs() / 7e3 < 0.02,
            "r_s = {}",
            fit.params.r_s
        );
        assert!(
            (fit.params.r_p - 1e10).abs() / 1e10 < 0.02,
            "r_p = {}",
            fit.params.r_p
        );
        // Shape parameters are recovered too on noiseless data.
        assert!((fit.params.i_sat.ln() - (1e-20f64).ln()).abs() < 0.05);
    }

    #[test]
    fn reverse_only_data_is_rejected() {
        let truth = scenario_params();
        let data: Vec<(f64, f64)> = (0..20)
            .map(|k| {
                let v = -1.0 + 0.04 * k as f64;
                (v, diode_current(&truth, v).unwrap())
            })
            .collect();
        match fit_iv(&data, None, &IvFitConfig::default()) {
            Err(DiodeError::InsufficientSpan(_)) => {}
            other => panic!("expected InsufficientSpan, got {other:?}"),
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(DiodeParams::new(1e-15, 1.0, 300.0, 1e4, 1e3).is_err());
        assert!(DiodeParams::new(-1e-15, 1.0, 300.0, 10.0, 1e9).is_err());
        assert!(DiodeParams::new(1e-15, 0.0, 300.0, 10.0, 1e9).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        /// Strictly increasing I(V).
        #[test]
        fn monotone_in_voltage(
            log_isat in -22.0f64..-12.0,
            nvt_mv in 5.0f64..40.0,
            rs_log in 1.0f64..4.5,
            rp_log in 8.0f64..12.0,
            v1 in -1.0f64..1.1,
            dv in 1e-3f64..0.3,
        ) {
            let nvt = nvt_mv * 1e-3;
            let p = DiodeParams::new(
                10f64.powf(log_isat),
                nvt / thermal_voltage(1.6),
                1.6,
                10f64.powf(rs_log),
                10f64.powf(rp_log),
            ).unwrap();
            let i1 = diode_current(&p, v1).unwrap();
            let i2 = diode_current(&p, v1 + dv).unwrap();
            prop_assert!(i2 > i1, "I({}) = {} !< I({}) = {}", v1, i1, v1 + dv, i2);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        /// Noiseless synthesize-fit round trip across physical ranges.
        #[test]
        fn fit_roundtrip_random_params(
            log_isat in -20.0f64..-14.0,
            nvt_mv in 22.0f64..35.0,
            rs in 2e3f64..2e4,
            rp_log in 9.0f64..11.0,
        ) {
            let nvt = nvt_mv * 1e-3;
            let truth = DiodeParams::new(
                10f64.powf(log_isat),
                nvt / thermal_voltage(1.6),
                1.6,
                rs,
                10f64.powf(rp_log),
            ).unwrap();
            let data: Vec<(f64, f64)> = (0..70)
                .map(|k| {
                    let v = -1.0 + 2.3 * k as f64 / 69.0;
                    (v, diode_current(&truth, v).unwrap())
                })
                .collect();
            let fit = fit_iv(&data, None, &IvFitConfig::default()).unwrap();
            prop_assert!((fit.params.r_s - rs).abs() / rs < 0.02);
            let rp = 10f64.powf(rp_log);
            prop_assert!((fit.params.r_p - rp).abs() / rp < 0.02);
        }
    }
}
