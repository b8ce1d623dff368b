//! Adaptive Simpson quadrature.
//!
//! The integrands in this crate are smooth but can be sharply peaked in a
//! tiny fraction of the interval (a millivolt-wide resonance inside a
//! 100 mV modulation window), so the recursion is forced down to a minimum
//! depth before the error estimate is trusted.

use crate::scalar::Real;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("quadrature failed to reach the requested tolerance (max depth {max_depth})")]
    ToleranceNotReached { max_depth: u32 },
    #[error("invalid integration bounds")]
    InvalidBounds,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadConfig<R> {
    pub rel_tol: R,
    pub abs_tol: R,
    /// Subdivision is forced down to this depth before local error
    /// estimates may terminate a branch.
    pub min_depth: u32,
    pub max_depth: u32,
}

impl<R: Real> Default for QuadConfig<R> {
    fn default() -> Self {
        Self {
            rel_tol: R::of(1e-8),
            abs_tol: R::of(0.0),
            min_depth: 10,
            max_depth: 48,
        }
    }
}

/// Integrate `f` over `[a, b]` with adaptive Simpson and Richardson
/// extrapolation on the accepted panels.
pub fn adaptive_simpson<R: Real, F: Fn(R) -> R>(
    f: &F,
    a: R,
    b: R,
    cfg: &QuadConfig<R>,
) -> Result<R, QuadError> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(QuadError::InvalidBounds);
    }
    let two = R::of(2.0);
    let six = R::of(6.0);
    let m = (a + b) / two;
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) * (fa + R::of(4.0) * fm + fb) / six;

    // First pass to get a magnitude scale for the relative tolerance.
    let scale = rough_scale(f, a, b);
    let tol = cfg.abs_tol.max(cfg.rel_tol * scale);

    let mut failed = false;
    let value = recurse(
        f, a, b, fa, fm, fb, whole, tol, 0, cfg, &mut failed,
    );
    if failed {
        Err(QuadError::ToleranceNotReached {
            max_depth: cfg.max_depth,
        })
    } else {
        Ok(value)
    }
}

/// Coarse |integral| estimate from a fixed 64-panel Simpson pass; only used
/// to anchor the relative tolerance.
fn rough_scale<R: Real, F: Fn(R) -> R>(f: &F, a: R, b: R) -> R {
    let n = 64usize;
    let h = (b - a) / R::of(n as f64);
    let mut acc = R::zero();
    for i in 0..n {
        let x0 = a + h * R::of(i as f64);
        let x1 = x0 + h;
        let xm = x0 + h / R::of(2.0);
        acc += h * (f(x0) + R::of(4.0) * f(xm) + f(x1)) / R::of(6.0);
    }
    acc.abs().max(R::min_positive_value())
}

#[allow(clippy::too_many_arguments)]
fn recurse<R: Real, F: Fn(R) -> R>(
    f: &F,
    a: R,
    b: R,
    fa: R,
    fm: R,
    fb: R,
    whole: R,
    tol: R,
    depth: u32,
    cfg: &QuadConfig<R>,
    failed: &mut bool,
) -> R {
    let two = R::of(2.0);
    let six = R::of(6.0);
    let m = (a + b) / two;
    let lm = (a + m) / two;
    let rm = (m + b) / two;
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) * (fa + R::of(4.0) * flm + fm) / six;
    let right = (b - m) * (fm + R::of(4.0) * frm + fb) / six;
    let delta = left + right - whole;

    if depth >= cfg.min_depth && delta.abs() <= R::of(15.0) * tol {
        // Richardson extrapolation: Simpson error shrinks 16x per halving.
        return left + right + delta / R::of(15.0);
    }
    if depth >= cfg.max_depth {
        *failed = true;
        return left + right;
    }
    let half_tol = tol / two;
    recurse(f, a, m, fa, flm, fm, left, half_tol, depth + 1, cfg, failed)
        + recurse(f, m, b, fm, frm, fb, right, half_tol, depth + 1, cfg, failed)
}
