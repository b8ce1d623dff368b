//! W1 photonic-crystal geometry: how much of the core material sits
//! farther than a distance `d` from every etched hole edge.
//!
//! The lattice is triangular with period `a` along the guide, row
//! spacing `sqrt(3)/2 * a`, adjacent rows offset by `a/2`, and the
//! center row removed. The analysis region is a strip of configurable
//! half-height centered on the missing row, one period long, periodic
//! along the guide. The default strip ends at the first hole rows, whose
//! holes are then half-clipped by the boundary.
//!
//! `area_fraction` is evaluated in closed form while the exclusion disks
//! of radius `r + d` are pairwise disjoint (`r + d < a/2`, the physical
//! regime of interest); beyond that it falls back to a fixed-seed Monte
//! Carlo estimate. Because the fallback reuses one frozen sample set,
//! the fraction stays monotone in `d` and the distance solver can
//! bisect across both regimes.

use crate::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    Invalid(String),
    #[error("target fraction {target} is not reachable within d <= {d_max} m (floor fraction {floor})")]
    Unreachable { target: f64, d_max: f64, floor: f64 },
    #[error("wavelength at or beyond the band edge")]
    BeyondBandEdge,
}

/// Analysis region and lattice of one W1 unit cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PcwGeometry<R> {
    /// Lattice constant (m).
    pub a: R,
    /// Hole radius (m).
    pub r: R,
    /// Number of hole rows included per side of the missing row.
    pub rows_per_side: u32,
    /// Half-height of the analysis strip (m).
    pub strip_halfwidth: R,
}

impl<R: Real> PcwGeometry<R> {
    /// Strip bounded by the centers of the `rows`-th hole rows:
    /// half-height `rows * sqrt(3)/2 * a`.
    pub fn w1(a: R, r: R, rows: u32) -> Result<Self, GeometryError> {
        let halfwidth = R::of(rows.max(1) as f64) * R::of(3f64.sqrt() / 2.0) * a;
        Self::with_region(a, r, rows.max(1), halfwidth)
    }

    pub fn with_region(
        a: R,
        r: R,
        rows_per_side: u32,
        strip_halfwidth: R,
    ) -> Result<Self, GeometryError> {
        if !(a > R::zero()) {
            return Err(GeometryError::Invalid("lattice constant must be > 0".into()));
        }
        if !(r > R::zero() && r < a / R::of(2.0)) {
            return Err(GeometryError::Invalid("hole radius must satisfy 0 < r < a/2".into()));
        }
        if !(strip_halfwidth > R::zero()) {
            return Err(GeometryError::Invalid("strip half-width must be > 0".into()));
        }
        if rows_per_side == 0 {
            return Err(GeometryError::Invalid("need at least one hole row per side".into()));
        }
        Ok(Self {
            a,
            r,
            rows_per_side,
            strip_halfwidth,
        })
    }

    /// The default geometry used throughout: `a = 248 nm`, `r = 70 nm`,
    /// strip bounded by the first hole rows.
    pub fn default_region() -> Result<Self, GeometryError> {
        Self::w1(R::of(248e-9), R::of(70e-9), 1)
    }

    fn row_spacing(&self) -> R {
        R::of(3f64.sqrt() / 2.0) * self.a
    }

    /// Hole centers of every lattice row whose disks of radius `reach`
    /// can intersect the strip, one hole per period. Rows `+-1` sit at
    /// `x = a/2`, even rows at `x = 0` (the `a/2` stagger of the
    /// triangular lattice).
    pub fn hole_centers(&self, reach: R) -> Vec<(R, R)> {
        let dy = self.row_spacing();
        let k_max = ((self.strip_halfwidth + reach) / dy)
            .ceil()
            .as_f64() as i64
            + 1;
        let mut out = Vec::new();
        for k in 1..=k_max {
            let x = if k % 2 == 1 { self.a / R::of(2.0) } else { R::zero() };
            let y = dy * R::of(k as f64);
            out.push((x, y));
            out.push((x, -y));
        }
        out
    }
}

/// Area of a disk of radius `rr` centered `yc` from the strip midline,
/// clipped to `|y| <= hh` (x handled periodically elsewhere).
fn clipped_disk_area<R: Real>(rr: R, yc: R, hh: R) -> R {
    let cap = |h: R| -> R {
        // Area of the disk part with y > h (h measured from the center).
        if h >= rr {
            R::zero()
        } else if h <= -rr {
            R::PI() * rr * rr
        } else {
            rr * rr * (h / rr).acos() - h * (rr * rr - h * h).sqrt()
        }
    };
    R::PI() * rr * rr - cap(hh - yc) - cap(yc + hh)
}

/// Sum of clipped disk areas of radius `rr` on all hole centers, per
/// period. Valid while disks are pairwise disjoint (`2 rr <= a`).
fn disjoint_hole_area<R: Real>(g: &PcwGeometry<R>, rr: R) -> R {
    g.hole_centers(rr)
        .into_iter()
        .filter(|&(_, cy)| cy.abs() < g.strip_halfwidth + rr)
        .map(|(_, cy)| clipped_disk_area(rr, cy, g.strip_halfwidth))
        .sum()
}

/// Internal fixed sampling budget for the Monte Carlo fallback of
/// [`area_fraction`]; the frozen seed keeps the fallback a deterministic,
/// monotone function of `d`.
const FALLBACK_SAMPLES: u64 = 400_000;
const FALLBACK_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// Fraction of material area farther than `d` from every hole edge:
/// `A_lim / A_total` in `[0, 1]`.
pub fn area_fraction<R: Real>(g: &PcwGeometry<R>, d: R) -> R {
    assert!(d >= R::zero(), "distance must be >= 0");
    let rr = g.r + d;
    if rr < g.a / R::of(2.0) {
        let region = g.a * R::of(2.0) * g.strip_halfwidth;
        let a_total = region - disjoint_hole_area(g, g.r);
        let a_lim = region - disjoint_hole_area(g, rr);
        (a_lim / a_total).max(R::zero()).min(R::one())
    } else {
        monte_carlo_fraction(g, d, FALLBACK_SAMPLES, FALLBACK_SEED).fraction
    }
}

/// Monte Carlo estimate of the area fraction with its binomial error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McFraction<R> {
    pub fraction: R,
    /// One binomial standard deviation.
    pub sigma: R,
    /// Material (non-hole) sample count the fraction is based on.
    pub n_material: u64,
}

/// Rejection-sample the strip uniformly; points inside holes are
/// excluded, and the fraction counts points farther than `d` from every
/// hole edge. Sampling is split into fixed-size batches with seeds
/// derived from (`seed`, batch index), so the result is independent of
/// how batches would be distributed across workers.
pub fn monte_carlo_fraction<R: Real>(
    g: &PcwGeometry<R>,
    d: R,
    n_samples: u64,
    seed: u64,
) -> McFraction<R> {
    assert!(n_samples >= 10_000, "need >= 1e4 samples");
    assert!(d >= R::zero());
    let holes_f64: Vec<(f64, f64)> = g
        .hole_centers(g.r + d)
        .into_iter()
        .map(|(x, y)| (x.as_f64(), y.as_f64()))
        .collect();
    let a = g.a.as_f64();
    let h = g.strip_halfwidth.as_f64();
    let r = g.r.as_f64();
    let rd = r + d.as_f64();
    let (r2, rd2) = (r * r, rd * rd);

    const BATCH: u64 = 1 << 16;
    let n_batches = n_samples.div_ceil(BATCH);
    let (mut material, mut limited) = (0u64, 0u64);
    for b in 0..n_batches {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed, b));
        let count = BATCH.min(n_samples - b * BATCH);
        for _ in 0..count {
            let x: f64 = rng.random::<f64>() * a;
            let y: f64 = (rng.random::<f64>() * 2.0 - 1.0) * h;
            let mut dmin2 = f64::MAX;
            for &(cx, cy) in &holes_f64 {
                let mut dx = x - cx;
                dx -= a * (dx / a).round(); // periodic along the guide
                let dy = y - cy;
                let dd = dx * dx + dy * dy;
                if dd < dmin2 {
                    dmin2 = dd;
                }
            }
            if dmin2 > r2 {
                material += 1;
                if dmin2 > rd2 {
                    limited += 1;
                }
            }
        }
    }
    let f = limited as f64 / material.max(1) as f64;
    let sigma = (f * (1.0 - f) / material.max(1) as f64).sqrt();
    McFraction {
        fraction: R::of(f),
        sigma: R::of(sigma),
        n_material: material,
    }
}

fn splitmix64(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Invert the monotone map `d -> area_fraction(g, d)` by bisection.
///
/// Stops at `|f - f_target| < 1e-6` or when the bracket collapses below
/// `1e-7 * a` (relevant in the Monte Carlo regime, where the fraction is
/// a staircase with steps of one sample).
pub fn solve_distance<R: Real>(
    g: &PcwGeometry<R>,
    f_target: R,
    d_max: Option<R>,
) -> Result<R, GeometryError> {
    if !(f_target > R::zero() && f_target <= R::one()) {
        return Err(GeometryError::Invalid(
            "target fraction must be in (0, 1]".into(),
        ));
    }
    let d_hi = d_max.unwrap_or(g.a + g.strip_halfwidth);
    let floor = area_fraction(g, d_hi);
    if floor > f_target {
        return Err(GeometryError::Unreachable {
            target: f_target.as_f64(),
            d_max: d_hi.as_f64(),
            floor: floor.as_f64(),
        });
    }
    let (mut lo, mut hi) = (R::zero(), d_hi);
    let tol_f = R::of(1e-6);
    let tol_d = g.a * R::of(1e-7);
    for _ in 0..200 {
        let mid = (lo + hi) / R::of(2.0);
        let f = area_fraction(g, mid);
        if (f - f_target).abs() < tol_f {
            return Ok(mid);
        }
        if f > f_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < tol_d {
            break;
        }
    }
    Ok((lo + hi) / R::of(2.0))
}

/// Simplified maximal Purcell-enhanced linewidth near the band edge:
/// an inverse-square-root divergence in the distance to the cutoff,
/// scaled to the homogeneous linewidth and clipped at `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PurcellEnvelope<R> {
    /// Homogeneous linewidth far from the edge (Hz).
    pub gamma_hom: R,
    /// Band-edge cutoff wavelength (m).
    pub lambda_c: R,
    /// Dimensionless envelope amplitude.
    pub scale: R,
    /// Maximum enhancement factor.
    pub cap: R,
}

impl<R: Real> PurcellEnvelope<R> {
    pub fn new(gamma_hom: R, lambda_c: R, scale: R, cap: R) -> Result<Self, GeometryError> {
        for (name, v) in [
            ("gamma_hom", gamma_hom),
            ("lambda_c", lambda_c),
            ("scale", scale),
            ("cap", cap),
        ] {
            if !(v > R::zero()) {
                return Err(GeometryError::Invalid(format!("{name} must be > 0")));
            }
        }
        Ok(Self {
            gamma_hom,
            lambda_c,
            scale,
            cap,
        })
    }

    /// Maximum achievable linewidth at `lambda` (Hz); errors at or past
    /// the cutoff.
    pub fn envelope(&self, lambda: R) -> Result<R, GeometryError> {
        if lambda >= self.lambda_c {
            return Err(GeometryError::BeyondBandEdge);
        }
        let rel = (self.lambda_c - lambda) / self.lambda_c;
        Ok(self.gamma_hom * self.cap.min(self.scale / rel.sqrt()))
    }
}
