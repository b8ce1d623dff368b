//! Damped Gauss-Newton (Levenberg-Marquardt) for small dense least-squares
//! problems.
//!
//! All fit problems in this crate have 2-6 parameters and at most a few
//! thousand residuals, so the normal equations are formed explicitly and
//! solved by Gaussian elimination with partial pivoting. The damping
//! parameter multiplies the diagonal of `J^T J` (Marquardt scaling), which
//! keeps the step well-behaved for poorly scaled parameters.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum LmStatus {
    /// Converged on step size or cost decrease.
    Converged,
    /// Iteration cap reached without meeting the convergence criteria.
    IterationCap,
    /// Normal equations stayed singular even under heavy damping.
    IllConditioned,
}

#[derive(Debug, Clone)]
pub struct LmConfig<R> {
    pub max_iter: usize,
    /// Step-size convergence: accept when `|dx_i| <= xtol * (|x_i| + xtol)` for all i.
    pub xtol: R,
    /// Cost convergence: accept when the relative cost decrease falls below this.
    pub ftol: R,
    pub lambda0: R,
    pub lambda_up: R,
    pub lambda_down: R,
    pub lambda_max: R,
}

impl<R: Real> Default for LmConfig<R> {
    fn default() -> Self {
        Self {
            max_iter: 200,
            xtol: R::of(1e-12),
            ftol: R::of(1e-14),
            lambda0: R::of(1e-3),
            lambda_up: R::of(4.0),
            lambda_down: R::of(3.0),
            lambda_max: R::of(1e12),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmFit<R> {
    pub params: Vec<R>,
    /// Sum of squared residuals at `params`.
    pub ssr: R,
    /// `(J^T J)^{-1}` at the solution (row-major n x n); `None` if singular.
    pub covariance_unscaled: Option<Vec<R>>,
    pub n_iter: usize,
    pub status: LmStatus,
}

impl<R: Real> LmFit<R> {
    pub fn converged(&self) -> bool {
        self.status == LmStatus::Converged
    }

    /// 1-sigma parameter uncertainties assuming homoscedastic noise of
    /// standard deviation `sigma` on the residuals.
    pub fn sigma_params(&self, sigma: R) -> Option<Vec<R>> {
        let n = self.params.len();
        self.covariance_unscaled
            .as_ref()
            .map(|cov| (0..n).map(|i| (cov[i * n + i].max(R::zero())).sqrt() * sigma).collect())
    }
}

/// Minimize `sum_i r_i(x)^2`.
///
/// `residuals(x, out)` fills `out` (length `n_residuals`) and returns false
/// if `x` is outside the evaluable domain. `jacobian(x, out)` fills the
/// row-major `n_residuals x n_params` Jacobian `d r_i / d x_j`.
pub fn levenberg_marquardt<R, FR, FJ>(
    n_residuals: usize,
    x0: &[R],
    mut residuals: FR,
    mut jacobian: FJ,
    cfg: &LmConfig<R>,
) -> LmFit<R>
where
    R: Real,
    FR: FnMut(&[R], &mut [R]) -> bool,
    FJ: FnMut(&[R], &mut [R]) -> bool,
{
    let n = x0.len();
    let m = n_residuals;
    let mut x = x0.to_vec();
    let mut r = vec![R::zero(); m];
    let mut jac = vec![R::zero(); m * n];

    if !residuals(&x, &mut r) {
        return LmFit {
            params: x,
            ssr: R::infinity(),
            covariance_unscaled: None,
            n_iter: 0,
            status: LmStatus::IllConditioned,
        };
    }
    let mut ssr = dot(&r, &r);
    let mut lambda = cfg.lambda0;
    let mut status = LmStatus::IterationCap;
    let mut n_iter = 0;

    let mut jtj = vec![R::zero(); n * n];
    let mut jtr = vec![R::zero(); n];

    for iter in 0..cfg.max_iter {
        n_iter = iter + 1;
        if !jacobian(&x, &mut jac) {
            status = LmStatus::IllConditioned;
            break;
        }
        normal_equations(&jac, &r, m, n, &mut jtj, &mut jtr);

        // Inner loop: raise damping until a step reduces the cost.
        let mut stepped = false;
        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                let d = jtj[i * n + i];
                let floor = R::of(1e-30);
                a[i * n + i] = d + lambda * d.max(floor);
            }
            let mut step = jtr.clone();
            for s in step.iter_mut() {
                *s = -*s;
            }
            let solvable = solve_in_place(&mut a, &mut step, n);

            if solvable {
                let x_new: Vec<R> = x.iter().zip(&step).map(|(&xi, &si)| xi + si).collect();
                let mut r_new = vec![R::zero(); m];
                if residuals(&x_new, &mut r_new) {
                    let ssr_new = dot(&r_new, &r_new);
                    if ssr_new.is_finite() && ssr_new <= ssr {
                        // Accepted.
                        let small_step = x
                            .iter()
                            .zip(&step)
                            .all(|(&xi, &si)| si.abs() <= cfg.xtol * (xi.abs() + cfg.xtol));
                        let small_decrease = (ssr - ssr_new) <= cfg.ftol * ssr.max(cfg.ftol);
                        x = x_new;
                        r = r_new;
                        ssr = ssr_new;
                        lambda = (lambda / cfg.lambda_down).max(R::of(1e-14));
                        stepped = true;
                        if small_step || small_decrease {
                            status = LmStatus::Converged;
                        }
                        break;
                    }
                }
            }
            lambda *= cfg.lambda_up;
            if lambda > cfg.lambda_max {
                break;
            }
        }

        if status == LmStatus::Converged {
            break;
        }
        if !stepped {
            // Damping exhausted: either at a minimum (gradient ~ 0) or the
            // problem is degenerate. A tiny gradient counts as converged.
            let gnorm = jtr.iter().fold(R::zero(), |acc, &g| acc.max(g.abs()));
            status = if gnorm <= R::of(1e-10) * (ssr + R::of(1e-30)).sqrt() {
                LmStatus::Converged
            } else {
                LmStatus::IllConditioned
            };
            break;
        }
    }

    // Unscaled covariance from the undamped normal matrix at the solution.
    let covariance_unscaled = if jacobian(&x, &mut jac) {
        normal_equations(&jac, &r, m, n, &mut jtj, &mut jtr);
        invert(&jtj, n)
    } else {
        None
    };

    LmFit {
        params: x,
        ssr,
        covariance_unscaled,
        n_iter,
        status,
    }
}

/// Central-difference Jacobian helper for models without analytic
/// derivatives. Step is relative with an absolute floor.
pub fn numeric_jacobian<R, FR>(
    n_residuals: usize,
    rel_step: R,
    abs_step: R,
    mut residuals: FR,
) -> impl FnMut(&[R], &mut [R]) -> bool
where
    R: Real,
    FR: FnMut(&[R], &mut [R]) -> bool,
{
    let mut rp = vec![R::zero(); n_residuals];
    let mut rm = vec![R::zero(); n_residuals];
    move |x: &[R], out: &mut [R]| -> bool {
        let n = x.len();
        let mut xp = x.to_vec();
        for j in 0..n {
            let h = (x[j].abs() * rel_step).max(abs_step);
            xp[j] = x[j] + h;
            if !residuals(&xp, &mut rp) {
                return false;
            }
            xp[j] = x[j] - h;
            if !residuals(&xp, &mut rm) {
                return false;
            }
            xp[j] = x[j];
            let denom = R::of(2.0) * h;
            for i in 0..n_residuals {
                out[i * n + j] = (rp[i] - rm[i]) / denom;
            }
        }
        true
    }
}

fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn normal_equations<R: Real>(jac: &[R], r: &[R], m: usize, n: usize, jtj: &mut [R], jtr: &mut [R]) {
    for v in jtj.iter_mut() {
        *v = R::zero();
    }
    for v in jtr.iter_mut() {
        *v = R::zero();
    }
    for i in 0..m {
        let row = &jac[i * n..(i + 1) * n];
        for a in 0..n {
            jtr[a] += row[a] * r[i];
            for b in a..n {
                jtj[a * n + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            jtj[a * n + b] = jtj[b * n + a];
        }
    }
}

/// Gaussian elimination with partial pivoting; returns false when singular.
pub(crate) fn solve_in_place<R: Real>(a: &mut [R], b: &mut [R], n: usize) -> bool {
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for row in (col + 1)..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if !(best > R::zero()) || !best.is_finite() {
            return false;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for row in (col + 1)..n {
            let f = a[row * n + col] / d;
            if f == R::zero() {
                continue;
            }
            for k in col..n {
                let v = a[col * n + k];
                a[row * n + k] -= f * v;
            }
            let bc = b[col];
            b[row] -= f * bc;
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in (col + 1)..n {
            acc -= a[col * n + k] * b[k];
        }
        b[col] = acc / a[col * n + col];
    }
    true
}

fn invert<R: Real>(a: &[R], n: usize) -> Option<Vec<R>> {
    let mut out = vec![R::zero(); n * n];
    for col in 0..n {
        let mut m = a.to_vec();
        let mut e = vec![R::zero(); n];
        e[col] = R::one();
        if !solve_in_place(&mut m, &mut e, n) {
            return None;
        }
        for row in 0..n {
            out[row * n + col] = e[row];
        }
    }
    Some(out)
}
