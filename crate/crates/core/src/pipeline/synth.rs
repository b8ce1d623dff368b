//! Seeded synthetic-experiment generators. Fixed seed means bit-identical
//! outputs; every generator also returns the ground truth it drew so
//! round-trip tests can score the fitters.

use crate::diode::{iv_curve, DiodeParams};
use crate::lifetime::{convolve_model, DecayHistogram};
use crate::modulation::{eq1_intensity, RcDrive, VoltageResponse};
use crate::pipeline::PipelineError;
use crate::wgqed::{BandEdgeModel, EmitterModel, ScanMeta, ScanTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::Serialize;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Population specification for a wide resonant-transmission scan.
#[derive(Debug, Clone, Serialize)]
pub struct PopulationSpec {
    pub count: usize,
    /// Scanned wavelength range (m); the frequency axis runs ascending.
    pub lambda_min_m: f64,
    pub lambda_max_m: f64,
    pub step_hz: f64,
    /// Linewidth range, drawn log-uniform (Hz).
    pub gamma_range_hz: (f64, f64),
    /// Coupling range of the well-coupled pool.
    pub beta_range: (f64, f64),
    /// Fraction of emitters drawn weakly coupled instead.
    pub weak_fraction: f64,
    pub weak_beta_range: (f64, f64),
    /// Fraction of (well-coupled) emitters with slow spectral diffusion.
    pub diffusive_fraction: f64,
    /// RMS center jitter of diffusive emitters, in units of their
    /// linewidth. The jitter is correlated over `diffusive_corr` samples,
    /// modelling drift slow against the dwell time but fast against the
    /// scan duration.
    pub diffusive_jitter: f64,
    /// Jitter correlation length in scan samples.
    pub diffusive_corr: f64,
    /// Fano background amplitude range.
    pub fano_amp_range: (f64, f64),
    /// Multiplicative noise level on the transmission.
    pub noise_rel: f64,
    pub band_edge: Option<BandEdgeModel<f64>>,
    /// When set, emitter centers are re-drawn until they sit at least
    /// `factor * max linewidth` apart (a warning is returned when that
    /// fails); `None` allows overlaps, with the same warning.
    pub min_spacing_factor: Option<f64>,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            count: 79,
            lambda_min_m: 944e-9,
            lambda_max_m: 950e-9,
            step_hz: 1e8,
            gamma_range_hz: (120e6, 1.66e9),
            beta_range: (0.30, 0.95),
            weak_fraction: 0.18,
            weak_beta_range: (0.030, 0.040),
            diffusive_fraction: 0.18,
            diffusive_jitter: 0.9,
            diffusive_corr: 0.7,
            fano_amp_range: (0.0, 0.06),
            noise_rel: 0.02,
            band_edge: Some(BandEdgeModel {
                lambda_c: 950.2e-9,
                suppression_db: 23.0,
                edge_width: 0.15e-9,
            }),
            min_spacing_factor: Some(3.0),
        }
    }
}

/// Ground truth for one synthesized emitter.
#[derive(Debug, Clone, Serialize)]
pub struct EmitterTruth {
    pub nu0_hz: f64,
    pub gamma_tot_hz: f64,
    pub beta: f64,
    pub fano_amp: f64,
    pub fano_phase_rad: f64,
    pub weak: bool,
    pub diffusive: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanTruth {
    pub seed: u64,
    pub emitters: Vec<EmitterTruth>,
    pub warnings: Vec<String>,
}

/// Synthesize a wide scan: band-edge envelope times the product of
/// per-emitter (baseline-normalized) transmissions, with multiplicative
/// Gaussian noise.
pub fn synthesize_scan(
    spec: &PopulationSpec,
    seed: u64,
) -> Result<(ScanTrace<f64>, ScanTruth), PipelineError> {
    if !(spec.lambda_min_m > 0.0 && spec.lambda_max_m > spec.lambda_min_m) {
        return Err(PipelineError::Validation(
            "population spec: need 0 < lambda_min < lambda_max".into(),
        ));
    }
    if !(spec.step_hz > 0.0) {
        return Err(PipelineError::Validation("population spec: step must be > 0".into()));
    }
    let f_lo = SPEED_OF_LIGHT / spec.lambda_max_m;
    let f_hi = SPEED_OF_LIGHT / spec.lambda_min_m;
    let n = ((f_hi - f_lo) / spec.step_hz).floor() as usize + 1;
    let axis: Vec<f64> = (0..n).map(|i| f_lo + spec.step_hz * i as f64).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();

    // Draw the population. Subpopulation sizes are deterministic for a
    // given count; their parameters and placements are random.
    let (g_lo, g_hi) = spec.gamma_range_hz;
    let margin = 3.0 * g_hi;
    let mut emitters: Vec<EmitterTruth> = Vec::with_capacity(spec.count);
    let spacing_req = spec.min_spacing_factor.map(|f| f * g_hi);
    let n_weak = (spec.count as f64 * spec.weak_fraction).round() as usize;
    let n_diff = (spec.count as f64 * spec.diffusive_fraction).round() as usize;
    for idx in 0..spec.count {
        let gamma = g_lo * (g_hi / g_lo).powf(rng.random::<f64>());
        let weak = idx < n_weak;
        let beta = if weak {
            let (b0, b1) = spec.weak_beta_range;
            b0 + (b1 - b0) * rng.random::<f64>()
        } else {
            let (b0, b1) = spec.beta_range;
            b0 + (b1 - b0) * rng.random::<f64>()
        };
        let diffusive = !weak && idx < n_weak + n_diff;
        let fano_amp = {
            let (a0, a1) = spec.fano_amp_range;
            a0 + (a1 - a0) * rng.random::<f64>()
        };
        let fano_phase = (rng.random::<f64>() * 2.0 - 1.0) * std::f64::consts::PI;

        let mut nu0 = 0.0;
        let mut placed = false;
        for _attempt in 0..200 {
            nu0 = f_lo + margin + (f_hi - f_lo - 2.0 * margin) * rng.random::<f64>();
            let ok = match spacing_req {
                Some(s) => emitters.iter().all(|e| (e.nu0_hz - nu0).abs() >= s),
                None => true,
            };
            if ok {
                placed = true;
                break;
            }
        }
        if !placed {
            warnings.push(format!(
                "emitter spacing below {:.3} GHz near {:.6} THz",
                spacing_req.unwrap_or(0.0) / 1e9,
                nu0 / 1e12
            ));
        }
        emitters.push(EmitterTruth {
            nu0_hz: nu0,
            gamma_tot_hz: gamma,
            beta,
            fano_amp,
            fano_phase_rad: fano_phase,
            weak,
            diffusive,
        });
    }
    if spec.min_spacing_factor.is_none() {
        let s = 3.0 * g_hi;
        let mut sorted: Vec<f64> = emitters.iter().map(|e| e.nu0_hz).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).any(|w| w[1] - w[0] < s) {
            warnings.push("emitters closer than 3x the maximum linewidth".into());
        }
    }
    emitters.sort_by(|a, b| a.nu0_hz.partial_cmp(&b.nu0_hz).unwrap());

    // Diffusive emitters carry a per-sample center track: a stationary
    // AR(1) walk with the configured RMS amplitude and correlation.
    let rho = (-1.0 / spec.diffusive_corr.max(1.0)).exp();
    let innovation = (1.0 - rho * rho).sqrt();
    let unit_normal = Normal::new(0.0, 1.0).unwrap();
    let jitters: Vec<Vec<f64>> = emitters
        .iter()
        .map(|e| {
            if e.diffusive {
                let amp = spec.diffusive_jitter * e.gamma_tot_hz;
                let mut track = Vec::with_capacity(n);
                let mut state: f64 = unit_normal.sample(&mut rng);
                for _ in 0..n {
                    track.push(amp * state);
                    state = rho * state + innovation * unit_normal.sample(&mut rng);
                }
                track
            } else {
                Vec::new()
            }
        })
        .collect();

    let models: Vec<EmitterModel<f64>> = emitters
        .iter()
        .map(|e| {
            EmitterModel::new(
                e.nu0_hz,
                e.gamma_tot_hz,
                e.beta,
                e.fano_amp,
                e.fano_phase_rad,
                0.0,
                (0.0, 1.0),
            )
            .expect("synthesized emitter is valid")
        })
        .collect();

    let normal = Normal::new(0.0, spec.noise_rel.max(1e-300)).unwrap();
    let mut values = Vec::with_capacity(n);
    for (i, &nu) in axis.iter().enumerate() {
        let lambda = SPEED_OF_LIGHT / nu;
        let mut t = match &spec.band_edge {
            Some(be) => be.envelope(lambda),
            None => 1.0,
        };
        for ((e, truth), jit) in models.iter().zip(&emitters).zip(&jitters) {
            // Skip far-detuned emitters; the lineshape is unity there.
            let reach = 100.0 * truth.gamma_tot_hz;
            if (nu - truth.nu0_hz).abs() > reach + spec.diffusive_jitter * truth.gamma_tot_hz * 5.0 {
                continue;
            }
            let base = {
                // Normalize so each emitter's off-resonant baseline is 1.
                let re = 1.0 + truth.fano_amp * truth.fano_phase_rad.cos();
                let im = truth.fano_amp * truth.fano_phase_rad.sin();
                re * re + im * im
            };
            let offset = if truth.diffusive { jit[i] } else { 0.0 };
            let contribution = e.transmission(nu - truth.nu0_hz - offset);
            t *= contribution / base;
        }
        let f = if spec.noise_rel > 0.0 {
            1.0 + normal.sample(&mut rng)
        } else {
            1.0
        };
        values.push((t * f).max(0.0));
    }

    let trace = ScanTrace::new(
        axis,
        values,
        ScanMeta {
            gate_v: 1.24,
            power_w: 0.4e-12,
        },
    )
    .map_err(|e| PipelineError::Validation(e.to_string()))?;
    Ok((
        trace,
        ScanTruth {
            seed,
            emitters,
            warnings,
        },
    ))
}

/// A gate-voltage x frequency map of transmission.
#[derive(Debug, Clone, Serialize)]
pub struct PlateauMap {
    pub v_grid: Vec<f64>,
    pub freq_grid: Vec<f64>,
    /// `values[iv][ifreq]`.
    pub values: Vec<Vec<f64>>,
}

/// Synthesize the charge-plateau map: the dip follows the Stark shift
/// inside the plateau and is absent outside it.
pub fn synthesize_plateau(
    emitter: &EmitterModel<f64>,
    v_grid: &[f64],
    freq_grid: &[f64],
    noise_rel: f64,
    seed: u64,
) -> Result<PlateauMap, PipelineError> {
    if v_grid.windows(2).any(|w| !(w[0] < w[1])) || freq_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(PipelineError::Validation("plateau grids must increase".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_rel.max(1e-300)).unwrap();
    let values = v_grid
        .iter()
        .map(|&v| {
            let resonance = emitter.stark_resonance(v);
            freq_grid
                .iter()
                .map(|&nu| {
                    let t = match resonance {
                        Some(nu0) => emitter.transmission(nu - nu0),
                        None => 1.0,
                    };
                    let f = if noise_rel > 0.0 {
                        1.0 + normal.sample(&mut rng)
                    } else {
                        1.0
                    };
                    (t * f).max(0.0)
                })
                .collect()
        })
        .collect();
    Ok(PlateauMap {
        v_grid: v_grid.to_vec(),
        freq_grid: freq_grid.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PlateauExtract {
    /// Slope of the dip ridge (Hz/V).
    pub stark_slope_hz_per_v: f64,
    pub v_first: f64,
    pub v_last: f64,
    pub n_rows_with_dip: usize,
}

/// Re-extract the Stark ridge from a plateau map: per-voltage dip
/// position (parabolic refinement) then a straight-line fit.
pub fn extract_plateau(map: &PlateauMap, min_depth: f64) -> Option<PlateauExtract> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (iv, row) in map.values.iter().enumerate() {
        let (imin, &vmin) = row
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
        if 1.0 - vmin < min_depth || imin == 0 || imin == row.len() - 1 {
            continue;
        }
        // Parabolic refinement around the minimum sample.
        let (ym, y0, yp) = (row[imin - 1], row[imin], row[imin + 1]);
        let denom = ym - 2.0 * y0 + yp;
        let shift = if denom.abs() > 1e-300 {
            0.5 * (ym - yp) / denom
        } else {
            0.0
        };
        let df = map.freq_grid[1] - map.freq_grid[0];
        pts.push((map.v_grid[iv], map.freq_grid[imin] + shift.clamp(-0.5, 0.5) * df));
    }
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let det = n * sxx - sx * sx;
    if det.abs() < 1e-300 {
        return None;
    }
    Some(PlateauExtract {
        stark_slope_hz_per_v: (n * sxy - sx * sy) / det,
        v_first: pts[0].0,
        v_last: pts[pts.len() - 1].0,
        n_rows_with_dip: pts.len(),
    })
}

/// Specification for a synthetic decay histogram.
#[derive(Debug, Clone, Serialize)]
pub struct DecaySynthSpec {
    /// Decay rate (1/s).
    pub gamma: f64,
    pub total_counts: f64,
    pub t0_s: f64,
    pub background_per_bin: f64,
    pub n_bins: usize,
    pub rep_period_s: f64,
    pub irf_center_s: f64,
    pub irf_sigma_s: f64,
}

impl Default for DecaySynthSpec {
    fn default() -> Self {
        let rep = 1.0 / 72.6e6;
        Self {
            gamma: 2.0 * std::f64::consts::PI * 460e6,
            total_counts: 3e5,
            t0_s: 4e-12,
            background_per_bin: 0.5,
            n_bins: 1024,
            rep_period_s: rep,
            irf_center_s: 1.5e-9,
            irf_sigma_s: 60e-12,
        }
    }
}

/// Poisson-sampled decay histogram with a smooth Gaussian IRF on the
/// same grid.
pub fn synthesize_decay(spec: &DecaySynthSpec, seed: u64) -> Result<DecayHistogram<f64>, PipelineError> {
    if spec.n_bins < 8 || !(spec.rep_period_s > 0.0) || !(spec.gamma > 0.0) {
        return Err(PipelineError::Validation("invalid decay synthesis spec".into()));
    }
    let n = spec.n_bins;
    let dt = spec.rep_period_s / n as f64;
    let edges: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
    let irf: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5) * dt;
            let z = (t - spec.irf_center_s) / spec.irf_sigma_s;
            1e6 * (-0.5 * z * z).exp()
        })
        .collect();
    let skeleton = DecayHistogram::new(edges.clone(), vec![0; n], irf.clone(), spec.rep_period_s)
        .map_err(|e| PipelineError::Validation(e.to_string()))?;
    let unit = convolve_model(spec.gamma, 1.0, spec.t0_s, 0.0, &skeleton);
    let unit_sum: f64 = unit.iter().sum();
    let amp = (spec.total_counts - spec.background_per_bin * n as f64).max(0.0) / unit_sum.max(1e-300);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts: Vec<u64> = unit
        .iter()
        .map(|&u| {
            let mean = (amp * u + spec.background_per_bin).max(1e-12);
            Poisson::new(mean).map(|p| p.sample(&mut rng) as u64).unwrap_or(0)
        })
        .collect();
    DecayHistogram::new(edges, counts, irf, spec.rep_period_s)
        .map_err(|e| PipelineError::Validation(e.to_string()))
}

/// Noisy I-V sweep from known diode parameters.
pub fn synthesize_iv(
    params: &DiodeParams<f64>,
    v_grid: &[f64],
    noise_rel: f64,
    noise_floor_a: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>, PipelineError> {
    let currents = iv_curve(params, v_grid)
        .map_err(|e| PipelineError::Fit(format!("iv synthesis: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    Ok(v_grid
        .iter()
        .zip(currents)
        .map(|(&v, i)| {
            let noisy = if noise_rel > 0.0 || noise_floor_a > 0.0 {
                i * (1.0 + noise_rel * normal.sample(&mut rng))
                    + noise_floor_a * normal.sample(&mut rng)
            } else {
                i
            };
            (v, noisy)
        })
        .collect())
}

/// Noisy cycle-averaged intensity sweep from a known drive.
pub fn synthesize_rc(
    drive: &RcDrive<f64>,
    response: &VoltageResponse<f64>,
    f_grid: &[f64],
    noise_rel: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    f_grid
        .iter()
        .map(|&f| {
            let clean = eq1_intensity(drive, response, f)
                .map_err(|e| PipelineError::Fit(format!("rc synthesis: {e}")))?;
            let noisy = if noise_rel > 0.0 {
                clean * (1.0 + noise_rel * normal.sample(&mut rng))
            } else {
                clean
            };
            Ok((f, noisy.max(0.0)))
        })
        .collect()
}

/// Log-spaced grid helper.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}
