//! Experiment orchestration: ingest or synthesize data, dispatch to the
//! fitters, aggregate a versioned report, and emit plot-ready files.
//!
//! Everything is deterministic: a fixed (inputs, seed, config) triple
//! produces byte-identical reports. File writes are atomic
//! (write-then-rename), and every numeric report field carries its unit
//! in the key name.

pub mod io;
pub mod report;
pub mod synth;

use crate::diode::{self, DiodeParams, IvFitConfig};
use crate::geometry::{self, PcwGeometry};
use crate::lifetime::{self, DecayFitConfig};
use crate::lineshape::{self, DetectConfig, DipFit, DipFitConfig, QualityGates, RejectReason};
use crate::modulation::{self, AttenuationLaw, RcDrive, VoltageResponse};
use crate::wgqed::{BandEdgeModel, EmitterModel, ScanTrace};
use io::KeyValues;
use serde::Serialize;
use std::path::{Path, PathBuf};
use synth::{DecaySynthSpec, PopulationSpec, SPEED_OF_LIGHT};
use thiserror::Error;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("fit failure: {0}")]
    Fit(String),
}

impl PipelineError {
    /// Process exit code: 2 for validation/input problems, 3 for fit
    /// failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Io { .. } | PipelineError::Validation(_) => 2,
            PipelineError::Fit(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExperimentKind {
    RtScan,
    PlateauMap,
    Lifetime,
    Iv,
    RcSweep,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self, PipelineError> {
        match s {
            "rt-scan" => Ok(Self::RtScan),
            "plateau-map" => Ok(Self::PlateauMap),
            "lifetime" => Ok(Self::Lifetime),
            "iv" => Ok(Self::Iv),
            "rc-sweep" => Ok(Self::RcSweep),
            other => Err(PipelineError::Validation(format!(
                "unknown experiment kind `{other}` (expected rt-scan | plateau-map | lifetime | iv | rc-sweep)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::RtScan => "rt-scan",
            Self::PlateauMap => "plateau-map",
            Self::Lifetime => "lifetime",
            Self::Iv => "iv",
            Self::RcSweep => "rc-sweep",
        }
    }
}

/// One experiment to run: measured inputs or a synthesis spec, a seed,
/// and per-module configuration overrides.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Measured data file; `None` synthesizes from the config.
    pub input: Option<PathBuf>,
    /// Companion RT scan for lifetime experiments (ratio table).
    pub pair_input: Option<PathBuf>,
    pub config: KeyValues,
    pub out_dir: PathBuf,
    pub keep_going: bool,
}

impl Experiment {
    /// Load an experiment description (`kind = ...`, `input = ...`,
    /// `seed = ...`, plus any config keys) from a key-value file.
    pub fn from_file(path: &Path, out_dir: PathBuf, keep_going: bool) -> Result<Self, PipelineError> {
        let kv = KeyValues::from_file(path)?;
        let kind = ExperimentKind::parse(kv.get("kind").ok_or_else(|| {
            PipelineError::Validation(format!("{}: missing `kind`", path.display()))
        })?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &str| -> PathBuf {
            let pb = PathBuf::from(p);
            if pb.is_absolute() {
                pb
            } else {
                base.join(pb)
            }
        };
        Ok(Self {
            kind,
            seed: kv.u64_or("seed", 0)?,
            input: kv.get("input").map(resolve),
            pair_input: kv.get("pair_input").map(resolve),
            config: kv,
            out_dir,
            keep_going,
        })
    }
}

// ------------------------------------------------------------- report model

#[derive(Debug, Clone, Serialize)]
pub struct InputStamp {
    pub path: String,
    pub fnv1a64: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
    pub config_fnv1a64: String,
    pub inputs: Vec<InputStamp>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DipRecord {
    pub center_hz: f64,
    pub wavelength_nm: f64,
    pub gamma_rt_hz: f64,
    pub sigma_gamma_rt_hz: f64,
    pub beta_eff: f64,
    pub fano_amp: f64,
    pub fano_phase_rad: f64,
    pub depth: f64,
    pub chi2_red: f64,
    pub converged: bool,
    pub passed_gates: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanSection {
    pub n_samples: usize,
    pub n_candidates: usize,
    pub dips: Vec<DipRecord>,
    pub statistics: lineshape::LinewidthSummary<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioRow {
    pub gamma_rt_hz: f64,
    pub transform_limit_hz: f64,
    pub ratio: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LifetimeSection {
    pub gamma_per_s: f64,
    pub sigma_gamma_per_s: f64,
    pub transform_limit_hz: f64,
    pub t0_s: f64,
    pub background_per_bin: f64,
    pub total_counts: u64,
    pub identifiable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<RatioRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IvSection {
    pub i_sat_a: f64,
    pub n_ideality: f64,
    pub temperature_k: f64,
    pub r_s_ohm: f64,
    pub sigma_r_s_ohm: f64,
    pub r_p_ohm: f64,
    pub sigma_r_p_ohm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RcSection {
    pub tau_rc_s: f64,
    pub sigma_tau_s: f64,
    pub cutoff_hz: f64,
    pub i0_counts_per_s: f64,
    pub attenuation_law: String,
    /// Time constant refit under the first-order low-pass law.
    pub lowpass_tau_rc_s: f64,
    pub r_s_ohm: f64,
    pub capacitance_f: f64,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeometrySection {
    pub a_m: f64,
    pub r_m: f64,
    pub rows_per_side: u32,
    pub strip_halfwidth_m: f64,
    pub f_target: f64,
    pub d_m: f64,
    pub f_at_d: f64,
    pub mc_fraction: f64,
    pub mc_sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlateauSection {
    pub stark_slope_hz_per_v: f64,
    pub v_first: f64,
    pub v_last: f64,
    pub n_rows_with_dip: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub kind: String,
    pub provenance: Provenance,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lifetime: Option<LifetimeSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iv: Option<IvSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rc: Option<RcSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometrySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plateau: Option<PlateauSection>,
}

// ------------------------------------------------------- config translation

fn population_from_config(kv: &KeyValues) -> Result<PopulationSpec, PipelineError> {
    let d = PopulationSpec::default();
    let band = if kv.f64_or("scan.band_enabled", 1.0)? != 0.0 {
        Some(
            BandEdgeModel::new(
                kv.f64_or("scan.band_lambda_c_nm", 950.2)? * 1e-9,
                kv.f64_or("scan.band_suppression_db", 23.0)?,
                kv.f64_or("scan.band_edge_width_nm", 0.15)? * 1e-9,
            )
            .map_err(|e| PipelineError::Validation(e.to_string()))?,
        )
    } else {
        None
    };
    Ok(PopulationSpec {
        count: kv.u64_or("scan.count", d.count as u64)? as usize,
        lambda_min_m: kv.f64_or("scan.lambda_min_nm", 944.0)? * 1e-9,
        lambda_max_m: kv.f64_or("scan.lambda_max_nm", 950.0)? * 1e-9,
        step_hz: kv.f64_or("scan.step_mhz", 100.0)? * 1e6,
        gamma_range_hz: (
            kv.f64_or("scan.gamma_min_mhz", 120.0)? * 1e6,
            kv.f64_or("scan.gamma_max_mhz", 1660.0)? * 1e6,
        ),
        beta_range: (
            kv.f64_or("scan.beta_min", d.beta_range.0)?,
            kv.f64_or("scan.beta_max", d.beta_range.1)?,
        ),
        weak_fraction: kv.f64_or("scan.weak_fraction", d.weak_fraction)?,
        weak_beta_range: (
            kv.f64_or("scan.weak_beta_min", d.weak_beta_range.0)?,
            kv.f64_or("scan.weak_beta_max", d.weak_beta_range.1)?,
        ),
        diffusive_fraction: kv.f64_or("scan.diffusive_fraction", d.diffusive_fraction)?,
        diffusive_jitter: kv.f64_or("scan.diffusive_jitter", d.diffusive_jitter)?,
        diffusive_corr: kv.f64_or("scan.diffusive_corr", d.diffusive_corr)?,
        fano_amp_range: (0.0, kv.f64_or("scan.fano_max", d.fano_amp_range.1)?),
        noise_rel: kv.f64_or("scan.noise_rel", d.noise_rel)?,
        band_edge: band,
        min_spacing_factor: match kv.f64_or("scan.min_spacing_factor", 3.0)? {
            f if f > 0.0 => Some(f),
            _ => None,
        },
    })
}

fn detect_from_config(kv: &KeyValues) -> Result<DetectConfig<f64>, PipelineError> {
    let d = DetectConfig::default();
    Ok(DetectConfig {
        min_prominence: kv.f64_or("detect.min_prominence", d.min_prominence)?,
        min_width_hz: kv.f64_or("detect.min_width_mhz", d.min_width_hz / 1e6)? * 1e6,
        baseline_halfwidth: kv.u64_or("detect.baseline_halfwidth", d.baseline_halfwidth as u64)?
            as usize,
        noise_snr: kv.f64_or("detect.noise_snr", d.noise_snr)?,
    })
}

fn gates_from_config(kv: &KeyValues) -> Result<QualityGates<f64>, PipelineError> {
    let d = QualityGates::default();
    Ok(QualityGates {
        depth_snr_min: kv.f64_or("gates.depth_snr_min", d.depth_snr_min)?,
        chi2_red_max: kv.f64_or("gates.chi2_red_max", d.chi2_red_max)?,
        width_rel_sigma_max: kv.f64_or("gates.width_rel_sigma_max", d.width_rel_sigma_max)?,
    })
}

fn decay_spec_from_config(kv: &KeyValues) -> Result<DecaySynthSpec, PipelineError> {
    let d = DecaySynthSpec::default();
    Ok(DecaySynthSpec {
        gamma: 2.0 * std::f64::consts::PI * kv.f64_or("lifetime.transform_limit_mhz", 460.0)? * 1e6,
        total_counts: kv.f64_or("lifetime.total_counts", d.total_counts)?,
        t0_s: kv.f64_or("lifetime.t0_ns", 0.0)? * 1e-9,
        background_per_bin: kv.f64_or("lifetime.background_per_bin", d.background_per_bin)?,
        n_bins: kv.u64_or("lifetime.n_bins", d.n_bins as u64)? as usize,
        rep_period_s: 1.0 / (kv.f64_or("lifetime.rep_rate_mhz", 72.6)? * 1e6),
        irf_center_s: kv.f64_or("lifetime.irf_center_ns", 1.5)? * 1e-9,
        irf_sigma_s: kv.f64_or("lifetime.irf_sigma_ps", 60.0)? * 1e-12,
    })
}

fn iv_params_from_config(kv: &KeyValues) -> Result<DiodeParams<f64>, PipelineError> {
    let temperature = kv.f64_or("iv.temperature_k", 1.6)?;
    let nvt = kv.f64_or("iv.nvt_v", 0.0277)?;
    DiodeParams::new(
        kv.f64_or("iv.i_sat_a", 1e-20)?,
        nvt / diode::thermal_voltage(temperature),
        temperature,
        kv.f64_or("iv.r_s_ohm", 7e3)?,
        kv.f64_or("iv.r_p_ohm", 1e10)?,
    )
    .map_err(|e| PipelineError::Validation(e.to_string()))
}

fn rc_drive_from_config(kv: &KeyValues, tau_key: &str, tau_default_us: f64) -> Result<RcDrive<f64>, PipelineError> {
    RcDrive::new(
        kv.f64_or("rc.v_ac_v", 0.100)?,
        kv.f64_or("rc.v_dc_v", 1.24)?,
        kv.f64_or(tau_key, tau_default_us)? * 1e-6,
        kv.f64_or("rc.i0", 1000.0)?,
    )
    .map_err(|e| PipelineError::Validation(e.to_string()))
}

fn rc_response_from_config(kv: &KeyValues) -> Result<VoltageResponse<f64>, PipelineError> {
    Ok(VoltageResponse::lorentzian(
        kv.f64_or("rc.width_mv", 1.0)? * 1e-3,
    ))
}

pub fn geometry_from_config(kv: &KeyValues) -> Result<PcwGeometry<f64>, PipelineError> {
    let a = kv.f64_or("geometry.a_nm", 248.0)? * 1e-9;
    let r = kv.f64_or("geometry.r_nm", 70.0)? * 1e-9;
    let rows = kv.u64_or("geometry.rows_per_side", 1)? as u32;
    match kv.get_f64("geometry.strip_halfwidth_nm")? {
        Some(h) => PcwGeometry::with_region(a, r, rows, h * 1e-9),
        None => PcwGeometry::w1(a, r, rows),
    }
    .map_err(|e| PipelineError::Validation(e.to_string()))
}

// ------------------------------------------------------------ orchestration

/// Run one experiment end to end and write `report.txt`, `report.json`
/// and the plot-data files into its output directory.
pub fn run_experiment(e: &Experiment) -> Result<Report, PipelineError> {
    std::fs::create_dir_all(&e.out_dir).map_err(|err| PipelineError::Io {
        path: e.out_dir.display().to_string(),
        message: err.to_string(),
    })?;

    let mut warnings: Vec<String> = Vec::new();
    let mut inputs: Vec<InputStamp> = Vec::new();
    let stamp = |path: &Path, inputs: &mut Vec<InputStamp>| -> Result<(), PipelineError> {
        inputs.push(InputStamp {
            path: path.display().to_string(),
            fnv1a64: io::file_stamp(path)?,
        });
        Ok(())
    };

    let mut report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: e.kind.as_str().to_string(),
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: e.seed,
            config_fnv1a64: format!("{:016x}", crate::stats::fnv1a64(e.config.canonical().as_bytes())),
            inputs: Vec::new(),
        },
        warnings: Vec::new(),
        scan: None,
        lifetime: None,
        iv: None,
        rc: None,
        geometry: None,
        plateau: None,
    };
    let mut fit_failures: Vec<String> = Vec::new();

    match e.kind {
        ExperimentKind::RtScan => {
            let trace = match &e.input {
                Some(path) => {
                    stamp(path, &mut inputs)?;
                    io::read_scan_csv(path)?
                }
                None => {
                    let spec = population_from_config(&e.config)?;
                    let (trace, truth) = synth::synthesize_scan(&spec, e.seed)?;
                    warnings.extend(truth.warnings.iter().cloned());
                    let truth_json = serde_json::to_string_pretty(&truth)
                        .map_err(|err| PipelineError::Validation(err.to_string()))?;
                    io::atomic_write(&e.out_dir.join("scan_truth.json"), &truth_json)?;
                    trace
                }
            };
            let (section, fits) = fit_scan_trace(&trace, &e.config)?;
            for f in &fits {
                if !f.converged {
                    fit_failures.push(format!(
                        "dip at {:.6} THz: {:?}",
                        f.center / 1e12,
                        f.status
                    ));
                }
            }
            write_scan_plots(&e.out_dir, &trace, &section, &fits)?;
            report.scan = Some(section);
        }
        ExperimentKind::PlateauMap => {
            let kv = &e.config;
            let nu0 = kv.f64_or("plateau.nu0_thz", 317.0)? * 1e12;
            let emitter = EmitterModel::new(
                nu0,
                kv.f64_or("plateau.gamma_mhz", 400.0)? * 1e6,
                kv.f64_or("plateau.beta", 0.9)?,
                0.0,
                0.0,
                kv.f64_or("plateau.slope_ghz_per_mv", 1.0)? * 1e12,
                (
                    kv.f64_or("plateau.v_on", 1.20)?,
                    kv.f64_or("plateau.v_off", 1.24)?,
                ),
            )
            .map_err(|err| PipelineError::Validation(err.to_string()))?;
            let v_min = kv.f64_or("plateau.v_min", 1.19)?;
            let v_max = kv.f64_or("plateau.v_max", 1.25)?;
            let v_steps = kv.u64_or("plateau.v_steps", 81)? as usize;
            let span = kv.f64_or("plateau.span_ghz", 50.0)? * 1e9;
            let f_steps = kv.u64_or("plateau.freq_steps", 701)? as usize;
            let v_grid: Vec<f64> = (0..v_steps)
                .map(|i| v_min + (v_max - v_min) * i as f64 / (v_steps - 1) as f64)
                .collect();
            let freq_grid: Vec<f64> = (0..f_steps)
                .map(|i| nu0 - span / 2.0 + span * i as f64 / (f_steps - 1) as f64)
                .collect();
            let map = synth::synthesize_plateau(
                &emitter,
                &v_grid,
                &freq_grid,
                kv.f64_or("plateau.noise_rel", 0.005)?,
                e.seed,
            )?;
            let mut rows = Vec::new();
            for (iv, &v) in map.v_grid.iter().enumerate() {
                for (ifq, &fq) in map.freq_grid.iter().enumerate() {
                    rows.push(vec![v, fq, map.values[iv][ifq]]);
                }
            }
            io::atomic_write(
                &e.out_dir.join("plateau_map.dat"),
                &report::plot_columns("v_volts freq_hz transmission", &rows),
            )?;
            match synth::extract_plateau(&map, kv.f64_or("plateau.min_depth", 0.3)?) {
                Some(ex) => {
                    report.plateau = Some(PlateauSection {
                        stark_slope_hz_per_v: ex.stark_slope_hz_per_v,
                        v_first: ex.v_first,
                        v_last: ex.v_last,
                        n_rows_with_dip: ex.n_rows_with_dip,
                    });
                }
                None => fit_failures.push("no dip ridge found in the plateau map".into()),
            }
        }
        ExperimentKind::Lifetime => {
            let hist = match &e.input {
                Some(path) => {
                    stamp(path, &mut inputs)?;
                    io::read_decay_csv(path)?
                }
                None => {
                    let spec = decay_spec_from_config(&e.config)?;
                    let hist = synth::synthesize_decay(&spec, e.seed)?;
                    io::atomic_write(&e.out_dir.join("decay.csv"), &io::decay_csv_string(&hist))?;
                    hist
                }
            };
            match lifetime::fit_decay_with(&hist, &DecayFitConfig::default()) {
                Ok(fit) => {
                    let ratio = match &e.pair_input {
                        Some(path) => {
                            stamp(path, &mut inputs)?;
                            let trace = io::read_scan_csv(path)?;
                            let (section, fits) = fit_scan_trace(&trace, &e.config)?;
                            let best = fits
                                .iter()
                                .zip(&section.dips)
                                .filter(|(_, rec)| rec.passed_gates)
                                .max_by(|a, b| a.0.depth.partial_cmp(&b.0.depth).unwrap());
                            best.map(|(dip, _)| {
                                let r = lifetime::transform_ratio(dip, &fit);
                                RatioRow {
                                    gamma_rt_hz: r.gamma_rt_hz,
                                    transform_limit_hz: r.transform_limit_hz,
                                    ratio: r.ratio,
                                    sigma: r.sigma,
                                }
                            })
                        }
                        None => None,
                    };
                    let model = lifetime::convolve_model(
                        fit.gamma,
                        fit.amplitude,
                        fit.t0,
                        fit.background,
                        &hist,
                    );
                    let centers = hist.centers();
                    let rows: Vec<Vec<f64>> = (0..hist.n_bins())
                        .map(|i| {
                            vec![
                                centers[i] * 1e9,
                                hist.counts[i] as f64,
                                model[i],
                                hist.irf[i],
                            ]
                        })
                        .collect();
                    io::atomic_write(
                        &e.out_dir.join("decay_fit.dat"),
                        &report::plot_columns("time_ns counts model irf", &rows),
                    )?;
                    report.lifetime = Some(LifetimeSection {
                        gamma_per_s: fit.gamma,
                        sigma_gamma_per_s: fit.sigma.gamma,
                        transform_limit_hz: fit.transform_limit,
                        t0_s: fit.t0,
                        background_per_bin: fit.background,
                        total_counts: hist.total_counts(),
                        identifiable: fit.identifiable,
                        ratio,
                    });
                }
                Err(err) => fit_failures.push(format!("lifetime fit: {err}")),
            }
        }
        ExperimentKind::Iv => {
            let data = match &e.input {
                Some(path) => {
                    stamp(path, &mut inputs)?;
                    io::read_xy_csv(path, io::IV_HEADER)?
                }
                None => {
                    let params = iv_params_from_config(&e.config)?;
                    let n = e.config.u64_or("iv.n_points", 60)? as usize;
                    let v_min = e.config.f64_or("iv.v_min", -1.0)?;
                    let v_max = e.config.f64_or("iv.v_max", 1.2)?;
                    let grid: Vec<f64> = (0..n)
                        .map(|i| v_min + (v_max - v_min) * i as f64 / (n - 1) as f64)
                        .collect();
                    let data = synth::synthesize_iv(
                        &params,
                        &grid,
                        e.config.f64_or("iv.noise_rel", 0.0)?,
                        e.config.f64_or("iv.noise_add_a", 0.0)?,
                        e.seed,
                    )?;
                    io::atomic_write(&e.out_dir.join("iv.csv"), &io::xy_csv_string(io::IV_HEADER, &data))?;
                    data
                }
            };
            let cfg = IvFitConfig {
                noise_floor: e.config.f64_or("iv.noise_floor_a", 1e-12)?,
                temperature: e.config.f64_or("iv.temperature_k", 1.6)?,
                ..IvFitConfig::default()
            };
            match diode::fit_iv(&data, None, &cfg) {
                Ok(fit) => {
                    let vs: Vec<f64> = data.iter().map(|&(v, _)| v).collect();
                    let model = diode::iv_curve(&fit.params, &vs)
                        .map_err(|err| PipelineError::Fit(format!("iv model eval: {err}")))?;
                    let rows: Vec<Vec<f64>> = data
                        .iter()
                        .zip(&model)
                        .map(|(&(v, i), &m)| vec![v, i, m])
                        .collect();
                    io::atomic_write(
                        &e.out_dir.join("iv_fit.dat"),
                        &report::plot_columns("v_volts i_data_a i_model_a", &rows),
                    )?;
                    report.iv = Some(IvSection {
                        i_sat_a: fit.params.i_sat,
                        n_ideality: fit.params.n_ideality,
                        temperature_k: fit.params.temperature,
                        r_s_ohm: fit.params.r_s,
                        sigma_r_s_ohm: fit.sigma.r_s,
                        r_p_ohm: fit.params.r_p,
                        sigma_r_p_ohm: fit.sigma.r_p,
                    });
                }
                Err(err) => fit_failures.push(format!("iv fit: {err}")),
            }
        }
        ExperimentKind::RcSweep => {
            let response = rc_response_from_config(&e.config)?;
            let data = match &e.input {
                Some(path) => {
                    stamp(path, &mut inputs)?;
                    io::read_xy_csv(path, io::RC_HEADER)?
                }
                None => {
                    let truth = rc_drive_from_config(&e.config, "rc.tau_us", 0.4)?;
                    let n = e.config.u64_or("rc.n_points", 40)? as usize;
                    let grid = synth::log_grid(
                        e.config.f64_or("rc.f_min_hz", 100.0)?,
                        e.config.f64_or("rc.f_max_hz", 6e7)?,
                        n,
                    );
                    let data = synth::synthesize_rc(
                        &truth,
                        &response,
                        &grid,
                        e.config.f64_or("rc.noise_rel", 0.01)?,
                        e.seed,
                    )?;
                    io::atomic_write(&e.out_dir.join("rc.csv"), &io::xy_csv_string(io::RC_HEADER, &data))?;
                    data
                }
            };
            let d0 = rc_drive_from_config(&e.config, "rc.tau0_us", 1.0)?;
            let primary = modulation::fit_tau_rc(&data, &d0, &response, AttenuationLaw::Exponential);
            match primary {
                Ok(fit) => {
                    let lowpass =
                        modulation::fit_tau_rc(&data, &d0, &response, AttenuationLaw::FirstOrderLowPass);
                    let lowpass_tau = match lowpass {
                        Ok(lp) => lp.tau_rc,
                        Err(err) => {
                            warnings.push(format!("low-pass variant fit failed: {err}"));
                            f64::NAN
                        }
                    };
                    let r_s = e.config.f64_or("rc.r_s_ohm", 7e3)?;
                    let drive_fit = RcDrive {
                        tau_rc: fit.tau_rc,
                        i0: fit.i0,
                        ..d0
                    };
                    let rows: Vec<Vec<f64>> = data
                        .iter()
                        .map(|&(f, i)| {
                            let m = modulation::eq1_intensity(&drive_fit, &response, f)
                                .unwrap_or(f64::NAN);
                            vec![f, i, m]
                        })
                        .collect();
                    io::atomic_write(
                        &e.out_dir.join("rc_fit.dat"),
                        &report::plot_columns("f_ac_hz intensity model", &rows),
                    )?;
                    report.rc = Some(RcSection {
                        tau_rc_s: fit.tau_rc,
                        sigma_tau_s: fit.sigma_tau,
                        cutoff_hz: fit.cutoff_hz,
                        i0_counts_per_s: fit.i0,
                        attenuation_law: "exponential".to_string(),
                        lowpass_tau_rc_s: lowpass_tau,
                        r_s_ohm: r_s,
                        capacitance_f: modulation::capacitance(fit.tau_rc, r_s),
                        note: modulation::CUTOFF_NOTE.to_string(),
                    });
                }
                Err(err) => fit_failures.push(format!("rc fit: {err}")),
            }
        }
    }

    // Geometry solve piggybacks on any experiment that asks for it.
    if e.config.get("geometry.fraction").is_some() {
        report.geometry = Some(solve_geometry_section(&e.config)?);
    }

    report.provenance.inputs = inputs;
    warnings.extend(fit_failures.iter().map(|f| format!("fit failure: {f}")));
    report.warnings = warnings;

    io::atomic_write(&e.out_dir.join("report.txt"), &report::render_text(&report)?)?;
    io::atomic_write(&e.out_dir.join("report.json"), &report::render_json(&report)?)?;

    if !fit_failures.is_empty() && !e.keep_going {
        return Err(PipelineError::Fit(fit_failures.join("; ")));
    }
    Ok(report)
}

/// Detect and fit every dip in a trace; records are ordered by center
/// frequency.
pub fn fit_scan_trace(
    trace: &ScanTrace<f64>,
    kv: &KeyValues,
) -> Result<(ScanSection, Vec<DipFit<f64>>), PipelineError> {
    let detect_cfg = detect_from_config(kv)?;
    let gates = gates_from_config(kv)?;
    let candidates = lineshape::detect_dips(trace, &detect_cfg);
    let fit_cfg = DipFitConfig::default();
    let mut fits: Vec<DipFit<f64>> = candidates
        .iter()
        .map(|c| lineshape::fit_dip(trace, c, None, &fit_cfg))
        .collect();
    fits.sort_by(|a, b| a.center.partial_cmp(&b.center).unwrap_or(std::cmp::Ordering::Equal));
    let statistics = lineshape::linewidth_statistics(&fits, &gates);
    let dips: Vec<DipRecord> = fits
        .iter()
        .map(|f| {
            let reason = lineshape::gate_fit(f, &gates);
            DipRecord {
                center_hz: f.center,
                wavelength_nm: SPEED_OF_LIGHT / f.center * 1e9,
                gamma_rt_hz: f.gamma_rt,
                sigma_gamma_rt_hz: f.sigma.gamma_rt,
                beta_eff: f.beta_eff,
                fano_amp: f.fano_amp,
                fano_phase_rad: f.fano_phase,
                depth: f.depth,
                chi2_red: f.chi2_red,
                converged: f.converged,
                passed_gates: reason.is_none(),
                reject_reason: reason.map(|r| {
                    match r {
                        RejectReason::Shallow => "shallow",
                        RejectReason::Noisy => "noisy",
                    }
                    .to_string()
                }),
            }
        })
        .collect();
    Ok((
        ScanSection {
            n_samples: trace.len(),
            n_candidates: candidates.len(),
            dips,
            statistics,
        },
        fits,
    ))
}

fn write_scan_plots(
    out_dir: &Path,
    trace: &ScanTrace<f64>,
    section: &ScanSection,
    fits: &[DipFit<f64>],
) -> Result<(), PipelineError> {
    // Passing linewidths vs wavelength (the survey figure).
    let rows: Vec<Vec<f64>> = section
        .dips
        .iter()
        .filter(|d| d.passed_gates)
        .map(|d| vec![d.wavelength_nm, d.gamma_rt_hz / 1e6, d.sigma_gamma_rt_hz / 1e6])
        .collect();
    io::atomic_write(
        &out_dir.join("linewidths.dat"),
        &report::plot_columns("wavelength_nm gamma_rt_mhz sigma_mhz", &rows),
    )?;
    // The first converged dip with its fitted curve (detail figure).
    if let Some(fit) = fits.iter().find(|f| f.converged) {
        let (lo, hi) = fit.window;
        let rows: Vec<Vec<f64>> = (lo..hi)
            .map(|i| {
                let nu = trace.axis[i];
                let model = {
                    let e = EmitterModel::new(
                        fit.center,
                        fit.gamma_rt,
                        fit.beta_eff.clamp(0.0, 1.0),
                        fit.fano_amp,
                        fit.fano_phase,
                        0.0,
                        (0.0, 1.0),
                    );
                    match e {
                        Ok(e) => e.transmission(nu - fit.center),
                        Err(_) => f64::NAN,
                    }
                };
                vec![(nu - fit.center) / 1e9, trace.values[i], model]
            })
            .collect();
        io::atomic_write(
            &out_dir.join("dip_example.dat"),
            &report::plot_columns("detuning_ghz transmission model", &rows),
        )?;
    }
    Ok(())
}

/// Solve the limiting-distance problem from a geometry config.
pub fn solve_geometry_section(kv: &KeyValues) -> Result<GeometrySection, PipelineError> {
    let g = geometry_from_config(kv)?;
    let f_target = kv.f64_or("geometry.fraction", 51.0 / 79.0)?;
    let d = geometry::solve_distance(&g, f_target, None)
        .map_err(|e| PipelineError::Fit(format!("geometry solve: {e}")))?;
    let f_at_d = geometry::area_fraction(&g, d);
    let mc = geometry::monte_carlo_fraction(
        &g,
        d,
        kv.u64_or("geometry.mc_check_samples", 200_000)?,
        kv.u64_or("geometry.mc_seed", 1)?,
    );
    Ok(GeometrySection {
        a_m: g.a,
        r_m: g.r,
        rows_per_side: g.rows_per_side,
        strip_halfwidth_m: g.strip_halfwidth,
        f_target,
        d_m: d,
        f_at_d,
        mc_fraction: mc.fraction,
        mc_sigma: mc.sigma,
    })
}

/// Generate a synthetic dataset for `kind` and write the data file(s)
/// into `out_dir`; returns the paths written.
pub fn simulate(
    kind: ExperimentKind,
    seed: u64,
    config: &KeyValues,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(|err| PipelineError::Io {
        path: out_dir.display().to_string(),
        message: err.to_string(),
    })?;
    let mut written = Vec::new();
    let emit = |name: &str, contents: &str, written: &mut Vec<PathBuf>| -> Result<(), PipelineError> {
        let path = out_dir.join(name);
        io::atomic_write(&path, contents)?;
        written.push(path);
        Ok(())
    };
    match kind {
        ExperimentKind::RtScan => {
            let spec = population_from_config(config)?;
            let (trace, truth) = synth::synthesize_scan(&spec, seed)?;
            emit("scan.csv", &io::scan_csv_string(&trace), &mut written)?;
            let truth_json = serde_json::to_string_pretty(&truth)
                .map_err(|err| PipelineError::Validation(err.to_string()))?;
            emit("scan_truth.json", &truth_json, &mut written)?;
        }
        ExperimentKind::PlateauMap => {
            // The plateau map is emitted by its experiment runner.
            let e = Experiment {
                kind,
                seed,
                input: None,
                pair_input: None,
                config: config.clone(),
                out_dir: out_dir.to_path_buf(),
                keep_going: true,
            };
            run_experiment(&e)?;
            written.push(out_dir.join("plateau_map.dat"));
        }
        ExperimentKind::Lifetime => {
            let spec = decay_spec_from_config(config)?;
            let hist = synth::synthesize_decay(&spec, seed)?;
            emit("decay.csv", &io::decay_csv_string(&hist), &mut written)?;
            let truth = serde_json::to_string_pretty(&spec)
                .map_err(|err| PipelineError::Validation(err.to_string()))?;
            emit("decay_truth.json", &truth, &mut written)?;
        }
        ExperimentKind::Iv => {
            let params = iv_params_from_config(config)?;
            let n = config.u64_or("iv.n_points", 60)? as usize;
            let v_min = config.f64_or("iv.v_min", -1.0)?;
            let v_max = config.f64_or("iv.v_max", 1.2)?;
            let grid: Vec<f64> = (0..n)
                .map(|i| v_min + (v_max - v_min) * i as f64 / (n - 1) as f64)
                .collect();
            let data = synth::synthesize_iv(
                &params,
                &grid,
                config.f64_or("iv.noise_rel", 0.0)?,
                config.f64_or("iv.noise_add_a", 0.0)?,
                seed,
            )?;
            emit("iv.csv", &io::xy_csv_string(io::IV_HEADER, &data), &mut written)?;
            let truth = serde_json::to_string_pretty(&params)
                .map_err(|err| PipelineError::Validation(err.to_string()))?;
            emit("iv_truth.json", &truth, &mut written)?;
        }
        ExperimentKind::RcSweep => {
            let truth = rc_drive_from_config(config, "rc.tau_us", 0.4)?;
            let response = rc_response_from_config(config)?;
            let n = config.u64_or("rc.n_points", 40)? as usize;
            let grid = synth::log_grid(
                config.f64_or("rc.f_min_hz", 100.0)?,
                config.f64_or("rc.f_max_hz", 6e7)?,
                n,
            );
            let data = synth::synthesize_rc(
                &truth,
                &response,
                &grid,
                config.f64_or("rc.noise_rel", 0.01)?,
                seed,
            )?;
            emit("rc.csv", &io::xy_csv_string(io::RC_HEADER, &data), &mut written)?;
            let truth_json = serde_json::to_string_pretty(&truth)
                .map_err(|err| PipelineError::Validation(err.to_string()))?;
            emit("rc_truth.json", &truth_json, &mut written)?;
        }
    }
    Ok(written)
}
