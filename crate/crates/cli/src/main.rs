//! `rtspec` — simulate and analyze resonant-transmission spectroscopy of
//! waveguide-coupled emitters.
//!
//! Exit codes: 0 success, 2 validation/input error, 3 fit failure.

use clap::{Args, Parser, Subcommand};
use rtspec_core::pipeline::io::KeyValues;
use rtspec_core::pipeline::{
    run_experiment, simulate, solve_geometry_section, Experiment, ExperimentKind, PipelineError,
    Report,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rtspec", version, about, propagate_version = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GlobalArgs {
    /// Seed for every synthetic draw; identical seeds give identical bytes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Key-value configuration file with per-module overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports, data and plot files.
    #[arg(long, global = true, default_value = "rtspec-out")]
    out_dir: PathBuf,
    /// Continue past fit failures; they are recorded as report warnings.
    #[arg(long, global = true)]
    keep_going: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (with its ground-truth sidecar).
    Simulate {
        /// rt-scan | plateau-map | lifetime | iv | rc-sweep
        kind: String,
    },
    /// Detect and fit every dip in a transmission scan CSV.
    FitScan { input: PathBuf },
    /// Fit an IRF-convolved decay histogram CSV.
    FitLifetime {
        input: PathBuf,
        /// Companion RT scan; its best dip forms the linewidth ratio.
        #[arg(long)]
        pair_scan: Option<PathBuf>,
    },
    /// Fit the p-i-n diode I-V curve CSV.
    FitIv { input: PathBuf },
    /// Fit the RC time constant from a modulation sweep CSV.
    FitRc { input: PathBuf },
    /// Photonic-crystal unit-cell geometry calculations.
    Geometry {
        #[command(subcommand)]
        action: GeometryAction,
    },
    /// Run a full experiment description file and emit its report.
    Report { experiment: PathBuf },
}

#[derive(Subcommand)]
enum GeometryAction {
    /// Solve the limiting distance d with area_fraction(d) = fraction.
    Solve {
        /// Geometry spec file (keys: a_nm, r_nm, rows_per_side,
        /// strip_halfwidth_nm).
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Target material-area fraction (defaults to 51/79).
        #[arg(long, default_value_t = 51.0 / 79.0)]
        fraction: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn load_config(global: &GlobalArgs) -> Result<KeyValues, PipelineError> {
    match &global.config {
        Some(path) => KeyValues::from_file(path),
        None => Ok(KeyValues::default()),
    }
}

fn run_kind(
    kind: ExperimentKind,
    input: Option<PathBuf>,
    pair_input: Option<PathBuf>,
    global: &GlobalArgs,
) -> Result<Report, PipelineError> {
    let e = Experiment {
        kind,
        seed: global.seed,
        input,
        pair_input,
        config: load_config(global)?,
        out_dir: global.out_dir.clone(),
        keep_going: global.keep_going,
    };
    let report = run_experiment(&e)?;
    println!("report: {}", global.out_dir.join("report.txt").display());
    Ok(report)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let global = &cli.global;
    match cli.command {
        Command::Simulate { kind } => {
            let kind = ExperimentKind::parse(&kind)?;
            let config = load_config(global)?;
            let written = simulate(kind, global.seed, &config, &global.out_dir)?;
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::FitScan { input } => {
            let report = run_kind(ExperimentKind::RtScan, Some(input), None, global)?;
            if let Some(scan) = &report.scan {
                let s = &scan.statistics;
                println!(
                    "dips: {} candidates, {} passed gates ({} shallow, {} noisy rejected)",
                    s.total, s.passed, s.rejected_shallow, s.rejected_noisy
                );
                if let (Some(lo), Some(hi)) = (s.gamma_min_hz, s.gamma_max_hz) {
                    println!(
                        "linewidths: {:.0}..{:.0} MHz, median {:.0} MHz",
                        lo / 1e6,
                        hi / 1e6,
                        s.gamma_median_hz.unwrap_or(f64::NAN) / 1e6
                    );
                }
            }
        }
        Command::FitLifetime { input, pair_scan } => {
            let report = run_kind(ExperimentKind::Lifetime, Some(input), pair_scan, global)?;
            if let Some(lt) = &report.lifetime {
                println!(
                    "gamma = {:.4e} 1/s, transform limit = {:.1} MHz",
                    lt.gamma_per_s,
                    lt.transform_limit_hz / 1e6
                );
                if let Some(r) = &lt.ratio {
                    println!(
                        "linewidth ratio = {:.3} +- {:.3} (RT {:.1} MHz / limit {:.1} MHz)",
                        r.ratio,
                        r.sigma,
                        r.gamma_rt_hz / 1e6,
                        r.transform_limit_hz / 1e6
                    );
                }
            }
        }
        Command::FitIv { input } => {
            let report = run_kind(ExperimentKind::Iv, Some(input), None, global)?;
            if let Some(iv) = &report.iv {
                println!(
                    "r_s = {:.3e} Ohm, r_p = {:.3e} Ohm, n = {:.1} at {} K",
                    iv.r_s_ohm, iv.r_p_ohm, iv.n_ideality, iv.temperature_k
                );
            }
        }
        Command::FitRc { input } => {
            let report = run_kind(ExperimentKind::RcSweep, Some(input), None, global)?;
            if let Some(rc) = &report.rc {
                println!(
                    "tau_rc = {:.4} us, cutoff = {:.1} kHz, C = {:.1} pF at r_s = {:.0} Ohm",
                    rc.tau_rc_s * 1e6,
                    rc.cutoff_hz / 1e3,
                    rc.capacitance_f * 1e12,
                    rc.r_s_ohm
                );
                println!("note: {}", rc.note);
            }
        }
        Command::Geometry { action } => match action {
            GeometryAction::Solve { spec, fraction } => {
                let mut kv = load_config(global)?;
                if let Some(path) = spec {
                    let file = KeyValues::from_file(&path)?;
                    // The geometry spec file uses bare keys.
                    for key in ["a_nm", "r_nm", "rows_per_side", "strip_halfwidth_nm"] {
                        if let Some(v) = file.get(key) {
                            kv.set(&format!("geometry.{key}"), v);
                        }
                    }
                }
                kv.set("geometry.fraction", fraction);
                let section = solve_geometry_section(&kv)?;
                std::fs::create_dir_all(&global.out_dir).map_err(|e| PipelineError::Io {
                    path: global.out_dir.display().to_string(),
                    message: e.to_string(),
                })?;
                let json = rtspec_core::pipeline::report::render_json(&section)?;
                rtspec_core::pipeline::io::atomic_write(&global.out_dir.join("geometry.json"), &json)?;
                println!(
                    "d = {:.2} nm for fraction {:.4} (a = {:.0} nm, r = {:.0} nm, {} row(s) per side)",
                    section.d_m * 1e9,
                    section.f_target,
                    section.a_m * 1e9,
                    section.r_m * 1e9,
                    section.rows_per_side
                );
                println!(
                    "monte-carlo check: f = {:.5} +- {:.5}",
                    section.mc_fraction, section.mc_sigma
                );
            }
        },
        Command::Report { experiment } => {
            let e = Experiment::from_file(&experiment, global.out_dir.clone(), global.keep_going)?;
            let report = run_experiment(&e)?;
            println!("kind: {}", report.kind);
            println!("report: {}", global.out_dir.join("report.txt").display());
            if !report.warnings.is_empty() {
                for w in &report.warnings {
                    println!("warning: {w}");
                }
            }
        }
    }
    Ok(())
}
