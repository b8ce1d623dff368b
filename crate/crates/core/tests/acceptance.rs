//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured figure (run with `--nocapture` to see
//! them). Every tolerance is pinned here, not configured elsewhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtspec_core::diode::{diode_current, fit_iv, thermal_voltage, DiodeParams, IvFitConfig};
use rtspec_core::geometry::{
    area_fraction, monte_carlo_fraction, solve_distance, PcwGeometry,
};
use rtspec_core::lifetime::{fit_decay, transform_ratio};
use rtspec_core::lineshape::{
    detect_dips, fit_dip, symmetric_fwhm_numeric, BaselineMode, DetectConfig, DipFitConfig,
};
use rtspec_core::modulation::{
    attenuated_amplitude, capacitance, eq1_intensity, fit_tau_rc, time_domain_oracle,
    AttenuationLaw, ModulationKernel, RcDrive, VoltageResponse, CUTOFF_NOTE,
};
use rtspec_core::pipeline::io::KeyValues;
use rtspec_core::pipeline::synth::{
    log_grid, synthesize_decay, synthesize_rc, synthesize_scan, DecaySynthSpec, PopulationSpec,
};
use rtspec_core::pipeline::fit_scan_trace;
use rtspec_core::wgqed::{EmitterModel, ScanMeta, ScanTrace};

/// Criterion 1: for a vanishing Fano amplitude the symmetric FWHM equals
/// the total width for 100 random draws, relative error < 1e-6; fits on
/// noiseless dense grids agree.
#[test]
fn criterion_1_fwhm_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let beta = 0.05 + 0.95 * rng.random::<f64>();
        let gamma = 1e8 * 20f64.powf(rng.random::<f64>()); // 0.1..2 GHz
        let fwhm = symmetric_fwhm_numeric(beta, gamma);
        worst = worst.max(((fwhm - gamma) / gamma).abs());
    }
    assert!(worst < 1e-6, "worst numeric FWHM error {worst:.3e}");

    // Fitted width on noiseless dense grids agrees with the generator.
    let mut worst_fit: f64 = 0.0;
    for k in 0..10u64 {
        let beta = 0.2 + 0.08 * k as f64;
        let gamma = 2e8 + 1.5e8 * k as f64;
        let e = EmitterModel::bare(3.17e14, gamma, beta);
        let n = 801;
        let step = gamma / 40.0;
        let axis: Vec<f64> = (0..n).map(|i| e.nu0 + (i as f64 - 400.0) * step).collect();
        let trace = e.transmission_spectrum(&axis).unwrap();
        let cands = detect_dips(&trace, &DetectConfig::default());
        assert_eq!(cands.len(), 1);
        let cfg = DipFitConfig::with_baseline(BaselineMode::Unit);
        let fit = fit_dip(&trace, &cands[0], None, &cfg);
        assert!(fit.converged);
        worst_fit = worst_fit.max(((fit.gamma_rt - gamma) / gamma).abs());
    }
    assert!(worst_fit < 1e-6, "worst fitted width error {worst_fit:.3e}");
    println!(
        "PASS criterion 1: FWHM identity, numeric {worst:.2e}, fitted {worst_fit:.2e} (< 1e-6)"
    );
}

/// Criterion 2: the transform-limit chain. gamma = 2 pi 460 MHz round
/// trips through a synthetic decay histogram within 2%, and against a
/// 538 MHz dip the ratio reports 1.17 +- 0.05.
#[test]
fn criterion_2_transform_limit_chain() {
    let spec = DecaySynthSpec::default(); // transform limit 460 MHz
    let hist = synthesize_decay(&spec, 202).unwrap();
    let decay = fit_decay(&hist).expect("decay fit");
    let tl = decay.transform_limit;
    assert!(
        ((tl - 460e6) / 460e6).abs() < 0.02,
        "transform limit {} MHz",
        tl / 1e6
    );

    let e = EmitterModel::new(3.17e14, 538e6, 0.85, 0.06, 0.9, 0.0, (0.0, 1.0)).unwrap();
    let n = 1201;
    let axis: Vec<f64> = (0..n).map(|i| e.nu0 + (i as f64 - 600.0) * 1e7).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(203);
    let values: Vec<f64> = axis
        .iter()
        .map(|&nu| {
            let g: f64 = rng.random::<f64>() - 0.5;
            (e.transmission(nu - e.nu0) + 0.003 * g).max(0.0)
        })
        .collect();
    let trace = ScanTrace::new(axis, values, ScanMeta::default()).unwrap();
    let cands = detect_dips(&trace, &DetectConfig::default());
    assert_eq!(cands.len(), 1);
    let dip = fit_dip(
        &trace,
        &cands[0],
        None,
        &DipFitConfig::with_baseline(BaselineMode::Unit),
    );
    assert!(dip.converged);
    let ratio = transform_ratio(&dip, &decay);
    assert!(
        (ratio.ratio - 1.17).abs() < 0.05,
        "ratio {} +- {}",
        ratio.ratio,
        ratio.sigma
    );
    println!(
        "PASS criterion 2: transform limit {:.1} MHz (460 +- 2%), ratio {:.3} (1.17 +- 0.05)",
        tl / 1e6,
        ratio.ratio
    );
}

/// Criterion 3: the RC chain. Quadrature vs time-domain oracle at 1e-6
/// over 100 Hz..60 MHz; tau recovered within 3% from 1%-noise sweeps;
/// capacitance and cutoff at their published values with the documented
/// discrepancy note preserved.
#[test]
fn criterion_3_rc_chain() {
    let drive = RcDrive::new(0.100, 1.24, 0.4e-6, 1000.0).unwrap();
    let response = VoltageResponse::lorentzian(1e-3);

    let mut worst: f64 = 0.0;
    for &f in log_grid(100.0, 60e6, 25).iter() {
        let direct = eq1_intensity(&drive, &response, f).unwrap();
        let oracle = time_domain_oracle(&drive, &response, f, ModulationKernel::Uniform, 1_000_000);
        worst = worst.max(((direct - oracle) / oracle).abs());
    }
    assert!(worst < 1e-6, "worst oracle disagreement {worst:.3e}");

    let grid = log_grid(100.0, 60e6, 40);
    let data = synthesize_rc(&drive, &response, &grid, 0.01, 303).unwrap();
    let d0 = RcDrive::new(0.100, 1.24, 1.5e-6, 800.0).unwrap();
    let fit = fit_tau_rc(&data, &d0, &response, AttenuationLaw::Exponential).unwrap();
    assert!(
        ((fit.tau_rc - 0.4e-6) / 0.4e-6).abs() < 0.03,
        "tau {} us",
        fit.tau_rc * 1e6
    );

    let c = capacitance(0.4e-6_f64, 7e3);
    assert!((c - 57.1e-12).abs() < 0.1e-12, "C = {} pF", c * 1e12);
    assert!((c * 1e12).round() == 57.0, "C rounds to {} pF", (c * 1e12).round());

    // Cutoff reported from the formula: at tau = 0.4 us it evaluates to
    // 397.9 kHz, and the fitted cutoff is exactly 1/(2 pi tau_fit). The
    // inconsistency in the published ~4 MHz figure is documented, not
    // resolved.
    let cutoff_at_0p4us = 1.0 / (2.0 * std::f64::consts::PI * 0.4e-6);
    assert!((cutoff_at_0p4us - 397_887.36).abs() < 0.01);
    let cutoff_from_fit = 1.0 / (2.0 * std::f64::consts::PI * fit.tau_rc);
    assert!((fit.cutoff_hz - cutoff_from_fit).abs() <= 1e-9 * cutoff_from_fit);
    assert!((fit.cutoff_hz - cutoff_at_0p4us).abs() < 0.03 * cutoff_at_0p4us);
    assert!(CUTOFF_NOTE.contains("397.9 kHz") && CUTOFF_NOTE.contains("3.98 MHz"));
    assert!((1.0 / (2.0 * std::f64::consts::PI * 40e-9) - 3.9789e6).abs() < 1e3);
    println!(
        "PASS criterion 3: oracle agreement {worst:.2e}, tau {:.4} us (0.4 +- 3%), C {:.1} pF, cutoff(0.4 us) {:.1} kHz (note preserved)",
        fit.tau_rc * 1e6,
        c * 1e12,
        cutoff_at_0p4us / 1e3
    );
}

/// Criterion 4: the Lorentzian window integral at A = 50 mV, w = 1 mV is
/// i0 * 0.0156 within 1e-4.
#[test]
fn criterion_4_lorentzian_window_integral() {
    let drive: RcDrive<f64> = RcDrive::new(0.100, 1.24, 0.4e-6, 1.0).unwrap();
    let response = VoltageResponse::lorentzian(1e-3);
    assert_eq!(attenuated_amplitude(&drive, 0.0), 0.050);
    let v = eq1_intensity(&drive, &response, 0.0).unwrap();
    assert!((v - 0.0156).abs() < 1e-4, "value {v}");
    // Closed form (h/A) atan(A/h).
    assert!((v - 0.015607966601).abs() < 1e-9);
    println!("PASS criterion 4: window average {v:.6} (0.0156 +- 1e-4)");
}

/// Criterion 5: geometry. Analytic and Monte Carlo fractions agree to 3
/// sigma at n = 1e6 over 20 distances; the solved limiting distance for
/// f = 51/79 sits in [25, 60] nm for the shipped region presets, with the
/// default-region value frozen at its pre-build Monte Carlo figure.
#[test]
fn criterion_5_geometry() {
    let g = PcwGeometry::default_region().unwrap();
    let mut worst_sigma: f64 = 0.0;
    for k in 0..20u64 {
        let d = 2.5e-9 * (k as f64 + 0.5);
        let f = area_fraction(&g, d);
        let mc = monte_carlo_fraction(&g, d, 1_000_000, 500 + k);
        let pull = if mc.sigma > 0.0 {
            ((mc.fraction - f) / mc.sigma).abs()
        } else {
            assert_eq!(mc.fraction, f);
            0.0
        };
        worst_sigma = worst_sigma.max(pull);
        assert!(pull <= 3.0, "d = {d}: pull {pull:.2}");
    }

    let f_target = 51.0 / 79.0;
    let d1 = solve_distance(&g, f_target, None).unwrap();
    // Frozen golden from the pre-build Monte Carlo oracle.
    assert!((d1 - 53.21e-9).abs() < 0.3e-9, "default-region d = {} nm", d1 * 1e9);
    let g2 = PcwGeometry::w1(248e-9, 70e-9, 2).unwrap();
    let d2 = solve_distance(&g2, f_target, None).unwrap();
    assert!((d2 - 35.71e-9).abs() < 0.3e-9, "two-row d = {} nm", d2 * 1e9);
    for d in [d1, d2] {
        assert!((25e-9..=60e-9).contains(&d), "d = {} nm outside [25, 60]", d * 1e9);
    }
    println!(
        "PASS criterion 5: MC agreement worst pull {worst_sigma:.2} sigma, d(default) {:.2} nm, d(two-row) {:.2} nm",
        d1 * 1e9,
        d2 * 1e9
    );
}

/// Criterion 6: the diode fit round-trips r_s = 7 kOhm and r_p = 10 GOhm
/// within 2% at T = 1.6 K without overflow, and the reverse current at
/// -1 V is -0.1 nA within 1%.
#[test]
fn criterion_6_diode() {
    let nvt = 0.0277;
    let truth = DiodeParams::new(1e-20, nvt / thermal_voltage(1.6), 1.6, 7e3, 1e10).unwrap();
    let data: Vec<(f64, f64)> = (0..60)
        .map(|k| {
            let v = -1.0 + 2.2 * k as f64 / 59.0;
            let i = diode_current(&truth, v).unwrap();
            assert!(i.is_finite());
            (v, i)
        })
        .collect();
    let fit = fit_iv(&data, None, &IvFitConfig::default()).unwrap();
    let rs_err = ((fit.params.r_s - 7e3) / 7e3).abs();
    let rp_err = ((fit.params.r_p - 1e10) / 1e10).abs();
    assert!(rs_err < 0.02, "r_s {}", fit.params.r_s);
    assert!(rp_err < 0.02, "r_p {}", fit.params.r_p);

    let i_rev = diode_current(&truth, -1.0).unwrap();
    assert!(
        ((i_rev + 0.1e-9) / 0.1e-9).abs() < 0.01,
        "I(-1 V) = {} nA",
        i_rev * 1e9
    );
    println!(
        "PASS criterion 6: r_s {:.0} Ohm (+-2%), r_p {:.3e} Ohm (+-2%), I(-1V) {:.4} nA (-0.1 +- 1%)",
        fit.params.r_s, fit.params.r_p, i_rev * 1e9
    );
}

/// Criterion 7: the population scenario. A seeded synthetic 6 nm scan
/// with 79 emitters (widths 120..1660 MHz) yields 51 +- 5 gate-passing
/// fits under the default gates.
#[test]
fn criterion_7_population_scenario() {
    let spec = PopulationSpec::default();
    assert_eq!(spec.count, 79);
    assert_eq!(spec.gamma_range_hz, (120e6, 1.66e9));
    let (trace, truth) = synthesize_scan(&spec, 1).unwrap();
    assert_eq!(truth.emitters.len(), 79);
    let (section, _) = fit_scan_trace(&trace, &KeyValues::default()).unwrap();
    let passed = section.statistics.passed;
    assert!(
        (46..=56).contains(&passed),
        "gate-passing fits: {passed} (want 51 +- 5)"
    );
    println!(
        "PASS criterion 7: {passed} gate-passing fits of {} candidates from 79 emitters (51 +- 5)",
        section.n_candidates
    );
}
