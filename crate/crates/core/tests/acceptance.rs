//! Acceptance suite. Runs every criterion at its stated tolerance and runtime
//! budget, printing one PASS/FAIL line each; exits nonzero if any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use jring::calibration::{apply, solve_off_resonant, unitary_from_hermitian, CalibrationOptions, ChainModel};
use jring::fit::{fit_parameters, predict_lines, FitOptions, FitResult, ObservedLines};
use jring::hmm::{
    baum_welch, dwell_stats, label_agreement, random_init, synthetic_model, train, viterbi,
    BaumWelchOptions, HmmOptions, MONOTONE_TOL,
};
use jring::ring::{build_hamiltonian, BiasPoint, ChargeBasis, DeviceParams, Parity, SectorConfig};
use jring::scattering::{
    averaged_sweep, gyrator, ideal_circulator, nonreciprocity, fidelity, score, Direction, Matrix3c,
    ResonanceSet,
};
use jring::spectrum::{eigenvalues, linspace, sweep, AxisSpec, SweepAxis};
use jring::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sample_bias(n_g: [f64; 3], phi: f64) -> BiasPoint {
    BiasPoint::new(n_g, phi).unwrap()
}

fn metric_constants() -> Outcome {
    let ideal = ideal_circulator(Direction::Cw);
    let n_ideal = nonreciprocity(&ideal);
    let f_ideal = fidelity(&ideal, Direction::Cw);
    let n_gyr = nonreciprocity(&gyrator());
    let ok = (n_ideal - 0.75f64.sqrt()).abs() < 1e-12
        && (f_ideal - 1.0).abs() < 1e-12
        && (n_gyr - 1.0).abs() < 1e-12;
    outcome(
        ok,
        format!("N(ideal) = {n_ideal:.15}, F(ideal) = {f_ideal:.15}, N(gyrator) = {n_gyr:.15}"),
    )
}

fn single_state_unitarity() -> Outcome {
    let params = DeviceParams::measured_sample();
    let basis = ChargeBasis::new(6);
    let mut worst: f64 = 0.0;
    for (n_g, phi) in [([0.0; 3], PI / 2.0), ([0.2, 0.1, 0.0], 1.9), ([0.4, -0.3, 0.1], 2.8)] {
        for parity in Parity::ALL {
            let set =
                ResonanceSet::compute(&params, &sample_bias(n_g, phi), SectorConfig::new(parity), basis, 1)
                    .unwrap();
            let f0 = set.resonances[0].freq;
            for f in linspace(f0 - 1.0, f0 + 1.0, 200) {
                worst = worst.max(set.smatrix(f).unwrap().unitarity_defect());
            }
        }
    }
    outcome(worst < 1e-10, format!("max ||S^dagger S - 1|| = {worst:e} over 200 points, 12 sectors/biases"))
}

fn zero_flux_reciprocity() -> Outcome {
    let params = DeviceParams::measured_sample();
    let freqs = linspace(4.0, 10.0, 121);
    let mut worst: f64 = 0.0;
    let grid = [0.0, 0.25, 0.5, 0.8];
    for &g1 in &grid {
        for &g2 in &grid {
            for g3 in [0.0, 0.3] {
                let bias = sample_bias([g1, g2, g3], 0.0);
                for parity in Parity::ALL {
                    let ms = averaged_sweep(&params, &bias, &[SectorConfig::new(parity)], ChargeBasis::new(5), &freqs, 8)
                        .unwrap();
                    for m in ms {
                        worst = worst.max(nonreciprocity(&m.entries));
                    }
                }
            }
        }
    }
    outcome(worst < 1e-8, format!("max N at phi = 0 = {worst:e} over 32 biases x 4 sectors x 121 freqs"))
}

fn spectrum_regression() -> Outcome {
    let params = DeviceParams::new(3.98, [7.85, 8.28, 8.55], jring::ring::DEFAULT_GAMMA_GHZ, 0).unwrap();
    let configs = SectorConfig::product(&Parity::ALL, &[[0.0; 3], [0.11, -0.03, 0.04]]);
    let basis = ChargeBasis::new(6);
    let base = sample_bias([0.0; 3], 0.0);

    let period = AxisSpec::grid(SweepAxis::Flux, 0.0, 2.0 * PI, 121);
    let table = sweep(&params, &base, &period, &configs, basis, 1).unwrap();
    let lowest: Vec<f64> = table.rows.iter().map(|r| r.frequencies[0]).collect();
    let lo = lowest.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = lowest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let band_ok = lo <= 6.0 && hi >= 7.0;

    let operating = AxisSpec::new(SweepAxis::Flux, vec![1.9]);
    let cluster = sweep(&params, &base, &operating, &configs, basis, 2).unwrap();
    let spread = |k: usize| {
        let f: Vec<f64> = cluster.rows.iter().map(|r| r.frequencies[k]).collect();
        f.iter().copied().fold(f64::NEG_INFINITY, f64::max) - f.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let (s1, s2) = (spread(0), spread(1));
    outcome(
        band_ok && s1 <= 0.4,
        format!(
            "lowest-line band [{lo:.3}, {hi:.3}] GHz; 8-config spread at phi = 1.9: \
             {:.0} MHz (first line), {:.0} MHz (second line, informational)",
            s1 * 1e3,
            s2 * 1e3
        ),
    )
}

fn fit_round_trip() -> Outcome {
    let truth = DeviceParams::measured_sample();
    let base = sample_bias([0.2, 0.1, 0.0], 0.0);
    let axis = AxisSpec::grid(SweepAxis::Flux, 0.0, 2.0 * PI, 16);
    let table = predict_lines(&truth, &base, &axis, &SectorConfig::all_parities(), ChargeBasis::new(6), 3).unwrap();
    let mut observed = ObservedLines::from_table(&table);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.001).unwrap();
    for p in &mut observed.points {
        for f in &mut p.freqs {
            *f += noise.sample(&mut rng);
        }
    }
    let mut guess = truth;
    guess.e_c *= 1.03;
    guess.e_j = [truth.e_j[0] * 0.97, truth.e_j[1] * 1.02, truth.e_j[2] * 0.98];
    let opts = FitOptions {
        basis: ChargeBasis::new(5),
        count: 3,
        restarts: 0,
        ..Default::default()
    };
    let r = fit_parameters(&observed, &FitResult::guess(guess, base.n_g, [0.0; 3]), &opts).unwrap();
    let rel = |a: f64, b: f64| (a / b - 1.0).abs();
    let errs = [
        rel(r.params.e_c, truth.e_c),
        rel(r.params.e_j[0], truth.e_j[0]),
        rel(r.params.e_j[1], truth.e_j[1]),
        rel(r.params.e_j[2], truth.e_j[2]),
    ];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    outcome(
        worst < 5e-3,
        format!(
            "{} dips, E_C = {:.4}, E_J = {:.4?}; worst relative error {worst:.2e}; residual {:.2} MHz, {} iterations",
            observed.len(),
            r.params.e_c,
            r.params.e_j,
            r.residual * 1e3,
            r.iterations
        ),
    )
}

fn flux_periodicity() -> Outcome {
    let params = DeviceParams::measured_sample();
    let basis = ChargeBasis::new(6);
    let n = 48;
    let mut worst: f64 = 0.0;
    for n_g in [[0.0; 3], [0.23, -0.17, 0.4]] {
        for k in 0..n {
            let phi = 2.0 * PI * k as f64 / n as f64;
            for parity in Parity::ALL {
                let sector = SectorConfig::new(parity);
                let eig = |phi: f64| {
                    let b = jring::ring::effective_bias(sample_bias(n_g, phi), sector);
                    eigenvalues(&build_hamiltonian(&params, &b, basis).unwrap(), 8).unwrap()
                };
                let (a, b) = (eig(phi), eig(phi + 2.0 * PI));
                for (x, y) in a.iter().zip(&b) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    outcome(worst < 1e-9, format!("max |E(phi) - E(phi + 2 pi)| = {worst:e} GHz, lowest 8 levels, 384 table rows"))
}

/// Peak best-direction fidelity over a gate/flux/frequency grid.
fn peak_fidelity(params: &DeviceParams, sectors: &[SectorConfig]) -> (f64, [f64; 4]) {
    let freqs = linspace(4.0, 9.5, 1101);
    let gates = [0.0, 1.0 / 3.0, 2.0 / 3.0];
    let mut best = (f64::NEG_INFINITY, [0.0; 4]);
    for &g1 in &gates {
        for &g2 in &gates {
            for k in 0..32 {
                let phi = 2.0 * PI * k as f64 / 32.0;
                let ms = averaged_sweep(params, &sample_bias([g1, g2, 0.0], phi), sectors, ChargeBasis::new(5), &freqs, 8)
                    .unwrap();
                for m in ms {
                    let f = score(&m.entries).best_fidelity();
                    if f > best.0 {
                        best = (f, [g1, g2, phi, m.drive_freq]);
                    }
                }
            }
        }
    }
    best
}

fn asymmetry_ordering() -> Outcome {
    let symmetric = 8.28;
    let near = DeviceParams::new(3.98, [0.99 * symmetric, symmetric, 1.01 * symmetric], jring::ring::DEFAULT_GAMMA_GHZ, 0)
        .unwrap();
    let measured = DeviceParams::measured_sample();
    let (f_single, at_single) = peak_fidelity(&near, &[SectorConfig::new(Parity::Ee)]);
    let (f_four, at_four) = peak_fidelity(&measured, &SectorConfig::all_parities());
    outcome(
        f_single > f_four,
        format!(
            "peak F: single sector, 1% asymmetry = {f_single:.4} at (ng1, ng2, phi, f) = {at_single:.3?}; \
             four sectors, measured asymmetry = {f_four:.4} at {at_four:.3?}"
        ),
    )
}

fn hmm_recovery() -> Outcome {
    let dim = 18;
    let base: Vec<f64> = (0..dim).map(|i| if i % 8 == 0 { 1.0 } else { 0.0 }).collect();
    let truth = synthetic_model(4, dim, 0.85, 10.0, 0.01, &base).unwrap();
    let dt = 30e-6;
    let (series, labels) = truth.simulate(32_768, dt, 1).unwrap();
    let opts = HmmOptions {
        n_states: 4,
        restarts: 1,
        ..Default::default()
    };
    let fit = train(&series, &opts, 1).unwrap();
    let path = viterbi(&fit.model, &series).unwrap();
    let (_, accuracy) = label_agreement(&labels, &path, 4);
    let diag: Vec<f64> = (0..4).map(|i| fit.model.trans[(i, i)]).collect();
    let diag_ok = diag.iter().all(|d| (d - 0.85).abs() <= 0.02);
    let stats = dwell_stats(&path, dt, &diag).unwrap();
    let taus: Vec<f64> = stats.states.iter().map(|s| s.tau_fit.unwrap_or(f64::NAN)).collect();
    let tau_ok = taus.iter().all(|t| (t / 200e-6 - 1.0).abs() <= 0.1);
    outcome(
        accuracy >= 0.99 && diag_ok && tau_ok,
        format!(
            "accuracy {:.4}; diagonal {:.4?}; tau_fit {:.1?} us",
            accuracy,
            diag,
            taus.iter().map(|t| t * 1e6).collect::<Vec<_>>()
        ),
    )
}

fn random_unitary_near_identity(rng: &mut ChaCha8Rng, scale: f64) -> Matrix3c {
    let mut h = Matrix3c::zeros();
    for i in 0..3 {
        h[(i, i)] = Complex64::new(scale * rng.random_range(-1.0..1.0), 0.0);
        for j in i + 1..3 {
            let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale;
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    unitary_from_hermitian(&h)
}

fn calibration_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_product: f64 = 0.0;
    let mut worst_s: f64 = 0.0;
    for _ in 0..50 {
        let s0 = random_unitary_near_identity(&mut rng, 0.1);
        let gain = |rng: &mut ChaCha8Rng| Complex64::from_polar(rng.random_range(0.3..3.0), rng.random_range(-PI..PI));
        let chain0 = ChainModel {
            a: [gain(&mut rng), gain(&mut rng), gain(&mut rng)],
            b: [gain(&mut rng), gain(&mut rng), gain(&mut rng)],
        };
        let m = chain0.forward(&s0);
        let sol = solve_off_resonant(&m, &CalibrationOptions::default()).unwrap();
        let p = sol.chain.products();
        // Gain products are fixed up to the gauge that makes diag(S) real and positive.
        let p0 = Matrix3c::from_fn(|i, j| chain0.products()[(i, j)] * s0[(i, i)] / s0[(i, i)].norm());
        for i in 0..3 {
            for j in 0..3 {
                let scale = p0[(i, j)].norm();
                worst_product = worst_product.max((p[(i, j)].norm() - scale).abs() / scale);
                let x = p[(i, j)] * p[(j, i)];
                let x0 = p0[(i, j)] * p0[(j, i)];
                worst_product = worst_product.max((x - x0).norm() / x0.norm());
            }
            worst_product = worst_product.max((p[(i, i)] - p0[(i, i)]).norm() / p0[(i, i)].norm());
        }
        let corrected = apply(&jring::scattering::ScatteringMatrix::new(m, 0.0), &sol.chain).unwrap();
        for (a, b) in corrected.entries.iter().zip(s0.iter()) {
            worst_s = worst_s.max((a.norm() - b.norm()).abs());
        }
    }
    outcome(
        worst_product < 1e-6 && worst_s < 1e-6,
        format!("50 trials: worst relative product error {worst_product:e}; worst |S| entry error {worst_s:e}"),
    )
}

fn em_monotonicity() -> Outcome {
    let base = vec![0.0; 4];
    let truth = synthetic_model(4, 4, 0.85, 3.0, 1.0, &base).unwrap();
    let (series, _) = truth.simulate(2000, 30e-6, 3).unwrap();
    let opts = BaumWelchOptions { tol: 0.0, max_iter: 100 };
    let mut worst_drop: f64 = 0.0;
    let mut steps = 0usize;
    let mut failures = Vec::new();
    for seed in 0..100 {
        let init = random_init(&series, 4, seed).unwrap();
        match baum_welch(&series, &init, &opts) {
            Ok(t) => {
                for w in t.log_likelihoods.windows(2) {
                    worst_drop = worst_drop.max(w[0] - w[1]);
                    steps += 1;
                }
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    outcome(
        failures.is_empty() && worst_drop <= MONOTONE_TOL,
        format!(
            "100 random starts, {steps} EM steps; largest decrease {worst_drop:e}{}",
            if failures.is_empty() { String::new() } else { format!("; failures: {failures:?}") }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("1 metric constants", Duration::from_secs(1), metric_constants),
        ("2 single-state unitarity", Duration::from_secs(10), single_state_unitarity),
        ("3 zero-flux reciprocity", Duration::from_secs(60), zero_flux_reciprocity),
        ("4 spectrum band and clusters", Duration::from_secs(60), spectrum_regression),
        ("5 fit round trip", Duration::from_secs(300), fit_round_trip),
        ("6 flux periodicity", Duration::from_secs(60), flux_periodicity),
        ("7 asymmetry ordering", Duration::from_secs(120), asymmetry_ordering),
        ("8 HMM recovery", Duration::from_secs(120), hmm_recovery),
        ("9 calibration round trip", Duration::from_secs(10), calibration_round_trip),
        ("10 EM monotonicity", Duration::from_secs(300), em_monotonicity),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run);
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= budget, o.detail),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {detail} [{:.2} s, budget {} s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
