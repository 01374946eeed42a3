use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jring::calibration::{unitary_from_hermitian, ChainModel};
use jring::config::RunConfig;
use jring::hmm::{label_agreement, HmmModel};
use jring::ring::{BiasPoint, ChargeBasis, DeviceParams, SectorConfig};
use jring::scattering::{averaged_sweep, Matrix3c, ScatteringMatrix};
use jring::spectrum::linspace;
use jring::Complex64;
use serde_json::Value;
use tempfile::TempDir;

fn jring(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jring"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

const SMALL_SPECTRUM: &str = r#"
[basis]
n_max = 4
[spectrum]
points = 21
count = 3
truncation_levels = 4
truncation_tol = 1e-2
"#;

#[test]
fn spectrum_is_deterministic_across_runs_and_threads() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "run.toml", SMALL_SPECTRUM);
    let a = jring(&["--config", "run.toml", "--out", "a", "--threads", "1", "spectrum"], tmp.path());
    let b = jring(&["--config", "run.toml", "--out", "b", "--threads", "1", "spectrum"], tmp.path());
    let c = jring(&["spectrum", "--config", "run.toml", "--out", "c", "--threads", "2"], tmp.path());
    for o in [&a, &b, &c] {
        assert_eq!(code(o), 0, "{}", stderr(o));
    }
    let csv = |d: &str| fs::read(tmp.path().join(d).join("spectrum.csv")).unwrap();
    assert_eq!(csv("a"), csv("b"));
    assert_eq!(csv("a"), csv("c"));
    let summary = |d: &str| fs::read(tmp.path().join(d).join("spectrum_summary.json")).unwrap();
    assert_eq!(summary("a"), summary("b"));

    let text = String::from_utf8(csv("a")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("axis,value,parity,fluctuator,f1,f2,f3"));
    assert_eq!(lines.count(), 21 * 4);
    let s = read_json(tmp.path().join("a/spectrum_summary.json"));
    assert_eq!(s["provenance"]["command"], "spectrum");
    assert_eq!(s["provenance"]["config"]["basis"]["n_max"], 4);
    assert_eq!(s["provenance"]["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(s["configs"].as_array().unwrap().len(), 4);
}

#[test]
fn charging_only_device_gives_flat_lines_at_e_c() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "run.toml",
        r#"
[device]
e_c = 3.98
e_j = [0.0, 0.0, 0.0]
[sectors]
parities = ["ee"]
[basis]
n_max = 3
[spectrum]
points = 11
count = 1
"#,
    );
    let o = jring(&["--config", "run.toml", "spectrum"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(tmp.path().join("spectrum.csv")).unwrap();
    for line in text.lines().skip(1) {
        let f: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((f - 3.98).abs() < 1e-9, "{line}");
    }
}

#[test]
fn smatrix_json_matches_in_memory_values() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "run.toml",
        r#"
[bias]
n_g = [0.2, 0.1, 0.0]
phi = 1.9
[basis]
n_max = 4
[smatrix]
k_states = 4
freq_start = 6.0
freq_stop = 9.0
freq_points = 31
"#,
    );
    let o = jring(&["--config", "run.toml", "--out", "out", "smatrix"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = read_json(tmp.path().join("out/smatrix.json"));
    let parsed = ScatteringMatrix::list_from_json(&doc["matrices"].to_string()).unwrap();

    let p = DeviceParams::measured_sample();
    let bias = BiasPoint::new([0.2, 0.1, 0.0], 1.9).unwrap();
    let want = averaged_sweep(&p, &bias, &SectorConfig::all_parities(), ChargeBasis::new(4), &linspace(6.0, 9.0, 31), 4)
        .unwrap();
    assert_eq!(parsed.len(), want.len());
    for (a, b) in parsed.iter().zip(&want) {
        assert!((a.entries - b.entries).norm() < 1e-12);
        assert_eq!(a.drive_freq, b.drive_freq);
    }
    let csv = fs::read_to_string(tmp.path().join("out/smatrix.csv")).unwrap();
    assert!(csv.starts_with("freq_ghz,re11,re12,re13,re21,re22,re23,re31,re32,re33,im11,"));
    assert_eq!(csv.lines().count(), 32);
}

#[test]
fn far_detuned_window_scores_like_identity() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "run.toml",
        "[basis]\nn_max = 4\n[smatrix]\nfreq_start = 0.5\nfreq_stop = 1.0\nfreq_points = 5\n",
    );
    let o = jring(&["--config", "run.toml", "smatrix"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(tmp.path().join("scores.csv")).unwrap();
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[1] < 1e-3 && (v[2] - 0.25).abs() < 1e-3 && (v[3] - 0.25).abs() < 1e-3, "{line}");
    }
}

fn peak_fidelity(dir: &Path, config: &str) -> f64 {
    write(dir, "run.toml", config);
    let o = jring(&["--config", "run.toml", "smatrix"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    read_json(dir.join("smatrix.json"))["peak_fidelity"]["fidelity"].as_f64().unwrap()
}

#[test]
fn near_symmetric_single_sector_beats_measured_four_sectors() {
    let window = "[basis]\nn_max = 5\n[smatrix]\nfreq_start = 6.5\nfreq_stop = 9.0\nfreq_points = 501\n";
    let bias = "[bias]\nn_g = [0.0, 0.6666666666666666, 0.0]\nphi = 1.7671458676442586\n";
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let single = peak_fidelity(
        a.path(),
        &format!("{window}{bias}[device]\ne_c = 3.98\ne_j = [8.1972, 8.28, 8.3628]\n[sectors]\nparities = [\"ee\"]\n"),
    );
    let four = peak_fidelity(b.path(), &format!("{window}{bias}"));
    assert!(single > four, "single {single} vs four {four}");
}

#[test]
fn fit_reproduces_stored_regression_result() {
    let tmp = TempDir::new().unwrap();
    let config = fixtures().join("fit_measured_sample.toml");
    let o = jring(&["--config", config.to_str().unwrap(), "--out", "out", "fit"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = read_json(tmp.path().join("out/fit.json"));
    let r = &doc["result"];
    let e_c = r["params"]["e_c"].as_f64().unwrap();
    let e_j: Vec<f64> = r["params"]["e_j"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(r["converged"].as_bool().unwrap());

    let reported = [3.98, 7.85, 8.28, 8.55];
    for (got, want) in std::iter::once(e_c).chain(e_j.iter().copied()).zip(reported) {
        assert!((got / want - 1.0).abs() < 5e-3, "{got} vs {want}");
    }
    let reference = read_json(fixtures().join("fit_measured_sample_reference.json"));
    assert!((e_c - reference["e_c"].as_f64().unwrap()).abs() < 1e-6);
    for (k, got) in e_j.iter().enumerate() {
        assert!((got - reference["e_j"][k].as_f64().unwrap()).abs() < 1e-6);
    }
    assert_eq!(doc["observed_dips"], 96);
    assert!(doc["provenance"]["inputs"][1]["path"].as_str().unwrap().ends_with("measured_sample_lines.csv"));
}

fn near_identity(seed: f64) -> Matrix3c {
    let h = Matrix3c::from_fn(|i, j| {
        let x = (seed + 3.0 * i as f64 + 7.0 * j as f64).sin() * 0.1;
        let y = (seed * 1.7 + 5.0 * i as f64 - 2.0 * j as f64).cos() * 0.1;
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => Complex64::new(x, 0.0),
            std::cmp::Ordering::Less => Complex64::new(x, y),
            std::cmp::Ordering::Greater => Complex64::new(0.0, 0.0),
        }
    });
    let h = Matrix3c::from_fn(|i, j| if i > j { h[(j, i)].conj() } else { h[(i, j)] });
    unitary_from_hermitian(&h)
}

#[test]
fn calibrate_corrects_on_resonant_matrices() {
    let tmp = TempDir::new().unwrap();
    let chain = ChainModel {
        a: [Complex64::from_polar(0.5, 0.3), Complex64::from_polar(1.7, -2.0), Complex64::from_polar(0.9, 1.1)],
        b: [Complex64::from_polar(2.1, 0.7), Complex64::from_polar(0.4, 2.9), Complex64::from_polar(1.2, -0.4)],
    };
    let s_off = near_identity(0.4);
    let s_on = [near_identity(1.3), near_identity(2.2)];
    let m_off = ScatteringMatrix::new(chain.forward(&s_off), 5.0);
    write(tmp.path(), "off.json", &m_off.to_json());
    let on: Vec<ScatteringMatrix> =
        s_on.iter().enumerate().map(|(k, s)| ScatteringMatrix::new(chain.forward(s), 6.5 + k as f64)).collect();
    write(tmp.path(), "on.json", &serde_json::to_string(&on).unwrap());

    let o = jring(&["calibrate", "--m-off", "off.json", "--m-on", "on.json", "--out", "cal"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let solved = ChainModel::from_json(&fs::read_to_string(tmp.path().join("cal/chain.json")).unwrap()).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let (p, p0) = (solved.products()[(i, j)], chain.products()[(i, j)]);
            assert!((p.norm() - p0.norm()).abs() < 1e-9 * p0.norm());
        }
    }
    let doc = read_json(tmp.path().join("cal/calibrated.json"));
    let corrected = ScatteringMatrix::list_from_json(&doc["matrices"].to_string()).unwrap();
    for (c, s) in corrected.iter().zip(&s_on) {
        for (x, y) in c.entries.iter().zip(s.iter()) {
            assert!((x.norm() - y.norm()).abs() < 1e-9);
        }
    }
    assert_eq!(corrected[1].drive_freq, 7.5);
}

#[test]
fn identity_chain_from_identity_data() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "off.json", &ScatteringMatrix::identity(5.0).to_json());
    let o = jring(&["calibrate", "--m-off", "off.json"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let chain = ChainModel::from_json(&fs::read_to_string(tmp.path().join("chain.json")).unwrap()).unwrap();
    let p = chain.products();
    for i in 0..3 {
        for j in 0..3 {
            assert!((p[(i, j)] - Complex64::new(1.0, 0.0)).norm() < 1e-12, "{p}");
        }
    }
}

#[test]
fn simulate_then_hmm_recovers_labels() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "run.toml", "[simulate]\nn_samples = 8000\n[hmm]\nrestarts = 1\n");
    let o = jring(&["--config", "run.toml", "--seed", "4", "--out", "sim", "simulate-timeseries"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = jring(&["--config", "run.toml", "hmm", "--input", "sim/timeseries.csv", "--out", "fit"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let column = |path: &str, col: usize| -> Vec<usize> {
        fs::read_to_string(tmp.path().join(path))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
            .collect()
    };
    let truth = column("sim/labels.csv", 1);
    let decoded = column("fit/path.csv", 2);
    let (_, acc) = label_agreement(&truth, &decoded, 4);
    assert!(acc >= 0.99, "{acc}");

    let model = HmmModel::from_json(&fs::read_to_string(tmp.path().join("fit/model.json")).unwrap()).unwrap();
    assert_eq!(model.n_states(), 4);
    let dwell = fs::read_to_string(tmp.path().join("fit/dwell.csv")).unwrap();
    assert!(dwell.starts_with("state,dwell_samples,dwell_s,count\n"));
    let summary = read_json(tmp.path().join("fit/hmm_summary.json"));
    assert_eq!(summary["converged"], true);
    assert_eq!(summary["dwell"].as_array().unwrap().len(), 4);
}

#[test]
fn seed_controls_simulation() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "run.toml", "[simulate]\nn_samples = 200\n");
    let run = |seed: &str, out: &str| {
        let o = jring(&["--config", "run.toml", "--seed", seed, "--out", out, "simulate-timeseries"], tmp.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(tmp.path().join(out).join("timeseries.csv")).unwrap()
    };
    assert_eq!(run("7", "a"), run("7", "b"));
    assert_ne!(run("7", "a"), run("8", "c"));
}

#[test]
fn single_state_hmm_runs() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "run.toml", "[simulate]\nn_samples = 300\nn_states = 1\n[hmm]\nn_states = 1\nrestarts = 1\n");
    assert_eq!(code(&jring(&["--config", "run.toml", "--out", "s", "simulate-timeseries"], tmp.path())), 0);
    let o = jring(&["--config", "run.toml", "--out", "h", "hmm", "--input", "s/timeseries.csv"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let path = fs::read_to_string(tmp.path().join("h/path.csv")).unwrap();
    assert!(path.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn config_errors_exit_2_with_field_paths() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        ("[device]\ne_c = -1.0\ne_j = [1.0, 1.0, 1.0]\n", "device.e_c"),
        ("[spectrum]\npoints = 0\n", "spectrum.points"),
        ("[hmm]\nrestarts = 0\n", "hmm.restarts"),
        ("[smatrix]\nbogus = 1\n", "bogus"),
        ("seed = \"x\"\n", "seed"),
    ];
    for (i, (text, field)) in cases.iter().enumerate() {
        let name = format!("bad{i}.toml");
        write(tmp.path(), &name, text);
        let o = jring(&["--config", &name, "spectrum"], tmp.path());
        assert_eq!(code(&o), 2, "{text}: {}", stderr(&o));
        assert!(stderr(&o).contains(field), "{text}: {}", stderr(&o));
    }
}

#[test]
fn bad_inputs_exit_2() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "bad.csv", "axis_value,freq_ghz\n0.1,abc\n");
    write(tmp.path(), "bad.json", "{\"freq_ghz\": 5.0, \"re\": [[1.0]], \"im\": [[0.0]]}");
    write(tmp.path(), "series.csv", "# dt=3e-5\nx1,x2\n1.0\n");
    let runs: [&[&str]; 5] = [
        &["fit"],
        &["fit", "--observed", "bad.csv"],
        &["calibrate", "--m-off", "bad.json"],
        &["hmm", "--input", "series.csv"],
        &["--threads", "x", "spectrum"],
    ];
    for args in runs {
        let o = jring(args, tmp.path());
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn numerical_failures_exit_3() {
    let tmp = TempDir::new().unwrap();
    // A tiny basis cannot meet a tight truncation tolerance.
    write(tmp.path(), "trunc.toml", "[basis]\nn_max = 2\n[spectrum]\npoints = 3\ntruncation_tol = 1e-9\n");
    let o = jring(&["--config", "trunc.toml", "spectrum"], tmp.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(!tmp.path().join("spectrum.csv").exists());

    // Strongly non-unitary data: the lossless chain model cannot fit it.
    let mut m = Matrix3c::identity();
    m[(0, 1)] = Complex64::new(3.0, 0.0);
    m[(2, 0)] = Complex64::new(0.0, -2.0);
    write(tmp.path(), "lossy.json", &ScatteringMatrix::new(m, 5.0).to_json());
    let o = jring(&["calibrate", "--m-off", "lossy.json"], tmp.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    // One EM iteration with zero tolerance stops at the cap.
    write(tmp.path(), "em.toml", "[simulate]\nn_samples = 500\n[hmm]\nrestarts = 1\nmax_iter = 1\ntol = 0.0\n");
    assert_eq!(code(&jring(&["--config", "em.toml", "--out", "s", "simulate-timeseries"], tmp.path())), 0);
    let o = jring(&["--config", "em.toml", "--out", "h", "hmm", "--input", "s/timeseries.csv"], tmp.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(tmp.path().join("h/model.json").exists());
}

#[test]
fn default_config_round_trips_through_toml() {
    let cfg = RunConfig::default();
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "full.toml", &cfg.to_toml());
    write(tmp.path(), "empty.toml", "");
    let run = |name: &str, out: &str| {
        let o = jring(&["--config", name, "--out", out, "simulate-timeseries"], tmp.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let doc = read_json(tmp.path().join(out).join("truth_model.json"));
        doc["provenance"]["config"].clone()
    };
    assert_eq!(run("full.toml", "a"), run("empty.toml", "b"));
    assert_eq!(run("empty.toml", "b")["device"]["e_c"], Value::from(DeviceParams::measured_sample().e_c));
}
