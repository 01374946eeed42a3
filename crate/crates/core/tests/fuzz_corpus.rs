//! Replays the checked-in fuzz seed corpora through every parser, applying the
//! same round-trip checks as the fuzz targets.

use std::fs;
use std::path::Path;

use jring::calibration::ChainModel;
use jring::config::RunConfig;
use jring::fit::{extract_dips, parse_trace_csv, ObservedLines};
use jring::hmm::{HmmModel, TimeSeries};
use jring::scattering::ScatteringMatrix;
use jring::spectrum::SweepAxis;

/// `(file name, contents)` for every seed of a target, sorted by name.
fn corpus(target: &str) -> Vec<(String, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut files: Vec<(String, String)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap())
        })
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus for {target}");
    files
}

/// Seeds named in `bad` must be rejected; all others must parse.
fn check<T, E: std::fmt::Debug>(target: &str, bad: &[&str], parse: impl Fn(&str) -> Result<T, E>, round_trip: impl Fn(&T)) {
    for (name, text) in corpus(target) {
        match parse(&text) {
            Ok(v) => {
                assert!(!bad.contains(&name.as_str()), "{target}/{name} should be rejected");
                round_trip(&v);
            }
            Err(e) => assert!(bad.contains(&name.as_str()), "{target}/{name}: {e:?}"),
        }
    }
}

#[test]
fn observed_lines_seeds() {
    check(
        "observed_lines",
        &["extra_column.csv"],
        |t| ObservedLines::from_csv(SweepAxis::Flux, t),
        |o| assert_eq!(ObservedLines::from_csv(SweepAxis::Flux, &o.to_csv()).unwrap(), *o),
    );
}

#[test]
fn trace_seeds() {
    check("trace_csv", &[], parse_trace_csv, |trace| match extract_dips(trace, 1.0, 8) {
        Ok(d) => assert!(d.len() <= 8),
        Err(e) => assert!(format!("{e}").contains("sorted"), "{e}"),
    });
    let two = parse_trace_csv(&corpus("trace_csv").into_iter().find(|(n, _)| n == "two_dips.csv").unwrap().1).unwrap();
    assert_eq!(extract_dips(&two, 3.0, 4).unwrap().len(), 2);
}

#[test]
fn timeseries_seeds() {
    check("timeseries_csv", &["bad_dt.csv"], TimeSeries::from_csv, |ts| {
        let back = TimeSeries::from_csv(&ts.to_csv()).unwrap();
        assert_eq!((back.len(), back.dim(), back.dt()), (ts.len(), ts.dim(), ts.dt()));
    });
}

#[test]
fn smatrix_seeds() {
    check("smatrix_json", &["wrong_shape.json"], ScatteringMatrix::list_from_json, |list| {
        for m in list {
            assert_eq!(ScatteringMatrix::from_json(&m.to_json()).unwrap(), *m);
        }
    });
}

#[test]
fn chain_seeds() {
    check("chain_json", &["identity_gains_only.json"], ChainModel::from_json, |c| {
        assert_eq!(ChainModel::from_json(&c.to_json()).unwrap(), *c);
    });
}

#[test]
fn hmm_model_seeds() {
    check("hmm_model_json", &[], HmmModel::from_json, |m| {
        let back = HmmModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back.trans, m.trans);
    });
}

#[test]
fn run_config_seeds() {
    check("run_config", &[], RunConfig::from_toml, |c| {
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), *c);
    });
}
