use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use jring::calibration::{apply, solve_off_resonant};
use jring::config::RunConfig;
use jring::fit::{fit_parameters, ObservedLines};
use jring::hmm::{dwell_stats, synthetic_model, train, viterbi, TimeSeries, SMATRIX_DIM};
use jring::numfmt::sig9;
use jring::ring::effective_bias;
use jring::scattering::{averaged_sweep, score, ScatteringMatrix};
use jring::spectrum::{check_truncation, sweep};
use jring::Error;

use crate::output::{self, provenance, with_provenance, write, write_json, Input};

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1: unreadable input or unwritable output.
    Io(String),
    /// Exit 2: invalid configuration or malformed input data.
    Config(String),
    /// Exit 3: a numerical method failed or did not converge.
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    pub fn from_core(e: Error, source: Option<&Path>) -> Self {
        let msg = match source {
            Some(p) => format!("{}: {e}", p.display()),
            None => e.to_string(),
        };
        if e.is_numerical() {
            Failure::Numerical(msg)
        } else if matches!(e, Error::Io(_)) {
            Failure::Io(msg)
        } else {
            Failure::Config(msg)
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Config(m) => write!(f, "invalid input: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

fn core(e: Error) -> Failure {
    Failure::from_core(e, None)
}

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    config_input: Option<Input>,
}

impl Context {
    pub fn new(cfg: RunConfig, out: PathBuf, config_input: Option<Input>) -> Result<Self, Failure> {
        fs::create_dir_all(&out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
        Ok(Self {
            cfg,
            out,
            config_input,
        })
    }

    fn provenance(&self, command: &str, data: &[Input]) -> Value {
        let inputs: Vec<Input> = self.config_input.iter().chain(data).cloned().collect();
        provenance(command, &self.cfg, &inputs)
    }

    /// Reads the data file named by a config field.
    fn read(&self, path: &Option<PathBuf>, field: &str) -> Result<(PathBuf, String, Input), Failure> {
        let path = path
            .clone()
            .ok_or_else(|| Failure::Config(format!("`{field}`: no input file given")))?;
        let text = output::read_input(&path)?;
        let input = Input::new(&path, &text);
        Ok((path, text, input))
    }
}

pub fn spectrum(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let axis = cfg.spectrum.axis_spec();
    let sectors = cfg.sectors.configs();
    let mut worst = 0.0f64;
    if cfg.spectrum.truncation_tol > 0.0 {
        let levels = cfg.spectrum.truncation_levels.min(cfg.basis.dim());
        let probes = [0, axis.values.len() / 2, axis.values.len() - 1];
        for &s in &sectors {
            for &i in &probes {
                let bias = effective_bias(axis.axis.apply(&cfg.bias, axis.values[i]), s);
                worst = worst.max(
                    check_truncation(&cfg.device, &bias, cfg.basis, levels, cfg.spectrum.truncation_tol)
                        .map_err(core)?,
                );
            }
        }
    }
    let table = sweep(&cfg.device, &cfg.bias, &axis, &sectors, cfg.basis, cfg.spectrum.count).map_err(core)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv).map_err(core)?;
    write(&ctx.out, "spectrum.csv", &String::from_utf8(csv).expect("csv is utf-8"))?;
    let summary = json!({
        "axis": table.axis,
        "fluctuators": table.fluctuators,
        "configs": table.summary(),
        "truncation": {
            "n_max": cfg.basis.n_max,
            "levels": cfg.spectrum.truncation_levels,
            "tolerance_ghz": cfg.spectrum.truncation_tol,
            "max_change_ghz": worst,
        },
    });
    write_json(&ctx.out, "spectrum_summary.json", &with_provenance(summary, &ctx.provenance("spectrum", &[])))?;
    Ok(())
}

/// `freq_ghz,re11..re33,im11..im33`, row-major.
fn smatrix_csv(matrices: &[ScatteringMatrix]) -> String {
    let mut s = String::from("freq_ghz");
    for part in ["re", "im"] {
        for i in 1..=3 {
            for j in 1..=3 {
                s.push_str(&format!(",{part}{i}{j}"));
            }
        }
    }
    s.push('\n');
    for m in matrices {
        s.push_str(&sig9(m.drive_freq));
        for part in [|z: jring::Complex64| z.re, |z: jring::Complex64| z.im] {
            for i in 0..3 {
                for j in 0..3 {
                    s.push(',');
                    s.push_str(&sig9(part(m.get(i, j))));
                }
            }
        }
        s.push('\n');
    }
    s
}

pub fn smatrix(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let freqs = cfg.smatrix.frequencies();
    let sectors = cfg.sectors.configs();
    let matrices =
        averaged_sweep(&cfg.device, &cfg.bias, &sectors, cfg.basis, &freqs, cfg.smatrix.k_states).map_err(core)?;
    let scores: Vec<_> = matrices.iter().map(|m| score(&m.entries)).collect();

    write(&ctx.out, "smatrix.csv", &smatrix_csv(&matrices))?;
    let mut csv = String::from("freq_ghz,nonreciprocity,fidelity_cw,fidelity_ccw\n");
    for (m, s) in matrices.iter().zip(&scores) {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            sig9(m.drive_freq),
            sig9(s.nonreciprocity),
            sig9(s.fidelity_cw),
            sig9(s.fidelity_ccw)
        ));
    }
    write(&ctx.out, "scores.csv", &csv)?;

    let peak = scores
        .iter()
        .zip(&matrices)
        .fold(None::<(f64, f64)>, |best, (s, m)| match best {
            Some((f, _)) if f >= s.best_fidelity() => best,
            _ => Some((s.best_fidelity(), m.drive_freq)),
        });
    let doc = json!({
        "matrices": matrices,
        "scores": scores,
        "peak_fidelity": peak.map(|(f, freq)| json!({ "fidelity": f, "freq_ghz": freq })),
    });
    write_json(&ctx.out, "smatrix.json", &with_provenance(doc, &ctx.provenance("smatrix", &[])))?;
    Ok(())
}

pub fn fit(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let (path, text, input) = ctx.read(&cfg.fit.observed, "fit.observed")?;
    let observed = ObservedLines::from_csv(cfg.fit.axis, &text).map_err(|e| Failure::from_core(e, Some(&path)))?;
    let result = fit_parameters(&observed, &cfg.fit_guess(), &cfg.fit_options()).map_err(core)?;
    let doc = json!({
        "result": result,
        "observed_dips": observed.len(),
    });
    write_json(&ctx.out, "fit.json", &with_provenance(doc, &ctx.provenance("fit", &[input])))?;
    if !result.converged {
        return Err(Failure::Numerical(format!(
            "fit stopped at the iteration cap ({}) with residual {:e} GHz; fit.json holds the last iterate",
            result.iterations, result.residual
        )));
    }
    Ok(())
}

/// Accepts a matrix, an array of matrices, or an `smatrix.json` document.
fn parse_matrices(text: &str, path: &Path) -> Result<Vec<ScatteringMatrix>, Failure> {
    let value: Value = serde_json::from_str(text).map_err(|e| Failure::from_core(e.into(), Some(path)))?;
    let list = match value {
        Value::Object(mut map) if map.contains_key("matrices") => map.remove("matrices").expect("checked"),
        other => other,
    };
    ScatteringMatrix::list_from_json(&list.to_string()).map_err(|e| Failure::from_core(e, Some(path)))
}

pub fn calibrate(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let (off_path, off_text, off_input) = ctx.read(&cfg.calibrate.m_off, "calibrate.m_off")?;
    let off = parse_matrices(&off_text, &off_path)?;
    let [m_off] = off.as_slice() else {
        return Err(Failure::Config(format!(
            "{}: expected exactly one off-resonant matrix, found {}",
            off_path.display(),
            off.len()
        )));
    };
    let mut inputs = vec![off_input];
    let on = match &cfg.calibrate.m_on {
        Some(_) => {
            let (p, t, i) = ctx.read(&cfg.calibrate.m_on, "calibrate.m_on")?;
            inputs.push(i);
            parse_matrices(&t, &p)?
        }
        None => Vec::new(),
    };

    let sol = solve_off_resonant(&m_off.entries, &cfg.calibration_options()).map_err(core)?;
    let corrected = on.iter().map(|m| apply(m, &sol.chain)).collect::<Result<Vec<_>, _>>().map_err(core)?;

    let prov = ctx.provenance("calibrate", &inputs);
    let chain: Value = serde_json::from_str(&sol.chain.to_json()).expect("chain json is valid");
    write_json(&ctx.out, "chain.json", &with_provenance(chain, &prov))?;
    let doc = json!({
        "off_resonant": ScatteringMatrix::new(sol.s_off, m_off.drive_freq),
        "residual": sol.residual,
        "iterations": sol.iterations,
        "matrices": corrected,
    });
    write_json(&ctx.out, "calibrated.json", &with_provenance(doc, &prov))?;
    Ok(())
}

pub fn hmm(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let (path, text, input) = ctx.read(&cfg.hmm.input, "hmm.input")?;
    let series = TimeSeries::from_csv(&text).map_err(|e| Failure::from_core(e, Some(&path)))?;
    let training = train(&series, &cfg.hmm_options(), cfg.seed).map_err(core)?;
    let model = &training.model;
    let path_labels = viterbi(model, &series).map_err(core)?;
    let diag: Vec<f64> = (0..model.n_states()).map(|i| model.trans[(i, i)]).collect();
    let dwell = dwell_stats(&path_labels, series.dt(), &diag).map_err(core)?;

    let prov = ctx.provenance("hmm", &[input]);
    let model_doc: Value = serde_json::from_str(&model.to_json()).expect("model json is valid");
    write_json(&ctx.out, "model.json", &with_provenance(model_doc, &prov))?;
    let mut csv = String::from("t_index,time_s,state\n");
    for (t, s) in path_labels.iter().enumerate() {
        csv.push_str(&format!("{t},{},{s}\n", sig9(t as f64 * series.dt())));
    }
    write(&ctx.out, "path.csv", &csv)?;
    write(&ctx.out, "dwell.csv", &dwell.histogram_csv())?;
    let summary = json!({
        "log_likelihood": training.log_likelihood(),
        "em_iterations": training.log_likelihoods.len() - 1,
        "converged": training.converged,
        "dwell": dwell.states.iter().map(|s| json!({
            "state": s.state,
            "dwells": s.dwells.len(),
            "tau_fit_s": s.tau_fit,
            "tau_fit_reliable": s.tau_fit_reliable,
            "tau_model_s": s.tau_model,
            "tau_model_reliable": s.tau_model_reliable,
        })).collect::<Vec<_>>(),
    });
    write_json(&ctx.out, "hmm_summary.json", &with_provenance(summary, &prov))?;
    if !training.converged {
        return Err(Failure::Numerical(format!(
            "Baum-Welch hit hmm.max_iter = {} before converging; outputs hold the last iterate",
            cfg.hmm.max_iter
        )));
    }
    Ok(())
}

pub fn simulate(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let sim = &cfg.simulate;
    // Flattened identity: re11, re22 and re33 sit at columns 0, 8 and 16.
    let base: Vec<f64> = (0..SMATRIX_DIM).map(|c| if c % 8 == 0 { 1.0 } else { 0.0 }).collect();
    let model = synthetic_model(sim.n_states, SMATRIX_DIM, sim.stay, sim.separation, sim.sigma, &base).map_err(core)?;
    let (series, labels) = model.simulate(sim.n_samples, sim.dt, cfg.seed).map_err(core)?;
    write(&ctx.out, "timeseries.csv", &series.to_csv())?;
    let mut csv = String::from("t_index,state\n");
    for (t, s) in labels.iter().enumerate() {
        csv.push_str(&format!("{t},{s}\n"));
    }
    write(&ctx.out, "labels.csv", &csv)?;
    let prov = ctx.provenance("simulate-timeseries", &[]);
    let model_doc: Value = serde_json::from_str(&model.to_json()).expect("model json is valid");
    write_json(&ctx.out, "truth_model.json", &with_provenance(model_doc, &prov))?;
    Ok(())
}
