//! Reflection-dip extraction and least-squares fitting of device parameters to
//! observed transition lines.

mod dips;
mod lines;

pub use dips::{extract_dips, parse_trace_csv};
pub use lines::ObservedLines;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, NelderMeadOptions};
use crate::ring::{BiasPoint, ChargeBasis, DeviceParams, Parity, SectorConfig};
use crate::spectrum::{sweep, transition_frequencies, AxisSpec, SweepAxis, SweepTable};

/// Model line families for the given configurations along an axis.
///
/// `offsets` are the base gate charges added to the applied bias; along a gate
/// axis the swept value is added to the corresponding offset.
pub fn predict_lines(
    params: &DeviceParams,
    base_bias: &BiasPoint,
    axis: &AxisSpec,
    configs: &[SectorConfig],
    basis: ChargeBasis,
    count: usize,
) -> Result<SweepTable> {
    let shifted = AxisSpec::new(
        axis.axis,
        axis.values
            .iter()
            .map(|&v| match axis.axis.gate_index() {
                None => v,
                Some(i) => base_bias.n_g[i] + v,
            })
            .collect(),
    );
    let mut table = sweep(params, base_bias, &shifted, configs, basis, count)?;
    for (row, chunk_value) in table
        .rows
        .iter_mut()
        .zip(axis.values.iter().flat_map(|&v| std::iter::repeat_n(v, configs.len())))
    {
        row.value = chunk_value;
    }
    Ok(table)
}

/// Which parameters the fitter may move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreeParams {
    pub e_c: bool,
    pub e_j: [bool; 3],
    /// Base gate offsets of islands 1 and 2 (island 3 is pinned to zero).
    pub n_g_offset: [bool; 2],
    /// Fluctuator offsets of islands 1 and 2 (island 3 is pinned to zero).
    pub fluctuator: [bool; 2],
}

impl Default for FreeParams {
    fn default() -> Self {
        Self {
            e_c: true,
            e_j: [true; 3],
            n_g_offset: [false; 2],
            fluctuator: [false; 2],
        }
    }
}

impl FreeParams {
    pub fn count(&self) -> usize {
        let flags = [self.e_c]
            .iter()
            .chain(&self.e_j)
            .chain(&self.n_g_offset)
            .chain(&self.fluctuator)
            .filter(|&&b| b)
            .count();
        flags
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Flux (radians) at which gate-axis data were taken; ignored for flux sweeps.
    pub phi: f64,
    pub basis: ChargeBasis,
    /// Transitions predicted per configuration.
    pub count: usize,
    pub free: FreeParams,
    /// Fit a second charge configuration shifted by the fluctuator offset.
    pub fluctuator_states: bool,
    /// Additional starts from jittered initial guesses.
    pub restarts: usize,
    /// Relative jitter of energies (and absolute jitter of gate offsets).
    pub jitter: f64,
    pub max_iter: usize,
    pub stall_iter: usize,
    /// GHz.
    pub stall_tol: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            phi: 0.0,
            basis: ChargeBasis::default(),
            count: 4,
            free: FreeParams::default(),
            fluctuator_states: false,
            restarts: 2,
            jitter: 0.02,
            max_iter: 5000,
            stall_iter: 50,
            stall_tol: 1e-6,
            seed: 0,
        }
    }
}

/// Parameters with gate offsets and fluctuator shift; used both as the
/// starting guess and as the fitted result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: DeviceParams,
    pub n_g_offset: [f64; 3],
    pub fluctuator_delta: [f64; 3],
    /// RMS distance from each observed dip to its nearest model line, GHz.
    pub residual: f64,
    pub iterations: usize,
    /// True when the stall criterion was met; false on hitting the iteration cap.
    pub converged: bool,
}

impl FitResult {
    pub fn guess(params: DeviceParams, n_g_offset: [f64; 3], fluctuator_delta: [f64; 3]) -> Self {
        Self {
            params,
            n_g_offset,
            fluctuator_delta,
            residual: f64::NAN,
            iterations: 0,
            converged: false,
        }
    }

    fn configs(&self, two_states: bool) -> Vec<SectorConfig> {
        let mut fl = vec![[0.0; 3]];
        if two_states {
            fl.push(self.fluctuator_delta);
        }
        SectorConfig::product(&Parity::ALL, &fl)
    }
}

/// One-directional Chamfer cost: RMS over observed dips of the distance to the
/// nearest predicted line at the same axis value.
pub fn line_cost(
    observed: &ObservedLines,
    guess: &FitResult,
    opts: &FitOptions,
) -> Result<f64> {
    let configs = guess.configs(opts.fluctuator_states);
    let mut sum = 0.0;
    let mut n = 0usize;
    for point in &observed.points {
        let bias = applied_bias(observed.axis, point.axis_value, guess, opts.phi);
        let mut lines = Vec::with_capacity(configs.len() * opts.count);
        for &c in &configs {
            lines.extend(transition_frequencies(&guess.params, &bias, c, opts.basis, opts.count)?);
        }
        for &f in &point.freqs {
            let d = lines
                .iter()
                .map(|l| (l - f).abs())
                .fold(f64::INFINITY, f64::min);
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("observed", "no observed dips"));
    }
    Ok((sum / n as f64).sqrt())
}

fn applied_bias(axis: SweepAxis, value: f64, guess: &FitResult, phi: f64) -> BiasPoint {
    let base = BiasPoint {
        n_g: guess.n_g_offset,
        phi,
    };
    match axis {
        SweepAxis::Flux => axis.apply(&base, value),
        a => a.offset(&base, value),
    }
}

/// Packing of the free parameters into the optimiser's vector.
struct Packing {
    free: FreeParams,
    template: FitResult,
}

impl Packing {
    fn pack(&self, r: &FitResult) -> Vec<f64> {
        let f = &self.free;
        let mut v = Vec::new();
        if f.e_c {
            v.push(r.params.e_c);
        }
        for i in 0..3 {
            if f.e_j[i] {
                v.push(r.params.e_j[i]);
            }
        }
        for i in 0..2 {
            if f.n_g_offset[i] {
                v.push(r.n_g_offset[i]);
            }
        }
        for i in 0..2 {
            if f.fluctuator[i] {
                v.push(r.fluctuator_delta[i]);
            }
        }
        v
    }

    fn unpack(&self, v: &[f64]) -> FitResult {
        let f = &self.free;
        let mut r = self.template.clone();
        let mut it = v.iter().copied();
        if f.e_c {
            r.params.e_c = it.next().unwrap();
        }
        for i in 0..3 {
            if f.e_j[i] {
                r.params.e_j[i] = it.next().unwrap();
            }
        }
        for i in 0..2 {
            if f.n_g_offset[i] {
                r.n_g_offset[i] = it.next().unwrap();
            }
        }
        for i in 0..2 {
            if f.fluctuator[i] {
                r.fluctuator_delta[i] = it.next().unwrap();
            }
        }
        r
    }

    /// Initial simplex steps: 5% of energies, 0.05 Cooper pairs for offsets.
    fn steps(&self, r: &FitResult) -> Vec<f64> {
        let f = &self.free;
        let mut s = Vec::new();
        if f.e_c {
            s.push(0.05 * r.params.e_c);
        }
        for i in 0..3 {
            if f.e_j[i] {
                s.push(0.05 * r.params.e_j[i].max(0.1));
            }
        }
        let n_offsets = f.n_g_offset.iter().chain(&f.fluctuator).filter(|&&b| b).count();
        s.extend(std::iter::repeat_n(0.05, n_offsets));
        s
    }
}

fn jittered(start: &FitResult, free: &FreeParams, jitter: f64, rng: &mut ChaCha8Rng) -> FitResult {
    let mut r = start.clone();
    let mut rel = |x: f64| x * (1.0 + jitter * rng.random_range(-1.0..1.0));
    if free.e_c {
        r.params.e_c = rel(r.params.e_c);
    }
    for i in 0..3 {
        if free.e_j[i] {
            r.params.e_j[i] = rel(r.params.e_j[i]);
        }
    }
    for i in 0..2 {
        if free.n_g_offset[i] {
            r.n_g_offset[i] += jitter * rng.random_range(-1.0..1.0);
        }
        if free.fluctuator[i] {
            r.fluctuator_delta[i] += jitter * rng.random_range(-1.0..1.0);
        }
    }
    r
}

/// Fits device parameters (and optionally gate / fluctuator offsets) to the
/// observed dips by Nelder-Mead on [`line_cost`], from `initial` plus
/// `opts.restarts` jittered starts. The best run is returned; its
/// `converged` flag reports whether that run met the stall criterion.
pub fn fit_parameters(
    observed: &ObservedLines,
    initial: &FitResult,
    opts: &FitOptions,
) -> Result<FitResult> {
    initial.params.validate()?;
    if opts.count == 0 {
        return Err(Error::invalid("fit.count", "must be >= 1"));
    }
    let n_free = opts.free.count();
    if n_free == 0 {
        return Err(Error::invalid("fit.free", "no free parameters"));
    }
    let n_obs = observed.len();
    if n_obs < n_free {
        return Err(Error::invalid(
            "observed",
            format!("{n_obs} observed dips cannot constrain {n_free} free parameters"),
        ));
    }

    let mut template = initial.clone();
    template.n_g_offset[2] = 0.0;
    template.fluctuator_delta[2] = 0.0;
    let packing = Packing {
        free: opts.free,
        template: template.clone(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![template.clone()];
    for _ in 0..opts.restarts {
        starts.push(jittered(&template, &opts.free, opts.jitter, &mut rng));
    }

    let nm = NelderMeadOptions {
        max_iter: opts.max_iter,
        stall_iter: opts.stall_iter,
        stall_tol: opts.stall_tol,
    };
    let objective = |v: &[f64]| -> f64 {
        let g = packing.unpack(v);
        if g.params.validate().is_err() {
            return f64::INFINITY;
        }
        line_cost(observed, &g, opts).unwrap_or(f64::INFINITY)
    };

    let runs: Vec<_> = starts
        .par_iter()
        .map(|s| {
            let x0 = packing.pack(s);
            nelder_mead(objective, &x0, &packing.steps(s), nm)
        })
        .collect();
    let best = runs
        .into_iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start");
    if !best.value.is_finite() {
        return Err(Error::Numerical("fit cost is not finite at any vertex".into()));
    }

    let mut result = packing.unpack(&best.x);
    result.residual = best.value;
    result.iterations = best.iterations;
    result.converged = best.converged;
    Ok(canonical_labels(result, observed, opts))
}

/// Cyclically relabels islands so that junction 1 is the weakest, if the
/// relabelled model reproduces the observed lines equally well.
///
/// A cyclic shift of island labels permutes the junctions and gate offsets
/// together; whether the reduced Hamiltonian is invariant under it is checked
/// numerically rather than assumed.
fn canonical_labels(result: FitResult, observed: &ObservedLines, opts: &FitOptions) -> FitResult {
    let e = result.params.e_j;
    let shift = (0..3).min_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap_or(0);
    if shift == 0 || observed.axis != SweepAxis::Flux {
        return result;
    }
    let rot = |v: [f64; 3]| [v[shift], v[(shift + 1) % 3], v[(shift + 2) % 3]];
    let mut cand = result.clone();
    cand.params.e_j = rot(e);
    let pin = |v: [f64; 3]| {
        let r = rot(v);
        [r[0] - r[2], r[1] - r[2], 0.0]
    };
    cand.n_g_offset = pin(result.n_g_offset);
    cand.fluctuator_delta = pin(result.fluctuator_delta);
    match line_cost(observed, &cand, opts) {
        Ok(c) if (c - result.residual).abs() <= 1e-9 => FitResult { residual: c, ..cand },
        _ => result,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn truth() -> FitResult {
        FitResult::guess(DeviceParams::measured_sample(), [0.05, -0.1, 0.0], [0.0; 3])
    }

    fn small_opts() -> FitOptions {
        FitOptions {
            basis: ChargeBasis::new(3),
            count: 2,
            restarts: 0,
            ..Default::default()
        }
    }

    fn synthetic(opts: &FitOptions) -> ObservedLines {
        let t = truth();
        let axis = AxisSpec::grid(SweepAxis::Flux, 0.0, PI, 5);
        let table = predict_lines(
            &t.params,
            &BiasPoint {
                n_g: t.n_g_offset,
                phi: 0.0,
            },
            &axis,
            &t.configs(false),
            opts.basis,
            opts.count,
        )
        .unwrap();
        ObservedLines::from_table(&table)
    }

    #[test]
    fn cost_is_zero_at_truth() {
        let opts = small_opts();
        let obs = synthetic(&opts);
        assert_eq!(obs.len(), 5 * 8);
        assert!(line_cost(&obs, &truth(), &opts).unwrap() < 1e-12);
        let mut off = truth();
        off.params.e_c *= 1.01;
        assert!(line_cost(&obs, &off, &opts).unwrap() > 1e-4);
    }

    #[test]
    fn fixed_point_fit() {
        let opts = small_opts();
        let obs = synthetic(&opts);
        let r = fit_parameters(&obs, &truth(), &opts).unwrap();
        assert!(r.residual < 1e-9);
        assert!(r.converged);
        assert_eq!(r.params, truth().params);
    }

    #[test]
    fn too_few_points_rejected() {
        let opts = small_opts();
        let obs = ObservedLines::from_pairs(SweepAxis::Flux, &[(0.0, 6.0), (0.1, 6.1)]);
        assert!(fit_parameters(&obs, &truth(), &opts).is_err());
    }

    #[test]
    fn predict_lines_single_point() {
        let p = DeviceParams::measured_sample();
        let base = BiasPoint {
            n_g: [0.1, 0.2, 0.0],
            phi: 0.3,
        };
        let s = SectorConfig::new(Parity::Eo);
        let basis = ChargeBasis::new(3);
        let t = predict_lines(&p, &base, &AxisSpec::new(SweepAxis::Ng1, vec![0.25]), &[s], basis, 2)
            .unwrap();
        let direct = transition_frequencies(
            &p,
            &BiasPoint {
                n_g: [0.35, 0.2, 0.0],
                phi: 0.3,
            },
            s,
            basis,
            2,
        )
        .unwrap();
        assert_eq!(t.rows[0].value, 0.25);
        for (a, b) in t.rows[0].frequencies.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
