//! Eigen-decomposition, transition frequencies and parameter sweeps.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numfmt::sig9;
use crate::ring::{
    build_hamiltonian, effective_bias, BiasPoint, ChargeBasis, DeviceParams, HermitianOperator,
    Parity, SectorConfig,
};

/// Lowest eigenpairs of a Hermitian operator.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// Ascending eigenvalues, GHz.
    pub energies: Vec<f64>,
    /// Column `k` is the normalised eigenvector of `energies[k]`.
    pub states: DMatrix<Complex64>,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn state(&self, k: usize) -> DVector<Complex64> {
        self.states.column(k).into_owned()
    }
}

fn check_count(k: usize, dim: usize) -> Result<()> {
    if k == 0 || k > dim {
        return Err(Error::invalid(
            "k",
            format!("requested {k} eigenpairs of a {dim}-dimensional operator"),
        ));
    }
    Ok(())
}

/// Stable ascending order of `values`; ties keep solver order.
fn ascending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    order
}

/// The `k` lowest eigenpairs of `h`, via a full dense Hermitian decomposition.
pub fn eigensolve(h: &HermitianOperator, k: usize) -> Result<EigenSystem> {
    check_count(k, h.dim())?;
    let eig = h.matrix().clone().symmetric_eigen();
    let order = ascending_order(eig.eigenvalues.as_slice());
    let energies = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let states = DMatrix::from_fn(h.dim(), k, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(EigenSystem { energies, states })
}

/// Eigenvalues only; cheaper than [`eigensolve`] by skipping vector accumulation.
pub fn eigenvalues(h: &HermitianOperator, k: usize) -> Result<Vec<f64>> {
    check_count(k, h.dim())?;
    let vals = h.matrix().clone().symmetric_eigenvalues();
    let mut v: Vec<f64> = vals.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v.truncate(k);
    Ok(v)
}

/// Convenience: eigensystem of the ring Hamiltonian for a sector.
pub fn sector_eigensystem(
    params: &DeviceParams,
    bias: &BiasPoint,
    sector: SectorConfig,
    basis: ChargeBasis,
    k: usize,
) -> Result<EigenSystem> {
    let h = build_hamiltonian(params, &effective_bias(*bias, sector), basis)?;
    eigensolve(&h, k)
}

/// `E_k - E_0` for `k = 1..=count`, in GHz.
pub fn transition_frequencies(
    params: &DeviceParams,
    bias: &BiasPoint,
    sector: SectorConfig,
    basis: ChargeBasis,
    count: usize,
) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::invalid("count", "must be >= 1"));
    }
    let h = build_hamiltonian(params, &effective_bias(*bias, sector), basis)?;
    let e = eigenvalues(&h, count + 1)?;
    Ok(e[1..].iter().map(|&x| x - e[0]).collect())
}

/// Bias coordinate being swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Reduced flux, radians.
    Flux,
    /// Gate charge of island 1, 2 or 3 (Cooper pairs).
    Ng1,
    Ng2,
    Ng3,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Flux => "flux",
            SweepAxis::Ng1 => "ng1",
            SweepAxis::Ng2 => "ng2",
            SweepAxis::Ng3 => "ng3",
        }
    }

    /// Island index (0-based) for gate axes.
    pub fn gate_index(self) -> Option<usize> {
        match self {
            SweepAxis::Flux => None,
            SweepAxis::Ng1 => Some(0),
            SweepAxis::Ng2 => Some(1),
            SweepAxis::Ng3 => Some(2),
        }
    }

    /// `base` with this coordinate replaced by `value`.
    pub fn apply(self, base: &BiasPoint, value: f64) -> BiasPoint {
        let mut b = *base;
        match self {
            SweepAxis::Flux => b.phi = value,
            SweepAxis::Ng1 => b.n_g[0] = value,
            SweepAxis::Ng2 => b.n_g[1] = value,
            SweepAxis::Ng3 => b.n_g[2] = value,
        }
        b
    }

    /// `base` with `value` added to this coordinate.
    pub fn offset(self, base: &BiasPoint, value: f64) -> BiasPoint {
        let current = match self.gate_index() {
            None => base.phi,
            Some(i) => base.n_g[i],
        };
        self.apply(base, current + value)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "flux" | "phi" => Ok(SweepAxis::Flux),
            "ng1" => Ok(SweepAxis::Ng1),
            "ng2" => Ok(SweepAxis::Ng2),
            "ng3" => Ok(SweepAxis::Ng3),
            other => Err(Error::invalid("axis", format!("unknown sweep axis `{other}`"))),
        }
    }
}

/// Default number of grid points per sweep axis.
pub const DEFAULT_SWEEP_POINTS: usize = 201;

/// `n` evenly spaced values from `start` to `stop`, both inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![start],
        _ => {
            let step = (stop - start) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { stop } else { start + step * i as f64 })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl AxisSpec {
    pub fn new(axis: SweepAxis, values: Vec<f64>) -> Self {
        Self { axis, values }
    }

    pub fn grid(axis: SweepAxis, start: f64, stop: f64, points: usize) -> Self {
        Self::new(axis, linspace(start, stop, points))
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("axis.values", "sweep axis is empty"));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("axis.values", format!("non-finite value {v}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub parity: Parity,
    /// Index into [`SweepTable::fluctuators`].
    pub fluctuator: usize,
    /// Lowest transition frequencies, GHz, ascending.
    pub frequencies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    /// Distinct fluctuator offsets in order of first appearance.
    pub fluctuators: Vec<[f64; 3]>,
    /// Ordered by axis value, then by sector in input order.
    pub rows: Vec<SweepRow>,
}

fn fluctuator_labels(sectors: &[SectorConfig]) -> (Vec<[f64; 3]>, Vec<usize>) {
    let mut distinct: Vec<[f64; 3]> = Vec::new();
    let labels = sectors
        .iter()
        .map(|s| match distinct.iter().position(|d| *d == s.fluctuator_delta) {
            Some(i) => i,
            None => {
                distinct.push(s.fluctuator_delta);
                distinct.len() - 1
            }
        })
        .collect();
    (distinct, labels)
}

/// Transition frequencies over the Cartesian product of axis values and sectors.
pub fn sweep(
    params: &DeviceParams,
    base_bias: &BiasPoint,
    axis: &AxisSpec,
    sectors: &[SectorConfig],
    basis: ChargeBasis,
    count: usize,
) -> Result<SweepTable> {
    axis.validate()?;
    if sectors.is_empty() {
        return Err(Error::invalid("sectors", "at least one sector is required"));
    }
    let (fluctuators, labels) = fluctuator_labels(sectors);
    let jobs: Vec<(f64, usize)> = axis
        .values
        .iter()
        .flat_map(|&v| (0..sectors.len()).map(move |s| (v, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(value, s)| {
            let bias = axis.axis.apply(base_bias, value);
            let frequencies = transition_frequencies(params, &bias, sectors[s], basis, count)?;
            Ok(SweepRow {
                value,
                parity: sectors[s].parity,
                fluctuator: labels[s],
                frequencies,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        axis: axis.axis,
        fluctuators,
        rows,
    })
}

impl SweepTable {
    pub fn count(&self) -> usize {
        self.rows.first().map_or(0, |r| r.frequencies.len())
    }

    /// CSV with header `axis,value,parity,fluctuator,f1..fK`, 9 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let k = self.count();
        let mut header = String::from("axis,value,parity,fluctuator");
        for i in 1..=k {
            header.push_str(&format!(",f{i}"));
        }
        writeln!(w, "{header}")?;
        for row in &self.rows {
            let mut line = format!(
                "{},{},{},{}",
                self.axis,
                sig9(row.value),
                row.parity,
                row.fluctuator
            );
            for f in &row.frequencies {
                line.push(',');
                line.push_str(&sig9(*f));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Min and max of each transition per (parity, fluctuator) configuration.
    pub fn summary(&self) -> Vec<ConfigSummary> {
        let mut out: Vec<ConfigSummary> = Vec::new();
        for row in &self.rows {
            let entry = match out
                .iter_mut()
                .position(|c| c.parity == row.parity && c.fluctuator == row.fluctuator)
            {
                Some(i) => &mut out[i],
                None => {
                    out.push(ConfigSummary {
                        parity: row.parity,
                        fluctuator: row.fluctuator,
                        min_ghz: vec![f64::INFINITY; row.frequencies.len()],
                        max_ghz: vec![f64::NEG_INFINITY; row.frequencies.len()],
                    });
                    out.last_mut().unwrap()
                }
            };
            for (k, &f) in row.frequencies.iter().enumerate() {
                entry.min_ghz[k] = entry.min_ghz[k].min(f);
                entry.max_ghz[k] = entry.max_ghz[k].max(f);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub parity: Parity,
    pub fluctuator: usize,
    pub min_ghz: Vec<f64>,
    pub max_ghz: Vec<f64>,
}

/// Lowest eigenvalues at `n_max` and `n_max + 2`; `Err` if any of the lowest
/// `levels` differ by more than `tol` GHz.
pub fn check_truncation(
    params: &DeviceParams,
    bias: &BiasPoint,
    basis: ChargeBasis,
    levels: usize,
    tol: f64,
) -> Result<f64> {
    let small = eigenvalues(&build_hamiltonian(params, bias, basis)?, levels)?;
    let big = eigenvalues(
        &build_hamiltonian(params, bias, ChargeBasis::new(basis.n_max + 2))?,
        levels,
    )?;
    let worst = small
        .iter()
        .zip(&big)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if worst > tol {
        return Err(Error::NoConvergence(format!(
            "charge basis n_max={} not converged: lowest {levels} levels move by {worst:e} GHz \
             when enlarged (tolerance {tol:e})",
            basis.n_max
        )));
    }
    Ok(worst)
}

/// Smallest period (in Cooper pairs, searched on a grid of `step`) of the
/// transition spectrum along a gate-charge axis, or `None` up to `max_period`.
///
/// The spectrum is compared at a few probe offsets; a candidate `p` is
/// accepted when every probe's lowest `count` transitions agree within `tol`.
pub fn gate_charge_period(
    params: &DeviceParams,
    bias: &BiasPoint,
    axis: SweepAxis,
    basis: ChargeBasis,
    count: usize,
    step: f64,
    max_period: f64,
    tol: f64,
) -> Result<Option<f64>> {
    if axis == SweepAxis::Flux {
        return Err(Error::invalid("axis", "gate-charge period needs a gate axis"));
    }
    let sector = SectorConfig::new(Parity::Ee);
    let probes = [0.0, 0.137, 0.311];
    let reference: Vec<Vec<f64>> = probes
        .iter()
        .map(|&d| transition_frequencies(params, &axis.offset(bias, d), sector, basis, count))
        .collect::<Result<_>>()?;
    let steps = (max_period / step).round() as usize;
    for n in 1..=steps {
        let p = step * n as f64;
        let mut matches = true;
        for (&d, want) in probes.iter().zip(&reference) {
            let got = transition_frequencies(params, &axis.offset(bias, d + p), sector, basis, count)?;
            if got.iter().zip(want).any(|(a, b)| (a - b).abs() > tol) {
                matches = false;
                break;
            }
        }
        if matches {
            return Ok(Some(p));
        }
    }
    Ok(None)
}
