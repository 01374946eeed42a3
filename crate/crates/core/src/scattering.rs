//! Port scattering matrices from the ring eigensystem, sector averaging, and
//! circulation metrics.
//!
//! In the weak-drive limit the ring scatters as a sum of resonances,
//!
//! ```text
//! S_ij = delta_ij - sum_k Gamma <k|n_j|0><0|n_i|k> / (i (w_k0 - w) + Gamma_k / 2),
//! ```
//!
//! where `n_i` are island charges and `Gamma_k = Gamma * sum_i |<0|n_i|k>|^2`.
//! That choice of `Gamma_k` makes each single resonance an exactly unitary
//! rank-one Breit-Wigner term.

use nalgebra::Matrix3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::ring::{BiasPoint, ChargeBasis, DeviceParams, SectorConfig};
use crate::spectrum::sector_eigensystem;

pub type Matrix3c = Matrix3<Complex64>;

/// Default number of excited states kept in the resonance sum.
pub const DEFAULT_K_STATES: usize = 8;

/// Target single-sector linewidth used to derive the default coupling rate.
pub const TARGET_LINEWIDTH_GHZ: f64 = 0.070;

/// 3x3 scattering matrix at one drive frequency; ports are ordered 1, 2, 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SMatrixJson", into = "SMatrixJson")]
pub struct ScatteringMatrix {
    pub entries: Matrix3c,
    /// Drive frequency, GHz.
    pub drive_freq: f64,
}

/// JSON layout: `{ "freq_ghz": f, "re": [[..]], "im": [[..]] }`, row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SMatrixJson {
    freq_ghz: f64,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl TryFrom<SMatrixJson> for ScatteringMatrix {
    type Error = Error;

    fn try_from(j: SMatrixJson) -> Result<Self> {
        let shape_ok = |m: &Vec<Vec<f64>>| m.len() == 3 && m.iter().all(|r| r.len() == 3);
        if !shape_ok(&j.re) || !shape_ok(&j.im) {
            return Err(Error::parse(None, "S-matrix `re` and `im` must be 3x3"));
        }
        let entries = Matrix3c::from_fn(|i, k| Complex64::new(j.re[i][k], j.im[i][k]));
        let s = ScatteringMatrix {
            entries,
            drive_freq: j.freq_ghz,
        };
        s.validate()?;
        Ok(s)
    }
}

impl From<ScatteringMatrix> for SMatrixJson {
    fn from(s: ScatteringMatrix) -> Self {
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..3)
                .map(|i| (0..3).map(|k| f(&s.entries[(i, k)])).collect())
                .collect()
        };
        SMatrixJson {
            freq_ghz: s.drive_freq,
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
    }
}

impl ScatteringMatrix {
    pub fn new(entries: Matrix3c, drive_freq: f64) -> Self {
        Self {
            entries,
            drive_freq,
        }
    }

    pub fn identity(drive_freq: f64) -> Self {
        Self::new(Matrix3c::identity(), drive_freq)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("freq_ghz", self.drive_freq)?;
        if self.entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("entries", "S-matrix entries must be finite"));
        }
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[(i, j)]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: SMatrixJson = serde_json::from_str(text)?;
        raw.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SMatrixJson::from(*self)).expect("plain data serialises")
    }

    /// Parses either a single matrix object or an array of them.
    pub fn list_from_json(text: &str) -> Result<Vec<Self>> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let items = match value {
            serde_json::Value::Array(items) => items,
            other => vec![other],
        };
        items
            .into_iter()
            .map(|v| {
                let raw: SMatrixJson = serde_json::from_value(v)?;
                raw.try_into()
            })
            .collect()
    }

    /// Frobenius norm of `S^dagger S - 1`.
    pub fn unitarity_defect(&self) -> f64 {
        (self.entries.adjoint() * self.entries - Matrix3c::identity()).norm()
    }
}

/// One resonance of the ring: transition frequency, charge matrix elements
/// `<0|n_i|k>` and decay rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resonance {
    pub freq: f64,
    pub coupling: [Complex64; 3],
    pub decay: f64,
}

/// Resonances of one sector; evaluating many drive frequencies reuses a single
/// diagonalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceSet {
    pub gamma: f64,
    pub resonances: Vec<Resonance>,
}

impl ResonanceSet {
    pub fn compute(
        params: &DeviceParams,
        bias: &BiasPoint,
        sector: SectorConfig,
        basis: ChargeBasis,
        k_states: usize,
    ) -> Result<Self> {
        if k_states == 0 {
            return Err(Error::invalid("k_states", "must be >= 1"));
        }
        if params.gamma <= 0.0 {
            return Err(Error::invalid("gamma", "coupling rate must be > 0"));
        }
        let eig = sector_eigensystem(params, bias, sector, basis, k_states + 1)?;
        let dim = basis.dim();
        let charges: Vec<[f64; 3]> = (0..dim)
            .map(|i| basis.island_charges(i, params.n_0))
            .collect();
        let ground = eig.states.column(0);
        let resonances = (1..=k_states)
            .map(|k| {
                let excited = eig.states.column(k);
                let mut coupling = [Complex64::new(0.0, 0.0); 3];
                for s in 0..dim {
                    let overlap = ground[s].conj() * excited[s];
                    for (c, q) in coupling.iter_mut().zip(charges[s]) {
                        *c += overlap * q;
                    }
                }
                let weight: f64 = coupling.iter().map(|z| z.norm_sqr()).sum();
                Resonance {
                    freq: eig.energies[k] - eig.energies[0],
                    coupling,
                    decay: params.gamma * weight,
                }
            })
            .collect();
        Ok(Self {
            gamma: params.gamma,
            resonances,
        })
    }

    pub fn smatrix(&self, drive_freq: f64) -> Result<ScatteringMatrix> {
        ensure_finite("drive_freq", drive_freq)?;
        let mut s = Matrix3c::identity();
        for r in &self.resonances {
            let denom = Complex64::new(r.decay / 2.0, r.freq - drive_freq);
            if denom.norm() == 0.0 {
                // Decoupled state exactly on resonance contributes nothing.
                continue;
            }
            let scale = Complex64::new(self.gamma, 0.0) / denom;
            for i in 0..3 {
                for j in 0..3 {
                    s[(i, j)] -= scale * r.coupling[j].conj() * r.coupling[i];
                }
            }
        }
        Ok(ScatteringMatrix::new(s, drive_freq))
    }
}

/// Scattering matrix of a single sector at `drive_freq` (GHz), summing the
/// `k_states` lowest excited states.
pub fn smatrix(
    params: &DeviceParams,
    bias: &BiasPoint,
    sector: SectorConfig,
    basis: ChargeBasis,
    drive_freq: f64,
    k_states: usize,
) -> Result<ScatteringMatrix> {
    ensure_finite("drive_freq", drive_freq)?;
    ResonanceSet::compute(params, bias, sector, basis, k_states)?.smatrix(drive_freq)
}

/// Entrywise mean of complex per-sector matrices with equal weights.
///
/// The average is coherent: amplitudes, not magnitudes, are averaged.
pub fn average(matrices: &[ScatteringMatrix]) -> Result<ScatteringMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::invalid("sectors", "at least one sector is required"))?;
    let mut sum = Matrix3c::zeros();
    for m in matrices {
        sum += m.entries;
    }
    Ok(ScatteringMatrix::new(
        sum / Complex64::new(matrices.len() as f64, 0.0),
        first.drive_freq,
    ))
}

pub fn averaged_smatrix(
    params: &DeviceParams,
    bias: &BiasPoint,
    sectors: &[SectorConfig],
    basis: ChargeBasis,
    drive_freq: f64,
    k_states: usize,
) -> Result<ScatteringMatrix> {
    if sectors.is_empty() {
        return Err(Error::invalid("sectors", "at least one sector is required"));
    }
    let per_sector = sectors
        .iter()
        .map(|&s| smatrix(params, bias, s, basis, drive_freq, k_states))
        .collect::<Result<Vec<_>>>()?;
    average(&per_sector)
}

/// Sector-averaged matrices over a list of drive frequencies. Each sector is
/// diagonalised once; frequencies are evaluated in parallel, output in input order.
pub fn averaged_sweep(
    params: &DeviceParams,
    bias: &BiasPoint,
    sectors: &[SectorConfig],
    basis: ChargeBasis,
    freqs: &[f64],
    k_states: usize,
) -> Result<Vec<ScatteringMatrix>> {
    if sectors.is_empty() {
        return Err(Error::invalid("sectors", "at least one sector is required"));
    }
    let sets = sectors
        .par_iter()
        .map(|&s| ResonanceSet::compute(params, bias, s, basis, k_states))
        .collect::<Result<Vec<_>>>()?;
    freqs
        .par_iter()
        .map(|&f| {
            let per: Vec<ScatteringMatrix> =
                sets.iter().map(|set| set.smatrix(f)).collect::<Result<_>>()?;
            average(&per)
        })
        .collect()
}

/// Coupling rate that gives the lowest transition of `sector` a decay rate of
/// `linewidth` (GHz).
pub fn gamma_for_linewidth(
    params: &DeviceParams,
    bias: &BiasPoint,
    sector: SectorConfig,
    basis: ChargeBasis,
    linewidth: f64,
) -> Result<f64> {
    let unit = DeviceParams {
        gamma: 1.0,
        ..*params
    };
    let set = ResonanceSet::compute(&unit, bias, sector, basis, 1)?;
    let weight = set.resonances[0].decay;
    if weight <= 0.0 {
        return Err(Error::Numerical(
            "lowest transition does not couple to the ports".into(),
        ));
    }
    Ok(linewidth / weight)
}

/// Circulation direction of the ideal reference matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `S_12 = S_23 = S_31 = 1`.
    Cw,
    /// `S_13 = S_21 = S_32 = 1`.
    Ccw,
}

fn real3(rows: [[f64; 3]; 3]) -> Matrix3c {
    Matrix3c::from_fn(|i, j| Complex64::new(rows[i][j], 0.0))
}

/// Ideal lossless circulator for `dir`.
pub fn ideal_circulator(dir: Direction) -> Matrix3c {
    match dir {
        Direction::Cw => real3([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]),
        Direction::Ccw => real3([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
    }
}

/// Three-port gyrator: ports 1 and 2 coupled antisymmetrically, port 3 reflecting.
pub fn gyrator() -> Matrix3c {
    real3([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
}

/// `||S - S^T||_F / sqrt(8)`.
pub fn nonreciprocity(s: &Matrix3c) -> f64 {
    (s - s.transpose()).norm() / 8f64.sqrt()
}

/// `1 - sum_ij | |S_ij| - |S^ideal_ij| | / 8`.
pub fn fidelity(s: &Matrix3c, dir: Direction) -> f64 {
    let ideal = ideal_circulator(dir);
    let mismatch: f64 = s
        .iter()
        .zip(ideal.iter())
        .map(|(a, b)| (a.norm() - b.norm()).abs())
        .sum();
    1.0 - mismatch / 8.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirculationScore {
    pub nonreciprocity: f64,
    pub fidelity_cw: f64,
    pub fidelity_ccw: f64,
}

impl CirculationScore {
    pub fn best_fidelity(&self) -> f64 {
        self.fidelity_cw.max(self.fidelity_ccw)
    }
}

pub fn score(s: &Matrix3c) -> CirculationScore {
    CirculationScore {
        nonreciprocity: nonreciprocity(s),
        fidelity_cw: fidelity(s, Direction::Cw),
        fidelity_ccw: fidelity(s, Direction::Ccw),
    }
}
