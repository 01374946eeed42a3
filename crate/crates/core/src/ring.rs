//! Device description and the ring Hamiltonian in a truncated charge basis.
//!
//! Charge conservation on the galvanically isolated ring reduces the three
//! island charges to two independent coordinates,
//!
//! ```text
//! n'1 = n1,   n'2 = -n2,   n'3 = n1 + n2 + n3 = n0,
//! ```
//!
//! and the Hamiltonian is expressed on the lattice of integer pairs
//! `(n'1, n'2)` with `|n'i| <= n_max`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{ensure_finite, Error, Result};

/// Physical parameters of the ring. Energies and rates are frequencies in GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Charging energy.
    pub e_c: f64,
    /// Josephson energies of junctions 1..3.
    pub e_j: [f64; 3],
    /// Coupling rate between the ring and each port.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Conserved total ring charge, in Cooper pairs.
    #[serde(default)]
    pub n_0: i64,
}

/// Coupling rate giving a ~70 MHz single-sector linewidth for the lowest
/// transition of [`DeviceParams::measured_sample`] at zero gate charge and
/// `phi = pi/2`. See [`crate::scattering::gamma_for_linewidth`].
pub const DEFAULT_GAMMA_GHZ: f64 = 0.073136;

fn default_gamma() -> f64 {
    DEFAULT_GAMMA_GHZ
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self::measured_sample()
    }
}

impl DeviceParams {
    pub fn new(e_c: f64, e_j: [f64; 3], gamma: f64, n_0: i64) -> Result<Self> {
        let p = Self {
            e_c,
            e_j,
            gamma,
            n_0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters fitted to the fabricated sample's spectroscopy.
    pub fn measured_sample() -> Self {
        Self {
            e_c: 3.98,
            e_j: [7.85, 8.28, 8.55],
            gamma: DEFAULT_GAMMA_GHZ,
            n_0: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("e_c", self.e_c)?;
        if self.e_c <= 0.0 {
            return Err(Error::invalid("e_c", "charging energy must be > 0"));
        }
        for (i, &ej) in self.e_j.iter().enumerate() {
            let field = format!("e_j[{i}]");
            ensure_finite(&field, ej)?;
            if ej < 0.0 {
                return Err(Error::invalid(field, "Josephson energy must be >= 0"));
            }
        }
        ensure_finite("gamma", self.gamma)?;
        if self.gamma < 0.0 {
            return Err(Error::invalid("gamma", "coupling rate must be >= 0"));
        }
        Ok(())
    }
}

/// Externally tunable bias: gate charges (Cooper-pair units) and reduced flux.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasPoint {
    pub n_g: [f64; 3],
    /// Reduced flux `2 pi Phi / Phi_0`, radians.
    pub phi: f64,
}

impl BiasPoint {
    pub fn new(n_g: [f64; 3], phi: f64) -> Result<Self> {
        let b = Self { n_g, phi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &v) in self.n_g.iter().enumerate() {
            ensure_finite(&format!("n_g[{i}]"), v)?;
        }
        ensure_finite("phi", self.phi)
    }
}

/// Charge-parity sector of the two independent islands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Ee,
    Eo,
    Oe,
    Oo,
}

impl Parity {
    pub const ALL: [Parity; 4] = [Parity::Ee, Parity::Eo, Parity::Oe, Parity::Oo];

    /// Gate-charge shift that maps the even-even Hamiltonian onto this sector.
    pub fn gate_shift(self) -> [f64; 3] {
        match self {
            Parity::Ee => [0.0, 0.0, 0.0],
            Parity::Eo => [-0.5, 0.5, 0.0],
            Parity::Oe => [0.0, -0.5, 0.5],
            Parity::Oo => [0.5, 0.0, -0.5],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Parity::Ee => "ee",
            Parity::Eo => "eo",
            Parity::Oe => "oe",
            Parity::Oo => "oo",
        }
    }
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Parity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ee" => Ok(Parity::Ee),
            "eo" => Ok(Parity::Eo),
            "oe" => Ok(Parity::Oe),
            "oo" => Ok(Parity::Oo),
            other => Err(Error::invalid("parity", format!("unknown sector `{other}`"))),
        }
    }
}

/// A quasiparticle sector, optionally composed with a charge-fluctuator offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorConfig {
    pub parity: Parity,
    #[serde(default)]
    pub fluctuator_delta: [f64; 3],
}

impl SectorConfig {
    pub fn new(parity: Parity) -> Self {
        Self {
            parity,
            fluctuator_delta: [0.0; 3],
        }
    }

    pub fn with_fluctuator(parity: Parity, delta: [f64; 3]) -> Self {
        Self {
            parity,
            fluctuator_delta: delta,
        }
    }

    /// The four parity sectors with no fluctuator offset.
    pub fn all_parities() -> Vec<SectorConfig> {
        Parity::ALL.iter().map(|&p| SectorConfig::new(p)).collect()
    }

    /// Every parity sector for every fluctuator state, fluctuator-major.
    pub fn product(parities: &[Parity], fluctuators: &[[f64; 3]]) -> Vec<SectorConfig> {
        fluctuators
            .iter()
            .flat_map(|&d| parities.iter().map(move |&p| SectorConfig::with_fluctuator(p, d)))
            .collect()
    }
}

/// Gate charges seen by the Hamiltonian of a given sector.
pub fn effective_bias(bias: BiasPoint, sector: SectorConfig) -> BiasPoint {
    let shift = sector.parity.gate_shift();
    let mut n_g = bias.n_g;
    for i in 0..3 {
        n_g[i] += shift[i] + sector.fluctuator_delta[i];
    }
    BiasPoint { n_g, phi: bias.phi }
}

/// Truncated basis of charge pairs `(n'1, n'2)` with `|n'i| <= n_max`.
///
/// States are enumerated row-major: `n'1` is the outer index running from
/// `-n_max` to `n_max`, `n'2` the inner one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargeBasis {
    pub n_max: usize,
}

impl Default for ChargeBasis {
    fn default() -> Self {
        Self { n_max: 6 }
    }
}

impl ChargeBasis {
    pub fn new(n_max: usize) -> Self {
        Self { n_max }
    }

    fn side(&self) -> usize {
        2 * self.n_max + 1
    }

    pub fn dim(&self) -> usize {
        self.side() * self.side()
    }

    /// Index of the state `(n1, n2)`, or `None` if it lies outside the truncation.
    pub fn index(&self, n1: i64, n2: i64) -> Option<usize> {
        let m = self.n_max as i64;
        if n1.abs() > m || n2.abs() > m {
            return None;
        }
        Some(((n1 + m) as usize) * self.side() + (n2 + m) as usize)
    }

    pub fn state(&self, index: usize) -> (i64, i64) {
        let m = self.n_max as i64;
        let side = self.side();
        ((index / side) as i64 - m, (index % side) as i64 - m)
    }

    pub fn states(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        (0..self.dim()).map(move |i| self.state(i))
    }

    /// Island charges `(n1, n2, n3)` of a basis state for total charge `n_0`.
    pub fn island_charges(&self, index: usize, n_0: i64) -> [f64; 3] {
        let (p1, p2) = self.state(index);
        [p1 as f64, -p2 as f64, (n_0 - p1 + p2) as f64]
    }
}

/// Dense Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    matrix: DMatrix<Complex64>,
}

/// Relative tolerance used when accepting an arbitrary matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

impl HermitianOperator {
    /// Wraps `matrix` after checking it is square and Hermitian within
    /// [`HERMITIAN_TOL`] relative to its largest entry.
    pub fn from_matrix(matrix: DMatrix<Complex64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::invalid(
                "matrix",
                format!("must be square, got {}x{}", matrix.nrows(), matrix.ncols()),
            ));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("matrix", "entries must be finite"));
        }
        let deviation = hermitian_deviation(&matrix);
        let scale = matrix.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        if deviation > HERMITIAN_TOL * scale {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Self { matrix })
    }

    /// Builds a diagonal operator from real entries.
    pub fn diagonal(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, &v) in entries.iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        Self { matrix: m }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.matrix
    }

    /// Real parts of the diagonal.
    pub fn diagonal_values(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal_values().iter().sum()
    }
}

pub(crate) fn hermitian_deviation(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Ring Hamiltonian in the reduced charge coordinates.
///
/// Diagonal (charging) part:
/// `E_C [ (n'1 - (n0 + ng1 - ng3)/2)^2 + (n'2 + (n0 + ng2 - ng3)/2)^2 - n'1 n'2 ]`.
///
/// Josephson part, with `e^{i phi'_k}` raising `n'_k` by one:
/// `-E_J1 cos(phi'1 - phi/3) - E_J2 cos(phi'2 - phi/3) - E_J3 cos(phi'1 + phi'2 + phi/3)`.
pub fn build_hamiltonian(
    params: &DeviceParams,
    bias: &BiasPoint,
    basis: ChargeBasis,
) -> Result<HermitianOperator> {
    params.validate()?;
    bias.validate()?;
    if basis.n_max < 1 {
        return Err(Error::invalid("n_max", "charge basis truncation must be >= 1"));
    }
    let dim = basis.dim();
    let n0 = params.n_0 as f64;
    let [g1, g2, g3] = bias.n_g;
    let off1 = 0.5 * (n0 + g1 - g3);
    let off2 = 0.5 * (n0 + g2 - g3);

    let third = Complex64::from_polar(1.0, -bias.phi / 3.0);
    // <n+1| H |n> amplitudes for the three hopping directions.
    let hop1 = third * (-0.5 * params.e_j[0]);
    let hop2 = third * (-0.5 * params.e_j[1]);
    let hop3 = third.conj() * (-0.5 * params.e_j[2]);

    let mut m = DMatrix::<Complex64>::zeros(dim, dim);
    for idx in 0..dim {
        let (p1, p2) = basis.state(idx);
        let (x1, x2) = (p1 as f64, p2 as f64);
        let charging = params.e_c * ((x1 - off1).powi(2) + (x2 + off2).powi(2) - x1 * x2);
        m[(idx, idx)] = Complex64::new(charging, 0.0);

        for (dn1, dn2, amp) in [(1, 0, hop1), (0, 1, hop2), (1, 1, hop3)] {
            if let Some(up) = basis.index(p1 + dn1, p2 + dn2) {
                m[(up, idx)] += amp;
                m[(idx, up)] += amp.conj();
            }
        }
    }
    Ok(HermitianOperator { matrix: m })
}

/// Island charge operators `(n1, n2, n3)` as diagonal operators in the
/// reduced basis: `n1 = n'1`, `n2 = -n'2`, `n3 = n0 - n'1 + n'2`.
pub fn charge_operators(basis: ChargeBasis, n_0: i64) -> [HermitianOperator; 3] {
    let charges: Vec<[f64; 3]> = (0..basis.dim())
        .map(|i| basis.island_charges(i, n_0))
        .collect();
    let island = |k: usize| {
        let d: Vec<f64> = charges.iter().map(|c| c[k]).collect();
        HermitianOperator::diagonal(&d)
    };
    [island(0), island(1), island(2)]
}
