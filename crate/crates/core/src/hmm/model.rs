use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::series::TimeSeries;

/// Tolerance on row sums of probability vectors.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Multivariate normal with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl PartialEq for Gaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::invalid("covariance", "shape does not match mean"));
        }
        if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("emission", "non-finite entries"));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        if (&cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::invalid("covariance", "not symmetric"));
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::invalid("covariance", "not positive definite"))?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self {
            mean,
            cov,
            chol,
            log_norm,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(self.dim(), x.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + self.chol.l() * z
    }
}

/// Clips eigenvalues of a symmetric matrix from below at `floor`.
pub fn floor_covariance(cov: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Covariance floor for a data set: `1e-9` of the mean per-component variance,
/// or `1e-9` absolute when the data has no spread.
pub fn covariance_floor(series: &TimeSeries) -> f64 {
    let v = series.mean_variance();
    if v > 0.0 {
        1e-9 * v
    } else {
        1e-9
    }
}

/// Hidden Markov model with Gaussian emissions.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    pub initial: DVector<f64>,
    /// Row-stochastic, `trans[(i, j)] = P(j at t+1 | i at t)`.
    pub trans: DMatrix<f64>,
    pub emissions: Vec<Gaussian>,
}

fn check_probabilities(field: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::invalid(field, "probabilities must lie in [0, 1]"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::invalid(field, format!("sums to {sum}, not 1")));
    }
    Ok(())
}

impl HmmModel {
    pub fn new(initial: DVector<f64>, trans: DMatrix<f64>, emissions: Vec<Gaussian>) -> Result<Self> {
        let m = Self {
            initial,
            trans,
            emissions,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn dim(&self) -> usize {
        self.emissions.first().map_or(0, Gaussian::dim)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_states();
        if k == 0 {
            return Err(Error::invalid("n_states", "must be at least 1"));
        }
        if self.trans.nrows() != k || self.trans.ncols() != k || self.emissions.len() != k {
            return Err(Error::invalid("trans", "shape does not match the state count"));
        }
        check_probabilities("initial", self.initial.as_slice())?;
        for i in 0..k {
            let row: Vec<f64> = self.trans.row(i).iter().copied().collect();
            check_probabilities(&format!("trans[{i}]"), &row)?;
        }
        let d = self.dim();
        if self.emissions.iter().any(|g| g.dim() != d) {
            return Err(Error::invalid("emissions", "states disagree on dimension"));
        }
        Ok(())
    }

    /// Relabels states so new state `i` is old state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.n_states();
        assert_eq!(perm.len(), k);
        Self {
            initial: DVector::from_fn(k, |i, _| self.initial[perm[i]]),
            trans: DMatrix::from_fn(k, k, |i, j| self.trans[(perm[i], perm[j])]),
            emissions: perm.iter().map(|&p| self.emissions[p].clone()).collect(),
        }
    }

    /// `dt / (1 - P_ii)`, the mean dwell of a geometric holding time.
    pub fn tau_model(&self, state: usize, dt: f64) -> f64 {
        dt / (1.0 - self.trans[(state, state)])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelJson::from(self)).expect("plain data serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ModelJson = serde_json::from_str(text)?;
        raw.try_into()
    }

    /// Draws a hidden path and its emissions.
    pub fn simulate(&self, n_samples: usize, dt: f64, seed: u64) -> Result<(TimeSeries, Vec<usize>)> {
        self.validate()?;
        if n_samples == 0 {
            return Err(Error::invalid("n_samples", "must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng, p: &[f64]| -> usize {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    return i;
                }
            }
            // Rounding leaves `acc` just below 1; take the last reachable state.
            p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
        };
        let rows: Vec<Vec<f64>> = (0..self.n_states())
            .map(|i| self.trans.row(i).iter().copied().collect())
            .collect();
        let mut labels = Vec::with_capacity(n_samples);
        let mut data = Vec::with_capacity(n_samples * self.dim());
        let mut state = draw(&mut rng, self.initial.as_slice());
        for t in 0..n_samples {
            if t > 0 {
                state = draw(&mut rng, &rows[state]);
            }
            labels.push(state);
            data.extend(self.emissions[state].sample(&mut rng).iter());
        }
        Ok((TimeSeries::from_flat(dt, self.dim(), data)?, labels))
    }
}

/// Well-separated test model: state `k` sits `separation * sigma` from every
/// other state along its own axis, isotropic noise `sigma`.
pub fn synthetic_model(
    n_states: usize,
    dim: usize,
    stay: f64,
    separation: f64,
    sigma: f64,
    base: &[f64],
) -> Result<HmmModel> {
    if n_states == 0 || dim < n_states || base.len() != dim {
        return Err(Error::invalid("synthetic_model", "need 1 <= n_states <= dim and base of length dim"));
    }
    if !(0.0..=1.0).contains(&stay) || !(sigma > 0.0) {
        return Err(Error::invalid("synthetic_model", "stay in [0, 1] and sigma > 0 required"));
    }
    let off = if n_states > 1 {
        (1.0 - stay) / (n_states - 1) as f64
    } else {
        0.0
    };
    let trans = if n_states == 1 {
        DMatrix::from_element(1, 1, 1.0)
    } else {
        DMatrix::from_fn(n_states, n_states, |i, j| if i == j { stay } else { off })
    };
    // One-hot offsets of length separation*sigma/sqrt(2) give pairwise distance separation*sigma.
    let step = separation * sigma / 2f64.sqrt();
    let emissions = (0..n_states)
        .map(|k| {
            let mean = DVector::from_fn(dim, |d, _| base[d] + if d == k { step } else { 0.0 });
            Gaussian::new(mean, DMatrix::identity(dim, dim) * sigma * sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    HmmModel::new(DVector::from_element(n_states, 1.0 / n_states as f64), trans, emissions)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelJson {
    n_states: usize,
    dim: usize,
    initial: Vec<f64>,
    trans: Vec<Vec<f64>>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
}

impl From<&HmmModel> for ModelJson {
    fn from(m: &HmmModel) -> Self {
        let rows = |a: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect()
        };
        ModelJson {
            n_states: m.n_states(),
            dim: m.dim(),
            initial: m.initial.iter().copied().collect(),
            trans: rows(&m.trans),
            means: m.emissions.iter().map(|g| g.mean.iter().copied().collect()).collect(),
            covariances: m.emissions.iter().map(|g| rows(&g.cov)).collect(),
        }
    }
}

impl TryFrom<ModelJson> for HmmModel {
    type Error = Error;

    fn try_from(j: ModelJson) -> Result<Self> {
        let (k, d) = (j.n_states, j.dim);
        let square = |m: &Vec<Vec<f64>>, n: usize| m.len() == n && m.iter().all(|r| r.len() == n);
        let shapes_ok = j.initial.len() == k
            && square(&j.trans, k)
            && j.means.len() == k
            && j.means.iter().all(|m| m.len() == d)
            && j.covariances.len() == k
            && j.covariances.iter().all(|c| square(c, d));
        if !shapes_ok || k == 0 || d == 0 {
            return Err(Error::parse(None, "model arrays do not match n_states and dim"));
        }
        let mat = |m: &Vec<Vec<f64>>| DMatrix::from_fn(m.len(), m.len(), |r, c| m[r][c]);
        let emissions = j
            .means
            .iter()
            .zip(&j.covariances)
            .map(|(m, c)| Gaussian::new(DVector::from_column_slice(m), mat(c)))
            .collect::<Result<Vec<_>>>()?;
        HmmModel::new(DVector::from_vec(j.initial), mat(&j.trans), emissions)
    }
}
