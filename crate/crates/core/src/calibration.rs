//! Measurement-chain calibration: `M = B·S·A` with diagonal line gains.
//!
//! Only the products `P_ij = b_i a_j` enter the measured matrix, and for a
//! unitary device matrix they are fixed up to the phase pattern
//! `P_ij -> P_ij e^{-i(t_i + u_j)}` (compensated inside `S`). The solver fixes
//! that freedom by
//!
//! 1. making `a_1` real and positive,
//! 2. making the diagonal of the off-resonant `S` real and positive (the
//!    choice closest to the identity), and
//! 3. choosing the remaining relative port phases so the off-resonant `S` is
//!    as close to symmetric as possible.
//!
//! Gauge-invariant quantities (`|P_ij|`, `P_ii`, `P_ij P_ji`, `|S_ij|`) do not
//! depend on these choices.

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scattering::{Matrix3c, ScatteringMatrix};

/// Input (`a`) and output (`b`) line gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainModel {
    pub a: [Complex64; 3],
    pub b: [Complex64; 3],
}

impl ChainModel {
    pub fn identity() -> Self {
        let one = Complex64::new(1.0, 0.0);
        Self {
            a: [one; 3],
            b: [one; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("a", &self.a), ("b", &self.b)] {
            for (i, z) in g.iter().enumerate() {
                if !(z.re.is_finite() && z.im.is_finite()) || z.norm() == 0.0 {
                    return Err(Error::invalid(
                        format!("chain.{name}[{i}]"),
                        "line gains must be finite and nonzero",
                    ));
                }
            }
        }
        Ok(())
    }

    /// `P_ij = b_i a_j`.
    pub fn products(&self) -> Matrix3c {
        Matrix3c::from_fn(|i, j| self.b[i] * self.a[j])
    }

    /// `B·S·A`.
    pub fn forward(&self, s: &Matrix3c) -> Matrix3c {
        s.component_mul(&self.products())
    }

    /// JSON with the gains, the canonical product matrix and a gauge note.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ChainJson::from(*self)).expect("plain data serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ChainJson = serde_json::from_str(text)?;
        raw.try_into()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComplexVec {
    re: Vec<f64>,
    im: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChainJson {
    a: ComplexVec,
    b: ComplexVec,
    product: ProductJson,
    #[serde(default)]
    gauge: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProductJson {
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

const GAUGE_NOTE: &str = "only products b_i*a_j are physical; a_1 real positive, \
off-resonant S diagonal real positive, residual port phases chosen to make off-resonant S most symmetric";

impl From<ChainModel> for ChainJson {
    fn from(c: ChainModel) -> Self {
        let v = |g: &[Complex64; 3]| ComplexVec {
            re: g.iter().map(|z| z.re).collect(),
            im: g.iter().map(|z| z.im).collect(),
        };
        let p = c.products();
        ChainJson {
            a: v(&c.a),
            b: v(&c.b),
            product: ProductJson {
                re: (0..3).map(|i| (0..3).map(|j| p[(i, j)].re).collect()).collect(),
                im: (0..3).map(|i| (0..3).map(|j| p[(i, j)].im).collect()).collect(),
            },
            gauge: GAUGE_NOTE.into(),
        }
    }
}

impl TryFrom<ChainJson> for ChainModel {
    type Error = Error;

    fn try_from(j: ChainJson) -> Result<Self> {
        let v = |c: &ComplexVec, name: &str| -> Result<[Complex64; 3]> {
            if c.re.len() != 3 || c.im.len() != 3 {
                return Err(Error::parse(None, format!("chain `{name}` must have 3 entries")));
            }
            Ok([0, 1, 2].map(|i| Complex64::new(c.re[i], c.im[i])))
        };
        let chain = ChainModel {
            a: v(&j.a, "a")?,
            b: v(&j.b, "b")?,
        };
        chain.validate()?;
        Ok(chain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Weight of the pull toward the identity, relative to the mean `|P|^2`.
    /// Annealed geometrically to zero over the alternating iterations.
    pub regularization: f64,
    pub max_iter: usize,
    /// Relative residual `||M - B S A|| / ||M||` above which the solve fails.
    pub max_residual: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            regularization: 1e-2,
            max_iter: 500,
            max_residual: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffResonantSolution {
    pub chain: ChainModel,
    /// Unitary device matrix at the calibration point.
    pub s_off: Matrix3c,
    /// `||M - B S A||_F / ||M||_F`.
    pub residual: f64,
    pub iterations: usize,
}

/// Polar projection onto the unitary group.
fn nearest_unitary(m: &Matrix3c) -> Matrix3c {
    let svd = m.svd(true, true);
    svd.u.expect("u requested") * svd.v_t.expect("v_t requested")
}

fn relative_residual(m: &Matrix3c, chain: &ChainModel, s: &Matrix3c) -> f64 {
    (m - chain.forward(s)).norm() / m.norm()
}

/// Closed-form start: for unitary `S`, `M W M^dagger` is diagonal where
/// `W = diag(1/|a_j|^2)`; solve for `W` from the off-diagonal conditions.
fn initial_chain(m: &Matrix3c) -> ChainModel {
    // Rows: Re and Im of (M W M^dagger)_{ik} = sum_j M_ij conj(M_kj) w_j for i < k.
    let mut sys = DMatrix::<f64>::zeros(6, 3);
    let mut row = 0;
    for i in 0..3 {
        for k in i + 1..3 {
            for j in 0..3 {
                let z = m[(i, j)] * m[(k, j)].conj();
                sys[(row, j)] = z.re;
                sys[(row + 1, j)] = z.im;
            }
            row += 2;
        }
    }
    let ones = Vector3::new(1.0, 1.0, 1.0);
    let scale = m.norm_squared().max(f64::MIN_POSITIVE);
    let svd = sys.clone().svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let sigma_max = svd.singular_values.max();
    // Null space: right singular vectors with negligible singular value.
    let mut w = Vector3::zeros();
    let mut null_dim = 0;
    for (idx, &sv) in svd.singular_values.iter().enumerate() {
        if sv <= 1e-10 * scale.max(sigma_max) {
            let v = Vector3::new(v_t[(idx, 0)], v_t[(idx, 1)], v_t[(idx, 2)]);
            w += v * v.dot(&ones);
            null_dim += 1;
        }
    }
    if null_dim == 0 {
        let idx = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        w = Vector3::new(v_t[(idx, 0)], v_t[(idx, 1)], v_t[(idx, 2)]);
        if w.sum() < 0.0 {
            w = -w;
        }
    }
    if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        w = ones;
    }

    let a_mag = w.map(|x| 1.0 / x.sqrt());
    let mut a = [Complex64::new(0.0, 0.0); 3];
    let mut b = [Complex64::new(0.0, 0.0); 3];
    for j in 0..3 {
        a[j] = Complex64::new(a_mag[j], 0.0);
    }
    for i in 0..3 {
        let bb: f64 = (0..3).map(|j| m[(i, j)].norm_sqr() * w[j]).sum();
        let phase = if m[(i, i)].norm() > 0.0 {
            m[(i, i)] / m[(i, i)].norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        b[i] = phase * bb.sqrt().max(f64::MIN_POSITIVE);
    }
    ChainModel { a, b }
}

/// Least-squares gains given `S`, alternating `b` then `a`.
fn update_gains(m: &Matrix3c, s: &Matrix3c, chain: &mut ChainModel) {
    for i in 0..3 {
        let (mut num, mut den) = (Complex64::new(0.0, 0.0), 0.0);
        for j in 0..3 {
            let x = chain.a[j] * s[(i, j)];
            num += x.conj() * m[(i, j)];
            den += x.norm_sqr();
        }
        if den > 0.0 {
            chain.b[i] = num / den;
        }
    }
    for j in 0..3 {
        let (mut num, mut den) = (Complex64::new(0.0, 0.0), 0.0);
        for i in 0..3 {
            let x = chain.b[i] * s[(i, j)];
            num += x.conj() * m[(i, j)];
            den += x.norm_sqr();
        }
        if den > 0.0 {
            chain.a[j] = num / den;
        }
    }
    // a_1 real positive.
    let rot = chain.a[0].conj() / chain.a[0].norm();
    for z in chain.a.iter_mut() {
        *z *= rot;
    }
    for z in chain.b.iter_mut() {
        *z /= rot;
    }
}

/// Moves diagonal phases of `S` into the output gains so `S_ii >= 0`.
fn fix_diagonal_phase(s: &mut Matrix3c, chain: &mut ChainModel) {
    for i in 0..3 {
        let d = s[(i, i)];
        if d.norm() > 0.0 {
            let ph = d / d.norm();
            chain.b[i] *= ph;
            for j in 0..3 {
                s[(i, j)] /= ph;
            }
        }
    }
}

/// Similarity phase gauge `S -> D S D*`, `D = diag(1, e^{i t2}, e^{i t3})`,
/// chosen to minimise `||S - S^T||`.
///
/// `||S - S^T||^2` is a constant minus `2 sum_{i<j} r_ij cos(2(t_i - t_j) + alpha_ij)`
/// with `r e^{i alpha} = S_ij conj(S_ji)`; the sum is maximised from the best
/// point of a coarse grid by safeguarded Newton steps.
fn fix_relative_phase(s: &mut Matrix3c, chain: &mut ChainModel) {
    let pairs: Vec<(usize, usize, f64, f64)> = [(0, 1), (0, 2), (1, 2)]
        .iter()
        .map(|&(i, j)| {
            let w = s[(i, j)] * s[(j, i)].conj();
            (i, j, w.norm(), w.arg())
        })
        .collect();
    let angles = |t: &[f64; 2]| [0.0, t[0], t[1]];
    let value = |t: &[f64; 2]| {
        let th = angles(t);
        pairs
            .iter()
            .map(|&(i, j, r, a)| r * (2.0 * (th[i] - th[j]) + a).cos())
            .sum::<f64>()
    };
    let derivs = |t: &[f64; 2]| {
        let th = angles(t);
        let mut g = [0.0; 2];
        let mut h = [[0.0; 2]; 2];
        for &(i, j, r, a) in &pairs {
            let phase = 2.0 * (th[i] - th[j]) + a;
            // d(phase)/d(t2, t3); t1 is fixed.
            let d = |k: usize| -> f64 {
                let mut v = 0.0;
                if i == k + 1 {
                    v += 2.0;
                }
                if j == k + 1 {
                    v -= 2.0;
                }
                v
            };
            let dd = [d(0), d(1)];
            for k in 0..2 {
                g[k] -= r * phase.sin() * dd[k];
                for l in 0..2 {
                    h[k][l] -= r * phase.cos() * dd[k] * dd[l];
                }
            }
        }
        (g, h)
    };

    // The objective is pi-periodic in each angle.
    let grid = 24;
    let mut t = [0.0, 0.0];
    let mut best = value(&t);
    for p in 0..grid {
        for q in 0..grid {
            let cand = [
                std::f64::consts::PI * p as f64 / grid as f64,
                std::f64::consts::PI * q as f64 / grid as f64,
            ];
            let v = value(&cand);
            if v > best + 1e-15 {
                best = v;
                t = cand;
            }
        }
    }
    for _ in 0..100 {
        let (g, h) = derivs(&t);
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        // Newton step where the Hessian is negative definite, gradient ascent otherwise.
        let step = if h[0][0] < 0.0 && det > 0.0 {
            [
                -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
                -(-h[1][0] * g[0] + h[0][0] * g[1]) / det,
            ]
        } else {
            [0.1 * g[0], 0.1 * g[1]]
        };
        let mut scale = 1.0;
        let mut moved = false;
        while scale > 1e-6 {
            let cand = [t[0] + scale * step[0], t[1] + scale * step[1]];
            let v = value(&cand);
            if v >= best {
                moved = v > best || cand != t;
                best = v;
                t = cand;
                break;
            }
            scale *= 0.5;
        }
        if !moved || step[0].abs().max(step[1].abs()) < 1e-15 {
            break;
        }
    }

    let th = angles(&t);
    *s = Matrix3c::from_fn(|i, j| s[(i, j)] * Complex64::from_polar(1.0, th[i] - th[j]));
    for i in 0..3 {
        let ph = Complex64::from_polar(1.0, th[i]);
        chain.b[i] /= ph;
        chain.a[i] *= ph;
    }
}

/// Solves `M = B·S·A` for diagonal gains and a unitary `S` near the identity.
pub fn solve_off_resonant(
    m_off: &Matrix3c,
    opts: &CalibrationOptions,
) -> Result<OffResonantSolution> {
    if m_off.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::invalid("m_off", "entries must be finite"));
    }
    let det = m_off.determinant();
    if !(det.norm() > 1e-14 * m_off.norm().powi(3)) {
        return Err(Error::invalid("m_off", "matrix is singular"));
    }

    let mut chain = initial_chain(m_off);
    let p = chain.products();
    let mut s = nearest_unitary(&Matrix3c::from_fn(|i, j| m_off[(i, j)] / p[(i, j)]));
    let mut residual = relative_residual(m_off, &chain, &s);
    // The closed-form start is exact for noiseless data; refinement only
    // replaces it when it fits better.
    let mut best = (residual, chain, s);
    let mean_p2 = p.iter().map(|z| z.norm_sqr()).sum::<f64>() / 9.0;
    let mut lambda = opts.regularization * mean_p2;
    let mut iterations = 0;

    while iterations < opts.max_iter && best.0 > 1e-15 {
        iterations += 1;
        let p = chain.products();
        let target = Matrix3c::from_fn(|i, j| {
            let reg = if i == j { lambda } else { 0.0 };
            (p[(i, j)].conj() * m_off[(i, j)] + reg) / (p[(i, j)].norm_sqr() + lambda)
        });
        s = nearest_unitary(&target);
        update_gains(m_off, &s, &mut chain);
        lambda *= 0.5;
        let r = relative_residual(m_off, &chain, &s);
        if r < best.0 {
            best = (r, chain, s);
        }
        let stalled = (residual - r).abs() <= 1e-15 && lambda < 1e-20 * mean_p2;
        residual = r;
        if stalled {
            break;
        }
    }
    let (_, mut chain, mut s) = best;

    fix_diagonal_phase(&mut s, &mut chain);
    fix_relative_phase(&mut s, &mut chain);
    residual = relative_residual(m_off, &chain, &s);
    if !(residual <= opts.max_residual) {
        return Err(Error::Numerical(format!(
            "off-resonant calibration residual {residual:e} exceeds {:e}; \
             the lossless chain model does not describe the data",
            opts.max_residual
        )));
    }
    Ok(OffResonantSolution {
        chain,
        s_off: s,
        residual,
        iterations,
    })
}

/// `S_ij = M_ij / (b_i a_j)`.
pub fn apply(m_on: &ScatteringMatrix, chain: &ChainModel) -> Result<ScatteringMatrix> {
    chain.validate()?;
    let p = chain.products();
    Ok(ScatteringMatrix::new(
        Matrix3c::from_fn(|i, j| m_on.entries[(i, j)] / p[(i, j)]),
        m_on.drive_freq,
    ))
}

/// `e^{iH}` for Hermitian `H`, via its eigen-decomposition.
pub fn unitary_from_hermitian(h: &Matrix3c) -> Matrix3c {
    let eig = h.symmetric_eigen();
    let phases = Matrix3::from_diagonal(&eig.eigenvalues.map(|x| Complex64::from_polar(1.0, x)));
    eig.eigenvectors * phases * eig.eigenvectors.adjoint()
}
