use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::{covariance_floor, floor_covariance, Gaussian, HmmModel};
use super::series::TimeSeries;

/// Allowed per-iteration drop in log-likelihood before EM is declared broken.
pub const MONOTONE_TOL: f64 = 1e-8;

const KMEANS_MAX_ITER: usize = 300;
const KMEANS_RESEEDS: usize = 10;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Weighted mean and (population) covariance of the rows of `series`.
fn weighted_stats(series: &TimeSeries, w: impl Fn(usize) -> f64) -> (f64, DVector<f64>, DMatrix<f64>) {
    let d = series.dim();
    let mut total = 0.0;
    let mut mean = DVector::zeros(d);
    for (t, x) in series.samples().enumerate() {
        let wt = w(t);
        if wt != 0.0 {
            total += wt;
            for i in 0..d {
                mean[i] += wt * x[i];
            }
        }
    }
    if total > 0.0 {
        mean /= total;
    }
    let mut cov = DMatrix::zeros(d, d);
    let mut diff = DVector::zeros(d);
    for (t, x) in series.samples().enumerate() {
        let wt = w(t);
        if wt != 0.0 {
            for i in 0..d {
                diff[i] = x[i] - mean[i];
            }
            cov.syger(wt, &diff, &diff, 1.0);
        }
    }
    if total > 0.0 {
        cov /= total;
    }
    cov.fill_upper_triangle_with_lower_triangle();
    (total, mean, cov)
}

fn k_means_pp(series: &TimeSeries, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = series.len();
    let mut centroids = vec![series.sample(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = series.samples().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&v| {
                    acc += v;
                    u < acc
                })
                .unwrap_or_else(|| d2.iter().rposition(|&v| v > 0.0).unwrap_or(0))
        } else {
            rng.random_range(0..n)
        };
        let c = series.sample(idx).to_vec();
        for (t, x) in series.samples().enumerate() {
            d2[t] = d2[t].min(sq_dist(x, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// k-means++ seeding and Lloyd iterations; returns centroids and assignments.
pub fn kmeans(series: &TimeSeries, k: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if k == 0 {
        return Err(Error::invalid("n_states", "must be at least 1"));
    }
    if series.len() < k {
        return Err(Error::invalid(
            "series",
            format!("{} samples cannot seed {k} clusters", series.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = k_means_pp(series, k, &mut rng);
    let mut assign = vec![usize::MAX; series.len()];
    let mut reseeds = 0;
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        let mut dists = vec![0.0; series.len()];
        for (t, x) in series.samples().enumerate() {
            let (c, dist) = nearest(x, &centroids);
            dists[t] = dist;
            if assign[t] != c {
                assign[t] = c;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        for &a in &assign {
            counts[a] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            if reseeds == KMEANS_RESEEDS {
                return Err(Error::Numerical(format!(
                    "k-means left cluster {empty} empty after {KMEANS_RESEEDS} re-seeds"
                )));
            }
            reseeds += 1;
            // Move the empty centroid to the worst-fit point.
            let far = (0..series.len())
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("series is non-empty");
            if dists[far] == 0.0 {
                return Err(Error::Numerical(format!(
                    "k-means cannot fill cluster {empty}: fewer than {k} distinct samples"
                )));
            }
            centroids[empty] = series.sample(far).to_vec();
            assign.iter_mut().for_each(|a| *a = usize::MAX);
            continue;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let (_, mean, _) = weighted_stats(series, |t| if assign[t] == c { 1.0 } else { 0.0 });
            *centroid = mean.iter().copied().collect();
        }
        if !changed {
            break;
        }
    }
    Ok((centroids, assign))
}

/// Emission parameters from k-means clusters; sticky transitions (0.99 stay).
pub fn kmeans_init(series: &TimeSeries, k: usize, seed: u64) -> Result<HmmModel> {
    let (_, assign) = kmeans(series, k, seed)?;
    let floor = covariance_floor(series);
    let emissions = (0..k)
        .map(|c| {
            let (_, mean, cov) = weighted_stats(series, |t| if assign[t] == c { 1.0 } else { 0.0 });
            Gaussian::new(mean, floor_covariance(&cov, floor))
        })
        .collect::<Result<Vec<_>>>()?;
    let trans = if k == 1 {
        DMatrix::from_element(1, 1, 1.0)
    } else {
        let off = 0.01 / (k - 1) as f64;
        DMatrix::from_fn(k, k, |i, j| if i == j { 0.99 } else { off })
    };
    HmmModel::new(DVector::from_element(k, 1.0 / k as f64), trans, emissions)
}

/// Random starting model: means at distinct random samples, every covariance
/// equal to the global one, random transition rows and initial distribution.
pub fn random_init(series: &TimeSeries, k: usize, seed: u64) -> Result<HmmModel> {
    if k == 0 || series.len() < k {
        return Err(Error::invalid("n_states", "need 1 <= n_states <= series length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, series.len(), k);
    let (_, _, global) = weighted_stats(series, |_| 1.0);
    let cov = floor_covariance(&global, covariance_floor(series));
    let emissions = picks
        .iter()
        .map(|t| Gaussian::new(DVector::from_column_slice(series.sample(t)), cov.clone()))
        .collect::<Result<Vec<_>>>()?;
    let row = |rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
        let total: f64 = v.iter().sum();
        v.into_iter().map(|x| x / total).collect::<Vec<_>>()
    };
    let initial = DVector::from_vec(row(&mut rng));
    let rows: Vec<Vec<f64>> = (0..k).map(|_| row(&mut rng)).collect();
    let trans = DMatrix::from_fn(k, k, |i, j| rows[i][j]);
    HmmModel::new(initial, trans, emissions)
}

/// Compensated running sum.
#[derive(Default, Clone, Copy)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

fn log_emissions(model: &HmmModel, series: &TimeSeries) -> Vec<f64> {
    let k = model.n_states();
    let mut out = vec![0.0; series.len() * k];
    out.par_chunks_mut(k)
        .zip(series.samples().collect::<Vec<_>>().par_iter())
        .for_each(|(row, x)| {
            for (s, g) in model.emissions.iter().enumerate() {
                row[s] = g.log_density(x);
            }
        });
    out
}

/// Posterior state marginals, summed pair marginals, and the log-likelihood.
struct Posterior {
    gamma: Vec<f64>,
    xi_sum: DMatrix<f64>,
    log_likelihood: f64,
}

/// Scaled forward-backward; per-sample emissions are normalised by their
/// maximum so no step underflows.
fn forward_backward(model: &HmmModel, series: &TimeSeries) -> Result<Posterior> {
    let (n, k) = (series.len(), model.n_states());
    let log_b = log_emissions(model, series);
    let mut b = vec![0.0; n * k];
    let mut ll = Neumaier::default();
    for t in 0..n {
        let row = &log_b[t * k..(t + 1) * k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::Numerical(format!("emission log-density not finite at sample {t}")));
        }
        ll.add(m);
        for s in 0..k {
            b[t * k + s] = (row[s] - m).exp();
        }
    }

    let a = &model.trans;
    let mut alpha = vec![0.0; n * k];
    let mut scale = vec![0.0; n];
    for t in 0..n {
        for j in 0..k {
            let prior = if t == 0 {
                model.initial[j]
            } else {
                (0..k).map(|i| alpha[(t - 1) * k + i] * a[(i, j)]).sum()
            };
            alpha[t * k + j] = prior * b[t * k + j];
        }
        let c: f64 = alpha[t * k..(t + 1) * k].iter().sum();
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Numerical(format!("forward pass lost all probability at sample {t}")));
        }
        scale[t] = c;
        alpha[t * k..(t + 1) * k].iter_mut().for_each(|x| *x /= c);
        ll.add(c.ln());
    }

    let mut beta = vec![1.0; n * k];
    let mut xi_sum = DMatrix::zeros(k, k);
    for t in (0..n.saturating_sub(1)).rev() {
        let c = scale[t + 1];
        for i in 0..k {
            let mut acc = 0.0;
            for j in 0..k {
                let w = a[(i, j)] * b[(t + 1) * k + j] * beta[(t + 1) * k + j];
                acc += w;
                xi_sum[(i, j)] += alpha[t * k + i] * w / c;
            }
            beta[t * k + i] = acc / c;
        }
    }
    let mut gamma = vec![0.0; n * k];
    for t in 0..n {
        let row: Vec<f64> = (0..k).map(|s| alpha[t * k + s] * beta[t * k + s]).collect();
        let z: f64 = row.iter().sum();
        for s in 0..k {
            gamma[t * k + s] = row[s] / z;
        }
    }
    Ok(Posterior {
        gamma,
        xi_sum,
        log_likelihood: ll.value(),
    })
}

/// Log-likelihood of `series` under `model`.
pub fn log_likelihood(model: &HmmModel, series: &TimeSeries) -> Result<f64> {
    check_compatible(model, series)?;
    Ok(forward_backward(model, series)?.log_likelihood)
}

fn check_compatible(model: &HmmModel, series: &TimeSeries) -> Result<()> {
    model.validate()?;
    if model.dim() != series.dim() {
        return Err(Error::invalid(
            "series",
            format!("dimension {} does not match model dimension {}", series.dim(), model.dim()),
        ));
    }
    if series.is_empty() {
        return Err(Error::invalid("series", "no samples"));
    }
    Ok(())
}

fn m_step(model: &HmmModel, series: &TimeSeries, post: &Posterior, floor: f64) -> Result<HmmModel> {
    let k = model.n_states();
    let g = &post.gamma;
    let initial = DVector::from_fn(k, |s, _| g[s]);
    let initial = &initial / initial.sum();

    let mut trans = model.trans.clone();
    for i in 0..k {
        let row_sum: f64 = (0..k).map(|j| post.xi_sum[(i, j)]).sum();
        if row_sum > 0.0 {
            for j in 0..k {
                trans[(i, j)] = post.xi_sum[(i, j)] / row_sum;
            }
        }
    }
    let mut emissions = Vec::with_capacity(k);
    for s in 0..k {
        let (w, mean, cov) = weighted_stats(series, |t| g[t * k + s]);
        if w > 0.0 {
            emissions.push(Gaussian::new(mean, floor_covariance(&cov, floor))?);
        } else {
            emissions.push(model.emissions[s].clone());
        }
    }
    HmmModel::new(initial, trans, emissions)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaumWelchOptions {
    /// Stop once `(ll_new - ll_old) / |ll_old|` falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BaumWelchOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Training {
    pub model: HmmModel,
    /// Log-likelihood of each evaluated model; the last entry belongs to `model`.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

impl Training {
    pub fn log_likelihood(&self) -> f64 {
        *self.log_likelihoods.last().expect("at least one evaluation")
    }
}

/// Expectation-maximisation from `init`. A drop in log-likelihood beyond
/// [`MONOTONE_TOL`] is reported as a numerical failure.
pub fn baum_welch(series: &TimeSeries, init: &HmmModel, opts: &BaumWelchOptions) -> Result<Training> {
    check_compatible(init, series)?;
    if !(opts.tol >= 0.0) {
        return Err(Error::invalid("hmm.tol", "must be non-negative"));
    }
    let floor = covariance_floor(series);
    let mut model = init.clone();
    let mut history: Vec<f64> = Vec::new();
    let mut iter = 0;
    loop {
        let post = forward_backward(&model, series)?;
        let ll = post.log_likelihood;
        if let Some(&prev) = history.last() {
            if ll < prev - MONOTONE_TOL {
                return Err(Error::Numerical(format!(
                    "log-likelihood decreased from {prev} to {ll} at iteration {iter}"
                )));
            }
            history.push(ll);
            if (ll - prev) <= opts.tol * prev.abs() {
                return Ok(Training {
                    model,
                    log_likelihoods: history,
                    converged: true,
                });
            }
        } else {
            history.push(ll);
        }
        if iter == opts.max_iter {
            return Ok(Training {
                model,
                log_likelihoods: history,
                converged: false,
            });
        }
        model = m_step(&model, series, &post, floor)?;
        iter += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmmOptions {
    pub n_states: usize,
    /// Independent k-means seeds; the best final likelihood wins.
    pub restarts: usize,
    #[serde(flatten)]
    pub baum_welch: BaumWelchOptions,
}

impl Default for HmmOptions {
    fn default() -> Self {
        Self {
            n_states: 4,
            restarts: 4,
            baum_welch: BaumWelchOptions::default(),
        }
    }
}

/// k-means initialisation plus Baum-Welch, repeated over seeds `seed..seed+restarts`.
pub fn train(series: &TimeSeries, opts: &HmmOptions, seed: u64) -> Result<Training> {
    if opts.restarts == 0 {
        return Err(Error::invalid("hmm.restarts", "must be at least 1"));
    }
    let runs: Vec<Result<Training>> = (0..opts.restarts as u64)
        .into_par_iter()
        .map(|r| {
            let init = kmeans_init(series, opts.n_states, seed.wrapping_add(r))?;
            baum_welch(series, &init, &opts.baum_welch)
        })
        .collect();
    let mut best: Option<Training> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(t) => {
                if best.as_ref().is_none_or(|b| t.log_likelihood() > b.log_likelihood()) {
                    best = Some(t);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one restart ran"))
}

/// Most probable hidden path; ties go to the lower state index.
pub fn viterbi(model: &HmmModel, series: &TimeSeries) -> Result<Vec<usize>> {
    check_compatible(model, series)?;
    let (n, k) = (series.len(), model.n_states());
    let log_b = log_emissions(model, series);
    let log_a = model.trans.map(f64::ln);
    let mut delta: Vec<f64> = (0..k).map(|s| model.initial[s].ln() + log_b[s]).collect();
    let mut back = vec![0usize; n * k];
    let mut next = vec![0.0; k];
    for t in 1..n {
        for j in 0..k {
            let mut best = (0, f64::NEG_INFINITY);
            for i in 0..k {
                let v = delta[i] + log_a[(i, j)];
                if v > best.1 {
                    best = (i, v);
                }
            }
            back[t * k + j] = best.0;
            next[j] = best.1 + log_b[t * k + j];
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut state = 0;
    for s in 1..k {
        if delta[s] > delta[state] {
            state = s;
        }
    }
    let mut path = vec![0; n];
    for t in (0..n).rev() {
        path[t] = state;
        state = back[t * k + state];
    }
    Ok(path)
}

/// Best agreement between two labelings over all relabelings of `decoded`;
/// returns `perm` with `perm[decoded] = truth` and the matching fraction.
pub fn label_agreement(truth: &[usize], decoded: &[usize], k: usize) -> (Vec<usize>, f64) {
    assert_eq!(truth.len(), decoded.len());
    let mut counts = vec![vec![0usize; k]; k];
    for (&t, &d) in truth.iter().zip(decoded) {
        if t < k && d < k {
            counts[d][t] += 1;
        }
    }
    let mut best = ((0..k).collect::<Vec<_>>(), 0usize);
    let mut perm: Vec<usize> = (0..k).collect();
    permutations(&mut perm, 0, &mut |p| {
        let hits = (0..k).map(|d| counts[d][p[d]]).sum::<usize>();
        if hits > best.1 {
            best = (p.to_vec(), hits);
        }
    });
    let frac = if truth.is_empty() {
        1.0
    } else {
        best.1 as f64 / truth.len() as f64
    };
    (best.0, frac)
}

fn permutations(p: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == p.len() {
        visit(p);
        return;
    }
    for i in start..p.len() {
        p.swap(start, i);
        permutations(p, start + 1, visit);
        p.swap(start, i);
    }
}
