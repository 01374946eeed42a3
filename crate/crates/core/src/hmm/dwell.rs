use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::sig9;

/// Fewer complete dwells than this mark `tau_fit` unreliable.
pub const MIN_DWELLS: usize = 10;

/// Histogram bins with fewer counts are left out of the exponential fit.
pub const MIN_BIN_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDwell {
    pub state: usize,
    /// Complete dwell durations, in samples.
    pub dwells: Vec<usize>,
    /// Mean dwell from the slope of the log-histogram, seconds.
    pub tau_fit: Option<f64>,
    pub tau_fit_reliable: bool,
    /// `dt / (1 - P_ii)`, seconds.
    pub tau_model: Option<f64>,
    pub tau_model_reliable: bool,
}

impl StateDwell {
    /// `(length in samples, count)` for every observed length.
    pub fn histogram(&self) -> Vec<(usize, usize)> {
        let max = self.dwells.iter().copied().max().unwrap_or(0);
        let mut counts = vec![0usize; max + 1];
        for &d in &self.dwells {
            counts[d] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .filter(|&(l, c)| l > 0 && c > 0)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellStats {
    pub dt: f64,
    pub states: Vec<StateDwell>,
}

/// Maximal runs of equal labels as `(state, length)`.
pub fn run_lengths(path: &[usize]) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &s in path {
        match runs.last_mut() {
            Some((state, len)) if *state == s => *len += 1,
            _ => runs.push((s, 1)),
        }
    }
    runs
}

/// Count-weighted least-squares slope of `ln(count)` against dwell length.
///
/// Bins are taken from the shortest length up to the first bin with fewer than
/// [`MIN_BIN_COUNT`] entries. Isolated well-populated bins further out are
/// upward fluctuations of a thin tail; including them flattens the slope.
fn log_histogram_slope(hist: &[(usize, usize)]) -> Option<f64> {
    let mut pts: Vec<(f64, f64, f64)> = Vec::new();
    let mut expected = 1;
    for &(l, c) in hist {
        if l != expected || c < MIN_BIN_COUNT {
            break;
        }
        pts.push((l as f64, (c as f64).ln(), c as f64));
        expected += 1;
    }
    if pts.len() < 2 {
        return None;
    }
    let w: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / w;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / w;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Dwell statistics of a decoded path. The first and last runs are censored
/// and dropped. `stay[i]` is the self-transition probability of state `i`.
///
/// A geometric holding time with stay probability `p` has histogram slope
/// `ln p`, so `tau_fit = dt / (1 - e^slope)` estimates the same mean dwell as
/// `tau_model`.
pub fn dwell_stats(path: &[usize], dt: f64, stay: &[f64]) -> Result<DwellStats> {
    if path.is_empty() {
        return Err(Error::invalid("path", "must be non-empty"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let k = stay.len();
    if let Some(&s) = path.iter().find(|&&s| s >= k) {
        return Err(Error::invalid("path", format!("state {s} outside 0..{k}")));
    }
    let runs = run_lengths(path);
    let complete = if runs.len() > 2 { &runs[1..runs.len() - 1] } else { &[][..] };
    let states = (0..k)
        .map(|state| {
            let dwells: Vec<usize> = complete.iter().filter(|r| r.0 == state).map(|r| r.1).collect();
            let mut sd = StateDwell {
                state,
                dwells,
                tau_fit: None,
                tau_fit_reliable: false,
                tau_model: None,
                tau_model_reliable: false,
            };
            let slope = log_histogram_slope(&sd.histogram());
            sd.tau_fit = slope.filter(|&s| s < 0.0).map(|s| dt / (1.0 - s.exp()));
            sd.tau_fit_reliable = sd.tau_fit.is_some() && sd.dwells.len() >= MIN_DWELLS;
            let p = stay[state];
            if p < 1.0 {
                sd.tau_model = Some(dt / (1.0 - p));
            }
            sd.tau_model_reliable = sd.tau_model.is_some() && !sd.dwells.is_empty();
            sd
        })
        .collect();
    Ok(DwellStats { dt, states })
}

impl DwellStats {
    /// Per-state histogram rows: `state,dwell_samples,dwell_s,count`.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("state,dwell_samples,dwell_s,count\n");
        for s in &self.states {
            for (l, c) in s.histogram() {
                out.push_str(&format!("{},{},{},{}\n", s.state, l, sig9(l as f64 * self.dt), c));
            }
        }
        out
    }
}
