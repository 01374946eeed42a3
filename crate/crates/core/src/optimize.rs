//! Derivative-free Nelder-Mead simplex minimisation.

/// Stopping rule and initial simplex size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Hard cap on iterations.
    pub max_iter: usize,
    /// Window (in iterations) over which the best value must improve...
    pub stall_iter: usize,
    /// ...by at least this much, or the search stops as converged.
    pub stall_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            stall_iter: 50,
            stall_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// True if stopped by the stall rule rather than the iteration cap.
    pub converged: bool,
    /// Best value after each iteration (index 0 is the initial simplex).
    pub history: Vec<f64>,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimises `f` from `x0`, with initial simplex vertices `x0 + steps[i] e_i`.
///
/// Non-finite objective values are treated as `+inf`, which lets callers
/// encode hard constraints by returning `f64::INFINITY`.
pub fn nelder_mead<F>(f: F, x0: &[f64], steps: &[f64], opts: NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(steps.len(), n, "one step per coordinate");
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = eval(&x);
        simplex.push((x, v));
    }
    sort(&mut simplex);

    let mut history = vec![simplex[0].1];
    let mut iterations = 0;
    let mut converged = false;

    if n == 0 {
        return Minimum {
            x: x0.to_vec(),
            value: v0,
            iterations: 0,
            evaluations,
            converged: true,
            history,
        };
    }

    while iterations < opts.max_iter {
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(REFLECT);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(EXPAND);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = along(CONTRACT * REFLECT);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-CONTRACT);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best
                        .iter()
                        .zip(&vertex.0)
                        .map(|(b, v)| b + SHRINK * (v - b))
                        .collect();
                    let v = eval(&x);
                    *vertex = (x, v);
                }
            }
        }
        sort(&mut simplex);
        history.push(simplex[0].1);

        if iterations >= opts.stall_iter {
            let then = history[iterations - opts.stall_iter];
            let now = simplex[0].1;
            let improvement = if then.is_finite() { then - now } else { f64::INFINITY };
            if improvement < opts.stall_tol {
                converged = true;
                break;
            }
        }
    }

    Minimum {
        x: simplex[0].0.clone(),
        value: simplex[0].1,
        iterations,
        evaluations,
        converged,
        history,
    }
}

fn sort(simplex: &mut [(Vec<f64>, f64)]) {
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let opts = NelderMeadOptions {
            stall_tol: 1e-14,
            ..Default::default()
        };
        let m = nelder_mead(rosenbrock, &[-1.2, 1.0], &[0.1, 0.1], opts);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn best_value_never_increases() {
        let m = nelder_mead(
            |x| x.iter().map(|v| (v - 3.0).powi(2)).sum::<f64>() + (x[0] * x[1]).sin(),
            &[0.0, 0.0, 0.0],
            &[0.5, 0.5, 0.5],
            NelderMeadOptions::default(),
        );
        for w in m.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn respects_infinite_barrier() {
        let m = nelder_mead(
            |x| if x[0] < 0.5 { f64::INFINITY } else { (x[0] - 0.2).powi(2) },
            &[2.0],
            &[0.3],
            NelderMeadOptions {
                stall_tol: 1e-12,
                ..Default::default()
            },
        );
        assert!(m.x[0] >= 0.5 && m.x[0] < 0.51, "{:?}", m.x);
    }

    #[test]
    fn iteration_cap_reported() {
        let m = nelder_mead(
            rosenbrock,
            &[-1.2, 1.0],
            &[0.1, 0.1],
            NelderMeadOptions {
                max_iter: 5,
                stall_iter: 50,
                stall_tol: 1e-6,
            },
        );
        assert!(!m.converged);
        assert_eq!(m.iterations, 5);
    }
}
