//! Derivative-free simplex minimization with jittered restarts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NelderMeadOptions {
    pub max_iters: usize,
    /// Absolute spread of simplex values at which a run stops.
    pub ftol: f64,
    /// Extra runs started from jittered copies of the best point.
    pub restarts: usize,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
    /// Standard deviation of the restart jitter.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iters: 400,
            ftol: 1e-6,
            restarts: 3,
            initial_step: 0.5,
            jitter: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Whether the last run met the tolerance.
    pub converged: bool,
    /// Best value after each iteration, across all runs.
    pub trace: Vec<f64>,
    /// Evaluations that returned a non-finite value.
    pub failures: usize,
}

struct Counter<F> {
    f: F,
    evaluations: usize,
    failures: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counter<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.f)(x);
        if v.is_finite() {
            v
        } else {
            self.failures += 1;
            f64::INFINITY
        }
    }
}

fn run<F: FnMut(&[f64]) -> f64>(
    c: &mut Counter<F>,
    x0: &[f64],
    f0: f64,
    opts: &NelderMeadOptions,
    trace: &mut Vec<f64>,
) -> (Vec<f64>, f64, usize, bool) {
    let d = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let v = c.eval(&x);
        simplex.push((x, v));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iters = 0;
    let mut converged = false;
    while iters < opts.max_iters {
        // Stable sort keeps earlier vertices first among ties.
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        trace.push(simplex[0].1);
        if (simplex[d].1 - simplex[0].1).abs() <= opts.ftol && simplex[0].1.is_finite() {
            converged = true;
            break;
        }
        iters += 1;
        let mut centroid = vec![0.0; d];
        for (x, _) in &simplex[..d] {
            for k in 0..d {
                centroid[k] += x[k] / d as f64;
            }
        }
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            (0..d).map(|k| centroid[k] + t * (worst[k] - centroid[k])).collect()
        };
        let worst = simplex[d].0.clone();
        let xr = along(-alpha, &worst);
        let fr = c.eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-gamma, &worst);
            let fe = c.eval(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[d].1 {
            let x = along(-rho, &worst);
            let v = c.eval(&x);
            (x, v)
        } else {
            let x = along(rho, &worst);
            let v = c.eval(&x);
            (x, v)
        };
        if fc < simplex[d].1.min(fr) {
            simplex[d] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for (x, v) in simplex.iter_mut().skip(1) {
            for k in 0..d {
                x[k] = best[k] + sigma * (x[k] - best[k]);
            }
            *v = c.eval(x);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v, iters, converged)
}

/// Minimizes `f` from `x0`. Non-finite values are treated as `+∞`. The best
/// point found over all runs is returned; a restart replaces it only on
/// strict improvement.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> OptimResult {
    let mut c = Counter {
        f,
        evaluations: 0,
        failures: 0,
    };
    let mut trace = Vec::new();
    let f0 = c.eval(x0);
    if x0.is_empty() {
        return OptimResult {
            x: Vec::new(),
            value: f0,
            iterations: 0,
            evaluations: c.evaluations,
            converged: true,
            trace,
            failures: c.failures,
        };
    }
    let (mut best_x, mut best_f, mut iterations, mut converged) = run(&mut c, x0, f0, opts, &mut trace);
    if f0 < best_f {
        best_x = x0.to_vec();
        best_f = f0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.restarts {
        let start: Vec<f64> = best_x
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + opts.jitter * z
            })
            .collect();
        let fs = c.eval(&start);
        let (x, v, it, conv) = run(&mut c, &start, fs, opts, &mut trace);
        iterations += it;
        if v < best_f {
            best_x = x;
            best_f = v;
            converged = conv;
        }
    }
    OptimResult {
        x: best_x,
        value: best_f,
        iterations,
        evaluations: c.evaluations,
        converged,
        trace,
        failures: c.failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_shifted_quadratic() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 0.5;
        let r = nelder_mead(f, &[0.0, 0.0], &NelderMeadOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 2e-3 && (r.x[1] + 2.0).abs() < 2e-3);
        assert!((r.value - 0.5).abs() < 1e-5);
    }

    #[test]
    fn rosenbrock_with_restarts() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let opts = NelderMeadOptions {
            ftol: 1e-12,
            max_iters: 2000,
            ..Default::default()
        };
        let r = nelder_mead(f, &[-1.2, 1.0], &opts);
        assert!((r.x[0] - 1.0).abs() < 1e-3, "{:?}", r.x);
    }

    #[test]
    fn never_worse_than_start_and_deterministic() {
        let f = |x: &[f64]| if x[0] > 0.3 { f64::NAN } else { (x[0] + 4.0).powi(2) };
        let opts = NelderMeadOptions::default();
        let a = nelder_mead(f, &[0.0], &opts);
        let b = nelder_mead(f, &[0.0], &opts);
        assert!(a.value <= 16.0);
        assert!(a.failures > 0);
        assert_eq!(a, b);
    }
}
