use rayon::prelude::*;

use super::fit::{fit_map, FitOptions, MapFit};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::models::{Combination, GaussianPosterior, HyperPoint, Model, ModelFamily, Target};
use crate::priors::alpha1_log_prior;

/// One fitted member: a MAP fit and the conditional posteriors on its
/// hyperparameter design.
#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub fit: MapFit,
    pub components: Vec<(f64, HyperPoint, GaussianPosterior)>,
}

impl EnsembleMember {
    pub fn from_fit(model: &Model, fit: MapFit) -> Result<Self> {
        let components = fit
            .design
            .iter()
            .map(|(h, w)| Ok((*w, h.clone(), model.condition(h, fit.alpha1, None)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { fit, components })
    }

    pub fn alpha1(&self) -> Option<f64> {
        self.fit.alpha1
    }

    pub fn log_ml(&self) -> f64 {
        self.fit.log_ml
    }
}

/// Members in grid order with their averaging weights.
#[derive(Debug, Clone)]
pub struct PosteriorEnsemble {
    pub family: ModelFamily,
    pub members: Vec<EnsembleMember>,
    pub log_prior: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PosteriorEnsemble {
    /// Ensemble of a single member with weight one.
    pub fn single(member: EnsembleMember) -> Self {
        Self {
            family: member.fit.family,
            members: vec![member],
            log_prior: vec![0.0],
            weights: vec![1.0],
        }
    }

    /// Weight-averaged multiplicative bias.
    pub fn alpha1_hat(&self) -> Option<f64> {
        let mut s = 0.0;
        for (m, w) in self.members.iter().zip(&self.weights) {
            s += w * m.alpha1()?;
        }
        Some(s)
    }
}

/// Normalized `exp(log_ml + log_prior)` via log-sum-exp.
pub fn bma_weights(log_ml: &[f64], log_prior: &[f64]) -> Result<Vec<f64>> {
    if log_ml.is_empty() || log_ml.len() != log_prior.len() {
        return Err(Error::invalid("weights need matching, non-empty inputs"));
    }
    let s: Vec<f64> = log_ml.iter().zip(log_prior).map(|(a, b)| a + b).collect();
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite log marginal likelihood".into()));
    }
    let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + s.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    Ok(s.iter().map(|v| (v - lse).exp()).collect())
}

/// Fits every member of the α₁ grid (in parallel) and weights them.
/// Non-fusion families yield a single-member ensemble.
pub fn bma_fit(model: &Model, init: Option<&HyperPoint>, opts: &FitOptions) -> Result<PosteriorEnsemble> {
    if model.family() != ModelFamily::Fusion {
        let fit = fit_map(model, None, init, opts)?;
        return Ok(PosteriorEnsemble::single(EnsembleMember::from_fit(model, fit)?));
    }
    let grid = &model.priors().alpha1_grid;
    let log_prior = alpha1_log_prior(grid, &model.priors().alpha1_prior)?;
    let fit_member = |a1: f64, init: Option<&HyperPoint>, opts: &FitOptions| {
        fit_map(model, Some(a1), init, opts)
            .and_then(|fit| EnsembleMember::from_fit(model, fit))
            .map_err(|e| Error::MemberFailed {
                alpha1: a1,
                source: Box::new(e),
            })
    };
    let members = match opts.warm_start_restarts {
        None => grid
            .par_iter()
            .map(|&a1| fit_member(a1, init, opts))
            .collect::<Result<Vec<_>>>()?,
        Some(restarts) => {
            let anchor = (0..grid.len())
                .min_by(|&a, &b| (grid[a] - 1.0).abs().total_cmp(&(grid[b] - 1.0).abs()))
                .ok_or_else(|| Error::invalid("empty alpha1 grid"))?;
            let first = fit_member(grid[anchor], init, opts)?;
            let start = first.fit.theta.clone();
            let mut warm = *opts;
            warm.optimizer.restarts = restarts;
            let mut rest = grid
                .par_iter()
                .enumerate()
                .filter(|(k, _)| *k != anchor)
                .map(|(_, &a1)| fit_member(a1, Some(&start), &warm))
                .collect::<Result<Vec<_>>>()?;
            rest.insert(anchor, first);
            rest
        }
    };
    let lml: Vec<f64> = members.iter().map(|m| m.log_ml()).collect();
    let weights = bma_weights(&lml, &log_prior)?;
    Ok(PosteriorEnsemble {
        family: model.family(),
        members,
        log_prior,
        weights,
    })
}

/// Mixture mean and variance of latent combinations across members and
/// their components. With `add_station_noise`, each member's station noise
/// variance is added, giving the predictive of a new station measurement.
pub fn predict_moments(
    ensemble: &PosteriorEnsemble,
    combos: &[Combination],
    add_station_noise: bool,
) -> (Vec<f64>, Vec<f64>) {
    let n = combos.len();
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for (member, &w) in ensemble.members.iter().zip(&ensemble.weights) {
        for (cw, h, post) in &member.components {
            let wk = w * cw;
            if wk == 0.0 {
                continue;
            }
            let noise = if add_station_noise {
                h.sigma_e1 * h.sigma_e1
            } else {
                0.0
            };
            let (mean, var) = post.combination_moments(combos);
            for i in 0..n {
                m1[i] += wk * mean[i];
                m2[i] += wk * (var[i] + noise + mean[i] * mean[i]);
            }
        }
    }
    let var = m1.iter().zip(&m2).map(|(a, b)| (b - a * a).max(0.0)).collect();
    (m1, var)
}

/// Model-averaged predictive mean and standard deviation of the process at
/// the targets.
pub fn bma_predict(model: &Model, ensemble: &PosteriorEnsemble, targets: &[Target]) -> Result<Vec<(f64, f64)>> {
    let combos = model.target_combinations(targets)?;
    let (m, v) = predict_moments(ensemble, &combos, false);
    Ok(m.into_iter().zip(v).map(|(a, b)| (a, b.sqrt())).collect())
}

/// Bias-corrected grid values `(w₂ − α̂₀)/α̂₁`, with `α̂₀` the averaged
/// error-field mean at each cell and `α̂₁` the averaged multiplicative bias.
pub fn calibrate_grid(
    model: &Model,
    ensemble: &PosteriorEnsemble,
    cells: &[(Point, usize)],
    grid_values: &[f64],
) -> Result<Vec<f64>> {
    if cells.len() != grid_values.len() {
        return Err(Error::invalid("one grid value per cell is required"));
    }
    let a1 = ensemble
        .alpha1_hat()
        .ok_or_else(|| Error::invalid("calibration needs a fusion ensemble"))?;
    if a1.abs() < 1e-6 {
        return Err(Error::Numerical(format!("averaged alpha1 {a1} is too close to zero")));
    }
    let combos = model.error_field_combinations(cells)?;
    let (a0, _) = predict_moments(ensemble, &combos, false);
    Ok(grid_values.iter().zip(a0).map(|(w, a)| (w - a) / a1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_evidence_gives_equal_weights() {
        let w = bma_weights(&[-3.0, -3.0], &[0.5f64.ln(), 0.5f64.ln()]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shift_invariance_and_argmax() {
        let lml = [-10.0, -7.5, -9.0, -30.0];
        let lp = vec![-(4f64).ln(); 4];
        let a = bma_weights(&lml, &lp).unwrap();
        let shifted: Vec<f64> = lml.iter().map(|v| v + 1e4).collect();
        let b = bma_weights(&shifted, &lp).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
            assert!(*x > 0.0);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = a.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        assert_eq!(best, 1);
    }
}
