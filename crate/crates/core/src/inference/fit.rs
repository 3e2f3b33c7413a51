use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::optim::{nelder_mead, NelderMeadOptions};
use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::models::{HyperPoint, Model, ModelFamily, ObservationSet};
use crate::priors::HyperPriorSet;

/// Treatment of hyperparameter uncertainty within one α₁ member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThetaIntegration {
    /// Condition on the posterior mode only.
    #[default]
    Plugin,
    /// Also condition on the mode shifted by one curvature-based standard
    /// deviation along each search axis, weighting the `2d + 1` points by
    /// their posterior density.
    AxisGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FitOptions {
    #[serde(default)]
    pub optimizer: NelderMeadOptions,
    #[serde(default)]
    pub integration: ThetaIntegration,
    /// When set, the ensemble member nearest `α₁ = 1` is fitted first and
    /// every other member starts from its mode, using this many restarts.
    #[serde(default)]
    pub warm_start_restarts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub failures: usize,
    pub start_log_posterior: f64,
    /// Best log posterior after each simplex iteration.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFit {
    pub family: ModelFamily,
    pub alpha1: Option<f64>,
    pub theta: HyperPoint,
    /// Log posterior density of the search coordinates at the mode, up to
    /// the normalizing constant.
    pub log_posterior: f64,
    /// Conditional log marginal likelihood at the mode.
    pub log_ml: f64,
    pub diagnostics: FitDiagnostics,
    /// Hyperparameter points to condition on, with normalized weights.
    pub design: Vec<(HyperPoint, f64)>,
}

fn point_at(model: &Model, base: &HyperPoint, u: &[f64]) -> HyperPoint {
    let mut h = base.clone();
    for (slot, &ui) in model.slots().iter().zip(u) {
        slot.set(&mut h, slot.transform().to_natural(ui));
    }
    h
}

/// Log posterior in search coordinates, with the log marginal likelihood.
fn objective(model: &Model, alpha1: Option<f64>, h: &HyperPoint) -> Result<(f64, f64)> {
    let lp = model.log_prior(h);
    if !lp.is_finite() {
        return Ok((f64::NEG_INFINITY, f64::NAN));
    }
    let jac: f64 = model.slots().iter().map(|s| s.transform().log_jacobian(s.get(h))).sum();
    let post = model.condition(h, alpha1, None)?;
    Ok((post.log_ml + lp + jac, post.log_ml))
}

/// Posterior-mode hyperparameters for `model` (at fixed `α₁` for fusion).
pub fn fit_map(model: &Model, alpha1: Option<f64>, init: Option<&HyperPoint>, opts: &FitOptions) -> Result<MapFit> {
    let base = init.cloned().unwrap_or_else(|| model.prior_mode());
    base.validate(model.family())?;
    let slots = model.slots().to_vec();
    let u0: Vec<f64> = slots.iter().map(|s| s.transform().to_internal(s.get(&base))).collect();

    let (start, _) = objective(model, alpha1, &base)?;
    if !start.is_finite() {
        return Err(Error::Numerical(
            "log posterior is not finite at the starting point".into(),
        ));
    }
    let mut hard_error: Option<Error> = None;
    let result = nelder_mead(
        |u| {
            let h = point_at(model, &base, u);
            match objective(model, alpha1, &h) {
                Ok((v, _)) => -v,
                Err(e) => {
                    if !e.is_numerical() && hard_error.is_none() {
                        hard_error = Some(e);
                    }
                    f64::NAN
                }
            }
        },
        &u0,
        &opts.optimizer,
    );
    if let Some(e) = hard_error {
        return Err(e);
    }
    if result.failures == result.evaluations {
        return Err(Error::Numerical("every factorization failed during the search".into()));
    }
    let theta = point_at(model, &base, &result.x);
    let (log_posterior, log_ml) = objective(model, alpha1, &theta)?;

    let design = match opts.integration {
        ThetaIntegration::Plugin => vec![(theta.clone(), 1.0)],
        ThetaIntegration::AxisGrid => axis_design(model, alpha1, &base, &result.x, log_posterior)?,
    };

    Ok(MapFit {
        family: model.family(),
        alpha1,
        theta,
        log_posterior,
        log_ml,
        diagnostics: FitDiagnostics {
            iterations: result.iterations,
            evaluations: result.evaluations,
            converged: result.converged,
            failures: result.failures,
            start_log_posterior: start,
            trace: result.trace.iter().map(|v| -v).collect(),
        },
        design,
    })
}

fn axis_design(
    model: &Model,
    alpha1: Option<f64>,
    base: &HyperPoint,
    mode: &[f64],
    f0: f64,
) -> Result<Vec<(HyperPoint, f64)>> {
    let h = 0.1;
    let eval = |u: &[f64]| -> f64 {
        objective(model, alpha1, &point_at(model, base, u))
            .map(|v| v.0)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut pts: Vec<(Vec<f64>, f64)> = vec![(mode.to_vec(), f0)];
    for i in 0..mode.len() {
        let mut up = mode.to_vec();
        let mut dn = mode.to_vec();
        up[i] += h;
        dn[i] -= h;
        let curv = (eval(&up) + eval(&dn) - 2.0 * f0) / (h * h);
        let sd = if curv < 0.0 && curv.is_finite() {
            (1.0 / -curv).sqrt()
        } else {
            h
        };
        for sign in [-1.0, 1.0] {
            let mut u = mode.to_vec();
            u[i] += sign * sd;
            let v = eval(&u);
            if v.is_finite() {
                pts.push((u, v));
            }
        }
    }
    let mx = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = pts.iter().map(|p| (p.1 - mx).exp()).sum();
    Ok(pts
        .into_iter()
        .map(|(u, v)| (point_at(model, base, &u), (v - mx).exp() / total))
        .collect())
}

/// Builds the model and fits it in one call.
pub fn fit_model(
    family: ModelFamily,
    data: &ObservationSet,
    mesh: &Mesh,
    priors: &HyperPriorSet,
    alpha1: Option<f64>,
    init: Option<&HyperPoint>,
    opts: &FitOptions,
) -> Result<(Model, MapFit)> {
    let model = Model::new(family, Arc::new(data.clone()), Arc::new(mesh.clone()), priors)?;
    let fit = fit_map(&model, alpha1, init, opts)?;
    Ok((model, fit))
}
