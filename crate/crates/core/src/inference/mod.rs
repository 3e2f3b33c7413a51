//! Exact conditional inference given hyperparameters, hyperparameter
//! estimation, and averaging over the multiplicative-bias grid.

mod bma;
mod fit;
pub mod optim;

pub use bma::{bma_fit, bma_predict, bma_weights, calibrate_grid, predict_moments, EnsembleMember, PosteriorEnsemble};
pub use fit::{fit_map, fit_model, FitDiagnostics, FitOptions, MapFit, ThetaIntegration};

use crate::error::Result;
use crate::linalg::{matvec_transposed, CholeskyFactor};
use crate::models::{posterior_precision, GaussianPosterior, GaussianSystem};

/// Posterior of the latent vector: `Q_post = Q_prior + AᵀNA`,
/// `Q_post μ = AᵀNy`, with the log marginal likelihood of `y`.
pub fn condition(system: &GaussianSystem) -> Result<GaussianPosterior> {
    let q_post = posterior_precision(system);
    let factor = CholeskyFactor::new(&q_post)?;
    let ny: Vec<f64> = system
        .y
        .iter()
        .zip(&system.noise_precision)
        .map(|(y, n)| y * n)
        .collect();
    let b = if system.n_obs() == 0 {
        vec![0.0; system.latent_dim()]
    } else {
        matvec_transposed(&system.a, &ny)
    };
    let mean = factor.solve(&b);
    let prior = CholeskyFactor::new(&system.q_prior)?;
    let log_det_n: f64 = system.noise_precision.iter().map(|v| v.ln()).sum();
    let yny: f64 = system.y.iter().zip(&ny).map(|(y, v)| y * v).sum();
    let btmu: f64 = b.iter().zip(&mean).map(|(x, y)| x * y).sum();
    let m = system.n_obs() as f64;
    let log_ml = 0.5 * prior.log_det() + 0.5 * log_det_n
        - 0.5 * factor.log_det()
        - 0.5 * (yny - btmu)
        - 0.5 * m * (2.0 * std::f64::consts::PI).ln();
    Ok(GaussianPosterior { factor, mean, log_ml })
}

/// `log N(y; 0, A Q_prior⁻¹ Aᵀ + N⁻¹)`.
pub fn log_marginal_likelihood(system: &GaussianSystem) -> Result<f64> {
    Ok(condition(system)?.log_ml)
}
