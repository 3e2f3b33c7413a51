//! Hyperparameter priors.
//!
//! Penalized-complexity priors are specified by tail statements:
//! `P(σ > σ₀) = ζ` for standard deviations and `P(ρ < ρ₀) = ζ` for ranges.
//! The corresponding densities are exponential in `σ` and, for a
//! two-dimensional field, exponential in `1/ρ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcKind {
    SdUpper,
    RangeLower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcPriorSpec {
    pub kind: PcKind,
    pub threshold: f64,
    pub prob: f64,
}

impl PcPriorSpec {
    pub fn sd(threshold: f64, prob: f64) -> Result<Self> {
        Self::checked(PcKind::SdUpper, threshold, prob)
    }

    pub fn range(threshold: f64, prob: f64) -> Result<Self> {
        Self::checked(PcKind::RangeLower, threshold, prob)
    }

    fn checked(kind: PcKind, threshold: f64, prob: f64) -> Result<Self> {
        let s = Self { kind, threshold, prob };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::invalid(format!(
                "PC prior threshold must be positive, got {}",
                self.threshold
            )));
        }
        if !(self.prob > 0.0 && self.prob < 1.0) {
            return Err(Error::invalid(format!(
                "PC prior probability must lie in (0, 1), got {}",
                self.prob
            )));
        }
        Ok(())
    }

    /// Rate of the underlying exponential distribution.
    pub fn lambda(&self) -> f64 {
        match self.kind {
            PcKind::SdUpper => -self.prob.ln() / self.threshold,
            PcKind::RangeLower => -self.prob.ln() * self.threshold,
        }
    }

    /// Log-density at `v`, `-inf` outside `(0, ∞)`.
    pub fn log_density(&self, v: f64) -> f64 {
        if !(v > 0.0) || !v.is_finite() {
            return f64::NEG_INFINITY;
        }
        let l = self.lambda();
        match self.kind {
            PcKind::SdUpper => l.ln() - l * v,
            PcKind::RangeLower => l.ln() - 2.0 * v.ln() - l / v,
        }
    }

    /// Mode of the density of `log v`; a natural starting value.
    pub fn log_scale_mode(&self) -> f64 {
        match self.kind {
            PcKind::SdUpper => 1.0 / self.lambda(),
            PcKind::RangeLower => self.lambda(),
        }
    }
}

fn expect_kind(spec: &PcPriorSpec, kind: PcKind) -> Result<()> {
    spec.validate()?;
    if spec.kind != kind {
        return Err(Error::invalid(format!(
            "expected a {kind:?} prior, got {:?}",
            spec.kind
        )));
    }
    Ok(())
}

/// Exponential log-density `log λ − λσ`, `λ = −ln ζ / σ₀`.
pub fn pc_sd_logpdf(sigma: f64, spec: &PcPriorSpec) -> Result<f64> {
    expect_kind(spec, PcKind::SdUpper)?;
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "standard deviation must be positive, got {sigma}"
        )));
    }
    Ok(spec.log_density(sigma))
}

/// Log-density of `λ ρ⁻² exp(−λ/ρ)`, `λ = −ln ζ · ρ₀`.
pub fn pc_range_logpdf(rho: f64, spec: &PcPriorSpec) -> Result<f64> {
    expect_kind(spec, PcKind::RangeLower)?;
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("range must be positive, got {rho}")));
    }
    Ok(spec.log_density(rho))
}

/// Prior for an AR(1) coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArPrior {
    #[default]
    Uniform,
    /// Experimental: penalized-complexity prior towards `φ = 0` with
    /// `P(|φ| > threshold) = prob`.
    PcCorrelation { threshold: f64, prob: f64 },
}

impl ArPrior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ArPrior::Uniform => Ok(()),
            ArPrior::PcCorrelation { threshold, prob } => {
                if !(threshold > 0.0 && threshold < 1.0 && prob > 0.0 && prob < 1.0) {
                    Err(Error::invalid("AR PC prior needs threshold and prob in (0, 1)"))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn log_density(&self, phi: f64) -> f64 {
        if !(phi.abs() < 1.0) {
            return f64::NEG_INFINITY;
        }
        match *self {
            ArPrior::Uniform => -std::f64::consts::LN_2,
            ArPrior::PcCorrelation { threshold, prob } => {
                let lambda = -prob.ln() / (-(1.0 - threshold * threshold).ln()).sqrt();
                let one_m = 1.0 - phi * phi;
                let d = (-one_m.ln()).sqrt();
                if d < 1e-8 {
                    // Limit |φ|/d → 1 at the origin.
                    return (lambda / 2.0).ln();
                }
                (lambda / 2.0).ln() - lambda * d + phi.abs().ln() - one_m.ln() - d.ln()
            }
        }
    }
}

pub fn ar_logprior(phi: f64, prior: &ArPrior) -> Result<f64> {
    prior.validate()?;
    if !(phi.abs() < 1.0) {
        return Err(Error::invalid(format!("AR coefficient must lie in (-1, 1), got {phi}")));
    }
    Ok(prior.log_density(phi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Alpha1Prior {
    #[default]
    Uniform,
    Weights(Vec<f64>),
}

/// Values from 0.5 to 1.5 in steps of 0.1.
pub fn default_alpha1_grid() -> Vec<f64> {
    (0..=10).map(|k| (5 + k) as f64 / 10.0).collect()
}

pub fn alpha1_log_prior(grid: &[f64], prior: &Alpha1Prior) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::invalid("alpha1 grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("alpha1 grid must be strictly increasing"));
    }
    match prior {
        Alpha1Prior::Uniform => Ok(vec![-(grid.len() as f64).ln(); grid.len()]),
        Alpha1Prior::Weights(w) => {
            if w.len() != grid.len() {
                return Err(Error::invalid(format!(
                    "{} alpha1 prior weights for a grid of {}",
                    w.len(),
                    grid.len()
                )));
            }
            if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::invalid("alpha1 prior weights must be positive"));
            }
            let total: f64 = w.iter().sum();
            Ok(w.iter().map(|v| (v / total).ln()).collect())
        }
    }
}

/// Priors of one AR(1)-in-time Matérn field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldPrior {
    pub sd: PcPriorSpec,
    pub range: PcPriorSpec,
    #[serde(default)]
    pub ar: ArPrior,
}

impl FieldPrior {
    pub fn new(sd_threshold: f64, range_threshold: f64, prob: f64) -> Result<Self> {
        Ok(Self {
            sd: PcPriorSpec::sd(sd_threshold, prob)?,
            range: PcPriorSpec::range(range_threshold, prob)?,
            ar: ArPrior::Uniform,
        })
    }

    pub fn validate(&self) -> Result<()> {
        expect_kind(&self.sd, PcKind::SdUpper)?;
        expect_kind(&self.range, PcKind::RangeLower)?;
        self.ar.validate()
    }
}

/// Every prior the three model families draw on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPriorSet {
    /// Station measurement noise SD.
    pub noise_station: PcPriorSpec,
    /// Gridded-source noise SD.
    pub noise_grid: PcPriorSpec,
    /// Latent process field.
    pub latent: FieldPrior,
    /// Additive error field of the gridded source; also the intercept field
    /// of the regression-calibration model.
    pub error_field: FieldPrior,
    /// Slope field of the regression-calibration model.
    pub slope_field: FieldPrior,
    /// Precision of the zero-mean Gaussian prior on each fixed effect.
    #[serde(default = "default_beta_precision")]
    pub beta_precision: f64,
    #[serde(default = "default_alpha1_grid")]
    pub alpha1_grid: Vec<f64>,
    #[serde(default)]
    pub alpha1_prior: Alpha1Prior,
}

pub fn default_beta_precision() -> f64 {
    1e-6
}

impl HyperPriorSet {
    pub fn validate(&self) -> Result<()> {
        expect_kind(&self.noise_station, PcKind::SdUpper)?;
        expect_kind(&self.noise_grid, PcKind::SdUpper)?;
        self.latent.validate()?;
        self.error_field.validate()?;
        self.slope_field.validate()?;
        if !(self.beta_precision > 0.0 && self.beta_precision.is_finite()) {
            return Err(Error::invalid("fixed-effect prior precision must be positive"));
        }
        alpha1_log_prior(&self.alpha1_grid, &self.alpha1_prior)?;
        Ok(())
    }

    /// Smallest prior-mode range over the latent and error fields, used to
    /// size default meshes.
    pub fn smallest_range(&self) -> f64 {
        self.latent
            .range
            .log_scale_mode()
            .min(self.error_field.range.log_scale_mode())
    }
}

/// How a hyperparameter is mapped to an unconstrained coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    /// `v = exp(u)`.
    Log,
    /// `φ = tanh(u/2)`, a shifted logistic map onto `(−1, 1)`.
    Correlation,
}

impl Transform {
    pub fn to_natural(self, u: f64) -> f64 {
        match self {
            Transform::Log => u.exp(),
            Transform::Correlation => (0.5 * u).tanh(),
        }
    }

    pub fn to_internal(self, v: f64) -> f64 {
        match self {
            Transform::Log => v.ln(),
            Transform::Correlation => 2.0 * v.atanh(),
        }
    }

    /// `log |dv/du|` at the natural value `v`.
    pub fn log_jacobian(self, v: f64) -> f64 {
        match self {
            Transform::Log => v.ln(),
            Transform::Correlation => (0.5 * (1.0 - v * v)).ln(),
        }
    }
}
