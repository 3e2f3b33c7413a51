//! Scoring rules and error summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-grid-point estimate of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEstimate {
    pub truth: Option<Vec<f64>>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl FieldEstimate {
    pub fn new(truth: Option<Vec<f64>>, mean: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        if mean.len() != sd.len() || truth.as_ref().is_some_and(|t| t.len() != mean.len()) {
            return Err(Error::invalid("field estimate arrays differ in length"));
        }
        if sd.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("posterior SDs must be non-negative"));
        }
        Ok(Self { truth, mean, sd })
    }

    fn truth(&self) -> Result<&[f64]> {
        self.truth
            .as_deref()
            .ok_or_else(|| Error::invalid("true field values are required"))
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.mean.is_empty() {
            Err(Error::EmptyObservations("empty prediction grid".into()))
        } else {
            Ok(())
        }
    }
}

/// Grid average of `(x − E[x|Y])²`.
pub fn avg_squared_error(est: &FieldEstimate) -> Result<f64> {
    est.check_nonempty()?;
    let t = est.truth()?;
    Ok(t.iter().zip(&est.mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>() / t.len() as f64)
}

/// Grid average of the posterior SD.
pub fn avg_posterior_sd(est: &FieldEstimate) -> Result<f64> {
    est.check_nonempty()?;
    Ok(est.sd.iter().sum::<f64>() / est.sd.len() as f64)
}

/// Dawid–Sebastiani score `(y − μ)²/V + log V`.
pub fn ds_score(y: f64, mean: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(Error::invalid(format!("DS score needs a positive variance, got {var}")));
    }
    Ok((y - mean).powi(2) / var + var.ln())
}

/// Grid average of the DS score of the truth under the estimate.
pub fn avg_ds_score(est: &FieldEstimate) -> Result<f64> {
    est.check_nonempty()?;
    let t = est.truth()?;
    let mut s = 0.0;
    for ((x, m), sd) in t.iter().zip(&est.mean).zip(&est.sd) {
        s += ds_score(*x, *m, sd * sd)?;
    }
    Ok(s / t.len() as f64)
}

/// Offset applied before the logarithm so the minimum maps to a finite value.
pub const DS_SCALE_EPS: f64 = 1e-9;

/// `log(s + |min s| + ε)`, an order-preserving transform for plotting.
pub fn scaled_ds(scores: &[f64]) -> Vec<f64> {
    let mn = scores.iter().copied().fold(f64::INFINITY, f64::min);
    scores.iter().map(|s| (s + mn.abs() + DS_SCALE_EPS).ln()).collect()
}

/// `|(estimate − truth)/truth|`.
pub fn relative_error(estimate: f64, truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::invalid("relative error needs a non-zero truth"));
    }
    Ok(((estimate - truth) / truth).abs())
}

/// Held-out and full-data predictive of one station measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveRecord {
    pub y: f64,
    /// Held-out predictive of the latent process.
    pub pred_mean: f64,
    pub pred_sd: f64,
    /// Full-data predictive of the latent process.
    pub full_mean: f64,
    pub full_sd: f64,
    /// Measurement-noise SD added for the density of `y`.
    pub noise_sd: f64,
}

impl PredictiveRecord {
    pub fn obs_sd(&self) -> f64 {
        self.pred_sd.hypot(self.noise_sd)
    }
}

/// `KL(N(m₁, s₁²) ‖ N(m₂, s₂²))`.
pub fn gaussian_kl(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    (s2 / s1).ln() + (s1 * s1 + (m1 - m2).powi(2)) / (2.0 * s2 * s2) - 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LgocvScores {
    pub n: usize,
    pub ulgocv: f64,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    /// Terms left out of MAPE because `y = 0`.
    pub mape_excluded: usize,
    pub msd: f64,
    pub mkld: f64,
}

impl LgocvScores {
    pub fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("ulgocv", self.ulgocv),
            ("rmse", self.rmse),
            ("mae", self.mae),
            ("mape", self.mape),
            ("msd", self.msd),
            ("mkld", self.mkld),
            ("n", self.n as f64),
            ("mape_excluded", self.mape_excluded as f64),
        ]
    }
}

/// The six cross-validation scores over a set of held-out predictions.
pub fn lgocv_scores(records: &[PredictiveRecord]) -> Result<LgocvScores> {
    if records.is_empty() {
        return Err(Error::EmptyObservations("no cross-validation predictions".into()));
    }
    if records
        .iter()
        .any(|r| !(r.pred_sd > 0.0 && r.full_sd > 0.0 && r.noise_sd >= 0.0))
    {
        return Err(Error::invalid("predictive SDs must be positive"));
    }
    let n = records.len() as f64;
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut ul = 0.0;
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut ape = 0.0;
    let mut n_ape = 0usize;
    let mut sd = 0.0;
    let mut kl = 0.0;
    for r in records {
        let s = r.obs_sd();
        let e = r.y - r.pred_mean;
        ul += -half_log_2pi - s.ln() - 0.5 * (e / s).powi(2);
        se += e * e;
        ae += e.abs();
        if r.y != 0.0 {
            ape += (e / r.y).abs();
            n_ape += 1;
        }
        sd += r.pred_sd;
        kl += gaussian_kl(r.pred_mean, r.pred_sd, r.full_mean, r.full_sd);
    }
    Ok(LgocvScores {
        n: records.len(),
        ulgocv: ul / n,
        rmse: (se / n).sqrt(),
        mae: ae / n,
        mape: if n_ape > 0 { ape / n_ape as f64 } else { f64::NAN },
        mape_excluded: records.len() - n_ape,
        msd: sd / n,
        mkld: kl / n,
    })
}

/// One long-format score row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: String,
    pub scenario: String,
    pub replicate: u64,
    pub radius: Option<f64>,
    pub score_name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub rows: Vec<ScoreRow>,
}

impl ScoreReport {
    pub fn push(
        &mut self,
        model: &str,
        scenario: &str,
        replicate: u64,
        radius: Option<f64>,
        score_name: &str,
        value: f64,
    ) {
        self.rows.push(ScoreRow {
            model: model.to_string(),
            scenario: scenario.to_string(),
            replicate,
            radius,
            score_name: score_name.to_string(),
            value,
        });
    }

    pub fn extend(&mut self, other: ScoreReport) {
        self.rows.extend(other.rows);
    }

    /// Mean of `score_name` for `model` over rows matching `scenario`.
    pub fn mean(&self, model: &str, scenario: &str, score_name: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.model == model && r.scenario == scenario && r.score_name == score_name)
            .map(|r| r.value)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}
