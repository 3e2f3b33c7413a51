//! `fit`: ingest, build the mesh, fit the configured family and write the
//! fit artifact with its weight table.

use std::path::Path;
use std::sync::Arc;

use stfusion::geometry::build_mesh_with;
use stfusion::inference::{bma_fit, PosteriorEnsemble};
use stfusion::models::Model;

use super::{prepare_out, write_run_info};
use crate::artifact::FitArtifact;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{ingest, num, write_csv};

/// Fitted model with the configuration after resolving defaults.
pub struct Fitted {
    pub config: RunConfig,
    pub seed: u64,
    pub model: Model,
    pub ensemble: PosteriorEnsemble,
}

pub fn fit_config(cfg: &RunConfig) -> CliResult<Fitted> {
    let mut cfg = cfg.clone();
    let family = cfg.model.family;
    let data = ingest(&cfg.data, family)?;
    cfg.resolve(&data)?;
    let seed = cfg.seed_or(0);
    cfg.seed = Some(seed);
    let domain = cfg.domain_for(&data)?;
    let mesh_cfg = cfg
        .mesh
        .as_ref()
        .ok_or_else(|| CliError::validation("mesh settings are unresolved"))?;
    let mesh = build_mesh_with(&domain, &mesh_cfg.options())?;
    let priors = cfg.priors.priors()?;
    let model = Model::new(family, Arc::new(data), Arc::new(mesh), &priors)?;
    let ensemble = bma_fit(&model, None, &cfg.fit.options(seed))?;
    Ok(Fitted {
        config: cfg,
        seed,
        model,
        ensemble,
    })
}

/// Writes `fit.json`, `weights.csv` and `hyperparameters.csv`.
pub fn write_fit(dir: &Path, f: &Fitted) -> CliResult<()> {
    FitArtifact::new(&f.config, f.seed, &f.model, &f.ensemble).write(&dir.join("fit.json"))?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    write_csv(
        &dir.join("weights.csv"),
        &["alpha1", "log_ml", "weight"],
        f.ensemble
            .members
            .iter()
            .zip(&f.ensemble.weights)
            .map(|(m, w)| vec![opt(m.alpha1()), num(m.log_ml()), num(*w)]),
    )?;
    let family = f.model.family();
    let mut rows = Vec::new();
    for m in &f.ensemble.members {
        for slot in f.model.slots() {
            rows.push(vec![opt(m.alpha1()), slot.label(family), num(slot.get(&m.fit.theta))]);
        }
    }
    write_csv(
        &dir.join("hyperparameters.csv"),
        &["alpha1", "parameter", "value"],
        rows,
    )
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let dir = cfg.out_dir();
    let fitted = fit_config(cfg)?;
    prepare_out(&dir)?;
    write_fit(&dir, &fitted)?;
    write_run_info(&dir, "fit", fitted.seed, &fitted.config)
}
