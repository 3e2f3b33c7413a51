//! The fit artifact: everything needed to rebuild a fitted ensemble without
//! refitting. Stored as JSON with a schema version.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use stfusion::geometry::Mesh;
use stfusion::inference::{EnsembleMember, MapFit, PosteriorEnsemble};
use stfusion::models::{Model, ModelFamily, ObservationSet};
use stfusion::priors::HyperPriorSet;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub software_version: String,
    pub seed: u64,
    pub family: ModelFamily,
    /// Resolved configuration of the run.
    pub config: RunConfig,
    pub priors: HyperPriorSet,
    /// Mesh in the library's text format.
    pub mesh: String,
    pub data: ObservationSet,
    /// One MAP fit per ensemble member, in α₁-grid order for fusion.
    pub members: Vec<MapFit>,
    pub log_prior: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FitArtifact {
    pub fn new(config: &RunConfig, seed: u64, model: &Model, ensemble: &PosteriorEnsemble) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            family: model.family(),
            config: config.clone(),
            priors: model.priors().clone(),
            mesh: model.mesh().to_text(),
            data: (**model.data()).clone(),
            members: ensemble.members.iter().map(|m| m.fit.clone()).collect(),
            log_prior: ensemble.log_prior.clone(),
            weights: ensemble.weights.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::io(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::io(path, e))?;
        match v.get("schema_version").and_then(|s| s.as_u64()) {
            Some(s) if s == SCHEMA_VERSION as u64 => {}
            other => {
                return Err(CliError::validation(format!(
                    "{}: unsupported fit artifact schema {other:?} (expected {SCHEMA_VERSION})",
                    path.display()
                )))
            }
        }
        serde_json::from_value(v).map_err(|e| CliError::io(path, e))
    }

    pub fn model(&self) -> CliResult<Model> {
        let mesh = Mesh::read_text(self.mesh.as_bytes())?;
        Ok(Model::new(
            self.family,
            Arc::new(self.data.clone()),
            Arc::new(mesh),
            &self.priors,
        )?)
    }

    /// Re-conditions every member at its stored hyperparameters.
    pub fn ensemble(&self, model: &Model) -> CliResult<PosteriorEnsemble> {
        if self.members.len() != self.weights.len() || self.members.len() != self.log_prior.len() {
            return Err(CliError::validation("fit artifact has inconsistent member counts"));
        }
        let members = self
            .members
            .iter()
            .map(|f| EnsembleMember::from_fit(model, f.clone()))
            .collect::<stfusion::Result<Vec<_>>>()?;
        Ok(PosteriorEnsemble {
            family: self.family,
            members,
            log_prior: self.log_prior.clone(),
            weights: self.weights.clone(),
        })
    }
}
