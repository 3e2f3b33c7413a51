//! `cv`: leave-group-out cross-validation of a fitted model, either fitted
//! here from the configuration or loaded from a fit artifact.

use std::path::{Path, PathBuf};

use stfusion::inference::PosteriorEnsemble;
use stfusion::lgocv::{build_plan, run_lgocv, LgocvRun};
use stfusion::metrics::{lgocv_scores, ScoreReport};
use stfusion::models::Model;

use super::fit::{fit_config, write_fit};
use super::report::write_scores;
use super::{prepare_out, write_run_info};
use crate::artifact::FitArtifact;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{num, write_csv};

/// Scenario label of scores computed on user data.
pub const OBSERVED: &str = "observed";

/// Runs every radius and returns the raw records with their long-format scores.
pub fn cross_validate(model: &Model, ens: &PosteriorEnsemble, radii: &[f64]) -> CliResult<(LgocvRun, ScoreReport)> {
    if radii.is_empty() {
        return Err(CliError::validation("no leave-out radii configured"));
    }
    let locs = model.data().station_locations();
    let plans = radii
        .iter()
        .map(|&r| build_plan(locs, r))
        .collect::<stfusion::Result<Vec<_>>>()?;
    let run = run_lgocv(model, ens, &plans)?;
    let name = model.family().name();
    let mut report = ScoreReport::default();
    for &r in radii {
        let flagged = run.flagged.iter().filter(|f| f.0 == r).count();
        report.push(name, OBSERVED, 0, Some(r), "flagged_groups", flagged as f64);
        let recs = run.predictive(r);
        if recs.is_empty() {
            continue;
        }
        for (score, v) in lgocv_scores(&recs)?.named() {
            report.push(name, OBSERVED, 0, Some(r), score, v);
        }
    }
    Ok((run, report))
}

fn write_run(dir: &Path, run: &LgocvRun, report: &ScoreReport) -> CliResult<()> {
    write_csv(
        &dir.join("lgocv.csv"),
        &[
            "station",
            "t",
            "radius",
            "model",
            "y",
            "pred_mean",
            "pred_sd",
            "full_mean",
            "full_sd",
            "pred_obs_sd",
        ],
        run.records.iter().map(|r| {
            vec![
                r.station.clone(),
                r.t.to_string(),
                num(r.radius),
                r.model.clone(),
                num(r.y),
                num(r.pred_mean),
                num(r.pred_sd),
                num(r.full_mean),
                num(r.full_sd),
                num(r.pred_obs_sd),
            ]
        }),
    )?;
    write_csv(
        &dir.join("flagged.csv"),
        &["radius", "station"],
        run.flagged.iter().map(|(r, s)| vec![num(*r), s.clone()]),
    )?;
    write_scores(&dir.join("scores.csv"), &report.rows)
}

pub fn run(cfg: &RunConfig, fit: Option<PathBuf>) -> CliResult<()> {
    let dir = cfg.out_dir();
    match fit {
        Some(path) => {
            let art = FitArtifact::read(&path)?;
            let model = art.model()?;
            let ens = art.ensemble(&model)?;
            let radii = cfg
                .cv
                .radii
                .clone()
                .or_else(|| art.config.cv.radii.clone())
                .ok_or_else(|| CliError::validation("no leave-out radii in the configuration or the fit artifact"))?;
            let (run, report) = cross_validate(&model, &ens, &radii)?;
            prepare_out(&dir)?;
            write_run(&dir, &run, &report)?;
            let mut echoed = art.config.clone();
            echoed.cv.radii = Some(radii);
            echoed.out = Some(dir.clone());
            write_run_info(&dir, "cv", art.seed, &echoed)
        }
        None => {
            let fitted = fit_config(cfg)?;
            let radii = fitted.config.cv.radii.clone().unwrap_or_default();
            let (run, report) = cross_validate(&fitted.model, &fitted.ensemble, &radii)?;
            prepare_out(&dir)?;
            write_fit(&dir, &fitted)?;
            write_run(&dir, &run, &report)?;
            write_run_info(&dir, "cv", fitted.seed, &fitted.config)
        }
    }
}
