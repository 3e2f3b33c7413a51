//! `predict`: model-averaged predictions at target locations from a fit
//! artifact, and optionally the bias-corrected grid.

use std::path::{Path, PathBuf};

use stfusion::inference::{bma_predict, calibrate_grid};
use stfusion::models::{ModelFamily, Target};

use super::{prepare_out, write_run_info};
use crate::artifact::FitArtifact;
use crate::error::{CliError, CliResult};
use crate::io::{num, read_rows, write_csv, Design};

pub struct PredictArgs {
    pub fit: PathBuf,
    pub targets: Option<PathBuf>,
    pub calibrate: bool,
    pub out: PathBuf,
}

/// Prediction at one target, or the reason it could not be made.
pub struct Prediction {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub t: usize,
    pub moments: Result<(f64, f64), String>,
}

/// Predicts at every row of `targets`. Rows outside the mesh or the fitted
/// time range get a row-level error instead of failing the whole file.
pub fn predict_targets(art: &FitArtifact, targets: &Path) -> CliResult<Vec<Prediction>> {
    let model = art.model()?;
    let ens = art.ensemble(&model)?;
    let design = Design::new(&art.config.data)?;
    let rows = read_rows(targets, "target_id", false, &design)?;
    let n_times = art.data.n_times();
    let mut out: Vec<Prediction> = Vec::with_capacity(rows.len());
    let mut ok_targets = Vec::new();
    let mut ok_index = Vec::new();
    for r in rows {
        let err = if r.t > n_times {
            Some(format!("time {} is beyond the fitted range 1..={n_times}", r.t))
        } else if model.mesh().locate(r.loc).is_none() {
            Some(format!("location ({}, {}) lies outside the mesh", r.loc.x, r.loc.y))
        } else {
            None
        };
        if err.is_none() {
            ok_index.push(out.len());
            ok_targets.push(Target {
                loc: r.loc,
                t: r.t,
                covariates: r.covariates.clone(),
            });
        }
        out.push(Prediction {
            id: r.id,
            x: r.loc.x,
            y: r.loc.y,
            t: r.t,
            moments: Err(err.unwrap_or_default()),
        });
    }
    for (k, m) in ok_index.into_iter().zip(bma_predict(&model, &ens, &ok_targets)?) {
        out[k].moments = Ok(m);
    }
    Ok(out)
}

/// Bias-corrected values `(w₂ − α̂₀)/α̂₁` of every observed grid cell.
pub fn calibrated_grid(art: &FitArtifact) -> CliResult<Vec<(String, f64, f64, usize, f64, f64)>> {
    if art.family != ModelFamily::Fusion {
        return Err(CliError::validation("grid calibration needs a fusion fit"));
    }
    let model = art.model()?;
    let ens = art.ensemble(&model)?;
    let rows: Vec<_> = art.data.grid().iter().filter(|g| g.value.is_some()).collect();
    let cells: Vec<_> = rows.iter().map(|g| (g.loc, g.t)).collect();
    let values: Vec<f64> = rows.iter().map(|g| g.value.unwrap_or(f64::NAN)).collect();
    let cal = calibrate_grid(&model, &ens, &cells, &values)?;
    Ok(rows
        .iter()
        .zip(cal)
        .map(|(g, c)| (g.cell_id.clone(), g.loc.x, g.loc.y, g.t, g.value.unwrap_or(f64::NAN), c))
        .collect())
}

pub fn run(args: &PredictArgs) -> CliResult<()> {
    if args.targets.is_none() && !args.calibrate {
        return Err(CliError::validation("nothing to do: pass --targets and/or --calibrate"));
    }
    let art = FitArtifact::read(&args.fit)?;
    prepare_out(&args.out)?;
    if let Some(t) = &args.targets {
        let preds = predict_targets(&art, t)?;
        let failed = preds.iter().filter(|p| p.moments.is_err()).count();
        write_csv(
            &args.out.join("predictions.csv"),
            &["target_id", "x", "y", "t", "mean", "sd", "error"],
            preds.iter().map(|p| {
                let (m, s, e) = match &p.moments {
                    Ok((m, s)) => (num(*m), num(*s), String::new()),
                    Err(e) => (String::new(), String::new(), e.clone()),
                };
                vec![p.id.clone(), num(p.x), num(p.y), p.t.to_string(), m, s, e]
            }),
        )?;
        if failed > 0 {
            eprintln!(
                "warning: {failed} of {} targets could not be predicted; see the error column",
                preds.len()
            );
        }
    }
    if args.calibrate {
        write_csv(
            &args.out.join("calibrated_grid.csv"),
            &["cell_id", "x", "y", "t", "value", "calibrated"],
            calibrated_grid(&art)?
                .into_iter()
                .map(|(id, x, y, t, v, c)| vec![id, num(x), num(y), t.to_string(), num(v), num(c)]),
        )?;
    }
    write_run_info(&args.out, "predict", art.seed, &art.config)
}
