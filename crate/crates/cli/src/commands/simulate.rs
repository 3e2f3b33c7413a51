//! `simulate`: draws the synthetic replicates of a study, writes each one
//! as ready-to-fit CSV files, and optionally fits and scores them.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use stfusion::geometry::{MeshOptions, Unit};
use stfusion::inference::FitOptions;
use stfusion::metrics::ScoreRow;
use stfusion::simulation::{run_study, station_layouts, PriorScenario, SimConfig, SimReplicate, Simulator};

use super::report::{summarize, write_scores, write_summary};
use super::{prepare_out, write_run_info};
use crate::config::{
    CovariateSpec, CvConfig, DataConfig, DomainConfig, FitConfig, MeshConfig, ModelConfig, PriorConfig, RunConfig,
};
use crate::error::{CliError, CliResult};
use crate::io::{num, write_csv};

fn mesh_config(m: &MeshOptions) -> MeshConfig {
    MeshConfig {
        max_edge: m.max_edge,
        extension: Some(m.extension),
        outer_max_edge: m.outer_max_edge,
        max_vertices: Some(m.max_vertices),
    }
}

fn fit_config(f: &FitOptions) -> FitConfig {
    FitConfig {
        max_iters: f.optimizer.max_iters,
        ftol: f.optimizer.ftol,
        restarts: f.optimizer.restarts,
        initial_step: f.optimizer.initial_step,
        jitter: f.optimizer.jitter,
        integration: f.integration,
        warm_start_restarts: f.warm_start_restarts,
    }
}

fn prior_config(s: PriorScenario) -> PriorConfig {
    let [e1, e2, sx, rx, sa, ra] = s.thresholds();
    PriorConfig {
        prob: PriorScenario::PROB,
        station_noise_sd: Some(e1),
        grid_noise_sd: Some(e2),
        latent_sd: Some(sx),
        latent_range: Some(rx),
        error_field_sd: Some(sa),
        error_field_range: Some(ra),
        slope_field_sd: Some(sa),
        slope_field_range: Some(ra),
        ..PriorConfig::default()
    }
}

/// Configuration that refits one replicate with the `fit` command exactly
/// as the study does.
pub fn replicate_config(sim: &SimConfig, seed: u64) -> RunConfig {
    RunConfig {
        seed: Some(seed),
        out: None,
        threads: None,
        data: DataConfig {
            stations: Some("stations.csv".into()),
            grid: Some("grid.csv".into()),
            unit: Unit::Degrees,
            intercept: true,
            covariates: vec![CovariateSpec::Column("z".into())],
        },
        domain: Some(DomainConfig {
            rectangle: Some(sim.domain),
            polygon: None,
        }),
        mesh: Some(mesh_config(&sim.fit_mesh)),
        model: ModelConfig::default(),
        priors: prior_config(sim.priors),
        fit: fit_config(&sim.fit),
        cv: CvConfig::default(),
        simulate: None,
        study: Default::default(),
    }
}

fn write_replicate(dir: &Path, sim: &SimConfig, rep: &SimReplicate) -> CliResult<()> {
    prepare_out(dir)?;
    let z = |c: &[f64]| c.get(1).copied().unwrap_or(f64::NAN);
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    write_csv(
        &dir.join("stations.csv"),
        &["station_id", "x", "y", "t", "value", "z"],
        rep.data.stations().iter().map(|r| {
            vec![
                r.station_id.clone(),
                num(r.loc.x),
                num(r.loc.y),
                r.t.to_string(),
                opt(r.value),
                num(z(&r.covariates)),
            ]
        }),
    )?;
    write_csv(
        &dir.join("grid.csv"),
        &["cell_id", "x", "y", "t", "value", "z"],
        rep.data.grid().iter().map(|r| {
            vec![
                r.cell_id.clone(),
                num(r.loc.x),
                num(r.loc.y),
                r.t.to_string(),
                opt(r.value),
                num(z(&r.covariates)),
            ]
        }),
    )?;
    write_csv(
        &dir.join("truth.csv"),
        &["point_id", "x", "y", "t", "process", "z", "alpha0"],
        rep.grid_points.iter().enumerate().map(|(i, p)| {
            vec![
                format!("p{:04}", i + 1),
                num(p.x),
                num(p.y),
                "1".into(),
                num(rep.x[i]),
                num(rep.z[i]),
                num(rep.alpha0[i]),
            ]
        }),
    )?;
    let path = dir.join("fit.toml");
    std::fs::write(&path, replicate_config(sim, rep.seed).to_toml()?).map_err(|e| CliError::io(&path, e))
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let mut sim = cfg
        .simulate
        .clone()
        .ok_or_else(|| CliError::validation("no [simulate] section in the configuration"))?;
    if let Some(s) = cfg.seed {
        sim.base_seed = s;
    }
    let dir = cfg.out_dir();
    let simulator = Simulator::new(&sim)?;
    prepare_out(&dir)?;
    write_csv(
        &dir.join("layout.csv"),
        &["station_id", "x", "y"],
        station_layouts(sim.stations)
            .into_iter()
            .map(|(id, p)| vec![id, num(p.x), num(p.y)]),
    )?;
    for r in 0..sim.replicates as u64 {
        let rep = simulator.replicate(sim.seed(r))?;
        write_replicate(&dir.join("replicates").join(format!("rep_{r:03}")), &sim, &rep)?;
    }

    let families = &cfg.study.families;
    if !families.is_empty() {
        let reps: Vec<u64> = (0..sim.replicates as u64).collect();
        let done = AtomicUsize::new(0);
        let total = reps.len() * families.len();
        let progress = |rows: &[ScoreRow]| {
            let k = done.fetch_add(1, Ordering::Relaxed) + 1;
            if let Some(r) = rows.first() {
                eprintln!("[{k}/{total}] {} replicate {} scored", r.model, r.replicate);
            }
        };
        let outcome = run_study(&sim, families, &reps, &cfg.study.cv_radii, &progress)?;
        write_scores(&dir.join("scores.csv"), &outcome.report.rows)?;
        write_summary(&dir.join("summary.csv"), &summarize(&outcome.report.rows))?;
        write_csv(
            &dir.join("failures.csv"),
            &["replicate", "seed", "model", "message"],
            outcome.failures.iter().map(|f| {
                vec![
                    f.replicate.to_string(),
                    f.seed.to_string(),
                    f.model.clone(),
                    f.message.clone(),
                ]
            }),
        )?;
        if !outcome.failures.is_empty() {
            eprintln!("warning: {} fits failed; see failures.csv", outcome.failures.len());
        }
    }
    let mut echoed = cfg.clone();
    echoed.simulate = Some(sim.clone());
    write_run_info(&dir, "simulate", sim.base_seed, &echoed)
}
