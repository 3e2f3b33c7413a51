//! Purely spatial simulation study: data-generating process, fixed station
//! layouts, prior scenarios and the replicate runner.

use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_mesh_with, project, Domain, Mesh, MeshOptions, Point, ProjectionMatrix, Unit};
use crate::inference::{bma_fit, predict_moments, FitOptions, PosteriorEnsemble};
use crate::lgocv::{build_plan, run_lgocv};
use crate::linalg::CholeskyFactor;
use crate::metrics::{
    avg_ds_score, avg_posterior_sd, avg_squared_error, lgocv_scores, relative_error, FieldEstimate, ScoreReport,
    ScoreRow,
};
use crate::models::{GridRecord, Model, ModelFamily, ObservationSet, StationRecord, Target};
use crate::priors::{default_alpha1_grid, Alpha1Prior, FieldPrior, HyperPriorSet, PcPriorSpec};
use crate::spde::{FemMatrices, MaternParams};

/// Fixed station networks of increasing density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StationScenario {
    /// Ten stations leaving most of the domain unobserved.
    N10,
    /// Twenty-five stations with one large gap.
    N25,
    /// Forty stations spread evenly.
    N40,
}

impl StationScenario {
    pub const ALL: [StationScenario; 3] = [Self::N10, Self::N25, Self::N40];

    pub fn name(self) -> &'static str {
        match self {
            Self::N10 => "n10",
            Self::N25 => "n25",
            Self::N40 => "n40",
        }
    }

    fn fixture(self) -> &'static str {
        match self {
            Self::N10 => include_str!("../fixtures/layouts/n10.csv"),
            Self::N25 => include_str!("../fixtures/layouts/n25.csv"),
            Self::N40 => include_str!("../fixtures/layouts/n40.csv"),
        }
    }
}

impl std::str::FromStr for StationScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown station scenario `{s}`")))
    }
}

/// Station ids and locations of a scenario, read from the shipped fixtures.
pub fn station_layouts(scenario: StationScenario) -> Vec<(String, Point)> {
    scenario
        .fixture()
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |s: &str| s.trim().parse::<f64>().expect("layout fixtures are numeric");
            (f[0].to_string(), Point::new(num(f[1]), num(f[2])))
        })
        .collect()
}

/// PC-prior thresholds used when fitting simulated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorScenario {
    /// Thresholds equal to the generating values.
    Matching,
    /// Arbitrary thresholds away from the generating values.
    NonMatching,
}

impl PriorScenario {
    pub fn name(self) -> &'static str {
        match self {
            Self::Matching => "matching",
            Self::NonMatching => "non_matching",
        }
    }

    /// Tail probability shared by every threshold.
    pub const PROB: f64 = 0.5;

    /// `(σ_e1, σ_e2, σ_ξ, ρ_ξ, σ_α0, ρ_α0)` thresholds.
    pub fn thresholds(self) -> [f64; 6] {
        match self {
            Self::Matching => [0.25, 0.01, 3.16, 2.0, 1.0, 1.0],
            Self::NonMatching => [1.5, 0.5, 1.0, 0.5, 0.5, 0.5],
        }
    }

    /// Prior set for all three families. The slope field of regression
    /// calibration shares the error-field thresholds.
    pub fn priors(self) -> Result<HyperPriorSet> {
        let [e1, e2, sx, rx, sa, ra] = self.thresholds();
        let p = Self::PROB;
        Ok(HyperPriorSet {
            noise_station: PcPriorSpec::sd(e1, p)?,
            noise_grid: PcPriorSpec::sd(e2, p)?,
            latent: FieldPrior::new(sx, rx, p)?,
            error_field: FieldPrior::new(sa, ra, p)?,
            slope_field: FieldPrior::new(sa, ra, p)?,
            beta_precision: crate::priors::default_beta_precision(),
            alpha1_grid: default_alpha1_grid(),
            alpha1_prior: Alpha1Prior::Uniform,
        })
    }
}

impl std::str::FromStr for PriorScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matching" => Ok(Self::Matching),
            "non_matching" | "nonmatching" => Ok(Self::NonMatching),
            other => Err(Error::invalid(format!("unknown prior scenario `{other}`"))),
        }
    }
}

/// Everything that defines a simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Rectangle `[x0, y0, x1, y1]` in degrees.
    pub domain: [f64; 4],
    pub covariate: MaternParams,
    pub latent: MaternParams,
    pub beta: [f64; 2],
    pub sigma2_e1: f64,
    pub sigma2_e2: f64,
    pub error_field: MaternParams,
    pub alpha1: f64,
    pub stations: StationScenario,
    /// Points per side of the prediction grid.
    pub sim_grid: usize,
    /// Cells per side of the gridded forecast source.
    pub coarse_grid: usize,
    pub priors: PriorScenario,
    pub replicates: usize,
    pub base_seed: u64,
    /// Mesh the fields are sampled on.
    pub sim_mesh: MeshOptions,
    /// Mesh the models are fitted on.
    pub fit_mesh: MeshOptions,
    pub fit: FitOptions,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            domain: [0.0, 0.0, 3.2, 2.4],
            covariate: MaternParams::new(3.0, 1.0),
            latent: MaternParams::new(2.0, 3.16),
            beta: [10.0, 3.0],
            sigma2_e1: 0.25,
            sigma2_e2: 0.01,
            error_field: MaternParams::new(1.0, 1.0),
            alpha1: 1.1,
            stations: StationScenario::N10,
            sim_grid: 30,
            coarse_grid: 10,
            priors: PriorScenario::Matching,
            replicates: 50,
            base_seed: 1,
            sim_mesh: MeshOptions::new(0.15, 1.0),
            fit_mesh: MeshOptions::new(0.3, 0.7),
            fit: FitOptions {
                warm_start_restarts: Some(0),
                ..Default::default()
            },
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        for p in [&self.covariate, &self.latent, &self.error_field] {
            p.validate()?;
        }
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.sigma2_e1) || !pos(self.sigma2_e2) {
            return Err(Error::invalid("noise variances must be positive"));
        }
        if !self.alpha1.is_finite() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("fixed effects and alpha1 must be finite"));
        }
        if self.sim_grid == 0 || self.coarse_grid == 0 {
            return Err(Error::invalid("grid resolutions must be at least 1"));
        }
        self.domain()?;
        Ok(())
    }

    pub fn domain(&self) -> Result<Domain> {
        let [x0, y0, x1, y1] = self.domain;
        Domain::rectangle(x0, y0, x1, y1, Unit::Degrees)
    }

    /// Scenario label used in score rows.
    pub fn scenario_label(&self) -> String {
        format!("{}-{}", self.stations.name(), self.priors.name())
    }

    /// Seed of replicate `r`.
    pub fn seed(&self, r: u64) -> u64 {
        self.base_seed.wrapping_add(r)
    }
}

/// Cell centres of an `n × n` partition of the rectangle, row-major from the
/// lower-left corner.
pub fn cell_centres(domain: [f64; 4], n: usize) -> Vec<Point> {
    let [x0, y0, x1, y1] = domain;
    let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    (0..n)
        .flat_map(|j| (0..n).map(move |i| Point::new(x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy)))
        .collect()
}

/// One simulated data set with the true fields behind it.
#[derive(Debug, Clone)]
pub struct SimReplicate {
    pub seed: u64,
    /// Prediction grid.
    pub grid_points: Vec<Point>,
    /// True process, covariate and error field on the prediction grid.
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub alpha0: Vec<f64>,
    /// True process at the stations and at the forecast cells.
    pub x_stations: Vec<f64>,
    pub x_cells: Vec<f64>,
    pub alpha0_cells: Vec<f64>,
    /// Station and gridded observations (a single time point).
    pub data: ObservationSet,
}

impl SimReplicate {
    /// Prediction targets on the simulation grid.
    pub fn targets(&self) -> Vec<Target> {
        self.grid_points
            .iter()
            .zip(&self.z)
            .map(|(&loc, &z)| Target {
                loc,
                t: 1,
                covariates: vec![1.0, z],
            })
            .collect()
    }
}

/// Precomputed sampling machinery shared by all replicates of a study.
pub struct Simulator {
    cfg: SimConfig,
    stations: Vec<(String, Point)>,
    grid_points: Vec<Point>,
    cells: Vec<Point>,
    /// Prior factors of the covariate, latent and error fields.
    factors: [CholeskyFactor; 3],
    /// Projections to grid points, stations and cells.
    proj: [ProjectionMatrix; 3],
    fit_mesh: Arc<Mesh>,
    fit_fem: Arc<FemMatrices>,
}

impl Simulator {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let domain = cfg.domain()?;
        let stations = station_layouts(cfg.stations);
        if let Some((id, _)) = stations.iter().find(|(_, p)| !domain.contains(*p)) {
            return Err(Error::invalid(format!(
                "station `{id}` lies outside the simulation domain"
            )));
        }
        let sim_mesh = build_mesh_with(&domain, &cfg.sim_mesh)?;
        let fem = FemMatrices::new(&sim_mesh);
        let factor = |p: &MaternParams| -> Result<CholeskyFactor> { CholeskyFactor::new(fem.precision(p)?.matrix()) };
        let factors = [factor(&cfg.covariate)?, factor(&cfg.latent)?, factor(&cfg.error_field)?];
        let grid_points = cell_centres(cfg.domain, cfg.sim_grid);
        let cells = cell_centres(cfg.domain, cfg.coarse_grid);
        let station_pts: Vec<Point> = stations.iter().map(|s| s.1).collect();
        let proj = [
            project(&sim_mesh, &grid_points)?,
            project(&sim_mesh, &station_pts)?,
            project(&sim_mesh, &cells)?,
        ];
        let fit_mesh = Arc::new(build_mesh_with(&domain, &cfg.fit_mesh)?);
        let fit_fem = Arc::new(FemMatrices::new(&fit_mesh));
        Ok(Self {
            cfg: cfg.clone(),
            stations,
            grid_points,
            cells,
            factors,
            proj,
            fit_mesh,
            fit_fem,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn fit_mesh(&self) -> &Arc<Mesh> {
        &self.fit_mesh
    }

    pub fn fit_fem(&self) -> &Arc<FemMatrices> {
        &self.fit_fem
    }

    /// Draws one replicate; the same seed always gives the same data.
    pub fn replicate(&self, seed: u64) -> Result<SimReplicate> {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = |k: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            let n = self.factors[k].dim();
            let w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            self.factors[k].sample_from_white(&w)
        };
        let z_mesh = field(0, &mut rng);
        let xi_mesh = field(1, &mut rng);
        let a0_mesh = field(2, &mut rng);
        let [b0, b1] = cfg.beta;
        let at = |k: usize, f: &[f64]| self.proj[k].apply(f);
        let process = |z: &[f64], xi: &[f64]| -> Vec<f64> { z.iter().zip(xi).map(|(z, e)| b0 + b1 * z + e).collect() };

        let z = at(0, &z_mesh);
        let x = process(&z, &at(0, &xi_mesh));
        let alpha0 = at(0, &a0_mesh);
        let z_st = at(1, &z_mesh);
        let x_st = process(&z_st, &at(1, &xi_mesh));
        let z_c = at(2, &z_mesh);
        let x_c = process(&z_c, &at(2, &xi_mesh));
        let a0_c = at(2, &a0_mesh);

        let (s1, s2) = (cfg.sigma2_e1.sqrt(), cfg.sigma2_e2.sqrt());
        let mut noise = |s: f64| -> f64 {
            let e: f64 = StandardNormal.sample(&mut rng);
            s * e
        };
        let stations: Vec<StationRecord> = self
            .stations
            .iter()
            .enumerate()
            .map(|(i, (id, p))| StationRecord {
                station_id: id.clone(),
                loc: *p,
                t: 1,
                value: Some(x_st[i] + noise(s1)),
                covariates: vec![1.0, z_st[i]],
            })
            .collect();
        let grid: Vec<GridRecord> = self
            .cells
            .iter()
            .enumerate()
            .map(|(j, p)| GridRecord {
                cell_id: format!("g{:03}", j + 1),
                loc: *p,
                t: 1,
                value: Some(a0_c[j] + cfg.alpha1 * x_c[j] + noise(s2)),
                covariates: vec![1.0, z_c[j]],
            })
            .collect();
        let data = ObservationSet::new(stations, grid, vec!["intercept".into(), "z".into()], "deg")?;
        Ok(SimReplicate {
            seed,
            grid_points: self.grid_points.clone(),
            x,
            z,
            alpha0,
            x_stations: x_st,
            x_cells: x_c,
            alpha0_cells: a0_c,
            data,
        })
    }

    /// Builds a model of `family` for a replicate on the shared fit mesh.
    pub fn model(&self, family: ModelFamily, rep: &SimReplicate) -> Result<Model> {
        let priors = self.cfg.priors.priors()?;
        Model::with_fem(
            family,
            Arc::new(rep.data.clone()),
            self.fit_mesh.clone(),
            self.fit_fem.clone(),
            &priors,
            false,
        )
    }
}

/// Builds the sampler and draws one replicate.
pub fn simulate_replicate(cfg: &SimConfig, seed: u64) -> Result<SimReplicate> {
    Simulator::new(cfg)?.replicate(seed)
}

/// Weight-averaged posterior-mode hyperparameters and posterior means of the
/// fixed effects of a fitted ensemble.
fn ensemble_summary(ens: &PosteriorEnsemble) -> (f64, Option<(f64, f64)>, Option<[f64; 2]>) {
    let mut sigma_e1 = 0.0;
    let mut xi = (0.0, 0.0);
    for (m, w) in ens.members.iter().zip(&ens.weights) {
        sigma_e1 += w * m.fit.theta.sigma_e1;
        let f = &m.fit.theta.fields[0];
        xi.0 += w * f.sd;
        xi.1 += w * f.range;
    }
    if ens.family == ModelFamily::RegressionCalibration {
        return (sigma_e1, None, None);
    }
    let (beta, _) = predict_moments(ens, &[vec![(0, 1.0)], vec![(1, 1.0)]], false);
    (sigma_e1, Some(xi), Some([beta[0], beta[1]]))
}

/// Scores of one fitted family on one replicate.
pub fn score_replicate(
    sim: &Simulator,
    rep: &SimReplicate,
    family: ModelFamily,
    replicate: u64,
    cv_radii: &[f64],
) -> Result<Vec<ScoreRow>> {
    let cfg = sim.config();
    let model = sim.model(family, rep)?;
    let ens = bma_fit(&model, None, &cfg.fit)?;
    let combos = model.target_combinations(&rep.targets())?;
    let (mean, var) = predict_moments(&ens, &combos, false);
    let est = FieldEstimate::new(Some(rep.x.clone()), mean, var.iter().map(|v| v.sqrt()).collect())?;

    let scenario = cfg.scenario_label();
    let mut out = ScoreReport::default();
    let mut push = |name: &str, v: f64| out.push(family.name(), &scenario, replicate, None, name, v);
    push("avg_squared_error", avg_squared_error(&est)?);
    push("avg_posterior_sd", avg_posterior_sd(&est)?);
    push("avg_ds_score", avg_ds_score(&est)?);
    let (sigma_e1, xi, beta) = ensemble_summary(&ens);
    push("rel_error_sigma_e1", relative_error(sigma_e1, cfg.sigma2_e1.sqrt())?);
    if let (Some((sd, range)), Some(b)) = (xi, beta) {
        push("rel_error_sigma_xi", relative_error(sd, cfg.latent.sd)?);
        push("rel_error_range_xi", relative_error(range, cfg.latent.range)?);
        push("rel_error_beta0", relative_error(b[0], cfg.beta[0])?);
        push("rel_error_beta1", relative_error(b[1], cfg.beta[1])?);
    }
    if family == ModelFamily::Fusion {
        push("alpha1_hat", ens.alpha1_hat().unwrap_or(f64::NAN));
        for (m, w) in ens.members.iter().zip(&ens.weights) {
            push(&weight_score_name(m.alpha1().unwrap_or(f64::NAN)), *w);
        }
    }
    if !cv_radii.is_empty() {
        let locs = rep.data.station_locations();
        let plans = cv_radii
            .iter()
            .map(|&r| build_plan(locs, r))
            .collect::<Result<Vec<_>>>()?;
        let run = run_lgocv(&model, &ens, &plans)?;
        for &r in cv_radii {
            let flagged = run.flagged.iter().filter(|f| f.0 == r).count();
            out.push(
                family.name(),
                &scenario,
                replicate,
                Some(r),
                "flagged_groups",
                flagged as f64,
            );
            let recs = run.predictive(r);
            if recs.is_empty() {
                continue;
            }
            for (name, v) in lgocv_scores(&recs)?.named() {
                out.push(family.name(), &scenario, replicate, Some(r), name, v);
            }
        }
    }
    Ok(out.rows)
}

/// Score name of the averaging weight of the member at `alpha1`.
pub fn weight_score_name(alpha1: f64) -> String {
    format!("bma_weight[{alpha1:.2}]")
}

/// A replicate and family whose fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyFailure {
    pub replicate: u64,
    pub seed: u64,
    pub model: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct StudyOutcome {
    pub report: ScoreReport,
    pub failures: Vec<StudyFailure>,
}

/// Runs `families` on replicates `replicates` (seed = base seed + index),
/// adding cross-validation scores when `cv_radii` is non-empty.
/// Rows are handed to `on_rows` as each fit finishes so partial runs are
/// usable; the returned report is ordered by replicate, then family.
/// Failed fits are recorded, never dropped silently.
pub fn run_study(
    cfg: &SimConfig,
    families: &[ModelFamily],
    replicates: &[u64],
    cv_radii: &[f64],
    on_rows: &(dyn Fn(&[ScoreRow]) + Sync),
) -> Result<StudyOutcome> {
    let sim = Simulator::new(cfg)?;
    let failures = Mutex::new(Vec::new());
    let mut results: Vec<(u64, Vec<ScoreRow>)> = replicates
        .par_iter()
        .map(|&r| {
            let seed = cfg.seed(r);
            let mut rows = Vec::new();
            let fail = |model: &str, e: &Error| {
                failures.lock().unwrap().push(StudyFailure {
                    replicate: r,
                    seed,
                    model: model.to_string(),
                    message: e.to_string(),
                });
            };
            match sim.replicate(seed) {
                Err(e) => fail("simulation", &e),
                Ok(rep) => {
                    for &fam in families {
                        match score_replicate(&sim, &rep, fam, r, cv_radii) {
                            Ok(v) => {
                                on_rows(&v);
                                rows.extend(v);
                            }
                            Err(e) => fail(fam.name(), &e),
                        }
                    }
                }
            }
            (r, rows)
        })
        .collect();
    results.sort_by_key(|r| r.0);
    let mut failures = failures.into_inner().unwrap();
    failures.sort_by(|a, b| (a.replicate, &a.model).cmp(&(b.replicate, &b.model)));
    Ok(StudyOutcome {
        report: ScoreReport {
            rows: results.into_iter().flat_map(|r| r.1).collect(),
        },
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            sim_grid: 8,
            coarse_grid: 4,
            sim_mesh: MeshOptions::new(0.4, 0.8),
            fit_mesh: MeshOptions::new(0.6, 0.8),
            ..Default::default()
        }
    }

    #[test]
    fn layouts_are_fixed_and_inside() {
        let d = SimConfig::default().domain().unwrap();
        for s in StationScenario::ALL {
            let a = station_layouts(s);
            assert_eq!(a, station_layouts(s));
            assert_eq!(a.len(), s.name()[1..].parse::<usize>().unwrap());
            assert!(a
                .iter()
                .all(|(_, p)| d.contains(*p) && d.distance_to_boundary(*p) > 0.05));
        }
    }

    #[test]
    fn same_seed_same_data() {
        let sim = Simulator::new(&small()).unwrap();
        let a = sim.replicate(7).unwrap();
        let b = sim.replicate(7).unwrap();
        let c = sim.replicate(8).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.x, b.x);
        assert_ne!(a.x, c.x);
        assert_eq!(a.data.stations().len(), 10);
        assert_eq!(a.data.grid().len(), 16);
        assert_eq!(a.x.len(), 64);
    }

    #[test]
    fn cell_centres_tile_the_rectangle() {
        let c = cell_centres([0.0, 0.0, 3.0, 2.0], 2);
        assert_eq!(
            c,
            vec![
                Point::new(0.75, 0.5),
                Point::new(2.25, 0.5),
                Point::new(0.75, 1.5),
                Point::new(2.25, 1.5)
            ]
        );
        // Odd refinement ratios make the coarse centres a subset of the fine ones.
        let fine = cell_centres([0.0, 0.0, 3.2, 2.4], 30);
        for p in cell_centres([0.0, 0.0, 3.2, 2.4], 10) {
            assert!(fine.iter().any(|q| q.dist(&p) < 1e-12));
        }
    }

    #[test]
    fn prior_scenarios_differ_only_in_thresholds() {
        let m = PriorScenario::Matching.priors().unwrap();
        let n = PriorScenario::NonMatching.priors().unwrap();
        assert_eq!(m.noise_station.prob, n.noise_station.prob);
        assert_eq!(m.noise_station.threshold, 0.25);
        assert_eq!(n.latent.range.threshold, 0.5);
        assert_eq!(m.alpha1_grid, n.alpha1_grid);
        assert_eq!(m.beta_precision, n.beta_precision);
    }

    #[test]
    fn one_replicate_study_has_one_row_per_metric() {
        let cfg = SimConfig {
            fit: FitOptions {
                optimizer: crate::inference::optim::NelderMeadOptions {
                    restarts: 0,
                    max_iters: 60,
                    ..Default::default()
                },
                ..Default::default()
            },
            ..small()
        };
        let seen = Mutex::new(0usize);
        let out = run_study(&cfg, &[ModelFamily::StationsOnly], &[0], &[], &|rows| {
            *seen.lock().unwrap() += rows.len();
        })
        .unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        let names: Vec<&str> = out.report.rows.iter().map(|r| r.score_name.as_str()).collect();
        assert_eq!(
            names,
            [
                "avg_squared_error",
                "avg_posterior_sd",
                "avg_ds_score",
                "rel_error_sigma_e1",
                "rel_error_sigma_xi",
                "rel_error_range_xi",
                "rel_error_beta0",
                "rel_error_beta1"
            ]
        );
        assert_eq!(*seen.lock().unwrap(), names.len());
        assert!(out
            .report
            .rows
            .iter()
            .all(|r| r.value.is_finite() && r.scenario == "n10-matching"));
    }
}
