//! Run configuration: one TOML file shared by every command.
//!
//! Values resolve with precedence flag > file > default. Defaults that depend
//! on the data (prior thresholds, domain, mesh, radii in degrees) are filled in
//! by [`RunConfig::resolve`], and the fully resolved file is echoed into each
//! output directory so a run can be repeated from the echo alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use stfusion::geometry::{Domain, MeshOptions, Point, Unit, KM_PER_DEGREE};
use stfusion::inference::optim::NelderMeadOptions;
use stfusion::inference::{FitOptions, ThetaIntegration};
use stfusion::models::{ModelFamily, ObservationSet};
use stfusion::priors::{
    default_alpha1_grid, default_beta_precision, Alpha1Prior, ArPrior, FieldPrior, HyperPriorSet, PcPriorSpec,
};
use stfusion::simulation::SimConfig;

use crate::error::{CliError, CliResult};

/// Leave-out radii used when none are configured, in kilometres.
pub const DEFAULT_RADII_KM: [f64; 4] = [60.0, 80.0, 125.0, 150.0];

pub const DEFAULT_OUT: &str = "stfusion-out";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<MeshConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub priors: PriorConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimConfig>,
    #[serde(default)]
    pub study: StudyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<PathBuf>,
    #[serde(default = "default_unit")]
    pub unit: Unit,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            stations: None,
            grid: None,
            unit: default_unit(),
            intercept: true,
            covariates: Vec::new(),
        }
    }
}

fn default_unit() -> Unit {
    Unit::Km
}

fn default_true() -> bool {
    true
}

/// A design column: a raw CSV column, or a transformed column / interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateSpec {
    Column(String),
    Derived(DerivedCovariate),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivedCovariate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    /// Product of these columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interaction: Vec<String>,
    #[serde(default)]
    pub transform: CovariateTransform,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateTransform {
    #[default]
    Identity,
    Log,
    /// `log(x + 1)`.
    Log1p,
    Square,
}

impl CovariateTransform {
    pub fn apply(self, x: f64) -> Result<f64, String> {
        match self {
            Self::Identity => Ok(x),
            Self::Log if x > 0.0 => Ok(x.ln()),
            Self::Log => Err(format!("log needs a positive value, got {x}")),
            Self::Log1p if x > -1.0 => Ok(x.ln_1p()),
            Self::Log1p => Err(format!("log1p needs a value above -1, got {x}")),
            Self::Square => Ok(x * x),
        }
    }

    pub fn label(self, inner: &str) -> String {
        match self {
            Self::Identity => inner.to_string(),
            Self::Log => format!("log({inner})"),
            Self::Log1p => format!("log1p({inner})"),
            Self::Square => format!("square({inner})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rectangle: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Vec<[f64; 2]>>,
}

impl DomainConfig {
    pub fn build(&self, unit: Unit) -> CliResult<Domain> {
        match (&self.rectangle, &self.polygon) {
            (Some([x0, y0, x1, y1]), None) => Ok(Domain::rectangle(*x0, *y0, *x1, *y1, unit)?),
            (None, Some(poly)) => Ok(Domain::new(
                poly.iter().map(|p| Point::new(p[0], p[1])).collect(),
                unit,
            )?),
            _ => Err(CliError::validation(
                "[domain] needs exactly one of `rectangle` or `polygon`",
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub max_edge: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extension: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_max_edge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_vertices: Option<usize>,
}

impl MeshConfig {
    pub fn options(&self) -> MeshOptions {
        let mut o = MeshOptions::new(self.max_edge, self.extension.unwrap_or(5.0 * self.max_edge));
        o.outer_max_edge = self.outer_max_edge;
        if let Some(m) = self.max_vertices {
            o.max_vertices = m;
        }
        o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: ModelFamily,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: ModelFamily::Fusion,
        }
    }
}

/// PC-prior thresholds. Unset thresholds are derived from the data: the
/// latent SD from the spread of the station values, the noise and error
/// SDs as fractions of it, and every range as a third of the domain
/// diameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default = "default_prob")]
    pub prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station_noise_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_noise_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_range: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_field_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_field_range: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_field_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_field_range: Option<f64>,
    #[serde(default = "default_beta_precision")]
    pub beta_precision: f64,
    #[serde(default = "default_alpha1_grid")]
    pub alpha1_grid: Vec<f64>,
    /// Prior weights over `alpha1_grid`; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha1_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub ar: ArPrior,
}

fn default_prob() -> f64 {
    0.5
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            prob: default_prob(),
            station_noise_sd: None,
            grid_noise_sd: None,
            latent_sd: None,
            latent_range: None,
            error_field_sd: None,
            error_field_range: None,
            slope_field_sd: None,
            slope_field_range: None,
            beta_precision: default_beta_precision(),
            alpha1_grid: default_alpha1_grid(),
            alpha1_weights: None,
            ar: ArPrior::Uniform,
        }
    }
}

/// Fraction of the latent SD threshold used for the station noise and the
/// error field when unset.
const NOISE_FRACTION: f64 = 0.1;
/// Fraction of the latent SD threshold used for the grid noise when unset.
const GRID_NOISE_FRACTION: f64 = 0.01;
const DEFAULT_SLOPE_SD: f64 = 0.5;

impl PriorConfig {
    fn resolve(&mut self, data: &ObservationSet, domain: &Domain) {
        let values: Vec<f64> = data.stations().iter().filter_map(|r| r.value).collect();
        let spread = sample_sd(&values).filter(|s| *s > 0.0).unwrap_or(1.0);
        let range = domain.diameter() / 3.0;
        let sd = *self.latent_sd.get_or_insert(spread);
        self.station_noise_sd.get_or_insert(NOISE_FRACTION * sd);
        self.grid_noise_sd.get_or_insert(GRID_NOISE_FRACTION * sd);
        self.error_field_sd.get_or_insert(NOISE_FRACTION * sd);
        self.slope_field_sd.get_or_insert(DEFAULT_SLOPE_SD);
        self.latent_range.get_or_insert(range);
        self.error_field_range.get_or_insert(range);
        self.slope_field_range.get_or_insert(range);
    }

    /// Prior set of a resolved configuration.
    pub fn priors(&self) -> CliResult<HyperPriorSet> {
        let need =
            |v: Option<f64>, key: &str| v.ok_or_else(|| CliError::validation(format!("priors.{key} is unresolved")));
        let p = self.prob;
        let field = |sd: Option<f64>, range: Option<f64>, what: &str| -> CliResult<FieldPrior> {
            let mut f = FieldPrior::new(
                need(sd, &format!("{what}_sd"))?,
                need(range, &format!("{what}_range"))?,
                p,
            )?;
            f.ar = self.ar;
            Ok(f)
        };
        let set = HyperPriorSet {
            noise_station: PcPriorSpec::sd(need(self.station_noise_sd, "station_noise_sd")?, p)?,
            noise_grid: PcPriorSpec::sd(need(self.grid_noise_sd, "grid_noise_sd")?, p)?,
            latent: field(self.latent_sd, self.latent_range, "latent")?,
            error_field: field(self.error_field_sd, self.error_field_range, "error_field")?,
            slope_field: field(self.slope_field_sd, self.slope_field_range, "slope_field")?,
            beta_precision: self.beta_precision,
            alpha1_grid: self.alpha1_grid.clone(),
            alpha1_prior: match &self.alpha1_weights {
                Some(w) => Alpha1Prior::Weights(w.clone()),
                None => Alpha1Prior::Uniform,
            },
        };
        set.validate()?;
        Ok(set)
    }
}

fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "nm_max_iters")]
    pub max_iters: usize,
    #[serde(default = "nm_ftol")]
    pub ftol: f64,
    #[serde(default = "nm_restarts")]
    pub restarts: usize,
    #[serde(default = "nm_initial_step")]
    pub initial_step: f64,
    #[serde(default = "nm_jitter")]
    pub jitter: f64,
    #[serde(default)]
    pub integration: ThetaIntegration,
    /// Fit the member nearest `alpha1 = 1` first and start the others from
    /// its mode with this many restarts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start_restarts: Option<usize>,
}

fn nm_max_iters() -> usize {
    NelderMeadOptions::default().max_iters
}
fn nm_ftol() -> f64 {
    NelderMeadOptions::default().ftol
}
fn nm_restarts() -> usize {
    NelderMeadOptions::default().restarts
}
fn nm_initial_step() -> f64 {
    NelderMeadOptions::default().initial_step
}
fn nm_jitter() -> f64 {
    NelderMeadOptions::default().jitter
}

impl Default for FitConfig {
    fn default() -> Self {
        let nm = NelderMeadOptions::default();
        Self {
            max_iters: nm.max_iters,
            ftol: nm.ftol,
            restarts: nm.restarts,
            initial_step: nm.initial_step,
            jitter: nm.jitter,
            integration: ThetaIntegration::default(),
            warm_start_restarts: None,
        }
    }
}

impl FitConfig {
    pub fn options(&self, seed: u64) -> FitOptions {
        FitOptions {
            optimizer: NelderMeadOptions {
                max_iters: self.max_iters,
                ftol: self.ftol,
                restarts: self.restarts,
                initial_step: self.initial_step,
                jitter: self.jitter,
                seed,
            },
            integration: self.integration,
            warm_start_restarts: self.warm_start_restarts,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    /// Leave-out radii in the data's coordinate unit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
}

/// Model fits run on every simulated replicate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub families: Vec<ModelFamily>,
    /// Leave-out radii for per-replicate cross-validation (none: skipped).
    #[serde(default)]
    pub cv_radii: Vec<f64>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub stations: Option<PathBuf>,
    pub grid: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a configuration file. Relative data paths are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.stations, &mut cfg.data.grid, &mut cfg.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::validation(format!("configuration: {e}")))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::validation(format!("cannot serialize configuration: {e}")))
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.seed = Some(s);
        }
        if let Some(o) = &ov.out {
            self.out = Some(o.clone());
        }
        if let Some(t) = ov.threads {
            self.threads = Some(t);
        }
        if let Some(p) = &ov.stations {
            self.data.stations = Some(p.clone());
        }
        if let Some(p) = &ov.grid {
            self.data.grid = Some(p.clone());
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn seed_or(&self, default: u64) -> u64 {
        self.seed.unwrap_or(default)
    }

    /// Domain from the configuration, or the bounding box of every station
    /// and cell padded by 5% of its larger side.
    pub fn domain_for(&self, data: &ObservationSet) -> CliResult<Domain> {
        if let Some(d) = &self.domain {
            return d.build(self.data.unit);
        }
        let pts: Vec<Point> = data
            .station_locations()
            .iter()
            .chain(data.cell_locations())
            .copied()
            .collect();
        if pts.is_empty() {
            return Err(CliError::validation("no locations to derive a domain from"));
        }
        let (mut lo, mut hi) = (pts[0], pts[0]);
        for p in &pts {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let pad = 0.05 * (hi.x - lo.x).max(hi.y - lo.y).max(1e-6);
        Ok(Domain::rectangle(
            lo.x - pad,
            lo.y - pad,
            hi.x + pad,
            hi.y + pad,
            self.data.unit,
        )?)
    }

    /// Fills every data-dependent default so the echoed file is explicit.
    pub fn resolve(&mut self, data: &ObservationSet) -> CliResult<()> {
        let domain = self.domain_for(data)?;
        let [x0, y0, x1, y1] = {
            let (lo, hi) = domain.bbox();
            [lo.x, lo.y, hi.x, hi.y]
        };
        if self.domain.is_none() {
            self.domain = Some(DomainConfig {
                rectangle: Some([x0, y0, x1, y1]),
                polygon: None,
            });
        }
        self.priors.resolve(data, &domain);
        if self.mesh.is_none() {
            let opts = MeshOptions::from_prior_range(self.priors.priors()?.smallest_range());
            self.mesh = Some(MeshConfig {
                max_edge: opts.max_edge,
                extension: Some(opts.extension),
                outer_max_edge: None,
                max_vertices: None,
            });
        }
        if self.cv.radii.is_none() {
            let scale = match self.data.unit {
                Unit::Km => 1.0,
                Unit::Degrees => 1.0 / KM_PER_DEGREE,
            };
            self.cv.radii = Some(DEFAULT_RADII_KM.iter().map(|r| r * scale).collect());
        }
        Ok(())
    }
}
