//! The three model families as latent-Gaussian observation systems.
//!
//! * Fusion: station rows `w₁ = zᵀβ + ξ + e₁`, grid rows
//!   `w₂ = α₀ + α₁(zᵀβ + ξ) + e₂`, latent `[β, ξ, α₀]`.
//! * Stations only: the station rows of the fusion model, latent `[β, ξ]`.
//! * Regression calibration: `w₁ = β₀ + β₁w₂ + a₀ + w₂·a₁ + e` with `w₂` the
//!   value of the nearest grid cell, latent `[β₀, β₁, a₀, a₁]`.
//!
//! Fields are AR(1) in time with Matérn innovations on a shared mesh, stored
//! time-major. [`Model`] precomputes everything that does not depend on the
//! hyperparameters so posterior precisions can be re-assembled as linear
//! combinations of fixed sparse terms.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sprs::CsMat;

use crate::error::{Error, Result};
use crate::geometry::{project, Mesh, Point};
use crate::linalg::{
    csc_from_triplets, kron_dense_sparse, matvec, pattern_union, weighted_gram, AlignedTerm, CholeskyFactor,
    SymbolicCholesky,
};
use crate::priors::{HyperPriorSet, Transform};
use crate::spacetime::{ar1_basis, ar1_coefficients, check_phi, st_log_det};
use crate::spde::{FemMatrices, MaternParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Fusion,
    StationsOnly,
    RegressionCalibration,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [
        ModelFamily::Fusion,
        ModelFamily::RegressionCalibration,
        ModelFamily::StationsOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Fusion => "fusion",
            ModelFamily::StationsOnly => "stations_only",
            ModelFamily::RegressionCalibration => "regression_calibration",
        }
    }

    pub fn n_fields(self) -> usize {
        match self {
            ModelFamily::StationsOnly => 1,
            _ => 2,
        }
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fusion" => Ok(Self::Fusion),
            "stations_only" | "stations-only" => Ok(Self::StationsOnly),
            "regression_calibration" | "regression-calibration" | "regcalib" => Ok(Self::RegressionCalibration),
            other => Err(Error::invalid(format!("unknown model family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub station_id: String,
    pub loc: Point,
    /// Time index, starting at 1.
    pub t: usize,
    pub value: Option<f64>,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub cell_id: String,
    pub loc: Point,
    pub t: usize,
    pub value: Option<f64>,
    pub covariates: Vec<f64>,
}

/// Station and grid measurements sharing the time indices `1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    stations: Vec<StationRecord>,
    grid: Vec<GridRecord>,
    covariate_names: Vec<String>,
    unit: String,
    n_times: usize,
    station_ids: Vec<String>,
    station_locs: Vec<Point>,
    cell_ids: Vec<String>,
    cell_locs: Vec<Point>,
}

fn distinct_sites<'a>(what: &str, items: impl Iterator<Item = (&'a str, Point)>) -> Result<(Vec<String>, Vec<Point>)> {
    let mut ids = Vec::new();
    let mut locs = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (id, p) in items {
        if !p.is_finite() {
            return Err(Error::invalid(format!("{what} `{id}` has a non-finite coordinate")));
        }
        match index.get(id) {
            Some(&k) => {
                if locs[k] != p {
                    return Err(Error::invalid(format!("{what} `{id}` appears at two locations")));
                }
            }
            None => {
                index.insert(id, ids.len());
                ids.push(id.to_string());
                locs.push(p);
            }
        }
    }
    let mut sorted: Vec<(f64, f64, usize)> = locs.iter().enumerate().map(|(i, p)| (p.x, p.y, i)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
            return Err(Error::invalid(format!(
                "{what}s `{}` and `{}` share a location",
                ids[w[0].2], ids[w[1].2]
            )));
        }
    }
    Ok((ids, locs))
}

impl ObservationSet {
    pub fn new(
        stations: Vec<StationRecord>,
        grid: Vec<GridRecord>,
        covariate_names: Vec<String>,
        unit: impl Into<String>,
    ) -> Result<Self> {
        let p = covariate_names.len();
        for (i, r) in stations.iter().enumerate() {
            if r.covariates.len() != p {
                return Err(Error::invalid(format!("station row {i}: expected {p} covariates")));
            }
            if r.t == 0 {
                return Err(Error::invalid(format!("station row {i}: time indices start at 1")));
            }
            if r.value.is_some_and(|v| !v.is_finite()) || r.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("station row {i}: non-finite value")));
            }
        }
        for (i, r) in grid.iter().enumerate() {
            if r.covariates.len() != p {
                return Err(Error::invalid(format!("grid row {i}: expected {p} covariates")));
            }
            if r.t == 0 {
                return Err(Error::invalid(format!("grid row {i}: time indices start at 1")));
            }
            if r.value.is_some_and(|v| !v.is_finite()) || r.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("grid row {i}: non-finite value")));
            }
        }
        let st: BTreeSet<usize> = stations.iter().map(|r| r.t).collect();
        let gt: BTreeSet<usize> = grid.iter().map(|r| r.t).collect();
        if !stations.is_empty() && !grid.is_empty() && st != gt {
            let only_s: Vec<usize> = st.difference(&gt).copied().collect();
            let only_g: Vec<usize> = gt.difference(&st).copied().collect();
            return Err(Error::TimeMisaligned(format!(
                "times only in stations: {only_s:?}; times only in grid: {only_g:?}"
            )));
        }
        let all: BTreeSet<usize> = st.union(&gt).copied().collect();
        let n_times = all.iter().next_back().copied().unwrap_or(0);
        if all.len() != n_times {
            let missing: Vec<usize> = (1..=n_times).filter(|t| !all.contains(t)).collect();
            return Err(Error::TimeMisaligned(format!(
                "time indices must be contiguous from 1; missing {missing:?}"
            )));
        }
        let (station_ids, station_locs) =
            distinct_sites("station", stations.iter().map(|r| (r.station_id.as_str(), r.loc)))?;
        let (cell_ids, cell_locs) = distinct_sites("grid cell", grid.iter().map(|r| (r.cell_id.as_str(), r.loc)))?;
        Ok(Self {
            stations,
            grid,
            covariate_names,
            unit: unit.into(),
            n_times,
            station_ids,
            station_locs,
            cell_ids,
            cell_locs,
        })
    }

    pub fn stations(&self) -> &[StationRecord] {
        &self.stations
    }

    pub fn grid(&self) -> &[GridRecord] {
        &self.grid
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    /// Distinct station ids in order of first appearance.
    pub fn station_ids(&self) -> &[String] {
        &self.station_ids
    }

    pub fn station_locations(&self) -> &[Point] {
        &self.station_locs
    }

    pub fn cell_ids(&self) -> &[String] {
        &self.cell_ids
    }

    pub fn cell_locations(&self) -> &[Point] {
        &self.cell_locs
    }

    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.station_ids.iter().position(|s| s == id)
    }

    /// The same data without the gridded source.
    pub fn without_grid(&self) -> Self {
        Self::new(
            self.stations.clone(),
            Vec::new(),
            self.covariate_names.clone(),
            self.unit.clone(),
        )
        .expect("subset of valid data")
    }

    /// Index of the grid cell whose centroid is nearest to `p`.
    pub fn nearest_cell(&self, p: Point) -> Option<usize> {
        self.cell_locs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.dist(&p).total_cmp(&b.1.dist(&p)))
            .map(|(i, _)| i)
    }

    /// Grid value of cell `cell` at time `t`, if observed.
    pub fn cell_value(&self, cell: usize, t: usize) -> Option<f64> {
        let id = &self.cell_ids[cell];
        self.grid
            .iter()
            .find(|r| &r.cell_id == id && r.t == t)
            .and_then(|r| r.value)
    }
}

/// Hyperparameters of one AR(1)-in-time Matérn field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldHyper {
    pub sd: f64,
    pub range: f64,
    #[serde(default)]
    pub phi: f64,
}

impl FieldHyper {
    pub fn new(sd: f64, range: f64, phi: f64) -> Self {
        Self { sd, range, phi }
    }

    pub fn matern(&self) -> MaternParams {
        MaternParams::new(self.range, self.sd)
    }
}

/// A point in hyperparameter space. `fields` is `[ξ, α₀]` for fusion,
/// `[ξ]` for stations-only and `[a₀, a₁]` for regression calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    pub sigma_e1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_e2: Option<f64>,
    pub fields: Vec<FieldHyper>,
}

impl HyperPoint {
    pub fn validate(&self, family: ModelFamily) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        pos("sigma_e1", self.sigma_e1)?;
        if family == ModelFamily::Fusion {
            pos(
                "sigma_e2",
                self.sigma_e2.ok_or_else(|| Error::invalid("fusion needs sigma_e2"))?,
            )?;
        }
        if self.fields.len() != family.n_fields() {
            return Err(Error::invalid(format!(
                "{} needs {} fields, got {}",
                family.name(),
                family.n_fields(),
                self.fields.len()
            )));
        }
        for f in &self.fields {
            pos("field sd", f.sd)?;
            pos("field range", f.range)?;
            check_phi(f.phi)?;
        }
        Ok(())
    }
}

/// Which hyperparameter a coordinate of the search vector controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperSlot {
    SigmaE1,
    SigmaE2,
    FieldSd(usize),
    FieldRange(usize),
    FieldPhi(usize),
}

impl HyperSlot {
    pub fn transform(self) -> Transform {
        match self {
            HyperSlot::FieldPhi(_) => Transform::Correlation,
            _ => Transform::Log,
        }
    }

    pub fn get(self, h: &HyperPoint) -> f64 {
        match self {
            HyperSlot::SigmaE1 => h.sigma_e1,
            HyperSlot::SigmaE2 => h.sigma_e2.unwrap_or(f64::NAN),
            HyperSlot::FieldSd(f) => h.fields[f].sd,
            HyperSlot::FieldRange(f) => h.fields[f].range,
            HyperSlot::FieldPhi(f) => h.fields[f].phi,
        }
    }

    pub fn set(self, h: &mut HyperPoint, v: f64) {
        match self {
            HyperSlot::SigmaE1 => h.sigma_e1 = v,
            HyperSlot::SigmaE2 => h.sigma_e2 = Some(v),
            HyperSlot::FieldSd(f) => h.fields[f].sd = v,
            HyperSlot::FieldRange(f) => h.fields[f].range = v,
            HyperSlot::FieldPhi(f) => h.fields[f].phi = v,
        }
    }

    pub fn label(self, family: ModelFamily) -> String {
        let field = |f: usize| match (family, f) {
            (ModelFamily::RegressionCalibration, 0) => "intercept_field",
            (ModelFamily::RegressionCalibration, _) => "slope_field",
            (_, 0) => "latent",
            _ => "error_field",
        };
        match self {
            HyperSlot::SigmaE1 => "sigma_e1".into(),
            HyperSlot::SigmaE2 => "sigma_e2".into(),
            HyperSlot::FieldSd(f) => format!("{}_sd", field(f)),
            HyperSlot::FieldRange(f) => format!("{}_range", field(f)),
            HyperSlot::FieldPhi(f) => format!("{}_phi", field(f)),
        }
    }
}

/// Sparse latent combination `Σ vᵢ·latent[i]`.
pub type Combination = Vec<(usize, f64)>;

/// A prediction location: point, time (from 1) and covariate row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub loc: Point,
    pub t: usize,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSource {
    /// Index into the station records.
    Station(usize),
    /// Index into the grid records.
    Grid(usize),
}

/// Assembled latent-Gaussian observation system `y = A·latent + e`.
#[derive(Debug, Clone)]
pub struct GaussianSystem {
    pub q_prior: CsMat<f64>,
    /// Observation matrix in CSR order; one row per non-missing value.
    pub a: CsMat<f64>,
    pub noise_precision: Vec<f64>,
    pub y: Vec<f64>,
    pub rows: Vec<RowSource>,
}

impl GaussianSystem {
    pub fn latent_dim(&self) -> usize {
        self.q_prior.rows()
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Copy without the given rows.
    pub fn without_rows(&self, drop: &dyn Fn(RowSource) -> bool) -> GaussianSystem {
        let keep: Vec<usize> = (0..self.rows.len()).filter(|&r| !drop(self.rows[r])).collect();
        let mut trip = Vec::new();
        for (new_r, &r) in keep.iter().enumerate() {
            if let Some(row) = self.a.outer_view(r) {
                for (c, v) in row.iter() {
                    trip.push((new_r, c, *v));
                }
            }
        }
        GaussianSystem {
            q_prior: self.q_prior.clone(),
            a: csc_from_triplets((keep.len(), self.a.cols()), trip).to_csr(),
            noise_precision: keep.iter().map(|&r| self.noise_precision[r]).collect(),
            y: keep.iter().map(|&r| self.y[r]).collect(),
            rows: keep.iter().map(|&r| self.rows[r]).collect(),
        }
    }
}

/// Conditional Gaussian posterior of the latent vector.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub factor: CholeskyFactor,
    pub mean: Vec<f64>,
    pub log_ml: f64,
}

impl GaussianPosterior {
    pub fn marginal_variances(&self, coords: &[usize]) -> Vec<f64> {
        self.factor.marginal_variances(coords)
    }

    /// Posterior means and variances of linear combinations.
    pub fn combination_moments(&self, combos: &[Combination]) -> (Vec<f64>, Vec<f64>) {
        let means = combos
            .iter()
            .map(|c| c.iter().map(|&(i, v)| v * self.mean[i]).sum())
            .collect();
        (means, self.factor.combination_variances(combos))
    }
}

/// Latent layout: `p` fixed effects then `n_fields` blocks of `n·T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub p: usize,
    pub n: usize,
    pub t: usize,
    pub n_fields: usize,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.p + self.n_fields * self.n * self.t
    }

    pub fn field_offset(&self, f: usize) -> usize {
        self.p + f * self.n * self.t
    }

    /// Latent index of vertex `v` of field `f` at time `t` (from 1).
    pub fn index(&self, f: usize, t: usize, v: usize) -> usize {
        self.field_offset(f) + (t - 1) * self.n + v
    }
}

/// A likelihood row before noise weighting, split by its dependence on α₁
/// for grid rows: full row = `α₁·scaled + fixed`.
#[derive(Debug, Clone)]
struct ObsRow {
    source: RowSource,
    scaled: Combination,
    fixed: Combination,
    y: f64,
}

impl ObsRow {
    fn combined(&self, alpha1: f64) -> Combination {
        let mut out: BTreeMap<usize, f64> = BTreeMap::new();
        for &(i, v) in &self.scaled {
            *out.entry(i).or_default() += alpha1 * v;
        }
        for &(i, v) in &self.fixed {
            *out.entry(i).or_default() += v;
        }
        out.into_iter().filter(|e| e.1 != 0.0).collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum PriorCoef {
    Beta,
    Field { f: usize, m: usize, q: usize },
}

#[derive(Debug)]
struct StationGroup {
    gram: AlignedTerm,
    b: Combination,
    yy: f64,
    m: usize,
}

#[derive(Debug)]
struct GridTerms {
    gram_ss: AlignedTerm,
    gram_sf: AlignedTerm,
    gram_ff: AlignedTerm,
    b_s: Vec<f64>,
    b_f: Vec<f64>,
    yy: f64,
    m: usize,
}

/// Precomputed model: data projected on the mesh and the posterior
/// precision split into hyperparameter-free sparse terms.
#[derive(Debug)]
pub struct Model {
    family: ModelFamily,
    data: Arc<ObservationSet>,
    mesh: Arc<Mesh>,
    fem: Arc<FemMatrices>,
    priors: HyperPriorSet,
    layout: Layout,
    station_rows: Vec<ObsRow>,
    grid_rows: Vec<ObsRow>,
    /// Station-site index of each station row.
    row_site: Vec<usize>,
    pattern: CsMat<f64>,
    symbolic: Arc<SymbolicCholesky>,
    prior_terms: Vec<(AlignedTerm, PriorCoef)>,
    stations: Vec<StationGroup>,
    grid: Option<GridTerms>,
    slots: Vec<HyperSlot>,
}

fn embed(m: &CsMat<f64>, offset: usize, dim: usize) -> CsMat<f64> {
    csc_from_triplets((dim, dim), m.iter().map(|(v, (i, j))| (offset + i, offset + j, *v)))
}

fn outer_gram(rows: &[&Combination], dim: usize) -> CsMat<f64> {
    let mut trip = Vec::new();
    for r in rows {
        for &(i, vi) in r.iter() {
            for &(j, vj) in r.iter() {
                trip.push((i, j, vi * vj));
            }
        }
    }
    csc_from_triplets((dim, dim), trip)
}

fn cross_gram(pairs: &[(&Combination, &Combination)], dim: usize) -> CsMat<f64> {
    let mut trip = Vec::new();
    for (a, b) in pairs {
        for &(i, vi) in a.iter() {
            for &(j, vj) in b.iter() {
                trip.push((i, j, vi * vj));
                trip.push((j, i, vi * vj));
            }
        }
    }
    csc_from_triplets((dim, dim), trip)
}

fn accumulate_combo(c: &Combination, coef: f64, out: &mut [f64]) {
    for &(i, v) in c {
        out[i] += coef * v;
    }
}

impl Model {
    /// Builds the model; fails if no station value is observed.
    pub fn new(
        family: ModelFamily,
        data: Arc<ObservationSet>,
        mesh: Arc<Mesh>,
        priors: &HyperPriorSet,
    ) -> Result<Self> {
        let fem = Arc::new(FemMatrices::new(&mesh));
        Self::with_fem(family, data, mesh, fem, priors, false)
    }

    /// As [`Model::new`], reusing finite-element matrices and optionally
    /// accepting a data set without any observed station value.
    pub fn with_fem(
        family: ModelFamily,
        data: Arc<ObservationSet>,
        mesh: Arc<Mesh>,
        fem: Arc<FemMatrices>,
        priors: &HyperPriorSet,
        allow_empty: bool,
    ) -> Result<Self> {
        priors.validate()?;
        let n = mesh.n_vertices();
        let t = data.n_times().max(1);
        let p = match family {
            ModelFamily::RegressionCalibration => 2,
            _ => data.n_covariates(),
        };
        let layout = Layout {
            p,
            n,
            t,
            n_fields: family.n_fields(),
        };
        let dim = layout.dim();

        let observed: Vec<usize> = (0..data.stations().len())
            .filter(|&i| data.stations()[i].value.is_some())
            .collect();
        if observed.is_empty() && !allow_empty {
            return Err(Error::EmptyObservations("no observed station values".into()));
        }
        let site_proj = project(&mesh, data.station_locations())?;
        let site_index: HashMap<&str, usize> = data
            .station_ids()
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();

        // Regression calibration: nearest-cell predictor per station site.
        let matched_cell: Vec<usize> = if family == ModelFamily::RegressionCalibration {
            if data.cell_ids().is_empty() {
                return Err(Error::invalid("regression calibration needs gridded data"));
            }
            data.station_locations()
                .iter()
                .map(|p| data.nearest_cell(*p).expect("non-empty grid"))
                .collect()
        } else {
            Vec::new()
        };
        let grid_lookup: HashMap<(usize, usize), f64> = if family == ModelFamily::RegressionCalibration {
            let cell_index: HashMap<&str, usize> = data
                .cell_ids()
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i))
                .collect();
            data.grid()
                .iter()
                .filter_map(|r| r.value.map(|v| ((cell_index[r.cell_id.as_str()], r.t), v)))
                .collect()
        } else {
            HashMap::new()
        };

        let mut station_rows = Vec::with_capacity(observed.len());
        let mut row_site = Vec::with_capacity(observed.len());
        for &k in &observed {
            let r = &data.stations()[k];
            let site = site_index[r.station_id.as_str()];
            let proj = site_proj.row(site);
            let mut row: Combination = Vec::new();
            match family {
                ModelFamily::RegressionCalibration => {
                    let cell = matched_cell[site];
                    let w2 = *grid_lookup.get(&(cell, r.t)).ok_or_else(|| {
                        Error::invalid(format!(
                            "station `{}` at t = {}: matched grid cell `{}` has no value",
                            r.station_id,
                            r.t,
                            data.cell_ids()[cell]
                        ))
                    })?;
                    row.push((0, 1.0));
                    row.push((1, w2));
                    for &(v, w) in &proj {
                        row.push((layout.index(0, r.t, v), w));
                    }
                    if w2 != 0.0 {
                        for &(v, w) in &proj {
                            row.push((layout.index(1, r.t, v), w2 * w));
                        }
                    }
                }
                _ => {
                    for (j, &z) in r.covariates.iter().enumerate() {
                        if z != 0.0 {
                            row.push((j, z));
                        }
                    }
                    for &(v, w) in &proj {
                        row.push((layout.index(0, r.t, v), w));
                    }
                }
            }
            station_rows.push(ObsRow {
                source: RowSource::Station(k),
                scaled: Vec::new(),
                fixed: row,
                y: r.value.unwrap(),
            });
            row_site.push(site);
        }

        let mut grid_rows = Vec::new();
        if family == ModelFamily::Fusion {
            let cell_proj = project(&mesh, data.cell_locations())?;
            let cell_index: HashMap<&str, usize> = data
                .cell_ids()
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i))
                .collect();
            for (k, r) in data.grid().iter().enumerate() {
                let Some(y) = r.value else { continue };
                let proj = cell_proj.row(cell_index[r.cell_id.as_str()]);
                let mut scaled: Combination = r
                    .covariates
                    .iter()
                    .enumerate()
                    .filter(|e| *e.1 != 0.0)
                    .map(|(j, &z)| (j, z))
                    .collect();
                scaled.extend(proj.iter().map(|&(v, w)| (layout.index(0, r.t, v), w)));
                let fixed = proj.iter().map(|&(v, w)| (layout.index(1, r.t, v), w)).collect();
                grid_rows.push(ObsRow {
                    source: RowSource::Grid(k),
                    scaled,
                    fixed,
                    y,
                });
            }
        }

        // Prior terms.
        let mut prior_mats: Vec<(CsMat<f64>, PriorCoef)> = Vec::new();
        prior_mats.push((
            csc_from_triplets((dim, dim), (0..p).map(|j| (j, j, 1.0))),
            PriorCoef::Beta,
        ));
        let basis = ar1_basis(t);
        let fem_terms = [fem.mass(), &fem.g, &fem.gcg];
        for f in 0..layout.n_fields {
            for (m, mb) in basis.iter().enumerate() {
                if mb.iter().all(|r| r.iter().all(|v| *v == 0.0)) {
                    continue;
                }
                for (q, fm) in fem_terms.iter().enumerate() {
                    let k = kron_dense_sparse(mb, fm);
                    prior_mats.push((embed(&k, layout.field_offset(f), dim), PriorCoef::Field { f, m, q }));
                }
            }
        }

        // Likelihood terms.
        let mut by_site: Vec<Vec<usize>> = vec![Vec::new(); data.station_ids().len()];
        for (r, &s) in row_site.iter().enumerate() {
            by_site[s].push(r);
        }
        let station_grams: Vec<CsMat<f64>> = by_site
            .iter()
            .map(|rows| {
                let rr: Vec<&Combination> = rows.iter().map(|&r| &station_rows[r].fixed).collect();
                outer_gram(&rr, dim)
            })
            .collect();
        let grid_grams = if grid_rows.is_empty() {
            None
        } else {
            let s: Vec<&Combination> = grid_rows.iter().map(|r| &r.scaled).collect();
            let fx: Vec<&Combination> = grid_rows.iter().map(|r| &r.fixed).collect();
            let pairs: Vec<(&Combination, &Combination)> = grid_rows.iter().map(|r| (&r.scaled, &r.fixed)).collect();
            Some([outer_gram(&s, dim), cross_gram(&pairs, dim), outer_gram(&fx, dim)])
        };

        let mut all: Vec<&CsMat<f64>> = prior_mats.iter().map(|(m, _)| m).collect();
        all.extend(station_grams.iter());
        if let Some(g) = &grid_grams {
            all.extend(g.iter());
        }
        let pattern = pattern_union(&all);
        let symbolic = Arc::new(SymbolicCholesky::analyze(&pattern)?);

        let prior_terms = prior_mats
            .iter()
            .map(|(m, c)| Ok((AlignedTerm::new(&pattern, m)?, *c)))
            .collect::<Result<Vec<_>>>()?;
        let stations = by_site
            .iter()
            .zip(&station_grams)
            .map(|(rows, g)| {
                let mut b = vec![0.0; dim];
                let mut yy = 0.0;
                for &r in rows {
                    let row = &station_rows[r];
                    accumulate_combo(&row.fixed, row.y, &mut b);
                    yy += row.y * row.y;
                }
                Ok(StationGroup {
                    gram: AlignedTerm::new(&pattern, g)?,
                    b: b.into_iter().enumerate().filter(|e| e.1 != 0.0).collect(),
                    yy,
                    m: rows.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let grid = match grid_grams {
            None => None,
            Some([ss, sf, ff]) => {
                let mut b_s = vec![0.0; dim];
                let mut b_f = vec![0.0; dim];
                let mut yy = 0.0;
                for r in &grid_rows {
                    accumulate_combo(&r.scaled, r.y, &mut b_s);
                    accumulate_combo(&r.fixed, r.y, &mut b_f);
                    yy += r.y * r.y;
                }
                Some(GridTerms {
                    gram_ss: AlignedTerm::new(&pattern, &ss)?,
                    gram_sf: AlignedTerm::new(&pattern, &sf)?,
                    gram_ff: AlignedTerm::new(&pattern, &ff)?,
                    b_s,
                    b_f,
                    yy,
                    m: grid_rows.len(),
                })
            }
        };

        let mut slots = vec![HyperSlot::SigmaE1];
        if family == ModelFamily::Fusion {
            slots.push(HyperSlot::SigmaE2);
        }
        for f in 0..layout.n_fields {
            slots.push(HyperSlot::FieldSd(f));
            slots.push(HyperSlot::FieldRange(f));
            if t > 1 {
                slots.push(HyperSlot::FieldPhi(f));
            }
        }

        Ok(Self {
            family,
            data,
            mesh,
            fem,
            priors: priors.clone(),
            layout,
            station_rows,
            grid_rows,
            row_site,
            pattern,
            symbolic,
            prior_terms,
            stations,
            grid,
            slots,
        })
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn data(&self) -> &Arc<ObservationSet> {
        &self.data
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn fem(&self) -> &Arc<FemMatrices> {
        &self.fem
    }

    pub fn priors(&self) -> &HyperPriorSet {
        &self.priors
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Free hyperparameters in search order. AR coefficients are left out
    /// when there is a single time point, where they are not identifiable.
    pub fn slots(&self) -> &[HyperSlot] {
        &self.slots
    }

    pub fn n_station_sites(&self) -> usize {
        self.stations.len()
    }

    /// Number of observed station values per site.
    pub fn site_counts(&self) -> Vec<usize> {
        self.stations.iter().map(|s| s.m).collect()
    }

    /// Field priors in the order of [`HyperPoint::fields`].
    pub fn field_priors(&self) -> Vec<crate::priors::FieldPrior> {
        match self.family {
            ModelFamily::Fusion => vec![self.priors.latent, self.priors.error_field],
            ModelFamily::StationsOnly => vec![self.priors.latent],
            ModelFamily::RegressionCalibration => vec![self.priors.error_field, self.priors.slope_field],
        }
    }

    /// Log prior density of the hyperparameters on their natural scale.
    pub fn log_prior(&self, h: &HyperPoint) -> f64 {
        let mut lp = self.priors.noise_station.log_density(h.sigma_e1);
        if self.family == ModelFamily::Fusion {
            lp += self.priors.noise_grid.log_density(h.sigma_e2.unwrap_or(f64::NAN));
        }
        for (fp, fh) in self.field_priors().iter().zip(&h.fields) {
            lp += fp.sd.log_density(fh.sd) + fp.range.log_density(fh.range);
            if self.layout.t > 1 {
                lp += fp.ar.log_density(fh.phi);
            }
        }
        lp
    }

    /// Prior mode in search coordinates, used as the default start.
    pub fn prior_mode(&self) -> HyperPoint {
        let fields = self
            .field_priors()
            .iter()
            .map(|fp| FieldHyper::new(fp.sd.log_scale_mode(), fp.range.log_scale_mode(), 0.0))
            .collect();
        HyperPoint {
            sigma_e1: self.priors.noise_station.log_scale_mode(),
            sigma_e2: (self.family == ModelFamily::Fusion).then(|| self.priors.noise_grid.log_scale_mode()),
            fields,
        }
    }

    fn log_det_prior(&self, h: &HyperPoint) -> Result<f64> {
        let l = self.layout;
        let mut ld = l.p as f64 * self.priors.beta_precision.ln();
        for fh in &h.fields {
            let qs = self.fem.log_det(&fh.matern())?;
            ld += st_log_det(qs, l.n, if l.t > 1 { fh.phi } else { 0.0 }, l.t);
        }
        Ok(ld)
    }

    fn prior_coefficients(&self, h: &HyperPoint) -> Result<Vec<[[f64; 3]; 3]>> {
        h.fields
            .iter()
            .map(|fh| {
                let a = FemMatrices::coefficients(&fh.matern())?;
                let phi = if self.layout.t > 1 { fh.phi } else { 0.0 };
                let m = ar1_coefficients(phi, self.layout.t);
                let mut out = [[0.0; 3]; 3];
                for (mi, row) in out.iter_mut().enumerate() {
                    for (qi, v) in row.iter_mut().enumerate() {
                        *v = m[mi] * a[qi];
                    }
                }
                Ok(out)
            })
            .collect()
    }

    /// Prior precision of the latent vector.
    pub fn prior_precision(&self, h: &HyperPoint) -> Result<CsMat<f64>> {
        h.validate(self.family)?;
        let coefs = self.prior_coefficients(h)?;
        let mut vals = vec![0.0; self.pattern.nnz()];
        for (term, c) in &self.prior_terms {
            let k = match *c {
                PriorCoef::Beta => self.priors.beta_precision,
                PriorCoef::Field { f, m, q } => coefs[f][m][q],
            };
            term.accumulate(k, &mut vals);
        }
        let m = CsMat::new_csc(
            self.pattern.shape(),
            self.pattern.indptr().raw_storage().to_vec(),
            self.pattern.indices().to_vec(),
            vals,
        );
        Ok(drop_zeros(&m))
    }

    fn alpha1_for(&self, alpha1: Option<f64>) -> Result<f64> {
        match (self.family, alpha1) {
            (ModelFamily::Fusion, Some(a)) if a.is_finite() => Ok(a),
            (ModelFamily::Fusion, _) => Err(Error::invalid("fusion model needs a finite alpha1")),
            _ => Ok(0.0),
        }
    }

    /// Explicit observation system at `h` (and `α₁` for fusion).
    pub fn assemble(&self, h: &HyperPoint, alpha1: Option<f64>) -> Result<GaussianSystem> {
        let a1 = self.alpha1_for(alpha1)?;
        let q_prior = self.prior_precision(h)?;
        let dim = self.layout.dim();
        let mut trip = Vec::new();
        let mut noise = Vec::new();
        let mut y = Vec::new();
        let mut rows = Vec::new();
        let s1 = 1.0 / (h.sigma_e1 * h.sigma_e1);
        for (r, row) in self.station_rows.iter().chain(&self.grid_rows).enumerate() {
            for (c, v) in row.combined(a1) {
                trip.push((r, c, v));
            }
            noise.push(match row.source {
                RowSource::Station(_) => s1,
                RowSource::Grid(_) => 1.0 / h.sigma_e2.unwrap().powi(2),
            });
            y.push(row.y);
            rows.push(row.source);
        }
        Ok(GaussianSystem {
            q_prior,
            a: csc_from_triplets((rows.len(), dim), trip).to_csr(),
            noise_precision: noise,
            y,
            rows,
        })
    }

    /// Posterior given `h` through the precomputed terms. `active` selects
    /// which station sites contribute (all when `None`).
    pub fn condition(&self, h: &HyperPoint, alpha1: Option<f64>, active: Option<&[bool]>) -> Result<GaussianPosterior> {
        h.validate(self.family)?;
        let a1 = self.alpha1_for(alpha1)?;
        let coefs = self.prior_coefficients(h)?;
        let dim = self.layout.dim();
        let mut vals = vec![0.0; self.pattern.nnz()];
        for (term, c) in &self.prior_terms {
            let k = match *c {
                PriorCoef::Beta => self.priors.beta_precision,
                PriorCoef::Field { f, m, q } => coefs[f][m][q],
            };
            term.accumulate(k, &mut vals);
        }
        let mut b = vec![0.0; dim];
        let mut yny = 0.0;
        let mut log_det_n = 0.0;
        let mut m = 0usize;
        let s1 = 1.0 / (h.sigma_e1 * h.sigma_e1);
        for (i, g) in self.stations.iter().enumerate() {
            if active.is_some_and(|a| !a[i]) || g.m == 0 {
                continue;
            }
            g.gram.accumulate(s1, &mut vals);
            accumulate_combo(&g.b, s1, &mut b);
            yny += s1 * g.yy;
            log_det_n += g.m as f64 * s1.ln();
            m += g.m;
        }
        if let Some(g) = &self.grid {
            let s2 = 1.0 / h.sigma_e2.unwrap().powi(2);
            g.gram_ss.accumulate(s2 * a1 * a1, &mut vals);
            g.gram_sf.accumulate(s2 * a1, &mut vals);
            g.gram_ff.accumulate(s2, &mut vals);
            for i in 0..dim {
                b[i] += s2 * (a1 * g.b_s[i] + g.b_f[i]);
            }
            yny += s2 * g.yy;
            log_det_n += g.m as f64 * s2.ln();
            m += g.m;
        }
        let factor = self.symbolic.factor(&vals)?;
        let mean = factor.solve(&b);
        let btmu: f64 = b.iter().zip(&mean).map(|(x, y)| x * y).sum();
        let log_ml = 0.5 * self.log_det_prior(h)? + 0.5 * log_det_n
            - 0.5 * factor.log_det()
            - 0.5 * (yny - btmu)
            - 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(GaussianPosterior { factor, mean, log_ml })
    }

    /// Latent combinations giving the process `x(s, t)` at the targets.
    pub fn target_combinations(&self, targets: &[Target]) -> Result<Vec<Combination>> {
        let locs: Vec<Point> = targets.iter().map(|t| t.loc).collect();
        let proj = project(&self.mesh, &locs)?;
        let l = self.layout;
        targets
            .iter()
            .enumerate()
            .map(|(i, tg)| {
                if tg.t == 0 || tg.t > l.t {
                    return Err(Error::invalid(format!("target {i}: time {} outside 1..={}", tg.t, l.t)));
                }
                let row = proj.row(i);
                let mut c: Combination = Vec::new();
                match self.family {
                    ModelFamily::RegressionCalibration => {
                        let cell = self.data.nearest_cell(tg.loc).expect("grid present");
                        let w2 = self.data.cell_value(cell, tg.t).ok_or_else(|| {
                            Error::invalid(format!("target {i}: nearest grid cell has no value at t = {}", tg.t))
                        })?;
                        c.push((0, 1.0));
                        c.push((1, w2));
                        c.extend(row.iter().map(|&(v, w)| (l.index(0, tg.t, v), w)));
                        if w2 != 0.0 {
                            c.extend(row.iter().map(|&(v, w)| (l.index(1, tg.t, v), w2 * w)));
                        }
                    }
                    _ => {
                        if tg.covariates.len() != l.p {
                            return Err(Error::invalid(format!(
                                "target {i}: expected {} covariates, got {}",
                                l.p,
                                tg.covariates.len()
                            )));
                        }
                        c.extend(
                            tg.covariates
                                .iter()
                                .enumerate()
                                .filter(|e| *e.1 != 0.0)
                                .map(|(j, &z)| (j, z)),
                        );
                        c.extend(row.iter().map(|&(v, w)| (l.index(0, tg.t, v), w)));
                    }
                }
                Ok(c)
            })
            .collect()
    }

    /// Latent combinations giving the additive error field `α₀(s, t)` of the
    /// fusion model.
    pub fn error_field_combinations(&self, points: &[(Point, usize)]) -> Result<Vec<Combination>> {
        if self.family != ModelFamily::Fusion {
            return Err(Error::invalid("only the fusion model has an error field"));
        }
        let locs: Vec<Point> = points.iter().map(|p| p.0).collect();
        let proj = project(&self.mesh, &locs)?;
        Ok(points
            .iter()
            .enumerate()
            .map(|(i, &(_, t))| {
                proj.row(i)
                    .iter()
                    .map(|&(v, w)| (self.layout.index(1, t, v), w))
                    .collect()
            })
            .collect())
    }

    /// Station records behind the modelled station rows, with their site.
    pub fn station_row_sites(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.station_rows
            .iter()
            .zip(&self.row_site)
            .map(|(r, &s)| match r.source {
                RowSource::Station(k) => (k, s),
                RowSource::Grid(_) => unreachable!(),
            })
    }
}

fn drop_zeros(m: &CsMat<f64>) -> CsMat<f64> {
    csc_from_triplets(
        m.shape(),
        m.iter().filter(|(v, _)| **v != 0.0).map(|(v, (i, j))| (i, j, *v)),
    )
}

fn build(family: ModelFamily, data: &ObservationSet, mesh: &Mesh, priors: &HyperPriorSet) -> Result<Model> {
    Model::new(family, Arc::new(data.clone()), Arc::new(mesh.clone()), priors)
}

/// Fusion system at `θ` and `α₁`.
pub fn assemble_fusion(
    data: &ObservationSet,
    mesh: &Mesh,
    priors: &HyperPriorSet,
    theta: &HyperPoint,
    alpha1: f64,
) -> Result<GaussianSystem> {
    build(ModelFamily::Fusion, data, mesh, priors)?.assemble(theta, Some(alpha1))
}

/// Stations-only system; the gridded data are ignored.
pub fn assemble_stations_only(
    data: &ObservationSet,
    mesh: &Mesh,
    priors: &HyperPriorSet,
    theta: &HyperPoint,
) -> Result<GaussianSystem> {
    build(ModelFamily::StationsOnly, &data.without_grid(), mesh, priors)?.assemble(theta, None)
}

/// Regression-calibration system.
pub fn assemble_regcalib(
    data: &ObservationSet,
    mesh: &Mesh,
    priors: &HyperPriorSet,
    theta: &HyperPoint,
) -> Result<GaussianSystem> {
    build(ModelFamily::RegressionCalibration, data, mesh, priors)?.assemble(theta, None)
}

/// Dense helper used by callers that need `A·x`.
pub fn apply_rows(system: &GaussianSystem, x: &[f64]) -> Vec<f64> {
    matvec(&system.a, x)
}

/// `Q_prior + Aᵀ N A`.
pub fn posterior_precision(system: &GaussianSystem) -> CsMat<f64> {
    let g = weighted_gram(&system.a, &system.noise_precision);
    let sum: CsMat<f64> = &system.q_prior + &g;
    sum.to_csc()
}
