//! Dense reference implementation of the three observation models, built
//! directly from the finite-element matrices and the data records so it
//! shares no assembly code with the sparse path.

#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stfusion::geometry::{build_mesh, project, Domain, Mesh, Point, Unit};
use stfusion::inference::{EnsembleMember, FitDiagnostics, MapFit, PosteriorEnsemble};
use stfusion::models::{FieldHyper, GridRecord, HyperPoint, Model, ModelFamily, ObservationSet, StationRecord};
use stfusion::priors::{default_alpha1_grid, FieldPrior, HyperPriorSet, PcPriorSpec};
use stfusion::spde::{FemMatrices, MaternParams};

pub struct Instance {
    pub family: ModelFamily,
    pub data: ObservationSet,
    pub mesh: Mesh,
    pub priors: HyperPriorSet,
    pub theta: HyperPoint,
    pub alpha1: Option<f64>,
}

impl Instance {
    pub fn model(&self) -> Model {
        Model::new(
            self.family,
            Arc::new(self.data.clone()),
            Arc::new(self.mesh.clone()),
            &self.priors,
        )
        .unwrap()
    }
}

pub fn test_priors(beta_precision: f64) -> HyperPriorSet {
    HyperPriorSet {
        noise_station: PcPriorSpec::sd(0.5, 0.5).unwrap(),
        noise_grid: PcPriorSpec::sd(0.2, 0.5).unwrap(),
        latent: FieldPrior::new(1.0, 1.0, 0.5).unwrap(),
        error_field: FieldPrior::new(0.5, 1.0, 0.5).unwrap(),
        slope_field: FieldPrior::new(0.2, 1.0, 0.5).unwrap(),
        beta_precision,
        alpha1_grid: default_alpha1_grid(),
        alpha1_prior: Default::default(),
    }
}

/// Random tiny instance whose latent dimension stays at or below `max_dim`.
pub fn random_instance(seed: u64, family: ModelFamily, max_dim: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.random_range(1.5..3.0);
    let h = rng.random_range(1.0..2.0);
    let domain = Domain::rectangle(0.0, 0.0, w, h, Unit::Km).unwrap();
    let n_times = rng.random_range(1..=3usize);
    let n_fields = family.n_fields();
    let mut edge = 0.6;
    let mesh = loop {
        let m = build_mesh(&domain, edge, 0.4).unwrap();
        if 2 + n_fields * n_times * m.n_vertices() <= max_dim {
            break m;
        }
        edge *= 1.2;
    };
    let n_st = rng.random_range(3..=7usize);
    let n_cells = rng.random_range(3..=6usize);
    let pt = |rng: &mut ChaCha8Rng| {
        Point::new(
            rng.random_range(0.05 * w..0.95 * w),
            rng.random_range(0.05 * h..0.95 * h),
        )
    };
    let st_locs: Vec<Point> = (0..n_st).map(|_| pt(&mut rng)).collect();
    let cell_locs: Vec<Point> = (0..n_cells).map(|_| pt(&mut rng)).collect();
    let mut stations = Vec::new();
    let mut grid = Vec::new();
    for t in 1..=n_times {
        for (i, p) in st_locs.iter().enumerate() {
            // Keep every station observed at t = 1 so each site has data.
            let missing = t > 1 && rng.random_bool(0.2);
            stations.push(StationRecord {
                station_id: format!("s{i}"),
                loc: *p,
                t,
                value: (!missing).then(|| rng.random_range(-2.0..3.0)),
                covariates: vec![1.0, rng.random_range(-1.0..1.0)],
            });
        }
        for (j, p) in cell_locs.iter().enumerate() {
            grid.push(GridRecord {
                cell_id: format!("g{j}"),
                loc: *p,
                t,
                value: Some(rng.random_range(-2.0..3.0)),
                covariates: vec![1.0, rng.random_range(-1.0..1.0)],
            });
        }
    }
    let data = ObservationSet::new(stations, grid, vec!["intercept".into(), "z".into()], "u").unwrap();
    let fields = (0..n_fields)
        .map(|_| {
            FieldHyper::new(
                rng.random_range(0.4..2.0),
                rng.random_range(0.4..2.5),
                if n_times > 1 { rng.random_range(-0.9..0.9) } else { 0.0 },
            )
        })
        .collect();
    let theta = HyperPoint {
        sigma_e1: rng.random_range(0.2..1.0),
        sigma_e2: (family == ModelFamily::Fusion).then(|| rng.random_range(0.1..0.6)),
        fields,
    };
    let alpha1 = (family == ModelFamily::Fusion).then(|| rng.random_range(0.5..1.5));
    let beta_precision = 10f64.powf(rng.random_range(-3.0..0.0));
    Instance {
        family,
        data,
        mesh,
        priors: test_priors(beta_precision),
        theta,
        alpha1,
    }
}

/// Dense spatial precision `τ²(κ⁴C + 2κ²G + GC⁻¹G)` from the mesh matrices.
pub fn dense_spatial_precision(fem: &FemMatrices, p: &MaternParams) -> DMatrix<f64> {
    let n = fem.c.len();
    let c = DMatrix::from_diagonal(&DVector::from_vec(fem.c.clone()));
    let c_inv = DMatrix::from_diagonal(&DVector::from_iterator(n, fem.c.iter().map(|v| 1.0 / v)));
    let mut g = DMatrix::zeros(n, n);
    for (v, (i, j)) in fem.g.iter() {
        g[(i, j)] += *v;
    }
    let k = p.kappa();
    p.tau2() * (c * k.powi(4) + &g * (2.0 * k * k) + &g * c_inv * &g)
}

/// Dense AR(1) precision with unit innovations (marginal variance `1/(1−φ²)`).
pub fn dense_ar1(phi: f64, t: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(t, t);
    if t == 1 {
        m[(0, 0)] = 1.0 - phi * phi;
        return m;
    }
    for i in 0..t {
        m[(i, i)] = if i == 0 || i + 1 == t { 1.0 } else { 1.0 + phi * phi };
        if i + 1 < t {
            m[(i, i + 1)] = -phi;
            m[(i + 1, i)] = -phi;
        }
    }
    m
}

pub struct DenseSystem {
    pub q_prior: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub noise: DVector<f64>,
    pub y: DVector<f64>,
    /// Station site of each row (`None` for grid rows).
    pub site: Vec<Option<usize>>,
}

/// Latent order: fixed effects, then each field time-major.
pub fn dense_system(inst: &Instance) -> DenseSystem {
    let fem = FemMatrices::new(&inst.mesh);
    let n = inst.mesh.n_vertices();
    let t_n = inst.data.n_times();
    let p = 2;
    let nf = inst.family.n_fields();
    let dim = p + nf * n * t_n;
    let idx = |f: usize, t: usize, v: usize| p + f * n * t_n + (t - 1) * n + v;

    let mut q = DMatrix::zeros(dim, dim);
    for i in 0..p {
        q[(i, i)] = inst.priors.beta_precision;
    }
    for (f, fh) in inst.theta.fields.iter().enumerate() {
        let qs = dense_spatial_precision(&fem, &fh.matern());
        let m = dense_ar1(if t_n > 1 { fh.phi } else { 0.0 }, t_n);
        let kron = m.kronecker(&qs);
        let off = p + f * n * t_n;
        q.view_mut((off, off), (n * t_n, n * t_n)).copy_from(&kron);
    }

    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut noise = Vec::new();
    let mut y = Vec::new();
    let mut site = Vec::new();
    let s1 = inst.theta.sigma_e1.powi(-2);
    let ids = inst.data.station_ids();
    for r in inst.data.stations() {
        let Some(v) = r.value else { continue };
        let proj = project(&inst.mesh, &[r.loc]).unwrap().row(0);
        let mut a = DVector::zeros(dim);
        match inst.family {
            ModelFamily::RegressionCalibration => {
                let cell = inst.data.nearest_cell(r.loc).unwrap();
                let w2 = inst.data.cell_value(cell, r.t).unwrap();
                a[0] = 1.0;
                a[1] = w2;
                for &(k, wk) in &proj {
                    a[idx(0, r.t, k)] += wk;
                    a[idx(1, r.t, k)] += w2 * wk;
                }
            }
            _ => {
                a[0] = r.covariates[0];
                a[1] = r.covariates[1];
                for &(k, wk) in &proj {
                    a[idx(0, r.t, k)] += wk;
                }
            }
        }
        rows.push(a);
        noise.push(s1);
        y.push(v);
        site.push(Some(ids.iter().position(|s| *s == r.station_id).unwrap()));
    }
    if inst.family == ModelFamily::Fusion {
        let a1 = inst.alpha1.unwrap();
        let s2 = inst.theta.sigma_e2.unwrap().powi(-2);
        for r in inst.data.grid() {
            let Some(v) = r.value else { continue };
            let proj = project(&inst.mesh, &[r.loc]).unwrap().row(0);
            let mut a = DVector::zeros(dim);
            a[0] = a1 * r.covariates[0];
            a[1] = a1 * r.covariates[1];
            for &(k, wk) in &proj {
                a[idx(0, r.t, k)] += a1 * wk;
                a[idx(1, r.t, k)] += wk;
            }
            rows.push(a);
            noise.push(s2);
            y.push(v);
            site.push(None);
        }
    }
    let m = rows.len();
    let mut a = DMatrix::zeros(m, dim);
    for (i, r) in rows.iter().enumerate() {
        a.set_row(i, &r.transpose());
    }
    DenseSystem {
        q_prior: q,
        a,
        noise: DVector::from_vec(noise),
        y: DVector::from_vec(y),
        site,
    }
}

impl DenseSystem {
    /// Keeps only rows for which `keep` holds.
    pub fn filter_rows(&self, keep: impl Fn(Option<usize>) -> bool) -> DenseSystem {
        let idx: Vec<usize> = (0..self.site.len()).filter(|&i| keep(self.site[i])).collect();
        DenseSystem {
            q_prior: self.q_prior.clone(),
            a: self.a.select_rows(&idx),
            noise: self.noise.select_rows(&idx),
            y: self.y.select_rows(&idx),
            site: idx.iter().map(|&i| self.site[i]).collect(),
        }
    }
}

pub struct DensePosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub log_ml: f64,
}

/// Posterior by dense inversion, and the marginal likelihood from the
/// observation covariance `A Q⁻¹ Aᵀ + N⁻¹` (a different route from the
/// determinant identity used by the sparse path).
pub fn dense_posterior(s: &DenseSystem) -> DensePosterior {
    let n_mat = DMatrix::from_diagonal(&s.noise);
    let q_post = &s.q_prior + s.a.transpose() * &n_mat * &s.a;
    let cov = q_post.clone().cholesky().expect("posterior precision is SPD").inverse();
    let mean = &cov * (s.a.transpose() * (&n_mat * &s.y));
    let m = s.y.len();
    let log_ml = if m == 0 {
        0.0
    } else {
        let prior_cov = s.q_prior.clone().cholesky().expect("prior precision is SPD").inverse();
        let mut sy = &s.a * prior_cov * s.a.transpose();
        for i in 0..m {
            sy[(i, i)] += 1.0 / s.noise[i];
        }
        let ch = sy.cholesky().expect("observation covariance is SPD");
        let ld: f64 = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let sol = ch.solve(&s.y);
        -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + ld + s.y.dot(&sol))
    };
    DensePosterior { mean, cov, log_ml }
}

/// `‖a − b‖∞ / max(‖b‖∞, tiny)`.
pub fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Largest relative discrepancy between the sparse path and the dense oracle
/// in posterior mean, marginal variances and log marginal likelihood.
pub fn compare(inst: &Instance) -> [f64; 3] {
    let model = inst.model();
    let post = model.condition(&inst.theta, inst.alpha1, None).unwrap();
    let dense = dense_posterior(&dense_system(inst));
    let dim = post.mean.len();
    assert_eq!(dim, dense.mean.len());
    let var = post.marginal_variances(&(0..dim).collect::<Vec<_>>());
    let dvar: Vec<f64> = (0..dim).map(|i| dense.cov[(i, i)]).collect();
    [
        rel_inf(&post.mean, dense.mean.as_slice()),
        rel_inf(&var, &dvar),
        rel(post.log_ml, dense.log_ml),
    ]
}

/// Single-member ensemble conditioned on `theta` without any optimization.
pub fn fixed_ensemble(model: &Model, theta: &HyperPoint, alpha1: Option<f64>) -> PosteriorEnsemble {
    let fit = MapFit {
        family: model.family(),
        alpha1,
        theta: theta.clone(),
        log_posterior: 0.0,
        log_ml: model.condition(theta, alpha1, None).unwrap().log_ml,
        diagnostics: FitDiagnostics {
            iterations: 0,
            evaluations: 1,
            converged: true,
            failures: 0,
            start_log_posterior: 0.0,
            trace: Vec::new(),
        },
        design: vec![(theta.clone(), 1.0)],
    };
    PosteriorEnsemble::single(EnsembleMember::from_fit(model, fit).unwrap())
}
