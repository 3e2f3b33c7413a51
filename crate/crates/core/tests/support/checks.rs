//! Reference computations shared by the field and prior tests and the
//! acceptance suite.

#![allow(dead_code)]

use nalgebra::DMatrix;

use stfusion::geometry::{build_mesh, Domain, Mesh, Point, Unit};
use stfusion::linalg::CholeskyFactor;
use stfusion::priors::PcPriorSpec;
use stfusion::simulation::PriorScenario;
use stfusion::spacetime::st_precision;
use stfusion::spde::{matern_cov, spde_precision, MaternParams};

/// Worst relative errors against the Matérn correlation between the node
/// nearest the centre and every interior node at distance `[ρ/4, ρ]`.
pub struct CorrelationCheck {
    /// Standardised by the GMRF node variances.
    pub pearson: f64,
    /// GMRF covariance divided by the nominal σ².
    pub scaled: f64,
    pub pairs: usize,
    /// Longest edge between interior vertices.
    pub max_edge: f64,
}

pub fn correlation_errors(range: f64, max_edge: f64) -> CorrelationCheck {
    let half = 3.0 * range;
    let d = Domain::rectangle(0.0, 0.0, 2.0 * half, 2.0 * half, Unit::Km).unwrap();
    let mesh = build_mesh(&d, max_edge, range).unwrap();
    let sigma = 1.0;
    let p = MaternParams::new(range, sigma);
    let q = spde_precision(&mesh, &p).unwrap();
    let f = CholeskyFactor::new(q.matrix()).unwrap();
    let c = mesh.nearest_vertex(Point::new(half, half));
    let mut e = vec![0.0; mesh.n_vertices()];
    e[c] = 1.0;
    let col = f.solve(&e);
    let v = mesh.vertices();
    let inside = mesh.interior();
    let edge = mesh
        .edges()
        .iter()
        .filter(|&&(a, b)| inside[a] && inside[b])
        .map(|&(a, b)| v[a].dist(&v[b]))
        .fold(0.0f64, f64::max);
    let mut out = CorrelationCheck {
        pearson: 0.0,
        scaled: 0.0,
        pairs: 0,
        max_edge: edge,
    };
    for j in 0..mesh.n_vertices() {
        let dist = v[c].dist(&v[j]);
        if dist < range / 4.0 || dist > range || !inside[j] {
            continue;
        }
        let truth = matern_cov(dist, &p) / (sigma * sigma);
        let var_j = f.marginal_variances(&[j])[0];
        let corr = col[j] / (col[c] * var_j).sqrt();
        out.pearson = out.pearson.max((corr - truth).abs() / truth);
        out.scaled = out.scaled.max((col[j] / (sigma * sigma) - truth).abs() / truth);
        out.pairs += 1;
    }
    out
}

/// A 3 x 3 vertex grid with spacing 0.5, every vertex interior.
pub fn small_grid_mesh() -> Mesh {
    let pts: Vec<Point> = (0..9)
        .map(|k| Point::new((k % 3) as f64 * 0.5, (k / 3) as f64 * 0.5))
        .collect();
    let mut tris = Vec::new();
    for j in 0..2 {
        for i in 0..2 {
            let a = j * 3 + i;
            tris.push([a, a + 1, a + 4]);
            tris.push([a, a + 4, a + 3]);
        }
    }
    Mesh::new(pts, tris, vec![true; 9]).unwrap()
}

fn dense(m: &sprs::CsMat<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::zeros(m.rows(), m.cols());
    for (v, (i, j)) in m.iter() {
        d[(i, j)] += *v;
    }
    d
}

/// Largest error of the inverse space-time precision against
/// `φ^|t−u| Σ / (1 − φ²)`, relative to `max(|expected|, 1)`.
pub fn ar1_kronecker_error(mesh: &Mesh, p: &MaternParams, phi: f64, t: usize) -> f64 {
    let qs = spde_precision(mesh, p).unwrap();
    let sigma = dense(qs.matrix()).try_inverse().unwrap();
    let n = mesh.n_vertices();
    let inv = dense(st_precision(&qs, phi, t).unwrap().matrix())
        .try_inverse()
        .unwrap();
    let mut worst = 0.0f64;
    for a in 0..t {
        for b in 0..t {
            let k = phi.powi((a as i32 - b as i32).abs()) / (1.0 - phi * phi);
            for i in 0..n {
                for j in 0..n {
                    let expect = k * sigma[(i, j)];
                    let got = inv[(a * n + i, b * n + j)];
                    worst = worst.max((got - expect).abs() / expect.abs().max(1.0));
                }
            }
        }
    }
    worst
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `(sd thresholds, range thresholds)` of every prior set in use: the two
/// simulation scenarios and the temperature, relative-humidity and rainfall
/// analyses. All use probability 0.5.
pub fn threshold_sets() -> Vec<(&'static str, Vec<f64>, Vec<f64>)> {
    let mut sets = Vec::new();
    for s in [PriorScenario::Matching, PriorScenario::NonMatching] {
        let [e1, e2, sx, rx, sa, ra] = s.thresholds();
        sets.push((s.name(), vec![e1, e2, sx, sa], vec![rx, ra]));
    }
    sets.push(("temperature", vec![1.90, 0.01, 0.2, 0.01], vec![300.0]));
    sets.push(("relative_humidity", vec![0.08, 0.01, 0.01, 0.004], vec![300.0]));
    sets.push(("rainfall", vec![1.35, 0.01, 0.5, 0.26], vec![300.0]));
    sets
}

/// Largest deviation of a quadrature tail probability from the stated ζ,
/// with the label of the worst threshold.
pub fn pc_tail_error(zeta: f64) -> (f64, String) {
    let mut worst = (0.0f64, String::new());
    let mut note = |err: f64, label: String| {
        if err > worst.0 {
            worst = (err, label);
        }
    };
    for (name, sds, ranges) in threshold_sets() {
        for sd in sds {
            let spec = PcPriorSpec::sd(sd, zeta).unwrap();
            // The tail beyond 60/λ carries e^{-60} of mass.
            let upper = sd + 60.0 / spec.lambda();
            let p = simpson(|s| spec.log_density(s).exp(), sd, upper, 200_000);
            note((p - zeta).abs(), format!("{name} P(sd > {sd})"));
        }
        for r in ranges {
            let spec = PcPriorSpec::range(r, zeta).unwrap();
            let p = simpson(
                |x| if x > 0.0 { spec.log_density(x).exp() } else { 0.0 },
                0.0,
                r,
                200_000,
            );
            note((p - zeta).abs(), format!("{name} P(range < {r})"));
        }
    }
    worst
}

/// Log marginal likelihoods of the temperature analysis over α₁ = 0.5..1.5.
pub const TEMPERATURE_LOG_ML: [f64; 11] = [
    -978.295, -914.791, -849.673, -778.493, -697.501, -688.142, -811.927, -899.762, -949.719, -2265.074, -2329.848,
];
