//! Matérn covariance and its sparse GMRF approximation on a mesh.
//!
//! With piecewise-linear elements, lumped mass `C` and stiffness `G`, the
//! field with smoothness `ν = 1` in two dimensions has precision
//! `Q = τ²(κ⁴C + 2κ²G + G C⁻¹ G) = τ² K C⁻¹ K` where `K = κ²C + G`.

use std::io::Write;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use sprs::CsMat;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::linalg::{csc_from_triplets, pattern_union, AlignedTerm, SymbolicCholesky};
use crate::special::bessel_k;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub range: f64,
    pub sd: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
}

fn default_nu() -> f64 {
    1.0
}

impl MaternParams {
    pub fn new(range: f64, sd: f64) -> Self {
        Self { range, sd, nu: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(Error::invalid(format!("range must be positive, got {}", self.range)));
        }
        if !(self.sd > 0.0 && self.sd.is_finite()) {
            return Err(Error::invalid(format!("marginal sd must be positive, got {}", self.sd)));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::invalid(format!("smoothness must be positive, got {}", self.nu)));
        }
        Ok(())
    }

    /// Scale `κ = √(8ν)/ρ`.
    pub fn kappa(&self) -> f64 {
        (8.0 * self.nu).sqrt() / self.range
    }

    /// Precision scaling giving marginal variance `σ²` in two dimensions.
    pub fn tau2(&self) -> f64 {
        let k = self.kappa();
        gamma(self.nu) / (gamma(self.nu + 1.0) * 4.0 * std::f64::consts::PI * k.powf(2.0 * self.nu) * self.sd * self.sd)
    }
}

/// Matérn covariance at distance `dist`.
pub fn matern_cov(dist: f64, params: &MaternParams) -> f64 {
    let var = params.sd * params.sd;
    if dist <= 0.0 {
        return var;
    }
    let u = params.kappa() * dist;
    if u > 700.0 {
        return 0.0;
    }
    let nu = params.nu;
    var * 2f64.powf(1.0 - nu) / gamma(nu) * u.powf(nu) * bessel_k(nu, u)
}

/// Symmetric sparse precision matrix in CSC storage.
#[derive(Debug, Clone)]
pub struct SparsePrecision {
    matrix: CsMat<f64>,
}

impl SparsePrecision {
    pub fn new(matrix: CsMat<f64>) -> Self {
        let matrix = if matrix.is_csc() { matrix } else { matrix.to_csc() };
        Self { matrix }
    }

    pub fn matrix(&self) -> &CsMat<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> CsMat<f64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    /// Coordinate listing `row col value`, one non-zero per line.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# {} {} {}",
            self.matrix.rows(),
            self.matrix.cols(),
            self.matrix.nnz()
        )?;
        let mut entries: Vec<(usize, usize, f64)> = self.matrix.iter().map(|(v, (i, j))| (i, j, *v)).collect();
        entries.sort_by_key(|e| (e.0, e.1));
        for (i, j, v) in entries {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        Ok(())
    }
}

/// Finite-element matrices of a mesh, with the pieces needed to assemble
/// precisions and their log-determinants repeatedly.
#[derive(Debug)]
pub struct FemMatrices {
    /// Lumped mass, one entry per vertex.
    pub c: Vec<f64>,
    pub g: CsMat<f64>,
    /// `G C⁻¹ G`.
    pub gcg: CsMat<f64>,
    c_mat: CsMat<f64>,
    k_pattern: CsMat<f64>,
    k_c: AlignedTerm,
    k_g: AlignedTerm,
    k_symbolic: OnceLock<Arc<SymbolicCholesky>>,
}

impl FemMatrices {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.n_vertices();
        let v = mesh.vertices();
        let mut c = vec![0.0; n];
        let mut trip = Vec::with_capacity(9 * mesh.triangles().len());
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let area = mesh.triangle_area(t);
            // Edge opposite each vertex.
            let e: Vec<(f64, f64)> = (0..3)
                .map(|i| {
                    let (a, b) = (v[tri[(i + 1) % 3]], v[tri[(i + 2) % 3]]);
                    (b.x - a.x, b.y - a.y)
                })
                .collect();
            for i in 0..3 {
                c[tri[i]] += area / 3.0;
                for j in 0..3 {
                    let val = (e[i].0 * e[j].0 + e[i].1 * e[j].1) / (4.0 * area);
                    trip.push((tri[i], tri[j], val));
                }
            }
        }
        let g = csc_from_triplets((n, n), trip);
        let c_mat = csc_from_triplets((n, n), (0..n).map(|i| (i, i, c[i])));
        let gcg = {
            let inv = csc_from_triplets((n, n), (0..n).map(|i| (i, i, 1.0 / c[i])));
            let left = &g * &inv;
            let prod: CsMat<f64> = &left * &g;
            prod.to_csc()
        };
        let k_pattern = pattern_union(&[&c_mat, &g]);
        let k_c = AlignedTerm::new(&k_pattern, &c_mat).expect("mass inside pattern");
        let k_g = AlignedTerm::new(&k_pattern, &g).expect("stiffness inside pattern");
        Self {
            c,
            g,
            gcg,
            c_mat,
            k_pattern,
            k_c,
            k_g,
            k_symbolic: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn mass(&self) -> &CsMat<f64> {
        &self.c_mat
    }

    /// Coefficients `(a_C, a_G, a_GCG)` with `Q = a_C C + a_G G + a_GCG GC⁻¹G`.
    pub fn coefficients(params: &MaternParams) -> Result<[f64; 3]> {
        params.validate()?;
        if params.nu != 1.0 {
            return Err(Error::invalid(format!(
                "only smoothness 1 has a sparse precision, got {}",
                params.nu
            )));
        }
        let k2 = params.kappa().powi(2);
        let t2 = params.tau2();
        Ok([t2 * k2 * k2, 2.0 * t2 * k2, t2])
    }

    pub fn precision(&self, params: &MaternParams) -> Result<SparsePrecision> {
        let [a, b, c] = Self::coefficients(params)?;
        let sum = &(&self.c_mat.map(|v| a * v) + &self.g.map(|v| b * v)) + &self.gcg.map(|v| c * v);
        Ok(SparsePrecision::new(sum))
    }

    /// `log |Q|` through the factorization of `K = κ²C + G`.
    pub fn log_det(&self, params: &MaternParams) -> Result<f64> {
        Self::coefficients(params)?;
        let k2 = params.kappa().powi(2);
        let mut vals = vec![0.0; self.k_pattern.nnz()];
        self.k_c.accumulate(k2, &mut vals);
        self.k_g.accumulate(1.0, &mut vals);
        let sym = match self.k_symbolic.get() {
            Some(s) => Arc::clone(s),
            None => {
                let s = Arc::new(SymbolicCholesky::analyze(&self.k_pattern)?);
                Arc::clone(self.k_symbolic.get_or_init(|| s))
            }
        };
        let fac = sym.factor(&vals)?;
        let n = self.dim() as f64;
        Ok(n * params.tau2().ln() + 2.0 * fac.log_det() - self.c.iter().map(|v| v.ln()).sum::<f64>())
    }
}

/// Precision of a Matérn field with `ν = 1` on `mesh`.
pub fn spde_precision(mesh: &Mesh, params: &MaternParams) -> Result<SparsePrecision> {
    FemMatrices::new(mesh).precision(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Domain, Unit};
    use crate::linalg::CholeskyFactor;

    fn mesh() -> Mesh {
        let d = Domain::rectangle(0.0, 0.0, 2.0, 1.5, Unit::Km).unwrap();
        build_mesh(&d, 0.3, 0.5).unwrap()
    }

    /// `K_ν(x) = ∫₀^∞ exp(−x cosh t) cosh(νt) dt`.
    fn k_quad(nu: f64, x: f64) -> f64 {
        let upper = (1500.0 / x).ln().max(1.0);
        let n = 100_000;
        let h = upper / n as f64;
        let f = |t: f64| (-x * t.cosh()).exp() * (nu * t).cosh();
        let mut s = f(0.0) + f(upper);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn covariance_at_zero_is_variance() {
        let p = MaternParams::new(2.0, 3.16);
        assert_eq!(matern_cov(0.0, &p), 3.16 * 3.16);
    }

    #[test]
    fn exponential_case() {
        let p = MaternParams {
            range: 1.7,
            sd: 2.0,
            nu: 0.5,
        };
        let c = matern_cov(1.7, &p);
        assert!((c - 4.0 * (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn correlation_at_range_for_unit_smoothness() {
        let p = MaternParams::new(1.0, 1.0);
        let x = 8f64.sqrt();
        let oracle = x * k_quad(1.0, x);
        let c = matern_cov(1.0, &p);
        assert!((c - oracle).abs() < 1e-9, "{c} vs {oracle}");
        assert!((c - 0.1397).abs() < 5e-5);
    }

    #[test]
    fn fem_invariants() {
        let m = mesh();
        let fem = FemMatrices::new(&m);
        let total: f64 = fem.c.iter().sum();
        assert!((total - m.total_area()).abs() < 1e-10);
        for (r, row) in fem.g.outer_iterator().enumerate() {
            let s: f64 = row.iter().map(|(_, v)| v).sum();
            assert!(s.abs() < 1e-10, "row {r} sums to {s}");
        }
        for (v, (i, j)) in fem.g.iter() {
            assert!((fem.g.get(j, i).copied().unwrap_or(0.0) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn precision_is_spd_and_scales_with_sd() {
        let m = mesh();
        let fem = FemMatrices::new(&m);
        let p1 = MaternParams::new(1.0, 1.0);
        let p2 = MaternParams::new(1.0, 2.0);
        let q1 = fem.precision(&p1).unwrap();
        let q2 = fem.precision(&p2).unwrap();
        for (v, (i, j)) in q1.matrix().iter() {
            let t = q1.matrix().get(j, i).copied().unwrap();
            assert!((t - v).abs() <= 1e-12 * v.abs().max(1.0));
            let w = q2.matrix().get(i, j).copied().unwrap();
            assert!((w - v / 4.0).abs() <= 1e-12 * v.abs());
        }
        let fac = CholeskyFactor::new(q1.matrix()).unwrap();
        let ld = fem.log_det(&p1).unwrap();
        assert!((fac.log_det() - ld).abs() < 1e-8 * ld.abs().max(1.0));
    }

    #[test]
    fn other_smoothness_rejected() {
        let fem = FemMatrices::new(&mesh());
        let p = MaternParams {
            range: 1.0,
            sd: 1.0,
            nu: 1.5,
        };
        assert!(fem.precision(&p).is_err());
    }

    #[test]
    fn coo_export_lists_every_entry() {
        let fem = FemMatrices::new(&mesh());
        let q = fem.precision(&MaternParams::new(1.0, 1.0)).unwrap();
        let mut buf = Vec::new();
        q.write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), q.matrix().nnz() + 1);
    }
}
