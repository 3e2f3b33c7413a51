//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line with
//! the measured values, then asserts. Tolerances are fixed here.
//!
//! Lines are written straight to the stderr handle so they appear even when
//! the harness captures test output.

#[allow(dead_code)]
#[path = "../../core/tests/support/checks.rs"]
mod checks;
#[allow(dead_code)]
#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use stfusion::geometry::MeshOptions;
use stfusion::inference::bma_weights;
use stfusion::metrics::{avg_ds_score, ds_score, lgocv_scores, FieldEstimate, PredictiveRecord, ScoreReport, ScoreRow};
use stfusion::models::ModelFamily;
use stfusion::priors::{alpha1_log_prior, default_alpha1_grid, Alpha1Prior};
use stfusion::simulation::{run_study, weight_score_name, PriorScenario, SimConfig, StationScenario, StudyOutcome};
use stfusion::spde::MaternParams;

const ORACLE_TOL: f64 = 1e-8;
const ORACLE_INSTANCES_PER_FAMILY: u64 = 8;
const ORACLE_MAX_DIM: usize = 200;
const ORACLE_SECONDS: f64 = 60.0;
const CORRELATION_TOL: f64 = 0.05;
const KRONECKER_TOL: f64 = 1e-8;
const PC_TOL: f64 = 1e-6;
const SCORE_TOL: f64 = 1e-12;
const STUDY_REPLICATES: u64 = 50;
const CV_REPLICATES: u64 = 20;
const CV_WIN_FRACTION: f64 = 0.7;
/// Reduced fit mesh for the desk-scale studies.
const REDUCED_MESH: (f64, f64) = (0.35, 1.0);
/// Leave-out radii in km and the km represented by one synthetic degree:
/// the largest radius then covers a bit over a quarter of the domain height.
const CV_RADII_KM: [f64; 4] = [60.0, 80.0, 125.0, 150.0];
const KM_PER_SYNTHETIC_DEGREE: f64 = 225.0;

fn verdict(n: u32, pass: bool, detail: String) {
    let line = format!("criterion {n:>2}: {}  {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn criterion_01_sparse_path_matches_dense_oracle() {
    let start = Instant::now();
    let mut worst = [0.0f64; 3];
    let mut count = 0;
    for family in ModelFamily::ALL {
        for seed in 0..ORACLE_INSTANCES_PER_FAMILY {
            let inst = oracle::random_instance(7000 + seed, family, ORACLE_MAX_DIM);
            assert!(inst.model().layout().dim() <= ORACLE_MAX_DIM);
            for (w, e) in worst.iter_mut().zip(oracle::compare(&inst)) {
                *w = w.max(e);
            }
            count += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = count >= 20 && worst.iter().all(|&e| e < ORACLE_TOL) && secs < ORACLE_SECONDS;
    verdict(
        1,
        pass,
        format!(
            "{count} instances; worst rel error mean {:.1e} var {:.1e} log-ml {:.1e}; {secs:.1}s",
            worst[0], worst[1], worst[2]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_gmrf_correlation_follows_matern() {
    let range = 1.0;
    // Edge ρ/10 satisfies the "edge ≤ ρ/5" requirement; the ρ/5 figures are
    // reported alongside because mass lumping inflates node variances there.
    let fine = checks::correlation_errors(range, range / 10.0);
    let fifth = checks::correlation_errors(range, range / 5.0);
    let pass = fine.max_edge <= range / 5.0 && fine.pairs > 20 && fine.pearson < CORRELATION_TOL;
    verdict(
        2,
        pass,
        format!(
            "edge {:.3}ρ: {} pairs, worst corr error {:.2}%; at edge ρ/5: corr {:.2}%, cov/σ² {:.2}%",
            fine.max_edge / range,
            fine.pairs,
            100.0 * fine.pearson,
            100.0 * fifth.pearson,
            100.0 * fifth.scaled
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_space_time_precision_is_separable_ar1() {
    let mesh = checks::small_grid_mesh();
    let p = MaternParams::new(0.8, 1.3);
    let mut worst = 0.0f64;
    for t in 1..=3 {
        for phi in [-0.7, 0.0, 0.45, 0.95] {
            worst = worst.max(checks::ar1_kronecker_error(&mesh, &p, phi, t));
        }
    }
    let pass = mesh.n_vertices() <= 10 && worst <= KRONECKER_TOL;
    verdict(
        3,
        pass,
        format!("{} nodes, T 1..3, worst error {worst:.1e}", mesh.n_vertices()),
    );
    assert!(pass);
}

#[test]
fn criterion_04_pc_priors_reproduce_tail_probabilities() {
    let (err, worst) = checks::pc_tail_error(0.5);
    let pass = err < PC_TOL;
    verdict(4, pass, format!("worst |P - ζ| {err:.1e} ({worst})"));
    assert!(pass);
}

#[test]
fn criterion_05_temperature_weights_concentrate_on_unit_slope() {
    let grid = default_alpha1_grid();
    let prior = alpha1_log_prior(&grid, &Alpha1Prior::Uniform).unwrap();
    let w = bma_weights(&checks::TEMPERATURE_LOG_ML, &prior).unwrap();
    let at_one = grid.iter().position(|a| (a - 1.0).abs() < 1e-9).unwrap();
    let other = w
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != at_one)
        .map(|(_, v)| *v)
        .fold(0.0, f64::max);
    let pass = w[at_one] >= 0.9999 && other <= 1e-4;
    verdict(5, pass, format!("w(1.0) = {:.6}, largest other {other:.2e}", w[at_one]));
    assert!(pass);
}

fn study_config(stations: StationScenario, priors: PriorScenario, replicates: u64) -> SimConfig {
    SimConfig {
        stations,
        priors,
        replicates: replicates as usize,
        fit_mesh: MeshOptions::new(REDUCED_MESH.0, REDUCED_MESH.1),
        ..SimConfig::default()
    }
}

fn run(cfg: &SimConfig, families: &[ModelFamily], radii: &[f64]) -> StudyOutcome {
    let reps: Vec<u64> = (0..cfg.replicates as u64).collect();
    run_study(cfg, families, &reps, radii, &|_| {}).unwrap()
}

/// Matching priors with every family, and non-matching priors with fusion.
fn field_study() -> &'static (StudyOutcome, StudyOutcome, f64) {
    static STUDY: OnceLock<(StudyOutcome, StudyOutcome, f64)> = OnceLock::new();
    STUDY.get_or_init(|| {
        let start = Instant::now();
        let matching = run(
            &study_config(StationScenario::N10, PriorScenario::Matching, STUDY_REPLICATES),
            &ModelFamily::ALL,
            &[],
        );
        let non_matching = run(
            &study_config(StationScenario::N10, PriorScenario::NonMatching, STUDY_REPLICATES),
            &[ModelFamily::Fusion],
            &[],
        );
        (matching, non_matching, start.elapsed().as_secs_f64())
    })
}

fn mean_of(report: &ScoreReport, family: ModelFamily, score: &str) -> f64 {
    let v: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| r.model == family.name() && r.score_name == score)
        .map(|r| r.value)
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_06_fusion_predicts_best_in_the_simulation_study() {
    let (study, _, secs) = field_study();
    let scenario = study_config(StationScenario::N10, PriorScenario::Matching, 0).scenario_label();
    let [fu, rc, so] = [
        ModelFamily::Fusion,
        ModelFamily::RegressionCalibration,
        ModelFamily::StationsOnly,
    ];
    let ase = |f| mean_of(&study.report, f, "avg_squared_error");
    let psd = |f| mean_of(&study.report, f, "avg_posterior_sd");
    let pass =
        study.failures.is_empty() && ase(fu) < ase(rc) && ase(rc) < ase(so) && psd(fu) < psd(rc) && psd(fu) < psd(so);
    verdict(
        6,
        pass,
        format!(
            "{scenario}, {STUDY_REPLICATES} replicates, {} failed fits; mean sq. error fusion {:.3} < reg.cal. {:.3} < stations {:.3}; mean post. sd fusion {:.3}, reg.cal. {:.3}, stations {:.3}; study {:.0}s",
            study.failures.len(),
            ase(fu),
            ase(rc),
            ase(so),
            psd(fu),
            psd(rc),
            psd(so),
            secs
        ),
    );
    assert!(pass, "{:?}", study.failures);
}

/// Replicate-averaged weight per α₁ of the fusion fits.
fn average_weights(report: &ScoreReport) -> Vec<(f64, f64)> {
    default_alpha1_grid()
        .into_iter()
        .map(|a| (a, mean_of(report, ModelFamily::Fusion, &weight_score_name(a))))
        .collect()
}

#[test]
fn criterion_07_averaging_weight_peaks_at_the_true_slope() {
    let (matching, non_matching, _) = field_study();
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, study) in [("matching", matching), ("non-matching", non_matching)] {
        let w = average_weights(&study.report);
        let best = w
            .iter()
            .copied()
            .fold((f64::NAN, f64::NEG_INFINITY), |b, x| if x.1 > b.1 { x } else { b });
        let ok = study.failures.is_empty() && (best.0 - 1.1).abs() < 1e-9;
        pass &= ok;
        let near: Vec<String> = w
            .iter()
            .filter(|(a, _)| (0.95..1.25).contains(a))
            .map(|(a, v)| format!("{a:.1}:{v:.3}"))
            .collect();
        parts.push(format!("{label} argmax {:.1} ({})", best.0, near.join(" ")));
    }
    verdict(7, pass, parts.join("; "));
    assert!(pass);
}

/// n25 fusion-generated replicates cross-validated with fusion and
/// stations-only fits.
fn cv_study() -> &'static (StudyOutcome, Vec<f64>) {
    static STUDY: OnceLock<(StudyOutcome, Vec<f64>)> = OnceLock::new();
    STUDY.get_or_init(|| {
        let radii: Vec<f64> = CV_RADII_KM.iter().map(|r| r / KM_PER_SYNTHETIC_DEGREE).collect();
        let cfg = study_config(StationScenario::N25, PriorScenario::Matching, CV_REPLICATES);
        let out = run(&cfg, &[ModelFamily::Fusion, ModelFamily::StationsOnly], &radii);
        (out, radii)
    })
}

fn record(y: f64, pm: f64, ps: f64, fm: f64, fs: f64, noise: f64) -> PredictiveRecord {
    PredictiveRecord {
        y,
        pred_mean: pm,
        pred_sd: ps,
        full_mean: fm,
        full_sd: fs,
        noise_sd: noise,
    }
}

#[test]
fn criterion_08_scores_match_hand_values_and_stay_consistent() {
    // Three-point fixtures worked by hand.
    let mut fixtures = vec![
        close(ds_score(3.0, 1.0, 4.0).unwrap(), 1.0 + 4f64.ln(), SCORE_TOL),
        close(ds_score(-1.0, 1.0, 0.5).unwrap(), 8.0 - LN_2, SCORE_TOL),
    ];
    let est = FieldEstimate::new(
        Some(vec![3.0, 0.0, -1.0]),
        vec![1.0, 0.0, 1.0],
        vec![2.0, 1.0, 0.5f64.sqrt()],
    )
    .unwrap();
    fixtures.push(close(avg_ds_score(&est).unwrap(), (9.0 + LN_2) / 3.0, SCORE_TOL));
    let s = lgocv_scores(&[
        record(1.0, 0.0, 1.0, 0.0, 1.0, 0.0),
        record(2.0, 3.0, 2.0, 3.5, 1.0, 0.0),
        record(0.0, 0.5, 0.6, 0.5, 0.6, 0.8),
    ])
    .unwrap();
    let c = 0.5 * (2.0 * PI).ln();
    fixtures.extend([
        close(s.ulgocv, (-3.0 * c - LN_2 - 0.75) / 3.0, SCORE_TOL),
        close(s.rmse, 0.75f64.sqrt(), SCORE_TOL),
        close(s.mae, 2.5 / 3.0, SCORE_TOL),
        close(s.mape, 0.75, SCORE_TOL) && s.mape_excluded == 1,
        close(s.msd, 1.2, SCORE_TOL),
        close(s.mkld, (1.625 - LN_2) / 3.0, SCORE_TOL),
    ]);
    let fixtures_ok = fixtures.iter().all(|&b| b);

    // Every cross-validation report of the simulated study.
    let (study, _) = cv_study();
    let mut by_run: BTreeMap<(String, u64, u64), BTreeMap<String, f64>> = BTreeMap::new();
    for r in &study.report.rows {
        if let Some(radius) = r.radius {
            by_run
                .entry((r.model.clone(), r.replicate, radius.to_bits()))
                .or_default()
                .insert(r.score_name.clone(), r.value);
        }
    }
    let scored: Vec<_> = by_run.values().filter(|m| m.contains_key("mkld")).collect();
    let mkld_ok = scored.iter().all(|m| m["mkld"] >= 0.0);
    let order_ok = scored.iter().all(|m| m["rmse"] >= m["mae"]);
    let pass = fixtures_ok && mkld_ok && order_ok && !scored.is_empty();
    verdict(
        8,
        pass,
        format!(
            "{}/{} fixture values within {SCORE_TOL:e}; {} CV reports: MKLD ≥ 0 {}, RMSE ≥ MAE {}",
            fixtures.iter().filter(|&&b| b).count(),
            fixtures.len(),
            scored.len(),
            mkld_ok,
            order_ok
        ),
    );
    assert!(pass);
}

fn ulgocv_at(rows: &[ScoreRow], family: ModelFamily, replicate: u64, radius: f64) -> Option<f64> {
    rows.iter()
        .find(|r| {
            r.model == family.name() && r.replicate == replicate && r.radius == Some(radius) && r.score_name == "ulgocv"
        })
        .map(|r| r.value)
}

#[test]
fn criterion_09_fusion_wins_cross_validation_at_the_largest_radius() {
    let (study, radii) = cv_study();
    let largest = radii.iter().copied().fold(0.0, f64::max);
    let mut wins = 0;
    let mut margins = Vec::new();
    for rep in 0..CV_REPLICATES {
        let fu = ulgocv_at(&study.report.rows, ModelFamily::Fusion, rep, largest);
        let so = ulgocv_at(&study.report.rows, ModelFamily::StationsOnly, rep, largest);
        // A replicate without both scores counts against fusion.
        if let (Some(a), Some(b)) = (fu, so) {
            margins.push(a - b);
            if a >= b {
                wins += 1;
            }
        }
    }
    let fraction = wins as f64 / CV_REPLICATES as f64;
    margins.sort_by(f64::total_cmp);
    let median = margins.get(margins.len() / 2).copied().unwrap_or(f64::NAN);
    let pass = fraction >= CV_WIN_FRACTION;
    verdict(
        9,
        pass,
        format!(
            "radius {largest:.3} deg: fusion ≥ stations-only ULGOCV in {wins}/{CV_REPLICATES} replicates ({:.0}%), median margin {median:.3}; {} failed fits",
            100.0 * fraction,
            study.failures.len()
        ),
    );
    assert!(pass);
}

const DETERMINISM_CONFIG: &str = r#"
seed = 11
[simulate]
replicates = 2
sim_mesh = { max_edge = 0.3, extension = 1.0 }
fit_mesh = { max_edge = 0.6, extension = 0.6 }
[simulate.fit]
warm_start_restarts = 0
[simulate.fit.optimizer]
max_iters = 80
restarts = 0
[study]
families = ["fusion", "stations_only"]
cv_radii = [0.5]
"#;

fn stfusion(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_stfusion"))
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

/// Every CSV file below `dir`, relative path first.
fn csv_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_10_commands_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("study.toml");
    std::fs::write(&cfg, DETERMINISM_CONFIG).unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    for (run, threads) in [("a", "1"), ("b", "2")] {
        let root = tmp.path().join(run);
        stfusion(&[
            "--config",
            &s(&cfg),
            "--out",
            &s(&root.join("sim")),
            "--threads",
            threads,
            "simulate",
        ]);
        let rep_cfg = s(&root.join("sim/replicates/rep_000/fit.toml"));
        stfusion(&[
            "--config",
            &rep_cfg,
            "--out",
            &s(&root.join("fit")),
            "--threads",
            threads,
            "fit",
        ]);
        stfusion(&[
            "--config",
            &rep_cfg,
            "--out",
            &s(&root.join("cv")),
            "--threads",
            threads,
            "cv",
        ]);
    }
    let a = csv_tree(&tmp.path().join("a"));
    let b = csv_tree(&tmp.path().join("b"));
    let names: Vec<_> = a.iter().map(|x| x.0.clone()).collect();
    let same = names == b.iter().map(|x| x.0.clone()).collect::<Vec<_>>() && a.iter().zip(&b).all(|(x, y)| x.1 == y.1);
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let pass = same && a.len() >= 15;
    verdict(
        10,
        pass,
        format!(
            "simulate/fit/cv rerun with 1 and 2 threads: {} CSV files, differing {:?}",
            a.len(),
            differing
        ),
    );
    assert!(pass);
}
