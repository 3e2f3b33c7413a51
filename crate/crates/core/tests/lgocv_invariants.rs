mod support;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use stfusion::geometry::{build_mesh, Domain, Point, Unit};
use stfusion::lgocv::{build_plan, run_lgocv, LeaveOutPlan};
use stfusion::models::{FieldHyper, HyperPoint, Model, ModelFamily, ObservationSet, StationRecord, Target};
use support::oracle::{dense_posterior, dense_system, fixed_ensemble, random_instance, test_priors};

#[test]
fn held_out_moments_match_dense_deletion_with_grid_kept() {
    for family in ModelFamily::ALL {
        let inst = random_instance(5000, family, 200);
        let model = inst.model();
        let ens = fixed_ensemble(&model, &inst.theta, inst.alpha1);
        let locs = inst.data.station_locations().to_vec();
        let plan = build_plan(&locs, 0.6).unwrap();
        let run = run_lgocv(&model, &ens, std::slice::from_ref(&plan)).unwrap();
        assert!(run.flagged.is_empty());
        assert!(!run.records.is_empty());
        let ids = inst.data.station_ids();
        for rec in &run.records {
            let i = ids.iter().position(|s| s == &rec.station).unwrap();
            let group = &plan.sets[i];
            // Only station rows of the group disappear; grid rows stay.
            let sys = dense_system(&inst).filter_rows(|s| s.is_none_or(|j| !group.contains(&j)));
            let dense = dense_posterior(&sys);
            let r = inst
                .data
                .stations()
                .iter()
                .find(|r| r.station_id == rec.station && r.t == rec.t)
                .unwrap();
            let target = Target {
                loc: r.loc,
                t: r.t,
                covariates: r.covariates.clone(),
            };
            let combo = &model.target_combinations(&[target]).unwrap()[0];
            let mean: f64 = combo.iter().map(|&(k, a)| a * dense.mean[k]).sum();
            let var: f64 = combo
                .iter()
                .flat_map(|&(k, a)| combo.iter().map(move |&(l, b)| (k, l, a * b)))
                .map(|(k, l, ab)| ab * dense.cov[(k, l)])
                .sum();
            let scale = mean.abs().max(1.0);
            assert!(
                (rec.pred_mean - mean).abs() < 1e-8 * scale,
                "{family:?} {}: {} vs {mean}",
                rec.station,
                rec.pred_mean
            );
            assert!((rec.pred_sd.powi(2) - var).abs() < 1e-8 * var, "{family:?}");
            let obs_var = var + inst.theta.sigma_e1.powi(2);
            assert!((rec.pred_obs_sd.powi(2) - obs_var).abs() < 1e-8 * obs_var);
        }
    }
}

#[test]
fn removing_more_stations_never_reduces_uncertainty() {
    for family in ModelFamily::ALL {
        let inst = random_instance(6000, family, 200);
        let model = inst.model();
        let ens = fixed_ensemble(&model, &inst.theta, inst.alpha1);
        let locs = inst.data.station_locations().to_vec();
        let radii = [1e-9, 0.3, 0.6, 1.0, 1.5];
        let plans: Vec<LeaveOutPlan> = radii.iter().map(|&r| build_plan(&locs, r).unwrap()).collect();
        let run = run_lgocv(&model, &ens, &plans).unwrap();
        for w in plans.windows(2) {
            for (i, (small, big)) in w[0].sets.iter().zip(&w[1].sets).enumerate() {
                assert!(small.iter().all(|j| big.contains(j)));
                let id = &inst.data.station_ids()[i];
                let pick = |radius: f64| -> Vec<(usize, f64)> {
                    run.records
                        .iter()
                        .filter(|r| &r.station == id && r.radius == radius)
                        .map(|r| (r.t, r.pred_sd))
                        .collect()
                };
                let (a, b) = (pick(w[0].radius), pick(w[1].radius));
                if b.is_empty() {
                    continue; // flagged: nothing left to condition on
                }
                for ((ta, sa), (tb, sb)) in a.iter().zip(&b) {
                    assert_eq!(ta, tb);
                    assert!(*sb >= sa * (1.0 - 1e-10), "{family:?} {id} t {ta}: {sb} < {sa}");
                }
            }
        }
    }
}

/// Stations-only data at one time point with covariates `[1, z]`.
fn single_time(points: &[(f64, f64, f64, f64)]) -> ObservationSet {
    let stations = points
        .iter()
        .enumerate()
        .map(|(i, &(x, y, z, v))| StationRecord {
            station_id: format!("s{i}"),
            loc: Point::new(x, y),
            t: 1,
            value: Some(v),
            covariates: vec![1.0, z],
        })
        .collect();
    ObservationSet::new(stations, Vec::new(), vec!["intercept".into(), "z".into()], "km").unwrap()
}

#[test]
fn singleton_plan_without_field_is_a_regression_fit() {
    let pts = [
        (0.2, 0.3, -0.8, 1.1),
        (1.4, 0.5, 0.1, 2.3),
        (0.7, 1.6, 0.9, 3.9),
        (1.9, 1.2, -0.3, 1.7),
        (0.4, 0.9, 0.5, 2.8),
        (1.1, 1.8, -1.2, 0.2),
    ];
    let data = single_time(&pts);
    let mesh = build_mesh(&Domain::rectangle(0.0, 0.0, 2.0, 2.0, Unit::Km).unwrap(), 0.4, 0.5).unwrap();
    let beta_prec = 1e-3;
    let priors = test_priors(beta_prec);
    let model = Model::new(ModelFamily::StationsOnly, Arc::new(data), Arc::new(mesh), &priors).unwrap();
    let sigma = 0.7;
    // A vanishing field SD leaves only the fixed effects.
    let theta = HyperPoint {
        sigma_e1: sigma,
        sigma_e2: None,
        fields: vec![FieldHyper::new(1e-7, 1.0, 0.0)],
    };
    let ens = fixed_ensemble(&model, &theta, None);
    let locs: Vec<Point> = pts.iter().map(|p| Point::new(p.0, p.1)).collect();
    let run = run_lgocv(&model, &ens, &[build_plan(&locs, 1e-6).unwrap()]).unwrap();
    assert_eq!(run.records.len(), pts.len());
    for (i, rec) in run.records.iter().enumerate() {
        // Ridge-regularised least squares on the other five stations.
        let keep: Vec<usize> = (0..pts.len()).filter(|&j| j != i).collect();
        let x = DMatrix::from_fn(keep.len(), 2, |r, c| if c == 0 { 1.0 } else { pts[keep[r]].2 });
        let y = DVector::from_iterator(keep.len(), keep.iter().map(|&j| pts[j].3));
        let lhs = x.transpose() * &x / (sigma * sigma) + DMatrix::identity(2, 2) * beta_prec;
        let rhs = x.transpose() * y / (sigma * sigma);
        let beta = lhs.clone().lu().solve(&rhs).unwrap();
        let cov = lhs.try_inverse().unwrap();
        let xi = DVector::from_vec(vec![1.0, pts[i].2]);
        let mean = xi.dot(&beta);
        let var = (xi.transpose() * &cov * &xi)[(0, 0)];
        assert!(
            (rec.pred_mean - mean).abs() < 1e-6,
            "{}: {} vs {mean}",
            rec.station,
            rec.pred_mean
        );
        assert!((rec.pred_sd.powi(2) - var).abs() < 1e-6 * var.max(1.0));
    }
}

#[test]
fn uninformative_remote_station_has_vanishing_divergence() {
    // Seven clustered stations and one far outside the field range.
    let mut pts = vec![
        (0.3, 0.3, 0.2, 1.0),
        (0.6, 0.4, -0.1, 0.4),
        (0.4, 0.7, 0.5, 1.3),
        (0.8, 0.8, -0.6, -0.2),
        (0.2, 0.9, 0.3, 0.9),
        (0.9, 0.2, 0.0, 0.6),
        (0.5, 0.5, -0.3, 0.1),
    ];
    pts.push((4.5, 4.5, 0.4, 2.0));
    let data = single_time(&pts);
    let mesh = build_mesh(&Domain::rectangle(0.0, 0.0, 5.0, 5.0, Unit::Km).unwrap(), 0.25, 0.3).unwrap();
    // Near-certain fixed effects and a noisy measurement: the remote value
    // carries almost no information about the process at its own site.
    let priors = test_priors(1e6);
    let model = Model::new(ModelFamily::StationsOnly, Arc::new(data), Arc::new(mesh), &priors).unwrap();
    let theta = HyperPoint {
        sigma_e1: 10.0,
        sigma_e2: None,
        fields: vec![FieldHyper::new(0.1, 0.5, 0.0)],
    };
    let ens = fixed_ensemble(&model, &theta, None);
    let locs: Vec<Point> = pts.iter().map(|p| Point::new(p.0, p.1)).collect();
    let run = run_lgocv(&model, &ens, &[build_plan(&locs, 1e-6).unwrap()]).unwrap();
    let remote = run.records.iter().find(|r| r.station == "s7").unwrap().predictive();
    let kl = stfusion::metrics::gaussian_kl(remote.pred_mean, remote.pred_sd, remote.full_mean, remote.full_sd);
    assert!(kl >= 0.0 && kl < 1e-4, "{kl}");
}

#[test]
fn emptying_the_station_likelihood_is_flagged() {
    let inst = random_instance(7000, ModelFamily::StationsOnly, 150);
    let model = inst.model();
    let ens = fixed_ensemble(&model, &inst.theta, inst.alpha1);
    let locs = inst.data.station_locations().to_vec();
    let run = run_lgocv(&model, &ens, &[build_plan(&locs, 100.0).unwrap()]).unwrap();
    assert!(run.records.is_empty());
    assert_eq!(run.flagged.len(), locs.len());
    let bad = LeaveOutPlan {
        radius: 1.0,
        sets: vec![vec![0]],
    };
    assert!(run_lgocv(&model, &ens, &[bad]).is_err());
}
