//! Leave-group-out cross-validation at fixed hyperparameters.
//!
//! For each station a leave-out group (the station and every station within
//! a radius) is removed at all time points, the Gaussian system is
//! re-conditioned with the full-data hyperparameters and averaging weights,
//! and the held-out predictive of the process at the station is recorded.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::inference::{predict_moments, PosteriorEnsemble};
use crate::metrics::PredictiveRecord;
use crate::models::{Combination, Model, Target};

/// Leave-out groups for one radius; `sets[i]` holds station-site indices
/// and always contains `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOutPlan {
    pub radius: f64,
    pub sets: Vec<Vec<usize>>,
}

/// Groups every station with all stations within Euclidean `radius`.
pub fn build_plan(stations: &[Point], radius: f64) -> Result<LeaveOutPlan> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid(format!(
            "leave-out radius must be positive, got {radius}"
        )));
    }
    let sets = stations
        .iter()
        .map(|p| {
            stations
                .iter()
                .enumerate()
                .filter(|(_, q)| p.dist(q) <= radius)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    Ok(LeaveOutPlan { radius, sets })
}

/// Held-out and full-data predictive of one station measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LgocvRecord {
    pub station: String,
    pub t: usize,
    pub radius: f64,
    pub model: String,
    pub y: f64,
    pub pred_mean: f64,
    pub pred_sd: f64,
    pub full_mean: f64,
    pub full_sd: f64,
    /// SD of the held-out predictive of the measurement itself.
    pub pred_obs_sd: f64,
}

impl LgocvRecord {
    pub fn predictive(&self) -> PredictiveRecord {
        PredictiveRecord {
            y: self.y,
            pred_mean: self.pred_mean,
            pred_sd: self.pred_sd,
            full_mean: self.full_mean,
            full_sd: self.full_sd,
            noise_sd: (self.pred_obs_sd.powi(2) - self.pred_sd.powi(2)).max(0.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LgocvRun {
    pub records: Vec<LgocvRecord>,
    /// `(radius, station)` pairs whose group removed every station value;
    /// they have no records.
    pub flagged: Vec<(f64, String)>,
}

impl LgocvRun {
    /// Predictive records of one radius, ready for scoring.
    pub fn predictive(&self, radius: f64) -> Vec<PredictiveRecord> {
        self.records
            .iter()
            .filter(|r| r.radius == radius)
            .map(LgocvRecord::predictive)
            .collect()
    }
}

/// Observed station values of one site: `(t, y)` and the process combination.
struct SiteTargets {
    ts: Vec<(usize, f64)>,
    combos: Vec<Combination>,
}

fn site_targets(model: &Model) -> Result<Vec<SiteTargets>> {
    let data = model.data();
    let mut rows: Vec<Vec<(usize, f64, Target)>> = (0..data.station_ids().len()).map(|_| Vec::new()).collect();
    for (k, site) in model.station_row_sites() {
        let r = &data.stations()[k];
        let target = Target {
            loc: r.loc,
            t: r.t,
            covariates: r.covariates.clone(),
        };
        rows[site].push((r.t, r.value.expect("modelled rows are observed"), target));
    }
    rows.into_iter()
        .map(|mut v| {
            v.sort_by_key(|e| e.0);
            let targets: Vec<Target> = v.iter().map(|e| e.2.clone()).collect();
            Ok(SiteTargets {
                ts: v.iter().map(|e| (e.0, e.1)).collect(),
                combos: model.target_combinations(&targets)?,
            })
        })
        .collect()
}

/// Mixture moments `(mean, latent var, measurement var)` of `combos` with
/// only the `active` station sites in the likelihood.
fn held_out_moments(
    model: &Model,
    ens: &PosteriorEnsemble,
    active: &[bool],
    combos: &[Combination],
) -> Result<Vec<(f64, f64, f64)>> {
    let n = combos.len();
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let mut m2_obs = vec![0.0; n];
    for (member, &w) in ens.members.iter().zip(&ens.weights) {
        for (cw, h, _) in &member.components {
            let wk = w * cw;
            if wk == 0.0 {
                continue;
            }
            let post = model.condition(h, member.alpha1(), Some(active))?;
            let (mean, var) = post.combination_moments(combos);
            let noise = h.sigma_e1 * h.sigma_e1;
            for i in 0..n {
                m1[i] += wk * mean[i];
                m2[i] += wk * (var[i] + mean[i] * mean[i]);
                m2_obs[i] += wk * (var[i] + noise + mean[i] * mean[i]);
            }
        }
    }
    Ok((0..n)
        .map(|i| {
            (
                m1[i],
                (m2[i] - m1[i] * m1[i]).max(0.0),
                (m2_obs[i] - m1[i] * m1[i]).max(0.0),
            )
        })
        .collect())
}

/// Runs every plan against a model fitted on the full data. Hyperparameters
/// and averaging weights stay at their full-data values; only the station
/// likelihood changes.
pub fn run_lgocv(model: &Model, ensemble: &PosteriorEnsemble, plans: &[LeaveOutPlan]) -> Result<LgocvRun> {
    let n_sites = model.n_station_sites();
    for p in plans {
        if p.sets.len() != n_sites {
            return Err(Error::invalid(format!(
                "plan for radius {} has {} groups, the model has {} stations",
                p.radius,
                p.sets.len(),
                n_sites
            )));
        }
        if p.sets.iter().flatten().any(|&j| j >= n_sites) {
            return Err(Error::invalid("plan refers to an unknown station"));
        }
    }
    let targets = site_targets(model)?;
    let counts = model.site_counts();
    let ids = model.data().station_ids();
    let family = model.family().name();
    let mut out = LgocvRun::default();
    // Results per (site, group); identical groups recur across radii.
    let mut cache: HashMap<(usize, Vec<usize>), Vec<(f64, f64, f64)>> = HashMap::new();
    let mut full: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; n_sites];

    for plan in plans {
        for (i, set) in plan.sets.iter().enumerate() {
            let tg = &targets[i];
            if tg.ts.is_empty() {
                continue;
            }
            let mut group = set.clone();
            group.sort_unstable();
            group.dedup();
            let remaining: usize = (0..n_sites)
                .filter(|j| group.binary_search(j).is_err())
                .map(|j| counts[j])
                .sum();
            if remaining == 0 {
                out.flagged.push((plan.radius, ids[i].clone()));
                continue;
            }
            let key = (i, group);
            if !cache.contains_key(&key) {
                let mut active = vec![true; n_sites];
                for &j in &key.1 {
                    active[j] = false;
                }
                let v = held_out_moments(model, ensemble, &active, &tg.combos)?;
                cache.insert(key.clone(), v);
            }
            let held = &cache[&key];
            let (fm, fv) = full[i].get_or_insert_with(|| predict_moments(ensemble, &tg.combos, false));
            for (k, &(t, y)) in tg.ts.iter().enumerate() {
                let (m, v, vo) = held[k];
                out.records.push(LgocvRecord {
                    station: ids[i].clone(),
                    t,
                    radius: plan.radius,
                    model: family.to_string(),
                    y,
                    pred_mean: m,
                    pred_sd: v.sqrt(),
                    full_mean: fm[k],
                    full_sd: fv[k].sqrt(),
                    pred_obs_sd: vo.sqrt(),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_example() {
        let pts = [Point::new(0.0, 0.0), Point::new(50.0, 0.0), Point::new(120.0, 0.0)];
        let p = build_plan(&pts, 60.0).unwrap();
        assert_eq!(p.sets, vec![vec![0, 1], vec![0, 1], vec![2]]);
    }

    #[test]
    fn singleton_and_full_limits() {
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(3.0, 0.5),
            Point::new(0.2, 2.0),
        ];
        let tiny = build_plan(&pts, 0.5).unwrap();
        assert!(tiny.sets.iter().enumerate().all(|(i, s)| s == &vec![i]));
        let all = build_plan(&pts, 10.0).unwrap();
        assert!(all.sets.iter().all(|s| s == &vec![0, 1, 2, 3]));
        assert!(build_plan(&pts, 0.0).is_err());
    }

    #[test]
    fn membership_is_symmetric() {
        let pts: Vec<Point> = (0..30)
            .map(|i| Point::new((i * 37 % 17) as f64 * 0.3, (i * 11 % 13) as f64 * 0.25))
            .collect();
        let p = build_plan(&pts, 1.1).unwrap();
        for (i, s) in p.sets.iter().enumerate() {
            assert!(s.contains(&i));
            for &j in s {
                assert!(p.sets[j].contains(&i));
            }
        }
    }
}
