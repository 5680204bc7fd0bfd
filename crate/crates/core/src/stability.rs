//! Run-to-run reproducibility across independent annotation runs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::annotate::RunSet;
use crate::error::{Error, Result};
use crate::metrics::pearson;
use crate::model::Rating;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseAgreement {
    pub n: usize,
    pub exact: f64,
    pub within_1: f64,
    /// Absent when either run is constant over the shared sessions.
    pub pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub runs: usize,
    /// Sessions non-null in every run.
    pub shared_n: usize,
    /// Sessions seen in some run but null or failed in at least one.
    pub excluded_n: usize,
    pub pairwise_exact: f64,
    pub pairwise_within_1: f64,
    /// Mean over run pairs with a defined correlation.
    pub pairwise_pearson: Option<f64>,
    pub all_identical_rate: f64,
    pub pairwise_tvd: f64,
}

fn predictions(run: &RunSet) -> BTreeMap<&str, Rating> {
    run.predictions().collect()
}

fn agreement_over(a: &BTreeMap<&str, Rating>, b: &BTreeMap<&str, Rating>, ids: &[&str]) -> PairwiseAgreement {
    let n = ids.len();
    let (mut exact, mut within) = (0usize, 0usize);
    let (mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for id in ids {
        let (x, y) = (a[id], b[id]);
        let d = (i16::from(x.value()) - i16::from(y.value())).abs();
        exact += usize::from(d == 0);
        within += usize::from(d <= 1);
        xs.push(x.as_f64());
        ys.push(y.as_f64());
    }
    PairwiseAgreement {
        n,
        exact: exact as f64 / n as f64,
        within_1: within as f64 / n as f64,
        pearson: pearson(&xs, &ys).ok(),
    }
}

/// Agreement over the sessions non-null in both runs.
pub fn pairwise_agreement(a: &RunSet, b: &RunSet) -> Result<PairwiseAgreement> {
    let (pa, pb) = (predictions(a), predictions(b));
    let ids: Vec<&str> = pa.keys().filter(|id| pb.contains_key(*id)).copied().collect();
    if ids.is_empty() {
        return Err(Error::domain(format!(
            "runs {} and {} share no non-null sessions",
            a.run_id, b.run_id
        )));
    }
    Ok(agreement_over(&pa, &pb, &ids))
}

fn distribution<'a>(ratings: impl Iterator<Item = &'a Rating>) -> Option<[f64; 11]> {
    let mut counts = [0usize; 11];
    let mut n = 0usize;
    for r in ratings {
        counts[r.index()] += 1;
        n += 1;
    }
    (n > 0).then(|| counts.map(|c| c as f64 / n as f64))
}

fn tvd(a: &[f64; 11], b: &[f64; 11]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Total variation distance between the predicted-score distributions of two runs.
pub fn run_distribution_tvd(a: &RunSet, b: &RunSet) -> Result<f64> {
    let da = distribution(predictions(a).values())
        .ok_or_else(|| Error::domain(format!("run {} has no predictions", a.run_id)))?;
    let db = distribution(predictions(b).values())
        .ok_or_else(|| Error::domain(format!("run {} has no predictions", b.run_id)))?;
    Ok(tvd(&da, &db))
}

/// Stability over the sessions non-null in every run. Pairwise figures are
/// unweighted means over unordered run pairs; TVD is taken over the shared
/// sessions so every statistic describes the same population.
pub fn stability(runs: &[RunSet]) -> Result<StabilityReport> {
    if runs.len() < 2 {
        return Err(Error::domain(format!("stability needs at least 2 runs, got {}", runs.len())));
    }
    let preds: Vec<BTreeMap<&str, Rating>> = runs.iter().map(predictions).collect();
    let seen: BTreeSet<&str> = runs
        .iter()
        .flat_map(|r| r.annotations.keys().chain(r.errors.keys()).map(String::as_str))
        .collect();
    let shared: Vec<&str> = preds[0]
        .keys()
        .filter(|id| preds[1..].iter().all(|p| p.contains_key(*id)))
        .copied()
        .collect();
    if shared.is_empty() {
        return Err(Error::domain("no session is non-null in every run"));
    }

    let mut exact = 0.0;
    let mut within = 0.0;
    let mut tvd_sum = 0.0;
    let mut pearsons = Vec::new();
    let mut pair_count = 0usize;
    let dists: Vec<[f64; 11]> = preds
        .iter()
        .map(|p| distribution(shared.iter().map(|id| &p[id])).expect("shared is nonempty"))
        .collect();
    for i in 0..runs.len() {
        for j in (i + 1)..runs.len() {
            let ag = agreement_over(&preds[i], &preds[j], &shared);
            exact += ag.exact;
            within += ag.within_1;
            pearsons.extend(ag.pearson);
            tvd_sum += tvd(&dists[i], &dists[j]);
            pair_count += 1;
        }
    }
    let identical = shared
        .iter()
        .filter(|id| preds.iter().all(|p| p[*id] == preds[0][*id]))
        .count();
    let k = pair_count as f64;
    Ok(StabilityReport {
        runs: runs.len(),
        shared_n: shared.len(),
        excluded_n: seen.len() - shared.len(),
        pairwise_exact: exact / k,
        pairwise_within_1: within / k,
        pairwise_pearson: (!pearsons.is_empty())
            .then(|| pearsons.iter().sum::<f64>() / pearsons.len() as f64),
        all_identical_rate: identical as f64 / shared.len() as f64,
        pairwise_tvd: tvd_sum / k,
    })
}
