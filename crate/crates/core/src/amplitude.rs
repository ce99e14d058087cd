//! Amplitude recovery for the estimated support.
//!
//! On a private row `m` of column `n` (no other estimated support column
//! touches it) the measurement is `(φ_{m,n} d_n s_n)² + w_m`, so
//! `sqrt(y_m) / |φ_{m,n}|` equals `|s_n|` whenever the device observes `n` and
//! the row is clean. Devices in eligible groups send these ratios; the server
//! takes the most frequent value.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::disjunct::{find_view, GroupPartition};
use crate::error::{Error, Result};
use crate::model::DeviceView;
use crate::support::SupportEstimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioBundle {
    pub device_id: usize,
    pub n: usize,
    pub ratios: Vec<f64>,
    /// Private rows skipped because `y_m < 0`.
    #[serde(default)]
    pub skipped_negative: usize,
}

/// Private rows of `n` relative to `support`: `C_n` minus every row touched by
/// another support column.
pub fn private_rows(view: &DeviceView, support: &[usize], n: usize) -> Vec<usize> {
    view.phi
        .column_support(n)
        .iter()
        .copied()
        .filter(|&m| {
            view.phi
                .row(m)
                .iter()
                .all(|&(c, _)| c == n || support.binary_search(&c).is_err())
        })
        .collect()
}

/// `support` must be sorted ascending.
pub fn device_ratios(view: &DeviceView, support: &[usize], n: usize) -> Result<RatioBundle> {
    if support.binary_search(&n).is_err() {
        return Err(Error::NotInSupport(n));
    }
    let mut ratios = Vec::new();
    let mut skipped_negative = 0;
    for m in private_rows(view, support, n) {
        let y = view.measurements[m];
        if y < 0.0 {
            skipped_negative += 1;
            continue;
        }
        ratios.push(y.sqrt() / view.phi.get(m, n).abs());
    }
    Ok(RatioBundle {
        device_id: view.device_id,
        n,
        ratios,
        skipped_negative,
    })
}

/// A group of ratios equal up to the clustering tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub representative: f64,
    pub multiplicity: usize,
}

fn same_value(a: f64, b: f64, rel_tol: f64) -> bool {
    (a - b).abs() <= rel_tol * a.max(b).max(1e-300)
}

/// Clusters the pooled positive ratios. Values are sorted and a cluster is
/// anchored at its smallest member; its representative is the lower median.
/// Exact zeros come from blocked views (`d_n = 0`) and never count as
/// amplitude evidence for an active component.
pub fn vote_clusters(bundles: &[RatioBundle], rel_tol: f64) -> Vec<Cluster> {
    let mut pooled: Vec<f64> = bundles
        .iter()
        .flat_map(|b| b.ratios.iter().copied())
        .filter(|&r| r > 0.0)
        .collect();
    pooled.sort_by(f64::total_cmp);
    let mut clusters = Vec::new();
    let mut start = 0;
    while start < pooled.len() {
        let anchor = pooled[start];
        let end = start
            + pooled[start..]
                .iter()
                .take_while(|&&v| same_value(anchor, v, rel_tol))
                .count();
        let members = &pooled[start..end];
        clusters.push(Cluster {
            representative: members[(members.len() - 1) / 2],
            multiplicity: members.len(),
        });
        start = end;
    }
    clusters
}

/// Most frequent ratio and its multiplicity. Ties go to the smallest value.
pub fn majority_amplitude(bundles: &[RatioBundle], rel_tol: f64) -> Result<(f64, usize)> {
    let n = bundles.first().map_or(usize::MAX, |b| b.n);
    let clusters = vote_clusters(bundles, rel_tol);
    // Clusters come in ascending order, so the first maximum is the smallest.
    let best = clusters
        .iter()
        .fold(None::<&Cluster>, |best, c| match best {
            Some(b) if b.multiplicity >= c.multiplicity => Some(b),
            _ => Some(c),
        })
        .ok_or(Error::NoEvidence(n))?;
    Ok((best.representative, best.multiplicity))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AmplitudeEstimate {
    /// `|ŝ_n|` per estimated component; 0 where there was no evidence.
    pub amplitudes: BTreeMap<usize, f64>,
    /// Winning cluster multiplicity.
    pub vote_counts: BTreeMap<usize, usize>,
    /// Largest losing cluster multiplicity (0 when unopposed).
    pub runner_up: BTreeMap<usize, usize>,
    /// Components that received no usable ratio.
    pub no_evidence: Vec<usize>,
}

/// Server side of the vote: sees only ratio bundles, grouped by component.
pub fn amplitudes_from_bundles(
    support: &[usize],
    bundles: &BTreeMap<usize, Vec<RatioBundle>>,
    rel_tol: f64,
) -> AmplitudeEstimate {
    let mut est = AmplitudeEstimate::default();
    let empty = Vec::new();
    for &n in support {
        let bs = bundles.get(&n).unwrap_or(&empty);
        let clusters = vote_clusters(bs, rel_tol);
        match majority_amplitude(bs, rel_tol) {
            Ok((amp, count)) => {
                let runner_up = clusters
                    .iter()
                    .filter(|c| c.representative != amp)
                    .map(|c| c.multiplicity)
                    .max()
                    .unwrap_or(0);
                est.amplitudes.insert(n, amp);
                est.vote_counts.insert(n, count);
                est.runner_up.insert(n, runner_up);
            }
            Err(_) => {
                est.amplitudes.insert(n, 0.0);
                est.vote_counts.insert(n, 0);
                est.runner_up.insert(n, 0);
                est.no_evidence.push(n);
            }
        }
    }
    est
}

/// Collects ratios from the devices of each component's eligible groups and
/// votes per component.
pub fn recover_amplitudes(
    views: &[DeviceView],
    partition: &GroupPartition,
    estimate: &SupportEstimate,
    rel_tol: f64,
) -> Result<AmplitudeEstimate> {
    let mut bundles: BTreeMap<usize, Vec<RatioBundle>> = BTreeMap::new();
    for &n in &estimate.support {
        let groups = estimate.eligible.get(&n).map(Vec::as_slice).unwrap_or(&[]);
        for &b in groups {
            for &i in &partition.groups()[b] {
                let view = find_view(views, i)?;
                bundles
                    .entry(n)
                    .or_default()
                    .push(device_ratios(view, &estimate.support, n)?);
            }
        }
    }
    Ok(amplitudes_from_bundles(&estimate.support, &bundles, rel_tol))
}
