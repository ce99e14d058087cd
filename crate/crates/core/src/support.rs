//! Global support identification.
//!
//! Each device counts, per column, how many of its measurements touching
//! that column are zero ([`local_scores`]). The server sums these counts per
//! group and declares a column active when some group's sum is below the
//! threshold `eta` ([`fuse_support`]). Groups that pass for a column are kept
//! as that column's eligible set for the amplitude stage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::disjunct::{effective_t, GroupPartition};
use crate::error::{Error, Result};
use crate::model::{DeviceView, Scenario};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub device_id: usize,
    /// `u_n`: zero-valued measurements among the rows of column `n`.
    pub u: Vec<u32>,
}

pub fn local_scores(view: &DeviceView, eps_zero: f64) -> ScoreVector {
    let y = &view.measurements;
    let u = view
        .phi
        .column_supports()
        .iter()
        .map(|rows| rows.iter().filter(|&&m| y[m].abs() <= eps_zero).count() as u32)
        .collect();
    ScoreVector {
        device_id: view.device_id,
        u,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SupportEstimate {
    /// Estimated support, ascending.
    pub support: Vec<usize>,
    /// For each estimated component, the groups whose count fell below
    /// `eta` (0-based group indices, ascending).
    pub eligible: BTreeMap<usize, Vec<usize>>,
}

impl SupportEstimate {
    /// Components assigned to `group`, ascending.
    pub fn assigned_to(&self, group: usize) -> Vec<usize> {
        self.eligible
            .iter()
            .filter(|(_, gs)| gs.contains(&group))
            .map(|(&n, _)| n)
            .collect()
    }
}

/// Per-group summed scores `[group][column]`.
pub fn group_counts(scores: &[ScoreVector], partition: &GroupPartition) -> Result<Vec<Vec<u64>>> {
    if scores.len() != partition.device_count() {
        return Err(Error::PartitionMismatch(format!(
            "{} score vectors for {} devices",
            scores.len(),
            partition.device_count()
        )));
    }
    let n = scores.first().map_or(0, |s| s.u.len());
    if let Some(bad) = scores.iter().find(|s| s.u.len() != n) {
        return Err(Error::DimensionMismatch {
            what: "score vector length",
            expected: n,
            got: bad.u.len(),
        });
    }
    partition
        .groups()
        .iter()
        .map(|g| {
            let mut sum = vec![0u64; n];
            for &i in g {
                let mut found = scores.iter().filter(|s| s.device_id == i);
                let s = found.next().ok_or_else(|| {
                    Error::PartitionMismatch(format!("no score vector from device {i}"))
                })?;
                if found.next().is_some() {
                    return Err(Error::PartitionMismatch(format!(
                        "duplicate score vectors from device {i}"
                    )));
                }
                for (acc, &x) in sum.iter_mut().zip(&s.u) {
                    *acc += u64::from(x);
                }
            }
            Ok(sum)
        })
        .collect()
}

/// Counting rule over per-group sums. A `None` group contributed nothing and
/// can never make a column eligible.
pub fn fuse_group_counts(counts: &[Option<Vec<u64>>], n: usize, eta: f64) -> SupportEstimate {
    let mut est = SupportEstimate::default();
    for col in 0..n {
        let groups: Vec<usize> = counts
            .iter()
            .enumerate()
            .filter_map(|(b, c)| c.as_ref().filter(|c| (c[col] as f64) < eta).map(|_| b))
            .collect();
        if !groups.is_empty() {
            est.support.push(col);
            est.eligible.insert(col, groups);
        }
    }
    est
}

pub fn fuse_support(
    scores: &[ScoreVector],
    partition: &GroupPartition,
    eta: f64,
) -> Result<SupportEstimate> {
    if !(eta > 0.0) {
        return Err(Error::InvalidConfig(format!("eta = {eta} must be positive")));
    }
    let counts = group_counts(scores, partition)?;
    let n = counts.first().map_or(0, Vec::len);
    let counts: Vec<Option<Vec<u64>>> = counts.into_iter().map(Some).collect();
    Ok(fuse_group_counts(&counts, n, eta))
}

/// Midpoint of the admissible threshold interval `(K_o, t + 1 - K_o)`,
/// which is `(t + 1) / 2` whatever `K_o` is. Negative `t` is treated as 0.
pub fn default_eta(t_eff: i64) -> f64 {
    (t_eff.max(0) as f64 + 1.0) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    /// `K_o < t/2` fails.
    OutlierBudget,
    /// `alpha <= B - 1` fails.
    Alpha,
    /// `K_o < eta` fails.
    EtaTooLow,
    /// `eta < t + 1 - K_o` fails.
    EtaTooHigh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// Largest group-wise outlier count.
    pub k_o: usize,
    /// Largest number of devices blocking one support component.
    pub alpha: usize,
    pub t_eff: i64,
    pub eta: f64,
    pub b_count: usize,
    pub thm1_satisfied: bool,
    pub reasons: Vec<Violation>,
}

impl ConditionReport {
    pub fn evaluate(k_o: usize, alpha: usize, t_eff: i64, eta: f64, b_count: usize) -> Self {
        let k = k_o as f64;
        let t = t_eff as f64;
        let mut reasons = Vec::new();
        if !(2.0 * k < t) {
            reasons.push(Violation::OutlierBudget);
        }
        if alpha + 1 > b_count {
            reasons.push(Violation::Alpha);
        }
        if !(k < eta) {
            reasons.push(Violation::EtaTooLow);
        }
        if !(eta < t + 1.0 - k) {
            reasons.push(Violation::EtaTooHigh);
        }
        Self {
            k_o,
            alpha,
            t_eff,
            eta,
            b_count,
            thm1_satisfied: reasons.is_empty(),
            reasons,
        }
    }
}

/// `max_b ||w_b||_0`.
pub fn max_group_outliers(views: &[DeviceView], partition: &GroupPartition) -> Result<usize> {
    partition
        .groups()
        .iter()
        .map(|g| {
            g.iter()
                .map(|&i| crate::disjunct::find_view(views, i).map(DeviceView::outlier_count))
                .sum::<Result<usize>>()
        })
        .try_fold(0, |acc, c| c.map(|c| acc.max(c)))
}

/// Largest number of devices that block one component, over the support.
/// Off-support mask bits never matter and are not counted.
pub fn blockage_alpha(views: &[DeviceView], support: &[usize]) -> usize {
    support
        .iter()
        .map(|&n| views.iter().filter(|v| v.mask[n] == 0).count())
        .max()
        .unwrap_or(0)
}

/// Evaluates the exact-support conditions from ground truth. Simulator-side
/// only: reads the true outliers, masks and support.
pub fn check_theorem1(
    scenario: &Scenario,
    partition: &GroupPartition,
    eta: f64,
) -> Result<ConditionReport> {
    let k_o = max_group_outliers(&scenario.views, partition)?;
    let alpha = blockage_alpha(&scenario.views, &scenario.signal.support);
    let t_eff = effective_t(&scenario.views, partition, &scenario.signal.support)?;
    Ok(ConditionReport::evaluate(k_o, alpha, t_eff, eta, partition.b_count()))
}
