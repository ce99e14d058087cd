//! Device groups, group-stacked sensing matrices and disjunctness checks.
//!
//! Two notions are provided. [`verify_disjunct_exact`] checks the full
//! `K^t`-disjunct property by enumerating every `K`-subset of competing
//! columns and is only feasible for small matrices. [`private_row_counts`]
//! computes, for a realized support, how many rows of each column are hit by
//! no other support column; its minimum over groups and columns (minus one)
//! is the effective `t` used by the recovery guarantees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeviceView, Scenario};
use crate::sparse::SparseMatrix;

/// Exhaustive checks are refused above this ambient dimension.
pub const EXACT_MAX_N: usize = 25;
/// Exhaustive checks are refused above this many subsets per column.
pub const EXACT_MAX_SUBSETS: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionPolicy {
    /// Consecutive device ids; earlier groups take one extra device each
    /// until the remainder is used up.
    #[default]
    Contiguous,
    /// Device `i` goes to group `(i - 1) mod B`.
    RoundRobin,
}

/// Disjoint cover of device ids `1..=I` by `B` non-empty groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    groups: Vec<Vec<usize>>,
}

impl GroupPartition {
    pub fn new(groups: Vec<Vec<usize>>, i_count: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidConfig("partition needs at least one group".into()));
        }
        let mut seen = vec![false; i_count + 1];
        for (b, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidConfig(format!("group {b} is empty")));
            }
            for &i in g {
                if i == 0 || i > i_count {
                    return Err(Error::UnknownDevice(i));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidConfig(format!("device {i} in two groups")));
                }
            }
        }
        if let Some(missing) = (1..=i_count).find(|&i| !seen[i]) {
            return Err(Error::InvalidConfig(format!("device {missing} not assigned")));
        }
        let groups = groups
            .into_iter()
            .map(|mut g| {
                g.sort_unstable();
                g
            })
            .collect();
        Ok(Self { groups })
    }

    /// One group per device.
    pub fn singletons(i_count: usize) -> Self {
        Self {
            groups: (1..=i_count).map(|i| vec![i]).collect(),
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn b_count(&self) -> usize {
        self.groups.len()
    }

    pub fn device_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn group_of(&self, device_id: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&device_id))
    }

    /// `M'_b` for each group.
    pub fn group_sizes(&self, views: &[DeviceView]) -> Result<Vec<usize>> {
        self.groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|&i| find_view(views, i).map(DeviceView::rows))
                    .sum()
            })
            .collect()
    }
}

pub(crate) fn find_view(views: &[DeviceView], device_id: usize) -> Result<&DeviceView> {
    views
        .iter()
        .find(|v| v.device_id == device_id)
        .ok_or(Error::UnknownDevice(device_id))
}

pub fn partition_devices(
    i_count: usize,
    b_count: usize,
    policy: PartitionPolicy,
) -> Result<GroupPartition> {
    if b_count == 0 || b_count > i_count {
        return Err(Error::InvalidConfig(format!(
            "cannot split {i_count} devices into {b_count} groups"
        )));
    }
    let groups = match policy {
        PartitionPolicy::Contiguous => {
            let base = i_count / b_count;
            let extra = i_count % b_count;
            let mut next = 1;
            (0..b_count)
                .map(|b| {
                    let size = base + usize::from(b < extra);
                    let g: Vec<usize> = (next..next + size).collect();
                    next += size;
                    g
                })
                .collect()
        }
        PartitionPolicy::RoundRobin => (0..b_count)
            .map(|b| (1..=i_count).filter(|i| (i - 1) % b_count == b).collect())
            .collect(),
    };
    GroupPartition::new(groups, i_count)
}

/// A group-stacked sensing matrix with the origin of each stacked row.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedGroup {
    pub matrix: SparseMatrix,
    /// `provenance[r] = (device_id, local_row)`.
    pub provenance: Vec<(usize, usize)>,
}

/// Concatenates member sensing matrices in ascending device-id order.
pub fn stack_group(views: &[DeviceView], group: &[usize]) -> Result<StackedGroup> {
    if group.is_empty() {
        return Err(Error::InvalidConfig("cannot stack an empty group".into()));
    }
    let mut ids = group.to_vec();
    ids.sort_unstable();
    let members = ids
        .iter()
        .map(|&i| find_view(views, i))
        .collect::<Result<Vec<_>>>()?;
    let cols = members[0].phi.cols();
    let matrix = SparseMatrix::vstack(cols, members.iter().map(|v| &v.phi))?;
    let provenance = members
        .iter()
        .flat_map(|v| (0..v.rows()).map(move |m| (v.device_id, m)))
        .collect();
    Ok(StackedGroup { matrix, provenance })
}

/// For every column `n`, `|C_n \ ∪_{n' ∈ support, n' != n} C_{n'}|`.
pub fn private_row_counts(phi: &SparseMatrix, support: &[usize]) -> Vec<usize> {
    let mut in_support = vec![false; phi.cols()];
    for &j in support {
        in_support[j] = true;
    }
    // Number of support columns hitting each row.
    let cover: Vec<usize> = (0..phi.rows())
        .map(|m| phi.row(m).iter().filter(|&&(c, _)| in_support[c]).count())
        .collect();
    (0..phi.cols())
        .map(|n| {
            let own = usize::from(in_support[n]);
            phi.column_support(n)
                .iter()
                .filter(|&&m| cover[m] == own)
                .count()
        })
        .collect()
}

pub fn support_conditional_t(phi: &SparseMatrix, support: &[usize], n: usize) -> usize {
    let others: Vec<usize> = support.iter().copied().filter(|&j| j != n).collect();
    let covered = |m: usize| phi.row(m).iter().any(|(c, _)| others.contains(c));
    phi.column_support(n).iter().filter(|&&m| !covered(m)).count()
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

fn check_exact_size(phi: &SparseMatrix, k: usize) -> Result<usize> {
    let n = phi.cols();
    let kk = k.min(n.saturating_sub(1));
    let subsets = binomial(n.saturating_sub(1), kk);
    if n > EXACT_MAX_N || subsets > EXACT_MAX_SUBSETS {
        return Err(Error::InfeasibleSize(format!(
            "exact disjunct check with N = {n}, K = {k} needs {subsets} subsets per column \
             (limits: N <= {EXACT_MAX_N}, subsets <= {EXACT_MAX_SUBSETS})"
        )));
    }
    Ok(kk)
}

type Bits = Vec<u64>;

fn column_bits(phi: &SparseMatrix) -> Vec<Bits> {
    let words = phi.rows().div_ceil(64).max(1);
    phi.column_supports()
        .iter()
        .map(|rows| {
            let mut b = vec![0u64; words];
            for &m in rows {
                b[m / 64] |= 1 << (m % 64);
            }
            b
        })
        .collect()
}

/// Smallest private-row count of any column against any `k` other columns.
/// `k` is clamped to `N - 1`.
fn min_private_count(phi: &SparseMatrix, k: usize, stop_below: Option<usize>) -> Result<usize> {
    let kk = check_exact_size(phi, k)?;
    let bits = column_bits(phi);
    let n = phi.cols();
    let words = bits.first().map_or(1, Vec::len);
    let mut best = usize::MAX;
    for col in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != col).collect();
        // Lexicographic walk over kk-subsets of `others`.
        let mut idx: Vec<usize> = (0..kk).collect();
        loop {
            let mut union = vec![0u64; words];
            for &p in &idx {
                for (u, w) in union.iter_mut().zip(&bits[others[p]]) {
                    *u |= w;
                }
            }
            let private: usize = bits[col]
                .iter()
                .zip(&union)
                .map(|(c, u)| (c & !u).count_ones() as usize)
                .sum();
            best = best.min(private);
            if stop_below.is_some_and(|s| best < s) {
                return Ok(best);
            }
            // Advance to the next combination.
            let Some(pos) = (0..kk).rev().find(|&p| idx[p] < others.len() - kk + p) else {
                break;
            };
            idx[pos] += 1;
            for p in pos + 1..kk {
                idx[p] = idx[p - 1] + 1;
            }
        }
    }
    Ok(best)
}

/// Exhaustive `K^t`-disjunct test: every column keeps at least `t + 1` rows
/// outside the union of any `k` other columns.
pub fn verify_disjunct_exact(phi: &SparseMatrix, k: usize, t: usize) -> Result<bool> {
    if phi.cols() == 0 {
        return Ok(true);
    }
    Ok(min_private_count(phi, k, Some(t + 1))? >= t + 1)
}

/// Largest `t` for which the matrix is `K^t`-disjunct, or `None` when some
/// column has no private row at all.
pub fn exact_disjunct_t(phi: &SparseMatrix, k: usize) -> Result<Option<usize>> {
    if phi.cols() == 0 {
        return Ok(None);
    }
    Ok(min_private_count(phi, k, None)?.checked_sub(1))
}

/// Per-group private-row counts for the realized support, `[group][column]`.
pub fn group_private_counts(
    views: &[DeviceView],
    partition: &GroupPartition,
    support: &[usize],
) -> Result<Vec<Vec<usize>>> {
    partition
        .groups()
        .iter()
        .map(|g| Ok(private_row_counts(&stack_group(views, g)?.matrix, support)))
        .collect()
}

/// `min_{b, n} t_conditional(b, n) - 1`; `-1` when some column has no
/// private row in some group.
pub fn effective_t(views: &[DeviceView], partition: &GroupPartition, support: &[usize]) -> Result<i64> {
    let counts = group_private_counts(views, partition, support)?;
    Ok(counts
        .iter()
        .flatten()
        .map(|&c| c as i64 - 1)
        .min()
        .unwrap_or(-1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisjunctReport {
    pub k: usize,
    /// Target `t` for the per-group exact check and for `failing_columns`.
    pub t_target: usize,
    /// Exact `K^t`-disjunct verdict per group; `None` when the group is too
    /// large for enumeration.
    pub is_disjunct: Vec<Option<bool>>,
    /// Exact maximal `t` per group: `None` when not computed, `-1` when the
    /// group is not disjunct for any `t`.
    pub t_exact: Vec<Option<i64>>,
    /// Support-conditional `t` per group (minimum private count minus one).
    pub t_per_group: Vec<i64>,
    pub effective_t: i64,
    /// `[group][column]` private-row counts relative to the true support.
    pub t_conditional: Vec<Vec<usize>>,
    /// `(group, column)` pairs with fewer than `t_target + 1` private rows.
    pub failing_columns: Vec<(usize, usize)>,
}

pub fn disjunct_report(
    scenario: &Scenario,
    partition: &GroupPartition,
    t_target: usize,
) -> Result<DisjunctReport> {
    let support = &scenario.signal.support;
    let k = support.len();
    let mut is_disjunct = Vec::new();
    let mut t_exact = Vec::new();
    let mut t_conditional = Vec::new();
    for g in partition.groups() {
        let stacked = stack_group(&scenario.views, g)?;
        match exact_disjunct_t(&stacked.matrix, k) {
            Ok(t) => {
                let t = t.map_or(-1, |t| t as i64);
                t_exact.push(Some(t));
                is_disjunct.push(Some(t >= t_target as i64));
            }
            Err(Error::InfeasibleSize(_)) => {
                t_exact.push(None);
                is_disjunct.push(None);
            }
            Err(e) => return Err(e),
        }
        t_conditional.push(private_row_counts(&stacked.matrix, support));
    }
    let t_per_group: Vec<i64> = t_conditional
        .iter()
        .map(|c| c.iter().map(|&x| x as i64 - 1).min().unwrap_or(-1))
        .collect();
    let effective_t = t_per_group.iter().copied().min().unwrap_or(-1);
    let failing_columns = t_conditional
        .iter()
        .enumerate()
        .flat_map(|(b, c)| {
            c.iter()
                .enumerate()
                .filter(|(_, &x)| x < t_target + 1)
                .map(move |(n, _)| (b, n))
        })
        .collect();
    Ok(DisjunctReport {
        k,
        t_target,
        is_disjunct,
        t_exact,
        t_per_group,
        effective_t,
        t_conditional,
        failing_columns,
    })
}
