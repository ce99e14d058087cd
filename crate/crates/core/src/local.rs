//! Device-side recovery of the local signal from the global amplitudes.
//!
//! With `|s|` known, a device only has to find `h = D p` on the support, a
//! ternary vector: `-1`/`+1` for an observed component's sign, `0` for a
//! blocked one. Its measurements are `|Φ̃ h|² + w` where `Φ̃` scales the
//! support columns of `Φ` by the amplitudes.
//!
//! Both objectives are evaluated over the rows structurally touched by a
//! support column; other rows do not depend on `x` and only add a constant.

use std::collections::BTreeMap;

use petgraph::unionfind::UnionFind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Default bound on `K` for `3^K` enumeration.
pub const K_MAX_EXHAUSTIVE: usize = 14;

/// `Φ̃ = Φ_K diag(|ŝ_{n_1}|, …, |ŝ_{n_K}|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMatrix {
    pub support_order: Vec<usize>,
    rows: usize,
    /// Row-major `rows x K`.
    data: Vec<f64>,
    /// Rows touched by a support column, with their structural entries.
    active: Vec<(usize, Vec<(usize, f64)>)>,
}

impl WeightedMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.support_order.len()
    }

    pub fn get(&self, m: usize, j: usize) -> f64 {
        self.data[m * self.k() + j]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.k()..(m + 1) * self.k()]
    }

    /// Rows touched by a support column, ascending.
    pub fn active_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().map(|(m, _)| *m)
    }

    fn residuals<'a>(&'a self, y: &'a [f64], x: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        self.active.iter().map(move |(m, entries)| {
            let a: f64 = entries.iter().map(|&(j, v)| v * x[j]).sum();
            y[*m] - a * a
        })
    }
}

pub fn build_weighted_matrix(
    phi: &SparseMatrix,
    support_order: &[usize],
    amplitudes: &BTreeMap<usize, f64>,
) -> Result<WeightedMatrix> {
    let k = support_order.len();
    let scale = support_order
        .iter()
        .map(|n| amplitudes.get(n).copied().ok_or(Error::MissingAmplitude(*n)))
        .collect::<Result<Vec<f64>>>()?;
    let mut position = vec![None; phi.cols()];
    for (j, &n) in support_order.iter().enumerate() {
        if n >= phi.cols() {
            return Err(Error::DimensionMismatch {
                what: "support index",
                expected: phi.cols(),
                got: n,
            });
        }
        position[n] = Some(j);
    }
    let mut data = vec![0.0; phi.rows() * k];
    let mut active = Vec::new();
    for m in 0..phi.rows() {
        let mut entries: Vec<(usize, f64)> = phi
            .row(m)
            .iter()
            .filter_map(|&(c, v)| position[c].map(|j| (j, v * scale[j])))
            .collect();
        if entries.is_empty() {
            continue;
        }
        entries.sort_by_key(|e| e.0);
        for &(j, v) in &entries {
            data[m * k + j] = v;
        }
        active.push((m, entries));
    }
    Ok(WeightedMatrix {
        support_order: support_order.to_vec(),
        rows: phi.rows(),
        data,
        active,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TernarySolution {
    pub x: Vec<i8>,
    pub objective_l0: usize,
    pub objective_l1: f64,
    /// Whether the solution came from full enumeration.
    pub exact: bool,
}

impl TernarySolution {
    /// `x` with the sign twin collapsed: the first nonzero entry is `+1`.
    pub fn canonical(&self) -> Vec<i8> {
        canonical(&self.x)
    }
}

pub fn canonical(x: &[i8]) -> Vec<i8> {
    match x.iter().find(|&&v| v != 0) {
        Some(&-1) => x.iter().map(|v| -v).collect(),
        _ => x.to_vec(),
    }
}

fn as_f64(x: &[i8]) -> Vec<f64> {
    x.iter().map(|&v| f64::from(v)).collect()
}

/// Default ℓ0 residual tolerance `1e-9 * (1 + max|y|)`.
pub fn default_eps_zero(y: &[f64]) -> f64 {
    1e-9 * (1.0 + y.iter().fold(0.0f64, |a, v| a.max(v.abs())))
}

/// `|{m active : |y_m - (Φ̃x)_m²| > eps}|`.
pub fn objective_l0(y: &[f64], wm: &WeightedMatrix, x: &[i8], eps: f64) -> usize {
    let xf = as_f64(x);
    wm.residuals(y, &xf).filter(|r| r.abs() > eps).count()
}

/// `Σ_{m active} |y_m - (Φ̃x)_m²|`.
pub fn objective_l1(y: &[f64], wm: &WeightedMatrix, x: &[i8]) -> f64 {
    let xf = as_f64(x);
    objective_l1_real(y, wm, &xf)
}

fn objective_l1_real(y: &[f64], wm: &WeightedMatrix, x: &[f64]) -> f64 {
    wm.residuals(y, x).map(f64::abs).sum()
}

fn nnz(x: &[i8]) -> usize {
    x.iter().filter(|&&v| v != 0).count()
}

fn check_dims(y: &[f64], wm: &WeightedMatrix) -> Result<()> {
    if y.len() != wm.rows() {
        return Err(Error::DimensionMismatch {
            what: "measurement length",
            expected: wm.rows(),
            got: y.len(),
        });
    }
    Ok(())
}

/// Walks `{-1, 0, 1}^K` in lexicographic order and keeps the first candidate
/// with the smallest `(objective, nonzeros)`, which is the lexicographically
/// smallest among tied minimizers.
fn enumerate_ternary<T, F>(k: usize, mut score: F) -> Vec<i8>
where
    T: PartialOrd,
    F: FnMut(&[i8]) -> T,
{
    let mut x = vec![-1i8; k];
    let mut best = x.clone();
    let mut best_key = (score(&x), nnz(&x));
    loop {
        let Some(pos) = (0..k).rev().find(|&p| x[p] < 1) else {
            break;
        };
        x[pos] += 1;
        for v in &mut x[pos + 1..] {
            *v = -1;
        }
        let key = (score(&x), nnz(&x));
        if key.0 < best_key.0 || (key.0 == best_key.0 && key.1 < best_key.1) {
            best_key = key;
            best.clone_from(&x);
        }
    }
    best
}

fn check_exhaustive_size(k: usize, k_max: usize) -> Result<()> {
    if k > k_max {
        return Err(Error::InfeasibleSize(format!(
            "3^{k} candidates exceed the exhaustive bound K <= {k_max}; use the ℓ1 projection solver"
        )));
    }
    Ok(())
}

fn finish(y: &[f64], wm: &WeightedMatrix, x: Vec<i8>, eps: f64, exact: bool) -> TernarySolution {
    TernarySolution {
        objective_l0: objective_l0(y, wm, &x, eps),
        objective_l1: objective_l1(y, wm, &x),
        x,
        exact,
    }
}

/// Exhaustive ℓ0 solver. `eps_zero = None` uses [`default_eps_zero`].
pub fn solve_l0_exhaustive(
    y: &[f64],
    wm: &WeightedMatrix,
    eps_zero: Option<f64>,
    k_max: usize,
) -> Result<TernarySolution> {
    check_dims(y, wm)?;
    check_exhaustive_size(wm.k(), k_max)?;
    let eps = eps_zero.unwrap_or_else(|| default_eps_zero(y));
    let x = enumerate_ternary(wm.k(), |x| objective_l0(y, wm, x, eps));
    Ok(finish(y, wm, x, eps, true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Options {
    pub restarts: usize,
    pub max_iters: usize,
    pub k_max_exhaustive: usize,
    /// Skip enumeration even when `K` is small.
    pub force_heuristic: bool,
    /// Initial step of the normalized subgradient iteration.
    pub step: f64,
    pub seed: u64,
    /// Tolerance used to report the ℓ0 objective of the result.
    pub eps_zero: Option<f64>,
}

impl Default for L1Options {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iters: 400,
            k_max_exhaustive: K_MAX_EXHAUSTIVE,
            force_heuristic: false,
            step: 0.5,
            seed: 0,
            eps_zero: None,
        }
    }
}

fn round_ternary(x: &[f64]) -> Vec<i8> {
    x.iter()
        .map(|&v| {
            if v > 0.5 {
                1
            } else if v < -0.5 {
                -1
            } else {
                0
            }
        })
        .collect()
}

/// Subgradient of `Σ |y_m - a_m²|` with `a = Φ̃x`.
fn l1_subgradient(y: &[f64], wm: &WeightedMatrix, x: &[f64], grad: &mut [f64]) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    for (m, entries) in &wm.active {
        let a: f64 = entries.iter().map(|&(j, v)| v * x[j]).sum();
        let r = y[*m] - a * a;
        let s = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        for &(j, v) in entries {
            grad[j] -= 2.0 * s * a * v;
        }
    }
}

/// Two-stage projection: relaxed ℓ1 descent from random starts, then
/// rounding to `{-1, 0, 1}`. Returns the best rounded point over restarts.
fn l1_heuristic(y: &[f64], wm: &WeightedMatrix, opts: &L1Options) -> Vec<i8> {
    let k = wm.k();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, usize, Vec<i8>)> = None;
    let mut grad = vec![0.0; k];
    for _ in 0..opts.restarts.max(1) {
        let mut x: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let mut best_x = x.clone();
        let mut best_f = objective_l1_real(y, wm, &x);
        for it in 0..opts.max_iters {
            l1_subgradient(y, wm, &x, &mut grad);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            let step = opts.step / ((it + 1) as f64).sqrt();
            for (xi, g) in x.iter_mut().zip(&grad) {
                *xi -= step * g / norm;
            }
            let f = objective_l1_real(y, wm, &x);
            if f < best_f {
                best_f = f;
                best_x.clone_from(&x);
            }
        }
        let cand = round_ternary(&best_x);
        let f = objective_l1(y, wm, &cand);
        let key = (f, nnz(&cand));
        let better = match &best {
            None => true,
            Some((bf, bn, bx)) => {
                key.0 < *bf || (key.0 == *bf && (key.1 < *bn || (key.1 == *bn && cand < *bx)))
            }
        };
        if better {
            best = Some((key.0, key.1, cand));
        }
    }
    best.map(|b| b.2).unwrap_or_else(|| vec![0; k])
}

/// ℓ1 solver: exact enumeration when `K <= k_max_exhaustive` (unless forced
/// off), otherwise the two-stage projection heuristic.
pub fn solve_l1_projected(y: &[f64], wm: &WeightedMatrix, opts: &L1Options) -> Result<TernarySolution> {
    check_dims(y, wm)?;
    let eps = opts.eps_zero.unwrap_or_else(|| default_eps_zero(y));
    if !opts.force_heuristic && wm.k() <= opts.k_max_exhaustive {
        let x = enumerate_ternary(wm.k(), |x| objective_l1(y, wm, x));
        return Ok(finish(y, wm, x, eps, true));
    }
    let x = l1_heuristic(y, wm, opts);
    Ok(finish(y, wm, x, eps, false))
}

/// Whether the bipartite graph between the columns in `support` and the
/// rows they touch is connected. Every column needs at least one row; an
/// empty support is trivially connected.
pub fn is_connected(phi: &SparseMatrix, support: &[usize]) -> bool {
    if support.is_empty() {
        return true;
    }
    if support.iter().any(|&n| phi.column_support(n).is_empty()) {
        return false;
    }
    let k = support.len();
    let mut uf = UnionFind::<usize>::new(k);
    let mut first_in_row: BTreeMap<usize, usize> = BTreeMap::new();
    for (j, &n) in support.iter().enumerate() {
        for &m in phi.column_support(n) {
            match first_in_row.get(&m) {
                Some(&other) => {
                    uf.union(other, j);
                }
                None => {
                    first_in_row.insert(m, j);
                }
            }
        }
    }
    (1..k).all(|j| uf.equiv(0, j))
}

/// Connectivity of the whole bipartite graph (all `N` columns and all `M`
/// rows).
pub fn is_connected_full(phi: &SparseMatrix) -> bool {
    let (m, n) = (phi.rows(), phi.cols());
    if m + n == 0 {
        return true;
    }
    let mut uf = UnionFind::<usize>::new(m + n);
    for r in 0..m {
        for &(c, _) in phi.row(r) {
            uf.union(r, m + c);
        }
    }
    (1..m + n).all(|v| uf.equiv(0, v))
}

/// `ŝ_{n_j} = |ŝ_{n_j}| x_j` on the support, zero elsewhere.
pub fn assemble_local_signal(
    amplitudes: &BTreeMap<usize, f64>,
    x: &[i8],
    support_order: &[usize],
    n: usize,
) -> Result<Vec<f64>> {
    if x.len() != support_order.len() {
        return Err(Error::DimensionMismatch {
            what: "ternary solution length",
            expected: support_order.len(),
            got: x.len(),
        });
    }
    let mut s = vec![0.0; n];
    for (&idx, &xj) in support_order.iter().zip(x) {
        let amp = amplitudes.get(&idx).copied().ok_or(Error::MissingAmplitude(idx))?;
        *s.get_mut(idx).ok_or(Error::DimensionMismatch {
            what: "support index",
            expected: n,
            got: idx,
        })? = amp * f64::from(xj);
    }
    Ok(s)
}
