//! Scenario synthesis and the phaseless measurement model.
//!
//! A scenario is a global `K`-sparse signal observed by `I` devices. Device
//! `i` sees the masked signal `d ⊙ s` through a sparse Bernoulli sensing
//! matrix and records `y = (Φ (d ⊙ s))² + w`, where `w` is a sparse outlier
//! vector. Everything is drawn from one ChaCha stream seeded by
//! [`ScenarioConfig::seed`], so a config maps to a bit-identical scenario.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub type ScenarioRng = ChaCha8Rng;

/// Local ternary solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LocalSolver {
    /// ℓ0 enumeration when the support fits the exhaustive bound, otherwise
    /// the ℓ1 two-stage projection heuristic.
    #[default]
    Auto,
    L0Exhaustive,
    /// ℓ1 objective: enumeration when small, heuristic otherwise.
    L1Projected,
    /// ℓ1 two-stage projection heuristic regardless of support size.
    L1Heuristic,
}

/// Recovery knobs that travel with a scenario config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub local_solver: LocalSolver,
    pub restarts: usize,
    pub max_iters: usize,
    pub k_max_exhaustive: usize,
    /// Absolute tolerance for the ℓ0 residual count. `None` selects
    /// `1e-9 * (1 + max|y|)`.
    pub eps_zero: Option<f64>,
    /// Zero test used by the local support scores (`|y| <= score_eps`).
    pub score_eps: f64,
    /// Relative tolerance for clustering ratios in the amplitude vote.
    pub rel_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            local_solver: LocalSolver::Auto,
            restarts: 20,
            max_iters: 400,
            k_max_exhaustive: 14,
            eps_zero: None,
            score_eps: 0.0,
            rel_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Ambient dimension `N`.
    pub n: usize,
    /// Sparsity `K`.
    pub k: usize,
    /// Number of devices `I`.
    pub i_count: usize,
    /// Number of device groups `B`.
    pub b_count: usize,
    /// Measurements per device `M_i` (ignored when `m_total` is set).
    pub m_per_device: usize,
    /// Probability that a sensing-matrix entry is nonzero.
    pub q: f64,
    /// Probability that a device has a partial view.
    pub theta: f64,
    /// Per-measurement outlier probability.
    pub p_outlier: f64,
    /// Outlier standard deviation.
    pub sigma_w: f64,
    pub seed: u64,
    /// Network-wide measurement budget, split evenly across devices with the
    /// remainder going to the lowest device ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_total: Option<usize>,
    /// Fusion threshold override; `None` uses the midpoint rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.k >= self.n {
            return bad(format!("k = {} must be smaller than n = {}", self.k, self.n));
        }
        if self.k < 2 {
            return bad(format!("k = {} must be at least 2", self.k));
        }
        if self.i_count == 0 {
            return bad("i_count must be positive".into());
        }
        if self.b_count == 0 || self.b_count > self.i_count {
            return bad(format!(
                "b_count = {} must lie in 1..={}",
                self.b_count, self.i_count
            ));
        }
        match self.m_total {
            Some(t) if t < self.i_count => {
                return bad(format!("m_total = {t} leaves some device without rows"))
            }
            None if self.m_per_device == 0 => return bad("m_per_device must be positive".into()),
            _ => {}
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q = {} must lie in (0, 1)", self.q));
        }
        for (name, p) in [("theta", self.theta), ("p_outlier", self.p_outlier)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} must lie in [0, 1]"));
            }
        }
        if !(self.sigma_w >= 0.0 && self.sigma_w.is_finite()) {
            return bad(format!("sigma_w = {} must be finite and >= 0", self.sigma_w));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0) {
                return bad(format!("eta = {eta} must be positive"));
            }
        }
        if !(self.solver.rel_tol > 0.0) {
            return bad("solver.rel_tol must be positive".into());
        }
        Ok(())
    }

    /// Row count per device, in device-id order.
    pub fn device_rows(&self) -> Vec<usize> {
        match self.m_total {
            Some(total) => {
                let base = total / self.i_count;
                let extra = total % self.i_count;
                (0..self.i_count)
                    .map(|i| base + usize::from(i < extra))
                    .collect()
            }
            None => vec![self.m_per_device; self.i_count],
        }
    }

    /// Sets `sigma_w` from a noise-to-signal ratio in dB (signal variance 1).
    pub fn set_nsr_db(&mut self, nsr_db: f64) {
        self.sigma_w = 10f64.powf(nsr_db / 10.0).sqrt();
    }

    pub fn nsr_db(&self) -> f64 {
        10.0 * (self.sigma_w * self.sigma_w).log10()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSignal {
    pub n: usize,
    /// Sorted support indices (0-based).
    pub support: Vec<usize>,
    pub values: Vec<f64>,
}

impl GlobalSignal {
    /// Builds a signal from dense values; the support is the nonzero pattern.
    pub fn from_values(values: Vec<f64>) -> Self {
        let support = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect();
        Self {
            n: values.len(),
            support,
            values,
        }
    }

    pub fn k(&self) -> usize {
        self.support.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceView {
    /// 1-based device id (node 0 is the server).
    pub device_id: usize,
    /// `d^(i)`: 1 where the device observes the component.
    pub mask: Vec<u8>,
    pub phi: SparseMatrix,
    pub outliers: Vec<f64>,
    pub measurements: Vec<f64>,
}

impl DeviceView {
    /// Assembles a view and evaluates its measurements.
    pub fn new(
        device_id: usize,
        signal: &GlobalSignal,
        mask: Vec<u8>,
        phi: SparseMatrix,
        outliers: Vec<f64>,
    ) -> Result<Self> {
        let measurements = measure(signal, &mask, &phi, &outliers)?;
        Ok(Self {
            device_id,
            mask,
            phi,
            outliers,
            measurements,
        })
    }

    pub fn rows(&self) -> usize {
        self.phi.rows()
    }

    /// `s^(i) = D^(i) s`.
    pub fn local_signal(&self, signal: &GlobalSignal) -> Vec<f64> {
        signal
            .values
            .iter()
            .zip(&self.mask)
            .map(|(&s, &d)| if d == 1 { s } else { 0.0 })
            .collect()
    }

    pub fn outlier_count(&self) -> usize {
        self.outliers.iter().filter(|w| **w != 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub signal: GlobalSignal,
    pub views: Vec<DeviceView>,
}

impl Scenario {
    /// Draws a scenario from `config.seed`. Draw order: signal, then for each
    /// device in id order its mask, sensing matrix and outliers.
    pub fn generate(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ScenarioRng::seed_from_u64(config.seed);
        let signal = gen_global_signal(config.n, config.k, &mut rng)?;
        let mut views = Vec::with_capacity(config.i_count);
        for (i, rows) in config.device_rows().into_iter().enumerate() {
            let mask = gen_mask(&signal, config.theta, &mut rng)?;
            let phi = gen_sensing_matrix(rows, config.n, config.q, &mut rng)?;
            let outliers = gen_outliers(rows, config.p_outlier, config.sigma_w, &mut rng)?;
            views.push(DeviceView::new(i + 1, &signal, mask, phi, outliers)?);
        }
        Ok(Self {
            config: config.clone(),
            signal,
            views,
        })
    }

    pub fn view(&self, device_id: usize) -> Option<&DeviceView> {
        device_id
            .checked_sub(1)
            .and_then(|i| self.views.get(i))
            .filter(|v| v.device_id == device_id)
    }
}

/// Uniform random `k`-subset support with i.i.d. standard normal values.
pub fn gen_global_signal<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<GlobalSignal> {
    if k > 0 && k >= n {
        return Err(Error::InvalidConfig(format!(
            "k = {k} must be smaller than n = {n}"
        )));
    }
    let mut support = index::sample(rng, n, k).into_vec();
    support.sort_unstable();
    let mut values = vec![0.0; n];
    for &j in &support {
        values[j] = loop {
            let v: f64 = rng.sample(StandardNormal);
            if v != 0.0 {
                break v;
            }
        };
    }
    Ok(GlobalSignal { n, support, values })
}

/// Partial-view mask. With probability `theta` a uniform number of support
/// entries in `1..=K-1` is blocked; off-support entries stay 1.
pub fn gen_mask<R: Rng + ?Sized>(signal: &GlobalSignal, theta: f64, rng: &mut R) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidConfig(format!("theta = {theta} outside [0, 1]")));
    }
    let mut mask = vec![1u8; signal.n];
    if rng.random_bool(theta) {
        let k = signal.k();
        if k < 2 {
            return Err(Error::InvalidConfig(format!(
                "partial views need k >= 2, got {k}"
            )));
        }
        let blocked = rng.random_range(1..k);
        for pos in index::sample(rng, k, blocked) {
            mask[signal.support[pos]] = 0;
        }
    }
    Ok(mask)
}

/// Bernoulli(`q`) pattern with standard normal nonzeros, drawn row by row.
pub fn gen_sensing_matrix<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    q: f64,
    rng: &mut R,
) -> Result<SparseMatrix> {
    if m == 0 {
        return Err(Error::InvalidConfig("sensing matrix needs m >= 1".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidConfig(format!("q = {q} must lie in (0, 1)")));
    }
    let mut rows = Vec::with_capacity(m);
    for _ in 0..m {
        let mut row = Vec::new();
        for c in 0..n {
            if rng.random_bool(q) {
                let v: f64 = loop {
                    let v: f64 = rng.sample(StandardNormal);
                    if v != 0.0 {
                        break v;
                    }
                };
                row.push((c, v));
            }
        }
        rows.push(row);
    }
    SparseMatrix::from_rows(n, rows)
}

/// Sparse outliers: each entry is `N(0, sigma_w²)` with probability
/// `p_outlier` and exactly `0.0` otherwise.
pub fn gen_outliers<R: Rng + ?Sized>(
    m: usize,
    p_outlier: f64,
    sigma_w: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(sigma_w >= 0.0) {
        return Err(Error::InvalidConfig(format!("sigma_w = {sigma_w} must be >= 0")));
    }
    if !(0.0..=1.0).contains(&p_outlier) {
        return Err(Error::InvalidConfig(format!(
            "p_outlier = {p_outlier} outside [0, 1]"
        )));
    }
    Ok((0..m)
        .map(|_| {
            if rng.random_bool(p_outlier) {
                let z: f64 = rng.sample(StandardNormal);
                if sigma_w == 0.0 {
                    0.0
                } else {
                    sigma_w * z
                }
            } else {
                0.0
            }
        })
        .collect())
}

/// `y_m = (Σ_n φ_{m,n} d_n s_n)² + w_m`.
///
/// Rows that miss the masked support sum only exact zeros, so they return
/// `w_m` bit-for-bit.
pub fn measure(
    signal: &GlobalSignal,
    mask: &[u8],
    phi: &SparseMatrix,
    outliers: &[f64],
) -> Result<Vec<f64>> {
    let n = signal.n;
    for (what, got) in [
        ("signal length", signal.values.len()),
        ("mask length", mask.len()),
        ("sensing matrix columns", phi.cols()),
    ] {
        if got != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                got,
            });
        }
    }
    if outliers.len() != phi.rows() {
        return Err(Error::DimensionMismatch {
            what: "outlier length",
            expected: phi.rows(),
            got: outliers.len(),
        });
    }
    Ok((0..phi.rows())
        .map(|m| {
            let a: f64 = phi
                .row(m)
                .iter()
                .map(|&(c, v)| if mask[c] == 1 { v * signal.values[c] } else { 0.0 })
                .sum();
            a * a + outliers[m]
        })
        .collect())
}
