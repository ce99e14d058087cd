//! Direct composition of the recovery stages, without message passing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::amplitude::{recover_amplitudes, AmplitudeEstimate};
use crate::disjunct::{effective_t, GroupPartition};
use crate::error::Result;
use crate::local::{
    assemble_local_signal, build_weighted_matrix, solve_l0_exhaustive, solve_l1_projected,
    L1Options, TernarySolution,
};
use crate::model::{DeviceView, LocalSolver, Scenario, ScenarioConfig, SolverOptions};
use crate::support::{default_eta, fuse_support, local_scores, SupportEstimate};

/// SplitMix64 finalizer over two words; used to derive independent seeds.
pub fn derive_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOptions {
    /// Fusion threshold; `None` takes the midpoint rule at the scenario's
    /// effective `t`.
    pub eta: Option<f64>,
    pub score_eps: f64,
    pub rel_tol: f64,
    pub local_solver: LocalSolver,
    pub l1: L1Options,
    /// Per-message loss probability in the network simulator.
    pub drop_prob: f64,
    pub drop_seed: u64,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self::from_solver(&SolverOptions::default(), None, 0)
    }
}

impl ProtocolOptions {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self::from_solver(&cfg.solver, cfg.eta, cfg.seed)
    }

    pub fn from_solver(s: &SolverOptions, eta: Option<f64>, seed: u64) -> Self {
        Self {
            eta,
            score_eps: s.score_eps,
            rel_tol: s.rel_tol,
            local_solver: s.local_solver,
            l1: L1Options {
                restarts: s.restarts,
                max_iters: s.max_iters,
                k_max_exhaustive: s.k_max_exhaustive,
                force_heuristic: s.local_solver == LocalSolver::L1Heuristic,
                seed: derive_seed(seed, 0x4c31),
                eps_zero: s.eps_zero,
                ..Default::default()
            },
            drop_prob: 0.0,
            drop_seed: derive_seed(seed, 0xd20f),
        }
    }
}

/// The threshold the server uses: the override, or `(t + 1) / 2` for the
/// scenario's effective `t` under `partition`.
pub fn resolve_eta(scenario: &Scenario, partition: &GroupPartition, opts: &ProtocolOptions) -> Result<f64> {
    match opts.eta {
        Some(eta) => Ok(eta),
        None => Ok(default_eta(effective_t(
            &scenario.views,
            partition,
            &scenario.signal.support,
        )?)),
    }
}

/// Device-side local solve on the received support and amplitudes.
pub fn local_solve(
    view: &DeviceView,
    amplitudes: &BTreeMap<usize, f64>,
    opts: &ProtocolOptions,
) -> Result<(TernarySolution, Vec<f64>)> {
    let order: Vec<usize> = amplitudes.keys().copied().collect();
    let wm = build_weighted_matrix(&view.phi, &order, amplitudes)?;
    let y = &view.measurements;
    let l1 = L1Options {
        seed: derive_seed(opts.l1.seed, view.device_id as u64),
        ..opts.l1.clone()
    };
    let sol = match opts.local_solver {
        LocalSolver::Auto if wm.k() <= l1.k_max_exhaustive => {
            solve_l0_exhaustive(y, &wm, l1.eps_zero, l1.k_max_exhaustive)?
        }
        LocalSolver::Auto | LocalSolver::L1Heuristic => solve_l1_projected(
            y,
            &wm,
            &L1Options {
                force_heuristic: true,
                ..l1
            },
        )?,
        LocalSolver::L0Exhaustive => solve_l0_exhaustive(y, &wm, l1.eps_zero, l1.k_max_exhaustive)?,
        LocalSolver::L1Projected => solve_l1_projected(y, &wm, &l1)?,
    };
    let est = assemble_local_signal(amplitudes, &sol.x, &order, view.phi.cols())?;
    Ok((sol, est))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub eta: f64,
    pub support: SupportEstimate,
    pub amplitudes: AmplitudeEstimate,
    /// `ŝ^(i)` in device-id order; all zeros when the device did not solve.
    pub estimates: Vec<Vec<f64>>,
    pub solutions: Vec<Option<TernarySolution>>,
}

pub fn recover_direct(
    scenario: &Scenario,
    partition: &GroupPartition,
    opts: &ProtocolOptions,
) -> Result<Recovery> {
    let eta = resolve_eta(scenario, partition, opts)?;
    let scores: Vec<_> = scenario
        .views
        .iter()
        .map(|v| local_scores(v, opts.score_eps))
        .collect();
    let support = fuse_support(&scores, partition, eta)?;
    let amplitudes = recover_amplitudes(&scenario.views, partition, &support, opts.rel_tol)?;
    let mut estimates = Vec::with_capacity(scenario.views.len());
    let mut solutions = Vec::with_capacity(scenario.views.len());
    for v in &scenario.views {
        let (sol, est) = local_solve(v, &amplitudes.amplitudes, opts)?;
        estimates.push(est);
        solutions.push(Some(sol));
    }
    Ok(Recovery {
        eta,
        support,
        amplitudes,
        estimates,
        solutions,
    })
}
