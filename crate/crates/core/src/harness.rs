//! Monte Carlo driver: single trials, parameter sweeps and CSV output.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disjunct::{effective_t, partition_devices, GroupPartition, PartitionPolicy};
use crate::error::{Error, Result};
use crate::model::{Scenario, ScenarioConfig};
use crate::netsim::{audit_privacy, comm_cost, run_protocol, CommSummary};
use crate::pipeline::{derive_seed, recover_direct, ProtocolOptions};
use crate::support::{default_eta, ConditionReport};

pub const CSV_HEADER: &str = "axis,value,mode,trials,success_rate,mean_rel_err";

/// `min(||est - truth||, ||est + truth||) / ||truth||`.
///
/// A zero `truth` gives 0 for a zero estimate and `+inf` otherwise.
pub fn relative_error_up_to_sign(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "estimate length",
            expected: truth.len(),
            got: est.len(),
        });
    }
    let norm = |it: &mut dyn Iterator<Item = f64>| it.map(|x| x * x).sum::<f64>().sqrt();
    let t = norm(&mut truth.iter().copied());
    let minus = norm(&mut est.iter().zip(truth).map(|(a, b)| a - b));
    let plus = norm(&mut est.iter().zip(truth).map(|(a, b)| a + b));
    if t == 0.0 {
        let e = norm(&mut est.iter().copied());
        return Ok(if e == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(minus.min(plus) / t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Proposed,
    NoCollab,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Proposed => "proposed",
            Mode::NoCollab => "no_collab",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Mode::Proposed),
            "no_collab" => Ok(Mode::NoCollab),
            _ => Err(Error::InvalidConfig(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Theta,
    NsrDb,
    MTotal,
    K,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Theta => "theta",
            Axis::NsrDb => "nsr_db",
            Axis::MTotal => "m_total",
            Axis::K => "k",
        }
    }

    /// Config with this axis set to `value`.
    pub fn apply(self, cfg: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut c = cfg.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!("{} needs a whole number, got {v}", self.as_str())))
            }
        };
        match self {
            Axis::Theta => c.theta = value,
            Axis::NsrDb => c.set_nsr_db(value),
            Axis::MTotal => c.m_total = Some(as_count(value)?),
            Axis::K => c.k = as_count(value)?,
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theta" => Ok(Axis::Theta),
            "nsr_db" | "nsr" => Ok(Axis::NsrDb),
            "m_total" => Ok(Axis::MTotal),
            "k" => Ok(Axis::K),
            _ => Err(Error::InvalidConfig(format!("unknown sweep axis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessOptions {
    /// Per-device success threshold on the relative error.
    pub success_threshold: f64,
    /// Redraw scenarios whose effective `t` is below this value.
    pub min_t_eff: Option<i64>,
    pub max_resamples: usize,
    pub policy: PartitionPolicy,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            success_threshold: 1e-3,
            min_t_eff: None,
            max_resamples: 200,
            policy: PartitionPolicy::Contiguous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub mode: Mode,
    pub rel_errors: Vec<f64>,
    pub success: Vec<bool>,
    /// Estimated support equals the true one (for every device under
    /// `no_collab`).
    pub support_exact: bool,
    /// Largest `| |ŝ_n| - |s_n| | / |s_n|` over the true support, with a
    /// missing component counting as amplitude 0.
    pub amplitude_max_rel_err: f64,
    pub conditions: ConditionReport,
    pub comm: CommSummary,
    /// `None` when no messages were exchanged.
    pub audit_passed: Option<bool>,
    /// Scenarios redrawn before this one was accepted.
    pub resamples: usize,
}

impl TrialResult {
    pub fn successes(&self) -> usize {
        self.success.iter().filter(|&&s| s).count()
    }
}

fn amplitude_error(truth: &Scenario, amps: &BTreeMap<usize, f64>) -> f64 {
    truth
        .signal
        .support
        .iter()
        .map(|&n| {
            let s = truth.signal.values[n].abs();
            (amps.get(&n).copied().unwrap_or(0.0) - s).abs() / s
        })
        .fold(0.0, f64::max)
}

fn errors_for(scenario: &Scenario, estimates: &[Vec<f64>], threshold: f64) -> Result<(Vec<f64>, Vec<bool>)> {
    let errs = scenario
        .views
        .iter()
        .zip(estimates)
        .map(|(v, e)| relative_error_up_to_sign(e, &v.local_signal(&scenario.signal)))
        .collect::<Result<Vec<_>>>()?;
    let ok = errs.iter().map(|&e| e < threshold).collect();
    Ok((errs, ok))
}

/// Evaluates one mode on a fixed scenario.
///
/// `proposed` runs the message-passing protocol over `partition`.
/// `no_collab` runs the same stages on each device alone: its own scores fix
/// its support, its own ratios its amplitudes, with the threshold taken from
/// its own effective `t`.
pub fn evaluate_scenario(
    scenario: &Scenario,
    partition: &GroupPartition,
    mode: Mode,
    opts: &ProtocolOptions,
    threshold: f64,
) -> Result<TrialResult> {
    let seed = scenario.config.seed;
    match mode {
        Mode::Proposed => {
            let out = run_protocol(scenario, partition, opts)?;
            let (rel_errors, success) = errors_for(scenario, &out.estimates, threshold)?;
            let audit = audit_privacy(&out.trace, scenario.signal.n, scenario.views.len());
            Ok(TrialResult {
                seed,
                mode,
                rel_errors,
                success,
                support_exact: out.support.support == scenario.signal.support,
                amplitude_max_rel_err: amplitude_error(scenario, &out.amplitudes.amplitudes),
                conditions: out.conditions,
                comm: comm_cost(&out.trace),
                audit_passed: Some(audit.passed()),
                resamples: 0,
            })
        }
        Mode::NoCollab => {
            let solo = GroupPartition::singletons(1);
            let mut estimates = Vec::with_capacity(scenario.views.len());
            let mut support_exact = true;
            let mut amp_err: f64 = 0.0;
            for v in &scenario.views {
                let mut view = v.clone();
                view.device_id = 1;
                let sub = Scenario {
                    config: scenario.config.clone(),
                    signal: scenario.signal.clone(),
                    views: vec![view],
                };
                let mut o = opts.clone();
                if o.eta.is_none() {
                    o.eta = Some(default_eta(effective_t(&sub.views, &solo, &sub.signal.support)?));
                }
                o.l1.seed = derive_seed(opts.l1.seed, v.device_id as u64);
                let rec = recover_direct(&sub, &solo, &o)?;
                support_exact &= rec.support.support == scenario.signal.support;
                amp_err = amp_err.max(amplitude_error(scenario, &rec.amplitudes.amplitudes));
                estimates.extend(rec.estimates);
            }
            let (rel_errors, success) = errors_for(scenario, &estimates, threshold)?;
            let eta = crate::pipeline::resolve_eta(scenario, partition, opts)?;
            Ok(TrialResult {
                seed,
                mode,
                rel_errors,
                success,
                support_exact,
                amplitude_max_rel_err: amp_err,
                conditions: crate::support::check_theorem1(scenario, partition, eta)?,
                comm: CommSummary::default(),
                audit_passed: None,
                resamples: 0,
            })
        }
    }
}

/// Draws a scenario from `cfg` with `seed`, redrawing (with derived seeds)
/// until the effective `t` reaches `opts.min_t_eff`.
pub fn draw_scenario(
    cfg: &ScenarioConfig,
    seed: u64,
    opts: &HarnessOptions,
) -> Result<(Scenario, GroupPartition, usize)> {
    let partition = partition_devices(cfg.i_count, cfg.b_count, opts.policy)?;
    let mut c = cfg.clone();
    c.seed = seed;
    for attempt in 0..=opts.max_resamples {
        if attempt > 0 {
            c.seed = derive_seed(seed, attempt as u64);
        }
        let sc = Scenario::generate(&c)?;
        match opts.min_t_eff {
            Some(t) if effective_t(&sc.views, &partition, &sc.signal.support)? < t => continue,
            _ => return Ok((sc, partition, attempt)),
        }
    }
    Err(Error::InvalidConfig(format!(
        "no scenario with effective t >= {} in {} draws; raise m or q",
        opts.min_t_eff.unwrap_or(0),
        opts.max_resamples + 1
    )))
}

pub fn run_trial(cfg: &ScenarioConfig, mode: Mode, seed: u64, opts: &HarnessOptions) -> Result<TrialResult> {
    cfg.validate()?;
    let (sc, partition, resamples) = draw_scenario(cfg, seed, opts)?;
    let popts = ProtocolOptions::from_config(&sc.config);
    let mut r = evaluate_scenario(&sc, &partition, mode, &popts, opts.success_threshold)?;
    r.resamples = resamples;
    Ok(r)
}

/// Seed of trial `trial` at sweep point `point`.
pub fn trial_seed(master: u64, point: usize, trial: usize) -> u64 {
    derive_seed(derive_seed(master, point as u64), trial as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mode: Mode,
    pub trials: usize,
    pub device_trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Binomial standard error of `success_rate`.
    pub std_err: f64,
    pub mean_rel_err: f64,
    pub resamples: usize,
    /// Every protocol trace at this point passed the privacy audit.
    pub audit_passed: bool,
    /// Trials whose exact-support conditions held.
    pub conditions_met: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: Axis,
    pub values: Vec<f64>,
    /// Ordered by value, then by mode.
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, value_index: usize, mode: Mode) -> Option<&SweepRow> {
        let v = *self.values.get(value_index)?;
        self.rows.iter().find(|r| r.value.to_bits() == v.to_bits() && r.mode == mode)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER.split(','))?;
        for r in &self.rows {
            w.write_record([
                self.axis.to_string(),
                r.value.to_string(),
                r.mode.to_string(),
                r.trials.to_string(),
                r.success_rate.to_string(),
                r.mean_rel_err.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

pub fn emit_csv(table: &SweepTable, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    table.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Runs every `(value, trial)` pair once, evaluating all `modes` on the same
/// scenario. Trials run in parallel; aggregation order is fixed.
pub fn sweep(
    cfg: &ScenarioConfig,
    axis: Axis,
    values: &[f64],
    trials: usize,
    modes: &[Mode],
    master_seed: u64,
    opts: &HarnessOptions,
) -> Result<SweepTable> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let mut modes = modes.to_vec();
    modes.sort();
    modes.dedup();
    let cfgs = values
        .iter()
        .map(|&v| axis.apply(cfg, v))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|p| (0..trials).map(move |t| (p, t)))
        .collect();
    let results: Vec<Vec<TrialResult>> = jobs
        .par_iter()
        .map(|&(p, t)| {
            let (sc, partition, resamples) = draw_scenario(&cfgs[p], trial_seed(master_seed, p, t), opts)?;
            let popts = ProtocolOptions::from_config(&sc.config);
            modes
                .iter()
                .map(|&m| {
                    let mut r = evaluate_scenario(&sc, &partition, m, &popts, opts.success_threshold)?;
                    r.resamples = resamples;
                    Ok(r)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (p, &value) in values.iter().enumerate() {
        let point = &results[p * trials..(p + 1) * trials];
        for (mi, &mode) in modes.iter().enumerate() {
            let rs: Vec<&TrialResult> = point.iter().map(|r| &r[mi]).collect();
            let device_trials: usize = rs.iter().map(|r| r.success.len()).sum();
            let successes: usize = rs.iter().map(|r| r.successes()).sum();
            let rate = successes as f64 / device_trials.max(1) as f64;
            let err_sum: f64 = rs.iter().flat_map(|r| r.rel_errors.iter()).sum();
            rows.push(SweepRow {
                value,
                mode,
                trials,
                device_trials,
                successes,
                success_rate: rate,
                std_err: (rate * (1.0 - rate) / device_trials.max(1) as f64).sqrt(),
                mean_rel_err: err_sum / device_trials.max(1) as f64,
                resamples: rs.iter().map(|r| r.resamples).sum(),
                audit_passed: rs.iter().all(|r| r.audit_passed != Some(false)),
                conditions_met: rs.iter().filter(|r| r.conditions.thm1_satisfied).count(),
            });
        }
    }
    Ok(SweepTable {
        axis,
        values: values.to_vec(),
        rows,
    })
}

/// Parses `0,0.1,0.2` or `start:step:end` (inclusive, rounded to the step).
pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("cannot parse sweep values {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let nums = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let (start, step, end) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0) || end < start {
            return Err(bad());
        }
        let count = ((end - start) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|i| start + step * i as f64).map(|v| (v * 1e12).round() / 1e12).collect());
    }
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}
