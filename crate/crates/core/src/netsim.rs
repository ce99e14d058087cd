//! Star-topology message simulation of the recovery protocol.
//!
//! The server is node 0 and devices are nodes `1..=I`. Devices never talk to
//! each other. Every cross-node value travels in a [`Message`] whose payload
//! type admits only scores, index lists, ratio lists and amplitude pairs, so
//! no raw measurement or sensing-matrix entry can leave a device. Rounds are
//! synchronous; an optional loss probability drops messages at delivery.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::amplitude::{amplitudes_from_bundles, device_ratios, AmplitudeEstimate, RatioBundle};
use crate::disjunct::GroupPartition;
use crate::error::{Error, Result};
use crate::local::TernarySolution;
use crate::model::{DeviceView, Scenario};
use crate::pipeline::{local_solve, resolve_eta, ProtocolOptions};
use crate::support::{check_theorem1, fuse_group_counts, local_scores, ConditionReport, SupportEstimate};

pub const SERVER: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Scores,
    SupportAssign,
    Ratios,
    Amplitudes,
}

impl MessageKind {
    pub const ALL: [MessageKind; 4] = [
        MessageKind::Scores,
        MessageKind::SupportAssign,
        MessageKind::Ratios,
        MessageKind::Amplitudes,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    /// Zero-count score vector, one entry per column.
    Scores { u: Vec<u32> },
    /// Components this device's group must report on, plus the estimated
    /// support the private rows are defined against.
    SupportAssign { assigned: Vec<usize>, support: Vec<usize> },
    /// `(n, ratios)` per assigned component.
    Ratios { bundles: Vec<(usize, Vec<f64>)> },
    /// `(n, |ŝ_n|)` for the whole estimated support.
    Amplitudes { pairs: Vec<(usize, f64)> },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Scores { .. } => MessageKind::Scores,
            Payload::SupportAssign { .. } => MessageKind::SupportAssign,
            Payload::Ratios { .. } => MessageKind::Ratios,
            Payload::Amplitudes { .. } => MessageKind::Amplitudes,
        }
    }

    /// Scalars on the wire: indices and values each count once.
    pub fn scalar_count(&self) -> usize {
        match self {
            Payload::Scores { u } => u.len(),
            Payload::SupportAssign { assigned, support } => assigned.len() + support.len(),
            Payload::Ratios { bundles } => bundles.iter().map(|(_, r)| 1 + r.len()).sum(),
            Payload::Amplitudes { pairs } => 2 * pairs.len(),
        }
    }

    fn summary(&self) -> serde_json::Value {
        match self {
            Payload::Scores { u } => serde_json::json!({ "type": "scores", "len": u.len() }),
            Payload::SupportAssign { assigned, support } => serde_json::json!({
                "type": "support_assign", "assigned": assigned.len(), "support": support.len()
            }),
            Payload::Ratios { bundles } => serde_json::json!({
                "type": "ratios",
                "bundles": bundles.iter().map(|(n, r)| (n, r.len())).collect::<Vec<_>>()
            }),
            Payload::Amplitudes { pairs } => serde_json::json!({ "type": "amplitudes", "len": pairs.len() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub seq: usize,
    pub kind: MessageKind,
    pub sender: usize,
    pub receiver: usize,
    pub scalar_count: usize,
    pub delivered: bool,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KindTally {
    pub messages: usize,
    pub scalars: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NetworkTrace {
    pub messages: Vec<Message>,
    pub totals: BTreeMap<MessageKind, KindTally>,
}

impl NetworkTrace {
    fn send(&mut self, sender: usize, receiver: usize, payload: Payload, delivered: bool) {
        let kind = payload.kind();
        let scalar_count = payload.scalar_count();
        let t = self.totals.entry(kind).or_default();
        t.messages += 1;
        t.scalars += scalar_count;
        self.messages.push(Message {
            seq: self.messages.len(),
            kind,
            sender,
            receiver,
            scalar_count,
            delivered,
            payload,
        });
    }

    /// One JSON object per line. Payloads are reduced to their shape unless
    /// `full_payload` is set.
    pub fn write_jsonl<W: Write>(&self, mut out: W, full_payload: bool) -> Result<()> {
        for m in &self.messages {
            let payload = if full_payload {
                serde_json::to_value(&m.payload)?
            } else {
                m.payload.summary()
            };
            let line = serde_json::json!({
                "seq": m.seq,
                "kind": m.kind,
                "sender": m.sender,
                "receiver": m.receiver,
                "scalar_count": m.scalar_count,
                "delivered": m.delivered,
                "payload": payload,
            });
            writeln!(out, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CommSummary {
    pub per_kind: BTreeMap<MessageKind, KindTally>,
    pub total_messages: usize,
    pub total_scalars: usize,
}

impl CommSummary {
    pub fn kind(&self, kind: MessageKind) -> KindTally {
        self.per_kind.get(&kind).copied().unwrap_or_default()
    }
}

/// Tallies recomputed from the message log.
pub fn comm_cost(trace: &NetworkTrace) -> CommSummary {
    let mut s = CommSummary::default();
    for kind in MessageKind::ALL {
        s.per_kind.insert(kind, KindTally::default());
    }
    for m in &trace.messages {
        let t = s.per_kind.entry(m.kind).or_default();
        t.messages += 1;
        t.scalars += m.scalar_count;
        s.total_messages += 1;
        s.total_scalars += m.scalar_count;
    }
    s
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub messages_checked: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Structural privacy audit of a trace.
///
/// Checks, per message: payload type matches the declared kind; direction is
/// device to server for scores and ratios and server to device otherwise;
/// scalar counts match the payload; score vectors have one entry per column;
/// ratio bundles only cover components assigned to that device and carry
/// nonnegative values; totals agree with the log.
pub fn audit_privacy(trace: &NetworkTrace, n: usize, device_count: usize) -> AuditReport {
    let mut report = AuditReport::default();
    let mut assigned: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let is_device = |id: usize| (1..=device_count).contains(&id);
    for m in &trace.messages {
        report.messages_checked += 1;
        let mut bad = |why: String| report.violations.push(format!("message {}: {why}", m.seq));
        if m.payload.kind() != m.kind {
            bad(format!("declared {:?} but carries {:?}", m.kind, m.payload.kind()));
        }
        if m.payload.scalar_count() != m.scalar_count {
            bad("scalar count does not match payload".into());
        }
        let upstream = matches!(m.kind, MessageKind::Scores | MessageKind::Ratios);
        let direction_ok = if upstream {
            is_device(m.sender) && m.receiver == SERVER
        } else {
            m.sender == SERVER && is_device(m.receiver)
        };
        if !direction_ok {
            bad(format!("{:?} from {} to {}", m.kind, m.sender, m.receiver));
        }
        match &m.payload {
            Payload::Scores { u } => {
                if u.len() != n {
                    bad(format!("score vector of length {} (expected {n})", u.len()));
                }
            }
            Payload::SupportAssign { assigned: a, support } => {
                if a.iter().any(|i| !support.contains(i)) {
                    bad("assigned index outside the announced support".into());
                }
                if m.delivered {
                    assigned.insert(m.receiver, a.clone());
                }
            }
            Payload::Ratios { bundles } => {
                let allowed = assigned.get(&m.sender).cloned().unwrap_or_default();
                for (idx, ratios) in bundles {
                    if !allowed.contains(idx) {
                        bad(format!("ratios for unassigned component {idx}"));
                    }
                    if ratios.iter().any(|r| !(*r >= 0.0)) {
                        bad(format!("negative or non-finite ratio for component {idx}"));
                    }
                }
            }
            Payload::Amplitudes { pairs } => {
                if pairs.iter().any(|&(i, a)| i >= n || !(a >= 0.0)) {
                    bad("malformed amplitude pair".into());
                }
            }
        }
    }
    let recount = comm_cost(trace);
    for kind in MessageKind::ALL {
        let logged = trace.totals.get(&kind).copied().unwrap_or_default();
        if logged != recount.kind(kind) {
            report
                .violations
                .push(format!("running totals for {kind:?} disagree with the log"));
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutput {
    pub eta: f64,
    pub support: SupportEstimate,
    pub amplitudes: AmplitudeEstimate,
    /// `ŝ^(i)` in device-id order.
    pub estimates: Vec<Vec<f64>>,
    pub solutions: Vec<Option<TernarySolution>>,
    pub trace: NetworkTrace,
    /// Ground-truth condition check; not consulted by any node.
    pub conditions: ConditionReport,
}

struct Link {
    drop_prob: f64,
    rng: ChaCha8Rng,
}

impl Link {
    fn delivers(&mut self) -> bool {
        self.drop_prob <= 0.0 || !self.rng.random_bool(self.drop_prob.min(1.0))
    }
}

/// Runs the full protocol over simulated links.
///
/// Round order: scores up, support assignments down to eligible groups,
/// ratios up from assigned devices, amplitudes broadcast down, local solves.
/// With no loss the result equals [`crate::pipeline::recover_direct`].
pub fn run_protocol(
    scenario: &Scenario,
    partition: &GroupPartition,
    opts: &ProtocolOptions,
) -> Result<ProtocolOutput> {
    let views = &scenario.views;
    let n = scenario.signal.n;
    if partition.device_count() != views.len() {
        return Err(Error::PartitionMismatch(format!(
            "partition covers {} devices, scenario has {}",
            partition.device_count(),
            views.len()
        )));
    }
    let eta = resolve_eta(scenario, partition, opts)?;
    if !(eta > 0.0) {
        return Err(Error::InvalidConfig(format!("eta = {eta} must be positive")));
    }
    let conditions = check_theorem1(scenario, partition, eta)?;
    let mut link = Link {
        drop_prob: opts.drop_prob,
        rng: ChaCha8Rng::seed_from_u64(opts.drop_seed),
    };
    let mut trace = NetworkTrace::default();
    let view_of = |id: usize| -> Result<&DeviceView> { crate::disjunct::find_view(views, id) };

    // Round 1: scores.
    let mut received_scores: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for v in views {
        let s = local_scores(v, opts.score_eps);
        let ok = link.delivers();
        if ok {
            received_scores.insert(v.device_id, s.u.clone());
        }
        trace.send(v.device_id, SERVER, Payload::Scores { u: s.u }, ok);
    }

    // Server: group sums over the devices it heard from.
    let counts: Vec<Option<Vec<u64>>> = partition
        .groups()
        .iter()
        .map(|g| {
            let heard: Vec<&Vec<u32>> = g.iter().filter_map(|i| received_scores.get(i)).collect();
            if heard.is_empty() {
                return None;
            }
            let mut sum = vec![0u64; n];
            for u in heard {
                for (acc, &x) in sum.iter_mut().zip(u) {
                    *acc += u64::from(x);
                }
            }
            Some(sum)
        })
        .collect();
    let support = fuse_group_counts(&counts, n, eta);

    // Round 2: support assignments, only to devices in eligible groups.
    let mut assignments: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in views {
        let Some(b) = partition.group_of(v.device_id) else {
            return Err(Error::UnknownDevice(v.device_id));
        };
        let assigned = support.assigned_to(b);
        if assigned.is_empty() {
            continue;
        }
        let ok = link.delivers();
        if ok {
            assignments.insert(v.device_id, assigned.clone());
        }
        trace.send(
            SERVER,
            v.device_id,
            Payload::SupportAssign {
                assigned,
                support: support.support.clone(),
            },
            ok,
        );
    }

    // Round 3: ratios from assigned devices.
    let mut bundles: BTreeMap<usize, Vec<RatioBundle>> = BTreeMap::new();
    for (&id, assigned) in &assignments {
        let v = view_of(id)?;
        let mut wire = Vec::with_capacity(assigned.len());
        let mut local = Vec::with_capacity(assigned.len());
        for &idx in assigned {
            let b = device_ratios(v, &support.support, idx)?;
            wire.push((idx, b.ratios.clone()));
            local.push(b);
        }
        let ok = link.delivers();
        if ok {
            for b in local {
                bundles.entry(b.n).or_default().push(RatioBundle {
                    device_id: id,
                    n: b.n,
                    ratios: b.ratios,
                    skipped_negative: 0,
                });
            }
        }
        trace.send(id, SERVER, Payload::Ratios { bundles: wire }, ok);
    }

    // Server: majority vote per component.
    let amplitudes = amplitudes_from_bundles(&support.support, &bundles, opts.rel_tol);

    // Round 4: amplitude broadcast and local solves.
    let pairs: Vec<(usize, f64)> = amplitudes.amplitudes.iter().map(|(&k, &v)| (k, v)).collect();
    let mut estimates = Vec::with_capacity(views.len());
    let mut solutions = Vec::with_capacity(views.len());
    for v in views {
        let ok = link.delivers();
        trace.send(SERVER, v.device_id, Payload::Amplitudes { pairs: pairs.clone() }, ok);
        if ok {
            let received: BTreeMap<usize, f64> = pairs.iter().copied().collect();
            let (sol, est) = local_solve(v, &received, opts)?;
            estimates.push(est);
            solutions.push(Some(sol));
        } else {
            estimates.push(vec![0.0; n]);
            solutions.push(None);
        }
    }

    Ok(ProtocolOutput {
        eta,
        support,
        amplitudes,
        estimates,
        solutions,
        trace,
        conditions,
    })
}
