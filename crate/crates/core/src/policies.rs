//! Scheduling policies: the FCFS channel-inversion baseline, the two
//! trivial benchmarks, and one-step improvement over the baseline.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{
    channel_capacity, local_cost, segments_per_frame, Action, CompactState, EdgeEntry, FullState,
    ModelParams,
};
use crate::valuefn::ValueFunction;

/// Which policy to run, as named in configs and CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Baseline,
    AllLocal,
    AllEdge,
    Improved,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [Self::Baseline, Self::AllLocal, Self::AllEdge, Self::Improved];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::AllLocal => "all_local",
            Self::AllEdge => "all_edge",
            Self::Improved => "improved",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// FCFS head transmits with power `p_r/ρ`; the arrival goes to the edge
/// while fewer than `threshold` devices are there.
pub fn baseline_decide(state: &FullState, receive_power_w: f64, threshold: usize) -> Action {
    let offload = state.compact.len() < threshold;
    match state.compact.head() {
        Some(head) => Action {
            selected_device: Some(head.device_id),
            transmit_power_w: receive_power_w / head.pathloss,
            offload,
        },
        None => Action::idle(offload),
    }
}

pub fn all_local_decide(_state: &FullState) -> Action {
    Action::idle(false)
}

/// The baseline uplink rule with no admission limit.
pub fn all_edge_decide(state: &FullState, receive_power_w: f64) -> Action {
    baseline_decide(state, receive_power_w, usize::MAX)
}

/// Outcome of the one-step search, with the two branch minima.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImprovedDecision {
    pub action: Action,
    /// `min_k G_E^k`; `None` without an arrival.
    pub g_edge: Option<f64>,
    /// `min_k G_L^k`, or the single objective when nothing arrives.
    pub g_local: f64,
}

impl ImprovedDecision {
    /// Objective value of the chosen action.
    pub fn objective(&self) -> f64 {
        match self.g_edge {
            Some(ge) if self.action.offload => ge,
            _ => self.g_local,
        }
    }
}

/// A transmission option: device slot, segments removed, transmit power.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    slot: Option<usize>,
    segments: u32,
    power: f64,
}

/// For each edge device, the cheapest grid power reaching each distinct
/// segment count. Grid levels are receive-side powers, divided by `ρ_k`.
/// Levels sending nothing are dropped: idling reaches the same successor
/// for free. Counts at or above the queue all empty it and collapse to one.
fn candidates(state: &FullState, grid: &[f64], params: &ModelParams) -> Vec<Candidate> {
    let mut out = vec![Candidate {
        slot: None,
        segments: 0,
        power: 0.0,
    }];
    for (slot, (entry, &h)) in state.compact.entries().iter().zip(state.fading()).enumerate() {
        let mut last = 0;
        for &level in grid {
            let power = level / entry.pathloss;
            let sent = segments_per_frame(channel_capacity(power, entry.pathloss, h, params), params)
                .min(entry.queue_segments);
            if sent > last {
                out.push(Candidate {
                    slot: Some(slot),
                    segments: sent,
                    power,
                });
                last = sent;
                if sent == entry.queue_segments {
                    break;
                }
            }
        }
    }
    out
}

fn successor(compact: &CompactState, cand: &Candidate, admitted: Option<EdgeEntry>) -> CompactState {
    let mut next = compact.clone();
    if let Some(slot) = cand.slot {
        next.drain_at(slot, cand.segments);
    }
    if let Some(entry) = admitted {
        next.push(entry).expect("arrival id exceeds every edge id");
    }
    next
}

/// One-step improvement over the baseline value function.
///
/// Every candidate `(k, p)` has a single successor compact state because the
/// current fading is observed. For each branch `e` the minimum of
/// `p + γ·W(successor)` (plus `C` when the arrival stays local) is taken
/// over candidates in FCFS order, lowest power first; the edge branch wins
/// only when strictly cheaper.
pub fn improved_decide(state: &FullState, value: &ValueFunction, grid: &[f64]) -> ImprovedDecision {
    let params = &value.params().model;
    let gamma = params.discount;
    let cands = candidates(state, grid, params);
    let compact = &state.compact;

    // Every candidate edits one queue of the branch's base state, so a
    // single scan prices them all.
    let best = |admitted: Option<EdgeEntry>, extra: f64| {
        let base = match admitted {
            Some(entry) => successor(compact, &cands[0], Some(entry)),
            None => compact.clone(),
        };
        let scan = value.scan(&base);
        let mut best: Option<(f64, Candidate)> = None;
        for cand in &cands {
            let w = match cand.slot {
                None => scan.base(),
                Some(j) => scan.edit(j, base.entries()[j].queue_segments - cand.segments),
            };
            let objective = extra + cand.power + gamma * w;
            if best.is_none_or(|(b, _)| objective < b) {
                best = Some((objective, *cand));
            }
        }
        best.expect("idle is always a candidate")
    };

    let to_action = |cand: Candidate, offload: bool| Action {
        selected_device: cand.slot.map(|i| compact.entries()[i].device_id),
        transmit_power_w: cand.power,
        offload,
    };

    match &state.arrival {
        None => {
            let (g, cand) = best(None, 0.0);
            ImprovedDecision {
                action: to_action(cand, false),
                g_edge: None,
                g_local: g,
            }
        }
        Some(task) => {
            let entry = EdgeEntry {
                device_id: task.id,
                pathloss: task.pathloss,
                queue_segments: task.segments,
            };
            let (g_edge, cand_edge) = best(Some(entry), 0.0);
            let c = local_cost(task.segments, task.cpu_freq_hz, task.cycles_per_bit, params);
            let (g_local, cand_local) = best(None, c);
            let action = if g_edge < g_local {
                to_action(cand_edge, true)
            } else {
                to_action(cand_local, false)
            };
            ImprovedDecision {
                action,
                g_edge: Some(g_edge),
                g_local,
            }
        }
    }
}

/// The improved policy: a baseline value function and a receive-side
/// power grid.
#[derive(Debug, Clone)]
pub struct ImprovedPolicy {
    pub value: Arc<ValueFunction>,
    pub grid: Vec<f64>,
}

/// A ready-to-run policy.
#[derive(Debug, Clone)]
pub enum Policy {
    Baseline { receive_power_w: f64, threshold: usize },
    AllLocal,
    AllEdge { receive_power_w: f64 },
    Improved(ImprovedPolicy),
}

impl Policy {
    pub fn baseline(params: &ModelParams) -> Self {
        Self::Baseline {
            receive_power_w: params.receive_power_w,
            threshold: params.admission_threshold,
        }
    }

    pub fn all_edge(params: &ModelParams) -> Self {
        Self::AllEdge {
            receive_power_w: params.receive_power_w,
        }
    }

    pub fn improved(value: Arc<ValueFunction>) -> Self {
        let grid = value.params().model.power_grid.clone();
        Self::Improved(ImprovedPolicy { value, grid })
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Self::Baseline { .. } => PolicyKind::Baseline,
            Self::AllLocal => PolicyKind::AllLocal,
            Self::AllEdge { .. } => PolicyKind::AllEdge,
            Self::Improved(_) => PolicyKind::Improved,
        }
    }

    pub fn decide(&self, state: &FullState) -> Action {
        match self {
            Self::Baseline {
                receive_power_w,
                threshold,
            } => baseline_decide(state, *receive_power_w, *threshold),
            Self::AllLocal => all_local_decide(state),
            Self::AllEdge { receive_power_w } => all_edge_decide(state, *receive_power_w),
            Self::Improved(p) => improved_decide(state, &p.value, &p.grid).action,
        }
    }
}
