use super::physics::{
    channel_capacity, local_completion_frames, local_cost, local_drain_per_frame, local_power, segments_per_frame,
};
use super::{Action, DeviceId, EdgeEntry, FullState, LocalEntry, ModelParams, Task};
use crate::error::Result;

/// Full per-frame cost: latency weight on every active device, uplink power
/// and the CPU power of every local device.
pub fn stage_cost_full(state: &FullState, action: &Action, params: &ModelParams) -> f64 {
    let active = (state.compact.len() + state.locals.len()) as f64;
    let cpu: f64 = state.locals.iter().map(|l| local_power(l.cpu_freq_hz, params)).sum();
    params.latency_weight * active + action.transmit_power_w + cpu
}

/// Reduced per-frame cost: edge devices only, with the whole discounted
/// local-computing cost of a new arrival charged in the frame it is
/// routed local.
pub fn stage_cost_reduced(state: &FullState, action: &Action, params: &ModelParams) -> f64 {
    let mut cost = params.latency_weight * state.compact.len() as f64 + action.transmit_power_w;
    if let Some(task) = state.arrival.as_ref().filter(|_| !action.offload) {
        cost += local_cost(task.segments, task.cpu_freq_hz, task.cycles_per_bit, params);
    }
    cost
}

/// What happened during one frame, for bookkeeping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    /// Device that transmitted and the segments it actually removed.
    pub transmitted: Option<(DeviceId, u32)>,
    pub edge_departures: Vec<DeviceId>,
    pub local_departures: Vec<DeviceId>,
    /// The arrival of this frame and whether it went to the edge.
    pub admitted: Option<(DeviceId, bool)>,
}

/// Applies one frame of dynamics and installs the next frame's fading and
/// arrival.
///
/// The selected device sends `⌊r·T_s/b_s⌋` segments (clipped at its queue)
/// and leaves when its queue empties. Every local queue drains by
/// `f·T_s/(ℓ·b_s)`. The new arrival joins the tail of the edge list or the
/// local set with its full task; it can transmit from the next frame on.
pub fn advance_state(
    state: &FullState,
    action: &Action,
    next_fading: &mut dyn FnMut(DeviceId) -> f64,
    next_arrival: Option<Task>,
    params: &ModelParams,
) -> Result<(FullState, StepOutcome)> {
    action.validate_for(state)?;
    let mut outcome = StepOutcome::default();
    let mut compact = state.compact.clone();

    if let Some(id) = action.selected_device {
        // validate_for guarantees presence.
        let idx = compact.position(id).expect("selected device is in the edge set");
        let entry = compact.entries()[idx];
        let rate = channel_capacity(action.transmit_power_w, entry.pathloss, state.fading()[idx], params);
        let (sent, departed) = compact.drain_at(idx, segments_per_frame(rate, params));
        outcome.transmitted = Some((id, sent));
        if departed {
            outcome.edge_departures.push(id);
        }
    }

    let mut locals = Vec::with_capacity(state.locals.len() + 1);
    for l in &state.locals {
        let drain = local_drain_per_frame(l.cpu_freq_hz, l.cycles_per_bit, params);
        let frames_left = l.frames_left.saturating_sub(1);
        if frames_left == 0 {
            outcome.local_departures.push(l.device_id);
        } else {
            locals.push(LocalEntry {
                queue_segments: (l.queue_segments - drain).max(0.0),
                frames_left,
                ..l.clone()
            });
        }
    }

    if let Some(task) = &state.arrival {
        if action.offload {
            compact.push(EdgeEntry {
                device_id: task.id,
                pathloss: task.pathloss,
                queue_segments: task.segments,
            })?;
        } else {
            locals.push(LocalEntry {
                device_id: task.id,
                queue_segments: task.segments as f64,
                cpu_freq_hz: task.cpu_freq_hz,
                cycles_per_bit: task.cycles_per_bit,
                frames_left: local_completion_frames(task.segments, task.cpu_freq_hz, task.cycles_per_bit, params),
            });
        }
        outcome.admitted = Some((task.id, action.offload));
    }

    let fading = compact.entries().iter().map(|e| next_fading(e.device_id)).collect();
    let next = FullState::new(compact, fading, locals, next_arrival)?;
    Ok((next, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CompactState;

    fn params() -> ModelParams {
        ModelParams::paper_scale()
    }

    fn task(id: u64, segments: u32, f: f64) -> Task {
        Task {
            id: DeviceId(id),
            segments,
            cycles_per_bit: 580.0,
            cpu_freq_hz: f,
            pathloss: 1e-6,
            arrival_frame: 0,
        }
    }

    fn edge(id: u64, q: u32) -> EdgeEntry {
        EdgeEntry {
            device_id: DeviceId(id),
            pathloss: 1.0,
            queue_segments: q,
        }
    }

    #[test]
    fn empty_costs_are_zero() {
        let p = params();
        let s = FullState::default();
        let a = Action::idle(true);
        assert_eq!(stage_cost_full(&s, &a, &p), 0.0);
        assert_eq!(stage_cost_reduced(&s, &a, &p), 0.0);
    }

    #[test]
    fn full_cost_example() {
        let p = params();
        let compact = CompactState::new(vec![edge(1, 5), edge(2, 5)]).unwrap();
        let mut s = FullState::with_fading(compact, |_| 1.0);
        s.locals.push(LocalEntry {
            device_id: DeviceId(3),
            queue_segments: 10.0,
            cpu_freq_hz: 1e9,
            cycles_per_bit: 580.0,
            frames_left: 4,
        });
        let a = Action {
            selected_device: Some(DeviceId(1)),
            transmit_power_w: 0.01,
            offload: true,
        };
        assert!((stage_cost_full(&s, &a, &p) - 0.28).abs() < 1e-15);
        let b = Action {
            transmit_power_w: 0.01 + 0.125,
            ..a
        };
        assert!((stage_cost_full(&s, &b, &p) - stage_cost_full(&s, &a, &p) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn reduced_cost_charges_local_routing_only() {
        let p = params();
        let mut s = FullState::default();
        s.arrival = Some(task(0, 250, 0.8e9));
        let c = local_cost(250, 0.8e9, 580.0, &p);
        assert!((stage_cost_reduced(&s, &Action::idle(false), &p) - c).abs() < 1e-15);
        assert_eq!(stage_cost_reduced(&s, &Action::idle(true), &p), 0.0);
    }

    #[test]
    fn idle_frame_only_refreshes_fading() {
        let p = params();
        let compact = CompactState::new(vec![edge(4, 7)]).unwrap();
        let s = FullState::with_fading(compact.clone(), |_| 0.3);
        let (n, out) = advance_state(&s, &Action::idle(true), &mut |_| 2.5, None, &p).unwrap();
        assert_eq!(n.compact, compact);
        assert_eq!(n.fading(), &[2.5]);
        assert!(out.edge_departures.is_empty());
    }

    #[test]
    fn exact_queue_transmission_departs() {
        let p = params();
        // 20 segments need a rate of 2e7 bit/s, i.e. SNR product 3.
        let compact = CompactState::new(vec![edge(1, 20), edge(2, 9)]).unwrap();
        let s = FullState::with_fading(compact, |_| 1.0);
        let a = Action {
            selected_device: Some(DeviceId(1)),
            transmit_power_w: 3e-9,
            offload: true,
        };
        let (n, out) = advance_state(&s, &a, &mut |_| 1.0, None, &p).unwrap();
        assert_eq!(out.transmitted, Some((DeviceId(1), 20)));
        assert_eq!(out.edge_departures, vec![DeviceId(1)]);
        assert_eq!(n.compact.len(), 1);
        assert_eq!(n.compact.head().unwrap().device_id, DeviceId(2));
    }

    #[test]
    fn rejects_foreign_device() {
        let p = params();
        let s = FullState::with_fading(CompactState::new(vec![edge(1, 20)]).unwrap(), |_| 1.0);
        let a = Action {
            selected_device: Some(DeviceId(9)),
            transmit_power_w: 1.0,
            offload: true,
        };
        assert!(advance_state(&s, &a, &mut |_| 1.0, None, &p).is_err());
    }

    #[test]
    fn arrival_routing() {
        let p = params();
        let mut s = FullState::with_fading(CompactState::new(vec![edge(1, 20)]).unwrap(), |_| 1.0);
        s.arrival = Some(task(5, 210, 1e9));
        let (n, out) = advance_state(&s, &Action::idle(true), &mut |_| 1.0, None, &p).unwrap();
        assert_eq!(n.compact.len(), 2);
        assert_eq!(n.compact.entries()[1].queue_segments, 210);
        assert_eq!(out.admitted, Some((DeviceId(5), true)));

        let (n, _) = advance_state(&s, &Action::idle(false), &mut |_| 1.0, None, &p).unwrap();
        assert_eq!(n.compact.len(), 1);
        assert_eq!(n.locals.len(), 1);
        assert_eq!(n.locals[0].queue_segments, 210.0);
        assert_eq!(n.locals[0].frames_left, local_completion_frames(210, 1e9, 580.0, &p));
    }

    #[test]
    fn local_device_runs_for_completion_frames() {
        let p = params();
        let mut s = FullState::default();
        s.arrival = Some(task(0, 200, 1e9));
        let expected = local_completion_frames(200, 1e9, 580.0, &p);
        let (mut s, _) = advance_state(&s, &Action::idle(false), &mut |_| 1.0, None, &p).unwrap();
        let mut frames = 0;
        loop {
            frames += 1;
            assert!(s.locals[0].queue_segments > 0.0);
            let (n, out) = advance_state(&s, &Action::idle(false), &mut |_| 1.0, None, &p).unwrap();
            s = n;
            if !out.local_departures.is_empty() {
                break;
            }
        }
        assert_eq!(frames, expected);
        assert!(s.locals.is_empty());
    }
}
