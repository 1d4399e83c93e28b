//! Frame-loop engine and episode statistics.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    advance_state, local_power, stage_cost_full, stage_cost_reduced, CompactState, DeviceId, FullState, ModelParams,
};
use crate::policies::Policy;
use crate::stochastic::{episode_streams, ArrivalConfig, ArrivalStream, FadingField};

/// Default number of frames allowed after the horizon for the last devices
/// to leave. The improved policy may park a device indefinitely.
pub const DRAIN_LIMIT: u64 = 100_000;

/// Smallest `T` with `γ^T < 10⁻⁶`.
pub fn auto_horizon(gamma: f64) -> u32 {
    let t = (1e-6f64.ln() / gamma.ln()).floor() as u32 + 1;
    // Guard the boundary against rounding in the logarithms.
    if gamma.powi(t as i32 - 1) < 1e-6 {
        t - 1
    } else {
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub params: ModelParams,
    /// `None` picks [`auto_horizon`].
    pub horizon: Option<u32>,
    pub episodes: u64,
    pub seed: u64,
    pub initial: CompactState,
    /// Keep running without arrivals after the horizon until every device
    /// has left, so latencies are complete.
    pub drain: bool,
    pub drain_limit: u64,
    pub record_frames: bool,
}

impl SimConfig {
    pub fn new(params: ModelParams, episodes: u64, seed: u64) -> Self {
        Self {
            params,
            horizon: None,
            episodes,
            seed,
            initial: CompactState::empty(),
            drain: false,
            drain_limit: DRAIN_LIMIT,
            record_frames: false,
        }
    }

    pub fn horizon_frames(&self) -> u32 {
        self.horizon.unwrap_or_else(|| auto_horizon(self.params.discount))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.episodes < 1 {
            return Err(Error::InvalidParams("episodes must be >= 1".into()));
        }
        if self.horizon == Some(0) {
            return Err(Error::InvalidParams("horizon must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceMode {
    Edge,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub frame: u64,
    pub edge_count: usize,
    pub local_count: usize,
    pub transmitter: Option<DeviceId>,
    pub transmit_power_w: f64,
    pub segments_sent: u32,
    /// Routing of this frame's arrival, if any.
    pub offload: Option<bool>,
    pub g: f64,
    pub g_reduced: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceRecord {
    pub id: DeviceId,
    pub mode: ServiceMode,
    pub arrival_frame: u64,
    /// Last frame in which the device was active.
    pub departure_frame: Option<u64>,
    pub energy_j: f64,
    pub active_frames: u32,
    pub segments: u32,
    pub segments_done: f64,
}

impl DeviceRecord {
    pub fn latency_frames(&self) -> Option<u64> {
        self.departure_frame.map(|d| d - self.arrival_frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub episode: u64,
    pub horizon: u32,
    /// Empty unless frames were requested.
    pub frames: Vec<FrameRecord>,
    /// Devices that arrived during the episode.
    pub devices: Vec<DeviceRecord>,
    pub discounted_g: f64,
    pub discounted_g_reduced: f64,
    /// Largest reduced stage cost seen, for the truncation bound.
    pub max_stage_cost: f64,
    /// Whether every device had left when the episode stopped.
    pub drained: bool,
}

/// Selects the stage cost for [`discounted_cost`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    Full,
    Reduced,
}

/// `Σ_t γ^{t-1}·g_t` over recorded frames.
pub fn discounted_cost(trajectory: &Trajectory, gamma: f64, which: CostKind) -> f64 {
    let mut disc = 1.0;
    let mut total = 0.0;
    for f in &trajectory.frames {
        total += disc
            * match which {
                CostKind::Full => f.g,
                CostKind::Reduced => f.g_reduced,
            };
        disc *= gamma;
    }
    total
}

/// Runs one episode; randomness comes from streams `2e` and `2e+1` of the
/// base seed, so every policy sees the same arrivals and fading.
pub fn run_episode(config: &SimConfig, policy: &Policy, episode: u64) -> Result<Trajectory> {
    let p = &config.params;
    let horizon = config.horizon_frames() as u64;
    let (arrival_stream, fading_stream) = episode_streams(config.seed, episode);
    let first_id = config.initial.max_id().map_or(0, |m| m.0 + 1);
    let mut arrivals = ArrivalStream::new(arrival_stream, ArrivalConfig::from_params(p), first_id);
    let mut fading = FadingField::new(fading_stream);

    let mut state = FullState::with_fading(config.initial.clone(), |id| fading.fading_sq(id, 0));
    state.arrival = arrivals.next(p, 0);

    let mut traj = Trajectory {
        episode,
        horizon: horizon as u32,
        frames: Vec::new(),
        devices: Vec::new(),
        discounted_g: 0.0,
        discounted_g_reduced: 0.0,
        max_stage_cost: 0.0,
        drained: false,
    };
    let mut index: HashMap<DeviceId, usize> = HashMap::new();
    let mut disc = 1.0;
    let mut t = 0u64;
    loop {
        let idle = state.compact.is_empty() && state.locals.is_empty() && state.arrival.is_none();
        if t >= horizon && (!config.drain || idle || t >= horizon + config.drain_limit) {
            traj.drained = idle;
            break;
        }
        let action = policy.decide(&state);
        let g = stage_cost_full(&state, &action, p);
        let g_reduced = stage_cost_reduced(&state, &action, p);
        traj.discounted_g += disc * g;
        traj.discounted_g_reduced += disc * g_reduced;
        traj.max_stage_cost = traj.max_stage_cost.max(g_reduced);
        disc *= p.discount;

        if let Some(task) = &state.arrival {
            index.insert(task.id, traj.devices.len());
            traj.devices.push(DeviceRecord {
                id: task.id,
                mode: if action.offload { ServiceMode::Edge } else { ServiceMode::Local },
                arrival_frame: t,
                departure_frame: None,
                energy_j: 0.0,
                active_frames: 0,
                segments: task.segments,
                segments_done: 0.0,
            });
        }
        for e in state.compact.entries() {
            if let Some(&i) = index.get(&e.device_id) {
                traj.devices[i].active_frames += 1;
            }
        }
        for l in &state.locals {
            if let Some(&i) = index.get(&l.device_id) {
                let rec = &mut traj.devices[i];
                rec.active_frames += 1;
                rec.energy_j += local_power(l.cpu_freq_hz, p) * p.frame_duration_s;
                rec.segments_done += crate::model::local_drain_per_frame(l.cpu_freq_hz, l.cycles_per_bit, p)
                    .min(l.queue_segments);
            }
        }

        let next_arrival = if t + 1 < horizon { arrivals.next(p, t + 1) } else { None };
        let (next, outcome) = advance_state(&state, &action, &mut |id| fading.fading_sq(id, t + 1), next_arrival, p)?;

        if let Some((id, sent)) = outcome.transmitted {
            if let Some(&i) = index.get(&id) {
                traj.devices[i].energy_j += action.transmit_power_w * p.frame_duration_s;
                traj.devices[i].segments_done += sent as f64;
            }
        }
        for id in outcome.edge_departures.iter().chain(&outcome.local_departures) {
            if let Some(&i) = index.get(id) {
                traj.devices[i].departure_frame = Some(t);
            }
        }
        if config.record_frames {
            traj.frames.push(FrameRecord {
                frame: t,
                edge_count: state.compact.len(),
                local_count: state.locals.len(),
                transmitter: action.selected_device,
                transmit_power_w: action.transmit_power_w,
                segments_sent: outcome.transmitted.map_or(0, |(_, s)| s),
                offload: state.arrival.as_ref().map(|_| action.offload),
                g,
                g_reduced,
            });
        }
        state = next;
        t += 1;
    }
    Ok(traj)
}

/// Runs `config.episodes` episodes on `workers` threads; the result is in
/// episode order whatever the thread count.
pub fn run_episodes(config: &SimConfig, policy: &Policy, workers: usize) -> Result<Vec<Trajectory>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParams(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        (0..config.episodes)
            .into_par_iter()
            .map(|e| run_episode(config, policy, e))
            .collect()
    })
}

/// Mean and the half-width of a normal confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_dev: f64,
    pub half_width: f64,
    pub n: usize,
}

/// Two-sided normal quantiles used for reporting.
pub const Z95: f64 = 1.959_963_984_540_054;
pub const Z99: f64 = 2.575_829_303_548_901;

pub fn estimate(samples: &[f64], z: f64) -> Estimate {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n.max(1) as f64;
    let var = if n > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let std_dev = var.sqrt();
    Estimate {
        mean,
        std_dev,
        half_width: z * std_dev / (n.max(1) as f64).sqrt(),
        n,
    }
}

/// Episode-wise differences `a - b` of the reduced discounted cost.
pub fn paired_difference(a: &[Trajectory], b: &[Trajectory], z: f64) -> Estimate {
    assert_eq!(a.len(), b.len(), "paired runs need equal episode counts");
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.discounted_g_reduced - y.discounted_g_reduced)
        .collect();
    estimate(&diffs, z)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub episodes: usize,
    /// Reduced discounted cost, mean and 95% half-width.
    pub discounted_cost: Estimate,
    pub discounted_cost_full: Estimate,
    /// Mean of `w·latency + energy/T_s` over departed devices.
    pub per_device_cost: f64,
    pub departed_devices: usize,
    pub edge_ratio: f64,
    /// Latency in frames -> probability.
    pub latency_pmf: Vec<(u64, f64)>,
    /// Lower edge of a 0.1-decade bin of time-averaged power (log10 W) ->
    /// probability.
    pub power_pmf: Vec<(f64, f64)>,
    /// Upper bound on the discounted cost beyond the horizon.
    pub truncation_bound: f64,
}

/// 0.1-decade bin index of a positive power.
fn power_bin(watts: f64) -> i64 {
    (watts.log10() * 10.0 + 1e-9).floor() as i64
}

pub fn aggregate_metrics(trajectories: &[Trajectory], params: &ModelParams) -> Metrics {
    let reduced: Vec<f64> = trajectories.iter().map(|t| t.discounted_g_reduced).collect();
    let full: Vec<f64> = trajectories.iter().map(|t| t.discounted_g).collect();
    let mut latency: BTreeMap<u64, usize> = BTreeMap::new();
    let mut power: BTreeMap<i64, usize> = BTreeMap::new();
    let (mut departed, mut edge, mut cost_sum) = (0usize, 0usize, 0.0);
    for dev in trajectories.iter().flat_map(|t| &t.devices) {
        let Some(lat) = dev.latency_frames() else { continue };
        departed += 1;
        if dev.mode == ServiceMode::Edge {
            edge += 1;
        }
        cost_sum += params.latency_weight * lat as f64 + dev.energy_j / params.frame_duration_s;
        *latency.entry(lat).or_default() += 1;
        let avg_power = dev.energy_j / (lat.max(1) as f64 * params.frame_duration_s);
        if avg_power > 0.0 {
            *power.entry(power_bin(avg_power)).or_default() += 1;
        }
    }
    let to_pmf = |total: usize| move |(k, n): (_, usize)| (k, n as f64 / total as f64);
    let powered: usize = power.values().sum();
    let horizon = trajectories.first().map_or(0, |t| t.horizon);
    let c_max = trajectories.iter().map(|t| t.max_stage_cost).fold(0.0, f64::max);
    let gamma = params.discount;
    Metrics {
        episodes: trajectories.len(),
        discounted_cost: estimate(&reduced, Z95),
        discounted_cost_full: estimate(&full, Z95),
        per_device_cost: if departed > 0 { cost_sum / departed as f64 } else { 0.0 },
        departed_devices: departed,
        edge_ratio: if departed > 0 { edge as f64 / departed as f64 } else { 0.0 },
        latency_pmf: latency.into_iter().map(to_pmf(departed)).collect(),
        power_pmf: power
            .into_iter()
            .map(|(b, n)| (b as f64 / 10.0, n as f64 / powered as f64))
            .collect(),
        truncation_bound: gamma.powi(horizon as i32) * c_max / (1.0 - gamma),
    }
}
