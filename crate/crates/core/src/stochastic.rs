//! Seeded generators for arrivals and fading.
//!
//! Every episode owns two ChaCha8 streams derived from one base seed:
//! stream `2e` drives arrivals (a fixed five uniforms per frame, so the
//! arrival process is identical whatever the policy does), and stream
//! `2e+1` is read counter-style at a position fixed by `(device, frame)`,
//! so a device sees the same fading in the same frame under every policy.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{DeviceId, ModelParams, Task};

/// A `(seed, stream_id)` pair. Identical pairs give identical sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Uniform on `(0, 1]`, safe to take the log of.
fn open_unit(rng: &mut impl RngCore) -> f64 {
    1.0 - rng.random::<f64>()
}

/// `|h|² ~ Exp(1)`.
pub fn sample_fading_sq(rng: &mut impl RngCore) -> f64 {
    -open_unit(rng).ln()
}

/// `max(d, d_min)^(-exponent)`.
pub fn pathloss_from_distance(distance_m: f64, params: &ModelParams) -> f64 {
    distance_m.max(params.min_distance_m).powf(-params.pathloss_exponent)
}

/// `E[1/ρ]` for a device placed uniformly on the disk:
/// `∫ max(r, r₀)^η · 2r/R² dr` over `[0, R]`, in closed form.
pub fn expected_inverse_pathloss(params: &ModelParams) -> f64 {
    let (r0, big_r, eta) = (params.min_distance_m, params.cell_radius_m, params.pathloss_exponent);
    let r2 = big_r * big_r;
    r0.powf(eta) * r0 * r0 / r2 + 2.0 / ((eta + 2.0) * r2) * (big_r.powf(eta + 2.0) - r0.powf(eta + 2.0))
}

/// Maps a uniform draw on `[0,1)` to a distance from the base station.
pub type RadialQuantile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Distribution of a new arrival.
#[derive(Clone)]
pub struct ArrivalConfig {
    pub arrival_prob: f64,
    pub seg_min: u32,
    pub seg_max: u32,
    pub cpu_freq_range_hz: (f64, f64),
    pub cycles_per_bit_range: (f64, f64),
    /// Inverse CDF of the distance; uniform over the disk by default.
    pub radial_quantile: RadialQuantile,
}

impl fmt::Debug for ArrivalConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ArrivalConfig")
            .field("arrival_prob", &self.arrival_prob)
            .field("seg_min", &self.seg_min)
            .field("seg_max", &self.seg_max)
            .field("cpu_freq_range_hz", &self.cpu_freq_range_hz)
            .field("cycles_per_bit_range", &self.cycles_per_bit_range)
            .finish_non_exhaustive()
    }
}

impl ArrivalConfig {
    pub fn from_params(params: &ModelParams) -> Self {
        let radius = params.cell_radius_m;
        Self {
            arrival_prob: params.arrival_prob,
            seg_min: params.seg_min,
            seg_max: params.seg_max,
            cpu_freq_range_hz: params.cpu_freq_range_hz,
            cycles_per_bit_range: params.cycles_per_bit_range,
            radial_quantile: Arc::new(move |u: f64| radius * u.sqrt()),
        }
    }
}

/// Draws the arrival of one frame from five uniforms. The uniforms are
/// consumed whether or not a device arrives.
pub fn sample_arrival(
    rng: &mut impl RngCore,
    config: &ArrivalConfig,
    params: &ModelParams,
    frame_index: u64,
    id: DeviceId,
) -> Option<Task> {
    let u: [f64; 5] = std::array::from_fn(|_| rng.random::<f64>());
    if u[0] >= config.arrival_prob {
        return None;
    }
    let distance = (config.radial_quantile)(u[1]);
    let span = config.seg_max - config.seg_min + 1;
    let segments = config.seg_min + ((u[2] * span as f64) as u32).min(span - 1);
    let (f_lo, f_hi) = config.cpu_freq_range_hz;
    let (l_lo, l_hi) = config.cycles_per_bit_range;
    Some(Task {
        id,
        segments,
        cycles_per_bit: l_lo + (l_hi - l_lo) * u[4],
        cpu_freq_hz: f_lo + (f_hi - f_lo) * u[3],
        pathloss: pathloss_from_distance(distance, params),
        arrival_frame: frame_index,
    })
}

/// Arrival process of one episode, numbering devices from `first_id`.
#[derive(Debug, Clone)]
pub struct ArrivalStream {
    rng: ChaCha8Rng,
    config: ArrivalConfig,
    next_id: u64,
}

impl ArrivalStream {
    pub fn new(stream: RngStream, config: ArrivalConfig, first_id: u64) -> Self {
        Self {
            rng: stream.rng(),
            config,
            next_id: first_id,
        }
    }

    pub fn next(&mut self, params: &ModelParams, frame_index: u64) -> Option<Task> {
        let task = sample_arrival(&mut self.rng, &self.config, params, frame_index, DeviceId(self.next_id));
        if task.is_some() {
            self.next_id += 1;
        }
        task
    }
}

/// Counter-addressed fading: the draw for `(device, frame)` does not depend
/// on what else has been drawn.
#[derive(Debug, Clone)]
pub struct FadingField {
    rng: ChaCha8Rng,
}

impl FadingField {
    pub fn new(stream: RngStream) -> Self {
        Self { rng: stream.rng() }
    }

    pub fn fading_sq(&mut self, device: DeviceId, frame: u64) -> f64 {
        // Two 32-bit words per f64; 2^32 frames per device is plenty.
        let slot = ((device.0 as u128) << 32) | (frame as u128 & 0xffff_ffff);
        self.rng.set_word_pos(slot * 2);
        sample_fading_sq(&mut self.rng)
    }
}

/// The two streams of episode `episode` under base seed `seed`.
pub fn episode_streams(seed: u64, episode: u64) -> (RngStream, RngStream) {
    (RngStream::new(seed, 2 * episode), RngStream::new(seed, 2 * episode + 1))
}
