use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical and statistical constants of the cell.
///
/// Units: seconds, hertz, bits, watts. `switched_capacitance` is in
/// W·s³/cycle³ so that `κ·f³` is a power in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub frame_duration_s: f64,
    pub bandwidth_hz: f64,
    pub segment_bits: f64,
    pub noise_power_w: f64,
    pub latency_weight: f64,
    pub discount: f64,
    pub switched_capacitance: f64,
    pub seg_min: u32,
    pub seg_max: u32,
    pub arrival_prob: f64,
    pub admission_threshold: usize,
    pub receive_power_w: f64,
    pub cell_radius_m: f64,
    pub pathloss_exponent: f64,
    pub min_distance_m: f64,
    pub cpu_freq_range_hz: (f64, f64),
    pub cycles_per_bit_range: (f64, f64),
    pub power_grid: Vec<f64>,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::paper_scale()
    }
}

impl ModelParams {
    /// The full-size cell: 200..=300 segments of 10 kbit, 10 ms frames,
    /// 10 MHz uplink, K = 4.
    pub fn paper_scale() -> Self {
        Self {
            frame_duration_s: 0.01,
            bandwidth_hz: 10e6,
            segment_bits: 10_000.0,
            noise_power_w: 1e-9,
            latency_weight: 0.05,
            discount: 0.95,
            switched_capacitance: 1.2e-28,
            seg_min: 200,
            seg_max: 300,
            arrival_prob: 0.1,
            admission_threshold: 4,
            receive_power_w: 2.8e-9,
            cell_radius_m: 400.0,
            pathloss_exponent: 3.5,
            min_distance_m: 1.0,
            cpu_freq_range_hz: (0.6e9, 1.0e9),
            cycles_per_bit_range: (560.0, 600.0),
            power_grid: log_spaced(1e-10, 1e-1, 32),
        }
    }

    /// Small tasks (2..=6 segments), K = 3, P_N = 0.2; otherwise the
    /// full-size physics. Cheap enough for large Monte Carlo runs.
    pub fn desk_scale() -> Self {
        Self {
            seg_min: 2,
            seg_max: 6,
            arrival_prob: 0.2,
            admission_threshold: 3,
            ..Self::paper_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frame_duration_s", self.frame_duration_s),
            ("bandwidth_hz", self.bandwidth_hz),
            ("segment_bits", self.segment_bits),
            ("noise_power_w", self.noise_power_w),
            ("latency_weight", self.latency_weight),
            ("switched_capacitance", self.switched_capacitance),
            ("receive_power_w", self.receive_power_w),
            ("cell_radius_m", self.cell_radius_m),
            ("pathloss_exponent", self.pathloss_exponent),
            ("min_distance_m", self.min_distance_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidParams(format!("discount must lie in (0,1), got {}", self.discount)));
        }
        if !(self.arrival_prob >= 0.0 && self.arrival_prob <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "arrival_prob must lie in [0,1], got {}",
                self.arrival_prob
            )));
        }
        if self.seg_min < 1 || self.seg_min > self.seg_max {
            return Err(Error::InvalidParams(format!(
                "need 1 <= seg_min <= seg_max, got {}..{}",
                self.seg_min, self.seg_max
            )));
        }
        if self.admission_threshold < 1 {
            return Err(Error::InvalidParams("admission_threshold must be >= 1".into()));
        }
        if self.min_distance_m >= self.cell_radius_m {
            return Err(Error::InvalidParams("min_distance_m must be below cell_radius_m".into()));
        }
        for (name, (lo, hi)) in [
            ("cpu_freq_range_hz", self.cpu_freq_range_hz),
            ("cycles_per_bit_range", self.cycles_per_bit_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(Error::InvalidParams(format!("{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
            }
        }
        if self.power_grid.is_empty() {
            return Err(Error::InvalidParams("power_grid must not be empty".into()));
        }
        if self.power_grid.iter().any(|p| !(p.is_finite() && *p > 0.0))
            || self.power_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidParams("power_grid must be positive and strictly increasing".into()));
        }
        Ok(())
    }

    /// Number of task-size values, `d_max - d_min + 1`.
    pub fn seg_count(&self) -> u32 {
        self.seg_max - self.seg_min + 1
    }

    /// Largest pathloss gain any device can have (at the minimum distance).
    pub fn max_pathloss(&self) -> f64 {
        self.min_distance_m.powf(-self.pathloss_exponent)
    }

    /// Smallest pathloss gain (at the cell edge).
    pub fn min_pathloss(&self) -> f64 {
        self.cell_radius_m.powf(-self.pathloss_exponent)
    }

    /// Bits that fit in one frame per unit of spectral efficiency, `W·T_s`.
    pub fn bits_per_frame_per_bps_hz(&self) -> f64 {
        self.bandwidth_hz * self.frame_duration_s
    }
}

/// `n` points spaced evenly in log10 between `lo` and `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
                .collect()
        }
    }
}
