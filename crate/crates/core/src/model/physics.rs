//! Per-frame physics: uplink rate, segment accounting and local computing.

use super::ModelParams;

/// Relative slack used when a ratio that should be an integer comes out a
/// hair above it in floating point (e.g. `112.00000000000001`).
const CEIL_SLACK: f64 = 1e-12;

pub(crate) fn snapped_ceil(x: f64) -> f64 {
    (x * (1.0 - CEIL_SLACK)).ceil()
}

/// Uplink Shannon rate `W·log2(1 + p·ρ·|h|²/σ²)` in bit/s.
pub fn channel_capacity(power_w: f64, pathloss: f64, fading_sq: f64, params: &ModelParams) -> f64 {
    let snr = power_w * pathloss * fading_sq / params.noise_power_w;
    params.bandwidth_hz * snr.ln_1p() / std::f64::consts::LN_2
}

/// Whole segments delivered in one frame at `rate_bits_per_s`.
pub fn segments_per_frame(rate_bits_per_s: f64, params: &ModelParams) -> u32 {
    let segs = (rate_bits_per_s * params.frame_duration_s / params.segment_bits).floor();
    if segs <= 0.0 {
        0
    } else if segs >= u32::MAX as f64 {
        u32::MAX
    } else {
        segs as u32
    }
}

/// Segments drained from a local queue per frame, `f·T_s/(ℓ·b_s)`.
pub fn local_drain_per_frame(cpu_freq_hz: f64, cycles_per_bit: f64, params: &ModelParams) -> f64 {
    cpu_freq_hz * params.frame_duration_s / (cycles_per_bit * params.segment_bits)
}

/// Frames needed to compute `segments` locally, `⌈d·b_s·ℓ/(f·T_s)⌉`.
pub fn local_completion_frames(segments: u32, cpu_freq_hz: f64, cycles_per_bit: f64, params: &ModelParams) -> u32 {
    let ratio = segments as f64 * params.segment_bits * cycles_per_bit / (cpu_freq_hz * params.frame_duration_s);
    snapped_ceil(ratio).max(1.0) as u32
}

/// CPU power `κ·f³`.
pub fn local_power(cpu_freq_hz: f64, params: &ModelParams) -> f64 {
    params.switched_capacitance * cpu_freq_hz.powi(3)
}

/// `Σ_{τ=1}^{n} γ^τ`.
pub fn discounted_frames(gamma: f64, n: u32) -> f64 {
    gamma * (1.0 - gamma.powi(n as i32)) / (1.0 - gamma)
}

/// Discounted cost of computing a task locally, charged up front when the
/// task is routed local: `Σ_{τ=1}^{T_loc} γ^τ (w + κf³)`.
pub fn local_cost(segments: u32, cpu_freq_hz: f64, cycles_per_bit: f64, params: &ModelParams) -> f64 {
    let frames = local_completion_frames(segments, cpu_freq_hz, cycles_per_bit, params);
    discounted_frames(params.discount, frames) * (params.latency_weight + local_power(cpu_freq_hz, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> ModelParams {
        ModelParams::paper_scale()
    }

    #[test]
    fn capacity_examples() {
        let p = params();
        assert_eq!(channel_capacity(0.0, 1e-6, 1.0, &p), 0.0);
        // SNR product 1 -> one bit/s/Hz.
        let rate = channel_capacity(1e-9, 1.0, 1.0, &p);
        assert!((rate - 1e7).abs() < 1e-6);
        // SNR product 3 -> two bit/s/Hz.
        let rate = channel_capacity(3e-9, 1.0, 1.0, &p);
        assert!((rate - 2e7).abs() < 1e-6);
    }

    #[test]
    fn segment_examples() {
        let p = params();
        assert_eq!(segments_per_frame(0.0, &p), 0);
        assert_eq!(segments_per_frame(2e7, &p), 20);
        assert_eq!(segments_per_frame(9.99e6, &p), 9);
    }

    #[test]
    fn local_frame_examples() {
        let p = params();
        // d·b_s·ℓ == f·T_s exactly.
        assert_eq!(local_completion_frames(1, 1e9, 1.0, &ModelParams { segment_bits: 1e7, ..p.clone() }), 1);
        assert_eq!(local_completion_frames(250, 0.8e9, 580.0, &p), 182);
        assert_eq!(local_completion_frames(200, 1e9, 560.0, &p), 112);
    }

    #[test]
    fn local_power_examples() {
        let p = params();
        assert_eq!(local_power(0.0, &p), 0.0);
        assert!((local_power(1e9, &p) - 0.12).abs() < 1e-15);
        assert!((local_power(0.6e9, &p) - 0.02592).abs() < 1e-15);
    }

    #[test]
    fn local_cost_examples() {
        let p = params();
        // One frame of computation: a single discounted term.
        let one = ModelParams { segment_bits: 1e7, ..p.clone() };
        let c = local_cost(1, 1e9, 1.0, &one);
        assert!((c - one.discount * (one.latency_weight + 0.12)).abs() < 1e-15);

        // γ = 0.5, two frames, w + κf³ = 0.17.
        let half = ModelParams {
            discount: 0.5,
            segment_bits: 1e7,
            ..p
        };
        let c = local_cost(2, 1e9, 1.0, &half);
        assert!((c - 0.1275).abs() < 1e-15, "{c}");
    }

    proptest! {
        #[test]
        fn capacity_monotone_in_power(p1 in 0.0f64..1.0, dp in 0.0f64..1.0, rho in 1e-12f64..1.0, h in 0.0f64..20.0) {
            let p = params();
            prop_assert!(channel_capacity(p1 + dp, rho, h, &p) >= channel_capacity(p1, rho, h, &p));
        }

        #[test]
        fn local_cost_matches_frame_loop(d in 1u32..400, f in 0.6e9f64..1e9, l in 560.0f64..600.0, gamma in 0.5f64..0.999) {
            let p = ModelParams { discount: gamma, ..params() };
            let frames = local_completion_frames(d, f, l, &p);
            let per_frame = p.latency_weight + local_power(f, &p);
            let mut oracle = 0.0;
            let mut disc = 1.0;
            for _ in 0..frames {
                disc *= gamma;
                oracle += disc * per_frame;
            }
            let c = local_cost(d, f, l, &p);
            prop_assert!((c - oracle).abs() <= 1e-12 * oracle.max(1.0));
        }

        #[test]
        fn completion_frames_cover_the_drain(d in 1u32..400, f in 0.6e9f64..1e9, l in 560.0f64..600.0) {
            let p = params();
            let frames = local_completion_frames(d, f, l, &p) as f64;
            let drain = local_drain_per_frame(f, l, &p);
            prop_assert!(frames * drain >= d as f64 * (1.0 - 1e-9));
            prop_assert!((frames - 1.0) * drain < d as f64);
        }
    }
}
