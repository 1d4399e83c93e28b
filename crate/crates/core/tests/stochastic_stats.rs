use edgesched_core::model::{DeviceId, ModelParams};
use edgesched_core::stochastic::{
    episode_streams, expected_inverse_pathloss, ArrivalConfig, ArrivalStream, FadingField, RngStream,
};

/// Largest gap between the empirical CDF of `xs` and `cdf`.
fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Kolmogorov critical value at the 0.1% level.
fn ks_critical(n: usize) -> f64 {
    1.949 / (n as f64).sqrt()
}

fn certain(params: ModelParams) -> ModelParams {
    ModelParams {
        arrival_prob: 1.0,
        ..params
    }
}

#[test]
fn fading_is_unit_exponential() {
    let mut f = FadingField::new(RngStream::new(42, 1));
    let xs: Vec<f64> = (0..20_000).map(|t| f.fading_sq(DeviceId(7), t)).collect();
    let d = ks_statistic(xs.clone(), |x| 1.0 - (-x).exp());
    assert!(d < ks_critical(xs.len()), "KS {d}");
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    assert!((mean - 1.0).abs() < 4.0 / (xs.len() as f64).sqrt());
    // Tail: P(|h|² > 5) = e^-5.
    let tail = xs.iter().filter(|&&x| x > 5.0).count() as f64 / xs.len() as f64;
    let sd = ((-5f64).exp() / xs.len() as f64).sqrt();
    assert!((tail - (-5f64).exp()).abs() < 4.0 * sd);
}

#[test]
fn fading_uncorrelated_across_frames_and_devices() {
    let mut f = FadingField::new(RngStream::new(3, 9));
    let n = 20_000;
    let a: Vec<f64> = (0..n).map(|t| f.fading_sq(DeviceId(1), t)).collect();
    let b: Vec<f64> = (0..n).map(|t| f.fading_sq(DeviceId(2), t)).collect();
    let corr = |x: &[f64], y: &[f64]| {
        let (mx, my) = (x.iter().sum::<f64>() / x.len() as f64, y.iter().sum::<f64>() / y.len() as f64);
        let cov: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
        let vx: f64 = x.iter().map(|u| (u - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    };
    let bound = 4.0 / (n as f64).sqrt();
    assert!(corr(&a, &b).abs() < bound);
    assert!(corr(&a[1..], &a[..n as usize - 1]).abs() < bound);
}

#[test]
fn arrival_frequency_is_binomial() {
    let p = ModelParams::paper_scale();
    let mut s = ArrivalStream::new(RngStream::new(8, 0), ArrivalConfig::from_params(&p), 0);
    let n = 50_000u64;
    let hits = (0..n).filter(|&t| s.next(&p, t).is_some()).count() as f64;
    let sd = (n as f64 * p.arrival_prob * (1.0 - p.arrival_prob)).sqrt();
    assert!((hits - n as f64 * p.arrival_prob).abs() < 4.0 * sd);
}

#[test]
fn task_sizes_uniform_chi_square() {
    let p = certain(ModelParams::desk_scale());
    let mut s = ArrivalStream::new(RngStream::new(77, 4), ArrivalConfig::from_params(&p), 0);
    let n = 50_000;
    let mut counts = [0usize; 5];
    for t in 0..n {
        let task = s.next(&p, t).unwrap();
        counts[(task.segments - p.seg_min) as usize] += 1;
    }
    let expected = n as f64 / 5.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // χ²(4) upper 0.1% point.
    assert!(chi2 < 18.467, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn radius_uniform_on_disk() {
    let p = certain(ModelParams::paper_scale());
    let mut s = ArrivalStream::new(RngStream::new(5, 2), ArrivalConfig::from_params(&p), 0);
    let n = 20_000;
    // Pathloss r^-3.5 inverts to the radius; below d_min it is clamped.
    let radii: Vec<f64> = (0..n)
        .map(|t| s.next(&p, t).unwrap().pathloss.powf(-1.0 / p.pathloss_exponent))
        .filter(|&r| r > p.min_distance_m)
        .collect();
    let r2 = p.cell_radius_m * p.cell_radius_m;
    let d = ks_statistic(radii.clone(), |r| (r * r / r2 - 1.0 / r2) / (1.0 - 1.0 / r2));
    assert!(d < ks_critical(radii.len()), "KS {d}");
}

#[test]
fn cpu_parameters_uniform() {
    let p = certain(ModelParams::paper_scale());
    let mut s = ArrivalStream::new(RngStream::new(6, 2), ArrivalConfig::from_params(&p), 0);
    let tasks: Vec<_> = (0..20_000).map(|t| s.next(&p, t).unwrap()).collect();
    let (f_lo, f_hi) = p.cpu_freq_range_hz;
    let d = ks_statistic(tasks.iter().map(|t| t.cpu_freq_hz).collect(), |f| (f - f_lo) / (f_hi - f_lo));
    assert!(d < ks_critical(tasks.len()));
    let (l_lo, l_hi) = p.cycles_per_bit_range;
    let d = ks_statistic(tasks.iter().map(|t| t.cycles_per_bit).collect(), |l| (l - l_lo) / (l_hi - l_lo));
    assert!(d < ks_critical(tasks.len()));
}

#[test]
fn inverse_pathloss_sample_mean() {
    // The 1/ρ tail is heavy (r^3.5 up to 400 m), so only a loose check.
    let p = certain(ModelParams::paper_scale());
    let mut s = ArrivalStream::new(RngStream::new(12, 0), ArrivalConfig::from_params(&p), 0);
    let n = 200_000;
    let mean = (0..n).map(|t| 1.0 / s.next(&p, t).unwrap().pathloss).sum::<f64>() / n as f64;
    let truth = expected_inverse_pathloss(&p);
    assert!((mean / truth - 1.0).abs() < 0.02, "{mean} vs {truth}");
}

#[test]
fn episode_streams_are_disjoint() {
    let p = certain(ModelParams::desk_scale());
    let draw = |stream: RngStream| {
        let mut s = ArrivalStream::new(stream, ArrivalConfig::from_params(&p), 0);
        (0..50).map(|t| s.next(&p, t).unwrap().cpu_freq_hz).collect::<Vec<_>>()
    };
    let (a0, f0) = episode_streams(1, 0);
    let (a1, _) = episode_streams(1, 1);
    assert_ne!(draw(a0), draw(a1));
    assert_ne!(draw(a0), draw(f0));
    assert_eq!(draw(a0), draw(episode_streams(1, 0).0));
}
