//! The four subcommands. Each returns the JSON summary printed on stdout.

use std::sync::Arc;

use edgesched_core::learning::{run_learning, LearningConfig, LearningMode};
use edgesched_core::markov::SOLVE_TOLERANCE;
use edgesched_core::model::ModelParams;
use edgesched_core::policies::{Policy, PolicyKind};
use edgesched_core::sim::{aggregate_metrics, estimate, paired_difference, run_episodes, SimConfig, Z99};
use edgesched_core::valuefn::{ValueFunction, ValueParams};
use serde_json::{json, Value};

use crate::config::{compact_state, describe_state, DeviceSpec, Loaded};
use crate::error::CliError;
use crate::output::{num, write_all, Table};

/// Largest row-sum error of Φ accepted by `value`.
const ROW_SUM_TOLERANCE: f64 = 1e-12;

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    s.as_ref()
        .ok_or_else(|| CliError::Config(format!("config has no \"{name}\" section")))
}

fn build_policy(kind: PolicyKind, p: &ModelParams) -> Result<Policy, CliError> {
    Ok(match kind {
        PolicyKind::Baseline => Policy::baseline(p),
        PolicyKind::AllLocal => Policy::AllLocal,
        PolicyKind::AllEdge => Policy::all_edge(p),
        PolicyKind::Improved => Policy::improved(Arc::new(ValueFunction::new(&ValueParams::from_model(p))?)),
    })
}

fn with(p: &ModelParams, arrival_prob: f64, receive_power_w: f64) -> ModelParams {
    ModelParams {
        arrival_prob,
        receive_power_w,
        ..p.clone()
    }
}

fn scaled_sizes(p: &ModelParams, scale: f64) -> ModelParams {
    let seg_min = ((p.seg_min as f64 * scale).round() as u32).max(1);
    let seg_max = ((p.seg_max as f64 * scale).round() as u32).max(seg_min);
    ModelParams {
        seg_min,
        seg_max,
        ..p.clone()
    }
}

pub fn simulate(loaded: &Loaded) -> Result<Value, CliError> {
    let cfg = &loaded.config;
    let s = section(&cfg.simulate, "simulate")?;
    if s.policies.is_empty() || s.arrival_probs.is_empty() {
        return Err(CliError::Config("simulate needs at least one policy and one arrival_prob".into()));
    }
    if s.episodes == 0 || s.horizon == Some(0) {
        return Err(CliError::Config("episodes and horizon must be >= 1".into()));
    }
    if s.task_size_scales.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(CliError::Config("task_size_scales must be positive".into()));
    }
    let base = &loaded.params;
    let powers = if s.receive_powers.is_empty() {
        vec![base.receive_power_w]
    } else {
        s.receive_powers.clone()
    };
    let initial = compact_state(&s.initial_state, base)?;
    // Check every sweep point before running any of them.
    for &p_n in &s.arrival_probs {
        for &p_r in &powers {
            with(base, p_n, p_r).validate()?;
        }
    }
    for &scale in &s.task_size_scales {
        scaled_sizes(&with(base, s.arrival_probs[0], powers[0]), scale).validate()?;
    }

    let sim_config = |p: ModelParams| SimConfig {
        horizon: s.horizon,
        initial: initial.clone(),
        ..SimConfig::new(p, s.episodes, cfg.seed)
    };
    let mut metrics = Table::new(
        "metrics.csv",
        &[
            "policy",
            "arrival_prob",
            "p_r",
            "seed_base",
            "episodes",
            "discounted_cost_mean",
            "discounted_cost_ci",
            "per_device_cost",
            "edge_ratio",
        ],
    );
    let mut pmfs = Table::new("pmfs.csv", &["policy", "arrival_prob", "kind", "bin", "mass"]);
    for &kind in &s.policies {
        for &p_n in &s.arrival_probs {
            for (i, &p_r) in powers.iter().enumerate() {
                let p = with(base, p_n, p_r);
                let runs = run_episodes(&sim_config(p.clone()), &build_policy(kind, &p)?, cfg.workers)?;
                let m = aggregate_metrics(&runs, &p);
                metrics.row([
                    kind.name().to_string(),
                    num(p_n),
                    num(p_r),
                    cfg.seed.to_string(),
                    s.episodes.to_string(),
                    num(m.discounted_cost.mean),
                    num(m.discounted_cost.half_width),
                    num(m.per_device_cost),
                    num(m.edge_ratio),
                ]);
                // Distributions only at the first receive power.
                if i == 0 {
                    for (bin, mass) in &m.latency_pmf {
                        pmfs.row([kind.name(), &num(p_n), "latency", &bin.to_string(), &num(*mass)]);
                    }
                    for (bin, mass) in &m.power_pmf {
                        pmfs.row([kind.name(), &num(p_n), "power", &num(*bin), &num(*mass)]);
                    }
                }
            }
        }
    }
    let mut tables = vec![metrics, pmfs];
    if !s.task_size_scales.is_empty() {
        let mut sizes = Table::new(
            "metrics_task_size.csv",
            &[
                "policy",
                "task_size_scale",
                "seg_min",
                "seg_max",
                "arrival_prob",
                "p_r",
                "seed_base",
                "episodes",
                "discounted_cost_mean",
                "discounted_cost_ci",
                "per_device_cost",
                "edge_ratio",
            ],
        );
        for &kind in &s.policies {
            for &scale in &s.task_size_scales {
                let p = scaled_sizes(&with(base, s.arrival_probs[0], powers[0]), scale);
                let runs = run_episodes(&sim_config(p.clone()), &build_policy(kind, &p)?, cfg.workers)?;
                let m = aggregate_metrics(&runs, &p);
                sizes.row([
                    kind.name().to_string(),
                    num(scale),
                    p.seg_min.to_string(),
                    p.seg_max.to_string(),
                    num(p.arrival_prob),
                    num(p.receive_power_w),
                    cfg.seed.to_string(),
                    s.episodes.to_string(),
                    num(m.discounted_cost.mean),
                    num(m.discounted_cost.half_width),
                    num(m.per_device_cost),
                    num(m.edge_ratio),
                ]);
            }
        }
        tables.push(sizes);
    }
    let rows = tables[0].rows;
    let files = write_all(&cfg.output_dir, tables, &loaded.sha256)?;
    Ok(json!({
        "command": "simulate",
        "config_sha256": loaded.sha256,
        "metrics_rows": rows,
        "files": files,
    }))
}

pub fn value(loaded: &Loaded) -> Result<Value, CliError> {
    let empty = crate::config::ValueSection {
        states: vec![Vec::new()],
    };
    let s = loaded.config.value.as_ref().unwrap_or(&empty);
    let p = &loaded.params;
    let states = s
        .states
        .iter()
        .map(|d| compact_state(d, p))
        .collect::<Result<Vec<_>, _>>()?;
    let vf = ValueFunction::new(&ValueParams::from_model(p))?;
    let d = vf.diagnostics();
    let values: Vec<Value> = s
        .states
        .iter()
        .zip(&states)
        .map(|(spec, state)| {
            let b = vf.breakdown(state);
            json!({
                "state": describe_state(spec),
                "w1": b.w1,
                "w2": b.w2,
                "w3": b.w3,
                "total": b.total(),
            })
        })
        .collect();
    let row_ok = d.max_row_deviation <= ROW_SUM_TOLERANCE;
    let residual_ok = d.solve_residual <= SOLVE_TOLERANCE;
    let report = json!({
        "command": "value",
        "config_sha256": loaded.sha256,
        "values": values,
        "diagnostics": {
            "max_row_deviation": d.max_row_deviation,
            "solve_residual": d.solve_residual,
            "spectral_efficiency": d.spectral_efficiency,
            "row_sum_ok": row_ok,
            "residual_ok": residual_ok,
        },
    });
    if !(row_ok && residual_ok) {
        return Err(CliError::Solver(report.to_string()));
    }
    Ok(report)
}

pub fn learn(loaded: &Loaded) -> Result<Value, CliError> {
    let cfg = &loaded.config;
    let s = section(&cfg.learn, "learn")?;
    s.sgd.validate()?;
    let run = run_learning(&LearningConfig {
        params: loaded.params.clone(),
        mode: s.mode,
        frames: s.frames,
        max_sgd_steps: s.max_sgd_steps,
        seed: cfg.seed,
        stream_id: s.stream_id,
        sgd: s.sgd,
        record_every: s.record_every,
    })?;
    let mut tables = Vec::new();
    if s.mode != LearningMode::Sgd {
        let mut t = Table::new("learning.csv", &["t", "n", "P_hat", "varpi_hat", "cbar_hat"]);
        for e in &run.estimator_rows {
            t.row([e.t.to_string(), e.n.to_string(), num(e.p_hat), num(e.varpi_hat), num(e.cbar_hat)]);
        }
        tables.push(t);
    }
    if s.mode != LearningMode::Estimators {
        let mut t = Table::new("sgd.csv", &["n", "p_r", "gradient"]);
        for r in &run.sgd_rows {
            t.row([r.n.to_string(), num(r.p_r), num(r.gradient)]);
        }
        tables.push(t);
    }
    let files = write_all(&cfg.output_dir, tables, &loaded.sha256)?;
    Ok(json!({
        "command": "learn",
        "config_sha256": loaded.sha256,
        "mode": s.mode,
        "estimator": run.estimator,
        "sgd_steps": run.sgd_rows.len(),
        "p_r": run.p_r,
        "files": files,
    }))
}

pub fn bound_check(loaded: &Loaded) -> Result<Value, CliError> {
    let cfg = &loaded.config;
    let s = section(&cfg.bound_check, "bound_check")?;
    if s.episodes == 0 || s.horizon == Some(0) {
        return Err(CliError::Config("episodes and horizon must be >= 1".into()));
    }
    if s.tolerance.is_nan() || s.tolerance < 0.0 {
        return Err(CliError::Config("tolerance must be >= 0".into()));
    }
    let p = &loaded.params;
    let states: Vec<(&Vec<DeviceSpec>, _)> = s
        .states
        .iter()
        .map(|d| compact_state(d, p).map(|c| (d, c)))
        .collect::<Result<_, _>>()?;
    let vf = Arc::new(ValueFunction::new(&ValueParams::from_model(p))?);
    let baseline = Policy::baseline(p);
    let improved = Policy::improved(vf.clone());

    let mut table = Table::new(
        "bound_check.csv",
        &[
            "state",
            "W_hat_baseline",
            "W_hat_baseline_ci",
            "W_hat_improved",
            "W_hat_improved_ci",
            "analytic_W_baseline",
            "paired_diff",
            "paired_ci",
            "ordering_ok",
            "nonnegative_ok",
            "analytic_ok",
        ],
    );
    let mut failed = Vec::new();
    for (spec, state) in &states {
        let sim = SimConfig {
            horizon: s.horizon,
            initial: state.clone(),
            ..SimConfig::new(p.clone(), s.episodes, cfg.seed)
        };
        let base_runs = run_episodes(&sim, &baseline, cfg.workers)?;
        let imp_runs = run_episodes(&sim, &improved, cfg.workers)?;
        let costs = |runs: &[edgesched_core::sim::Trajectory]| {
            estimate(&runs.iter().map(|t| t.discounted_g_reduced).collect::<Vec<_>>(), Z99)
        };
        let (wb, wi) = (costs(&base_runs), costs(&imp_runs));
        let diff = paired_difference(&imp_runs, &base_runs, Z99);
        let analytic = vf.value(state);
        let ordering_ok = diff.mean - diff.half_width <= 0.0;
        let nonnegative_ok = imp_runs.iter().all(|t| t.discounted_g_reduced >= 0.0);
        let analytic_ok = (wb.mean - analytic).abs() <= s.tolerance * analytic + wb.half_width;
        let name = describe_state(spec);
        if !(ordering_ok && nonnegative_ok && analytic_ok) {
            failed.push(name.clone());
        }
        table.row([
            name,
            num(wb.mean),
            num(wb.half_width),
            num(wi.mean),
            num(wi.half_width),
            num(analytic),
            num(diff.mean),
            num(diff.half_width),
            ordering_ok.to_string(),
            nonnegative_ok.to_string(),
            analytic_ok.to_string(),
        ]);
    }
    // The table is the report, so it is written even when a check fails.
    let files = write_all(&cfg.output_dir, vec![table], &loaded.sha256)?;
    let report = json!({
        "command": "bound-check",
        "config_sha256": loaded.sha256,
        "states": states.len(),
        "failed_states": failed,
        "files": files,
    });
    if !failed.is_empty() {
        return Err(CliError::Assertion(report.to_string()));
    }
    Ok(report)
}
