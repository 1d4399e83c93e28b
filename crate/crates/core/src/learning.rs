//! Online estimation of the arrival statistics and gradient descent on the
//! receive-power level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{build_c, build_dc, build_dphi, build_phi, ChainIndex, DiscountedSolver};
use crate::model::ModelParams;
use crate::stochastic::{ArrivalConfig, ArrivalStream, RngStream};
use crate::valuefn::{local_cost_over_sizes, ValueParams};

/// What one frame reveals to the estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameObservation {
    pub arrival: Option<ArrivalObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalObservation {
    pub pathloss: f64,
    pub cpu_freq_hz: f64,
    pub cycles_per_bit: f64,
}

/// Running means of `P_N`, `ϖ = E[1/ρ]` and `C̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorState {
    pub t: u64,
    pub n: u64,
    pub p_hat: f64,
    pub varpi_hat: f64,
    pub cbar_hat: f64,
}

impl Default for EstimatorState {
    fn default() -> Self {
        Self {
            t: 0,
            n: 0,
            p_hat: 0.0,
            varpi_hat: 0.0,
            cbar_hat: 0.0,
        }
    }
}

impl EstimatorState {
    pub fn update(&mut self, obs: &FrameObservation, params: &ModelParams) {
        self.t += 1;
        let indicator = if obs.arrival.is_some() { 1.0 } else { 0.0 };
        self.p_hat += (indicator - self.p_hat) / self.t as f64;
        if let Some(a) = obs.arrival {
            self.n += 1;
            let n = self.n as f64;
            self.varpi_hat += (1.0 / a.pathloss - self.varpi_hat) / n;
            let c_obs = local_cost_over_sizes(a.cpu_freq_hz, a.cycles_per_bit, params);
            self.cbar_hat += (c_obs - self.cbar_hat) / n;
        }
    }

    /// Value parameters using the current estimates. Needs one arrival.
    pub fn value_params(&self, model: &ModelParams) -> Result<ValueParams> {
        if self.n == 0 {
            return Err(Error::InvalidParams("no arrivals observed yet".into()));
        }
        Ok(ValueParams::with_estimates(model, self.p_hat, self.varpi_hat, self.cbar_hat))
    }
}

/// Discounted chain value of the empty system at the current receive level.
pub fn reference_value(vp: &ValueParams) -> Result<f64> {
    let p = &vp.model;
    let phi = build_phi(p, vp.receive_power(), vp.arrival_prob)?;
    let c = build_c(p, vp.receive_power(), vp.arrival_prob, vp.varpi, vp.cbar);
    Ok(DiscountedSolver::new(&phi, p.discount).solve(&c)?[0])
}

/// `d/dp_r` of `ṽᵀ x` where `(I-γΦ)x = c`, for an arbitrary weight `ṽ`.
pub fn gradient_pr_weighted(vp: &ValueParams, weights: &[f64]) -> Result<f64> {
    vp.validate()?;
    let p = &vp.model;
    let p_r = vp.receive_power();
    let index = ChainIndex::from_params(p);
    let phi = build_phi(p, p_r, vp.arrival_prob)?;
    let dphi = build_dphi(p, p_r, vp.arrival_prob)?;
    let c = build_c(p, p_r, vp.arrival_prob, vp.varpi, vp.cbar);
    let dc = build_dc(vp.varpi, &index);
    let solver = DiscountedSolver::new(&phi, p.discount);
    let x = solver.solve(&c)?;
    let y = solver.solve_transpose(weights)?;
    let n = index.dim();
    let mut grad = 0.0;
    for i in 0..n {
        let dphi_x: f64 = (0..n).map(|j| dphi[(i, j)] * x[j]).sum();
        grad += y[i] * (dc[i] + p.discount * dphi_x);
    }
    Ok(grad)
}

/// Gradient of [`reference_value`] in `p_r`.
pub fn gradient_pr(vp: &ValueParams) -> Result<f64> {
    let mut e0 = vec![0.0; ChainIndex::from_params(&vp.model).dim()];
    e0[0] = 1.0;
    gradient_pr_weighted(vp, &e0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    /// First step moves `p_r` by this fraction of itself.
    pub eta_scale: f64,
    /// `η_n = η₀ / n^power`.
    pub eta_power: f64,
    pub p_floor: f64,
    pub p_cap: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            eta_scale: 1e-2,
            eta_power: 1.0,
            p_floor: 1e-12,
            p_cap: 1.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_scale > 0.0 && self.eta_scale.is_finite()) {
            return Err(Error::InvalidParams("eta_scale must be > 0".into()));
        }
        // Ση = ∞ and Ση² < ∞.
        if !(self.eta_power > 0.5 && self.eta_power <= 1.0) {
            return Err(Error::InvalidParams("eta_power must lie in (0.5, 1]".into()));
        }
        if !(self.p_floor > 0.0 && self.p_floor < self.p_cap) {
            return Err(Error::InvalidParams("need 0 < p_floor < p_cap".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SgdState {
    pub n: u64,
    pub p_r: f64,
    /// Fixed by the first nonzero gradient.
    pub eta0: Option<f64>,
    pub config: SgdConfig,
}

impl SgdState {
    pub fn new(p_r: f64, config: SgdConfig) -> Self {
        Self {
            n: 0,
            p_r: p_r.clamp(config.p_floor, config.p_cap),
            eta0: None,
            config,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.eta0.map_or(0.0, |e| e / (self.n.max(1) as f64).powf(self.config.eta_power))
    }

    /// One projected step along `-grad`.
    pub fn step_with(&mut self, grad: f64) -> f64 {
        self.n += 1;
        if self.eta0.is_none() && grad != 0.0 {
            self.eta0 = Some(self.config.eta_scale * self.p_r / grad.abs());
        }
        let next = self.p_r - self.step_size() * grad;
        self.p_r = next.clamp(self.config.p_floor, self.config.p_cap);
        self.p_r
    }

    /// One step with the analytic gradient at the current level; returns the
    /// gradient used.
    pub fn step(&mut self, vp: &ValueParams) -> Result<f64> {
        let grad = gradient_pr(&vp.with_receive_power(self.p_r))?;
        self.step_with(grad);
        Ok(grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningMode {
    Estimators,
    /// SGD with the statistics of the configured distributions.
    Sgd,
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningConfig {
    pub params: ModelParams,
    pub mode: LearningMode,
    pub frames: u64,
    /// Stop early once this many SGD steps were taken.
    pub max_sgd_steps: Option<u64>,
    pub seed: u64,
    pub stream_id: u64,
    pub sgd: SgdConfig,
    /// Estimator rows are kept every this many frames.
    pub record_every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SgdRow {
    pub n: u64,
    pub p_r: f64,
    pub gradient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningRun {
    pub estimator_rows: Vec<EstimatorState>,
    pub sgd_rows: Vec<SgdRow>,
    pub estimator: EstimatorState,
    pub p_r: f64,
}

/// Feeds the arrival stream to the estimators and, per arrival, to SGD.
pub fn run_learning(cfg: &LearningConfig) -> Result<LearningRun> {
    cfg.params.validate()?;
    cfg.sgd.validate()?;
    let p = &cfg.params;
    let truth = ValueParams::from_model(p);
    let mut arrivals = ArrivalStream::new(
        RngStream::new(cfg.seed, cfg.stream_id),
        ArrivalConfig::from_params(p),
        0,
    );
    let mut est = EstimatorState::default();
    let mut sgd = SgdState::new(p.receive_power_w, cfg.sgd);
    let mut run = LearningRun {
        estimator_rows: Vec::new(),
        sgd_rows: Vec::new(),
        estimator: est,
        p_r: sgd.p_r,
    };
    let record_every = cfg.record_every.max(1);
    for t in 0..cfg.frames {
        let task = arrivals.next(p, t);
        let obs = FrameObservation {
            arrival: task.as_ref().map(|a| ArrivalObservation {
                pathloss: a.pathloss,
                cpu_freq_hz: a.cpu_freq_hz,
                cycles_per_bit: a.cycles_per_bit,
            }),
        };
        if cfg.mode != LearningMode::Sgd {
            est.update(&obs, p);
            if est.t % record_every == 0 {
                run.estimator_rows.push(est);
            }
        }
        if cfg.mode != LearningMode::Estimators && task.is_some() {
            let vp = match cfg.mode {
                LearningMode::Joint => est.value_params(p)?,
                _ => truth.clone(),
            };
            let gradient = sgd.step(&vp)?;
            run.sgd_rows.push(SgdRow {
                n: sgd.n,
                p_r: sgd.p_r,
                gradient,
            });
            if cfg.max_sgd_steps.is_some_and(|m| sgd.n >= m) {
                break;
            }
        }
    }
    run.estimator = est;
    run.p_r = sgd.p_r;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuefn::ValueFunction;
    use crate::model::CompactState;

    fn desk() -> ModelParams {
        ModelParams::desk_scale()
    }

    #[test]
    fn indicator_running_mean() {
        let p = desk();
        let mut est = EstimatorState::default();
        let arrival = ArrivalObservation {
            pathloss: 1e-6,
            cpu_freq_hz: 1e9,
            cycles_per_bit: 500.0,
        };
        for hit in [true, false, true, false] {
            est.update(&FrameObservation { arrival: hit.then_some(arrival) }, &p);
        }
        assert_eq!(est.p_hat, 0.5);
        assert_eq!(est.n, 2);
        assert!((est.varpi_hat - 1e6).abs() < 1e-6);
    }

    #[test]
    fn reference_value_is_empty_state_value() {
        let vp = ValueParams::from_model(&desk());
        let vf = ValueFunction::new(&vp).unwrap();
        let w = vf.value(&CompactState::empty());
        let r = reference_value(&vp).unwrap();
        assert!((w - r).abs() <= 1e-12 * r.abs().max(1.0), "{w} vs {r}");
    }

    #[test]
    fn zero_costs_zero_gradient() {
        let mut p = desk();
        p.latency_weight = 1e-300;
        let vp = ValueParams::with_estimates(&p, 0.0, 1e-300, 0.0);
        // c and dc are both of order 1e-300.
        assert!(gradient_pr(&vp).unwrap().abs() < 1e-280);
    }

    #[test]
    fn gradient_sign_brackets_desk_optimum() {
        let vp = ValueParams::from_model(&desk());
        // Far below this the link never succeeds, everything goes local and
        // the curve flattens again.
        let lo = gradient_pr(&vp.with_receive_power(5e-11)).unwrap();
        let hi = gradient_pr(&vp.with_receive_power(1e-3)).unwrap();
        assert!(lo < 0.0, "low end {lo}");
        assert!(hi > 0.0, "high end {hi}");
    }

    #[test]
    fn gradient_matches_central_difference() {
        let vp = ValueParams::from_model(&desk());
        let p_r = vp.receive_power();
        let h = 1e-3 * p_r;
        let f = |x: f64| reference_value(&vp.with_receive_power(x)).unwrap();
        let fd = (f(p_r + h) - f(p_r - h)) / (2.0 * h);
        let g = gradient_pr(&vp).unwrap();
        assert!((g - fd).abs() <= 1e-5 * fd.abs(), "{g} vs {fd}");
    }

    #[test]
    fn zero_gradient_keeps_level() {
        let mut s = SgdState::new(2e-9, SgdConfig::default());
        s.step_with(0.0);
        assert_eq!(s.p_r, 2e-9);
        assert_eq!(s.eta0, None);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = 3e-6;
        let cfg = SgdConfig {
            eta_scale: 0.5,
            eta_power: 0.75,
            ..SgdConfig::default()
        };
        let mut s = SgdState::new(1e-5, cfg);
        for _ in 0..5000 {
            let g = 2.0 * (s.p_r - target);
            s.step_with(g);
        }
        assert!((s.p_r - target).abs() < 1e-3 * target, "{}", s.p_r);
    }

    #[test]
    fn projection_keeps_bounds() {
        let mut s = SgdState::new(1e-9, SgdConfig::default());
        s.step_with(1.0);
        s.step_with(1e30);
        assert_eq!(s.p_r, 1e-12);
        s.step_with(-1e40);
        assert_eq!(s.p_r, 1.0);
    }

    #[test]
    fn bad_schedules_rejected() {
        for power in [0.5, 1.5] {
            let c = SgdConfig {
                eta_power: power,
                ..SgdConfig::default()
            };
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn estimator_driver_records_rows() {
        let cfg = LearningConfig {
            params: desk(),
            mode: LearningMode::Estimators,
            frames: 1000,
            max_sgd_steps: None,
            seed: 1,
            stream_id: 0,
            sgd: SgdConfig::default(),
            record_every: 100,
        };
        let run = run_learning(&cfg).unwrap();
        assert_eq!(run.estimator_rows.len(), 10);
        assert_eq!(run.estimator.t, 1000);
        assert!(run.sgd_rows.is_empty());
        assert!(run.estimator_rows.windows(2).all(|w| w[0].n <= w[1].n));
    }
}
