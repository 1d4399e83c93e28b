//! Closed-form value of the baseline policy from any compact state.
//!
//! The horizon splits into three periods. Period 1 serves the initial
//! devices that cannot all fit under the admission threshold, so every
//! arrival goes local. Period 2 serves the last `min(K, |U_E|)` initial
//! devices while a small counting chain tracks how many arrivals were
//! admitted behind them. Period 3 is the steady chain on `(ζ, ξ)`.
//! Transmission times of the initial devices are taken as deterministic,
//! computed from the ergodic rate at the receive level `p_r`.

use std::collections::HashMap;
use std::sync::Arc;

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::markov::{build_v, vec_mat, ChainIndex, ChainMatrices, DiscountedSolver, SmallChain};
use crate::model::{local_cost, snapped_ceil, CompactState, ModelParams};
use crate::stochastic::expected_inverse_pathloss;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `e^x·E₁(x)` for `x > 0`: power series below 1, continued fraction above.
pub fn scaled_exp1(x: f64) -> f64 {
    assert!(x > 0.0, "E1 needs a positive argument");
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        x.exp() * (-EULER_GAMMA - x.ln() - sum)
    } else {
        // Modified Lentz on E1(x)e^x = 1/(x+1- 1²/(x+3- 2²/(x+5- ...))).
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h
    }
}

/// `E_X[log2(1 + a·X)]` with `X ~ Exp(1)` and `a = p_r/σ²`, via the
/// exponential-integral closed form `e^{1/a}·E₁(1/a)/ln 2`.
pub fn ergodic_spectral_efficiency(p_r: f64, params: &ModelParams) -> f64 {
    let a = p_r / params.noise_power_w;
    if a <= 0.0 {
        return 0.0;
    }
    scaled_exp1(1.0 / a) / std::f64::consts::LN_2
}

/// Gauss–Laguerre nodes and weights from the Jacobi matrix.
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = Mat::<f64>::from_fn(n, n, |i, j| {
        if i == j {
            (2 * i + 1) as f64
        } else if i.abs_diff(j) == 1 {
            i.max(j) as f64
        } else {
            0.0
        }
    });
    let eig = jacobi
        .self_adjoint_eigen(Side::Lower)
        .expect("symmetric tridiagonal eigenproblem converges");
    let nodes: Vec<f64> = (0..n).map(|i| eig.S()[i]).collect();
    let weights = (0..n).map(|i| eig.U()[(0, i)].powi(2)).collect();
    (nodes, weights)
}

/// Adaptive Gauss–Laguerre estimate of the same expectation: 64 nodes,
/// doubling until successive estimates agree to 10⁻⁸ or 1024 nodes.
/// The integrand has a log singularity at `-1/a`, so convergence slows as
/// the SNR grows; the closed form is what the value function uses.
pub fn ergodic_spectral_efficiency_quadrature(p_r: f64, params: &ModelParams) -> (f64, usize) {
    let a = p_r / params.noise_power_w;
    let estimate = |n: usize| {
        let (x, w) = gauss_laguerre(n);
        x.iter().zip(&w).map(|(xi, wi)| wi * (a * xi).ln_1p()).sum::<f64>() / std::f64::consts::LN_2
    };
    let mut n = 64;
    let mut prev = estimate(n);
    while n < 1024 {
        n *= 2;
        let next = estimate(n);
        let converged = (next - prev).abs() < 1e-8;
        prev = next;
        if converged {
            break;
        }
    }
    (prev, n)
}

/// Frames to clear `queue_segments` at the ergodic rate:
/// `⌈Q·b_s / (η·W·T_s)⌉` with η the ergodic spectral efficiency.
pub fn transmission_frames(queue_segments: u32, p_r: f64, params: &ModelParams) -> u32 {
    frames_at_efficiency(queue_segments, ergodic_spectral_efficiency(p_r, params), params)
}

fn frames_at_efficiency(queue_segments: u32, efficiency: f64, params: &ModelParams) -> u32 {
    let ratio = queue_segments as f64 * params.segment_bits / (efficiency * params.bits_per_frame_per_bps_hz());
    snapped_ceil(ratio).max(1.0) as u32
}

/// Three-point Gauss–Legendre on `[a, b]`; exact for quintics.
fn gauss3(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    const X: f64 = 0.774_596_669_241_483_4;
    let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
    half * (5.0 / 9.0 * (f(mid - half * X) + f(mid + half * X)) + 8.0 / 9.0 * f(mid))
}

/// `Σ_{τ=1}^{m} γ^τ`.
fn disc(gamma: f64, m: f64) -> f64 {
    gamma * (1.0 - gamma.powf(m)) / (1.0 - gamma)
}

/// Mean over `ℓ ~ U[l_lo, l_hi]` of `Σ_{τ≤T} γ^τ`, `T = ⌈d·b_s·ℓ/(f·T_s)⌉`.
fn mean_disc_over_cycles(d: u32, f: f64, params: &ModelParams) -> f64 {
    let gamma = params.discount;
    let (l_lo, l_hi) = params.cycles_per_bit_range;
    // T(ℓ) = m on ((m-1)·step, m·step].
    let step = f * params.frame_duration_s / (d as f64 * params.segment_bits);
    if l_hi <= l_lo {
        return disc(gamma, snapped_ceil(l_lo / step).max(1.0));
    }
    let m_lo = snapped_ceil(l_lo / step).max(1.0) as u64;
    let m_hi = snapped_ceil(l_hi / step).max(1.0) as u64;
    let mut total = 0.0;
    for m in m_lo..=m_hi {
        let a = ((m - 1) as f64 * step).max(l_lo);
        let b = (m as f64 * step).min(l_hi);
        if b > a {
            total += (b - a) * disc(gamma, m as f64);
        }
    }
    total / (l_hi - l_lo)
}

/// `E[C]` over `d ~ U{d_min..d_max}`, `f ~ U[f_lo,f_hi]`, `ℓ ~ U[l_lo,l_hi]`.
///
/// For fixed `d` the ℓ-average is piecewise linear in `f` between the
/// frequencies where a completion-time breakpoint crosses an end of the
/// ℓ range; times `w + κf³` that is a quartic per piece, which three-point
/// Gauss–Legendre integrates exactly.
pub fn expected_local_cost(params: &ModelParams) -> f64 {
    let (f_lo, f_hi) = params.cpu_freq_range_hz;
    let (l_lo, l_hi) = params.cycles_per_bit_range;
    let per_frame = |f: f64| params.latency_weight + params.switched_capacitance * f.powi(3);
    let mut total = 0.0;
    for d in params.seg_min..=params.seg_max {
        if f_hi <= f_lo {
            total += per_frame(f_lo) * mean_disc_over_cycles(d, f_lo, params);
            continue;
        }
        let work = d as f64 * params.segment_bits / params.frame_duration_s;
        let m_min = snapped_ceil(work * l_lo / f_hi).max(1.0) as u64;
        let m_max = snapped_ceil(work * l_hi / f_lo).max(1.0) as u64;
        let mut cuts = vec![f_lo, f_hi];
        for m in m_min.saturating_sub(1).max(1)..=m_max {
            for l in [l_lo, l_hi] {
                let f = work * l / m as f64;
                if f > f_lo && f < f_hi {
                    cuts.push(f);
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let integral: f64 = cuts
            .windows(2)
            .map(|w| gauss3(w[0], w[1], |f| per_frame(f) * mean_disc_over_cycles(d, f, params)))
            .sum();
        total += integral / (f_hi - f_lo);
    }
    total / params.seg_count() as f64
}

/// Model constants plus the arrival statistics the value function needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueParams {
    pub model: ModelParams,
    /// `ϖ = E[1/ρ]`.
    pub varpi: f64,
    /// `C̄ = E[C]`.
    pub cbar: f64,
    pub arrival_prob: f64,
}

impl ValueParams {
    /// Statistics computed from the configured distributions.
    pub fn from_model(model: &ModelParams) -> Self {
        Self {
            varpi: expected_inverse_pathloss(model),
            cbar: expected_local_cost(model),
            arrival_prob: model.arrival_prob,
            model: model.clone(),
        }
    }

    /// Statistics supplied from online estimates.
    pub fn with_estimates(model: &ModelParams, arrival_prob: f64, varpi: f64, cbar: f64) -> Self {
        Self {
            model: model.clone(),
            varpi,
            cbar,
            arrival_prob,
        }
    }

    /// Same statistics, different receive level.
    pub fn with_receive_power(&self, p_r: f64) -> Self {
        let mut out = self.clone();
        out.model.receive_power_w = p_r;
        out
    }

    pub fn receive_power(&self) -> f64 {
        self.model.receive_power_w
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.varpi.is_finite() && self.varpi > 0.0) {
            return Err(Error::InvalidParams(format!("varpi must be > 0, got {}", self.varpi)));
        }
        if !(self.cbar.is_finite() && self.cbar >= 0.0) {
            return Err(Error::InvalidParams(format!("cbar must be >= 0, got {}", self.cbar)));
        }
        if !(0.0..=1.0).contains(&self.arrival_prob) {
            return Err(Error::InvalidParams(format!(
                "arrival probability must lie in [0,1], got {}",
                self.arrival_prob
            )));
        }
        Ok(())
    }

    fn cache_key(&self) -> CacheKey {
        let m = &self.model;
        CacheKey {
            bits: [
                m.receive_power_w,
                self.arrival_prob,
                self.varpi,
                self.cbar,
                m.discount,
                m.latency_weight,
                m.frame_duration_s,
                m.bandwidth_hz,
                m.segment_bits,
                m.noise_power_w,
            ]
            .map(f64::to_bits),
            shape: [m.admission_threshold, m.seg_min as usize, m.seg_max as usize],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    bits: [u64; 10],
    shape: [usize; 3],
}

/// The three period costs of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ValueBreakdown {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl ValueBreakdown {
    pub fn total(&self) -> f64 {
        self.w1 + self.w2 + self.w3
    }
}

/// Numerical health of the steady-period solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueDiagnostics {
    pub max_row_deviation: f64,
    pub solve_residual: f64,
    pub spectral_efficiency: f64,
}

/// Baseline value function for fixed parameters; evaluation after setup
/// costs `O(K²)` per initial device and nothing per chain state.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    params: ValueParams,
    efficiency: f64,
    /// `(I - γΦ)⁻¹ c`.
    x: Vec<f64>,
    /// `y[ζ]`: mean of `x` over a fresh head task with ζ devices.
    y: Vec<f64>,
    chain: SmallChain,
    /// `blocks[T]`: the counting chain over one device's `T` frames.
    blocks: Vec<Block>,
    diagnostics: ValueDiagnostics,
}

/// `T` frames of the counting chain folded together: `acc = Σ_{f<T} γ^f
/// M^f g` and `transfer = M^T P`.
#[derive(Debug, Clone)]
struct Block {
    acc: Vec<f64>,
    transfer: Vec<Vec<f64>>,
}

fn build_blocks(chain: &SmallChain, gamma: f64, t_max: u32) -> Vec<Block> {
    let k1 = chain.gvec.len();
    // power = M^T, acc as above; grown one frame at a time.
    let mut power: Vec<Vec<f64>> = (0..k1).map(|i| (0..k1).map(|j| (i == j) as u8 as f64).collect()).collect();
    let mut acc = vec![0.0; k1];
    let mut disc = 1.0;
    let mut blocks = Vec::with_capacity(t_max as usize + 1);
    for t in 0..=t_max {
        let transfer = power.iter().map(|row| vec_mat(row, &chain.pmat)).collect();
        blocks.push(Block {
            acc: acc.clone(),
            transfer,
        });
        if t < t_max {
            for (a, row) in acc.iter_mut().zip(&power) {
                *a += disc * dot(row, &chain.gvec);
            }
            power = power.iter().map(|row| vec_mat(row, &chain.mmat)).collect();
            disc *= gamma;
        }
    }
    blocks
}

impl ValueFunction {
    pub fn new(params: &ValueParams) -> Result<Self> {
        params.validate()?;
        let m = &params.model;
        let p_r = m.receive_power_w;
        let matrices = ChainMatrices::build(m, p_r, params.arrival_prob, params.varpi, params.cbar)?;
        let solver = DiscountedSolver::new(&matrices.phi, m.discount);
        let mut x = solver.solve(&matrices.c)?;
        let solve_residual = solver.residual_of(&x, &matrices.c);
        // The exact solution is nonnegative; only roundoff can dip below.
        for v in &mut x {
            *v = v.max(0.0);
        }
        let index = matrices.index;
        let per_size = 1.0 / m.seg_count() as f64;
        let y = (0..=index.k)
            .map(|zeta| {
                if zeta == 0 {
                    x[0]
                } else {
                    (m.seg_min as usize..=m.seg_max as usize)
                        .map(|xi| x[index.slot(zeta, xi)])
                        .sum::<f64>()
                        * per_size
                }
            })
            .collect();
        let diagnostics = ValueDiagnostics {
            max_row_deviation: matrices.max_row_deviation(),
            solve_residual,
            spectral_efficiency: ergodic_spectral_efficiency(p_r, m),
        };
        let chain = SmallChain::build(m, params.arrival_prob, params.cbar, 0);
        let t_max = frames_at_efficiency(m.seg_max, diagnostics.spectral_efficiency, m);
        Ok(Self {
            efficiency: diagnostics.spectral_efficiency,
            blocks: build_blocks(&chain, m.discount, t_max),
            chain,
            params: params.clone(),
            x,
            y,
            diagnostics,
        })
    }

    pub fn params(&self) -> &ValueParams {
        &self.params
    }

    pub fn diagnostics(&self) -> ValueDiagnostics {
        self.diagnostics
    }

    /// `(I - γΦ)⁻¹ c`, indexed by zero-based chain slot.
    pub fn chain_values(&self) -> &[f64] {
        &self.x
    }

    pub fn chain_index(&self) -> ChainIndex {
        ChainIndex::from_params(&self.params.model)
    }

    /// Deterministic transmission time of each initial device.
    pub fn transmission_times(&self, state: &CompactState) -> Vec<u32> {
        state
            .entries()
            .iter()
            .map(|e| frames_at_efficiency(e.queue_segments, self.efficiency, &self.params.model))
            .collect()
    }

    pub fn value(&self, state: &CompactState) -> f64 {
        self.breakdown(state).total()
    }

    pub fn w1(&self, state: &CompactState) -> f64 {
        self.breakdown(state).w1
    }

    pub fn w2(&self, state: &CompactState) -> f64 {
        self.breakdown(state).w2
    }

    pub fn w3(&self, state: &CompactState) -> f64 {
        self.breakdown(state).w3
    }

    pub fn breakdown(&self, state: &CompactState) -> ValueBreakdown {
        let m = &self.params.model;
        let gamma = m.discount;
        let p_r = m.receive_power_w;
        let w = m.latency_weight;
        let k = m.admission_threshold;
        let n0 = state.len();
        if n0 == 0 {
            return ValueBreakdown {
                w3: self.y[0],
                ..Default::default()
            };
        }
        let times = self.transmission_times(state);
        let geometric = |t: u32| (1.0 - gamma.powi(t as i32)) / (1.0 - gamma);
        let local_rate = self.params.arrival_prob * self.params.cbar;

        // Period 1: every arrival is routed local.
        let first = n0.saturating_sub(k);
        let mut discount = 1.0;
        let mut w1 = 0.0;
        for (i, entry) in state.entries()[..first].iter().enumerate() {
            let t = times[i];
            let present = (n0 - i) as f64;
            w1 += discount * geometric(t) * (p_r / entry.pathloss + w * present + local_rate);
            discount *= gamma.powi(t as i32);
        }

        // Period 2: the counting chain admits arrivals up to K devices.
        let mut w2 = 0.0;
        let mut u = vec![0.0; k + 1];
        u[n0.min(k)] = 1.0;
        let SmallChain { gvec, mmat, pmat, .. } = &self.chain;
        for (i, entry) in state.entries().iter().enumerate().skip(first) {
            let t = times[i];
            w2 += discount * geometric(t) * p_r / entry.pathloss;
            if let Some(block) = self.blocks.get(t as usize) {
                w2 += discount * dot(&u, &block.acc);
                u = vec_mat(&u, &block.transfer);
                discount *= gamma.powi(t as i32);
            } else {
                // Queues longer than any admitted task.
                for _ in 0..t {
                    w2 += discount * dot(&u, gvec);
                    u = vec_mat(&u, mmat);
                    discount *= gamma;
                }
                u = vec_mat(&u, pmat);
            }
        }

        // Period 3: the steady chain, entered with fresh head tasks.
        let w3 = discount * dot(&u, &self.y);
        ValueBreakdown { w1, w2, w3 }
    }

    /// Entry distribution of the steady chain after the initial devices
    /// leave, as a dense vector over chain states.
    pub fn entry_distribution(&self, state: &CompactState) -> Vec<f64> {
        let m = &self.params.model;
        let index = self.chain_index();
        if state.is_empty() {
            return build_v(None, &self.chain.mmat, &self.chain.pmat, 0, &index, m);
        }
        let times = self.transmission_times(state);
        let k = m.admission_threshold;
        let first = state.len().saturating_sub(k);
        let mut u = vec![0.0; k + 1];
        u[state.len().min(k)] = 1.0;
        let last = state.len() - 1;
        for &t in &times[first..last] {
            u = crate::markov::propagate_u(&u, &self.chain.mmat, &self.chain.pmat, t);
        }
        build_v(Some(&u), &self.chain.mmat, &self.chain.pmat, times[last], &index, m)
    }
}

impl ValueFunction {
    fn block(&self, t: u32) -> std::borrow::Cow<'_, Block> {
        match self.blocks.get(t as usize) {
            Some(b) => std::borrow::Cow::Borrowed(b),
            None => std::borrow::Cow::Owned(
                build_blocks(&self.chain, self.params.model.discount, t)
                    .pop()
                    .expect("at least one block"),
            ),
        }
    }

    fn geometric(&self, t: u32) -> f64 {
        let gamma = self.params.model.discount;
        (1.0 - gamma.powi(t as i32)) / (1.0 - gamma)
    }

    /// Period-1 cost of one device that starts with `present` devices queued.
    fn period1_term(&self, t: u32, pathloss: f64, present: usize) -> f64 {
        let m = &self.params.model;
        self.geometric(t)
            * (m.receive_power_w / pathloss + m.latency_weight * present as f64 + self.params.arrival_prob * self.params.cbar)
    }

    /// Running totals before each of the first `upto` devices, with the
    /// period boundary placed as if `count` devices were queued.
    fn forward(&self, pathloss: &[f64], times: &[u32], count: usize, upto: usize) -> Vec<Prefix> {
        let m = &self.params.model;
        let k = m.admission_threshold;
        let first = count.saturating_sub(k);
        let unit = |i: usize| {
            let mut u = vec![0.0; k + 1];
            u[i] = 1.0;
            u
        };
        let mut out = Vec::with_capacity(upto + 1);
        let mut cur = Prefix {
            disc: 1.0,
            acc: 0.0,
            u: (first == 0).then(|| unit(count.min(k))),
        };
        for i in 0..upto {
            let t = times[i];
            let next_disc = cur.disc * m.discount.powi(t as i32);
            let next = if i < first {
                Prefix {
                    disc: next_disc,
                    acc: cur.acc + cur.disc * self.period1_term(t, pathloss[i], count - i),
                    u: (i + 1 == first).then(|| unit(k)),
                }
            } else {
                let u = cur.u.as_ref().expect("period 2 carries a distribution");
                let blk = self.block(t);
                Prefix {
                    disc: next_disc,
                    acc: cur.acc + cur.disc * (self.geometric(t) * m.receive_power_w / pathloss[i] + dot(u, &blk.acc)),
                    u: Some(vec_mat(u, &blk.transfer)),
                }
            };
            out.push(std::mem::replace(&mut cur, next));
        }
        out.push(cur);
        out
    }

    /// Prepares [`ValueScan`] for `state`.
    pub fn scan(&self, state: &CompactState) -> ValueScan<'_> {
        let m = &self.params.model;
        let k = m.admission_threshold;
        let n0 = state.len();
        let first = n0.saturating_sub(k);
        let pathloss: Vec<f64> = state.entries().iter().map(|e| e.pathloss).collect();
        let times = self.transmission_times(state);

        let mut tail_vec = vec![self.y.clone()];
        for i in (first..n0).rev() {
            let t = times[i];
            let blk = self.block(t);
            let after = tail_vec.last().expect("seeded with y");
            let own = self.geometric(t) * m.receive_power_w / pathloss[i];
            let shrink = m.discount.powi(t as i32);
            let b: Vec<f64> = (0..=k)
                .map(|a| own + blk.acc[a] + shrink * dot(&blk.transfer[a], after))
                .collect();
            tail_vec.push(b);
        }
        tail_vec.reverse();
        let mut tail_scalar = vec![0.0; first + 1];
        tail_scalar[first] = tail_vec[0][n0.min(k)];
        for i in (0..first).rev() {
            let t = times[i];
            tail_scalar[i] = self.period1_term(t, pathloss[i], n0 - i) + m.discount.powi(t as i32) * tail_scalar[i + 1];
        }
        ValueScan {
            fwd: self.forward(&pathloss, &times, n0, n0),
            fwd_removed: if n0 > 0 {
                self.forward(&pathloss, &times, n0 - 1, n0 - 1)
            } else {
                Vec::new()
            },
            vf: self,
            pathloss,
            first,
            n0,
            tail_scalar,
            tail_vec,
        }
    }
}

#[derive(Debug, Clone)]
struct Prefix {
    disc: f64,
    acc: f64,
    /// Counting distribution, once period 2 has started.
    u: Option<Vec<f64>>,
}

/// Values of a state and of every edit that shortens or removes one queue,
/// each edit in `O(K²)` after an `O(n·K²)` setup. Agrees with
/// [`ValueFunction::value`] on the edited state up to roundoff.
#[derive(Debug, Clone)]
pub struct ValueScan<'a> {
    vf: &'a ValueFunction,
    pathloss: Vec<f64>,
    first: usize,
    n0: usize,
    fwd: Vec<Prefix>,
    /// Prefixes under the boundary of a state one device shorter.
    fwd_removed: Vec<Prefix>,
    /// Suffix values from position `i ≤ first`, entered with discount 1.
    tail_scalar: Vec<f64>,
    /// Suffix values from position `first + i` per counting state.
    tail_vec: Vec<Vec<f64>>,
}

impl ValueScan<'_> {
    pub fn len(&self) -> usize {
        self.n0
    }

    pub fn is_empty(&self) -> bool {
        self.n0 == 0
    }

    pub fn base(&self) -> f64 {
        self.tail_scalar[0]
    }

    fn tail(&self, i: usize) -> &[f64] {
        &self.tail_vec[i - self.first]
    }

    /// Value after device `index` is left with `queue` segments; 0 removes it.
    pub fn edit(&self, index: usize, queue: u32) -> f64 {
        assert!(index < self.n0, "device index out of range");
        let vf = self.vf;
        let m = &vf.params.model;
        if queue == 0 {
            let f = &self.fwd_removed[index];
            return if index + 1 < self.first {
                f.acc + f.disc * self.tail_scalar[index + 1]
            } else {
                let u = f.u.as_ref().expect("period 2 carries a distribution");
                f.acc + f.disc * dot(u, self.tail(index + 1))
            };
        }
        let t = frames_at_efficiency(queue, vf.efficiency, m);
        let f = &self.fwd[index];
        let shrink = m.discount.powi(t as i32);
        if index < self.first {
            f.acc
                + f.disc
                    * (vf.period1_term(t, self.pathloss[index], self.n0 - index) + shrink * self.tail_scalar[index + 1])
        } else {
            let u = f.u.as_ref().expect("period 2 carries a distribution");
            let blk = vf.block(t);
            let moved = vec_mat(u, &blk.transfer);
            f.acc
                + f.disc
                    * (vf.geometric(t) * m.receive_power_w / self.pathloss[index]
                        + dot(u, &blk.acc)
                        + shrink * dot(&moved, self.tail(index + 1)))
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Value functions keyed by every parameter they depend on.
#[derive(Debug, Default)]
pub struct ValueCache {
    entries: HashMap<CacheKey, Arc<ValueFunction>>,
}

impl ValueCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_build(&mut self, params: &ValueParams) -> Result<Arc<ValueFunction>> {
        let key = params.cache_key();
        if let Some(v) = self.entries.get(&key) {
            return Ok(Arc::clone(v));
        }
        let v = Arc::new(ValueFunction::new(params)?);
        self.entries.insert(key, Arc::clone(&v));
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Expected local cost of one arrival averaged over task sizes at a known
/// `(f, ℓ)`; the observation used by the online `C̄` estimator.
pub fn local_cost_over_sizes(cpu_freq_hz: f64, cycles_per_bit: f64, params: &ModelParams) -> f64 {
    (params.seg_min..=params.seg_max)
        .map(|d| local_cost(d, cpu_freq_hz, cycles_per_bit, params))
        .sum::<f64>()
        / params.seg_count() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn desk() -> ModelParams {
        ModelParams::desk_scale()
    }

    #[test]
    fn e1_reference_values() {
        // E1(1) = 0.21938393439552027, E1(0.1) = 1.8229239584193906,
        // E1(5) = 0.0011482955912753257.
        for (x, e1) in [(1.0, 0.219_383_934_395_520_27), (0.1, 1.822_923_958_419_390_6), (5.0, 0.001_148_295_591_275_325_7)] {
            let got = scaled_exp1(x) * (-x).exp();
            assert!((got - e1).abs() < 1e-14 * e1.max(1.0), "x={x}: {got} vs {e1}");
        }
    }

    #[test]
    fn efficiency_examples() {
        let p = ModelParams::paper_scale();
        assert!(ergodic_spectral_efficiency(1e-20, &p) < 1e-10);
        let e = ergodic_spectral_efficiency(2.8e-9, &p);
        assert!((e - 1.608).abs() < 2e-3, "{e}");
        let (q, _) = ergodic_spectral_efficiency_quadrature(2.8e-9, &p);
        assert!((q - e).abs() < 1e-6, "{q} vs {e}");
        assert!(ergodic_spectral_efficiency(3e-9, &p) > e);
    }

    #[test]
    fn transmission_frame_examples() {
        let p = ModelParams::paper_scale();
        assert_eq!(transmission_frames(250, 2.8e-9, &p), 16);
        // One frame of ergodic bits exactly.
        let eff = ergodic_spectral_efficiency(2.8e-9, &p);
        let exact = ModelParams {
            segment_bits: eff * p.bits_per_frame_per_bps_hz() / 7.0,
            ..p.clone()
        };
        assert_eq!(transmission_frames(7, 2.8e-9, &exact), 1);
        assert!((1..400).all(|q| transmission_frames(q + 1, 2.8e-9, &p) >= transmission_frames(q, 2.8e-9, &p)));
    }

    #[test]
    fn degenerate_local_cost_is_a_point() {
        let p = ModelParams {
            seg_min: 250,
            seg_max: 250,
            cpu_freq_range_hz: (0.8e9, 0.8e9),
            cycles_per_bit_range: (580.0, 580.0),
            ..ModelParams::paper_scale()
        };
        let c = expected_local_cost(&p);
        let point = local_cost(250, 0.8e9, 580.0, &p);
        assert!((c - point).abs() < 1e-12 * point);
    }

    #[test]
    fn local_cost_matches_fine_grid() {
        let p = ModelParams {
            seg_min: 200,
            seg_max: 204,
            ..ModelParams::paper_scale()
        };
        let exact = expected_local_cost(&p);
        let n = 400;
        let mut grid = 0.0;
        for d in p.seg_min..=p.seg_max {
            for i in 0..n {
                let f = 0.6e9 + 0.4e9 * (i as f64 + 0.5) / n as f64;
                for j in 0..n {
                    let l = 560.0 + 40.0 * (j as f64 + 0.5) / n as f64;
                    grid += local_cost(d, f, l, &p);
                }
            }
        }
        grid /= (n * n) as f64 * p.seg_count() as f64;
        assert!((exact - grid).abs() < 1e-4 * exact, "{exact} vs {grid}");
    }

    #[test]
    fn empty_state_is_reference_value() {
        let vf = ValueFunction::new(&ValueParams::from_model(&desk())).unwrap();
        let b = vf.breakdown(&CompactState::empty());
        assert_eq!(b.w1, 0.0);
        assert_eq!(b.w2, 0.0);
        assert_eq!(b.w3, vf.chain_values()[0]);
        assert!(b.w3 > 0.0);
    }

    #[test]
    fn zero_costs_give_zero_value() {
        let p = desk();
        // No arrivals from empty: nothing ever costs anything.
        let vp = ValueParams::with_estimates(&p, 0.0, 1.0, 0.0);
        let vf = ValueFunction::new(&vp).unwrap();
        assert!(vf.value(&CompactState::empty()).abs() < 1e-14);
    }

    #[test]
    fn single_extra_device_by_hand() {
        let p = ModelParams {
            admission_threshold: 1,
            ..desk()
        };
        let vp = ValueParams::from_model(&p);
        let vf = ValueFunction::new(&vp).unwrap();
        let s = CompactState::from_queues(&[(1e-6, 6), (2e-6, 4)]).unwrap();
        let t = vf.transmission_times(&s);
        let g = p.discount;
        let geo = |n: u32| (1.0 - g.powi(n as i32)) / (1.0 - g);
        let w1 = geo(t[0]) * (p.receive_power_w / 1e-6 + 2.0 * p.latency_weight + vp.arrival_prob * vp.cbar);
        assert!((vf.w1(&s) - w1).abs() < 1e-12 * w1);
    }

    #[test]
    fn no_arrivals_period_two_is_pure_holding() {
        let p = ModelParams {
            arrival_prob: 0.0,
            ..desk()
        };
        let vp = ValueParams::from_model(&p);
        let vf = ValueFunction::new(&vp).unwrap();
        let s = CompactState::from_queues(&[(1e-5, 5), (1e-6, 3)]).unwrap();
        let t = vf.transmission_times(&s);
        let g = p.discount;
        let mut oracle = 0.0;
        let mut frame = 0;
        for (i, e) in s.entries().iter().enumerate() {
            for _ in 0..t[i] {
                let present = (s.len() - i) as f64;
                oracle += g.powi(frame) * (present * p.latency_weight + p.receive_power_w / e.pathloss);
                frame += 1;
            }
        }
        assert!((vf.w2(&s) - oracle).abs() < 1e-12 * oracle);
        assert_eq!(vf.w1(&s), 0.0);
        assert!(vf.w3(&s).abs() < 1e-14);
    }

    #[test]
    fn cache_is_bit_exact() {
        let vp = ValueParams::from_model(&desk());
        let mut cache = ValueCache::new();
        let a = cache.get_or_build(&vp).unwrap();
        let b = cache.get_or_build(&vp).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.len(), 1);
        let fresh = ValueFunction::new(&vp).unwrap();
        let s = CompactState::from_queues(&[(1e-6, 6), (3e-7, 2), (1e-5, 5), (1e-4, 1)]).unwrap();
        assert_eq!(a.value(&s).to_bits(), fresh.value(&s).to_bits());
        cache.get_or_build(&vp.with_receive_power(3e-9)).unwrap();
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn entry_distribution_sums_to_one() {
        let vf = ValueFunction::new(&ValueParams::from_model(&desk())).unwrap();
        let s = CompactState::from_queues(&[(1e-6, 6), (3e-7, 2), (1e-5, 5), (1e-4, 1)]).unwrap();
        let v = vf.entry_distribution(&s);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let w3 = vf.w3(&s);
        let total: u32 = vf.transmission_times(&s).iter().sum();
        let direct = desk().discount.powi(total as i32) * dot(&v, vf.chain_values());
        assert!((w3 - direct).abs() < 1e-12 * direct);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn value_is_nonnegative(
            queues in proptest::collection::vec((1u32..7, -9.0f64..-3.0), 0..6),
        ) {
            let vf = ValueFunction::new(&ValueParams::from_model(&desk())).unwrap();
            let items: Vec<(f64, u32)> = queues.iter().map(|&(q, lp)| (10f64.powf(lp), q)).collect();
            prop_assert!(vf.value(&CompactState::from_queues(&items).unwrap()) >= 0.0);
        }

        #[test]
        fn scan_edits_match_direct_evaluation(
            k in 1usize..5,
            seg_max in 6u32..80,
            queues in proptest::collection::vec((1u32..100, -9.0f64..-3.0), 0..9),
        ) {
            let model = ModelParams { admission_threshold: k, seg_min: 2, seg_max, ..desk() };
            let vf = ValueFunction::new(&ValueParams::from_model(&model)).unwrap();
            let items: Vec<(f64, u32)> = queues.iter().map(|&(q, lp)| (10f64.powf(lp), q)).collect();
            let s = CompactState::from_queues(&items).unwrap();
            let scan = vf.scan(&s);
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
            prop_assert!(close(scan.base(), vf.value(&s)), "{} vs {}", scan.base(), vf.value(&s));
            for (j, &(_, q)) in items.iter().enumerate() {
                for q2 in [0, 1, q / 2, q.saturating_sub(1), q] {
                    let mut edited = items.clone();
                    if q2 == 0 {
                        edited.remove(j);
                    } else {
                        edited[j].1 = q2;
                    }
                    let direct = vf.value(&CompactState::from_queues(&edited).unwrap());
                    prop_assert!(close(scan.edit(j, q2), direct), "j={} q2={}: {} vs {}", j, q2, scan.edit(j, q2), direct);
                }
            }
        }
    }
}
