//! The discounted reward chains behind the baseline value function.
//!
//! The steady period is a chain on `(ζ, ξ)`: ζ edge devices, the head of
//! which still has ξ segments to send. Under channel inversion the head's
//! received SNR is `p_r·|h|²/σ²` whatever its pathloss, so the head sends at
//! least `x` segments with probability `s(x) = exp(-α(x)/p_r)`. Every entry
//! of Φ is a constant times either `s(ξ)` or `s(ξ-ξ')-s(ξ-ξ'+1)`, and
//! the same builder produces dΦ/dp_r by swapping `s` for its derivative.
//!
//! The transitional period uses a (K+1)-state counting chain for the number
//! of edge devices while the initial devices finish.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Shape of the `(ζ, ξ)` chain: `n = K·d_max + 1` states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChainIndex {
    pub k: usize,
    pub d_max: usize,
}

impl ChainIndex {
    pub fn new(k: usize, d_max: usize) -> Self {
        Self { k, d_max }
    }

    pub fn from_params(params: &ModelParams) -> Self {
        Self::new(params.admission_threshold, params.seg_max as usize)
    }

    pub fn dim(&self) -> usize {
        self.k * self.d_max + 1
    }

    /// One-based index `ε(ζ,ξ)`: 1 for the empty state, otherwise
    /// `(ζ-1)·d_max + ξ + 1`.
    pub fn epsilon(&self, zeta: usize, xi: usize) -> Result<usize> {
        let valid = if zeta == 0 {
            xi == 0
        } else {
            zeta <= self.k && (1..=self.d_max).contains(&xi)
        };
        if !valid {
            return Err(Error::InvalidChainIndex { zeta, xi });
        }
        Ok(self.slot(zeta, xi) + 1)
    }

    /// Zero-based position of `(ζ,ξ)`, unchecked.
    #[inline]
    pub fn slot(&self, zeta: usize, xi: usize) -> usize {
        if zeta == 0 {
            0
        } else {
            (zeta - 1) * self.d_max + xi
        }
    }
}

/// `α(x) = (2^{x·b_s/(W·T_s)} - 1)·σ²`: the received power at which
/// exactly `x` segments fit in one frame.
pub fn alpha(x: u32, params: &ModelParams) -> f64 {
    let exponent = x as f64 * params.segment_bits / params.bits_per_frame_per_bps_hz();
    (exponent * std::f64::consts::LN_2).exp_m1() * params.noise_power_w
}

/// Probability that the head sends at least `x` segments, for `x = 0..=d_max+1`.
fn success_table(params: &ModelParams, p_r: f64) -> Vec<f64> {
    (0..=params.seg_max + 1).map(|x| (-alpha(x, params) / p_r).exp()).collect()
}

/// `d s(x)/d p_r = α(x)/p_r² · s(x)`.
fn success_derivative_table(params: &ModelParams, p_r: f64) -> Vec<f64> {
    (0..=params.seg_max + 1)
        .map(|x| {
            let a = alpha(x, params);
            a / (p_r * p_r) * (-a / p_r).exp()
        })
        .collect()
}

/// Fills Φ (or its derivative) from a table of `s(x)` values. `row0` scales
/// the constant transitions out of the empty state (1 for Φ, 0 for dΦ).
fn fill_chain(params: &ModelParams, p_n: f64, s: &[f64], row0: f64) -> Mat<f64> {
    let idx = ChainIndex::from_params(params);
    let k = idx.k;
    let (d_min, d_max) = (params.seg_min as usize, params.seg_max as usize);
    let per_size = 1.0 / params.seg_count() as f64;
    let mut m = Mat::<f64>::zeros(idx.dim(), idx.dim());

    m[(0, 0)] = row0 * (1.0 - p_n);
    for xi in d_min..=d_max {
        m[(0, idx.slot(1, xi))] = row0 * p_n * per_size;
    }

    for zeta in 1..=k {
        let saturated = zeta == k;
        // At ζ = K arrivals are routed local, so the chain ignores them.
        let (stay, grow) = if saturated { (1.0, 0.0) } else { (1.0 - p_n, p_n) };
        for xi in 1..=d_max {
            let row = idx.slot(zeta, xi);
            // Partial transmission: ξ-ξ' segments sent.
            for xi_next in 1..=xi {
                let q = s[xi - xi_next] - s[xi - xi_next + 1];
                m[(row, idx.slot(zeta, xi_next))] += stay * q;
                if grow > 0.0 {
                    m[(row, idx.slot(zeta + 1, xi_next))] += grow * q;
                }
            }
            // Head finishes: the next device starts with a full task.
            let done = s[xi];
            if zeta == 1 {
                m[(row, 0)] += stay * done;
            } else {
                for xi_next in d_min..=d_max {
                    m[(row, idx.slot(zeta - 1, xi_next))] += stay * done * per_size;
                }
            }
            if grow > 0.0 {
                for xi_next in d_min..=d_max {
                    m[(row, idx.slot(zeta, xi_next))] += grow * done * per_size;
                }
            }
        }
    }
    m
}

/// Transition matrix Φ of the steady-period chain under the baseline
/// policy with receive power `p_r` and arrival probability `p_n`.
pub fn build_phi(params: &ModelParams, p_r: f64, p_n: f64) -> Result<Mat<f64>> {
    check_chain_inputs(params, p_r, p_n)?;
    Ok(fill_chain(params, p_n, &success_table(params, p_r), 1.0))
}

/// Entrywise derivative dΦ/dp_r. Rows sum to zero.
pub fn build_dphi(params: &ModelParams, p_r: f64, p_n: f64) -> Result<Mat<f64>> {
    check_chain_inputs(params, p_r, p_n)?;
    Ok(fill_chain(params, p_n, &success_derivative_table(params, p_r), 0.0))
}

fn check_chain_inputs(params: &ModelParams, p_r: f64, p_n: f64) -> Result<()> {
    params.validate()?;
    if !(p_r.is_finite() && p_r > 0.0) {
        return Err(Error::InvalidParams(format!("receive power must be > 0, got {p_r}")));
    }
    if !(0.0..=1.0).contains(&p_n) {
        return Err(Error::InvalidParams(format!("arrival probability must lie in [0,1], got {p_n}")));
    }
    Ok(())
}

/// Expected per-frame cost of each chain state: holding cost `w·ζ`, mean
/// head power `p_r·ϖ`, and at ζ = K the expected local cost of an arrival.
pub fn build_c(params: &ModelParams, p_r: f64, p_n: f64, varpi: f64, cbar: f64) -> Vec<f64> {
    let idx = ChainIndex::from_params(params);
    let mut c = vec![0.0; idx.dim()];
    for zeta in 1..=idx.k {
        let mut cost = params.latency_weight * zeta as f64 + p_r * varpi;
        if zeta == idx.k {
            cost += p_n * cbar;
        }
        c[idx.slot(zeta, 1)..=idx.slot(zeta, idx.d_max)].fill(cost);
    }
    c
}

/// dc/dp_r = `[0, ϖ, …, ϖ]`.
pub fn build_dc(varpi: f64, index: &ChainIndex) -> Vec<f64> {
    let mut dc = vec![varpi; index.dim()];
    dc[0] = 0.0;
    dc
}

/// Φ and c for one parameter set.
#[derive(Debug, Clone)]
pub struct ChainMatrices {
    pub index: ChainIndex,
    pub phi: Mat<f64>,
    pub c: Vec<f64>,
}

impl ChainMatrices {
    pub fn build(params: &ModelParams, p_r: f64, p_n: f64, varpi: f64, cbar: f64) -> Result<Self> {
        Ok(Self {
            index: ChainIndex::from_params(params),
            phi: build_phi(params, p_r, p_n)?,
            c: build_c(params, p_r, p_n, varpi, cbar),
        })
    }

    /// Largest `|row sum - 1|` of Φ.
    pub fn max_row_deviation(&self) -> f64 {
        max_row_sum_deviation(&self.phi, 1.0)
    }
}

/// Largest `|Σ_j M[i,j] - target|` over rows.
pub fn max_row_sum_deviation(m: &Mat<f64>, target: f64) -> f64 {
    (0..m.nrows())
        .map(|i| {
            let sum: f64 = (0..m.ncols()).map(|j| m[(i, j)]).sum();
            (sum - target).abs()
        })
        .fold(0.0, f64::max)
}

/// LU factorisation of `I - γΦ`, reusable for several right-hand sides and
/// for transposed solves.
pub struct DiscountedSolver {
    a: Mat<f64>,
    lu: PartialPivLu<f64>,
}

impl std::fmt::Debug for DiscountedSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscountedSolver").field("n", &self.a.nrows()).finish()
    }
}

/// Relative residual bound for accepting a solve.
pub const SOLVE_TOLERANCE: f64 = 1e-9;

impl DiscountedSolver {
    pub fn new(phi: &Mat<f64>, gamma: f64) -> Self {
        let n = phi.nrows();
        let a = Mat::<f64>::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - gamma * phi[(i, j)]);
        let lu = a.partial_piv_lu();
        Self { a, lu }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `x` with `(I - γΦ) x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_checked(b, false)
    }

    /// `y` with `(I - γΦ)ᵀ y = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_checked(b, true)
    }

    fn solve_checked(&self, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
        let n = self.dim();
        assert_eq!(b.len(), n, "right-hand side has the wrong length");
        let rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
        let x = if transpose {
            self.lu.solve_transpose(&rhs)
        } else {
            self.lu.solve(&rhs)
        };
        let x: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        let residual = (0..n)
            .map(|i| {
                let ax: f64 = if transpose {
                    (0..n).map(|j| self.a[(j, i)] * x[j]).sum()
                } else {
                    (0..n).map(|j| self.a[(i, j)] * x[j]).sum()
                };
                (ax - b[i]).abs()
            })
            .fold(0.0, f64::max);
        let bound = SOLVE_TOLERANCE * b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if residual > bound || !residual.is_finite() {
            return Err(Error::SolverResidual { residual, bound });
        }
        Ok(x)
    }

    pub fn residual_of(&self, x: &[f64], b: &[f64]) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| ((0..n).map(|j| self.a[(i, j)] * x[j]).sum::<f64>() - b[i]).abs())
            .fold(0.0, f64::max)
    }
}

/// `x = (I - γΦ)⁻¹ c`, rejected when the residual exceeds `10⁻⁹·‖c‖∞`.
pub fn solve_discounted(phi: &Mat<f64>, c: &[f64], gamma: f64) -> Result<Vec<f64>> {
    DiscountedSolver::new(phi, gamma).solve(c)
}

/// Counting chain of the transitional period: index `i` means `i` edge
/// devices (the transmitting initial device included).
#[derive(Debug, Clone, PartialEq)]
pub struct SmallChain {
    /// Starting distribution: unit mass at `min(|U_E|, K)`.
    pub u: Vec<f64>,
    /// Per-frame cost by device count: `w·i`, plus `P_N·C̄` at `i = K`.
    pub gvec: Vec<f64>,
    /// Departure of the transmitting device: `i -> i-1`, `0 -> 0`.
    pub pmat: Vec<Vec<f64>>,
    /// One frame of arrivals: `i -> i+1` with `P_N` below K.
    pub mmat: Vec<Vec<f64>>,
}

impl SmallChain {
    pub fn build(params: &ModelParams, p_n: f64, cbar: f64, initial_devices: usize) -> Self {
        let k = params.admission_threshold;
        let mut u = vec![0.0; k + 1];
        u[initial_devices.min(k)] = 1.0;
        let mut gvec: Vec<f64> = (0..=k).map(|i| params.latency_weight * i as f64).collect();
        gvec[k] += p_n * cbar;
        let mut pmat = vec![vec![0.0; k + 1]; k + 1];
        pmat[0][0] = 1.0;
        for i in 1..=k {
            pmat[i][i - 1] = 1.0;
        }
        let mut mmat = vec![vec![0.0; k + 1]; k + 1];
        for j in 0..k {
            mmat[j][j] = 1.0 - p_n;
            mmat[j][j + 1] = p_n;
        }
        mmat[k][k] = 1.0;
        Self { u, gvec, pmat, mmat }
    }

    pub fn k(&self) -> usize {
        self.u.len() - 1
    }
}

/// `xᵀA` for a small dense matrix.
pub fn vec_mat(x: &[f64], a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for (xi, row) in x.iter().zip(a) {
        if *xi != 0.0 {
            for (o, aij) in out.iter_mut().zip(row) {
                *o += xi * aij;
            }
        }
    }
    out
}

/// `((uᵀ·M^T)·P)ᵀ`.
pub fn propagate_u(u: &[f64], mmat: &[Vec<f64>], pmat: &[Vec<f64>], frames: u32) -> Vec<f64> {
    let mut x = u.to_vec();
    for _ in 0..frames {
        x = vec_mat(&x, mmat);
    }
    vec_mat(&x, pmat)
}

/// Distribution of the steady-period chain at its first frame. `u_last` is
/// the counting distribution at the start of the last initial device's
/// transmission, `None` when the edge set started empty.
pub fn build_v(
    u_last: Option<&[f64]>,
    mmat: &[Vec<f64>],
    pmat: &[Vec<f64>],
    t_last: u32,
    index: &ChainIndex,
    params: &ModelParams,
) -> Vec<f64> {
    let mut v = vec![0.0; index.dim()];
    let Some(u_last) = u_last else {
        v[0] = 1.0;
        return v;
    };
    let counts = propagate_u(u_last, mmat, pmat, t_last);
    v[0] = counts[0];
    let per_size = 1.0 / params.seg_count() as f64;
    for (zeta, mass) in counts.iter().enumerate().skip(1) {
        for xi in params.seg_min as usize..=params.seg_max as usize {
            v[index.slot(zeta, xi)] = mass * per_size;
        }
    }
    v
}
