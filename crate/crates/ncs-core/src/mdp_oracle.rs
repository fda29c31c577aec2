//! Brute-force relative value iteration on discretized state spaces.
//!
//! The tables use the reduced Bellman form: the i.i.d. channel state is observed
//! before acting, so
//!
//! θτ + h(s) = Σ_j p_j min_a [c(s, j, a) + Σ_s' P(s' | s, j, a) h(s')].
//!
//! A single channel node with weight 1 gives an ordinary average-cost MDP.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;
#[allow(unused_imports)]
use num_traits::Float;

use crate::channel::SigmaStarDistribution;
use crate::linalg::{all_finite, solve_discrete_lyapunov};
use crate::quadrature::gauss_hermite_normal;
use crate::{Error, Mat, Result, Vector};

/// Action index meaning "stay silent".
pub const IDLE: usize = 0;
/// Action index meaning "transmit".
pub const TRANSMIT: usize = 1;

/// Weight of the original kernel in the aperiodicity transform βP + (1 − β)I.
const APERIODICITY: f64 = 0.9;

/// Sorted one-dimensional grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub points: Vec<f64>,
}

impl Grid {
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::param(format!("grid needs n >= 2 and hi > lo, got n = {n}, [{lo}, {hi}]")));
        }
        let h = (hi - lo) / (n - 1) as f64;
        Ok(Self { points: (0..n).map(|i| lo + h * i as f64).collect() })
    }

    pub fn geometric(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0) {
            return Err(Error::param("geometric grid needs a positive lower end"));
        }
        let g = Self::uniform(lo.ln(), hi.ln(), n)?;
        Ok(Self { points: g.points.iter().map(|v| v.exp()).collect() })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.points[0] && x <= self.points[self.len() - 1]
    }

    /// Linear interpolation weights, clamped at the ends. The flag reports clamping.
    pub fn interpolate(&self, x: f64) -> ([(usize, f64); 2], bool) {
        let n = self.len();
        if !(x > self.points[0]) {
            return ([(0, 1.0), (0, 0.0)], x < self.points[0]);
        }
        if x >= self.points[n - 1] {
            return ([(n - 1, 1.0), (n - 1, 0.0)], x > self.points[n - 1]);
        }
        let i = self.points.partition_point(|&p| p <= x) - 1;
        let t = (x - self.points[i]) / (self.points[i + 1] - self.points[i]);
        ([(i, 1.0 - t), (i + 1, t)], false)
    }

    pub fn nearest(&self, x: f64) -> (usize, bool) {
        let ([(i, wi), (j, wj)], out) = self.interpolate(x);
        (if wj > wi { j } else { i }, out)
    }
}

/// Equal-mass channel nodes: σ* at the midpoint quantiles of `n` bins.
pub fn quantile_nodes(dist: &SigmaStarDistribution, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|j| (dist.quantile((j as f64 + 0.5) / n as f64), 1.0 / n as f64)).collect()
}

/// Cost and kernel tables in the reduced Bellman form. Kernel rows live in a shared
/// CSR pool so actions that ignore the channel can reuse one row.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedMdp {
    pub n_states: usize,
    pub node_weights: Vec<f64>,
    pub n_actions: usize,
    pub tau: f64,
    cost: Vec<f64>,
    row_of: Vec<u32>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    probs: Vec<f64>,
}

/// Incremental construction of a [`DiscretizedMdp`].
#[derive(Debug, Clone)]
pub struct MdpBuilder {
    mdp: DiscretizedMdp,
    filled: Vec<bool>,
    scratch: Vec<(u32, f64)>,
}

pub type RowId = u32;

const ROW_SUM_TOL: f64 = 1e-9;

impl MdpBuilder {
    pub fn new(n_states: usize, node_weights: Vec<f64>, n_actions: usize, tau: f64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || node_weights.is_empty() {
            return Err(Error::param("MDP needs at least one state, action and channel node"));
        }
        let total: f64 = node_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || node_weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::param(format!("channel node weights must be a distribution (sum {total})")));
        }
        if !(tau > 0.0) {
            return Err(Error::param("slot duration must be positive"));
        }
        let slots = n_states * node_weights.len() * n_actions;
        Ok(Self {
            mdp: DiscretizedMdp {
                n_states,
                n_actions,
                tau,
                cost: vec![0.0; slots],
                row_of: vec![0; slots],
                row_ptr: vec![0],
                cols: Vec::new(),
                probs: Vec::new(),
                node_weights,
            },
            filled: vec![false; slots],
            scratch: Vec::new(),
        })
    }

    /// Adds a kernel row; duplicate successors are merged.
    pub fn push_row(&mut self, entries: &[(usize, f64)]) -> Result<RowId> {
        self.scratch.clear();
        for &(s, p) in entries {
            if s >= self.mdp.n_states {
                return Err(Error::dim(format!("successor {s} out of range")));
            }
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::numeric(format!("invalid transition probability {p}")));
            }
            if p > 0.0 {
                self.scratch.push((s as u32, p));
            }
        }
        self.scratch.sort_by_key(|e| e.0);
        let mut sum = 0.0;
        let start = self.mdp.cols.len();
        for &(s, p) in &self.scratch {
            sum += p;
            if self.mdp.cols.len() > start && *self.mdp.cols.last().unwrap() == s {
                *self.mdp.probs.last_mut().unwrap() += p;
            } else {
                self.mdp.cols.push(s);
                self.mdp.probs.push(p);
            }
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            self.mdp.cols.truncate(start);
            self.mdp.probs.truncate(start);
            return Err(Error::numeric(format!("kernel row sums to {sum}")));
        }
        self.mdp.row_ptr.push(self.mdp.cols.len());
        Ok((self.mdp.row_ptr.len() - 2) as RowId)
    }

    pub fn set(&mut self, state: usize, node: usize, action: usize, cost: f64, row: RowId) -> Result<()> {
        if !(cost >= 0.0 && cost.is_finite()) {
            return Err(Error::numeric(format!("stage cost must be finite and nonnegative, got {cost}")));
        }
        if row as usize + 1 >= self.mdp.row_ptr.len() {
            return Err(Error::dim("unknown kernel row"));
        }
        let k = self.mdp.index(state, node, action);
        self.mdp.cost[k] = cost;
        self.mdp.row_of[k] = row;
        self.filled[k] = true;
        Ok(())
    }

    pub fn finish(self) -> Result<DiscretizedMdp> {
        if let Some(k) = self.filled.iter().position(|f| !f) {
            return Err(Error::param(format!("state-node-action slot {k} was never set")));
        }
        Ok(self.mdp)
    }
}

impl DiscretizedMdp {
    pub fn n_nodes(&self) -> usize {
        self.node_weights.len()
    }

    fn index(&self, state: usize, node: usize, action: usize) -> usize {
        (state * self.n_nodes() + node) * self.n_actions + action
    }

    pub fn cost(&self, state: usize, node: usize, action: usize) -> f64 {
        self.cost[self.index(state, node, action)]
    }

    /// Successor distribution as (state, probability) pairs.
    pub fn row(&self, state: usize, node: usize, action: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_of[self.index(state, node, action)] as usize;
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()].iter().map(|&c| c as usize).zip(self.probs[range].iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Approximate heap footprint in bytes.
    pub fn memory_bytes(&self) -> usize {
        self.cost.len() * 12 + self.cols.len() * 12 + self.row_ptr.len() * 8
    }

    fn q_value(&self, state: usize, node: usize, action: usize, h: &[f64]) -> f64 {
        let k = self.index(state, node, action);
        let r = self.row_of[k] as usize;
        let mut v = self.cost[k];
        for e in self.row_ptr[r]..self.row_ptr[r + 1] {
            v += self.probs[e] * h[self.cols[e] as usize];
        }
        v
    }
}

/// Predicted footprint before building, for refusals.
pub fn estimate_bytes(n_states: usize, n_nodes: usize, n_actions: usize, rows: usize, nnz_per_row: usize) -> usize {
    n_states * n_nodes * n_actions * 12 + rows * (nnz_per_row * 12 + 8)
}

fn check_budget(bytes: usize, budget: usize, what: &str) -> Result<()> {
    if bytes > budget {
        return Err(Error::Budget(format!(
            "{what} needs about {} MiB of tables, budget is {} MiB; shrink the grids",
            bytes >> 20,
            budget >> 20
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViaSolution {
    /// Average cost per unit time.
    pub theta: f64,
    pub values: Vec<f64>,
    /// Greedy action per (state, channel node).
    pub policy: Vec<u8>,
    pub n_nodes: usize,
    pub span_history: Vec<f64>,
    pub iterations: usize,
    pub reference: usize,
}

impl ViaSolution {
    pub fn action(&self, state: usize, node: usize) -> usize {
        self.policy[state * self.n_nodes + node] as usize
    }

    /// Table as CSV: state,node,action,value.
    pub fn policy_csv(&self) -> String {
        let mut out = String::from("state,node,action,value\n");
        for (k, &a) in self.policy.iter().enumerate() {
            let s = k / self.n_nodes;
            let _ = writeln!(out, "{},{},{},{:.17e}", s, k % self.n_nodes, a, self.values[s]);
        }
        out
    }
}

/// Relative value iteration with the aperiodicity transform; stops when the span of
/// successive differences is at most `tol` times the gain estimate.
pub fn relative_value_iteration(mdp: &DiscretizedMdp, tol: f64, max_iter: usize, reference: usize) -> Result<ViaSolution> {
    if reference >= mdp.n_states {
        return Err(Error::param("reference state out of range"));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tolerance must be positive"));
    }
    let n = mdp.n_states;
    let nodes = mdp.n_nodes();
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut policy = vec![0u8; n * nodes];
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in 0..n {
            let mut acc = 0.0;
            for j in 0..nodes {
                let mut best = f64::INFINITY;
                let mut arg = 0;
                for a in 0..mdp.n_actions {
                    let q = mdp.q_value(s, j, a, &h);
                    if q < best {
                        best = q;
                        arg = a;
                    }
                }
                acc += mdp.node_weights[j] * best;
                policy[s * nodes + j] = arg as u8;
            }
            let t = APERIODICITY * acc + (1.0 - APERIODICITY) * h[s];
            let d = t - h[s];
            lo = lo.min(d);
            hi = hi.max(d);
            next[s] = t;
        }
        let span = hi - lo;
        let gain = 0.5 * (hi + lo);
        history.push(span);
        if !span.is_finite() {
            return Err(Error::numeric("value iteration produced non-finite values"));
        }
        let offset = next[reference];
        for (hv, nv) in h.iter_mut().zip(&next) {
            *hv = nv - offset;
        }
        if span <= tol * gain.abs() || span == 0.0 {
            return Ok(ViaSolution {
                theta: gain / APERIODICITY / mdp.tau,
                values: h,
                policy,
                n_nodes: nodes,
                span_history: history,
                iterations: it,
                reference,
            });
        }
    }
    let residual = history.last().copied().unwrap_or(f64::NAN);
    log::warn!("value iteration span trace (last 10): {:?}", &history[history.len().saturating_sub(10)..]);
    Err(Error::NonConvergence { what: "relative value iteration".into(), iterations: max_iter, residual })
}

/// Relative loss of `proposed` against `optimal`, in percent.
pub fn performance_loss(proposed: f64, optimal: f64) -> Result<f64> {
    if !(optimal > 0.0) || !proposed.is_finite() {
        return Err(Error::param(format!("invalid comparison: proposed {proposed}, optimal {optimal}")));
    }
    Ok(100.0 * (proposed - optimal) / optimal)
}

/// Scalar closed loop used as the optimality oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarNcsConfig {
    /// Discrete-time dynamics and noise variance.
    pub a: f64,
    pub w: f64,
    /// Error weight.
    pub s: f64,
    pub f_bar: f64,
    pub lambda: f64,
    pub tau: f64,
    pub delta_max: f64,
    pub n_delta: usize,
    pub sigma_max: f64,
    pub n_sigma: usize,
    pub hermite_nodes: usize,
    pub memory_budget: usize,
}

/// The scalar NCS tables. States are (Δ(n−1), Σ(n)), Δ-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarNcsMdp {
    pub mdp: DiscretizedMdp,
    pub delta_grid: Grid,
    pub sigma_grid: Grid,
    /// σ* value of each channel node.
    pub nodes: Vec<f64>,
    pub config: ScalarNcsConfig,
}

/// Lookup result for a continuous state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableDecision {
    pub transmit: bool,
    pub out_of_range: bool,
}

/// One filter step of the scalar loop: the posterior error Δ given the previous
/// posterior error d, the prior covariance Σ and the effective information
/// J = 2F̄σ* (zero when idle) is Gaussian with these mean factor and variance.
pub fn scalar_error_law(a: f64, w: f64, sigma: f64, j: f64, d: f64) -> (f64, f64) {
    let den = 1.0 + j * sigma;
    (a * d / den, (w + sigma * sigma * j) / (den * den))
}

pub fn discretize_scalar_ncs(cfg: &ScalarNcsConfig, channel: &[(f64, f64)]) -> Result<ScalarNcsMdp> {
    for (name, v) in [("f_bar", cfg.f_bar), ("lambda", cfg.lambda), ("tau", cfg.tau), ("delta_max", cfg.delta_max), ("s", cfg.s)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::param(format!("{name} must be positive, got {v}")));
        }
    }
    if !(cfg.w >= 0.0) || !cfg.a.is_finite() {
        return Err(Error::param("scalar plant needs finite a and nonnegative w"));
    }
    let nodes: Vec<f64> = channel.iter().map(|c| c.0).collect();
    let weights: Vec<f64> = channel.iter().map(|c| c.1).collect();
    let delta_grid = Grid::uniform(-cfg.delta_max, cfg.delta_max, cfg.n_delta)?;
    let sigma_min = cfg.w.max(1e-12);
    let sigma_grid = Grid::geometric(sigma_min, cfg.sigma_max.max(sigma_min * (1.0 + 1e-9)), cfg.n_sigma)?;
    let gh = gauss_hermite_normal(cfg.hermite_nodes.max(1));
    let n_states = cfg.n_delta * cfg.n_sigma;
    let nnz = 4 * gh.0.len();
    let rows = n_states * (channel.len() + 1);
    check_budget(estimate_bytes(n_states, channel.len(), 2, rows, nnz), cfg.memory_budget, "scalar NCS oracle")?;

    let mut b = MdpBuilder::new(n_states, weights, 2, cfg.tau)?;
    let mut entries = Vec::with_capacity(nnz);
    for (id, &d) in delta_grid.points.iter().enumerate() {
        for (is, &sig) in sigma_grid.points.iter().enumerate() {
            let state = id * cfg.n_sigma + is;
            // Idle: no observation.
            let idle = successor_row(cfg, &delta_grid, &sigma_grid, &gh, d, sig, 0.0, &mut entries);
            let idle_row = b.push_row(&entries)?;
            for j in 0..nodes.len() {
                b.set(state, j, IDLE, idle, idle_row)?;
            }
            for (j, &sj) in nodes.iter().enumerate() {
                let g = 2.0 * cfg.f_bar * sj;
                let c = successor_row(cfg, &delta_grid, &sigma_grid, &gh, d, sig, g, &mut entries);
                let row = b.push_row(&entries)?;
                b.set(state, j, TRANSMIT, c + cfg.lambda * cfg.f_bar * cfg.tau, row)?;
            }
        }
    }
    Ok(ScalarNcsMdp { mdp: b.finish()?, delta_grid, sigma_grid, nodes, config: cfg.clone() })
}

/// Fills the kernel row and returns the expected error cost of the slot.
#[allow(clippy::too_many_arguments)]
fn successor_row(
    cfg: &ScalarNcsConfig,
    dg: &Grid,
    sg: &Grid,
    gh: &(Vec<f64>, Vec<f64>),
    d: f64,
    sigma: f64,
    j: f64,
    entries: &mut Vec<(usize, f64)>,
) -> f64 {
    entries.clear();
    let (mean, var) = scalar_error_law(cfg.a, cfg.w, sigma, j, d);
    let sigma_next = cfg.a * cfg.a * sigma / (1.0 + j * sigma) + cfg.w;
    let (sw, _) = sg.interpolate(sigma_next);
    let sd = var.sqrt();
    for (z, wz) in gh.0.iter().zip(&gh.1) {
        let (dw, _) = dg.interpolate(mean + sd * z);
        for &(i, pi) in &dw {
            for &(k, pk) in &sw {
                let p = wz * pi * pk;
                if p > 0.0 {
                    entries.push((i * sg.len() + k, p));
                }
            }
        }
    }
    cfg.s * (mean * mean + var) * cfg.tau
}

impl ScalarNcsMdp {
    pub fn state_index(&self, i_delta: usize, i_sigma: usize) -> usize {
        i_delta * self.sigma_grid.len() + i_sigma
    }

    fn nearest_node(&self, sigma_star: f64) -> usize {
        let mut best = 0;
        for (j, &v) in self.nodes.iter().enumerate() {
            if (v - sigma_star).abs() < (self.nodes[best] - sigma_star).abs() {
                best = j;
            }
        }
        best
    }

    /// Nearest-cell lookup of the solved policy.
    pub fn lookup(&self, sol: &ViaSolution, delta: f64, sigma: f64, sigma_star: f64) -> TableDecision {
        let (i, o1) = self.delta_grid.nearest(delta);
        let (k, o2) = self.sigma_grid.nearest(sigma);
        let a = sol.action(self.state_index(i, k), self.nearest_node(sigma_star));
        TableDecision { transmit: a == TRANSMIT, out_of_range: o1 || o2 }
    }

    /// Cells where transmission stops as |Δ| grows (per Σ cell, channel node and sign).
    pub fn monotonicity_violations(&self, sol: &ViaSolution) -> usize {
        let n = self.delta_grid.len();
        let mid = n / 2;
        let mut count = 0;
        for k in 0..self.sigma_grid.len() {
            for j in 0..self.nodes.len() {
                for dir in [1isize, -1] {
                    let mut seen = false;
                    let mut i = mid as isize;
                    while i >= 0 && (i as usize) < n {
                        let t = sol.action(self.state_index(i as usize, k), j) == TRANSMIT;
                        if seen && !t {
                            count += 1;
                        }
                        seen |= t;
                        i += dir;
                    }
                }
            }
        }
        count
    }
}

/// Channel model of the reduced-state baselines.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaChannel {
    /// Every transmission is received perfectly.
    ErrorFree,
    /// Per channel node (σ*, weight), a transmission is received with probability
    /// 1 − exp(−F̄σ*).
    Dropout(Vec<(f64, f64)>),
}

/// Reduced-state baseline on Θ(n) = AΔ(n−1) + w(n−1): a received transmission
/// resets the error, an idle or lost one leaves Δ(n) = Θ(n).
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaConfig {
    pub a: Mat,
    pub w: Mat,
    pub s: Mat,
    pub f_bar: f64,
    pub lambda: f64,
    pub tau: f64,
    /// Per-coordinate half-width of the Θ grid.
    pub theta_max: Vec<f64>,
    pub n_theta: usize,
    pub hermite_nodes: usize,
    pub memory_budget: usize,
}

impl ThetaConfig {
    /// Half-widths from the dormant stationary law (when A is stable) or from the
    /// point where one idle slot costs as much as a transmission, times `factor`.
    pub fn default_range(a: &Mat, w: &Mat, s: &Mat, f_bar: f64, lambda: f64, factor: f64) -> Vec<f64> {
        let l = a.nrows();
        let cross = (lambda * f_bar / s.trace().max(1e-300) * l as f64).sqrt();
        let stat = solve_discrete_lyapunov(a, w).ok().filter(|p| all_finite(p) && crate::linalg::spectral_radius(a) < 1.0);
        (0..l)
            .map(|i| {
                let base = stat.as_ref().map_or(cross, |p| (3.0 * p[(i, i)].sqrt()).min(cross));
                factor * base.max(3.0 * w[(i, i)].sqrt())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMdp {
    pub mdp: DiscretizedMdp,
    pub grids: Vec<Grid>,
    pub nodes: Vec<f64>,
    pub success: Vec<f64>,
    pub config: ThetaConfig,
}

pub fn discretize_theta(cfg: &ThetaConfig, channel: &ThetaChannel) -> Result<ThetaMdp> {
    let l = cfg.a.nrows();
    if l == 0 || l > 2 {
        return Err(Error::param(format!("the reduced-state oracle supports L <= 2, got L = {l}")));
    }
    if cfg.w.shape() != (l, l) || cfg.s.shape() != (l, l) || cfg.theta_max.len() != l {
        return Err(Error::dim("theta oracle inputs disagree on the state dimension"));
    }
    let chol = nalgebra::Cholesky::new(cfg.w.clone() + Mat::identity(l, l) * 1e-300)
        .ok_or_else(|| Error::InvalidCovariance("noise covariance is not positive definite".into()))?;
    let lw = chol.l();
    let grids: Vec<Grid> = cfg
        .theta_max
        .iter()
        .map(|&m| Grid::uniform(-m, m, cfg.n_theta))
        .collect::<Result<_>>()?;
    let (nodes, weights, success): (Vec<f64>, Vec<f64>, Vec<f64>) = match channel {
        ThetaChannel::ErrorFree => (vec![f64::NAN], vec![1.0], vec![1.0]),
        ThetaChannel::Dropout(c) => {
            let s = c.iter().map(|&(x, _)| 1.0 - (-cfg.f_bar * x).exp()).collect();
            (c.iter().map(|c| c.0).collect(), c.iter().map(|c| c.1).collect(), s)
        }
    };
    let (gz, gw) = gauss_hermite_normal(cfg.hermite_nodes.max(1));
    // Tensor Gauss–Hermite points for w = L_w z.
    let mut noise: Vec<(Vector, f64)> = Vec::new();
    if l == 1 {
        for (z, wz) in gz.iter().zip(&gw) {
            noise.push((&lw * Vector::from_element(1, *z), *wz));
        }
    } else {
        for (z1, w1) in gz.iter().zip(&gw) {
            for (z2, w2) in gz.iter().zip(&gw) {
                noise.push((&lw * Vector::from_vec(vec![*z1, *z2]), w1 * w2));
            }
        }
    }
    let n_states = cfg.n_theta.pow(l as u32);
    let corners = 1usize << l;
    let rows = n_states * (nodes.len() + 1);
    check_budget(estimate_bytes(n_states, nodes.len(), 2, rows, noise.len() * corners), cfg.memory_budget, "theta oracle")?;

    let mut b = MdpBuilder::new(n_states, weights, 2, cfg.tau)?;
    let mut drift = Vec::new();
    let mut reset = Vec::new();
    theta_row(&grids, &Vector::zeros(l), &noise, 1.0, &mut reset);
    let mut mixed = Vec::new();
    for state in 0..n_states {
        let theta = theta_point(&grids, state);
        let err = (&cfg.s * &theta).dot(&theta) * cfg.tau;
        theta_row(&grids, &(&cfg.a * &theta), &noise, 1.0, &mut drift);
        let idle_row = b.push_row(&drift)?;
        for j in 0..nodes.len() {
            b.set(state, j, IDLE, err, idle_row)?;
            let p = success[j];
            mixed.clear();
            mixed.extend(reset.iter().map(|&(s, q)| (s, q * p)));
            mixed.extend(drift.iter().map(|&(s, q)| (s, q * (1.0 - p))));
            let row = b.push_row(&mixed)?;
            b.set(state, j, TRANSMIT, (1.0 - p) * err + cfg.lambda * cfg.f_bar * cfg.tau, row)?;
        }
    }
    Ok(ThetaMdp { mdp: b.finish()?, grids, nodes, success, config: cfg.clone() })
}

fn theta_point(grids: &[Grid], state: usize) -> Vector {
    let n = grids[0].len();
    let mut idx = state;
    let mut v = Vector::zeros(grids.len());
    for d in (0..grids.len()).rev() {
        v[d] = grids[d].points[idx % n];
        idx /= n;
    }
    v
}

fn theta_index(grids: &[Grid], idx: &[usize]) -> usize {
    idx.iter().fold(0, |acc, &i| acc * grids[0].len() + i)
}

fn theta_row(grids: &[Grid], mean: &Vector, noise: &[(Vector, f64)], scale: f64, out: &mut Vec<(usize, f64)>) {
    out.clear();
    let l = grids.len();
    for (w, p) in noise {
        let x = mean + w;
        let weights: Vec<[(usize, f64); 2]> = (0..l).map(|d| grids[d].interpolate(x[d]).0).collect();
        for corner in 0..(1usize << l) {
            let mut q = p * scale;
            let mut idx = [0usize; 2];
            for d in 0..l {
                let (i, wi) = weights[d][(corner >> d) & 1];
                q *= wi;
                idx[d] = i;
            }
            if q > 0.0 {
                out.push((theta_index(grids, &idx[..l]), q));
            }
        }
    }
}

impl ThetaMdp {
    /// Nearest-cell lookup; `sigma_star` is ignored for the error-free model.
    pub fn lookup(&self, sol: &ViaSolution, theta: &Vector, sigma_star: f64) -> TableDecision {
        let mut out = false;
        let idx: Vec<usize> = (0..self.grids.len())
            .map(|d| {
                let (i, o) = self.grids[d].nearest(theta[d]);
                out |= o;
                i
            })
            .collect();
        let node = if self.nodes.len() == 1 {
            0
        } else {
            let mut best = 0;
            for (j, &v) in self.nodes.iter().enumerate() {
                if (v - sigma_star).abs() < (self.nodes[best] - sigma_star).abs() {
                    best = j;
                }
            }
            best
        };
        let a = sol.action(theta_index(&self.grids, &idx), node);
        TableDecision { transmit: a == TRANSMIT, out_of_range: out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(cost: f64) -> DiscretizedMdp {
        let mut b = MdpBuilder::new(1, vec![1.0], 1, 0.5).unwrap();
        let r = b.push_row(&[(0, 1.0)]).unwrap();
        b.set(0, 0, 0, cost, r).unwrap();
        b.finish().unwrap()
    }

    #[test]
    fn single_state() {
        let sol = relative_value_iteration(&single(3.0), 1e-10, 100, 0).unwrap();
        assert!((sol.theta * 0.5 - 3.0).abs() < 1e-12);
        assert_eq!(sol.values, vec![0.0]);
    }

    #[test]
    fn deterministic_cycle() {
        let mut b = MdpBuilder::new(2, vec![1.0], 1, 1.0).unwrap();
        let to1 = b.push_row(&[(1, 1.0)]).unwrap();
        let to0 = b.push_row(&[(0, 1.0)]).unwrap();
        b.set(0, 0, 0, 1.0, to1).unwrap();
        b.set(1, 0, 0, 4.0, to0).unwrap();
        let mdp = b.finish().unwrap();
        let sol = relative_value_iteration(&mdp, 1e-12, 10_000, 0).unwrap();
        assert!((sol.theta - 2.5).abs() < 1e-9);
        let other = relative_value_iteration(&mdp, 1e-12, 10_000, 1).unwrap();
        assert!((other.theta - sol.theta).abs() < 1e-9);
    }

    #[test]
    fn rows_must_sum_to_one() {
        let mut b = MdpBuilder::new(2, vec![1.0], 1, 1.0).unwrap();
        assert!(b.push_row(&[(0, 0.5), (1, 0.4)]).is_err());
        let r = b.push_row(&[(0, 0.5), (0, 0.25), (1, 0.25)]).unwrap();
        b.set(0, 0, 0, 1.0, r).unwrap();
        assert!(b.set(1, 0, 0, -1.0, r).is_err());
        assert!(b.clone().finish().is_err());
        b.set(1, 0, 0, 0.0, r).unwrap();
        let m = b.finish().unwrap();
        assert_eq!(m.row(0, 0, 0).collect::<Vec<_>>(), vec![(0, 0.75), (1, 0.25)]);
    }

    fn tiny_cfg() -> ScalarNcsConfig {
        ScalarNcsConfig {
            a: 2.0,
            w: 0.0,
            s: 1.0,
            f_bar: 1.0,
            lambda: 1.0,
            tau: 1.0,
            delta_max: 4.0,
            n_delta: 9,
            sigma_max: 1.0,
            n_sigma: 2,
            hermite_nodes: 3,
            memory_budget: 1 << 30,
        }
    }

    #[test]
    fn noiseless_idle_drift() {
        let ncs = discretize_scalar_ncs(&tiny_cfg(), &[(1.0, 1.0)]).unwrap();
        // Δ = 1 → 2 under idle; Σ' = 4Σ is clamped to the top cell.
        let i1 = 5;
        let s = ncs.state_index(i1, 1);
        let row: Vec<_> = ncs.mdp.row(s, 0, IDLE).collect();
        assert_eq!(row.len(), 1);
        assert_eq!(row[0].0, ncs.state_index(6, 1));
        assert!((row[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_point_channel_enumeration() {
        let mut cfg = tiny_cfg();
        cfg.a = 0.5;
        cfg.w = 0.25;
        cfg.n_delta = 5;
        cfg.delta_max = 2.0;
        cfg.sigma_max = 0.5;
        cfg.n_sigma = 2;
        cfg.hermite_nodes = 2;
        let chan = [(0.5, 0.3), (2.0, 0.7)];
        let ncs = discretize_scalar_ncs(&cfg, &chan).unwrap();
        let (d, sig) = (1.0, 0.5);
        let s = ncs.state_index(3, 1);
        for (j, &(sj, _)) in chan.iter().enumerate() {
            let g = 2.0 * sj;
            let den = 1.0 + g * sig;
            let mean = 0.5 * d / den;
            let sd = ((0.25 + sig * sig * g) / (den * den)).sqrt();
            let sigma_next = 0.25 * sig / den + 0.25;
            // Two Hermite points at ±1 with weight 1/2, hat interpolation by hand.
            let mut want = vec![0.0; 10];
            let tk = (sigma_next - 0.25) / 0.25;
            for z in [-1.0, 1.0] {
                let x: f64 = mean + sd * z;
                let pos = (x + 2.0).clamp(0.0, 4.0);
                let i = (pos.floor() as usize).min(3);
                let t = pos - i as f64;
                for (ii, wi) in [(i, 1.0 - t), (i + 1, t)] {
                    for (kk, wk) in [(0, 1.0 - tk), (1, tk)] {
                        want[ii * 2 + kk] += 0.5 * wi * wk;
                    }
                }
            }
            let mut got = vec![0.0; 10];
            for (k, p) in ncs.mdp.row(s, j, TRANSMIT) {
                got[k] += p;
            }
            for k in 0..10 {
                assert!((got[k] - want[k]).abs() < 1e-12, "node {j} cell {k}: {} vs {}", got[k], want[k]);
            }
            let c = (mean * mean + sd * sd) + 1.0;
            assert!((ncs.mdp.cost(s, j, TRANSMIT) - c).abs() < 1e-12);
        }
    }

    #[test]
    fn budget_refusal() {
        let mut cfg = tiny_cfg();
        cfg.memory_budget = 10;
        assert!(matches!(discretize_scalar_ncs(&cfg, &[(1.0, 1.0)]), Err(Error::Budget(_))));
    }

    #[test]
    fn loss_formula() {
        assert_eq!(performance_loss(2.0, 2.0).unwrap(), 0.0);
        assert!((performance_loss(2.1, 2.0).unwrap() - 5.0).abs() < 1e-12);
        assert!(performance_loss(1.0, 0.0).is_err());
    }

    #[test]
    fn error_free_theta_policy_is_threshold() {
        let cfg = ThetaConfig {
            a: Mat::from_element(1, 1, 1.02),
            w: Mat::from_element(1, 1, 0.1),
            s: Mat::identity(1, 1),
            f_bar: 1.0,
            lambda: 2.0,
            tau: 1.0,
            theta_max: vec![6.0],
            n_theta: 61,
            hermite_nodes: 9,
            memory_budget: 1 << 30,
        };
        let t = discretize_theta(&cfg, &ThetaChannel::ErrorFree).unwrap();
        let sol = relative_value_iteration(&t.mdp, 1e-9, 100_000, 30).unwrap();
        let acts: Vec<usize> = (0..61).map(|s| sol.action(s, 0)).collect();
        assert_eq!(acts[30], IDLE);
        assert_eq!(acts[0], TRANSMIT);
        // Transmit cells form an up-set in |Θ|.
        for i in 31..61 {
            if acts[i - 1] == TRANSMIT {
                assert_eq!(acts[i], TRANSMIT);
            }
            if acts[60 - i + 1] == TRANSMIT {
                assert_eq!(acts[60 - i], TRANSMIT);
            }
        }
        assert!(!t.lookup(&sol, &Vector::from_element(1, 0.0), 0.0).transmit);
        assert!(t.lookup(&sol, &Vector::from_element(1, 9.0), 0.0).out_of_range);
    }
}
