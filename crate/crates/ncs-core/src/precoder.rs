//! Precoding policies: the event-driven rank-1 policy and the baselines.

use alloc::format;
#[allow(unused_imports)]
use num_traits::Float;

use crate::channel::ChannelSample;
use crate::priority::{PriorityCoefficients, Regime, ThresholdEvaluation};
use crate::{CMat, Error, Mat, Result, Vector, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Dormant,
    Active,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Dormant => "dormant",
            Mode::Active => "active",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingAction {
    /// N_t × L precoder.
    pub f: CMat,
    pub mode: Mode,
    pub sigma_star: f64,
    /// ν* when the policy computes one; NaN for the table and EPDS baselines.
    pub nu_star: f64,
    pub power_gain: f64,
    /// Beam direction q1 when the policy computes one.
    pub q1: Option<Vector>,
}

impl PrecodingAction {
    pub fn dormant(nt: usize, l: usize, sigma_star: f64, nu_star: f64) -> Self {
        Self { f: CMat::zeros(nt, l), mode: Mode::Dormant, sigma_star, nu_star, power_gain: 0.0, q1: None }
    }

    pub fn is_active(&self) -> bool {
        self.mode == Mode::Active
    }
}

/// Tr(FᴴF).
pub fn power_gain(f: &CMat) -> f64 {
    f.iter().map(|z| z.norm_sqr()).sum()
}

/// F = √F̄ · u₁ q1ᵀ.
pub fn beamform(chan: &ChannelSample, q1: &Vector, f_bar: f64) -> CMat {
    let u1 = chan.top_eigenvector();
    let qc = q1.map(|v| C64::new(v, 0.0));
    u1 * qc.transpose() * C64::new(f_bar.sqrt(), 0.0)
}

/// Event trigger: active iff λ < σ*ν* (a tie stays dormant).
pub fn trigger(lambda: f64, sigma_star: f64, nu_star: f64) -> bool {
    lambda < sigma_star * nu_star
}

/// Applies the trigger to a threshold evaluation and builds the action.
pub fn decide(lambda: f64, f_bar: f64, eval: &ThresholdEvaluation, chan: &ChannelSample) -> PrecodingAction {
    let l = eval.q1.len();
    if trigger(lambda, chan.sigma_star, eval.nu_star) {
        let f = beamform(chan, &eval.q1, f_bar);
        let pg = power_gain(&f);
        PrecodingAction {
            f,
            mode: Mode::Active,
            sigma_star: chan.sigma_star,
            nu_star: eval.nu_star,
            power_gain: pg,
            q1: Some(eval.q1.clone()),
        }
    } else {
        PrecodingAction { q1: Some(eval.q1.clone()), ..PrecodingAction::dormant(chan.nt(), l, chan.sigma_star, eval.nu_star) }
    }
}

/// The proposed policy. `delta_used` is Δ(n−1) (feedback) or Δ̃(n−1) (virtual).
pub fn propose(coeff: &PriorityCoefficients, delta_used: &Vector, sigma: &Mat, chan: &ChannelSample) -> PrecodingAction {
    let eval = coeff.threshold(delta_used, sigma);
    decide(coeff.lambda, coeff.f_bar, &eval, chan)
}

/// Equal power over the L strongest eigenchannels: F = √(F̄/L)·U·Ĩ.
pub fn baseline_epds(chan: &ChannelSample, f_bar: f64, l: usize) -> Result<PrecodingAction> {
    let nt = chan.nt();
    if l == 0 || l > nt {
        return Err(Error::dim(format!("EPDS needs 1 <= L <= N_t, got L = {l}, N_t = {nt}")));
    }
    let g = C64::new((f_bar / l as f64).sqrt(), 0.0);
    let mut f = CMat::zeros(nt, l);
    for j in 0..l {
        f.set_column(j, &(chan.u.column(j) * g));
    }
    let pg = power_gain(&f);
    Ok(PrecodingAction { f, mode: Mode::Active, sigma_star: chan.sigma_star, nu_star: f64::NAN, power_gain: pg, q1: None })
}

/// Transmit/idle decision from a solved table, transmitting with EPDS.
pub fn baseline_threshold_via(transmit: bool, chan: &ChannelSample, f_bar: f64, l: usize) -> Result<PrecodingAction> {
    if transmit {
        baseline_epds(chan, f_bar, l)
    } else {
        Ok(PrecodingAction::dormant(chan.nt(), l, chan.sigma_star, f64::NAN))
    }
}

/// Linear approximation Ṽ = r1·ΔᵀΣΔ + r2ᵀΔ learned by average-cost TD(0).
#[derive(Debug, Clone, PartialEq)]
pub struct AdpParameters {
    pub r1: f64,
    pub r2: Vector,
    pub avg_cost: f64,
    pub steps: u64,
    pub resets: u64,
    initial_r1: f64,
}

/// Features before and after a slot, and the slot cost.
#[derive(Debug, Clone, PartialEq)]
pub struct AdpTransition<'a> {
    pub cost: f64,
    pub delta: &'a Vector,
    pub sigma: &'a Mat,
    pub delta_next: &'a Vector,
    pub sigma_next: &'a Mat,
}

const ADP_NORM_CAP: f64 = 1e6;

impl AdpParameters {
    pub fn new(l: usize, r1: f64) -> Self {
        Self { r1, r2: Vector::zeros(l), avg_cost: 0.0, steps: 0, resets: 0, initial_r1: r1 }
    }

    pub fn step_size(&self) -> f64 {
        1.0 / (1.0 + self.steps as f64 / 1000.0)
    }

    pub fn value(&self, delta: &Vector, sigma: &Mat) -> f64 {
        self.r1 * (sigma * delta).dot(delta) + self.r2.dot(delta)
    }

    /// ∇_Δ Ṽ = 2 r1 ΣΔ + r2.
    pub fn gradient(&self, delta: &Vector, sigma: &Mat) -> Vector {
        sigma * delta * (2.0 * self.r1) + &self.r2
    }

    pub fn threshold(&self, delta: &Vector, sigma: &Mat, tau: f64) -> ThresholdEvaluation {
        let grad = self.gradient(delta, sigma);
        PriorityCoefficients::evaluate(delta, &grad, sigma, tau, Regime::Low)
    }

    /// One TD(0) update; the step is normalized by 1 + ‖φ‖² to keep it bounded.
    pub fn update(&mut self, t: &AdpTransition<'_>) {
        let alpha = self.step_size();
        let td = t.cost - self.avg_cost + self.value(t.delta_next, t.sigma_next) - self.value(t.delta, t.sigma);
        let phi1 = (t.sigma * t.delta).dot(t.delta);
        let norm = 1.0 + phi1 * phi1 + t.delta.norm_squared();
        if td.is_finite() && norm.is_finite() {
            let g = alpha * td / norm;
            self.r1 += g * phi1;
            self.r2 += t.delta * g;
            self.avg_cost += alpha * (t.cost - self.avg_cost);
        }
        self.steps += 1;
        let size = (self.r1 * self.r1 + self.r2.norm_squared()).sqrt();
        if !(size <= ADP_NORM_CAP) {
            log::warn!("ADP parameters exceeded the norm cap; resetting");
            self.r1 = self.initial_r1;
            self.r2.fill(0.0);
            self.resets += 1;
        }
    }
}
