//! Closed-loop episode runner.
//!
//! Each slot: draw (H, w, z) → the policy picks F from Δ(n−1) or Δ̃(n−1), Σ(n) and H
//! → y = HFx + z → Kalman update → Δ(n), Δ̃(n) → u = Ψx̂ → x(n+1) = Ax + Bu + w.
//! The loop runs in the whitened coordinates, where every reported metric is the
//! same as in the original ones.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;
use nalgebra::SymmetricEigen;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{ChannelSample, SigmaStarDistribution};
use crate::estimator::{filter_step, update_virtual_error, AugmentedObservation};
use crate::linalg::{min_sym_eigenvalue, symmetrize};
use crate::mdp_oracle::{ScalarNcsMdp, ThetaMdp, ViaSolution};
use crate::plant::{CeControllerGain, ContinuousPlant, DiscretePlant, WhitenedPlant};
use crate::precoder::{self, AdpParameters, AdpTransition, Mode, PrecodingAction};
use crate::priority::{PriorityCoefficients, PriorityParams};
use crate::stability::ThresholdSample;
use crate::{CVector, Error, Mat, Result, Vector, C64};

/// Plant, weights, controller and channel law in the coordinates used by the loop.
#[derive(Debug, Clone)]
pub struct System {
    pub original: ContinuousPlant,
    pub whitened: WhitenedPlant,
    pub disc: DiscretePlant,
    /// Error weight S in loop coordinates.
    pub s: Mat,
    pub controller: CeControllerGain,
    pub nt: usize,
    pub nr: usize,
    pub dist: SigmaStarDistribution,
    noise_sqrt: Mat,
}

impl System {
    /// `s`, `q` and `r` are given in the original coordinates.
    pub fn new(plant: ContinuousPlant, tau: f64, s: &Mat, q: &Mat, r: &Mat, nt: usize, nr: usize) -> Result<Self> {
        let whitened = plant.whiten()?;
        let disc = whitened.plant.discretize(tau)?;
        let s_m = whitened.transform_weight(s);
        let q_m = whitened.transform_weight(q);
        let controller = disc.solve_dare(&q_m, r, 100_000)?;
        let dist = SigmaStarDistribution::new(nt, nr)?;
        let noise_sqrt = psd_sqrt(&disc.w);
        Ok(Self { original: plant, whitened, disc, s: s_m, controller, nt, nr, dist, noise_sqrt })
    }

    pub fn state_dim(&self) -> usize {
        self.disc.state_dim()
    }

    /// Normalizer Tr(S·W) of the normalized MSE.
    pub fn mse_normalizer(&self) -> f64 {
        (&self.s * &self.disc.w).trace()
    }

    /// Priority coefficients for the proposed policy.
    pub fn priority(&self, params: &PriorityParams) -> Result<PriorityCoefficients> {
        PriorityCoefficients::build(&self.whitened.plant, &self.disc, &self.s, self.dist.mean(), params)
    }
}

fn psd_sqrt(m: &Mat) -> Mat {
    let e = SymmetricEigen::new(symmetrize(m));
    let d = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * Mat::from_diagonal(&d) * e.eigenvectors.transpose()
}

/// Per-episode random stream: one master seed, one stream per episode.
pub fn episode_rng(master_seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(episode);
    rng
}

/// What the policy sees at the start of a slot.
#[derive(Debug, Clone, Copy)]
pub struct SlotContext<'a> {
    pub slot: usize,
    /// Δ(n−1).
    pub delta_prev: &'a Vector,
    /// Δ̃(n−1).
    pub delta_virtual: &'a Vector,
    /// Θ(n) = x(n) − x̂⁻(n) = AΔ(n−1) + w(n−1).
    pub theta: &'a Vector,
    /// Σ(n).
    pub sigma: &'a Mat,
    pub chan: &'a ChannelSample,
}

/// What happened in the slot.
#[derive(Debug, Clone, Copy)]
pub struct SlotOutcome<'a> {
    pub delta: &'a Vector,
    pub sigma_next: &'a Mat,
    pub cost: f64,
    pub action: &'a PrecodingAction,
}

pub trait Policy {
    fn name(&self) -> &'static str;
    fn decide(&mut self, ctx: &SlotContext<'_>) -> Result<PrecodingAction>;
    fn observe(&mut self, _ctx: &SlotContext<'_>, _outcome: &SlotOutcome<'_>) {}
    /// Lookups that fell outside a policy table.
    fn out_of_range(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorSource {
    /// True Δ fed back from the controller.
    Feedback,
    /// Sensor-side Δ̃.
    Virtual,
}

#[derive(Debug, Clone)]
pub struct ProposedPolicy {
    pub coeff: PriorityCoefficients,
    pub source: ErrorSource,
}

impl Policy for ProposedPolicy {
    fn name(&self) -> &'static str {
        match self.source {
            ErrorSource::Feedback => "proposed-feedback",
            ErrorSource::Virtual => "proposed-virtual",
        }
    }

    fn decide(&mut self, ctx: &SlotContext<'_>) -> Result<PrecodingAction> {
        let d = match self.source {
            ErrorSource::Feedback => ctx.delta_prev,
            ErrorSource::Virtual => ctx.delta_virtual,
        };
        Ok(precoder::propose(&self.coeff, d, ctx.sigma, ctx.chan))
    }
}

#[derive(Debug, Clone)]
pub struct EpdsPolicy {
    pub f_bar: f64,
    pub streams: usize,
}

impl Policy for EpdsPolicy {
    fn name(&self) -> &'static str {
        "epds"
    }

    fn decide(&mut self, ctx: &SlotContext<'_>) -> Result<PrecodingAction> {
        precoder::baseline_epds(ctx.chan, self.f_bar, self.streams)
    }
}

/// Never transmits.
#[derive(Debug, Clone)]
pub struct DormantPolicy {
    pub l: usize,
}

impl Policy for DormantPolicy {
    fn name(&self) -> &'static str {
        "dormant"
    }

    fn decide(&mut self, ctx: &SlotContext<'_>) -> Result<PrecodingAction> {
        Ok(PrecodingAction::dormant(ctx.chan.nt(), self.l, ctx.chan.sigma_star, f64::NAN))
    }
}

/// Event-driven policy with the gradient of a TD(0)-learned quadratic value.
#[derive(Debug, Clone)]
pub struct AdpPolicy {
    pub params: AdpParameters,
    pub f_bar: f64,
    pub lambda: f64,
    pub tau: f64,
}

impl AdpPolicy {
    pub fn new(l: usize, f_bar: f64, lambda: f64, tau: f64) -> Self {
        Self { params: AdpParameters::new(l, 1.0), f_bar, lambda, tau }
    }
}

impl Policy for AdpPolicy {
    fn name(&self) -> &'static str {
        "adp"
    }

    fn decide(&mut self, ctx: &SlotContext<'_>) -> Result<PrecodingAction> {
        let eval = self.params.threshold(ctx.delta_prev, ctx.sigma, self.tau);
        Ok(precoder::decide(self.lambda, self.f_bar, &eval, ctx.chan))
    }

    fn observe(&mut self, ctx: &SlotContext<'_>, out: &SlotOutcome<'_>) {
        self.params.update(&AdpTransition {
            cost: out.cost,
            delta: ctx.delta_prev,
            sigma: ctx.sigma,
            delta_next: out.delta,
            sigma_next: out.sigma_next,
        });
    }
}

/// Transmit/idle from a solved scalar table; transmits on the top eigenchannel.
#[derive(Debug, Clone)]
pub struct ScalarTablePolicy<'a> {
    pub ncs: &'a ScalarNcsMdp,
    pub solution: &'a ViaSolution,
    pub f_bar: f64,
    misses: u64,
}

impl<'a> ScalarTablePolicy<'a> {
    pub fn new(ncs: &'a ScalarNcsMdp, solution: &'a ViaSolution, f_bar: f64) -> Self {
        Self { ncs, solution, f_bar, misses: 0 }
    }
}

impl Policy for ScalarTablePolicy<'_> {
    fn name(&self) -> &'static str {
        "via-optimal"
    }

    fn decide(&mut self, ctx: &SlotContext<'_>) -> Result<PrecodingAction> {
        if ctx.delta_prev.len() != 1 {
            return Err(Error::dim("the scalar table policy needs L = 1"));
        }
        let d = self.ncs.lookup(self.solution, ctx.delta_prev[0], ctx.sigma[(0, 0)], ctx.chan.sigma_star);
        self.misses += d.out_of_range as u64;
        precoder::baseline_threshold_via(d.transmit, ctx.chan, self.f_bar, 1)
    }

    fn out_of_range(&self) -> u64 {
        self.misses
    }
}

/// Reduced-state table baselines on Θ(n); transmit with EPDS.
#[derive(Debug, Clone)]
pub struct ThetaTablePolicy<'a> {
    pub table: &'a ThetaMdp,
    pub solution: &'a ViaSolution,
    pub f_bar: f64,
    pub streams: usize,
    pub label: &'static str,
    misses: u64,
}

impl<'a> ThetaTablePolicy<'a> {
    pub fn new(table: &'a ThetaMdp, solution: &'a ViaSolution, f_bar: f64, streams: usize, label: &'static str) -> Self {
        Self { table, solution, f_bar, streams, label, misses: 0 }
    }
}

impl Policy for ThetaTablePolicy<'_> {
    fn name(&self) -> &'static str {
        self.label
    }

    fn decide(&mut self, ctx: &SlotContext<'_>) -> Result<PrecodingAction> {
        let d = self.table.lookup(self.solution, ctx.theta, ctx.chan.sigma_star);
        self.misses += d.out_of_range as u64;
        precoder::baseline_threshold_via(d.transmit, ctx.chan, self.f_bar, self.streams)
    }

    fn out_of_range(&self) -> u64 {
        self.misses
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub f_bar: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub burn_in: usize,
    pub joseph: bool,
    /// Feed w(n−1), which the sensor recovers from x(n), x(n−1) and u(n−1), into Δ̃.
    pub virtual_disturbance: bool,
    pub divergence_threshold: f64,
    pub x0: Option<Vector>,
    pub record_trace: bool,
    /// Keep every k-th (ν*, q1) after burn-in; 0 keeps none.
    pub threshold_stride: usize,
}

impl EpisodeConfig {
    pub fn new(f_bar: f64, lambda: f64, horizon: usize) -> Self {
        Self {
            f_bar,
            lambda,
            horizon,
            burn_in: horizon / 10,
            joseph: true,
            virtual_disturbance: true,
            divergence_threshold: 1e12,
            x0: None,
            record_trace: false,
            threshold_stride: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_bar > 0.0 && self.f_bar.is_finite()) {
            return Err(Error::param(format!("F_bar must be positive, got {}", self.f_bar)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.horizon <= self.burn_in {
            return Err(Error::param(format!("horizon {} must exceed burn-in {}", self.horizon, self.burn_in)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub slot: usize,
    pub mode: Mode,
    pub sigma_star: f64,
    pub nu_star: f64,
    pub power_gain: f64,
    pub delta_norm_sq: f64,
    pub trace_sigma: f64,
    pub weighted_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub slots: usize,
    pub tau: f64,
    pub lambda: f64,
    /// Σ ΔᵀSΔ over measured slots.
    pub sum_weighted_error: f64,
    /// Σ Tr(FᴴF) over measured slots.
    pub sum_power_gain: f64,
    pub sum_sq_error: f64,
    /// Σ ‖Fx‖² over measured slots.
    pub sum_tx_power: f64,
    pub active_slots: usize,
    pub avg_weighted_error: f64,
    pub avg_power_gain: f64,
    pub activation_rate: f64,
    pub objective: f64,
    /// Time average of the absolute transmit power ‖Fx‖²·τ.
    pub avg_tx_power: f64,
    /// Time average of ‖Δ‖².
    pub mse: f64,
    pub out_of_range: u64,
    pub psd_violations: usize,
    pub trace: Vec<TraceRow>,
    pub thresholds: Vec<ThresholdSample>,
}

impl EpisodeMetrics {
    /// E[ΔᵀSΔ] / Tr(S·W).
    pub fn normalized_mse(&self, normalizer: f64) -> f64 {
        self.sum_weighted_error / self.slots as f64 / normalizer
    }

    /// Objective recomputed from the accumulated sums.
    pub fn recomputed_objective(&self) -> f64 {
        let n = self.slots as f64;
        self.sum_weighted_error / n * self.tau + self.lambda * (self.sum_power_gain / n * self.tau)
    }
}

fn draw_noise<R: Rng + ?Sized>(rng: &mut R, sqrt: &Mat) -> Vector {
    let z = Vector::from_fn(sqrt.nrows(), |_, _| StandardNormal.sample(rng));
    sqrt * z
}

fn draw_receiver_noise<R: Rng + ?Sized>(rng: &mut R, nr: usize) -> CVector {
    let s = core::f64::consts::FRAC_1_SQRT_2;
    CVector::from_fn(nr, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re * s, im * s)
    })
}

const GAIN_SLACK: f64 = 1e-9;

/// Runs one episode. Fails on divergence, on an AF gain violation and on numeric errors.
pub fn run_episode<R: Rng + ?Sized>(
    system: &System,
    config: &EpisodeConfig,
    policy: &mut dyn Policy,
    rng: &mut R,
) -> Result<EpisodeMetrics> {
    config.validate()?;
    let l = system.state_dim();
    let disc = &system.disc;
    let mut x = config.x0.clone().unwrap_or_else(|| Vector::zeros(l));
    if x.len() != l {
        return Err(Error::dim("initial state does not match the plant"));
    }
    // x̂⁻(0) = x(0), Σ(0) = 0.
    let mut x_pred = x.clone();
    let mut sigma = Mat::zeros(l, l);
    let mut delta = Vector::zeros(l);
    let mut delta_virtual = Vector::zeros(l);
    let mut w_prev = Vector::zeros(l);

    let mut m = EpisodeMetrics {
        slots: 0,
        tau: disc.tau,
        lambda: config.lambda,
        sum_weighted_error: 0.0,
        sum_power_gain: 0.0,
        sum_sq_error: 0.0,
        sum_tx_power: 0.0,
        active_slots: 0,
        avg_weighted_error: 0.0,
        avg_power_gain: 0.0,
        activation_rate: 0.0,
        objective: 0.0,
        avg_tx_power: 0.0,
        mse: 0.0,
        out_of_range: 0,
        psd_violations: 0,
        trace: Vec::new(),
        thresholds: Vec::new(),
    };

    for n in 0..config.horizon {
        let chan = ChannelSample::draw(rng, system.nt, system.nr);
        let w = draw_noise(rng, &system.noise_sqrt);
        let z = draw_receiver_noise(rng, system.nr);

        let theta = &x - &x_pred;
        let ctx = SlotContext { slot: n, delta_prev: &delta, delta_virtual: &delta_virtual, theta: &theta, sigma: &sigma, chan: &chan };
        let action = policy.decide(&ctx)?;
        if action.power_gain > config.f_bar + GAIN_SLACK {
            return Err(Error::numeric(format!(
                "{} violated the AF gain constraint at slot {n}: {} > {}",
                policy.name(),
                action.power_gain,
                config.f_bar
            )));
        }

        let e = &chan.h * &action.f;
        let fx = &action.f * x.map(|v| C64::new(v, 0.0));
        let y = &chan.h * &fx + z;
        let obs = AugmentedObservation::new(&e);
        let step = filter_step(&x_pred, &sigma, &y, &obs, disc, config.joseph)?;
        let delta_new = &x - &step.x_hat;
        let disturbance = if config.virtual_disturbance { Some(&w_prev) } else { None };
        let virtual_new = update_virtual_error(&delta_virtual, &obs, &step.gain, disc, disturbance)?;

        let weighted = (&system.s * &delta_new).dot(&delta_new);
        let cost = (weighted + config.lambda * action.power_gain) * disc.tau;
        if min_sym_eigenvalue(&step.sigma_next) < -1e-9 * step.sigma_next.norm().max(1.0) {
            m.psd_violations += 1;
        }
        if n >= config.burn_in {
            m.slots += 1;
            m.sum_weighted_error += weighted;
            m.sum_power_gain += action.power_gain;
            m.sum_sq_error += delta_new.norm_squared();
            m.sum_tx_power += fx.norm_squared();
            if action.mode == Mode::Active {
                m.active_slots += 1;
            }
            if config.record_trace {
                m.trace.push(TraceRow {
                    slot: n,
                    mode: action.mode,
                    sigma_star: action.sigma_star,
                    nu_star: action.nu_star,
                    power_gain: action.power_gain,
                    delta_norm_sq: delta_new.norm_squared(),
                    trace_sigma: sigma.trace(),
                    weighted_error: weighted,
                });
            }
            if config.threshold_stride > 0 && (n - config.burn_in) % config.threshold_stride == 0 {
                if let Some(q1) = &action.q1 {
                    m.thresholds.push(ThresholdSample { nu_star: action.nu_star, q1: q1.clone() });
                }
            }
        }
        policy.observe(&ctx, &SlotOutcome { delta: &delta_new, sigma_next: &step.sigma_next, cost, action: &action });

        let u = system.controller.control(&step.x_hat);
        x = disc.step(&x, &u, &w);
        x_pred = &disc.a * &step.x_hat + &disc.b * &u;
        sigma = step.sigma_next;
        delta = delta_new;
        delta_virtual = virtual_new;
        w_prev = w;
        let norm = x.norm();
        if !(norm <= config.divergence_threshold) {
            return Err(Error::Divergence { slot: n, norm });
        }
    }

    let ns = m.slots as f64;
    m.avg_weighted_error = m.sum_weighted_error / ns * disc.tau;
    m.avg_power_gain = m.sum_power_gain / ns * disc.tau;
    m.activation_rate = m.active_slots as f64 / ns;
    m.objective = m.avg_weighted_error + config.lambda * m.avg_power_gain;
    m.mse = m.sum_sq_error / ns;
    m.avg_tx_power = m.sum_tx_power / ns * disc.tau;
    m.out_of_range = policy.out_of_range();
    Ok(m)
}

/// Named policy choices for configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    ProposedFeedback,
    ProposedVirtual,
    Epds,
    EfcVia,
    SpsisVia,
    Adp,
    Dormant,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::ProposedFeedback,
        PolicyKind::ProposedVirtual,
        PolicyKind::Epds,
        PolicyKind::EfcVia,
        PolicyKind::SpsisVia,
        PolicyKind::Adp,
        PolicyKind::Dormant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::ProposedFeedback => "proposed-feedback",
            PolicyKind::ProposedVirtual => "proposed-virtual",
            PolicyKind::Epds => "epds",
            PolicyKind::EfcVia => "efc-via",
            PolicyKind::SpsisVia => "spsis-via",
            PolicyKind::Adp => "adp",
            PolicyKind::Dormant => "dormant",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown policy '{s}'")))
    }

    /// Builds the policies that need no solved tables.
    pub fn build_simple(self, system: &System, params: &PriorityParams, streams: usize) -> Result<Box<dyn Policy>> {
        let l = system.state_dim();
        Ok(match self {
            PolicyKind::ProposedFeedback | PolicyKind::ProposedVirtual => Box::new(ProposedPolicy {
                coeff: system.priority(params)?,
                source: if self == PolicyKind::ProposedFeedback { ErrorSource::Feedback } else { ErrorSource::Virtual },
            }),
            PolicyKind::Epds => Box::new(EpdsPolicy { f_bar: params.f_bar, streams }),
            PolicyKind::Adp => Box::new(AdpPolicy::new(l, params.f_bar, params.lambda, system.disc.tau)),
            PolicyKind::Dormant => Box::new(DormantPolicy { l }),
            PolicyKind::EfcVia | PolicyKind::SpsisVia => {
                return Err(Error::param(format!("{} needs a solved table", self.as_str())))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_system(a: f64, w: f64) -> System {
        let plant = ContinuousPlant::new(Mat::from_element(1, 1, a), Mat::from_element(1, 1, 1.0), Mat::from_element(1, 1, w)).unwrap();
        let one = Mat::identity(1, 1);
        System::new(plant, 0.05, &one, &one, &one, 1, 1).unwrap()
    }

    #[test]
    fn noiseless_consensus() {
        let sys = scalar_system(0.5, 0.0);
        let cfg = EpisodeConfig::new(1.0, 1.0, 200);
        let m = run_episode(&sys, &cfg, &mut DormantPolicy { l: 1 }, &mut episode_rng(1, 0)).unwrap();
        assert_eq!(m.avg_weighted_error, 0.0);
        assert_eq!(m.activation_rate, 0.0);
    }

    #[test]
    fn dormant_unstable_diverges() {
        let sys = scalar_system(10.0, 1.0);
        let cfg = EpisodeConfig::new(1.0, 1.0, 100_000);
        let r = run_episode(&sys, &cfg, &mut DormantPolicy { l: 1 }, &mut episode_rng(1, 0));
        assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
    }

    #[test]
    fn metric_identity_and_replay() {
        let sys = scalar_system(1.0, 1.0);
        let mut cfg = EpisodeConfig::new(1.0, 0.05, 2000);
        cfg.record_trace = true;
        let params = PriorityParams::new(1.0, 0.05, 0.3);
        let mut p = PolicyKind::ProposedFeedback.build_simple(&sys, &params, 1).unwrap();
        let m = run_episode(&sys, &cfg, p.as_mut(), &mut episode_rng(7, 3)).unwrap();
        assert!((m.objective - m.recomputed_objective()).abs() <= 1e-12 * m.objective.max(1.0));
        assert!(m.activation_rate > 0.0 && m.activation_rate < 1.0, "{}", m.activation_rate);
        for r in &m.trace {
            assert_eq!(r.mode == Mode::Active, cfg.lambda < r.sigma_star * r.nu_star);
        }
        let again = run_episode(&sys, &cfg, p.as_mut(), &mut episode_rng(7, 3)).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn epds_spends_full_budget() {
        let sys = scalar_system(1.0, 1.0);
        let cfg = EpisodeConfig::new(2.0, 1.0, 1000);
        let m = run_episode(&sys, &cfg, &mut EpdsPolicy { f_bar: 2.0, streams: 1 }, &mut episode_rng(2, 0)).unwrap();
        assert_eq!(m.activation_rate, 1.0);
        assert!((m.avg_power_gain - 2.0 * 0.05).abs() < 1e-12);
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(PolicyKind::parse(k.as_str()).unwrap(), k);
        }
        assert!(PolicyKind::parse("bogus").is_err());
    }
}
