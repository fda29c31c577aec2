//! Parallel episode execution and summary statistics.

use ncs_core::harness::{
    episode_rng, run_episode, AdpPolicy, DormantPolicy, EpdsPolicy, EpisodeConfig, EpisodeMetrics, ErrorSource, Policy,
    PolicyKind, ProposedPolicy, ScalarTablePolicy, System, ThetaTablePolicy,
};
use ncs_core::mdp_oracle::{
    discretize_theta, quantile_nodes, relative_value_iteration, ScalarNcsMdp, ThetaChannel, ThetaConfig, ThetaMdp,
    ViaSolution,
};
use ncs_core::priority::{PriorityCoefficients, PriorityParams};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::ViaSection;
use crate::error::SimResult;

/// A policy with its expensive parts (priority coefficients, solved tables) built once
/// and shared by every episode.
#[derive(Debug, Clone)]
pub enum PreparedPolicy {
    Proposed { coeff: PriorityCoefficients, source: ErrorSource },
    Epds { f_bar: f64, streams: usize },
    Adp { l: usize, f_bar: f64, lambda: f64, tau: f64 },
    Dormant { l: usize },
    Theta { table: Box<ThetaMdp>, solution: Box<ViaSolution>, f_bar: f64, streams: usize, label: &'static str },
    Scalar { ncs: Box<ScalarNcsMdp>, solution: Box<ViaSolution>, f_bar: f64 },
}

impl PreparedPolicy {
    pub fn new(system: &System, kind: PolicyKind, params: &PriorityParams, streams: usize, via: &ViaSection) -> SimResult<Self> {
        let l = system.state_dim();
        Ok(match kind {
            PolicyKind::ProposedFeedback => Self::Proposed { coeff: system.priority(params)?, source: ErrorSource::Feedback },
            PolicyKind::ProposedVirtual => Self::Proposed { coeff: system.priority(params)?, source: ErrorSource::Virtual },
            PolicyKind::Epds => Self::Epds { f_bar: params.f_bar, streams },
            PolicyKind::Adp => Self::Adp { l, f_bar: params.f_bar, lambda: params.lambda, tau: system.disc.tau },
            PolicyKind::Dormant => Self::Dormant { l },
            PolicyKind::EfcVia | PolicyKind::SpsisVia => {
                let disc = &system.disc;
                let cfg = ThetaConfig {
                    a: disc.a.clone(),
                    w: disc.w.clone(),
                    s: system.s.clone(),
                    f_bar: params.f_bar,
                    lambda: params.lambda,
                    tau: disc.tau,
                    theta_max: ThetaConfig::default_range(&disc.a, &disc.w, &system.s, params.f_bar, params.lambda, via.range_factor),
                    n_theta: via.n_theta,
                    hermite_nodes: via.hermite_nodes,
                    memory_budget: via.memory_budget_mb << 20,
                };
                let channel = if kind == PolicyKind::EfcVia {
                    ThetaChannel::ErrorFree
                } else {
                    ThetaChannel::Dropout(quantile_nodes(&system.dist, via.channel_nodes))
                };
                let table = discretize_theta(&cfg, &channel)?;
                let mid = via.n_theta / 2;
                let reference = (0..l).fold(0, |acc, _| acc * via.n_theta + mid);
                let solution = relative_value_iteration(&table.mdp, via.tol, via.max_iter, reference)?;
                log::info!("{}: theta {:.6} after {} iterations", kind.as_str(), solution.theta, solution.iterations);
                Self::Theta { table: Box::new(table), solution: Box::new(solution), f_bar: params.f_bar, streams, label: kind.as_str() }
            }
        })
    }

    pub fn instantiate(&self) -> Box<dyn Policy + '_> {
        match self {
            Self::Proposed { coeff, source } => Box::new(ProposedPolicy { coeff: coeff.clone(), source: *source }),
            Self::Epds { f_bar, streams } => Box::new(EpdsPolicy { f_bar: *f_bar, streams: *streams }),
            Self::Adp { l, f_bar, lambda, tau } => Box::new(AdpPolicy::new(*l, *f_bar, *lambda, *tau)),
            Self::Dormant { l } => Box::new(DormantPolicy { l: *l }),
            Self::Theta { table, solution, f_bar, streams, label } => {
                Box::new(ThetaTablePolicy::new(table, solution, *f_bar, *streams, label))
            }
            Self::Scalar { ncs, solution, f_bar } => Box::new(ScalarTablePolicy::new(ncs, solution, *f_bar)),
        }
    }

    pub fn name(&self) -> &'static str {
        self.instantiate().name()
    }
}

/// Runs `episodes` independent episodes in parallel. Episode e uses stream e of
/// the master seed, so the results do not depend on scheduling.
pub fn run_batch(
    system: &System,
    config: &EpisodeConfig,
    policy: &PreparedPolicy,
    seed: u64,
    episodes: usize,
) -> Vec<ncs_core::Result<EpisodeMetrics>> {
    (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut p = policy.instantiate();
            run_episode(system, config, p.as_mut(), &mut episode_rng(seed, e as u64))
        })
        .collect()
}

/// Like [`run_batch`] but fails on the first failed episode in episode order.
pub fn run_batch_strict(
    system: &System,
    config: &EpisodeConfig,
    policy: &PreparedPolicy,
    seed: u64,
    episodes: usize,
) -> SimResult<Vec<EpisodeMetrics>> {
    Ok(run_batch(system, config, policy, seed, episodes).into_iter().collect::<ncs_core::Result<Vec<_>>>()?)
}

/// Sample mean with a two-sided 99% Student-t interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Half-width of the 99% interval; NaN with fewer than two samples.
    pub ci99: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, std: f64::NAN, ci99: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self { n, mean, std: f64::NAN, ci99: f64::NAN };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid degrees of freedom").inverse_cdf(0.995);
        Self { n, mean, std, ci99: t * std / (n as f64).sqrt() }
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci99
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci99
    }
}

/// Per-episode numbers kept for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub normalized_mse: f64,
    pub mse: f64,
    pub avg_weighted_error: f64,
    pub avg_power_gain: f64,
    pub avg_tx_power: f64,
    pub activation_rate: f64,
    pub objective: f64,
    pub out_of_range: u64,
    pub psd_violations: usize,
}

impl EpisodeRecord {
    pub fn new(episode: usize, m: &EpisodeMetrics, normalizer: f64) -> Self {
        Self {
            episode,
            normalized_mse: m.normalized_mse(normalizer),
            mse: m.mse,
            avg_weighted_error: m.avg_weighted_error,
            avg_power_gain: m.avg_power_gain,
            avg_tx_power: m.avg_tx_power,
            activation_rate: m.activation_rate,
            objective: m.objective,
            out_of_range: m.out_of_range,
            psd_violations: m.psd_violations,
        }
    }
}

/// Across-episode statistics of one policy at one operating point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchStats {
    pub policy: String,
    pub normalized_mse: Summary,
    pub mse: Summary,
    pub objective: Summary,
    pub power_gain: Summary,
    pub tx_power: Summary,
    pub activation: Summary,
    pub out_of_range: u64,
}

impl BatchStats {
    pub fn new(policy: &str, records: &[EpisodeRecord]) -> Self {
        let col = |f: fn(&EpisodeRecord) -> f64| Summary::of(&records.iter().map(f).collect::<Vec<_>>());
        Self {
            policy: policy.to_string(),
            normalized_mse: col(|r| r.normalized_mse),
            mse: col(|r| r.mse),
            objective: col(|r| r.objective),
            power_gain: col(|r| r.avg_power_gain),
            tx_power: col(|r| r.avg_tx_power),
            activation: col(|r| r.activation_rate),
            out_of_range: records.iter().map(|r| r.out_of_range).sum(),
        }
    }
}

/// Runs a batch and summarizes it; fails on the first failed episode.
pub fn evaluate(
    system: &System,
    config: &EpisodeConfig,
    policy: &PreparedPolicy,
    seed: u64,
    episodes: usize,
) -> SimResult<(BatchStats, Vec<EpisodeRecord>)> {
    let norm = system.mse_normalizer();
    let metrics = run_batch_strict(system, config, policy, seed, episodes)?;
    let records: Vec<EpisodeRecord> = metrics.iter().enumerate().map(|(e, m)| EpisodeRecord::new(e, m, norm)).collect();
    Ok((BatchStats::new(policy.name(), &records), records))
}
