//! Experiment drivers behind the CLI subcommands.

use ncs_core::harness::{run_episode, episode_rng, PolicyKind, System, TraceRow};
use ncs_core::mdp_oracle::{
    discretize_scalar_ncs, performance_loss, quantile_nodes, relative_value_iteration, ScalarNcsConfig,
};
use ncs_core::plant::ContinuousPlant;
use ncs_core::priority::PriorityParams;
use ncs_core::stability::{scaling_diagnostics, solve_fixed_point, GOperator, ScalingReport};
use ncs_core::Mat;
use serde::Serialize;

use crate::config::{OracleSection, SimConfig};
use crate::error::{SimError, SimResult};
use crate::runner::{evaluate, BatchStats, EpisodeRecord, PreparedPolicy, Summary};

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub policy: String,
    pub f_bar: f64,
    pub lambda: f64,
    pub eta_th: f64,
    pub horizon: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub mse_normalizer: f64,
    pub stats: BatchStats,
    pub episodes: Vec<EpisodeRecord>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

/// Runs the configured policy; the trace, when requested, comes from episode 0.
pub fn simulate(cfg: &SimConfig) -> SimResult<SimulateReport> {
    let system = cfg.build_system()?;
    let kind = cfg.policy_kind()?;
    let prepared = PreparedPolicy::new(&system, kind, &cfg.priority_params(), cfg.streams(), &cfg.via)?;
    let mut ecfg = cfg.episode_config();
    ecfg.record_trace = false;
    let (stats, episodes) = evaluate(&system, &ecfg, &prepared, cfg.run.seed, cfg.run.episodes)?;
    let trace = if cfg.run.record_trace {
        ecfg.record_trace = true;
        let mut p = prepared.instantiate();
        run_episode(&system, &ecfg, p.as_mut(), &mut episode_rng(cfg.run.seed, 0))?.trace
    } else {
        Vec::new()
    };
    Ok(SimulateReport {
        policy: kind.as_str().into(),
        f_bar: cfg.run.f_bar,
        lambda: cfg.run.lambda,
        eta_th: cfg.policy.eta_th,
        horizon: ecfg.horizon,
        burn_in: ecfg.burn_in,
        seed: cfg.run.seed,
        mse_normalizer: system.mse_normalizer(),
        stats,
        episodes,
        trace,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationPoint {
    pub eta_th: f64,
    /// None when an episode diverged or the coefficients failed.
    pub stats: Option<BatchStats>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub policy: String,
    pub best_eta: f64,
    pub best_mse: f64,
    /// The minimum lies strictly inside the grid and both ends are higher.
    pub interior_minimum: bool,
    pub curve: Vec<CalibrationPoint>,
}

/// Matched-seed normalized MSE over an η_th grid.
pub fn calibrate_eta(cfg: &SimConfig, grid: &[f64]) -> SimResult<CalibrationReport> {
    if grid.is_empty() {
        return Err(SimError::Config("the eta grid is empty".into()));
    }
    let kind = cfg.policy_kind()?;
    if !matches!(kind, PolicyKind::ProposedFeedback | PolicyKind::ProposedVirtual) {
        return Err(SimError::Config(format!("calibration needs a proposed policy, got {}", kind.as_str())));
    }
    let system = cfg.build_system()?;
    let ecfg = cfg.episode_config();
    let mut curve = Vec::with_capacity(grid.len());
    for &eta in grid {
        let params = PriorityParams::new(cfg.run.f_bar, cfg.run.lambda, eta);
        let point = PreparedPolicy::new(&system, kind, &params, cfg.streams(), &cfg.via)
            .and_then(|p| evaluate(&system, &ecfg, &p, cfg.run.seed, cfg.run.episodes));
        curve.push(match point {
            Ok((stats, _)) => {
                log::info!("eta {eta}: normalized mse {:.4}", stats.normalized_mse.mean);
                CalibrationPoint { eta_th: eta, stats: Some(stats), error: None }
            }
            Err(e) => {
                log::warn!("eta {eta}: {e}");
                CalibrationPoint { eta_th: eta, stats: None, error: Some(e.to_string()) }
            }
        });
    }
    let mse: Vec<f64> = curve.iter().map(|p| p.stats.as_ref().map_or(f64::INFINITY, |s| s.normalized_mse.mean)).collect();
    let (best, &best_mse) = mse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is nonempty");
    if !best_mse.is_finite() {
        return Err(SimError::Failed("calibration failed: every eta diverged".into()));
    }
    let interior_minimum = best > 0 && best + 1 < mse.len() && mse[0] > best_mse && mse[mse.len() - 1] > best_mse;
    Ok(CalibrationReport { policy: kind.as_str().into(), best_eta: grid[best], best_mse, interior_minimum, curve })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub f_bar: f64,
    pub lambda: f64,
    pub policy: String,
    pub stats: Option<BatchStats>,
    pub error: Option<String>,
}

/// Sweeps F̄, λ or the policy list. Failed points are recorded and skipped.
pub fn sweep(cfg: &SimConfig) -> SimResult<Vec<SweepRow>> {
    let system = cfg.build_system()?;
    let policies: Vec<PolicyKind> = cfg
        .sweep
        .policies
        .iter()
        .map(|p| PolicyKind::parse(p).map_err(|e| SimError::Config(e.to_string())))
        .collect::<SimResult<_>>()?;
    let axis = cfg.sweep.axis.as_str();
    let points: Vec<(f64, f64, f64)> = match axis {
        "f_bar" => cfg.sweep.values.iter().map(|&v| (v, v, cfg.run.lambda)).collect(),
        "lambda" => cfg.sweep.values.iter().map(|&v| (v, cfg.run.f_bar, v)).collect(),
        "policy" => vec![(f64::NAN, cfg.run.f_bar, cfg.run.lambda)],
        other => return Err(SimError::Config(format!("unknown sweep axis '{other}'"))),
    };
    if points.is_empty() || policies.is_empty() {
        return Err(SimError::Config("the sweep has no values or no policies".into()));
    }
    let mut rows = Vec::new();
    for &(value, f_bar, lambda) in &points {
        let mut ecfg = cfg.episode_config();
        ecfg.f_bar = f_bar;
        ecfg.lambda = lambda;
        ecfg.record_trace = false;
        let params = PriorityParams::new(f_bar, lambda, cfg.policy.eta_th);
        for &kind in &policies {
            let res = PreparedPolicy::new(&system, kind, &params, cfg.streams(), &cfg.via)
                .and_then(|p| evaluate(&system, &ecfg, &p, cfg.run.seed, cfg.run.episodes));
            let (stats, error) = match res {
                Ok((s, _)) => (Some(s), None),
                Err(e) => {
                    log::warn!("{axis} = {value}, {}: {e}", kind.as_str());
                    (None, Some(e.to_string()))
                }
            };
            rows.push(SweepRow { axis: axis.into(), value, f_bar, lambda, policy: kind.as_str().into(), stats, error });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementRow {
    pub n_delta: usize,
    pub n_sigma: usize,
    pub states: usize,
    /// Per-slot optimal average cost θ·τ.
    pub avg_cost: f64,
    pub iterations: usize,
    pub monotonicity_violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub refinement: Vec<RefinementRow>,
    /// Relative change of θ over the last grid doubling, in percent.
    pub final_change_pct: f64,
    pub eta_curve: Vec<(f64, f64)>,
    pub tuned_eta: f64,
    pub proposed: Summary,
    pub via_simulated: Summary,
    pub via_out_of_range: u64,
    /// Loss against the simulated table policy, matched seeds.
    pub loss_pct: f64,
    /// Loss against the table's own average cost.
    pub loss_vs_theta_pct: f64,
    /// Proposed policy against itself.
    pub self_loss_pct: f64,
    /// Solved table of the finest grid as state,node,action,value.
    #[serde(skip)]
    pub table_csv: String,
}

pub fn scalar_system(o: &OracleSection) -> SimResult<System> {
    let one = Mat::identity(1, 1);
    let plant = ContinuousPlant::new(Mat::from_element(1, 1, o.a), one.clone(), Mat::from_element(1, 1, o.w))
        .map_err(|e| SimError::Config(e.to_string()))?;
    Ok(System::new(plant, o.tau, &one, &one, &one, 1, 1)?)
}

/// Compares the proposed policy with the value-iteration optimum on a scalar loop.
pub fn compare_with_oracle(o: &OracleSection, seed: u64, episodes: usize) -> SimResult<OracleReport> {
    if o.n_delta.is_empty() || o.eta_grid.is_empty() {
        return Err(SimError::Config("oracle.n_delta and oracle.eta_grid must be nonempty".into()));
    }
    let system = scalar_system(o)?;
    let a = system.disc.a[(0, 0)];
    let w = system.disc.w[(0, 0)];
    let channel = quantile_nodes(&system.dist, o.channel_nodes);
    let delta_max = 8.0 * (w / (1.0 - a * a).abs().max(0.05)).sqrt();
    let mut refinement = Vec::new();
    let mut finest = None;
    for &n in &o.n_delta {
        let cfg = ScalarNcsConfig {
            a,
            w,
            s: 1.0,
            f_bar: o.f_bar,
            lambda: o.lambda,
            tau: system.disc.tau,
            delta_max,
            n_delta: n,
            sigma_max: o.sigma_max_factor * w,
            n_sigma: o.n_sigma,
            hermite_nodes: o.hermite_nodes,
            memory_budget: o.memory_budget_mb << 20,
        };
        let ncs = discretize_scalar_ncs(&cfg, &channel)?;
        let sol = relative_value_iteration(&ncs.mdp, o.tol, o.max_iter, ncs.state_index(n / 2, 0))?;
        log::info!("VIA n_delta {n}: theta {:.6} ({} iterations)", sol.theta, sol.iterations);
        refinement.push(RefinementRow {
            n_delta: n,
            n_sigma: o.n_sigma,
            states: ncs.mdp.n_states,
            avg_cost: sol.theta * system.disc.tau,
            iterations: sol.iterations,
            monotonicity_violations: ncs.monotonicity_violations(&sol),
        });
        finest = Some((ncs, sol));
    }
    let final_change_pct = match refinement.as_slice() {
        [.., p, q] => 100.0 * ((q.avg_cost - p.avg_cost) / p.avg_cost).abs(),
        _ => f64::NAN,
    };
    let (ncs, sol) = finest.expect("at least one grid");
    let mut ecfg = ncs_core::harness::EpisodeConfig::new(o.f_bar, o.lambda, o.horizon);
    ecfg.record_trace = false;

    let mut eta_curve = Vec::new();
    let mut best: Option<(f64, Summary)> = None;
    for &eta in &o.eta_grid {
        let params = PriorityParams::new(o.f_bar, o.lambda, eta);
        let p = PreparedPolicy::new(&system, PolicyKind::ProposedFeedback, &params, 1, &Default::default())?;
        let (stats, _) = evaluate(&system, &ecfg, &p, seed, episodes)?;
        eta_curve.push((eta, stats.objective.mean));
        if best.as_ref().is_none_or(|b| stats.objective.mean < b.1.mean) {
            best = Some((eta, stats.objective));
        }
    }
    let (tuned_eta, proposed) = best.expect("eta grid is nonempty");
    let table_csv = sol.policy_csv();
    let table = PreparedPolicy::Scalar { ncs: Box::new(ncs), solution: Box::new(sol), f_bar: o.f_bar };
    let (via_stats, _) = evaluate(&system, &ecfg, &table, seed, episodes)?;
    let theta_cost = refinement.last().expect("refined").avg_cost;
    Ok(OracleReport {
        refinement,
        final_change_pct,
        eta_curve,
        tuned_eta,
        proposed,
        via_simulated: via_stats.objective,
        via_out_of_range: via_stats.out_of_range,
        loss_pct: performance_loss(proposed.mean, via_stats.objective.mean)?,
        loss_vs_theta_pct: performance_loss(proposed.mean, theta_cost)?,
        self_loss_pct: performance_loss(proposed.mean, proposed.mean)?,
        table_csv,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundRow {
    pub f_bar: f64,
    pub lambda: f64,
    pub mse_bound: f64,
    pub iterations: usize,
    pub residual: f64,
    pub activation_probability: f64,
    pub sim_mse_mean: f64,
    pub sim_mse_ci99: f64,
    pub status: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub f_sweep: Vec<BoundRow>,
    pub lambda_sweep: Vec<BoundRow>,
    /// Present when both sweeps have at least four converged points.
    pub scaling: Option<ScalingSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingSummary {
    pub f_bar_slope: f64,
    pub f_bar_r2: f64,
    pub lambda_slope: f64,
    pub lambda_r2: f64,
    pub lambda_increasing: bool,
    pub f_bar_nonincreasing: bool,
}

impl From<ScalingReport> for ScalingSummary {
    fn from(r: ScalingReport) -> Self {
        Self {
            f_bar_slope: r.f_bar_slope,
            f_bar_r2: r.f_bar_r2,
            lambda_slope: r.lambda_slope,
            lambda_r2: r.lambda_r2,
            lambda_increasing: r.lambda_increasing,
            f_bar_nonincreasing: r.f_bar_nonincreasing,
        }
    }
}

/// One bound point: a pilot episode samples the threshold law, then the fixed
/// point is solved and optionally compared against Monte Carlo.
pub fn bound_point(cfg: &SimConfig, system: &System, f_bar: f64, lambda: f64) -> SimResult<BoundRow> {
    let b = &cfg.bound;
    let params = PriorityParams::new(f_bar, lambda, cfg.policy.eta_th);
    let kind = cfg.policy_kind()?;
    let policy = PreparedPolicy::new(system, kind, &params, cfg.streams(), &cfg.via)?;
    let mut pilot = cfg.episode_config();
    pilot.f_bar = f_bar;
    pilot.lambda = lambda;
    pilot.horizon = b.pilot_horizon;
    pilot.burn_in = b.pilot_burn_in;
    pilot.threshold_stride = b.stride.max(1);
    pilot.record_trace = false;
    let mut p = policy.instantiate();
    let samples = run_episode(system, &pilot, p.as_mut(), &mut episode_rng(cfg.run.seed ^ 0x9e37_79b9, 0))?.thresholds;
    let g = GOperator::new(&system.dist, f_bar, lambda, &samples)?;
    let (sim_mse_mean, sim_mse_ci99) = if b.sim_episodes > 0 {
        let mut ecfg = cfg.episode_config();
        ecfg.f_bar = f_bar;
        ecfg.lambda = lambda;
        ecfg.record_trace = false;
        let (stats, _) = evaluate(system, &ecfg, &policy, cfg.run.seed, b.sim_episodes)?;
        (stats.mse.mean, stats.mse.ci99)
    } else {
        (f64::NAN, f64::NAN)
    };
    let mut row = BoundRow {
        f_bar,
        lambda,
        mse_bound: f64::INFINITY,
        iterations: 0,
        residual: f64::NAN,
        activation_probability: g.activation_probability(),
        sim_mse_mean,
        sim_mse_ci99,
        status: "ok".into(),
    };
    match solve_fixed_point(&system.disc, &g, b.max_iter) {
        Ok(r) => {
            row.mse_bound = r.mse_bound;
            row.iterations = r.iterations;
            row.residual = r.residual;
        }
        Err(ncs_core::Error::NonConvergence { iterations, residual, .. }) => {
            row.iterations = iterations;
            row.residual = residual;
            row.status = "diverged".into();
        }
        Err(e) => return Err(e.into()),
    }
    log::info!("bound F_bar {f_bar} lambda {lambda}: {} ({})", row.mse_bound, row.status);
    Ok(row)
}

/// F̄ sweep at the configured λ and λ sweep at the configured F̄.
pub fn bound(cfg: &SimConfig) -> SimResult<BoundReport> {
    let system = cfg.build_system()?;
    let f_sweep = cfg
        .bound
        .f_bar_values
        .iter()
        .map(|&f| bound_point(cfg, &system, f, cfg.run.lambda))
        .collect::<SimResult<Vec<_>>>()?;
    let lambda_sweep = cfg
        .bound
        .lambda_values
        .iter()
        .map(|&l| bound_point(cfg, &system, cfg.run.f_bar, l))
        .collect::<SimResult<Vec<_>>>()?;
    let pairs = |rows: &[BoundRow], key: fn(&BoundRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter().filter(|r| r.status == "ok").map(|r| (key(r), r.mse_bound)).collect()
    };
    let d = cfg.channel.nt.min(cfg.channel.nr);
    let scaling = scaling_diagnostics(&pairs(&f_sweep, |r| r.f_bar), &pairs(&lambda_sweep, |r| r.lambda), d).ok().map(ScalingSummary::from);
    Ok(BoundReport { f_sweep, lambda_sweep, scaling })
}
