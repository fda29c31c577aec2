//! Simulation configuration, read from TOML. Matrices are nested arrays, row-major.

use std::path::Path;

use ncs_core::harness::{EpisodeConfig, PolicyKind, System};
use ncs_core::plant::ContinuousPlant;
use ncs_core::priority::PriorityParams;
use ncs_core::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// Error weight; identity when absent.
    #[serde(default)]
    pub s: Option<Vec<Vec<f64>>>,
    pub tau: f64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub nt: usize,
    pub nr: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub f_bar: f64,
    pub lambda: f64,
    pub horizon: usize,
    /// Defaults to a tenth of the horizon.
    #[serde(default)]
    pub burn_in: Option<usize>,
    pub episodes: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub joseph: bool,
    #[serde(default = "yes")]
    pub virtual_disturbance: bool,
    #[serde(default)]
    pub record_trace: bool,
    #[serde(default = "divergence_default")]
    pub divergence_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: String,
    #[serde(default = "eta_default")]
    pub eta_th: f64,
    /// Streams used by EPDS and the table baselines; the state dimension when absent.
    #[serde(default)]
    pub streams: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViaSection {
    /// Channel quantile nodes for the dropout baseline.
    pub channel_nodes: usize,
    pub n_theta: usize,
    pub hermite_nodes: usize,
    /// Multiplier on the default Θ grid half-width.
    pub range_factor: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub memory_budget_mb: usize,
}

impl Default for ViaSection {
    fn default() -> Self {
        Self { channel_nodes: 8, n_theta: 61, hermite_nodes: 7, range_factor: 1.0, tol: 1e-6, max_iter: 100_000, memory_budget_mb: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// `f_bar`, `lambda` or `policy`.
    pub axis: String,
    #[serde(default)]
    pub values: Vec<f64>,
    pub policies: Vec<String>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            axis: "lambda".into(),
            values: vec![500.0, 1000.0, 1500.0, 2000.0, 3000.0],
            policies: vec!["proposed-feedback".into(), "proposed-virtual".into(), "epds".into(), "adp".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub eta_grid: Vec<f64>,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self { eta_grid: vec![0.05, 0.1, 0.2, 0.31, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0, 12.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    pub f_bar_values: Vec<f64>,
    pub lambda_values: Vec<f64>,
    /// Pilot episode that samples (ν*, q1) for the threshold law.
    pub pilot_horizon: usize,
    pub pilot_burn_in: usize,
    pub stride: usize,
    pub max_iter: usize,
    /// Monte Carlo episodes per point; 0 skips the simulation column.
    pub sim_episodes: usize,
}

impl Default for BoundSection {
    fn default() -> Self {
        Self {
            f_bar_values: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            lambda_values: vec![500.0, 1000.0, 1500.0, 2000.0, 3000.0],
            pilot_horizon: 11_000,
            pilot_burn_in: 1_000,
            stride: 5,
            max_iter: 200_000,
            sim_episodes: 0,
        }
    }
}

/// Scalar instance for the optimality comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    /// Continuous-time drift, noise intensity and slot duration.
    pub a: f64,
    pub w: f64,
    pub tau: f64,
    pub f_bar: f64,
    pub lambda: f64,
    /// Successive Δ grid sizes; θ is reported for each.
    pub n_delta: Vec<usize>,
    pub n_sigma: usize,
    /// Σ grid top as a multiple of the discrete noise variance.
    pub sigma_max_factor: f64,
    pub hermite_nodes: usize,
    pub channel_nodes: usize,
    pub eta_grid: Vec<f64>,
    pub horizon: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub memory_budget_mb: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            a: 1.0,
            w: 1.0,
            tau: 0.05,
            f_bar: 1.0,
            lambda: 3.0,
            n_delta: vec![51, 101, 201],
            n_sigma: 40,
            sigma_max_factor: 1000.0,
            hermite_nodes: 12,
            channel_nodes: 32,
            eta_grid: vec![0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0],
            horizon: 200_000,
            tol: 1e-6,
            max_iter: 200_000,
            memory_budget_mb: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub plant: PlantSection,
    pub channel: ChannelSection,
    pub run: RunSection,
    pub policy: PolicySection,
    #[serde(default)]
    pub via: ViaSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub bound: BoundSection,
    #[serde(default)]
    pub oracle: OracleSection,
}

fn yes() -> bool {
    true
}

fn eta_default() -> f64 {
    0.31
}

fn divergence_default() -> f64 {
    1e12
}

fn rows(m: &[&[f64]]) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.to_vec()).collect()
}

pub fn matrix(name: &str, rows: &[Vec<f64>]) -> SimResult<Mat> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(SimError::Config(format!("{name} must be a non-empty rectangular matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SimError::Config(format!("{name} has non-finite entries")));
    }
    Ok(Mat::from_row_iterator(n, m, rows.iter().flatten().copied()))
}

impl SimConfig {
    /// The two-state MIMO example: three transmit and two receive antennas.
    pub fn paper_preset() -> Self {
        Self {
            plant: PlantSection {
                a: rows(&[&[1.0, 2.0], &[-1.0, 3.0]]),
                b: rows(&[&[1.0, 0.2], &[0.1, 1.0]]),
                w: rows(&[&[1.0, 0.0], &[0.0, 2.0]]),
                q: rows(&[&[1.0, 0.0], &[0.0, 2.0]]),
                r: rows(&[&[1.0, 0.0], &[0.0, 0.2]]),
                s: None,
                tau: 0.05,
                x0: None,
            },
            channel: ChannelSection { nt: 3, nr: 2 },
            run: RunSection {
                f_bar: 2.0,
                lambda: 1500.0,
                horizon: 100_000,
                burn_in: None,
                episodes: 20,
                seed: 2024,
                joseph: true,
                virtual_disturbance: true,
                record_trace: false,
                divergence_threshold: 1e12,
            },
            policy: PolicySection { kind: "proposed-feedback".into(), eta_th: 0.31, streams: None },
            via: ViaSection::default(),
            sweep: SweepSection::default(),
            calibration: CalibrationSection::default(),
            bound: BoundSection::default(),
            oracle: OracleSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> SimResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> SimResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> SimResult<()> {
        let a = matrix("plant.a", &self.plant.a)?;
        let b = matrix("plant.b", &self.plant.b)?;
        let l = a.nrows();
        if a.ncols() != l || b.nrows() != l {
            return Err(SimError::Config("plant.a must be square and plant.b must have as many rows".into()));
        }
        for (name, m) in [("plant.w", &self.plant.w), ("plant.q", &self.plant.q)] {
            if matrix(name, m)?.shape() != (l, l) {
                return Err(SimError::Config(format!("{name} must be {l}x{l}")));
            }
        }
        if matrix("plant.r", &self.plant.r)?.shape() != (b.ncols(), b.ncols()) {
            return Err(SimError::Config("plant.r must match the input dimension".into()));
        }
        if let Some(s) = &self.plant.s {
            if matrix("plant.s", s)?.shape() != (l, l) {
                return Err(SimError::Config(format!("plant.s must be {l}x{l}")));
            }
        }
        if let Some(x0) = &self.plant.x0 {
            if x0.len() != l {
                return Err(SimError::Config(format!("plant.x0 must have {l} entries")));
            }
        }
        if !(self.plant.tau > 0.0 && self.plant.tau.is_finite()) {
            return Err(SimError::Config("plant.tau must be positive".into()));
        }
        if self.channel.nt == 0 || self.channel.nr == 0 {
            return Err(SimError::Config("antenna counts must be positive".into()));
        }
        if self.run.episodes == 0 {
            return Err(SimError::Config("run.episodes must be positive".into()));
        }
        self.episode_config().validate().map_err(|e| SimError::Config(e.to_string()))?;
        PolicyKind::parse(&self.policy.kind).map_err(|e| SimError::Config(e.to_string()))?;
        for p in &self.sweep.policies {
            PolicyKind::parse(p).map_err(|e| SimError::Config(e.to_string()))?;
        }
        if !["f_bar", "lambda", "policy"].contains(&self.sweep.axis.as_str()) {
            return Err(SimError::Config(format!("sweep.axis must be f_bar, lambda or policy, got '{}'", self.sweep.axis)));
        }
        let streams = self.streams();
        if streams == 0 || streams > self.channel.nt {
            return Err(SimError::Config(format!("policy.streams must lie in 1..={}", self.channel.nt)));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.plant.a.len()
    }

    pub fn streams(&self) -> usize {
        self.policy.streams.unwrap_or_else(|| self.state_dim().min(self.channel.nt))
    }

    pub fn policy_kind(&self) -> SimResult<PolicyKind> {
        PolicyKind::parse(&self.policy.kind).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn priority_params(&self) -> PriorityParams {
        PriorityParams::new(self.run.f_bar, self.run.lambda, self.policy.eta_th)
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        let mut c = EpisodeConfig::new(self.run.f_bar, self.run.lambda, self.run.horizon);
        if let Some(b) = self.run.burn_in {
            c.burn_in = b;
        }
        c.joseph = self.run.joseph;
        c.virtual_disturbance = self.run.virtual_disturbance;
        c.record_trace = self.run.record_trace;
        c.divergence_threshold = self.run.divergence_threshold;
        c.x0 = self.plant.x0.as_ref().map(|v| ncs_core::Vector::from_vec(v.clone()));
        c
    }

    pub fn build_system(&self) -> SimResult<System> {
        let p = &self.plant;
        let l = self.state_dim();
        let s = match &p.s {
            Some(s) => matrix("plant.s", s)?,
            None => Mat::identity(l, l),
        };
        let plant = ContinuousPlant::new(matrix("plant.a", &p.a)?, matrix("plant.b", &p.b)?, matrix("plant.w", &p.w)?)
            .map_err(|e| SimError::Config(e.to_string()))?;
        Ok(System::new(plant, p.tau, &s, &matrix("plant.q", &p.q)?, &matrix("plant.r", &p.r)?, self.channel.nt, self.channel.nr)?)
    }
}
