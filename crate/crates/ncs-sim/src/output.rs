//! CSV and JSON writers. Column sets are fixed; `SCHEMA_VERSION` changes with them.

use std::fs;
use std::path::Path;

use ncs_core::harness::TraceRow;
use serde::Serialize;

use crate::error::SimResult;
use crate::experiments::{BoundRow, CalibrationReport, OracleReport, SimulateReport, SweepRow};
use crate::runner::BatchStats;

pub const SCHEMA_VERSION: u32 = 1;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> SimResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> SimResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TraceCsv<'a> {
    slot: usize,
    mode: &'a str,
    sigma_star: f64,
    nu_star: f64,
    power_gain: f64,
    delta_norm_sq: f64,
    trace_sigma: f64,
    weighted_error: f64,
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> SimResult<()> {
    write_rows(
        path,
        trace.iter().map(|t| TraceCsv {
            slot: t.slot,
            mode: t.mode.as_str(),
            sigma_star: t.sigma_star,
            nu_star: t.nu_star,
            power_gain: t.power_gain,
            delta_norm_sq: t.delta_norm_sq,
            trace_sigma: t.trace_sigma,
            weighted_error: t.weighted_error,
        }),
    )
}

/// metrics.json, episodes.csv and, when recorded, trace.csv.
pub fn write_simulate(dir: &Path, report: &SimulateReport) -> SimResult<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("metrics.json"), report)?;
    write_rows(&dir.join("episodes.csv"), &report.episodes)?;
    if !report.trace.is_empty() {
        write_trace(&dir.join("trace.csv"), &report.trace)?;
    }
    Ok(())
}

struct StatsCsv {
    episodes: usize,
    nmse_mean: f64,
    nmse_ci99: f64,
    mse_mean: f64,
    objective_mean: f64,
    objective_ci99: f64,
    power_gain_mean: f64,
    power_gain_ci99: f64,
    tx_power_mean: f64,
    activation_mean: f64,
    out_of_range: u64,
}

impl StatsCsv {
    fn new(s: Option<&BatchStats>) -> Self {
        match s {
            Some(s) => Self {
                episodes: s.normalized_mse.n,
                nmse_mean: s.normalized_mse.mean,
                nmse_ci99: s.normalized_mse.ci99,
                mse_mean: s.mse.mean,
                objective_mean: s.objective.mean,
                objective_ci99: s.objective.ci99,
                power_gain_mean: s.power_gain.mean,
                power_gain_ci99: s.power_gain.ci99,
                tx_power_mean: s.tx_power.mean,
                activation_mean: s.activation.mean,
                out_of_range: s.out_of_range,
            },
            None => Self {
                episodes: 0,
                nmse_mean: f64::NAN,
                nmse_ci99: f64::NAN,
                mse_mean: f64::NAN,
                objective_mean: f64::NAN,
                objective_ci99: f64::NAN,
                power_gain_mean: f64::NAN,
                power_gain_ci99: f64::NAN,
                tx_power_mean: f64::NAN,
                activation_mean: f64::NAN,
                out_of_range: 0,
            },
        }
    }
}

fn status(error: &Option<String>) -> String {
    error.as_deref().map_or_else(|| "ok".to_string(), |e| format!("failed: {e}"))
}

pub fn write_calibration(dir: &Path, report: &CalibrationReport) -> SimResult<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("calibration.json"), report)?;
    let mut w = csv::Writer::from_path(dir.join("calibration.csv"))?;
    w.write_record(["eta_th", "nmse_mean", "nmse_ci99", "activation_mean", "objective_mean", "status"])?;
    for p in &report.curve {
        let s = StatsCsv::new(p.stats.as_ref());
        w.write_record([
            p.eta_th.to_string(),
            s.nmse_mean.to_string(),
            s.nmse_ci99.to_string(),
            s.activation_mean.to_string(),
            s.objective_mean.to_string(),
            status(&p.error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// sweep.csv with one row per (value, policy) and the power table power_table.csv.
pub fn write_sweep(dir: &Path, rows: &[SweepRow]) -> SimResult<()> {
    #[derive(Serialize)]
    struct Power<'a> {
        f_bar: f64,
        lambda: f64,
        policy: &'a str,
        avg_power_gain: f64,
        avg_tx_power: f64,
    }
    fs::create_dir_all(dir)?;
    write_json(&dir.join("sweep.json"), &rows)?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
    w.write_record([
        "axis",
        "value",
        "f_bar",
        "lambda",
        "policy",
        "episodes",
        "nmse_mean",
        "nmse_ci99",
        "mse_mean",
        "objective_mean",
        "objective_ci99",
        "power_gain_mean",
        "power_gain_ci99",
        "tx_power_mean",
        "activation_mean",
        "out_of_range",
        "status",
    ])?;
    for r in rows {
        let s = StatsCsv::new(r.stats.as_ref());
        w.write_record([
            r.axis.clone(),
            r.value.to_string(),
            r.f_bar.to_string(),
            r.lambda.to_string(),
            r.policy.clone(),
            s.episodes.to_string(),
            s.nmse_mean.to_string(),
            s.nmse_ci99.to_string(),
            s.mse_mean.to_string(),
            s.objective_mean.to_string(),
            s.objective_ci99.to_string(),
            s.power_gain_mean.to_string(),
            s.power_gain_ci99.to_string(),
            s.tx_power_mean.to_string(),
            s.activation_mean.to_string(),
            s.out_of_range.to_string(),
            status(&r.error),
        ])?;
    }
    w.flush()?;
    write_rows(
        &dir.join("power_table.csv"),
        rows.iter().filter_map(|r| {
            r.stats.as_ref().map(|s| Power {
                f_bar: r.f_bar,
                lambda: r.lambda,
                policy: &r.policy,
                avg_power_gain: s.power_gain.mean,
                avg_tx_power: s.tx_power.mean,
            })
        }),
    )
}

/// via_refinement.csv, the loss table via_loss.csv and the solved table via_table.csv.
pub fn write_oracle(dir: &Path, report: &OracleReport) -> SimResult<()> {
    #[derive(Serialize)]
    struct Loss<'a> {
        policy: &'a str,
        eta_th: f64,
        avg_cost_mean: f64,
        avg_cost_ci99: f64,
        loss_pct: f64,
    }
    fs::create_dir_all(dir)?;
    write_json(&dir.join("via_compare.json"), report)?;
    write_rows(&dir.join("via_refinement.csv"), &report.refinement)?;
    fs::write(dir.join("via_table.csv"), &report.table_csv)?;
    let theta = report.refinement.last().map_or(f64::NAN, |r| r.avg_cost);
    write_rows(
        &dir.join("via_loss.csv"),
        [
            Loss { policy: "via-table", eta_th: f64::NAN, avg_cost_mean: theta, avg_cost_ci99: f64::NAN, loss_pct: 0.0 },
            Loss {
                policy: "via-optimal",
                eta_th: f64::NAN,
                avg_cost_mean: report.via_simulated.mean,
                avg_cost_ci99: report.via_simulated.ci99,
                loss_pct: 0.0,
            },
            Loss {
                policy: "proposed-feedback",
                eta_th: report.tuned_eta,
                avg_cost_mean: report.proposed.mean,
                avg_cost_ci99: report.proposed.ci99,
                loss_pct: report.loss_pct,
            },
        ],
    )
}

/// bound.csv: both sweeps, F̄ sweep first.
pub fn write_bound(dir: &Path, rows: &[BoundRow], report: &impl Serialize) -> SimResult<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("bound.json"), report)?;
    let mut w = csv::Writer::from_path(dir.join("bound.csv"))?;
    w.write_record([
        "F_bar",
        "lambda",
        "mse_bound",
        "iterations",
        "residual",
        "sim_mse_mean",
        "sim_mse_ci99",
        "activation_probability",
        "status",
    ])?;
    for r in rows {
        w.write_record([
            r.f_bar.to_string(),
            r.lambda.to_string(),
            r.mse_bound.to_string(),
            r.iterations.to_string(),
            r.residual.to_string(),
            r.sim_mse_mean.to_string(),
            r.sim_mse_ci99.to_string(),
            r.activation_probability.to_string(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
