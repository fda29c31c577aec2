use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ncs_sim::experiments::{bound, calibrate_eta, compare_with_oracle, simulate, sweep};
use ncs_sim::{output, SimConfig, SimResult};

#[derive(Parser)]
#[command(name = "ncs-sim", version, about = "Event-driven MIMO precoding for networked control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config; the built-in two-state MIMO preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured policy and write metrics.json, episodes.csv and trace.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Record a per-slot trace of episode 0.
        #[arg(long)]
        trace: bool,
    },
    /// Normalized MSE over the calibration eta grid.
    CalibrateEta {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep F_bar, lambda or the policy list.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Optimality gap against value iteration on the scalar instance.
    ViaCompare {
        #[command(flatten)]
        common: Common,
    },
    /// MSE bound sweeps and scaling diagnostics.
    Bound {
        #[command(flatten)]
        common: Common,
    },
    /// Print the preset config as TOML.
    Preset,
}

fn load(c: &Common) -> SimResult<SimConfig> {
    let mut cfg = match &c.config {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::paper_preset(),
    };
    if let Some(s) = c.seed {
        cfg.run.seed = s;
    }
    if let Some(e) = c.episodes {
        cfg.run.episodes = e;
    }
    if let Some(h) = c.horizon {
        cfg.run.horizon = h;
        cfg.oracle.horizon = h;
        if cfg.run.burn_in.is_some_and(|b| b >= h) {
            cfg.run.burn_in = None;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> SimResult<()> {
    match cli.command {
        Command::Simulate { common, trace } => {
            let mut cfg = load(&common)?;
            cfg.run.record_trace |= trace;
            let r = simulate(&cfg)?;
            output::write_simulate(&common.out, &r)?;
            println!(
                "{}: normalized mse {:.4} ± {:.4}, objective {:.4}, activation {:.3}",
                r.policy, r.stats.normalized_mse.mean, r.stats.normalized_mse.ci99, r.stats.objective.mean, r.stats.activation.mean
            );
        }
        Command::CalibrateEta { common } => {
            let cfg = load(&common)?;
            let r = calibrate_eta(&cfg, &cfg.calibration.eta_grid)?;
            output::write_calibration(&common.out, &r)?;
            println!("best eta_th {} (normalized mse {:.4}), interior minimum: {}", r.best_eta, r.best_mse, r.interior_minimum);
        }
        Command::Sweep { common } => {
            let cfg = load(&common)?;
            let rows = sweep(&cfg)?;
            output::write_sweep(&common.out, &rows)?;
            for r in &rows {
                match &r.stats {
                    Some(s) => println!("{} {} {}: {:.4} ± {:.4}", r.axis, r.value, r.policy, s.normalized_mse.mean, s.normalized_mse.ci99),
                    None => println!("{} {} {}: failed", r.axis, r.value, r.policy),
                }
            }
        }
        Command::ViaCompare { common } => {
            let cfg = load(&common)?;
            let episodes = common.episodes.unwrap_or(4);
            let r = compare_with_oracle(&cfg.oracle, cfg.run.seed, episodes)?;
            output::write_oracle(&common.out, &r)?;
            println!(
                "proposed {:.6} at eta_th {}, optimal {:.6}: loss {:.2}% (grid change {:.2}%)",
                r.proposed.mean, r.tuned_eta, r.via_simulated.mean, r.loss_pct, r.final_change_pct
            );
        }
        Command::Bound { common } => {
            let cfg = load(&common)?;
            let r = bound(&cfg)?;
            let rows: Vec<_> = r.f_sweep.iter().chain(&r.lambda_sweep).cloned().collect();
            output::write_bound(&common.out, &rows, &r)?;
            for row in &rows {
                println!("F_bar {} lambda {}: bound {} ({})", row.f_bar, row.lambda, row.mse_bound, row.status);
            }
        }
        Command::Preset => print!("{}", SimConfig::paper_preset().to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
