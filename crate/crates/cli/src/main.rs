//! `canalnav` — command-line front end for missions and experiments.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use canalnav_core::sim::{
    self, ident_experiment, identify_datasets, parse_range, slam_experiment, IdentExperimentConfig,
    RunOptions, Scenario, SlamExperimentConfig,
};
use canalnav_core::sysid::IdentDataset;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "canalnav", version, about = "Autonomous surface vessel navigation stack")]
struct Cli {
    /// Overrides the scenario or experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all output files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Number of control ticks to simulate (missions and sweeps only).
    #[arg(long, global = true)]
    ticks: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Runs a closed-loop mission from a JSON scenario; `river` selects the built-in one.
    Run { scenario: String },
    /// Identifies hydrodynamic parameters from simulated or recorded trials.
    Ident {
        /// Recorded trials (CSV with columns t,f1..f4,u,v,r); simulated if absent.
        #[arg(long = "csv")]
        csv: Vec<PathBuf>,
        /// Velocity measurement noise for simulated trials.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
    /// Runs the pose-graph ablation (odometry, GPS, loops, both) on a closed loop.
    SlamAblation {
        #[arg(long, default_value_t = 500.0)]
        perimeter: f64,
    },
    /// Repeats a mission over a range of one parameter (e.g. `gps.sigma 0.1:0.5:5`).
    Sweep {
        param: String,
        range: String,
        #[arg(long, default_value = "river")]
        scenario: String,
    },
}

fn load_scenario(arg: &str, seed: Option<u64>) -> Result<Scenario> {
    let mut s = if arg == "river" {
        Scenario::river()
    } else {
        Scenario::load(arg).with_context(|| format!("loading scenario {arg}"))?
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let opts = RunOptions { ticks: cli.ticks };
    let out = &cli.out_dir;

    match &cli.command {
        Command::Run { scenario } => {
            let sc = load_scenario(scenario, cli.seed)?;
            let start = Instant::now();
            let res = sim::run(&sc, &opts)?;
            let m = &res.metrics;
            log::info!(
                "{}: {} ticks in {:.1} s, goals {}/{}, position RMSE {:.3} m, heading RMSE {:.3} rad",
                m.scenario,
                m.ticks,
                start.elapsed().as_secs_f64(),
                m.goals_reached,
                m.goals_total,
                m.position_rmse,
                m.heading_rmse
            );
            for p in sim::write_mission(out, &res)? {
                println!("{}", p.display());
            }
        }
        Command::Ident { csv, noise, trials } => {
            let mut cfg = IdentExperimentConfig::default();
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            cfg.sigma_v = *noise;
            cfg.trials = *trials;
            let (report, datasets) = if csv.is_empty() {
                ident_experiment(&cfg)?
            } else {
                let datasets = csv
                    .iter()
                    .map(|p| {
                        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                        IdentDataset::read_csv(BufReader::new(f)).with_context(|| format!("reading {}", p.display()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                (identify_datasets(&datasets, cfg.truth, &cfg.ident)?, datasets)
            };
            let p = report.identified;
            println!(
                "identified m11={:.2} m22={:.2} m33={:.2} Xu={:.2} Yv={:.2} Nr={:.2}  (max rel. error {:.4}, {} iterations)",
                p.m11, p.m22, p.m33, p.xu, p.yv, p.nr, report.max_relative_error, report.iterations
            );
            sim::write_ident(out, &report, &datasets)?;
        }
        Command::SlamAblation { perimeter } => {
            let mut cfg = SlamExperimentConfig {
                perimeter: *perimeter,
                ..Default::default()
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let report = slam_experiment(&cfg);
            for r in &report.results {
                println!(
                    "{:>9}: return error {:.3} m, max error {:.3} m, {} nodes, {} loops, {} gps",
                    r.name, r.return_error, r.max_abs_error, r.nodes, r.loop_closures, r.gps_factors
                );
            }
            sim::write_slam_ablation(out, &report)?;
        }
        Command::Sweep { param, range, scenario } => {
            let sc = load_scenario(scenario, cli.seed)?;
            let values = parse_range(range)?;
            if values.is_empty() {
                bail!("empty range {range}");
            }
            let points = sim::sweep(&sc, param, &values, &opts)?;
            for p in &points {
                println!(
                    "{param}={}: position RMSE {:.3} m, heading RMSE {:.3} rad, goals {}/{}",
                    p.value, p.metrics.position_rmse, p.metrics.heading_rmse, p.metrics.goals_reached, p.metrics.goals_total
                );
            }
            sim::write_sweep(out, param, &points)?;
        }
    }
    Ok(())
}
