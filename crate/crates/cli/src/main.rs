use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use v2g_core::baselines::{cwoa_solve, gwo_solve, PenalizedObjective};
use v2g_core::fleet::{distance_histogram, modal_bin};
use v2g_core::orchestrator::{run_optimization, run_scenario};
use v2g_core::oracle::consensus_oracle;
use v2g_core::record::{export_run, export_snapshots};
use v2g_core::rng::derive_seed;
use v2g_core::stats::{stats_harness, write_samples_csv, write_stats_csv, Sweep};
use v2g_core::{load_config, ConfigError, Execution, ScenarioConfig};

#[derive(Parser)]
#[command(name = "v2g", version, about = "Fair V2G discharging with decentralized whale optimization")]
struct Cli {
    /// Scenario config (TOML). Defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    KMax,
    Whales,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured horizon and write the run record.
    Run {
        /// Put wall-clock times in iteration rows.
        #[arg(long)]
        timing: bool,
    },
    /// Repeated runs over a k_max or whale-count sweep.
    Sweep {
        #[arg(long, value_enum, default_value = "k-max")]
        param: Param,
        /// Comma-separated sweep values; config values when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Grid-search minimum of the consensus objective.
    Oracle {
        #[arg(long)]
        step: Option<f64>,
    },
    /// DWOA against the CWOA and GWO baselines.
    Compare {
        /// Number of seeds.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Print the default configuration.
    Defaults,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e = e.into();
        let config = e.chain().any(|c| {
            c.downcast_ref::<ConfigError>().is_some()
                || c.downcast_ref::<v2g_core::Error>().is_some_and(v2g_core::Error::is_config)
        });
        if config { Failure::Config(e) } else { Failure::Runtime(e) }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    cfg.optimizer.execution = exec;
    match cli.command {
        Command::Run { timing } => {
            cfg.optimizer.record_timing |= timing;
            run(&cfg)
        }
        Command::Sweep { param, values, runs } => sweep(&cfg, param, values, runs, exec),
        Command::Oracle { step } => oracle(&cfg, step, exec),
        Command::Compare { seeds } => compare(&cfg, seeds, exec),
        Command::Defaults => {
            print!("{}", ScenarioConfig::default().to_toml_string());
            Ok(())
        }
    }
}

fn out_dir(cfg: &ScenarioConfig) -> Result<&Path> {
    let dir = cfg.output.dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn run(cfg: &ScenarioConfig) -> Result<(), Failure> {
    let scenario = cfg.build_scenario()?;
    let result = run_scenario(&scenario, &cfg.simulation, &cfg.optimizer, cfg.seed)?;
    let dir = out_dir(cfg)?;
    export_run(&result.record, &dir.join("run.csv"))?;
    export_snapshots(&result.record, &dir.join("fleet.csv"))?;

    let hist = distance_histogram(&scenario.fleet, cfg.fleet.km_per_kwh, cfg.fleet.distance_basis, cfg.fleet.histogram_bin_km);
    let mut w = BufWriter::new(File::create(dir.join("distance.csv"))?);
    writeln!(w, "lower_km,upper_km,count,fraction")?;
    for b in &hist {
        writeln!(w, "{},{},{},{}", b.lower_km, b.upper_km, b.count, b.fraction)?;
    }
    w.flush()?;

    for e in &result.epochs {
        if e.outcome.empty {
            println!("epoch {} at {:.2} h: no EV available, rate 0", e.epoch, e.time_h);
        } else {
            println!(
                "epoch {} at {:.2} h: {} EVs, rate {:.4} kW, objective {:.4}, {} oracle calls",
                e.epoch,
                e.time_h,
                e.available.len(),
                e.outcome.best_rate,
                e.outcome.best_objective,
                e.outcome.oracle_calls
            );
        }
    }
    if let Some(j) = modal_bin(&hist) {
        println!(
            "most EVs ({:.0}%) have {:.0}-{:.0} km of range reserved",
            hist[j].fraction * 100.0,
            hist[j].lower_km,
            hist[j].upper_km
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn sweep(cfg: &ScenarioConfig, param: Param, values: Vec<usize>, runs: Option<usize>, exec: Execution) -> Result<(), Failure> {
    let runs = runs.unwrap_or(cfg.stats.runs);
    if runs < 2 {
        return Err(Failure::Config(anyhow::anyhow!("--runs must be at least 2")));
    }
    let sweep = match (param, values.is_empty()) {
        (Param::KMax, true) => cfg.stats.k_max_sweep(),
        (Param::KMax, false) => Sweep::KMax(values),
        (Param::Whales, true) => cfg.stats.whales_sweep(),
        (Param::Whales, false) => Sweep::Whales(values),
    };
    let scenario = cfg.build_scenario()?;
    let report = stats_harness(&scenario, &cfg.optimizer, &sweep, runs, cfg.seed, exec)?;
    let dir = out_dir(cfg)?;
    let mut w = BufWriter::new(File::create(dir.join("stats.csv"))?);
    write_stats_csv(&report.rows, &mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(dir.join("stats_runs.csv"))?);
    write_samples_csv(&report.samples, sweep.name(), &mut w)?;
    w.flush()?;
    println!("{:>8} {:>12} {:>12} {:>10} {:>6}", sweep.name(), "mean kW", "std kW", "time s", "runs");
    for r in &report.rows {
        println!("{:>8} {:>12.6} {:>12.3e} {:>10.4} {:>6}", r.value, r.mean_rate_kw, r.std_rate_kw, r.mean_wall_s, r.runs);
    }
    Ok(())
}

fn oracle(cfg: &ScenarioConfig, step: Option<f64>, exec: Execution) -> Result<(), Failure> {
    let step = step.unwrap_or(cfg.oracle.step_kw);
    if !(step.is_finite() && step > 0.0) {
        return Err(Failure::Config(anyhow::anyhow!("--step must be positive")));
    }
    let scenario = cfg.build_scenario()?;
    match consensus_oracle(&scenario, step, exec)? {
        Some(m) => println!("rate_kw={} objective={} evs={}", m.rate, m.value, scenario.fleet.available_set().len()),
        None => println!("no feasible common rate (no EV available)"),
    }
    Ok(())
}

fn compare(cfg: &ScenarioConfig, seeds: usize, exec: Execution) -> Result<(), Failure> {
    let scenario = cfg.build_scenario()?;
    let objective = PenalizedObjective::for_available(&scenario, cfg.penalty)?;
    let bounds = scenario.fleet.common_rate_bounds().context("no EV available")?;
    let oracle = consensus_oracle(&scenario, cfg.oracle.step_kw, exec)?.context("no EV available")?;
    let fitness = |x: &[f64]| objective.fitness(x).unwrap_or(f64::INFINITY);
    let mut dwoa_cfg = cfg.optimizer.clone();
    dwoa_cfg.k_max = cfg.baselines.k_max;

    let dir = out_dir(cfg)?;
    let mut w = BufWriter::new(File::create(dir.join("compare.csv"))?);
    writeln!(w, "# v2g compare v1")?;
    writeln!(w, "method,seed,iteration,objective")?;
    println!("oracle: rate {:.4} kW, objective {:.6}", oracle.rate, oracle.value);
    println!("{:>6} {:>12} {:>12} {:>12}", "seed", "DWOA", "CWOA", "GWO");
    for i in 0..seeds {
        let seed = derive_seed(cfg.seed, i as u64);
        let d = run_optimization(&scenario, &dwoa_cfg, seed)?;
        let consensus = |rate: f64| objective.true_objective(&vec![rate; objective.dim()]);
        let c = cwoa_solve(objective.dim(), fitness, cfg.baselines.population, cfg.baselines.k_max, bounds, seed, exec)?;
        let g = gwo_solve(objective.dim(), fitness, cfg.baselines.population, cfg.baselines.k_max, bounds, seed, exec)?;
        for row in &d.iterations {
            writeln!(w, "dwoa,{seed},{},{}", row.k, consensus(row.rate_kw)?)?;
        }
        for (name, res) in [("cwoa", &c), ("gwo", &g)] {
            for (k, v) in res.trace.iter().enumerate() {
                writeln!(w, "{name},{seed},{},{v}", k + 1)?;
            }
        }
        println!("{:>6} {:>12.6} {:>12.6} {:>12.6}", i, consensus(d.best_rate)?, c.best_fitness, g.best_fitness);
    }
    w.flush()?;
    println!("wrote {}", dir.join("compare.csv").display());
    Ok(())
}
