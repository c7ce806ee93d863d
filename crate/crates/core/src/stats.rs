//! Repeated independent runs over a hyper-parameter sweep.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::orchestrator::{run_optimization, OptimizerConfig};
use crate::record::RecordError;
use crate::rng::derive_seed;
use crate::scenario::Scenario;
use crate::Error;

pub const STATS_HEADER_VERSION: &str = "# v2g stats v1";
pub const SAMPLES_HEADER_VERSION: &str = "# v2g stats-runs v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "parameter", content = "values", rename_all = "kebab-case")]
pub enum Sweep {
    KMax(Vec<usize>),
    Whales(Vec<usize>),
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::KMax(_) => "k_max",
            Sweep::Whales(_) => "whales",
        }
    }

    pub fn values(&self) -> &[usize] {
        match self {
            Sweep::KMax(v) | Sweep::Whales(v) => v,
        }
    }

    fn apply(&self, base: &OptimizerConfig, value: usize) -> OptimizerConfig {
        let mut cfg = base.clone();
        match self {
            Sweep::KMax(_) => cfg.k_max = value,
            Sweep::Whales(_) => cfg.whales = value,
        }
        cfg
    }
}

/// One run of the harness.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSample {
    pub value: usize,
    pub run: usize,
    pub seed: u64,
    pub rate_kw: f64,
    pub objective: f64,
    pub wall_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatsRow {
    pub parameter: &'static str,
    pub value: usize,
    pub mean_rate_kw: f64,
    /// Sample standard deviation (n - 1).
    pub std_rate_kw: f64,
    pub mean_wall_s: f64,
    pub runs: usize,
}

/// Seed of run `run`; the same for every sweep point.
pub fn run_seed(base_seed: u64, run: usize) -> u64 {
    derive_seed(base_seed, run as u64)
}

pub fn summarize(parameter: &'static str, value: usize, samples: &[RunSample]) -> StatsRow {
    let n = samples.len();
    let mean = |f: fn(&RunSample) -> f64| samples.iter().map(f).sum::<f64>() / n as f64;
    let mean_rate = mean(|s| s.rate_kw);
    let var = if n > 1 {
        samples.iter().map(|s| (s.rate_kw - mean_rate).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    StatsRow {
        parameter,
        value,
        mean_rate_kw: mean_rate,
        std_rate_kw: var.sqrt(),
        mean_wall_s: mean(|s| s.wall_s),
        runs: n,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatsReport {
    pub rows: Vec<StatsRow>,
    pub samples: Vec<RunSample>,
}

/// Runs `runs` isolated replicas per sweep point. Replicas run through
/// `exec`; each replica evaluates its agents sequentially. Rows come back in
/// sweep order and samples in (point, run) order whatever the schedule.
pub fn stats_harness(
    scenario: &Scenario,
    base: &OptimizerConfig,
    sweep: &Sweep,
    runs: usize,
    seed: u64,
    exec: Execution,
) -> Result<StatsReport, Error> {
    if runs < 2 {
        return Err(Error::Invalid { key: "stats.runs".into(), reason: "need at least 2 runs".into() });
    }
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    for &value in sweep.values() {
        let mut cfg = sweep.apply(base, value);
        if exec.is_parallel() {
            cfg.execution = Execution::Sequential;
        }
        let point = exec.map_range(runs, |run| -> Result<RunSample, Error> {
            let seed = run_seed(seed, run);
            let out = run_optimization(scenario, &cfg, seed)?;
            Ok(RunSample { value, run, seed, rate_kw: out.best_rate, objective: out.best_objective, wall_s: out.wall_s })
        });
        let point: Vec<RunSample> = point.into_iter().collect::<Result<_, _>>()?;
        rows.push(summarize(sweep.name(), value, &point));
        samples.extend(point);
    }
    Ok(StatsReport { rows, samples })
}

pub fn write_stats_csv<W: Write>(rows: &[StatsRow], mut out: W) -> Result<(), RecordError> {
    writeln!(out, "{STATS_HEADER_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "value", "mean_rate_kw", "std_rate_kw", "mean_wall_s", "runs"])?;
    for r in rows {
        w.write_record([
            r.parameter.to_string(),
            r.value.to_string(),
            r.mean_rate_kw.to_string(),
            r.std_rate_kw.to_string(),
            r.mean_wall_s.to_string(),
            r.runs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_samples_csv<W: Write>(samples: &[RunSample], parameter: &str, mut out: W) -> Result<(), RecordError> {
    writeln!(out, "{SAMPLES_HEADER_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "value", "run", "seed", "rate_kw", "objective", "wall_s"])?;
    for s in samples {
        w.write_record([
            parameter.to_string(),
            s.value.to_string(),
            s.run.to_string(),
            s.seed.to_string(),
            s.rate_kw.to_string(),
            s.objective.to_string(),
            s.wall_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rate: f64) -> RunSample {
        RunSample { value: 1, run: 0, seed: 0, rate_kw: rate, objective: 0.0, wall_s: 1.0 }
    }

    #[test]
    fn summary_uses_sample_std() {
        let row = summarize("k_max", 1, &[sample(1.0), sample(2.0), sample(3.0)]);
        assert_eq!(row.mean_rate_kw, 2.0);
        assert_eq!(row.std_rate_kw, 1.0);
        assert_eq!(row.runs, 3);
    }

    #[test]
    fn order_independent() {
        let s = Scenario::default_with_seed(1).truncated(6);
        let base = OptimizerConfig { k_max: 20, ..Default::default() };
        let sweep = Sweep::KMax(vec![10, 20]);
        let a = stats_harness(&s, &base, &sweep, 4, 3, Execution::Parallel).unwrap();
        let b = stats_harness(&s, &base, &sweep, 4, 3, Execution::Sequential).unwrap();
        let strip = |r: &StatsReport| r.samples.iter().map(|s| (s.value, s.run, s.rate_kw.to_bits())).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.rows.len(), 2);
        assert!(stats_harness(&s, &base, &sweep, 1, 3, Execution::Sequential).is_err());
    }
}
