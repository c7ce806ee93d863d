//! Centralized baselines over the full per-EV rate vector: whale
//! optimization (CWOA) and grey wolf optimization (GWO), both with a graded
//! consensus penalty.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{agg_net_cost, ev_net_cost, AggCostParams, CostError, EvCostParams};
use crate::exec::Execution;
use crate::rng::{stream, stream_rng, SimRng};
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    pub cap: f64,
    /// Spread (kW) up to which a vector still counts as consensus.
    pub tolerance: f64,
    /// Spread at which the full cap applies. Defaults to the rate range.
    pub spread_scale: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { cap: 10.0, tolerance: 1e-3, spread_scale: 6.6 }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<(), CostError> {
        let bad = |name: &'static str, reason: &str| Err(CostError::InvalidParameter { name, reason: reason.to_owned() });
        if !(self.cap.is_finite() && self.cap > 0.0) {
            return bad("penalty.cap", "must be positive");
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return bad("penalty.tolerance", "must be non-negative");
        }
        if !(self.spread_scale.is_finite() && self.spread_scale > 0.0) {
            return bad("penalty.spread_scale", "must be positive");
        }
        Ok(())
    }

    /// `cap * min(1, spread / spread_scale)` once the spread exceeds the
    /// tolerance, else 0.
    pub fn penalty(&self, rates: &[f64]) -> f64 {
        let spread = max_spread(rates);
        if spread > self.tolerance {
            self.cap * (spread / self.spread_scale).min(1.0)
        } else {
            0.0
        }
    }
}

pub fn max_spread(rates: &[f64]) -> f64 {
    let (lo, hi) = rates.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    if rates.is_empty() { 0.0 } else { hi - lo }
}

/// Joint objective over a per-EV rate vector, with and without penalty.
#[derive(Clone, Debug)]
pub struct PenalizedObjective {
    evs: Vec<EvCostParams>,
    agg: AggCostParams,
    penalty: PenaltyConfig,
}

impl PenalizedObjective {
    pub fn new(evs: Vec<EvCostParams>, agg: AggCostParams, penalty: PenaltyConfig) -> Result<Self, CostError> {
        if evs.len() != agg.eta.len() {
            return Err(CostError::LengthMismatch { rates: evs.len(), etas: agg.eta.len() });
        }
        penalty.validate()?;
        Ok(Self { evs, agg, penalty })
    }

    pub fn for_available(scenario: &Scenario, penalty: PenaltyConfig) -> Result<Self, CostError> {
        let ids = scenario.fleet.available_set();
        Self::new(ids.iter().map(|&i| scenario.ev_costs[i]).collect(), scenario.agg_params_for(&ids)?, penalty)
    }

    pub fn dim(&self) -> usize {
        self.evs.len()
    }

    pub fn true_objective(&self, rates: &[f64]) -> Result<f64, CostError> {
        if rates.len() != self.evs.len() {
            return Err(CostError::LengthMismatch { rates: rates.len(), etas: self.evs.len() });
        }
        let mut total = agg_net_cost(rates, &self.agg)?;
        for (r, p) in rates.iter().zip(&self.evs) {
            total += ev_net_cost(*r, p)?;
        }
        Ok(total)
    }

    pub fn fitness(&self, rates: &[f64]) -> Result<f64, CostError> {
        Ok(self.true_objective(rates)? + self.penalty.penalty(rates))
    }
}

/// Free-function form of [`PenalizedObjective::fitness`].
pub fn penalized_fitness(rates: &[f64], objective: &PenalizedObjective) -> Result<f64, CostError> {
    objective.fitness(rates)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub population: usize,
    pub k_max: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { population: 30, k_max: 300 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    /// Best fitness after each iteration's evaluation, length `k_max`.
    pub trace: Vec<f64>,
}

fn random_population(n: usize, dim: usize, lower: f64, upper: f64, rng: &mut SimRng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| if lower < upper { rng.random_range(lower..=upper) } else { lower }).collect())
        .collect()
}

fn clamp_all(x: &mut [f64], lower: f64, upper: f64) {
    for v in x {
        *v = v.clamp(lower, upper);
    }
}

fn check(dim: usize, population: usize, min_population: usize, lower: f64, upper: f64) -> Result<(), CostError> {
    if dim == 0 {
        return Err(CostError::InvalidParameter { name: "dim", reason: "must be at least 1".into() });
    }
    if population < min_population {
        return Err(CostError::InvalidParameter { name: "population", reason: "too small".into() });
    }
    if !(lower.is_finite() && upper.is_finite() && lower <= upper) {
        return Err(CostError::InvalidParameter { name: "bounds", reason: "need lower <= upper".into() });
    }
    Ok(())
}

/// Centralized whale optimization in the standard reference form: leader
/// per dimension for the search move, spiral with `b = 1` and
/// `l ~ U[a2, 1]` where `a2` falls linearly from -1 to -2.
#[allow(clippy::too_many_arguments)]
pub fn cwoa_solve<F>(
    dim: usize,
    fitness: F,
    population: usize,
    k_max: usize,
    bounds: (f64, f64),
    seed: u64,
    exec: Execution,
) -> Result<SolveResult, CostError>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let (lower, upper) = bounds;
    check(dim, population, 1, lower, upper)?;
    let mut rng = stream_rng(seed, stream::BASELINE);
    let mut x = random_population(population, dim, lower, upper, &mut rng);
    let mut leader = vec![0.0; dim];
    let mut leader_score = f64::INFINITY;
    let mut trace = Vec::with_capacity(k_max);

    for t in 0..k_max {
        for row in &mut x {
            clamp_all(row, lower, upper);
        }
        let scores = exec.map(&x, |row| fitness(row));
        for (row, &s) in x.iter().zip(&scores) {
            if s < leader_score {
                leader_score = s;
                leader.copy_from_slice(row);
            }
        }
        trace.push(leader_score);

        let a = 2.0 - t as f64 * (2.0 / k_max as f64);
        let a2 = -1.0 + t as f64 * (-1.0 / k_max as f64);
        for i in 0..population {
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            let big_a = 2.0 * a * r1 - a;
            let c = 2.0 * r2;
            let l = (a2 - 1.0) * rng.random::<f64>() + 1.0;
            let p: f64 = rng.random();
            for j in 0..dim {
                let xij = x[i][j];
                x[i][j] = if p < 0.5 {
                    if big_a.abs() >= 1.0 {
                        let k = rng.random_range(0..population);
                        let xr = x[k][j];
                        xr - big_a * (c * xr - xij).abs()
                    } else {
                        leader[j] - big_a * (c * leader[j] - xij).abs()
                    }
                } else {
                    (leader[j] - xij).abs() * l.exp() * (2.0 * PI * l).cos() + leader[j]
                };
            }
        }
    }
    if k_max == 0 {
        let scores = exec.map(&x, |row| fitness(row));
        for (row, &s) in x.iter().zip(&scores) {
            if s < leader_score {
                leader_score = s;
                leader.copy_from_slice(row);
            }
        }
    }
    Ok(SolveResult { best: leader, best_fitness: leader_score, trace })
}

/// Grey wolf optimization in its original form (alpha, beta, delta leaders,
/// `a` falling linearly from 2 to 0).
pub fn gwo_solve<F>(
    dim: usize,
    fitness: F,
    pack_size: usize,
    k_max: usize,
    bounds: (f64, f64),
    seed: u64,
    exec: Execution,
) -> Result<SolveResult, CostError>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let (lower, upper) = bounds;
    check(dim, pack_size, 3, lower, upper)?;
    let mut rng = stream_rng(seed, stream::BASELINE);
    let mut x = random_population(pack_size, dim, lower, upper, &mut rng);
    let mut leaders = [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
    let mut scores_abc = [f64::INFINITY; 3];
    let mut trace = Vec::with_capacity(k_max);

    let rank = |x: &[Vec<f64>], leaders: &mut [Vec<f64>; 3], s: &mut [f64; 3]| {
        let scores = exec.map(x, |row| fitness(row));
        for (row, &f) in x.iter().zip(&scores) {
            if f < s[0] {
                s[0] = f;
                leaders[0].copy_from_slice(row);
            }
            if f > s[0] && f < s[1] {
                s[1] = f;
                leaders[1].copy_from_slice(row);
            }
            if f > s[0] && f > s[1] && f < s[2] {
                s[2] = f;
                leaders[2].copy_from_slice(row);
            }
        }
    };

    for t in 0..k_max {
        for row in &mut x {
            clamp_all(row, lower, upper);
        }
        rank(&x, &mut leaders, &mut scores_abc);
        trace.push(scores_abc[0]);

        let a = 2.0 - t as f64 * (2.0 / k_max as f64);
        for row in &mut x {
            for (j, v) in row.iter_mut().enumerate() {
                let mut sum = 0.0;
                for leader in &leaders {
                    let r1: f64 = rng.random();
                    let r2: f64 = rng.random();
                    let big_a = 2.0 * a * r1 - a;
                    let c = 2.0 * r2;
                    let d = (c * leader[j] - *v).abs();
                    sum += leader[j] - big_a * d;
                }
                *v = sum / 3.0;
            }
        }
    }
    if k_max == 0 {
        rank(&x, &mut leaders, &mut scores_abc);
    }
    let [alpha, ..] = leaders;
    Ok(SolveResult { best: alpha, best_fitness: scores_abc[0], trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::consensus_oracle;

    fn single_ev() -> Scenario {
        Scenario::default_with_seed(11).truncated(1)
    }

    #[test]
    fn penalty_shape() {
        let p = PenaltyConfig::default();
        assert_eq!(p.penalty(&[2.0, 2.0, 2.0]), 0.0);
        assert_eq!(p.penalty(&[0.0, 6.6]), 10.0);
        assert!((p.penalty(&[1.0, 4.3]) - 5.0).abs() < 1e-12);
        assert_eq!(p.penalty(&[1.0, 1.0005]), 0.0);
    }

    #[test]
    fn fitness_never_below_objective() {
        let s = Scenario::default_with_seed(2).truncated(8);
        let obj = PenalizedObjective::for_available(&s, PenaltyConfig::default()).unwrap();
        let mut rng = stream_rng(5, 77);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..=6.6)).collect();
            assert!(obj.fitness(&x).unwrap() >= obj.true_objective(&x).unwrap());
        }
        assert!(obj.true_objective(&[1.0]).is_err());
    }

    #[test]
    fn one_dimension_matches_oracle() {
        let s = single_ev();
        let obj = PenalizedObjective::for_available(&s, PenaltyConfig::default()).unwrap();
        let oracle = consensus_oracle(&s, 1e-4, Execution::Sequential).unwrap().unwrap();
        let f = |x: &[f64]| obj.fitness(x).unwrap();
        let w = cwoa_solve(1, f, 30, 300, (0.0, 6.6), 4, Execution::Sequential).unwrap();
        let g = gwo_solve(1, f, 30, 300, (0.0, 6.6), 4, Execution::Sequential).unwrap();
        assert!((w.best[0] - oracle.rate).abs() < 1e-2, "{:?} vs {}", w.best, oracle.rate);
        assert!((g.best[0] - oracle.rate).abs() < 1e-2, "{:?} vs {}", g.best, oracle.rate);
        assert_eq!(w.trace.len(), 300);
        assert!(w.trace.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn reproducible() {
        let f = |x: &[f64]| x.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>();
        let a = gwo_solve(4, f, 6, 20, (0.0, 6.6), 1, Execution::Parallel).unwrap();
        let b = gwo_solve(4, f, 6, 20, (0.0, 6.6), 1, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert!(gwo_solve(4, f, 2, 20, (0.0, 6.6), 1, Execution::Sequential).is_err());
    }
}
