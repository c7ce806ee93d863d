//! Ground truth for the consensus problem.
//!
//! With every EV at the same rate the joint objective is a function of one
//! variable, so a fine grid scan over the feasible interval finds its
//! minimum directly from the closed-form costs, without any of the protocol
//! machinery.

use crate::cost::{agg_net_cost, ev_net_cost, AggCostParams, CostError, EvCostParams};
use crate::exec::Execution;
use crate::scenario::Scenario;

/// Sum of all EV costs plus the aggregator cost with every EV at `rate`.
#[derive(Clone, Debug)]
pub struct ConsensusObjective {
    evs: Vec<EvCostParams>,
    agg: AggCostParams,
}

impl ConsensusObjective {
    pub fn new(evs: Vec<EvCostParams>, agg: AggCostParams) -> Result<Self, CostError> {
        if evs.len() != agg.eta.len() {
            return Err(CostError::LengthMismatch { rates: evs.len(), etas: agg.eta.len() });
        }
        Ok(Self { evs, agg })
    }

    /// Objective over the currently available EVs of `scenario`.
    pub fn for_available(scenario: &Scenario) -> Result<Self, CostError> {
        let ids = scenario.fleet.available_set();
        let evs = ids.iter().map(|&i| scenario.ev_costs[i]).collect();
        Self::new(evs, scenario.agg_params_for(&ids)?)
    }

    pub fn participants(&self) -> usize {
        self.evs.len()
    }

    pub fn value(&self, rate: f64) -> Result<f64, CostError> {
        let mut total = 0.0;
        for p in &self.evs {
            total += ev_net_cost(rate, p)?;
        }
        let rates = vec![rate; self.evs.len()];
        Ok(total + agg_net_cost(&rates, &self.agg)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridMinimum {
    pub rate: f64,
    pub value: f64,
}

/// Scans `lower, lower + step, ...` up to and including `upper`; the lowest
/// rate wins ties.
pub fn grid_minimum<F>(f: F, lower: f64, upper: f64, step: f64, exec: Execution) -> Result<GridMinimum, CostError>
where
    F: Fn(f64) -> Result<f64, CostError> + Sync + Send,
{
    assert!(step > 0.0 && lower <= upper, "grid needs step > 0 and lower <= upper");
    let n = ((upper - lower) / step).round() as usize;
    let points = n + 1;
    const CHUNK: usize = 2048;
    let chunks = points.div_ceil(CHUNK);
    let partial = exec.map_range(chunks, |c| -> Result<Option<GridMinimum>, CostError> {
        let mut best: Option<GridMinimum> = None;
        for i in c * CHUNK..((c + 1) * CHUNK).min(points) {
            let rate = if i == n { upper } else { lower + i as f64 * step };
            let value = f(rate)?;
            if best.is_none_or(|b| value < b.value) {
                best = Some(GridMinimum { rate, value });
            }
        }
        Ok(best)
    });
    let mut best: Option<GridMinimum> = None;
    for p in partial {
        if let Some(m) = p? {
            if best.is_none_or(|b| m.value < b.value) {
                best = Some(m);
            }
        }
    }
    Ok(best.expect("grid has at least one point"))
}

/// Grid minimum of the consensus objective over the feasible common-rate
/// interval of the available EVs.
pub fn consensus_oracle(scenario: &Scenario, step: f64, exec: Execution) -> Result<Option<GridMinimum>, CostError> {
    let Some((lower, upper)) = scenario.fleet.common_rate_bounds() else {
        return Ok(None);
    };
    let objective = ConsensusObjective::for_available(scenario)?;
    grid_minimum(|r| objective.value(r), lower, upper, step, exec).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_finds_parabola_vertex() {
        let m = grid_minimum(|x| Ok((x - 1.23456).powi(2)), 0.0, 6.6, 1e-4, Execution::Sequential).unwrap();
        assert!((m.rate - 1.2346).abs() < 1e-9);
        let edge = grid_minimum(|x| Ok(-x), 0.0, 6.6, 1e-4, Execution::Parallel).unwrap();
        assert_eq!(edge.rate, 6.6);
    }

    #[test]
    fn ties_go_to_lowest_rate() {
        let m = grid_minimum(|_| Ok(1.0), 0.0, 1.0, 0.25, Execution::Parallel).unwrap();
        assert_eq!(m.rate, 0.0);
    }

    #[test]
    fn default_optimum_is_interior() {
        let s = Scenario::default_with_seed(7);
        let m = consensus_oracle(&s, 1e-3, Execution::Parallel).unwrap().unwrap();
        assert!(m.rate > 0.5 && m.rate < 6.1, "{m:?}");
    }
}
