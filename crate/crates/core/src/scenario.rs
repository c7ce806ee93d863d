//! A fleet together with every participant's private cost model.

use serde::{Deserialize, Serialize};

use crate::cost::{AggCoefficients, AggCostParams, CostError, EvCostParams};
use crate::fleet::{sample_fleet, Bounds, Fleet, FleetConfig, FleetError};
use crate::rng::{stream, stream_rng};

/// Uniform ranges for per-EV cost coefficients plus the unit price.
///
/// The defaults put the consensus optimum of the 100-EV default fleet near
/// 4.5 kW and that of its first 50 EVs slightly higher, both well inside
/// [0, 6.6] kW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub price: f64,
    pub alpha: Bounds,
    pub beta: Bounds,
    pub gamma: Bounds,
    pub other_ops: Bounds,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            price: 0.02,
            alpha: Bounds::new(0.0015, 0.0020),
            beta: Bounds::new(0.0, 0.01),
            gamma: Bounds::new(0.05, 0.15),
            other_ops: Bounds::new(0.02, 0.08),
        }
    }
}

pub const DEFAULT_AGGREGATOR: AggCoefficients =
    AggCoefficients { gen_a: 5e-7, gen_b: 0.0, gen_c: 1.0, omega: 0.5 };

impl Default for AggCoefficients {
    fn default() -> Self {
        DEFAULT_AGGREGATOR
    }
}

pub fn sample_costs(n: usize, seed: u64, config: &CostConfig) -> Result<Vec<EvCostParams>, FleetError> {
    config.alpha.check("alpha")?;
    config.beta.check("beta")?;
    config.gamma.check("gamma")?;
    config.other_ops.check("other_ops")?;
    let mut rng = stream_rng(seed, stream::COSTS);
    Ok((0..n)
        .map(|_| EvCostParams {
            alpha_deg: config.alpha.sample(&mut rng),
            beta_deg: config.beta.sample(&mut rng),
            gamma_deg: config.gamma.sample(&mut rng),
            other_ops: config.other_ops.sample(&mut rng),
            price: config.price,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub fleet: Fleet,
    pub ev_costs: Vec<EvCostParams>,
    pub aggregator: AggCoefficients,
}

impl Scenario {
    pub fn sample(
        n: usize,
        seed: u64,
        fleet: &FleetConfig,
        costs: &CostConfig,
        aggregator: AggCoefficients,
    ) -> Result<Self, FleetError> {
        let fleet = sample_fleet(n, seed, fleet)?;
        let ev_costs = sample_costs(n, seed, costs)?;
        Ok(Self { fleet, ev_costs, aggregator })
    }

    /// Default 100-EV setup with the given seed.
    pub fn default_with_seed(seed: u64) -> Self {
        Self::sample(100, seed, &FleetConfig::default(), &CostConfig::default(), DEFAULT_AGGREGATOR)
            .expect("default configuration is valid")
    }

    pub fn validate(&self) -> Result<(), CostError> {
        self.aggregator.validate()?;
        if self.ev_costs.len() != self.fleet.len() {
            return Err(CostError::LengthMismatch { rates: self.fleet.len(), etas: self.ev_costs.len() });
        }
        self.ev_costs.iter().try_for_each(EvCostParams::validate)
    }

    /// Aggregator model over the given EVs, in id order.
    pub fn agg_params_for(&self, ids: &[usize]) -> Result<AggCostParams, CostError> {
        AggCostParams::new(self.aggregator, ids.iter().map(|&i| self.fleet.evs[i].eta).collect())
    }

    /// Keeps the first `n` EVs only (ids stay dense).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.fleet.len());
        let mut fleet = self.fleet.clone();
        fleet.evs.truncate(n);
        for ev in &mut fleet.evs {
            if let crate::topology::AgentId::Ev(j) = ev.neighbor {
                if j >= n {
                    ev.neighbor = crate::topology::AgentId::Aggregator;
                }
            }
        }
        Self { fleet, ev_costs: self.ev_costs[..n].to_vec(), aggregator: self.aggregator }
    }
}
