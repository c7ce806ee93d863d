//! Net-cost models for EVs and the aggregator, plus the evaluate-only oracle
//! wrapper through which the protocol is allowed to see them.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("discharge rate {0} kW is negative or not finite")]
    InvalidRate(f64),
    #[error("rate vector has {rates} entries but {etas} efficiencies are configured")]
    LengthMismatch { rates: usize, etas: usize },
    #[error("invalid cost parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

fn check_rate(rate: f64) -> Result<f64, CostError> {
    if rate.is_finite() && rate >= 0.0 {
        Ok(rate)
    } else {
        Err(CostError::InvalidRate(rate))
    }
}

fn require(cond: bool, name: &'static str, reason: &str) -> Result<(), CostError> {
    if cond {
        Ok(())
    } else {
        Err(CostError::InvalidParameter { name, reason: reason.to_owned() })
    }
}

/// Private cost coefficients of one EV for a fixed pricing period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvCostParams {
    /// Quadratic battery-degradation coefficient (cost/kW²).
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub gamma_deg: f64,
    /// Lumped operational cost, independent of the rate.
    pub other_ops: f64,
    /// Unit price paid for V2G power.
    pub price: f64,
}

impl EvCostParams {
    pub fn new(
        alpha_deg: f64,
        beta_deg: f64,
        gamma_deg: f64,
        other_ops: f64,
        price: f64,
    ) -> Result<Self, CostError> {
        let params = Self { alpha_deg, beta_deg, gamma_deg, other_ops, price };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        require(
            self.alpha_deg.is_finite() && self.alpha_deg > 0.0,
            "alpha_deg",
            "must be finite and > 0",
        )?;
        require(self.beta_deg.is_finite(), "beta_deg", "must be finite")?;
        require(self.gamma_deg.is_finite(), "gamma_deg", "must be finite")?;
        require(
            self.other_ops.is_finite() && self.other_ops >= 0.0,
            "other_ops",
            "must be finite and >= 0",
        )?;
        require(self.price.is_finite() && self.price >= 0.0, "price", "must be finite and >= 0")
    }
}

/// Net cost of an EV discharging at `rate`: degradation plus operations
/// minus the revenue `price * rate`.
pub fn ev_net_cost(rate: f64, params: &EvCostParams) -> Result<f64, CostError> {
    let c = check_rate(rate)?;
    let degradation = params.alpha_deg * c * c + params.beta_deg * c + params.gamma_deg;
    Ok(degradation + params.other_ops - params.price * c)
}

/// Generation-cost and utility coefficients of the aggregator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggCoefficients {
    pub gen_a: f64,
    pub gen_b: f64,
    pub gen_c: f64,
    /// Weight of the logarithmic convenience utility.
    pub omega: f64,
}

impl AggCoefficients {
    pub fn validate(&self) -> Result<(), CostError> {
        require(self.gen_a.is_finite() && self.gen_a > 0.0, "gen_a", "must be finite and > 0")?;
        require(self.gen_b.is_finite(), "gen_b", "must be finite")?;
        require(self.gen_c.is_finite(), "gen_c", "must be finite")?;
        require(self.omega.is_finite() && self.omega >= 0.0, "omega", "must be finite and >= 0")
    }
}

/// Aggregator cost model for a concrete set of participating EVs.
#[derive(Clone, Debug, PartialEq)]
pub struct AggCostParams {
    pub gen_a: f64,
    pub gen_b: f64,
    pub gen_c: f64,
    pub omega: f64,
    /// DC-to-AC efficiency of each participating EV, in rate order.
    pub eta: Vec<f64>,
}

impl AggCostParams {
    pub fn new(coefficients: AggCoefficients, eta: Vec<f64>) -> Result<Self, CostError> {
        coefficients.validate()?;
        require(
            eta.iter().all(|&e| e > 0.0 && e <= 1.0),
            "eta",
            "every efficiency must lie in (0, 1]",
        )?;
        let AggCoefficients { gen_a, gen_b, gen_c, omega } = coefficients;
        Ok(Self { gen_a, gen_b, gen_c, omega, eta })
    }

    pub fn coefficients(&self) -> AggCoefficients {
        AggCoefficients { gen_a: self.gen_a, gen_b: self.gen_b, gen_c: self.gen_c, omega: self.omega }
    }
}

/// Aggregator net cost: quadratic generation cost of the delivered
/// (efficiency-scaled) power minus `omega * ln(total raw rate + 1)`.
///
/// The utility sums raw rates while the generation term sums `eta_i * c_i`.
pub fn agg_net_cost(rates: &[f64], params: &AggCostParams) -> Result<f64, CostError> {
    if rates.len() != params.eta.len() {
        return Err(CostError::LengthMismatch { rates: rates.len(), etas: params.eta.len() });
    }
    let mut delivered = 0.0;
    let mut drawn = 0.0;
    for (&rate, &eta) in rates.iter().zip(&params.eta) {
        let c = check_rate(rate)?;
        delivered += eta * c;
        drawn += c;
    }
    let generation = params.gen_a * delivered * delivered + params.gen_b * delivered + params.gen_c;
    Ok(generation - params.omega * (drawn + 1.0).ln())
}

/// A cost model that can only be queried for values.
pub trait NetCost {
    type Input: ?Sized;

    fn net_cost(&self, input: &Self::Input) -> Result<f64, CostError>;
}

impl NetCost for EvCostParams {
    type Input = f64;

    fn net_cost(&self, rate: &f64) -> Result<f64, CostError> {
        ev_net_cost(*rate, self)
    }
}

impl NetCost for AggCostParams {
    type Input = [f64];

    fn net_cost(&self, rates: &[f64]) -> Result<f64, CostError> {
        agg_net_cost(rates, self)
    }
}

/// Black-box access to a private cost model.
///
/// Only values come out; the coefficients stay inside. Every call, including
/// one rejected with a domain error, is billed to `call_count`.
#[derive(Debug)]
pub struct CostOracle<C> {
    model: C,
    calls: AtomicU64,
}

impl<C: NetCost> CostOracle<C> {
    pub fn new(model: C) -> Self {
        Self { model, calls: AtomicU64::new(0) }
    }

    pub fn evaluate(&self, input: &C::Input) -> Result<f64, CostError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.model.net_cost(input)
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}
