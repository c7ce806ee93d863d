//! Additive data shuffling and local aggregation.
//!
//! Every agent splits each evaluated cost into a kept share and a sent
//! share, sends the latter to one out-neighbor, and reports the kept share
//! plus whatever it received. Shares are fixed-point integers, so the
//! per-candidate total across all agents is preserved bit for bit and the
//! ECN's argmin does not depend on whether shuffling happened.

use std::collections::BTreeMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, stream_rng, SimRng};
use crate::topology::{AgentId, Envelope, NeighborMap, Network, TopologyError};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("cost value {0} cannot be represented as a share")]
    Unrepresentable(f64),
    #[error("agent {agent} holds mappings that do not match the broadcast candidates")]
    KeyMismatch { agent: AgentId },
    #[error("agent {0} did not report")]
    MissingReport(AgentId),
    #[error("no candidates to select from")]
    NoCandidates,
    #[error(transparent)]
    Routing(#[from] TopologyError),
}

/// Fractional bits of the fixed-point cost representation (~9.1e-13 units).
pub const FRAC_BITS: u32 = 40;
const SCALE: f64 = (1u64 << FRAC_BITS) as f64;
// Below this magnitude the cheaper i64 conversion is exact.
const I64_RANGE: f64 = 9.0e18;

/// A cost value or additive share of one, in fixed point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CostShare(i128);

impl CostShare {
    pub const ZERO: CostShare = CostShare(0);

    pub fn from_f64(value: f64) -> Result<Self, ProtocolError> {
        let scaled = (value * SCALE).round();
        if scaled.abs() < I64_RANGE {
            Ok(CostShare(scaled as i64 as i128))
        } else if scaled.is_finite() && scaled.abs() < 1e36 {
            Ok(CostShare(scaled as i128))
        } else {
            Err(ProtocolError::Unrepresentable(value))
        }
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE
    }

    pub fn raw(self) -> i128 {
        self.0
    }

    pub fn from_raw(raw: i128) -> Self {
        CostShare(raw)
    }
}

impl fmt::Display for CostShare {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl Add for CostShare {
    type Output = CostShare;
    fn add(self, rhs: Self) -> Self {
        CostShare(self.0 + rhs.0)
    }
}

impl AddAssign for CostShare {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl Sub for CostShare {
    type Output = CostShare;
    fn sub(self, rhs: Self) -> Self {
        CostShare(self.0 - rhs.0)
    }
}

impl Sum for CostShare {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(CostShare::ZERO, Add::add)
    }
}

/// `(candidate index h, candidate rate, cost value)` held by one agent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateMapping {
    pub index: usize,
    pub rate: f64,
    pub value: CostShare,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitShares {
    pub keep: CostShare,
    pub send: CostShare,
}

/// Splits `value` keeping `round(keep_fraction * value)`; the sent share is
/// the exact remainder, so `keep + send == value` always.
pub fn split_value(value: CostShare, keep_fraction: f64) -> SplitShares {
    let scaled = ((value.0 as f64) * keep_fraction).round();
    let keep = if scaled.abs() < I64_RANGE { CostShare(scaled as i64 as i128) } else { CostShare(scaled as i128) };
    SplitShares { keep, send: value - keep }
}

/// Distribution of the kept fraction of each split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SplitDistribution {
    Uniform { low: f64, high: f64 },
    Fixed { keep_fraction: f64 },
}

impl Default for SplitDistribution {
    fn default() -> Self {
        SplitDistribution::Uniform { low: 0.0, high: 1.0 }
    }
}

impl SplitDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SplitDistribution::Uniform { low, high } if low < high => rng.random_range(low..high),
            SplitDistribution::Uniform { low, .. } => low,
            SplitDistribution::Fixed { keep_fraction } => keep_fraction,
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            SplitDistribution::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            SplitDistribution::Fixed { keep_fraction } => keep_fraction.is_finite(),
        }
    }
}

/// Draws a split fraction from `dist` and applies [`split_value`].
pub fn split_value_with<R: Rng + ?Sized>(value: CostShare, dist: &SplitDistribution, rng: &mut R) -> SplitShares {
    split_value(value, dist.sample(rng))
}

/// Decides how each agent splits its values and which neighbor gets the
/// sent copy.
pub trait Splitter {
    fn split(&mut self, agent: AgentId, candidate: usize, value: CostShare) -> SplitShares;

    fn pick_neighbor(&mut self, agent: AgentId, neighbors: &[AgentId]) -> AgentId {
        let _ = agent;
        neighbors[0]
    }

    /// Splits all of one agent's values, in candidate order.
    fn split_all(&mut self, agent: AgentId, list: &[CandidateMapping]) -> Vec<SplitShares> {
        list.iter().map(|m| self.split(agent, m.index, m.value)).collect()
    }
}

/// Each agent draws from its own seeded stream.
#[derive(Debug, Clone)]
pub struct RandomSplitter {
    seed: u64,
    dist: SplitDistribution,
    rngs: BTreeMap<AgentId, SimRng>,
}

impl RandomSplitter {
    pub fn new(seed: u64, dist: SplitDistribution) -> Self {
        Self { seed, dist, rngs: BTreeMap::new() }
    }

    fn rng(&mut self, agent: AgentId) -> &mut SimRng {
        let seed = self.seed;
        self.rngs.entry(agent).or_insert_with(|| {
            let offset = match agent {
                AgentId::Ev(i) => i as u64 + 2,
                AgentId::Aggregator => 1,
                AgentId::Ecn => 0,
            };
            stream_rng(seed, stream::AGENTS + offset)
        })
    }
}

impl Splitter for RandomSplitter {
    fn split(&mut self, agent: AgentId, _candidate: usize, value: CostShare) -> SplitShares {
        let dist = self.dist;
        split_value_with(value, &dist, self.rng(agent))
    }

    fn split_all(&mut self, agent: AgentId, list: &[CandidateMapping]) -> Vec<SplitShares> {
        let dist = self.dist;
        let rng = self.rng(agent);
        list.iter().map(|m| split_value_with(m.value, &dist, rng)).collect()
    }

    fn pick_neighbor(&mut self, agent: AgentId, neighbors: &[AgentId]) -> AgentId {
        if neighbors.len() == 1 {
            neighbors[0]
        } else {
            let j = self.rng(agent).random_range(0..neighbors.len());
            neighbors[j]
        }
    }
}

/// One split/send/aggregate round over all agents holding mappings.
///
/// Phase one: every agent splits all its values and sends one copy of each
/// to a single out-neighbor. Phase two: every agent adds what it received
/// to what it kept. Returns the masked mappings per agent.
pub fn shuffle_round<S: Splitter>(
    mappings: &BTreeMap<AgentId, Vec<CandidateMapping>>,
    topology: &NeighborMap,
    network: &mut Network,
    splitter: &mut S,
) -> Result<BTreeMap<AgentId, Vec<CandidateMapping>>, ProtocolError> {
    let Some(reference) = mappings.values().next() else {
        return Ok(BTreeMap::new());
    };
    for (&agent, list) in mappings {
        let consistent = list.len() == reference.len()
            && list.iter().zip(reference).all(|(a, b)| a.index == b.index && a.rate.to_bits() == b.rate.to_bits());
        if !consistent {
            return Err(ProtocolError::KeyMismatch { agent });
        }
    }

    let mut kept: BTreeMap<AgentId, Vec<CostShare>> = BTreeMap::new();
    let mut outgoing: Vec<Envelope<Vec<CostShare>>> = Vec::with_capacity(mappings.len());
    for (&agent, list) in mappings {
        let neighbors = topology.out_neighbors(agent);
        if neighbors.is_empty() {
            return Err(TopologyError::NoNeighbor(agent).into());
        }
        let target = splitter.pick_neighbor(agent, neighbors);
        let shares = splitter.split_all(agent, list);
        kept.insert(agent, shares.iter().map(|s| s.keep).collect::<Vec<_>>());
        outgoing.push(Envelope { from: agent, to: target, payload: shares.iter().map(|s| s.send).collect() });
    }

    let inboxes = network.deliver_round(outgoing)?;
    let mut masked = BTreeMap::new();
    for (&agent, list) in mappings {
        let mut totals = kept.remove(&agent).expect("every agent split");
        for env in inboxes.get(&agent).into_iter().flatten() {
            if env.payload.len() != totals.len() {
                return Err(ProtocolError::KeyMismatch { agent: env.from });
            }
            for (t, &s) in totals.iter_mut().zip(&env.payload) {
                *t += s;
            }
        }
        let out = list
            .iter()
            .zip(totals)
            .map(|(m, value)| CandidateMapping { value, ..*m })
            .collect();
        masked.insert(agent, out);
    }
    Ok(masked)
}

/// Per-candidate sum over all agents.
pub fn candidate_totals(mappings: &BTreeMap<AgentId, Vec<CandidateMapping>>) -> Vec<CostShare> {
    let width = mappings.values().map(Vec::len).max().unwrap_or(0);
    let mut totals = vec![CostShare::ZERO; width];
    for list in mappings.values() {
        for m in list {
            totals[m.index] += m.value;
        }
    }
    totals
}

/// True when the value the ECN sees differs from the agent's private value.
pub fn masking_check(original: &CandidateMapping, masked: &CandidateMapping) -> bool {
    original.value != masked.value
}

/// One row of the optional shuffle audit log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditEntry {
    pub round: usize,
    pub agent: AgentId,
    pub candidate: usize,
    pub original: CostShare,
    pub masked: CostShare,
}
