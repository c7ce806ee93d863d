//! Simulated communication graph and synchronous message rounds among the
//! EVs, the aggregator and the edge computing node (ECN).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::Fleet;
use crate::rng::{stream, stream_rng, SimRng};

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("no available EVs to connect")]
    NoAvailableEvs,
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("invalid edge {from} -> {to}")]
    InvalidEdge { from: AgentId, to: AgentId },
    #[error("agent {0} has no out-neighbor")]
    NoNeighbor(AgentId),
    #[error("cannot parse agent id `{0}`")]
    ParseAgent(String),
}

/// A protocol participant. Orders EVs by index, then the aggregator, then
/// the ECN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentId {
    Ev(usize),
    Aggregator,
    Ecn,
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentId::Ev(i) => write!(f, "ev{i}"),
            AgentId::Aggregator => f.write_str("aggregator"),
            AgentId::Ecn => f.write_str("ecn"),
        }
    }
}

impl FromStr for AgentId {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aggregator" => Ok(AgentId::Aggregator),
            "ecn" => Ok(AgentId::Ecn),
            _ => s
                .strip_prefix("ev")
                .and_then(|n| n.parse().ok())
                .map(AgentId::Ev)
                .ok_or_else(|| TopologyError::ParseAgent(s.to_owned())),
        }
    }
}

impl Serialize for AgentId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgentId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologyPolicy {
    /// Each EV keeps its assigned link, the aggregator links to one EV.
    #[default]
    OneRandomNeighbor,
    /// Available EVs in id order form a cycle.
    Ring,
    /// Explicit directed edges, e.g. `[["ev0", "aggregator"], ...]`.
    Custom { edges: Vec<(AgentId, AgentId)> },
}

/// Out-neighbor sets of the EVs and the aggregator.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighborMap {
    out_edges: BTreeMap<AgentId, Vec<AgentId>>,
}

impl NeighborMap {
    pub fn from_edges(edges: impl IntoIterator<Item = (AgentId, AgentId)>) -> Self {
        let mut out_edges: BTreeMap<AgentId, Vec<AgentId>> = BTreeMap::new();
        for (from, to) in edges {
            let targets = out_edges.entry(from).or_default();
            if !targets.contains(&to) {
                targets.push(to);
            }
        }
        Self { out_edges }
    }

    pub fn out_neighbors(&self, agent: AgentId) -> &[AgentId] {
        self.out_edges.get(&agent).map_or(&[], Vec::as_slice)
    }

    pub fn agents(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.out_edges.keys().copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (AgentId, AgentId)> + '_ {
        self.out_edges.iter().flat_map(|(&from, tos)| tos.iter().map(move |&to| (from, to)))
    }

    pub fn edge_count(&self) -> usize {
        self.out_edges.values().map(Vec::len).sum()
    }

    /// Fresh uniformly drawn single links for every available EV and the
    /// aggregator, ignoring assigned links. Used when links vary per round.
    pub fn random(fleet: &Fleet, rng: &mut SimRng) -> Result<Self, TopologyError> {
        let mut map = Self::default();
        map.reroute(fleet, rng)?;
        Ok(map)
    }

    /// Drops edges touching unavailable EVs and gives every available EV
    /// (and the aggregator) at least one valid out-neighbor, drawn uniformly.
    pub fn reroute(&mut self, fleet: &Fleet, rng: &mut SimRng) -> Result<(), TopologyError> {
        let available = fleet.available_set();
        if available.is_empty() {
            return Err(TopologyError::NoAvailableEvs);
        }
        let live: BTreeSet<AgentId> = available
            .iter()
            .map(|&i| AgentId::Ev(i))
            .chain(std::iter::once(AgentId::Aggregator))
            .collect();
        self.out_edges.retain(|from, _| live.contains(from));
        for targets in self.out_edges.values_mut() {
            targets.retain(|to| live.contains(to));
        }
        for &from in &live {
            let targets = self.out_edges.entry(from).or_default();
            if targets.is_empty() {
                targets.push(random_target(from, &available, rng));
            }
        }
        Ok(())
    }

    /// Writes the edge list as CSV (`from,to`).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "from,to")?;
        for (from, to) in self.edges() {
            writeln!(out, "{from},{to}")?;
        }
        Ok(())
    }
}

fn random_target(from: AgentId, available: &[usize], rng: &mut SimRng) -> AgentId {
    match from {
        AgentId::Aggregator => AgentId::Ev(available[rng.random_range(0..available.len())]),
        _ => {
            // Candidates: every other available EV plus the aggregator.
            let candidates: Vec<AgentId> = available
                .iter()
                .map(|&i| AgentId::Ev(i))
                .filter(|&a| a != from)
                .chain(std::iter::once(AgentId::Aggregator))
                .collect();
            candidates[rng.random_range(0..candidates.len())]
        }
    }
}

/// Builds the neighbor map over the currently available EVs.
pub fn build_topology(
    fleet: &Fleet,
    policy: &TopologyPolicy,
    seed: u64,
) -> Result<NeighborMap, TopologyError> {
    let mut rng = stream_rng(seed, stream::TOPOLOGY);
    build_topology_with(fleet, policy, &mut rng)
}

pub fn build_topology_with(
    fleet: &Fleet,
    policy: &TopologyPolicy,
    rng: &mut SimRng,
) -> Result<NeighborMap, TopologyError> {
    let available = fleet.available_set();
    if available.is_empty() {
        return Err(TopologyError::NoAvailableEvs);
    }
    let mut map = match policy {
        TopologyPolicy::OneRandomNeighbor => NeighborMap::from_edges(
            available.iter().map(|&i| (AgentId::Ev(i), fleet.evs[i].neighbor)),
        ),
        TopologyPolicy::Ring => {
            let n = available.len();
            let mut edges: Vec<(AgentId, AgentId)> = if n == 1 {
                vec![(AgentId::Ev(available[0]), AgentId::Aggregator)]
            } else {
                (0..n).map(|j| (AgentId::Ev(available[j]), AgentId::Ev(available[(j + 1) % n]))).collect()
            };
            edges.push((AgentId::Aggregator, AgentId::Ev(available[0])));
            NeighborMap::from_edges(edges)
        }
        TopologyPolicy::Custom { edges } => {
            for &(from, to) in edges {
                for agent in [from, to] {
                    match agent {
                        AgentId::Ev(i) if i >= fleet.len() => return Err(TopologyError::UnknownAgent(agent)),
                        AgentId::Ecn => return Err(TopologyError::InvalidEdge { from, to }),
                        _ => {}
                    }
                }
                if from == to {
                    return Err(TopologyError::InvalidEdge { from, to });
                }
            }
            NeighborMap::from_edges(edges.iter().copied())
        }
    };
    map.reroute(fleet, rng)?;
    Ok(map)
}

/// One point-to-point message.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope<P> {
    pub from: AgentId,
    pub to: AgentId,
    pub payload: P,
}

pub type Inboxes<P> = BTreeMap<AgentId, Vec<Envelope<P>>>;

/// Lossless synchronous transport by default. Every round is a barrier:
/// all sends are collected, then inboxes are handed out sorted by sender.
#[derive(Debug, Clone)]
pub struct Network {
    agents: BTreeSet<AgentId>,
    drop_probability: f64,
    rng: SimRng,
    sent: u64,
    delivered: u64,
}

impl Network {
    pub fn new(agents: impl IntoIterator<Item = AgentId>) -> Self {
        Self {
            agents: agents.into_iter().collect(),
            drop_probability: 0.0,
            rng: stream_rng(0, stream::TRANSPORT),
            sent: 0,
            delivered: 0,
        }
    }

    /// Enables random message loss. Losing a share breaks total conservation.
    pub fn with_drop_probability(mut self, probability: f64, seed: u64) -> Self {
        self.drop_probability = probability.clamp(0.0, 1.0);
        self.rng = stream_rng(seed, stream::TRANSPORT);
        self
    }

    pub fn agents(&self) -> &BTreeSet<AgentId> {
        &self.agents
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn deliver_round<P>(&mut self, envelopes: Vec<Envelope<P>>) -> Result<Inboxes<P>, TopologyError> {
        for env in &envelopes {
            for agent in [env.from, env.to] {
                if !self.agents.contains(&agent) {
                    return Err(TopologyError::UnknownAgent(agent));
                }
            }
        }
        let mut inboxes: Inboxes<P> = self.agents.iter().map(|&a| (a, Vec::new())).collect();
        for env in envelopes {
            self.sent += 1;
            if self.drop_probability > 0.0 && self.rng.random::<f64>() < self.drop_probability {
                continue;
            }
            self.delivered += 1;
            inboxes.get_mut(&env.to).expect("target checked above").push(env);
        }
        for inbox in inboxes.values_mut() {
            // Stable: per-sender order survives.
            inbox.sort_by_key(|env| env.from);
        }
        Ok(inboxes)
    }
}
