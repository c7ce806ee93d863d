//! The ECN-driven protocol loop and the event-driven simulation around it.
//!
//! One iteration: the ECN broadcasts the candidate rates, every available EV
//! and the aggregator evaluate their private cost at each candidate, values
//! are shuffled between neighbors, the masked reports reach the ECN, which
//! sums them per candidate, selects the argmin and moves the whale pool.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cost::{AggCostParams, CostOracle, EvCostParams};
use crate::dwoa::WhalePool;
use crate::exec::Execution;
use crate::fleet::FleetError;
use crate::record::{FleetSnapshot, IterationRow, RecordRow, RunRecord, TimestepRow};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::scenario::Scenario;
use crate::shuffle::{shuffle_round, AuditEntry, CandidateMapping, CostShare, ProtocolError, RandomSplitter, SplitDistribution};
use crate::topology::{build_topology_with, AgentId, Envelope, NeighborMap, Network, TopologyPolicy};
use crate::Error;

/// How the whale count scales with the fleet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WhaleSizing {
    /// `whales` candidates for every available EV.
    #[default]
    PerEv,
    /// `whales` candidates in total.
    Total,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// M, the number of whales (see `whale_sizing`).
    pub whales: usize,
    pub whale_sizing: WhaleSizing,
    pub k_max: usize,
    /// Mask reports with additive shuffling. Off sends raw values.
    pub shuffle: bool,
    pub split: SplitDistribution,
    pub topology: TopologyPolicy,
    /// Draw fresh links before every shuffle round.
    pub resample_links: bool,
    /// Probability that any message is lost.
    pub drop_probability: f64,
    /// Seed the first whale of a new epoch with the previous epoch's rate.
    pub warm_start: bool,
    /// Put wall-clock times into iteration rows. Breaks byte determinism.
    pub record_timing: bool,
    /// Keep per-agent original and masked values of every round.
    pub audit: bool,
    pub execution: Execution,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            whales: 1,
            whale_sizing: WhaleSizing::PerEv,
            k_max: 150,
            shuffle: true,
            split: SplitDistribution::default(),
            topology: TopologyPolicy::default(),
            resample_links: false,
            drop_probability: 0.0,
            warm_start: false,
            record_timing: false,
            audit: false,
            execution: Execution::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn pool_size(&self, available: usize) -> usize {
        match self.whale_sizing {
            WhaleSizing::PerEv => self.whales * available,
            WhaleSizing::Total => self.whales,
        }
    }
}

/// Index of the minimal total; the lowest index wins ties.
pub fn ecn_select_best(totals: &[CostShare]) -> Result<usize, ProtocolError> {
    let mut best: Option<(usize, CostShare)> = None;
    for (i, &t) in totals.iter().enumerate() {
        if best.is_none_or(|(_, b)| t < b) {
            best = Some((i, t));
        }
    }
    best.map(|(i, _)| i).ok_or(ProtocolError::NoCandidates)
}

/// Sums the reports per candidate. Every expected agent must report exactly
/// once, with one value per candidate in broadcast order.
pub fn ecn_aggregate(
    reports: &[Envelope<Vec<CandidateMapping>>],
    expected: &[AgentId],
    width: usize,
) -> Result<Vec<CostShare>, ProtocolError> {
    let mut by_agent: BTreeMap<AgentId, &[CandidateMapping]> = BTreeMap::new();
    for env in reports {
        if by_agent.insert(env.from, &env.payload).is_some() {
            return Err(ProtocolError::KeyMismatch { agent: env.from });
        }
    }
    let mut totals = vec![CostShare::ZERO; width];
    for &agent in expected {
        let list = by_agent.remove(&agent).ok_or(ProtocolError::MissingReport(agent))?;
        if list.len() != width || list.iter().enumerate().any(|(i, m)| m.index != i) {
            return Err(ProtocolError::KeyMismatch { agent });
        }
        for (t, m) in totals.iter_mut().zip(list) {
            *t += m.value;
        }
    }
    if let Some((&agent, _)) = by_agent.iter().next() {
        return Err(ProtocolError::KeyMismatch { agent });
    }
    Ok(totals)
}

/// Snapshot of one protocol iteration as seen by the ECN.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochState {
    pub k: usize,
    pub broadcast: Arc<[f64]>,
    pub masked: BTreeMap<AgentId, Vec<CandidateMapping>>,
    pub selected: usize,
}

enum Agent {
    Ev(usize, CostOracle<EvCostParams>),
    Aggregator(CostOracle<AggCostParams>, usize),
}

impl Agent {
    fn id(&self) -> AgentId {
        match self {
            Agent::Ev(i, _) => AgentId::Ev(*i),
            Agent::Aggregator(..) => AgentId::Aggregator,
        }
    }

    fn calls(&self) -> u64 {
        match self {
            Agent::Ev(_, o) => o.call_count(),
            Agent::Aggregator(o, _) => o.call_count(),
        }
    }

    fn evaluate(&self, candidates: &[f64]) -> Result<Vec<CandidateMapping>, Error> {
        let mut rates = Vec::new();
        candidates
            .iter()
            .enumerate()
            .map(|(index, &rate)| {
                let value = match self {
                    Agent::Ev(_, oracle) => oracle.evaluate(&rate)?,
                    Agent::Aggregator(oracle, n) => {
                        rates.clear();
                        rates.resize(*n, rate);
                        oracle.evaluate(&rates)?
                    }
                };
                Ok(CandidateMapping { index, rate, value: CostShare::from_f64(value)? })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationOutcome {
    /// Elitist best common rate; 0 when nobody was available.
    pub best_rate: f64,
    /// Aggregated total at `best_rate`, as summed by the ECN.
    pub best_objective: f64,
    /// Selected candidate index for evaluations `0..=k_max`.
    pub selections: Vec<usize>,
    /// One row per update, `k = 1..=k_max`.
    pub iterations: Vec<IterationRow>,
    pub oracle_calls: u64,
    pub pool_size: usize,
    pub participants: usize,
    pub bounds: (f64, f64),
    pub empty: bool,
    pub wall_s: f64,
    pub audit: Vec<AuditEntry>,
}

impl OptimizationOutcome {
    fn empty() -> Self {
        Self {
            best_rate: 0.0,
            best_objective: 0.0,
            selections: Vec::new(),
            iterations: Vec::new(),
            oracle_calls: 0,
            pool_size: 0,
            participants: 0,
            bounds: (0.0, 0.0),
            empty: true,
            wall_s: 0.0,
            audit: Vec::new(),
        }
    }

    /// Best-so-far rate after each update.
    pub fn rate_trace(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.rate_kw).collect()
    }

    /// Record with just this optimization's rows (or the empty flag).
    pub fn to_record(&self) -> RunRecord {
        let mut record = RunRecord::default();
        if self.empty {
            record.push(RecordRow::Empty { epoch: 0, time_h: 0.0 });
        }
        record.rows.extend(self.iterations.iter().cloned().map(RecordRow::Iteration));
        record
    }
}

/// Runs one DWOA epoch over the currently available EVs of `scenario`.
pub fn run_optimization(scenario: &Scenario, cfg: &OptimizerConfig, seed: u64) -> Result<OptimizationOutcome, Error> {
    run_optimization_from(scenario, cfg, seed, None, &mut |_| {})
}

/// [`run_optimization`] with an optional warm-start rate and an observer
/// called once per evaluation.
pub fn run_optimization_from(
    scenario: &Scenario,
    cfg: &OptimizerConfig,
    seed: u64,
    warm: Option<f64>,
    observer: &mut dyn FnMut(&EpochState),
) -> Result<OptimizationOutcome, Error> {
    let started = Instant::now();
    let available = scenario.fleet.available_set();
    if available.is_empty() {
        return Ok(OptimizationOutcome { wall_s: started.elapsed().as_secs_f64(), ..OptimizationOutcome::empty() });
    }
    let (lower, upper) = scenario.fleet.common_rate_bounds().ok_or(FleetError::InvalidBounds {
        field: "rate",
        low: f64::NAN,
        high: f64::NAN,
    })?;

    let mut agents: Vec<Agent> = available
        .iter()
        .map(|&i| Agent::Ev(i, CostOracle::new(scenario.ev_costs[i])))
        .collect();
    agents.push(Agent::Aggregator(CostOracle::new(scenario.agg_params_for(&available)?), available.len()));
    let ids: Vec<AgentId> = agents.iter().map(Agent::id).collect();

    let mut ecn_rng = stream_rng(seed, stream::ECN);
    let mut topo_rng = stream_rng(seed, stream::TOPOLOGY);
    let mut links: NeighborMap = build_topology_with(&scenario.fleet, &cfg.topology, &mut topo_rng)?;
    let mut network = Network::new(ids.iter().copied().chain([AgentId::Ecn]))
        .with_drop_probability(cfg.drop_probability, seed);
    let mut splitter = RandomSplitter::new(seed, cfg.split);

    let size = cfg.pool_size(available.len());
    let mut pool = WhalePool::random(size, lower, upper, cfg.k_max, &mut ecn_rng)?;
    if let Some(rate) = warm.filter(|_| cfg.warm_start) {
        let mut positions = pool.positions().to_vec();
        positions[0] = rate;
        pool = WhalePool::from_positions(positions, lower, upper, cfg.k_max)?;
    }

    let mut selections = Vec::with_capacity(cfg.k_max + 1);
    let mut iterations = Vec::with_capacity(cfg.k_max);
    let mut audit = Vec::new();
    for k in 0..=cfg.k_max {
        if k > 0 {
            pool.step(&mut ecn_rng)?;
            if cfg.resample_links {
                links = NeighborMap::random(&scenario.fleet, &mut topo_rng)?;
            }
        }

        // Broadcast.
        let broadcast: Arc<[f64]> = pool.positions().into();
        let envelopes = ids
            .iter()
            .map(|&to| Envelope { from: AgentId::Ecn, to, payload: Arc::clone(&broadcast) })
            .collect();
        let inboxes = network.deliver_round(envelopes)?;

        // Local evaluation.
        let jobs: Vec<(&Agent, Option<Arc<[f64]>>)> = agents
            .iter()
            .map(|a| (a, inboxes.get(&a.id()).and_then(|inbox| inbox.last()).map(|e| Arc::clone(&e.payload))))
            .collect();
        let evaluated = cfg.execution.map(&jobs, |(agent, received)| match received {
            Some(candidates) => agent.evaluate(candidates).map(Some),
            None => Ok(None),
        });
        let mut mappings = BTreeMap::new();
        for (agent, result) in agents.iter().zip(evaluated) {
            if let Some(list) = result? {
                mappings.insert(agent.id(), list);
            }
        }

        // Shuffle and report.
        let masked = if cfg.shuffle {
            shuffle_round(&mappings, &links, &mut network, &mut splitter)?
        } else {
            mappings.clone()
        };
        if cfg.audit {
            for (agent, list) in &mappings {
                for (orig, m) in list.iter().zip(&masked[agent]) {
                    audit.push(AuditEntry { round: k, agent: *agent, candidate: orig.index, original: orig.value, masked: m.value });
                }
            }
        }
        let reports = masked
            .iter()
            .map(|(&from, list)| Envelope { from, to: AgentId::Ecn, payload: list.clone() })
            .collect();
        let mut inboxes = network.deliver_round(reports)?;
        let received = inboxes.remove(&AgentId::Ecn).unwrap_or_default();

        // Aggregate, select, update the leader.
        let totals = ecn_aggregate(&received, &ids, pool.len())?;
        let selected = ecn_select_best(&totals)?;
        pool.observe(selected, totals[selected])?;
        selections.push(selected);
        observer(&EpochState { k, broadcast, masked, selected });

        if k > 0 {
            let leader = pool.leader().expect("observed at least once");
            iterations.push(IterationRow {
                epoch: 0,
                k,
                time_h: 0.0,
                rate_kw: leader.rate,
                objective: leader.total.to_f64(),
                selected,
                available: available.len(),
                oracle_calls: agents.iter().map(Agent::calls).sum(),
                wall_ms: cfg.record_timing.then(|| started.elapsed().as_secs_f64() * 1e3),
            });
        }
    }

    let leader = pool.leader().expect("observed at least once");
    Ok(OptimizationOutcome {
        best_rate: leader.rate,
        best_objective: leader.total.to_f64(),
        selections,
        iterations,
        oracle_calls: agents.iter().map(Agent::calls).sum(),
        pool_size: size,
        participants: ids.len(),
        bounds: (lower, upper),
        empty: false,
        wall_s: started.elapsed().as_secs_f64(),
        audit,
    })
}

/// A change to the fleet at a given time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetEvent {
    pub at_h: f64,
    /// EVs that leave.
    pub depart_ids: Vec<usize>,
    /// Keep only the first `n` EVs connected; the rest leave.
    pub keep_count: Option<usize>,
}

impl FleetEvent {
    fn departing(&self, fleet_len: usize) -> Vec<usize> {
        let mut ids = self.depart_ids.clone();
        if let Some(n) = self.keep_count {
            ids.extend(n.min(fleet_len)..fleet_len);
        }
        ids
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub dt_h: f64,
    pub horizon_h: f64,
    pub events: Vec<FleetEvent>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { dt_h: 0.1, horizon_h: 1.0, events: Vec::new() }
    }
}

impl SimulationConfig {
    pub fn steps(&self) -> usize {
        ((self.horizon_h / self.dt_h).round() as usize).max(1)
    }
}

/// Per-epoch summary of a scenario run.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub time_h: f64,
    pub available: Vec<usize>,
    pub outcome: OptimizationOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioRun {
    pub record: RunRecord,
    pub epochs: Vec<EpochSummary>,
    /// Fleet state at the end of the horizon.
    pub final_scenario: Scenario,
}

/// Steps the fleet through the horizon, re-optimizing whenever the set of
/// available EVs changes.
pub fn run_scenario(
    scenario: &Scenario,
    sim: &SimulationConfig,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<ScenarioRun, Error> {
    if !(sim.dt_h.is_finite() && sim.dt_h > 0.0) {
        return Err(FleetError::InvalidTimeStep(sim.dt_h).into());
    }
    if !(sim.horizon_h.is_finite() && sim.horizon_h > 0.0) {
        return Err(FleetError::InvalidTimeStep(sim.horizon_h).into());
    }
    let mut scenario = scenario.clone();
    let mut events: Vec<&FleetEvent> = sim.events.iter().collect();
    events.sort_by(|a, b| a.at_h.total_cmp(&b.at_h));
    let mut next_event = 0;

    let mut record = RunRecord::default();
    let mut epochs: Vec<EpochSummary> = Vec::new();
    let mut current: Option<Vec<usize>> = None;
    let mut rate = 0.0;

    for step in 0..sim.steps() {
        let time_h = step as f64 * sim.dt_h;
        while next_event < events.len() && events[next_event].at_h <= time_h + 1e-9 {
            let ids = events[next_event].departing(scenario.fleet.len());
            scenario.fleet.depart(&ids)?;
            next_event += 1;
        }

        let available = scenario.fleet.available_set();
        if current.as_ref() != Some(&available) {
            let epoch = epochs.len();
            let warm = (epoch > 0).then_some(rate);
            let mut outcome = run_optimization_from(
                &scenario,
                cfg,
                derive_seed(seed, epoch as u64),
                warm,
                &mut |_| {},
            )?;
            for row in &mut outcome.iterations {
                row.epoch = epoch;
                row.time_h = time_h;
            }
            if outcome.empty {
                record.push(RecordRow::Empty { epoch, time_h });
            }
            record.rows.extend(outcome.iterations.iter().cloned().map(RecordRow::Iteration));
            rate = outcome.best_rate;
            epochs.push(EpochSummary { epoch, time_h, available: available.clone(), outcome });
            current = Some(available.clone());
        }

        let applied = if available.is_empty() { 0.0 } else { rate };
        let discharge = scenario.fleet.apply_discharge(applied, sim.dt_h)?;
        record.push(RecordRow::Timestep(TimestepRow {
            epoch: epochs.len() - 1,
            step,
            time_h,
            rate_kw: applied,
            available: available.len(),
            grid_kw: discharge.grid_kw,
        }));
        record.snapshots.push(FleetSnapshot {
            step,
            time_h: time_h + sim.dt_h,
            soc: scenario.fleet.evs.iter().map(|ev| ev.soc).collect(),
            available: scenario.fleet.evs.iter().map(|ev| ev.is_available()).collect(),
        });
    }
    Ok(ScenarioRun { record, epochs, final_scenario: scenario })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::consensus_oracle;

    fn share(v: f64) -> CostShare {
        CostShare::from_f64(v).unwrap()
    }

    #[test]
    fn select_worked_example() {
        assert_eq!(ecn_select_best(&[share(12.0), share(30.0)]).unwrap(), 0);
        assert_eq!(ecn_select_best(&[share(3.0)]).unwrap(), 0);
        assert_eq!(ecn_select_best(&[share(5.0), share(2.0), share(2.0)]).unwrap(), 1);
        assert_eq!(ecn_select_best(&[]), Err(ProtocolError::NoCandidates));
    }

    #[test]
    fn aggregate_requires_every_agent() {
        let m = |i| CandidateMapping { index: i, rate: i as f64, value: share(1.0) };
        let env = |from| Envelope { from, to: AgentId::Ecn, payload: vec![m(0), m(1)] };
        let expected = [AgentId::Ev(0), AgentId::Aggregator];
        let totals = ecn_aggregate(&[env(AgentId::Ev(0)), env(AgentId::Aggregator)], &expected, 2).unwrap();
        assert_eq!(totals, vec![share(2.0), share(2.0)]);
        assert_eq!(
            ecn_aggregate(&[env(AgentId::Ev(0))], &expected, 2),
            Err(ProtocolError::MissingReport(AgentId::Aggregator))
        );
    }

    #[test]
    fn k_max_zero_returns_initial_best() {
        let s = Scenario::default_with_seed(3).truncated(10);
        let cfg = OptimizerConfig { k_max: 0, ..Default::default() };
        let out = run_optimization(&s, &cfg, 1).unwrap();
        assert!(out.iterations.is_empty());
        assert_eq!(out.selections.len(), 1);
        let mut rng = stream_rng(1, stream::ECN);
        let pool = WhalePool::random(10, 0.0, 6.6, 0, &mut rng).unwrap();
        assert_eq!(out.best_rate, pool.positions()[out.selections[0]]);
    }

    #[test]
    fn converges_near_oracle_small_fleet() {
        let s = Scenario::default_with_seed(5).truncated(20);
        let out = run_optimization(&s, &OptimizerConfig::default(), 9).unwrap();
        let oracle = consensus_oracle(&s, 1e-4, Execution::Sequential).unwrap().unwrap();
        assert!((out.best_rate - oracle.rate).abs() < 1e-2, "{} vs {}", out.best_rate, oracle.rate);
        assert_eq!(out.iterations.len(), 150);
        assert_eq!(out.oracle_calls, 21 * 20 * 151);
    }

    #[test]
    fn empty_fleet_is_flagged() {
        let mut s = Scenario::default_with_seed(3).truncated(4);
        s.fleet.depart(&[0, 1, 2, 3]).unwrap();
        let out = run_optimization(&s, &OptimizerConfig::default(), 1).unwrap();
        assert!(out.empty);
        assert_eq!(out.best_rate, 0.0);
        assert!(out.to_record().is_empty_flagged());
    }
}
