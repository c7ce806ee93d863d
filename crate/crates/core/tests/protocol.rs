use std::collections::BTreeMap;

use proptest::prelude::*;
use v2g_core::orchestrator::{ecn_select_best, run_optimization, run_optimization_from, OptimizerConfig};
use v2g_core::shuffle::{
    candidate_totals, masking_check, shuffle_round, split_value, CandidateMapping, CostShare, ProtocolError,
    RandomSplitter, SplitDistribution, SplitShares, Splitter,
};
use v2g_core::topology::{AgentId, Envelope, NeighborMap, Network};
use v2g_core::{Error, Execution, Scenario};

/// Keeps a fixed amount per (agent, candidate).
struct Keep(BTreeMap<(AgentId, usize), f64>);

impl Splitter for Keep {
    fn split(&mut self, agent: AgentId, candidate: usize, value: CostShare) -> SplitShares {
        let keep = CostShare::from_f64(self.0[&(agent, candidate)]).unwrap();
        SplitShares { keep, send: value - keep }
    }
}

fn share(v: f64) -> CostShare {
    CostShare::from_f64(v).unwrap()
}

fn pair_example() -> (BTreeMap<AgentId, Vec<CandidateMapping>>, NeighborMap) {
    let (i, j) = (AgentId::Ev(0), AgentId::Ev(1));
    let m = |index: usize, v: f64| CandidateMapping { index, rate: (index + 1) as f64, value: share(v) };
    let mappings = BTreeMap::from([(i, vec![m(0, 5.0), m(1, 10.0)]), (j, vec![m(0, 7.0), m(1, 20.0)])]);
    (mappings, NeighborMap::from_edges([(i, j), (j, i)]))
}

#[test]
fn two_ev_worked_example() {
    let (i, j) = (AgentId::Ev(0), AgentId::Ev(1));
    let (mappings, links) = pair_example();
    let mut keep = Keep(BTreeMap::from([((i, 0), 2.0), ((i, 1), 7.0), ((j, 0), 2.0), ((j, 1), 5.0)]));
    let masked = shuffle_round(&mappings, &links, &mut Network::new([i, j]), &mut keep).unwrap();

    let values = |a: AgentId| masked[&a].iter().map(|m| m.value.to_f64()).collect::<Vec<_>>();
    assert_eq!(values(i), vec![7.0, 22.0]);
    assert_eq!(values(j), vec![5.0, 8.0]);
    assert_eq!(candidate_totals(&masked), vec![share(12.0), share(30.0)]);
    assert!(masking_check(&mappings[&i][0], &masked[&i][0]));
}

#[test]
fn keep_everything_masks_nothing() {
    let (mappings, links) = pair_example();
    let keep = mappings.iter().flat_map(|(&a, l)| l.iter().map(move |m| ((a, m.index), m.value.to_f64())));
    let masked =
        shuffle_round(&mappings, &links, &mut Network::new(mappings.keys().copied()), &mut Keep(keep.collect()))
            .unwrap();
    assert_eq!(masked, mappings);
    assert!(!masking_check(&mappings[&AgentId::Ev(0)][0], &masked[&AgentId::Ev(0)][0]));
}

#[test]
fn continuous_splits_almost_always_mask() {
    let s = Scenario::default_with_seed(5).truncated(10);
    let mut unmasked = 0usize;
    let mut total = 0usize;
    for round in 0..1000u64 {
        let mut agents: Vec<AgentId> = (0..s.fleet.len()).map(AgentId::Ev).collect();
        agents.push(AgentId::Aggregator);
        let mappings: BTreeMap<_, _> = agents
            .iter()
            .enumerate()
            .map(|(n, &a)| {
                let v = 1.0 + n as f64 + round as f64 * 1e-3;
                (a, vec![CandidateMapping { index: 0, rate: 1.0, value: share(v) }])
            })
            .collect();
        let links = NeighborMap::from_edges(agents.iter().map(|&a| (a, AgentId::Aggregator)).chain([(
            AgentId::Aggregator,
            AgentId::Ev(0),
        )]));
        let mut splitter = RandomSplitter::new(round, SplitDistribution::default());
        let masked = shuffle_round(&mappings, &links, &mut Network::new(agents.iter().copied()), &mut splitter).unwrap();
        for a in &agents {
            total += 1;
            unmasked += usize::from(!masking_check(&mappings[a][0], &masked[a][0]));
        }
    }
    assert!((unmasked as f64) < 1e-3 * total as f64, "{unmasked}/{total} unmasked");
}

#[test]
fn delivery_is_schedule_independent() {
    let agents = [AgentId::Ev(0), AgentId::Ev(1), AgentId::Ev(2), AgentId::Aggregator];
    let envs: Vec<Envelope<u32>> = (0..12u32)
        .map(|p| Envelope { from: agents[p as usize % 4], to: agents[(p as usize * 7 + 1) % 4], payload: p })
        .collect();
    let mut reversed = envs.clone();
    reversed.reverse();
    let multiset = |envs: Vec<Envelope<u32>>| {
        let inboxes = Network::new(agents).deliver_round(envs).unwrap();
        inboxes
            .into_iter()
            .map(|(a, list)| {
                let mut p: Vec<u32> = list.into_iter().map(|e| e.payload).collect();
                p.sort_unstable();
                (a, p)
            })
            .collect::<BTreeMap<_, _>>()
    };
    let forward = multiset(envs);
    assert_eq!(forward, multiset(reversed));
    assert_eq!(forward.values().map(Vec::len).sum::<usize>(), 12);
}

#[test]
fn shuffling_does_not_change_the_run() {
    let s = Scenario::default_with_seed(11).truncated(30);
    let base = OptimizerConfig { k_max: 60, whales: 2, execution: Execution::Sequential, ..Default::default() };
    let with = run_optimization(&s, &base, 9).unwrap();
    let without = run_optimization(&s, &OptimizerConfig { shuffle: false, ..base.clone() }, 9).unwrap();
    assert_eq!(with.selections, without.selections);
    assert_eq!(with.best_rate, without.best_rate);
    assert_eq!(with.best_objective, without.best_objective);
}

#[test]
fn selected_total_is_the_true_minimum() {
    let s = Scenario::default_with_seed(4).truncated(15);
    let cfg = OptimizerConfig { k_max: 20, whales: 3, execution: Execution::Sequential, ..Default::default() };
    let objective = v2g_core::oracle::ConsensusObjective::for_available(&s).unwrap();
    let mut checked = 0;
    run_optimization_from(&s, &cfg, 2, None, &mut |state| {
        let truth: Vec<f64> = state.broadcast.iter().map(|&r| objective.value(r).unwrap()).collect();
        let best = truth.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(truth[state.selected] - best <= 1e-9 * best.abs().max(1.0));
        checked += 1;
    })
    .unwrap();
    assert_eq!(checked, 21);
}

#[test]
fn lossy_links_surface_missing_reports() {
    let s = Scenario::default_with_seed(1).truncated(10);
    let cfg = OptimizerConfig { drop_probability: 1.0, execution: Execution::Sequential, ..Default::default() };
    match run_optimization(&s, &cfg, 3) {
        Err(Error::Protocol(ProtocolError::MissingReport(_))) => {}
        other => panic!("expected a missing report, got {other:?}"),
    }
}

#[test]
fn ecn_argmin_ties_go_low() {
    let v = [share(3.0), share(1.0), share(1.0), share(2.0)];
    assert_eq!(ecn_select_best(&v).unwrap(), 1);
}

fn mappings_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, u64)> {
    (1usize..12, 1usize..6).prop_flat_map(|(n, width)| {
        (
            prop::collection::vec(prop::collection::vec(-1e4f64..1e4, width), n + 1),
            prop::collection::vec(0..n + 1, n + 1),
            any::<u64>(),
        )
    })
}

proptest! {
    #[test]
    fn conservation_and_argmin_invariance((values, targets, seed) in mappings_strategy()) {
        let n = values.len();
        let agent = |k: usize| if k + 1 == n { AgentId::Aggregator } else { AgentId::Ev(k) };
        let mappings: BTreeMap<_, _> = values
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let list = row
                    .iter()
                    .enumerate()
                    .map(|(index, &v)| CandidateMapping { index, rate: index as f64 * 0.5, value: share(v) })
                    .collect::<Vec<_>>();
                (agent(k), list)
            })
            .collect();
        let links = NeighborMap::from_edges(targets.iter().enumerate().map(|(k, &t)| {
            let t = if t == k { (t + 1) % n } else { t };
            (agent(k), agent(t))
        }));
        let mut splitter = RandomSplitter::new(seed, SplitDistribution::Uniform { low: -2.0, high: 3.0 });
        let masked = shuffle_round(&mappings, &links, &mut Network::new((0..n).map(agent)), &mut splitter).unwrap();
        let before = candidate_totals(&mappings);
        let after = candidate_totals(&masked);
        prop_assert_eq!(&before, &after);
        prop_assert_eq!(ecn_select_best(&before).unwrap(), ecn_select_best(&after).unwrap());
    }

    #[test]
    fn split_shares_sum_back(v in -1e6f64..1e6, f in -3.0f64..4.0) {
        let value = share(v);
        let s = split_value(value, f);
        prop_assert_eq!(s.keep + s.send, value);
    }
}
