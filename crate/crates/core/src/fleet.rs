//! EV population: sampling, availability, SOC dynamics and derived
//! reporting quantities.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, stream_rng};
use crate::topology::AgentId;

#[derive(Debug, Error, PartialEq)]
pub enum FleetError {
    #[error("fleet must contain at least one EV")]
    Empty,
    #[error("bounds for `{field}` are inverted or invalid: [{low}, {high}]")]
    InvalidBounds { field: &'static str, low: f64, high: f64 },
    #[error("time step must be positive, got {0} h")]
    InvalidTimeStep(f64),
    #[error("common rate {rate} kW is outside [{min}, {max}] kW of EV {id}")]
    RateOutOfBounds { id: usize, rate: f64, min: f64, max: f64 },
    #[error("unknown EV id {0}")]
    UnknownEv(usize),
}

/// Closed interval used for uniform sampling, written `[low, high]` in config.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Bounds {
    pub low: f64,
    pub high: f64,
}

impl Bounds {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn check(&self, field: &'static str) -> Result<(), FleetError> {
        if self.low.is_finite() && self.high.is_finite() && self.low <= self.high {
            Ok(())
        } else {
            Err(FleetError::InvalidBounds { field, low: self.low, high: self.high })
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.random_range(self.low..=self.high)
        }
    }
}

impl From<[f64; 2]> for Bounds {
    fn from([low, high]: [f64; 2]) -> Self {
        Self { low, high }
    }
}

impl From<Bounds> for [f64; 2] {
    fn from(b: Bounds) -> Self {
        [b.low, b.high]
    }
}

/// Distribution bounds for a sampled fleet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub soc_initial: Bounds,
    pub soc_min: Bounds,
    pub capacity_kwh: Bounds,
    pub rate_min_kw: f64,
    pub rate_max_kw: f64,
    pub eta: Bounds,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            soc_initial: Bounds::new(0.8, 0.9),
            soc_min: Bounds::new(0.1, 0.2),
            capacity_kwh: Bounds::new(15.0, 30.0),
            rate_min_kw: 0.0,
            rate_max_kw: 6.6,
            eta: Bounds::new(0.85, 0.92),
        }
    }
}

impl FleetConfig {
    pub fn validate(&self) -> Result<(), FleetError> {
        self.soc_initial.check("soc_initial")?;
        self.soc_min.check("soc_min")?;
        self.capacity_kwh.check("capacity_kwh")?;
        self.eta.check("eta")?;
        Bounds::new(self.rate_min_kw, self.rate_max_kw).check("rate_kw")?;
        let unit = |b: &Bounds| b.low >= 0.0 && b.high <= 1.0;
        if !unit(&self.soc_initial) {
            return Err(bad("soc_initial", self.soc_initial));
        }
        if !unit(&self.soc_min) {
            return Err(bad("soc_min", self.soc_min));
        }
        if self.capacity_kwh.low <= 0.0 {
            return Err(bad("capacity_kwh", self.capacity_kwh));
        }
        if self.eta.low <= 0.0 || self.eta.high > 1.0 {
            return Err(bad("eta", self.eta));
        }
        if self.rate_min_kw < 0.0 {
            return Err(bad("rate_kw", Bounds::new(self.rate_min_kw, self.rate_max_kw)));
        }
        Ok(())
    }
}

fn bad(field: &'static str, b: Bounds) -> FleetError {
    FleetError::InvalidBounds { field, low: b.low, high: b.high }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvState {
    pub id: usize,
    pub capacity_kwh: f64,
    pub soc: f64,
    /// SOC on arrival, kept for reporting.
    pub soc_initial: f64,
    /// User-specified floor; below it the EV stops discharging.
    pub soc_min: f64,
    pub rate_min_kw: f64,
    pub rate_max_kw: f64,
    pub eta: f64,
    /// Assigned communication link (another EV or the aggregator).
    pub neighbor: AgentId,
    /// Left the parking area; never available again.
    pub departed: bool,
}

impl EvState {
    /// Available while not departed and `soc >= soc_min`.
    pub fn is_available(&self) -> bool {
        !self.departed && self.soc >= self.soc_min
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub evs: Vec<EvState>,
    pub time_h: f64,
}

/// Per-step outcome of [`Fleet::apply_discharge`].
#[derive(Clone, Debug, PartialEq)]
pub struct DischargeStep {
    /// EVs that discharged during the step.
    pub discharged: Vec<usize>,
    /// Delivered AC power, `rate * sum(eta)` over the discharging EVs.
    pub grid_kw: f64,
}

pub fn sample_fleet(n: usize, seed: u64, config: &FleetConfig) -> Result<Fleet, FleetError> {
    if n == 0 {
        return Err(FleetError::Empty);
    }
    config.validate()?;
    let mut rng = stream_rng(seed, stream::FLEET);
    let mut evs = Vec::with_capacity(n);
    for id in 0..n {
        let soc = config.soc_initial.sample(&mut rng);
        let soc_min = config.soc_min.sample(&mut rng);
        let capacity_kwh = config.capacity_kwh.sample(&mut rng);
        let eta = config.eta.sample(&mut rng);
        // One link per EV: uniformly another EV or the aggregator.
        let pick = rng.random_range(0..n);
        let neighbor = if pick == id { AgentId::Aggregator } else { AgentId::Ev(pick) };
        evs.push(EvState {
            id,
            capacity_kwh,
            soc,
            soc_initial: soc,
            soc_min,
            rate_min_kw: config.rate_min_kw,
            rate_max_kw: config.rate_max_kw,
            eta,
            neighbor,
            departed: false,
        });
    }
    Ok(Fleet { evs, time_h: 0.0 })
}

impl Fleet {
    pub fn len(&self) -> usize {
        self.evs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evs.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&EvState> {
        self.evs.get(id)
    }

    /// Ids of available EVs, ascending.
    pub fn available_set(&self) -> Vec<usize> {
        self.evs.iter().filter(|ev| ev.is_available()).map(|ev| ev.id).collect()
    }

    pub fn available_eta_sum(&self) -> f64 {
        self.evs.iter().filter(|ev| ev.is_available()).map(|ev| ev.eta).sum()
    }

    /// Feasible common-rate interval over available EVs:
    /// `[max rate_min, min rate_max]`. `None` when nobody is available or
    /// the per-EV boxes do not intersect.
    pub fn common_rate_bounds(&self) -> Option<(f64, f64)> {
        let mut lower = f64::NEG_INFINITY;
        let mut upper = f64::INFINITY;
        let mut any = false;
        for ev in self.evs.iter().filter(|ev| ev.is_available()) {
            lower = lower.max(ev.rate_min_kw);
            upper = upper.min(ev.rate_max_kw);
            any = true;
        }
        (any && lower <= upper).then_some((lower, upper))
    }

    /// Marks EVs as departed. They stay in the fleet with rate 0.
    pub fn depart(&mut self, ids: &[usize]) -> Result<(), FleetError> {
        for &id in ids {
            self.evs.get_mut(id).ok_or(FleetError::UnknownEv(id))?.departed = true;
        }
        Ok(())
    }

    /// Discharges every available EV at `common_rate` for `dt_h` hours.
    ///
    /// Unavailable EVs are untouched. SOC is floored at zero; EVs that fall
    /// below their floor drop out from the next step on.
    pub fn apply_discharge(&mut self, common_rate: f64, dt_h: f64) -> Result<DischargeStep, FleetError> {
        if !(dt_h.is_finite() && dt_h > 0.0) {
            return Err(FleetError::InvalidTimeStep(dt_h));
        }
        for ev in self.evs.iter().filter(|ev| ev.is_available()) {
            if !(common_rate >= ev.rate_min_kw && common_rate <= ev.rate_max_kw) {
                return Err(FleetError::RateOutOfBounds {
                    id: ev.id,
                    rate: common_rate,
                    min: ev.rate_min_kw,
                    max: ev.rate_max_kw,
                });
            }
        }
        let mut discharged = Vec::new();
        let mut eta_sum = 0.0;
        for ev in self.evs.iter_mut().filter(|ev| ev.is_available()) {
            ev.soc = (ev.soc - common_rate * dt_h / ev.capacity_kwh).max(0.0);
            eta_sum += ev.eta;
            discharged.push(ev.id);
        }
        self.time_h += dt_h;
        Ok(DischargeStep { discharged, grid_kw: common_rate * eta_sum })
    }
}

/// Which SOC figure sizes the energy reserved for the trip home.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceBasis {
    #[default]
    SocMin,
    InitialSoc,
}

/// Range covered by the energy left at the user's SOC floor.
pub fn distance_home(ev: &EvState, km_per_kwh: f64) -> f64 {
    ev.soc_min * ev.capacity_kwh * km_per_kwh
}

pub fn distance_home_with(ev: &EvState, km_per_kwh: f64, basis: DistanceBasis) -> f64 {
    match basis {
        DistanceBasis::SocMin => distance_home(ev, km_per_kwh),
        DistanceBasis::InitialSoc => ev.soc_initial * ev.capacity_kwh * km_per_kwh,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower_km: f64,
    pub upper_km: f64,
    pub count: usize,
    pub fraction: f64,
}

/// Histogram of distance-to-home over all EVs in bins `[j*w, (j+1)*w)`.
pub fn distance_histogram(
    fleet: &Fleet,
    km_per_kwh: f64,
    basis: DistanceBasis,
    bin_km: f64,
) -> Vec<HistogramBin> {
    assert!(bin_km > 0.0, "bin width must be positive");
    let distances: Vec<f64> =
        fleet.evs.iter().map(|ev| distance_home_with(ev, km_per_kwh, basis)).collect();
    let bins = distances.iter().map(|d| (d / bin_km).floor() as usize).max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; bins];
    for d in &distances {
        counts[(d / bin_km).floor() as usize] += 1;
    }
    let total = distances.len().max(1) as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(j, count)| HistogramBin {
            lower_km: j as f64 * bin_km,
            upper_km: (j + 1) as f64 * bin_km,
            count,
            fraction: count as f64 / total,
        })
        .collect()
}

/// Index of the most populated bin; ties go to the lower bin.
pub fn modal_bin(bins: &[HistogramBin]) -> Option<usize> {
    bins.iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.count.cmp(&b.count).then(ib.cmp(ia)))
        .map(|(j, _)| j)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(capacity: f64, soc: f64, soc_min: f64) -> EvState {
        EvState {
            id: 0,
            capacity_kwh: capacity,
            soc,
            soc_initial: soc,
            soc_min,
            rate_min_kw: 0.0,
            rate_max_kw: 6.6,
            eta: 1.0,
            neighbor: AgentId::Aggregator,
            departed: false,
        }
    }

    #[test]
    fn default_fleet_within_bounds() {
        let fleet = sample_fleet(100, 11, &FleetConfig::default()).unwrap();
        assert_eq!(fleet.len(), 100);
        for e in &fleet.evs {
            assert!((0.8..=0.9).contains(&e.soc));
            assert!((0.1..=0.2).contains(&e.soc_min));
            assert!((15.0..=30.0).contains(&e.capacity_kwh));
            assert_eq!(e.rate_max_kw, 6.6);
            assert_eq!(e.rate_min_kw, 0.0);
            assert_ne!(e.neighbor, AgentId::Ev(e.id));
        }
        assert_eq!(fleet.available_set().len(), 100);
    }

    #[test]
    fn single_ev_links_to_aggregator() {
        let fleet = sample_fleet(1, 5, &FleetConfig::default()).unwrap();
        assert_eq!(fleet.evs[0].neighbor, AgentId::Aggregator);
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = FleetConfig::default();
        assert_eq!(sample_fleet(40, 9, &cfg).unwrap(), sample_fleet(40, 9, &cfg).unwrap());
        assert_ne!(sample_fleet(40, 9, &cfg).unwrap(), sample_fleet(40, 10, &cfg).unwrap());
    }

    #[test]
    fn sampling_rejects_bad_config() {
        let cfg = FleetConfig { soc_min: Bounds::new(0.3, 0.1), ..FleetConfig::default() };
        assert!(matches!(
            sample_fleet(3, 1, &cfg),
            Err(FleetError::InvalidBounds { field: "soc_min", .. })
        ));
        assert_eq!(sample_fleet(0, 1, &FleetConfig::default()), Err(FleetError::Empty));
    }

    #[test]
    fn availability_boundary() {
        let mut fleet = Fleet { evs: vec![ev(20.0, 0.15, 0.2), ev(20.0, 0.2, 0.2)], time_h: 0.0 };
        fleet.evs[1].id = 1;
        assert_eq!(fleet.available_set(), vec![1]);
        fleet.depart(&[1]).unwrap();
        assert!(fleet.available_set().is_empty());
        assert_eq!(fleet.depart(&[7]), Err(FleetError::UnknownEv(7)));
    }

    #[test]
    fn discharge_step() {
        let mut fleet = Fleet { evs: vec![ev(20.0, 0.8, 0.1), ev(20.0, 0.05, 0.1)], time_h: 0.0 };
        fleet.evs[1].id = 1;
        let step = fleet.apply_discharge(4.0, 0.5).unwrap();
        assert!((fleet.evs[0].soc - 0.7).abs() < 1e-12);
        assert_eq!(fleet.evs[1].soc, 0.05);
        assert_eq!(step.discharged, vec![0]);
        assert_eq!(step.grid_kw, 4.0);
        assert_eq!(fleet.time_h, 0.5);
        assert!(matches!(fleet.apply_discharge(7.0, 0.1), Err(FleetError::RateOutOfBounds { .. })));
        assert_eq!(fleet.apply_discharge(1.0, 0.0), Err(FleetError::InvalidTimeStep(0.0)));
    }

    #[test]
    fn soc_floors_at_zero() {
        let mut fleet = Fleet { evs: vec![ev(1.0, 0.1, 0.0)], time_h: 0.0 };
        fleet.apply_discharge(6.6, 1.0).unwrap();
        assert_eq!(fleet.evs[0].soc, 0.0);
    }

    #[test]
    fn grid_power_identity_unit_eta() {
        let mut evs = Vec::new();
        for id in 0..100 {
            let mut e = ev(20.0, 0.85, 0.15);
            e.id = id;
            evs.push(e);
        }
        let mut fleet = Fleet { evs, time_h: 0.0 };
        assert_eq!(fleet.apply_discharge(4.5, 0.1).unwrap().grid_kw, 450.0);
    }

    #[test]
    fn distance_values() {
        assert!((distance_home(&ev(20.0, 0.8, 0.2), 8.26) - 33.04).abs() < 1e-9);
        assert_eq!(distance_home(&ev(20.0, 0.8, 0.0), 8.26), 0.0);
        let d = distance_home_with(&ev(20.0, 0.8, 0.2), 8.26, DistanceBasis::InitialSoc);
        assert!((d - 132.16).abs() < 1e-9);
    }

    #[test]
    fn histogram_counts_everyone() {
        let fleet = sample_fleet(100, 3, &FleetConfig::default()).unwrap();
        let bins = distance_histogram(&fleet, 8.26, DistanceBasis::SocMin, 10.0);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 100);
        assert!((bins.iter().map(|b| b.fraction).sum::<f64>() - 1.0).abs() < 1e-12);
        // Reserve lies in [0.1*15, 0.2*30] kWh, i.e. [12.39, 49.56] km.
        assert_eq!(bins[0].count, 0);
        assert_eq!(bins.len(), 5);
    }
}
