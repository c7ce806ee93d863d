//! TOML scenario configuration.
//!
//! Every section and key is optional; an empty file yields the default
//! 100-EV setup. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{BaselineConfig, PenaltyConfig};
use crate::cost::{AggCoefficients, CostError};
use crate::fleet::{Bounds, DistanceBasis, FleetConfig, FleetError};
use crate::orchestrator::{OptimizerConfig, SimulationConfig};
use crate::scenario::{CostConfig, Scenario};
use crate::stats::Sweep;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), reason: reason.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetSection {
    pub count: usize,
    pub soc_initial: Bounds,
    pub soc_min: Bounds,
    pub capacity_kwh: Bounds,
    pub rate_min_kw: f64,
    pub rate_max_kw: f64,
    pub eta: Bounds,
    /// Driving efficiency used for the distance-to-home report.
    pub km_per_kwh: f64,
    pub distance_basis: DistanceBasis,
    pub histogram_bin_km: f64,
}

impl Default for FleetSection {
    fn default() -> Self {
        let d = FleetConfig::default();
        Self {
            count: 100,
            soc_initial: d.soc_initial,
            soc_min: d.soc_min,
            capacity_kwh: d.capacity_kwh,
            rate_min_kw: d.rate_min_kw,
            rate_max_kw: d.rate_max_kw,
            eta: d.eta,
            km_per_kwh: 8.26,
            distance_basis: DistanceBasis::default(),
            histogram_bin_km: 10.0,
        }
    }
}

impl FleetSection {
    pub fn distribution(&self) -> FleetConfig {
        FleetConfig {
            soc_initial: self.soc_initial,
            soc_min: self.soc_min,
            capacity_kwh: self.capacity_kwh,
            rate_min_kw: self.rate_min_kw,
            rate_max_kw: self.rate_max_kw,
            eta: self.eta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub runs: usize,
    pub k_max: Vec<usize>,
    pub whales: Vec<usize>,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self { runs: 100, k_max: vec![50, 100, 150, 200], whales: vec![1, 5, 10] }
    }
}

impl StatsSection {
    pub fn k_max_sweep(&self) -> Sweep {
        Sweep::KMax(self.k_max.clone())
    }

    pub fn whales_sweep(&self) -> Sweep {
        Sweep::Whales(self.whales.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub step_kw: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { step_kw: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    /// Master seed for fleet, costs and the optimizer.
    pub seed: u64,
    pub fleet: FleetSection,
    pub costs: CostConfig,
    pub aggregator: AggCoefficients,
    pub optimizer: OptimizerConfig,
    pub simulation: SimulationConfig,
    pub penalty: PenaltyConfig,
    pub baselines: BaselineConfig,
    pub stats: StatsSection,
    pub oracle: OracleSection,
    pub output: OutputSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 42,
            fleet: FleetSection::default(),
            costs: CostConfig::default(),
            aggregator: AggCoefficients::default(),
            optimizer: OptimizerConfig::default(),
            simulation: SimulationConfig::default(),
            penalty: PenaltyConfig::default(),
            baselines: BaselineConfig::default(),
            stats: StatsSection::default(),
            oracle: OracleSection::default(),
            output: OutputSection::default(),
        }
    }
}

fn fleet_key(e: FleetError) -> ConfigError {
    match e {
        FleetError::InvalidBounds { field, low, high } => {
            invalid(format!("fleet.{field}"), format!("bounds [{low}, {high}] are inverted or out of range"))
        }
        other => invalid("fleet", other.to_string()),
    }
}

fn cost_key(section: &str, e: CostError) -> ConfigError {
    match e {
        CostError::InvalidParameter { name, reason } if name.contains('.') => invalid(name, reason),
        CostError::InvalidParameter { name, reason } => invalid(format!("{section}.{name}"), reason),
        other => invalid(section, other.to_string()),
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        let f = &self.fleet;
        if f.count == 0 {
            return Err(invalid("fleet.count", "must be at least 1"));
        }
        f.distribution().validate().map_err(fleet_key)?;
        if !(f.km_per_kwh.is_finite() && f.km_per_kwh > 0.0) {
            return Err(invalid("fleet.km_per_kwh", "must be positive"));
        }
        if !(f.histogram_bin_km.is_finite() && f.histogram_bin_km > 0.0) {
            return Err(invalid("fleet.histogram_bin_km", "must be positive"));
        }

        let c = &self.costs;
        for (name, b) in [("alpha", c.alpha), ("beta", c.beta), ("gamma", c.gamma), ("other_ops", c.other_ops)] {
            if b.check(name).is_err() {
                return Err(invalid(format!("costs.{name}"), format!("bounds [{}, {}] are inverted", b.low, b.high)));
            }
        }
        if !(c.alpha.low > 0.0) {
            return Err(invalid("costs.alpha", "must be positive"));
        }
        if !(c.other_ops.low >= 0.0) {
            return Err(invalid("costs.other_ops", "must be non-negative"));
        }
        if !(c.price.is_finite() && c.price >= 0.0) {
            return Err(invalid("costs.price", "must be finite and >= 0"));
        }
        self.aggregator.validate().map_err(|e| cost_key("aggregator", e))?;

        let o = &self.optimizer;
        if o.whales == 0 {
            return Err(invalid("optimizer.whales", "must be at least 1"));
        }
        if !o.split.is_valid() {
            return Err(invalid("optimizer.split", "split bounds must be finite and ordered"));
        }
        if !(0.0..=1.0).contains(&o.drop_probability) {
            return Err(invalid("optimizer.drop_probability", "must lie in [0, 1]"));
        }

        let s = &self.simulation;
        if !(s.dt_h.is_finite() && s.dt_h > 0.0) {
            return Err(invalid("simulation.dt_h", "must be positive"));
        }
        if !(s.horizon_h.is_finite() && s.horizon_h > 0.0) {
            return Err(invalid("simulation.horizon_h", "must be positive"));
        }
        for (i, ev) in s.events.iter().enumerate() {
            if !(ev.at_h.is_finite() && ev.at_h >= 0.0) {
                return Err(invalid(format!("simulation.events[{i}].at_h"), "must be >= 0"));
            }
            if let Some(&id) = ev.depart_ids.iter().find(|&&id| id >= f.count) {
                return Err(invalid(format!("simulation.events[{i}].depart_ids"), format!("unknown EV {id}")));
            }
        }

        self.penalty.validate().map_err(|e| cost_key("penalty", e))?;
        if self.baselines.population < 3 {
            return Err(invalid("baselines.population", "must be at least 3"));
        }
        if self.stats.runs < 2 {
            return Err(invalid("stats.runs", "must be at least 2"));
        }
        if !(self.oracle.step_kw.is_finite() && self.oracle.step_kw > 0.0) {
            return Err(invalid("oracle.step_kw", "must be positive"));
        }
        Ok(())
    }

    pub fn build_scenario(&self) -> Result<Scenario, FleetError> {
        Scenario::sample(self.fleet.count, self.seed, &self.fleet.distribution(), &self.costs, self.aggregator)
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    ScenarioConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        assert_eq!(ScenarioConfig::from_toml_str("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn default_round_trips() {
        let cfg = ScenarioConfig::default();
        assert_eq!(ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn inverted_soc_names_key() {
        let err = ScenarioConfig::from_toml_str("[fleet]\nsoc_min = [0.3, 0.1]\n").unwrap_err();
        match err {
            ConfigError::Invalid { key, .. } => assert_eq!(key, "fleet.soc_min"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ScenarioConfig::from_toml_str("[optimizer]\nwhale = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        assert!(err.to_string().contains("whale"));
    }

    #[test]
    fn nested_sections_parse() {
        let text = r#"
            [optimizer]
            whales = 2
            whale_sizing = "total"
            [optimizer.topology]
            policy = "ring"
            [optimizer.split]
            kind = "fixed"
            keep_fraction = 0.25
            [[simulation.events]]
            at_h = 0.5
            keep_count = 50
        "#;
        let cfg = ScenarioConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.optimizer.whales, 2);
        assert_eq!(cfg.simulation.events[0].keep_count, Some(50));
    }
}
