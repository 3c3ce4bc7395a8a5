//! Experiment configuration: JSON with unknown keys rejected, queues and
//! stages numbered from 1.

use std::path::Path;

use fluidpoll_core::cost::{PiecewiseLinear, Tabulated};
use fluidpoll_core::des::{Family, Warmup};
use fluidpoll_core::{ControlParams, CostFunction, SystemParameters};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub cost: CostSpec,
    #[serde(default)]
    pub control: ControlSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchoverIndexing {
    /// One mean per table stage.
    #[default]
    PerStage,
    /// One mean per queue, applied after every visit to that queue.
    PerQueue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// Queue visited at each stage, 1-based.
    pub table: Vec<usize>,
    pub switchover: Vec<f64>,
    #[serde(default)]
    pub switchover_indexing: SwitchoverIndexing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseSpec {
    pub alpha: Vec<f64>,
    pub slope: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    Linear {
        c: Vec<f64>,
    },
    PiecewiseLinear {
        queues: Vec<PiecewiseSpec>,
        #[serde(default)]
        offset: f64,
    },
    /// `coeffs[k][j]` multiplies `x_k^j`.
    Polynomial {
        coeffs: Vec<Vec<f64>>,
    },
    Tabulated {
        queues: Vec<TableSpec>,
    },
}

fn one() -> usize {
    1
}

fn default_multiplicities() -> Vec<usize> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    Exhaustive {
        #[serde(default = "one")]
        l: usize,
    },
    Explicit {
        l: usize,
        r: Vec<f64>,
    },
    Optimize {
        #[serde(default = "default_multiplicities")]
        multiplicities: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_evals: Option<usize>,
    },
}

impl Default for ControlSpec {
    fn default() -> Self {
        ControlSpec::Exhaustive { l: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WarmupSpec {
    Fixed { cycles: usize },
    Auto { min: usize, max: usize },
}

impl Default for WarmupSpec {
    fn default() -> Self {
        match Warmup::default() {
            Warmup::Auto { min, max } => WarmupSpec::Auto { min, max },
            Warmup::Fixed(cycles) => WarmupSpec::Fixed { cycles },
        }
    }
}

impl From<WarmupSpec> for Warmup {
    fn from(w: WarmupSpec) -> Self {
        match w {
            WarmupSpec::Fixed { cycles } => Warmup::Fixed(cycles),
            WarmupSpec::Auto { min, max } => Warmup::Auto { min, max },
        }
    }
}

fn exponential() -> Family {
    Family::Exponential
}

fn deterministic() -> Family {
    Family::Deterministic
}

fn default_cycles() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    /// Scale parameters to simulate.
    pub n: Vec<u64>,
    #[serde(default = "exponential")]
    pub service: Family,
    #[serde(default = "deterministic")]
    pub switchover: Family,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    #[serde(default)]
    pub warmup: WarmupSpec,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_events: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Compact JSON of the resolved configuration, embedded in every output.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Structural checks that do not need the core types.
    pub fn check(&self) -> Result<(), CliError> {
        let k = self.system.lambda.len();
        if self.system.table.iter().any(|&q| q == 0 || q > k) {
            return Err(CliError::Config(format!(
                "table entries must be queue numbers between 1 and {k}"
            )));
        }
        let stages = self.system.table.len();
        if let ControlSpec::Explicit { l, r } = &self.control {
            if *l == 0 || r.len() != stages * l {
                return Err(CliError::Config(format!(
                    "explicit control needs l >= 1 and {} proportions (table length x l), got l = {l} and {}",
                    stages * l,
                    r.len()
                )));
            }
        }
        if let Some(sim) = &self.simulation {
            if sim.n.is_empty() || sim.n.contains(&0) {
                return Err(CliError::Config("simulation.n must list positive scales".into()));
            }
            if sim.replications == 0 {
                return Err(CliError::Config("simulation.replications must be positive".into()));
            }
            if sim.cycles < 2 {
                return Err(CliError::Config("simulation.cycles must be at least 2".into()));
            }
        }
        Ok(())
    }

    pub fn system(&self) -> Result<SystemParameters, CliError> {
        let s = &self.system;
        let table: Vec<usize> = s.table.iter().map(|q| q - 1).collect();
        let params = match s.switchover_indexing {
            SwitchoverIndexing::PerStage => {
                SystemParameters::new(s.lambda.clone(), s.mu.clone(), table, s.switchover.clone())
            }
            SwitchoverIndexing::PerQueue => {
                SystemParameters::with_queue_switchovers(s.lambda.clone(), s.mu.clone(), table, &s.switchover)
            }
        };
        Ok(params?)
    }

    pub fn cost(&self) -> Result<CostFunction, CliError> {
        let invalid = |k: usize, e: &str| CliError::Config(format!("cost of queue {}: {e}", k + 1));
        let psi = match &self.cost {
            CostSpec::Linear { c } => CostFunction::linear(c.clone()),
            CostSpec::PiecewiseLinear { queues, offset } => CostFunction::PiecewiseLinear {
                queues: queues
                    .iter()
                    .enumerate()
                    .map(|(k, q)| PiecewiseLinear::new(q.alpha.clone(), q.slope.clone()).map_err(|e| invalid(k, e)))
                    .collect::<Result<_, _>>()?,
                offset: *offset,
            },
            CostSpec::Polynomial { coeffs } => CostFunction::Polynomial { coeffs: coeffs.clone() },
            CostSpec::Tabulated { queues } => CostFunction::Tabulated {
                queues: queues
                    .iter()
                    .enumerate()
                    .map(|(k, q)| Tabulated::new(q.x.clone(), q.y.clone()).map_err(|e| invalid(k, e)))
                    .collect::<Result<_, _>>()?,
            },
        };
        psi.validate(self.system.lambda.len())?;
        Ok(psi)
    }

    /// The control when it is given directly; `None` in optimize mode.
    pub fn fixed_control(&self) -> Option<ControlParams> {
        match &self.control {
            ControlSpec::Exhaustive { l } => Some(ControlParams::new(*l, vec![1.0; self.system.table.len() * l])),
            ControlSpec::Explicit { l, r } => Some(ControlParams::new(*l, r.clone())),
            ControlSpec::Optimize { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYMMETRIC: &str = r#"{
        "system": {"lambda": [1, 1], "mu": [4, 4], "table": [1, 2], "switchover": [1, 1]},
        "cost": {"type": "linear", "c": [1, 1]}
    }"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_json(SYMMETRIC).unwrap();
        assert_eq!(cfg.control, ControlSpec::Exhaustive { l: 1 });
        assert_eq!(cfg.system().unwrap().table(), &[0, 1]);
        let round = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = SYMMETRIC.replace("\"mu\"", "\"mu\": [4, 4], \"muu\"");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(CliError::Config(_))));
        let text = SYMMETRIC.replace("\"c\": [1, 1]", "\"c\": [1, 1], \"slope\": 2");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn rejects_zero_based_tables() {
        let text = SYMMETRIC.replace("[1, 2]", "[0, 1]");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn per_queue_switchovers_map_onto_stages() {
        let text = r#"{
            "system": {"lambda": [2, 2, 2], "mu": [8, 8, 8], "table": [1, 2, 3, 2, 3],
                       "switchover": [1, 2, 3], "switchover_indexing": "per_queue"},
            "cost": {"type": "linear", "c": [1, 1, 8]}
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.system().unwrap().switchover(), &[1.0, 2.0, 3.0, 2.0, 3.0]);
    }

    #[test]
    fn explicit_control_shape_is_checked() {
        let text = SYMMETRIC.replace(
            "\"cost\"",
            "\"control\": {\"mode\": \"explicit\", \"l\": 2, \"r\": [1, 1]}, \"cost\"",
        );
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn simulation_defaults() {
        let text = SYMMETRIC.replace("\"cost\"", "\"simulation\": {\"n\": [10]}, \"cost\"");
        let sim = ExperimentConfig::from_json(&text).unwrap().simulation.unwrap();
        assert_eq!(sim.cycles, 10_000);
        assert_eq!(sim.service, Family::Exponential);
        assert_eq!(sim.warmup, WarmupSpec::Auto { min: 500, max: 5000 });
    }
}
