//! Scenario configuration, read from TOML.

use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use super::idm::IdmParams;
use super::SimError;
use crate::decision::DecisionParams;
use crate::gateway::BackendConfig;
use crate::network::{generate_grid4x4, generate_manhattan, parse_network, RoadNetwork};
use crate::routing::RouteConstraints;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Every vehicle keeps its free-flow shortest route.
    StaticDijkstra,
    /// AVs rerun a full shortest-path search on live weights at every junction.
    DynamicDijkstra,
    /// AVs pick among k candidates toward the next critical segment with the
    /// decision engine.
    CandidateChoice,
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::StaticDijkstra,
        Method::DynamicDijkstra,
        Method::CandidateChoice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::StaticDijkstra => "static_dijkstra",
            Method::DynamicDijkstra => "dynamic_dijkstra",
            Method::CandidateChoice => "candidate_choice",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Manhattan,
    Grid4x4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Built-in generator; the 4x4 Manhattan grid when neither this nor
    /// `file` is set.
    pub generator: Option<Generator>,
    pub rows: usize,
    pub cols: usize,
    /// Network file; relative paths resolve against the scenario file.
    pub file: Option<PathBuf>,
    pub u_turns: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            generator: None,
            rows: 4,
            cols: 4,
            file: None,
            u_turns: false,
        }
    }
}

impl NetworkConfig {
    pub fn load(&self, base_dir: Option<&FsPath>) -> Result<RoadNetwork, SimError> {
        let net = match (&self.file, self.generator) {
            (Some(_), Some(_)) => {
                return Err(SimError::Config(
                    "network: set either `file` or `generator`, not both".into(),
                ))
            }
            (Some(file), None) => {
                let path = match base_dir {
                    Some(dir) if file.is_relative() => dir.join(file),
                    _ => file.clone(),
                };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| SimError::Config(format!("reading {}: {e}", path.display())))?;
                parse_network(&text)?
            }
            (None, Some(Generator::Manhattan) | None) => generate_manhattan(self.rows, self.cols)?,
            (None, Some(Generator::Grid4x4)) => generate_grid4x4(),
        };
        Ok(net.with_u_turns(self.u_turns))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandConfig {
    pub vehicles: usize,
    /// Insertions per second.
    pub rate: f64,
    /// Fixed origin for every trip; random boundary entry when unset.
    pub start_edge: Option<String>,
    /// Fixed destination for every trip; random boundary exit when unset.
    pub end_edge: Option<String>,
}

impl Default for DemandConfig {
    fn default() -> Self {
        DemandConfig {
            vehicles: 150,
            rate: 1.0,
            start_edge: None,
            end_edge: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintConfig {
    pub mandatory: Vec<String>,
    pub forbidden: Vec<String>,
}

impl ConstraintConfig {
    pub fn resolve(&self, net: &RoadNetwork) -> Result<RouteConstraints, SimError> {
        Ok(RouteConstraints::from_ids(
            net,
            self.mandatory.as_slice(),
            self.forbidden.as_slice(),
        )?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassConstraints {
    pub av: ConstraintConfig,
    pub hv: ConstraintConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingConfig {
    /// Candidates per decision.
    pub k: usize,
    /// How many global-path edges ahead the decision target lies. Short
    /// horizons leave only detours as alternatives on grid networks.
    pub horizon: usize,
    /// Distance before the junction at which an AV decides, m.
    pub trigger_radius_m: f64,
    /// Decide only when re-approaching an already visited junction.
    pub literal_visit_trigger: bool,
    /// Recompute the global path on live weights before every decision.
    pub reanchor_global: bool,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            k: 3,
            horizon: 6,
            trigger_radius_m: 50.0,
            literal_visit_trigger: false,
            reanchor_global: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub penetration_rate: f64,
    pub step_length: f64,
    pub max_steps: u64,
    pub method: Method,
    /// Steps between observation and transition-model updates.
    pub observation_interval: u64,
    pub network: NetworkConfig,
    pub demand: DemandConfig,
    pub backend: BackendConfig,
    pub constraints: ClassConstraints,
    pub routing: RoutingConfig,
    pub decision: DecisionParams,
    pub idm: IdmParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            penetration_rate: 0.1,
            step_length: 1.0,
            max_steps: 3600,
            method: Method::CandidateChoice,
            observation_interval: 10,
            network: NetworkConfig::default(),
            demand: DemandConfig::default(),
            backend: BackendConfig::default(),
            constraints: ClassConstraints::default(),
            routing: RoutingConfig::default(),
            decision: DecisionParams::default(),
            idm: IdmParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: &str| Err(SimError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.penetration_rate) {
            return fail("penetration_rate must lie in [0, 1]");
        }
        if !(self.demand.rate > 0.0 && self.demand.rate.is_finite()) {
            return fail("demand.rate must be positive");
        }
        if !(self.step_length > 0.0 && self.step_length.is_finite()) {
            return fail("step_length must be positive");
        }
        if self.observation_interval == 0 {
            return fail("observation_interval must be positive");
        }
        if self.routing.k == 0 {
            return fail("routing.k must be positive");
        }
        if self.routing.horizon == 0 {
            return fail("routing.horizon must be positive");
        }
        if self.backend.timeout_ms == 0 {
            return fail("backend.timeout_ms must be positive");
        }
        if !(self.decision.tau_s > 0.0 && self.decision.gamma > 0.0) {
            return fail("decision.tau_s and decision.gamma must be positive");
        }
        Ok(())
    }

    /// The 150-vehicle Manhattan scenario with one insertion per second and
    /// random boundary origins and destinations.
    pub fn manhattan_random(seed: u64, penetration_rate: f64, method: Method) -> Self {
        ScenarioConfig {
            seed,
            penetration_rate,
            method,
            ..Default::default()
        }
    }

    /// The 150-vehicle Manhattan scenario where every trip runs
    /// right0D0 -> A2left2.
    pub fn manhattan_fixed_od(seed: u64, penetration_rate: f64, method: Method) -> Self {
        let mut c = Self::manhattan_random(seed, penetration_rate, method);
        c.demand.start_edge = Some("right0D0".into());
        c.demand.end_edge = Some("A2left2".into());
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_full_file() {
        let text = r#"
seed = 7
penetration_rate = 0.15
method = "dynamic_dijkstra"

[network]
generator = "manhattan"
rows = 3
cols = 5

[demand]
vehicles = 20
rate = 0.5
start_edge = "right0E0"

[constraints.av]
mandatory = ["B1C1"]

[routing]
horizon = 3

[decision]
gamma = 0.8
"#;
        let c = ScenarioConfig::from_toml(text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.method, Method::DynamicDijkstra);
        assert_eq!(c.network.cols, 5);
        assert_eq!(c.demand.start_edge.as_deref(), Some("right0E0"));
        assert_eq!(c.constraints.av.mandatory, vec!["B1C1".to_string()]);
        assert_eq!(c.routing.horizon, 3);
        assert_eq!(c.routing.k, 3);
        assert_eq!(c.decision.gamma, 0.8);
        assert_eq!(c.decision.tau_s, 60.0);
        let net = c.network.load(None).unwrap();
        assert!(c.constraints.av.resolve(&net).is_ok());
    }

    #[test]
    fn round_trip() {
        let c = ScenarioConfig::manhattan_fixed_od(3, 0.1, Method::CandidateChoice);
        assert_eq!(ScenarioConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ScenarioConfig::from_toml("penetration_rate = 1.5").is_err());
        assert!(ScenarioConfig::from_toml("[demand]\nrate = 0.0").is_err());
        assert!(ScenarioConfig::from_toml("bogus = 1").is_err());
        assert!(ScenarioConfig::from_toml("method = \"teleport\"").is_err());
        let both = "[network]\ngenerator = \"grid4x4\"\nfile = \"x.net\"";
        let c = ScenarioConfig::from_toml(both).unwrap();
        assert!(c.network.load(None).is_err());
        let file_only = ScenarioConfig::from_toml("[network]\nfile = \"x.net\"").unwrap();
        assert_eq!(file_only.network.generator, None);
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("astar".parse::<Method>().is_err());
    }
}
