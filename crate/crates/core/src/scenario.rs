//! Scenario documents: world, task graph, disturbances and planner settings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{Carrier, KeypointMode, RigidCoupling};
use crate::graph::{validate_goc, Edge, Goc, Node, ValidationError};
use crate::planner::{Obstacle, PlannerParams};
use crate::system::{Aabb, Configuration, SystemSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDoc {
    pub position: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDoc {
    pub dim: usize,
    pub agents: Vec<AgentDoc>,
    #[serde(default)]
    pub keypoints: Vec<Vec<f64>>,
    pub workspace: Aabb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GocDoc {
    pub subtasks: usize,
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub edges: Vec<Edge>,
}

/// Explicit keypoint modes for one edge, replacing the derived ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingDoc {
    pub from: usize,
    pub to: usize,
    pub modes: Vec<KeypointMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    TeleportKeypoint {
        keypoint: usize,
        displacement: Vec<f64>,
    },
    DetachKeypoint {
        keypoint: usize,
    },
    /// Holds an agent in place for `duration` seconds.
    FreezeAgent {
        agent: usize,
        duration: f64,
    },
}

impl DisturbanceKind {
    pub fn keypoint(&self) -> Option<usize> {
        match self {
            DisturbanceKind::TeleportKeypoint { keypoint, .. } | DisturbanceKind::DetachKeypoint { keypoint } => {
                Some(*keypoint)
            }
            DisturbanceKind::FreezeAgent { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    /// Trigger time in seconds.
    pub at: f64,
    /// Measure `at` from the moment the keypoint is first picked up
    /// instead of from the episode start.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub after_grasp: bool,
    pub event: DisturbanceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub id: String,
    #[serde(default)]
    pub seed: u64,
    pub system: SystemDoc,
    pub goc: GocDoc,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rigid_coupling: Vec<CouplingDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disturbances: Vec<Disturbance>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub planner: PlannerParams,
    /// Simulated seconds before the episode counts as failed.
    pub budget_s: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
}

impl ScenarioError {
    fn at(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ScenarioError::Parse { path: path.into(), reason: reason.into() }
    }

    pub fn path(&self) -> &str {
        match self {
            ScenarioError::Parse { path, .. } => path,
            ScenarioError::SchemaVersionMismatch { .. } => "schema_version",
        }
    }
}

/// A scenario after validation, with its derived runtime objects.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub spec: SystemSpec,
    pub goc: Goc,
    pub x0: Configuration,
    pub v0: Configuration,
    /// Keyed by edge index.
    pub overrides: BTreeMap<usize, RigidCoupling>,
}

impl Scenario {
    pub fn goc(&self) -> Goc {
        Goc::new(self.goc.nodes.clone(), self.goc.edges.clone(), self.goc.subtasks)
    }

    /// Checks every cross-reference and builds the runtime objects.
    pub fn load(&self) -> Result<Loaded, ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::SchemaVersionMismatch { found: self.schema_version, expected: SCHEMA_VERSION });
        }
        let sys = &self.system;
        let spec = SystemSpec::uniform(sys.dim, sys.agents.len(), sys.keypoints.len(), sys.workspace.clone())
            .map_err(|e| ScenarioError::at("system", e.to_string()))?;
        let dim = spec.dim();
        for (j, a) in sys.agents.iter().enumerate() {
            if a.position.len() != dim {
                return Err(ScenarioError::at(
                    format!("system.agents[{j}].position"),
                    format!("expected {dim} coordinates"),
                ));
            }
            if a.velocity.as_ref().is_some_and(|v| v.len() != dim) {
                return Err(ScenarioError::at(
                    format!("system.agents[{j}].velocity"),
                    format!("expected {dim} coordinates"),
                ));
            }
        }
        for (p, k) in sys.keypoints.iter().enumerate() {
            if k.len() != dim {
                return Err(ScenarioError::at(format!("system.keypoints[{p}]"), format!("expected {dim} coordinates")));
            }
        }
        let positions: Vec<Vec<f64>> = sys.agents.iter().map(|a| a.position.clone()).collect();
        let velocities: Vec<Vec<f64>> =
            sys.agents.iter().map(|a| a.velocity.clone().unwrap_or_else(|| vec![0.0; dim])).collect();
        let x0 = Configuration::from_parts(&spec, &positions, &sys.keypoints)
            .map_err(|e| ScenarioError::at("system", e.to_string()))?;
        let v0 = Configuration::from_parts(&spec, &velocities, &vec![vec![0.0; dim]; spec.num_keypoints()])
            .map_err(|e| ScenarioError::at("system", e.to_string()))?;

        let n = self.goc.nodes.len();
        for (i, e) in self.goc.edges.iter().enumerate() {
            if e.from >= n || e.to >= n {
                let bad = if e.from >= n { e.from } else { e.to };
                return Err(ScenarioError::at(format!("goc.edges[{i}]"), format!("node {bad} does not exist")));
            }
        }
        let goc = self.goc();
        validate_goc(&goc, &spec).map_err(|e| {
            let path = match &e {
                ValidationError::CycleDetected(_) | ValidationError::DuplicateEdge(..) => "goc.edges".to_string(),
                _ => "goc".to_string(),
            };
            ScenarioError::at(path, e.to_string())
        })?;

        let mut overrides = BTreeMap::new();
        for (i, c) in self.rigid_coupling.iter().enumerate() {
            let path = format!("rigid_coupling[{i}]");
            let Some(idx) = goc.edges.iter().position(|e| e.from == c.from && e.to == c.to) else {
                return Err(ScenarioError::at(path, format!("edge ({}, {}) does not exist", c.from, c.to)));
            };
            if c.modes.len() != spec.num_keypoints() {
                return Err(ScenarioError::at(path, "one mode per keypoint is required"));
            }
            for m in &c.modes {
                match m {
                    KeypointMode::Carried(Carrier::Subtask(k)) if *k >= goc.subtasks => {
                        return Err(ScenarioError::at(path, format!("subtask {k} does not exist")));
                    }
                    KeypointMode::Carried(Carrier::Agent(j)) if *j >= spec.num_agents() => {
                        return Err(ScenarioError::at(path, format!("agent {j} does not exist")));
                    }
                    _ => {}
                }
            }
            overrides.insert(idx, RigidCoupling { modes: c.modes.clone() });
        }

        for (i, d) in self.disturbances.iter().enumerate() {
            let path = format!("disturbances[{i}]");
            if !(d.at.is_finite() && d.at >= 0.0) {
                return Err(ScenarioError::at(path, "trigger time must be non-negative"));
            }
            match &d.event {
                DisturbanceKind::TeleportKeypoint { keypoint, displacement } => {
                    if *keypoint >= spec.num_keypoints() {
                        return Err(ScenarioError::at(path, format!("keypoint {keypoint} does not exist")));
                    }
                    if displacement.len() != dim || displacement.iter().any(|v| !v.is_finite()) {
                        return Err(ScenarioError::at(path, format!("displacement needs {dim} finite coordinates")));
                    }
                }
                DisturbanceKind::DetachKeypoint { keypoint } if *keypoint >= spec.num_keypoints() => {
                    return Err(ScenarioError::at(path, format!("keypoint {keypoint} does not exist")));
                }
                DisturbanceKind::FreezeAgent { agent, duration } => {
                    if *agent >= spec.num_agents() {
                        return Err(ScenarioError::at(path, format!("agent {agent} does not exist")));
                    }
                    if !(duration.is_finite() && *duration >= 0.0) {
                        return Err(ScenarioError::at(path, "duration must be non-negative"));
                    }
                }
                _ => {}
            }
            if d.after_grasp && d.event.keypoint().is_none() {
                return Err(ScenarioError::at(path, "after_grasp needs a keypoint event"));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if o.point.len() != dim || !(o.clearance.is_finite() && o.clearance >= 0.0) {
                return Err(ScenarioError::at(format!("obstacles[{i}]"), "bad point or clearance"));
            }
        }
        if let Some(problem) = self.planner.check().into_iter().next() {
            return Err(ScenarioError::at("planner", problem));
        }
        if !(self.budget_s.is_finite() && self.budget_s >= 0.0) {
            return Err(ScenarioError::at("budget_s", "must be non-negative"));
        }
        Ok(Loaded { spec, goc, x0, v0, overrides })
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(bytes: &[u8]) -> Result<Scenario, ScenarioError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ScenarioError::at("", format!("not UTF-8: {e}")))?;
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        ScenarioError::at(path, e.inner().to_string())
    })?;
    doc.load()?;
    Ok(doc)
}

/// Canonical text form.
pub fn to_json(s: &Scenario) -> String {
    let mut out = serde_json::to_string_pretty(s).expect("scenario serializes");
    out.push('\n');
    out
}

/// A `Aabb` helper for generated scenarios.
pub(crate) fn aabb(lo: &[f64], hi: &[f64]) -> Aabb {
    Aabb::new(lo.to_vec(), hi.to_vec())
}
