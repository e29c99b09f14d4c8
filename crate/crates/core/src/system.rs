use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Axis-aligned box in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Aabb {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi }
    }

    pub fn diagonal(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l).powi(2)).sum::<f64>().sqrt()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Smallest box containing `self` and the point `p`.
    pub fn expanded_to(&self, p: &[f64]) -> Aabb {
        Aabb {
            lo: self.lo.iter().zip(p).map(|(l, v)| l.min(*v)).collect(),
            hi: self.hi.iter().zip(p).map(|(h, v)| h.max(*v)).collect(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("agent dimensions must all be equal and 2 or 3, got {0:?}")]
    AgentDims(Vec<usize>),
    #[error("at least one agent is required")]
    NoAgents,
    #[error("workspace box must have lo < hi on each of {dim} axes")]
    Workspace { dim: usize },
    #[error("configuration has {got} coordinates, expected {want}")]
    ConfigLength { got: usize, want: usize },
    #[error("configuration contains a non-finite coordinate")]
    NonFinite,
}

/// Static description of the agents, keypoints and workspace.
///
/// Every agent is a point end-effector with the same dimension as the
/// keypoints (2 or 3).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    agent_dims: Vec<usize>,
    num_keypoints: usize,
    workspace: Aabb,
}

impl SystemSpec {
    pub fn new(agent_dims: Vec<usize>, num_keypoints: usize, workspace: Aabb) -> Result<Self, SpecError> {
        if agent_dims.is_empty() {
            return Err(SpecError::NoAgents);
        }
        let dim = agent_dims[0];
        if !(dim == 2 || dim == 3) || agent_dims.iter().any(|&d| d != dim) {
            return Err(SpecError::AgentDims(agent_dims));
        }
        if workspace.lo.len() != dim
            || workspace.hi.len() != dim
            || workspace.lo.iter().zip(&workspace.hi).any(|(l, h)| !(l < h))
        {
            return Err(SpecError::Workspace { dim });
        }
        Ok(Self { agent_dims, num_keypoints, workspace })
    }

    pub fn uniform(dim: usize, agents: usize, keypoints: usize, workspace: Aabb) -> Result<Self, SpecError> {
        Self::new(vec![dim; agents], keypoints, workspace)
    }

    pub fn dim(&self) -> usize {
        self.agent_dims[0]
    }

    pub fn num_agents(&self) -> usize {
        self.agent_dims.len()
    }

    pub fn num_keypoints(&self) -> usize {
        self.num_keypoints
    }

    pub fn agent_dims(&self) -> &[usize] {
        &self.agent_dims
    }

    pub fn workspace(&self) -> &Aabb {
        &self.workspace
    }

    /// Length of a configuration vector.
    pub fn total_dim(&self) -> usize {
        (self.num_agents() + self.num_keypoints) * self.dim()
    }

    pub fn actuated_dim(&self) -> usize {
        self.num_agents() * self.dim()
    }

    pub fn agent_offset(&self, j: usize) -> usize {
        j * self.dim()
    }

    pub fn keypoint_offset(&self, p: usize) -> usize {
        (self.num_agents() + p) * self.dim()
    }

    /// Default big-M: four orders of magnitude above the workspace size.
    pub fn default_big_m(&self) -> f64 {
        1e4 * self.workspace.diagonal()
    }
}

/// Joint state: agent end-effector positions followed by keypoint positions,
/// stored flat. Agent `j` occupies `[j*dim, (j+1)*dim)`, keypoint `p`
/// occupies the block after all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    dim: usize,
    agents: usize,
    data: Vec<f64>,
}

/// Velocities share the configuration layout (m/s).
pub type Velocity = Configuration;

impl Configuration {
    pub fn zeros(spec: &SystemSpec) -> Self {
        Self { dim: spec.dim(), agents: spec.num_agents(), data: vec![0.0; spec.total_dim()] }
    }

    pub fn from_flat(spec: &SystemSpec, data: Vec<f64>) -> Result<Self, SpecError> {
        if data.len() != spec.total_dim() {
            return Err(SpecError::ConfigLength { got: data.len(), want: spec.total_dim() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SpecError::NonFinite);
        }
        Ok(Self { dim: spec.dim(), agents: spec.num_agents(), data })
    }

    pub fn from_parts(spec: &SystemSpec, actuated: &[Vec<f64>], passive: &[Vec<f64>]) -> Result<Self, SpecError> {
        let data: Vec<f64> = actuated.iter().chain(passive).flatten().copied().collect();
        if actuated.len() != spec.num_agents()
            || passive.len() != spec.num_keypoints()
            || actuated.iter().chain(passive).any(|v| v.len() != spec.dim())
        {
            return Err(SpecError::ConfigLength { got: data.len(), want: spec.total_dim() });
        }
        Self::from_flat(spec, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_agents(&self) -> usize {
        self.agents
    }

    pub fn num_keypoints(&self) -> usize {
        self.data.len() / self.dim - self.agents
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn agent(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn agent_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn keypoint(&self, p: usize) -> &[f64] {
        let o = (self.agents + p) * self.dim;
        &self.data[o..o + self.dim]
    }

    pub fn keypoint_mut(&mut self, p: usize) -> &mut [f64] {
        let o = (self.agents + p) * self.dim;
        &mut self.data[o..o + self.dim]
    }

    /// Agent coordinates only.
    pub fn actuated(&self) -> &[f64] {
        &self.data[..self.agents * self.dim]
    }

    pub fn actuated_mut(&mut self) -> &mut [f64] {
        let n = self.agents * self.dim;
        &mut self.data[..n]
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
