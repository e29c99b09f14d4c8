use thiserror::Error;

/// Default limit on `M^K` for [`enumerate_assignments`].
pub const DEFAULT_ENUMERATION_CAP: usize = 4096;

/// Binary row-stochastic K x M matrix, stored as the agent index of each
/// subtask. Ordering is lexicographic on that index tuple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AssignmentMatrix {
    agent_of: Vec<usize>,
    agents: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AssignmentError {
    #[error("{agents}^{subtasks} assignments exceed the enumeration cap {cap}")]
    ExplosionGuard { subtasks: usize, agents: usize, cap: usize },
    #[error("row {row} of the assignment matrix does not sum to one")]
    NotRowStochastic { row: usize },
    #[error("subtask {subtask} assigned to agent {agent}, but only {agents} agents exist")]
    AgentOutOfRange { subtask: usize, agent: usize, agents: usize },
}

impl AssignmentMatrix {
    pub fn new(agent_of: Vec<usize>, agents: usize) -> Result<Self, AssignmentError> {
        for (k, &j) in agent_of.iter().enumerate() {
            if j >= agents {
                return Err(AssignmentError::AgentOutOfRange { subtask: k, agent: j, agents });
            }
        }
        Ok(Self { agent_of, agents })
    }

    /// Builds from explicit 0/1 rows.
    pub fn from_rows(rows: &[Vec<u8>], agents: usize) -> Result<Self, AssignmentError> {
        let mut agent_of = Vec::with_capacity(rows.len());
        for (k, row) in rows.iter().enumerate() {
            let ones: Vec<usize> = row.iter().enumerate().filter(|(_, &v)| v == 1).map(|(j, _)| j).collect();
            if row.len() != agents || ones.len() != 1 || row.iter().any(|&v| v > 1) {
                return Err(AssignmentError::NotRowStochastic { row: k });
            }
            agent_of.push(ones[0]);
        }
        Ok(Self { agent_of, agents })
    }

    pub fn empty(agents: usize) -> Self {
        Self { agent_of: Vec::new(), agents }
    }

    pub fn num_subtasks(&self) -> usize {
        self.agent_of.len()
    }

    pub fn num_agents(&self) -> usize {
        self.agents
    }

    pub fn agent(&self, k: usize) -> usize {
        self.agent_of[k]
    }

    pub fn agents_of(&self) -> &[usize] {
        &self.agent_of
    }

    pub fn entry(&self, k: usize, j: usize) -> u8 {
        u8::from(self.agent_of[k] == j)
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.agent_of.iter().map(|&a| (0..self.agents).map(|j| u8::from(j == a)).collect()).collect()
    }

    /// Subtasks assigned to agent `j`.
    pub fn subtasks_of(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.agent_of.iter().enumerate().filter(move |(_, &a)| a == j).map(|(k, _)| k)
    }
}

/// All `M^K` assignments accepted by `feasible`, in lexicographic order of
/// the agent-index tuple (subtask 0 most significant).
pub fn enumerate_assignments(
    k: usize,
    m: usize,
    cap: usize,
    mut feasible: impl FnMut(&AssignmentMatrix) -> bool,
) -> Result<Vec<AssignmentMatrix>, AssignmentError> {
    assert!(m >= 1, "at least one agent is required");
    let total = u32::try_from(k).ok().and_then(|k| m.checked_pow(k));
    match total {
        Some(t) if t <= cap => {}
        _ => return Err(AssignmentError::ExplosionGuard { subtasks: k, agents: m, cap }),
    }
    let mut out = Vec::new();
    let mut digits = vec![0usize; k];
    loop {
        let a = AssignmentMatrix { agent_of: digits.clone(), agents: m };
        if feasible(&a) {
            out.push(a);
        }
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < m {
                break;
            }
            digits[i] = 0;
        }
    }
}
