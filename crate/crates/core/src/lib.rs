//! Graph-of-constraints model predictive control for teams of point
//! end-effector agents.
//!
//! A task is a DAG whose nodes hold waypoint constraints and whose edges
//! hold path constraints over agent and keypoint positions. Each control
//! cycle picks subtask assignments and waypoints, times one spline per agent
//! through the remaining graph, and tracks those splines over a short
//! horizon.

pub mod assignment;
pub mod constraints;
pub mod coupling;
pub mod expr;
pub mod graph;
pub mod io;
pub mod planner;
pub mod scenario;
pub mod sim;
pub mod system;

pub use assignment::{enumerate_assignments, AssignmentError, AssignmentMatrix, DEFAULT_ENUMERATION_CAP};
pub use constraints::{
    eval, eval_gradient, rigid_transition_residual, Carrier, Constraint, KeypointMode, PointRef, Primitive,
    RigidCoupling, Scope,
};
pub use graph::{
    agent_paths, cut_edges, subgraph, validate_goc, AgentPathPlan, Edge, Goc, Node, RemainingSet, Subgraph,
    ValidationError,
};
pub use system::{Aabb, Configuration, SpecError, SystemSpec, Velocity};
