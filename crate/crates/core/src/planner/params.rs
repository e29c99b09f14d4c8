use serde::{Deserialize, Serialize};

/// Planner knobs. Lengths in meters, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    /// Progression fires when the next node is this close in time.
    pub tau: f64,
    /// Constraint tolerance for progression and backtracking.
    pub eps: f64,
    pub horizon: usize,
    pub dt: f64,
    pub delta_min: f64,
    /// Per-axis speed limit.
    pub v_max: f64,
    /// Per-axis acceleration limit.
    pub a_max: f64,
    pub w_time: f64,
    /// Weight on squared velocity changes between waypoints.
    pub w_smooth: f64,
    /// Weight on the peak waypoint velocity.
    pub w_vel: f64,
    /// Weight on the peak velocity jump.
    pub w_acc: f64,
    pub w_track: f64,
    /// Stop each agent's tracking reference at its next waypoint until that
    /// node completes, so a short first segment is not skipped.
    pub hold_next_waypoint: bool,
    /// Reserved for soft collision terms; obstacles are hard half-spaces.
    pub w_collision: f64,
    /// Optional per-axis bound on second differences of waypoint velocities.
    pub jerk_max: Option<f64>,
    /// Obstacle half-spaces are added when the reference is this close.
    pub activation_radius: f64,
    /// Gating constant; the workspace-derived default when absent.
    pub big_m: Option<f64>,
    pub enumeration_cap: usize,
    /// Prune assignments whose convex lower bound exceeds the incumbent.
    pub branch_bound: bool,
    /// Worker threads for the assignment fan-out; 0 picks automatically.
    pub threads: usize,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            tau: 0.15,
            eps: 0.01,
            horizon: 10,
            dt: 0.1,
            delta_min: 0.02,
            v_max: 0.5,
            a_max: 2.0,
            w_time: 1.0,
            w_smooth: 0.1,
            w_vel: 0.01,
            w_acc: 0.01,
            w_track: 1.0,
            hold_next_waypoint: true,
            w_collision: 0.0,
            jerk_max: None,
            activation_radius: 0.15,
            big_m: None,
            enumeration_cap: crate::assignment::DEFAULT_ENUMERATION_CAP,
            branch_bound: true,
            threads: 0,
        }
    }
}

impl PlannerParams {
    /// Problems with the parameter set, as human-readable strings.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        let pos = [
            ("tau", self.tau),
            ("eps", self.eps),
            ("dt", self.dt),
            ("delta_min", self.delta_min),
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("activation_radius", self.activation_radius),
        ];
        for (name, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("{name} must be positive, got {v}"));
            }
        }
        let weights = [
            ("w_time", self.w_time),
            ("w_smooth", self.w_smooth),
            ("w_vel", self.w_vel),
            ("w_acc", self.w_acc),
            ("w_track", self.w_track),
            ("w_collision", self.w_collision),
        ];
        for (name, v) in weights {
            if !(v.is_finite() && v >= 0.0) {
                out.push(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.horizon == 0 {
            out.push("horizon must be at least one step".into());
        }
        if self.w_track <= 0.0 {
            out.push("w_track must be positive".into());
        }
        if let Some(m) = self.big_m {
            if !(m.is_finite() && m > 0.0) {
                out.push(format!("big_m must be positive, got {m}"));
            }
        }
        out
    }

    pub fn thread_count(&self) -> usize {
        let auto = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let env = std::env::var("GOC_MPC_THREADS").ok().and_then(|s| s.parse::<usize>().ok()).filter(|&n| n > 0);
        let n = if self.threads > 0 { self.threads } else { auto };
        env.map_or(n, |cap| n.min(cap)).max(1)
    }
}
