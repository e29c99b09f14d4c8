use serde::{Deserialize, Serialize};

/// Cubic Hermite spline through ordered waypoints. `waypoints[0]` is the
/// start, segment `i` runs from `waypoints[i]` to `waypoints[i + 1]` in
/// `deltas[i]` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpline {
    pub waypoints: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub deltas: Vec<f64>,
}

impl AgentSpline {
    /// A spline that stays at `p`.
    pub fn stationary(p: &[f64]) -> Self {
        Self { waypoints: vec![p.to_vec()], velocities: vec![vec![0.0; p.len()]], deltas: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.waypoints[0].len()
    }

    pub fn num_segments(&self) -> usize {
        self.deltas.len()
    }

    pub fn duration(&self) -> f64 {
        self.deltas.iter().sum()
    }

    /// Time at which waypoint `i` is reached.
    pub fn arrival(&self, i: usize) -> f64 {
        self.deltas[..i].iter().sum()
    }
}

/// Position and velocity at time `t`. Negative times clamp to the start;
/// the last segment includes its end point and later times give the final
/// waypoint at rest.
pub fn eval_spline(s: &AgentSpline, t: f64) -> (Vec<f64>, Vec<f64>) {
    let t = t.max(0.0);
    let mut start = 0.0;
    let last_segment = s.deltas.len().wrapping_sub(1);
    for (i, &d) in s.deltas.iter().enumerate() {
        if t < start + d || (i == last_segment && t <= start + d) {
            return hermite(&s.waypoints[i], &s.waypoints[i + 1], &s.velocities[i], &s.velocities[i + 1], d, t - start);
        }
        start += d;
    }
    let last = s.waypoints.last().unwrap().clone();
    let n = last.len();
    if s.deltas.is_empty() {
        return (last, s.velocities[0].clone());
    }
    (last, vec![0.0; n])
}

fn hermite(p0: &[f64], p1: &[f64], v0: &[f64], v1: &[f64], d: f64, tau: f64) -> (Vec<f64>, Vec<f64>) {
    let s = tau / d;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let g00 = 6.0 * s2 - 6.0 * s;
    let g10 = 3.0 * s2 - 4.0 * s + 1.0;
    let g01 = -6.0 * s2 + 6.0 * s;
    let g11 = 3.0 * s2 - 2.0 * s;
    let mut p = Vec::with_capacity(p0.len());
    let mut v = Vec::with_capacity(p0.len());
    for k in 0..p0.len() {
        p.push(h00 * p0[k] + h10 * d * v0[k] + h01 * p1[k] + h11 * d * v1[k]);
        v.push((g00 * p0[k] + g10 * d * v0[k] + g01 * p1[k] + g11 * d * v1[k]) / d);
    }
    (p, v)
}
