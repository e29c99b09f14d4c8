//! Metrics and trajectory CSV files and SVG plots of trajectories.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{EpisodeReport, Method, TrajectoryRow};

/// Metrics CSV columns, in file order.
pub const METRICS_COLUMNS: [&str; 9] =
    ["scenario_id", "method", "seed", "success", "max_time_s", "avg_time_s", "total_length_m", "backtracks", "cycles"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario_id: String,
    pub method: String,
    pub seed: u64,
    pub success: bool,
    pub max_time_s: f64,
    pub avg_time_s: f64,
    pub total_length_m: f64,
    pub backtracks: usize,
    pub cycles: usize,
}

impl MetricsRow {
    pub fn from_report(scenario_id: &str, method: Method, seed: u64, r: &EpisodeReport) -> Self {
        Self {
            scenario_id: scenario_id.to_string(),
            method: method.label().to_string(),
            seed,
            success: r.success,
            max_time_s: r.max_cycle_s,
            avg_time_s: r.avg_cycle_s,
            total_length_m: r.total_length,
            backtracks: r.backtracks,
            cycles: r.cycles,
        }
    }
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {reason}")]
    Malformed { row: usize, reason: String },
}

/// Writes the header line of a metrics file.
pub fn write_metrics_header(out: &mut impl Write) -> Result<(), IoError> {
    writeln!(out, "{}", METRICS_COLUMNS.join(","))?;
    Ok(())
}

/// Appends rows without a header.
pub fn write_metrics_rows(out: &mut impl Write, rows: &[MetricsRow]) -> Result<(), IoError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the per-row section of a metrics file, stopping at the summary.
pub fn read_metrics(input: impl Read) -> Result<Vec<MetricsRow>, IoError> {
    let mut text = String::new();
    let mut input = input;
    input.read_to_string(&mut text)?;
    let body: String = text
        .lines()
        .take_while(|l| !l.trim().is_empty())
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub const SUMMARY_COLUMNS: &str = "scenario_id,method,trials,success_rate,max_time_s_mean,max_time_s_std,\
avg_time_s_mean,avg_time_s_std,total_length_m_mean,total_length_m_std,backtracks_mean,backtracks_std,\
cycles_mean,cycles_std";

/// Summary block: a blank line, a `# summary` marker and one line per
/// (scenario, method) with mean and population standard deviation.
pub fn write_summary(out: &mut impl Write, rows: &[MetricsRow]) -> Result<(), IoError> {
    writeln!(out)?;
    writeln!(out, "# summary")?;
    writeln!(out, "{SUMMARY_COLUMNS}")?;
    let mut groups: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let key = (r.scenario_id.as_str(), r.method.as_str());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    for (id, method) in groups {
        let g: Vec<&MetricsRow> = rows.iter().filter(|r| r.scenario_id == id && r.method == method).collect();
        let col = |f: &dyn Fn(&MetricsRow) -> f64| mean_std(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
        let rate = g.iter().filter(|r| r.success).count() as f64 / g.len() as f64;
        let mut line = format!("{id},{method},{},{rate:.4}", g.len());
        for (m, s) in [
            col(&|r| r.max_time_s),
            col(&|r| r.avg_time_s),
            col(&|r| r.total_length_m),
            col(&|r| r.backtracks as f64),
            col(&|r| r.cycles as f64),
        ] {
            let _ = write!(line, ",{m:.6},{s:.6}");
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

const AXES: [&str; 3] = ["x", "y", "z"];

/// Column names of a trajectory file.
pub fn trajectory_header(dim: usize, agents: usize, keypoints: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for j in 0..agents {
        h.extend(AXES[..dim].iter().map(|a| format!("a{j}_{a}")));
    }
    for p in 0..keypoints {
        h.extend(AXES[..dim].iter().map(|a| format!("k{p}_{a}")));
    }
    h
}

pub fn write_trajectory(
    out: impl Write,
    dim: usize,
    agents: usize,
    keypoints: usize,
    rows: &[TrajectoryRow],
) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(dim, agents, keypoints))?;
    for r in rows {
        let mut rec = vec![format!("{}", r.t)];
        rec.extend(r.x.iter().map(|v| format!("{v}")));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// A trajectory file read back.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub agents: usize,
    pub keypoints: usize,
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    fn point<'a>(&self, row: &'a TrajectoryRow, offset: usize) -> &'a [f64] {
        &row.x[offset..offset + self.dim]
    }

    pub fn agent<'a>(&'a self, row: &'a TrajectoryRow, j: usize) -> &'a [f64] {
        self.point(row, j * self.dim)
    }

    pub fn keypoint<'a>(&'a self, row: &'a TrajectoryRow, p: usize) -> &'a [f64] {
        self.point(row, (self.agents + p) * self.dim)
    }
}

/// Parses a trajectory CSV. Errors name the offending row; row 1 is the
/// header.
pub fn read_trajectory(input: impl Read) -> Result<Trajectory, IoError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut records = r.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(IoError::Malformed { row: 1, reason: "missing header".into() }),
    };
    let names: Vec<&str> = header.iter().collect();
    let bad = |reason: String| IoError::Malformed { row: 1, reason };
    if names.first() != Some(&"t") {
        return Err(bad("first column must be t".into()));
    }
    let dim = names.iter().filter(|n| n.starts_with("a0_")).count();
    if !(1..=3).contains(&dim) {
        return Err(bad("no agent columns".into()));
    }
    let agents = (0..).take_while(|j| names.contains(&format!("a{j}_x").as_str())).count();
    let keypoints = (0..).take_while(|p| names.contains(&format!("k{p}_x").as_str())).count();
    let expected = trajectory_header(dim, agents, keypoints);
    if names.len() != expected.len() || names.iter().zip(&expected).any(|(a, b)| a != b) {
        let missing = expected.iter().find(|e| !names.contains(&e.as_str()));
        return Err(bad(match missing {
            Some(m) => format!("missing column {m}"),
            None => format!("unexpected columns, expected {}", expected.join(",")),
        }));
    }
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != expected.len() {
            return Err(IoError::Malformed {
                row,
                reason: format!("expected {} fields, found {}", expected.len(), rec.len()),
            });
        }
        let vals: Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| IoError::Malformed { row, reason: e.to_string() })?;
        rows.push(TrajectoryRow { t: vals[0], x: vals[1..].to_vec() });
    }
    Ok(Trajectory { dim, agents, keypoints, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum View {
    #[default]
    Xy,
    Xz,
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const SIZE: f64 = 640.0;
const MARGIN: f64 = 48.0;

/// Deterministic SVG plot: one polyline per agent, a circle at each
/// keypoint's start and a square at its end, and a legend.
pub fn render_svg(traj: &Trajectory, view: View) -> String {
    let axes = match view {
        View::Xy => (0, 1),
        View::Xz => (0, 2.min(traj.dim.saturating_sub(1))),
    };
    let mut pts: Vec<[f64; 2]> = Vec::new();
    for row in &traj.rows {
        for j in 0..traj.agents {
            let a = traj.agent(row, j);
            pts.push([a[axes.0], a[axes.1]]);
        }
        for p in 0..traj.keypoints {
            let k = traj.keypoint(row, p);
            pts.push([k[axes.0], k[axes.1]]);
        }
    }
    let (mut lo, mut hi) = ([-1.0f64, -1.0f64], [1.0f64, 1.0f64]);
    if !pts.is_empty() {
        lo = [f64::INFINITY; 2];
        hi = [f64::NEG_INFINITY; 2];
        for p in &pts {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let map = |p: &[f64]| {
        let x = MARGIN + (p[axes.0] - lo[0]) * scale;
        let y = SIZE - MARGIN - (p[axes.1] - lo[1]) * scale;
        (x, y)
    };
    let names = match view {
        View::Xy => ("x", "y"),
        View::Xz => ("x", "z"),
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">"
    );
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<g id=\"axes\" stroke=\"black\" stroke-width=\"1\"><line x1=\"{MARGIN}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\"/><line x1=\"{MARGIN}\" y1=\"{b}\" x2=\"{MARGIN}\" y2=\"{MARGIN}\"/></g>",
        b = SIZE - MARGIN,
        r = SIZE - MARGIN
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.4}\" y=\"{:.4}\" font-size=\"12\">{} [{:.4}, {:.4}]</text>",
        SIZE / 2.0,
        SIZE - 12.0,
        names.0,
        lo[0],
        lo[0] + span
    );
    let _ = writeln!(
        s,
        "<text x=\"8\" y=\"{:.4}\" font-size=\"12\">{} [{:.4}, {:.4}]</text>",
        MARGIN - 16.0,
        names.1,
        lo[1],
        lo[1] + span
    );
    for j in 0..traj.agents {
        let color = COLORS[j % COLORS.len()];
        let path: Vec<String> = traj
            .rows
            .iter()
            .map(|row| {
                let (x, y) = map(traj.agent(row, j));
                format!("{x:.4},{y:.4}")
            })
            .collect();
        let _ = writeln!(
            s,
            "<polyline class=\"agent\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            path.join(" ")
        );
    }
    if let (Some(first), Some(last)) = (traj.rows.first(), traj.rows.last()) {
        for p in 0..traj.keypoints {
            let (x0, y0) = map(traj.keypoint(first, p));
            let (x1, y1) = map(traj.keypoint(last, p));
            let _ = writeln!(
                s,
                "<circle class=\"keypoint-start\" cx=\"{x0:.4}\" cy=\"{y0:.4}\" r=\"4\" fill=\"none\" stroke=\"gray\"/>"
            );
            let _ = writeln!(
                s,
                "<rect class=\"keypoint-end\" x=\"{:.4}\" y=\"{:.4}\" width=\"8\" height=\"8\" fill=\"gray\"/>",
                x1 - 4.0,
                y1 - 4.0
            );
        }
    }
    let _ = writeln!(s, "<g id=\"legend\" font-size=\"12\">");
    for j in 0..traj.agents {
        let y = MARGIN + 16.0 * j as f64;
        let color = COLORS[j % COLORS.len()];
        let _ = writeln!(
            s,
            "<line x1=\"{:.4}\" y1=\"{y:.4}\" x2=\"{:.4}\" y2=\"{y:.4}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{:.4}\" y=\"{:.4}\">agent {j}</text>",
            SIZE - 140.0,
            SIZE - 120.0,
            SIZE - 112.0,
            y + 4.0
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}
