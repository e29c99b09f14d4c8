//! `goc-mpc`: run, benchmark, generate and plot graph-of-constraints
//! scenarios.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};
use goc_core::io::{
    read_trajectory, render_svg, write_metrics_header, write_metrics_rows, write_summary, write_trajectory, MetricsRow,
    View,
};
use goc_core::scenario::{parse_scenario, to_json, Scenario};
use goc_core::sim::{run_episode, GeneratorSpec, Method};

#[derive(Parser)]
#[command(name = "goc-mpc", version, about = "Graph-of-constraints MPC for multi-agent manipulation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Goc,
    Baseline,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Goc => Method::Goc,
            MethodArg::Baseline => Method::LinearizedBaseline,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ViewArg {
    Xy,
    Xz,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Stacking,
    ParallelPickup,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one episode and append a metrics row.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "goc")]
        method: MethodArg,
        /// Seed for generator specs; recorded in the metrics row.
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics CSV to append to (standard output when absent).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Trajectory CSV to write.
        #[arg(long)]
        traj: Option<PathBuf>,
        /// Simulated seconds before the episode fails (scenario value when absent).
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Plot a trajectory CSV as SVG.
    Render {
        traj: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "xy")]
        view: ViewArg,
    },
    /// Run every scenario in a directory with both methods.
    Bench {
        suite: PathBuf,
        #[arg(long, default_value_t = 5)]
        trials: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a generated scenario file.
    Generate {
        #[arg(long, value_enum, default_value = "stacking")]
        kind: Family,
        #[arg(long, default_value_t = 3)]
        blocks: usize,
        #[arg(long, default_value_t = 2)]
        agents: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

/// A suite entry: a fixed scenario or a generator spec.
enum Source {
    Fixed(Scenario),
    Generated(GeneratorSpec),
}

impl Source {
    fn load(path: &Path) -> Result<Self, String> {
        let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        if path.extension().is_some_and(|e| e == "gen") {
            let spec: GeneratorSpec = serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
            spec.build(0).map_err(|e| format!("{}: {e}", path.display()))?;
            Ok(Source::Generated(spec))
        } else {
            parse_scenario(&bytes).map(Source::Fixed).map_err(|e| format!("{}: {e}", path.display()))
        }
    }

    fn id(&self) -> String {
        match self {
            Source::Fixed(s) => s.id.clone(),
            Source::Generated(g) => g.id(),
        }
    }

    fn scenario(&self, seed: Option<u64>) -> Result<(Scenario, u64), String> {
        match self {
            Source::Fixed(s) => Ok((s.clone(), seed.unwrap_or(s.seed))),
            Source::Generated(g) => {
                let seed = seed.unwrap_or(0);
                g.build(seed).map(|s| (s, seed)).map_err(|e| e.to_string())
            }
        }
    }
}

fn episode(
    source: &Source,
    method: Method,
    seed: Option<u64>,
    budget: Option<f64>,
) -> Result<(MetricsRow, goc_core::sim::EpisodeReport, Scenario), String> {
    let (scenario, seed) = source.scenario(seed)?;
    let budget = budget.unwrap_or(scenario.budget_s);
    let report = run_episode(&scenario, &scenario.planner, method, budget).map_err(|e| e.to_string())?;
    if let Some(e) = &report.error {
        log::warn!("{}: {e}", scenario.id);
    }
    Ok((MetricsRow::from_report(&source.id(), method, seed, &report), report, scenario))
}

fn cmd_run(
    path: &Path,
    method: Method,
    seed: Option<u64>,
    metrics: Option<&Path>,
    traj: Option<&Path>,
    budget: Option<f64>,
) -> Result<bool, String> {
    let source = Source::load(path)?;
    let (row, report, scenario) = episode(&source, method, seed, budget)?;
    match metrics {
        Some(p) => {
            let fresh = fs::metadata(p).map(|m| m.len() == 0).unwrap_or(true);
            let f =
                OpenOptions::new().create(true).append(true).open(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let mut w = BufWriter::new(f);
            if fresh {
                write_metrics_header(&mut w).map_err(|e| e.to_string())?;
            }
            write_metrics_rows(&mut w, std::slice::from_ref(&row)).map_err(|e| e.to_string())?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            write_metrics_header(&mut out).map_err(|e| e.to_string())?;
            write_metrics_rows(&mut out, std::slice::from_ref(&row)).map_err(|e| e.to_string())?;
        }
    }
    if let Some(p) = traj {
        let f = File::create(p).map_err(|e| format!("{}: {e}", p.display()))?;
        let sys = &scenario.system;
        write_trajectory(BufWriter::new(f), sys.dim, sys.agents.len(), sys.keypoints.len(), &report.trajectory)
            .map_err(|e| e.to_string())?;
    }
    Ok(report.success)
}

fn cmd_render(traj: &Path, out: &Path, view: View) -> Result<(), String> {
    let f = File::open(traj).map_err(|e| format!("{}: {e}", traj.display()))?;
    let t = read_trajectory(f).map_err(|e| format!("{}: {e}", traj.display()))?;
    fs::write(out, render_svg(&t, view)).map_err(|e| format!("{}: {e}", out.display()))
}

fn bench_threads() -> usize {
    let auto = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("GOC_MPC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => n.min(auto),
        _ => auto,
    }
}

fn cmd_bench(suite: &Path, trials: u64, out: &Path) -> Result<(), String> {
    let mut files: Vec<PathBuf> = fs::read_dir(suite)
        .map_err(|e| format!("{}: {e}", suite.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "scn" || e == "gen"))
        .collect();
    files.sort();

    let mut warnings = Vec::new();
    let mut sources = Vec::new();
    for f in &files {
        match Source::load(f) {
            Ok(s) => sources.push(s),
            Err(e) => {
                log::warn!("skipping {e}");
                warnings.push(e);
            }
        }
    }
    let mut jobs = Vec::new();
    for (i, _) in sources.iter().enumerate() {
        for method in [Method::Goc, Method::LinearizedBaseline] {
            for seed in 0..trials {
                jobs.push((i, method, seed));
            }
        }
    }

    // Episodes are independent; rows are collected and written in job order.
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<MetricsRow, String>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..bench_threads().min(jobs.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(i, method, seed)) = jobs.get(k) else { break };
                let source = &sources[i];
                let seed = match source {
                    Source::Fixed(sc) => sc.seed.wrapping_add(seed),
                    Source::Generated(_) => seed,
                };
                let row = episode(source, method, Some(seed), None).map(|(row, _, _)| row);
                results.lock().expect("results lock").push((k, row));
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|(k, _)| *k);

    let f = File::create(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let mut w = BufWriter::new(f);
    let io = |e: goc_core::io::IoError| e.to_string();
    write_metrics_header(&mut w).map_err(io)?;
    let mut rows = Vec::new();
    for (_, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => warnings.push(e),
        }
    }
    write_metrics_rows(&mut w, &rows).map_err(io)?;
    for warn in &warnings {
        writeln!(w, "# skipped {}", warn.replace('\n', " ")).map_err(|e| e.to_string())?;
    }
    write_summary(&mut w, &rows).map_err(io)?;
    w.flush().map_err(|e| e.to_string())
}

fn cmd_generate(kind: Family, blocks: usize, agents: usize, seed: u64, out: &Path) -> Result<(), String> {
    let spec = match kind {
        Family::Stacking => GeneratorSpec::Stacking { blocks, agents, budget_s: None },
        Family::ParallelPickup => GeneratorSpec::ParallelPickup,
    };
    let scenario = spec.build(seed).map_err(|e| e.to_string())?;
    fs::write(out, to_json(&scenario)).map_err(|e| format!("{}: {e}", out.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { scenario, method, seed, metrics, traj, budget } => {
            cmd_run(&scenario, method.into(), seed, metrics.as_deref(), traj.as_deref(), budget).map(|ok| {
                if ok {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(2)
                }
            })
        }
        Cmd::Render { traj, out, view } => {
            let view = match view {
                ViewArg::Xy => View::Xy,
                ViewArg::Xz => View::Xz,
            };
            cmd_render(&traj, &out, view).map(|_| ExitCode::SUCCESS)
        }
        Cmd::Bench { suite, trials, out } => cmd_bench(&suite, trials, &out).map(|_| ExitCode::SUCCESS),
        Cmd::Generate { kind, blocks, agents, seed, out } => {
            cmd_generate(kind, blocks, agents, seed, &out).map(|_| ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
