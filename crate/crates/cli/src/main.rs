use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use porecov_core::decomposition::euclidean_cell_components;
use porecov_core::mesh::gen;
use porecov_core::mesh::io::save_mesh;
use porecov_core::metric::SurfacePoint;
use porecov_core::partition::{bar_workloads, build_safe_bars, check_bars, nominal_workloads, weighted_laplacian};
use porecov_core::sim::analysis::{cycle_connectivity, IssReport};
use porecov_core::sim::config::builtin_spec;
use porecov_core::sim::trace::{best_rows, read_metrics_csv, split_epochs, write_metrics_csv, write_snapshots_csv};
use porecov_core::sim::{
    build_scenario_mapping, imbalance, mean, run_scenario, FaultEvent, MeshSource, RunMetrics, RunResult, Scenario, ScenarioConfig,
};
use porecov_core::conformal::save_mapped;
use porecov_core::{Complex2, PartitionState};

#[derive(Parser)]
#[command(name = "porecov", version, about = "Sector coverage on surfaces with holes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a generated test surface as a mesh file.
    Generate {
        /// `three_hole` or `six_hole`.
        #[arg(long, conflicts_with = "spec")]
        builtin: Option<String>,
        /// TOML surface description.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the conformal map of the config's mesh and save it.
    Map {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Workloads and bar checks of a static partition.
    Partition {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated phases in radians, in counterclockwise order.
        #[arg(long, allow_hyphen_values = true)]
        phases: String,
        /// Directory for the bar polylines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the anchor sweep and continue the best configuration.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        k_star: Option<usize>,
        /// `t:id,id`; may be repeated.
        #[arg(long)]
        fault: Vec<String>,
    },
    /// Stability, capacity and spectral checks on a saved run.
    Analyze {
        /// Directory written by `run`.
        #[arg(long, default_value = "out")]
        run: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(ScenarioConfig::default()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
struct EpochSummary {
    ids: Vec<usize>,
    start_step: usize,
    converged_at: Option<usize>,
    mean_workload: f64,
    imbalance: f64,
    workloads: Vec<f64>,
    phases: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepSummary {
    k: usize,
    anchor: usize,
    reference: f64,
    cost: f64,
    steps: usize,
    converged_at: Option<usize>,
    imbalance: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Messages {
    workload: u64,
    position: u64,
    consensus: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Summary {
    best_k: usize,
    best_cost: f64,
    total_mass: f64,
    steps: usize,
    end_time: f64,
    final_cost: f64,
    /// Image positions of the surviving agents at the end.
    agents: Vec<[f64; 2]>,
    faults: Vec<FaultEvent>,
    metrics: RunMetrics,
    messages: Messages,
    epochs: Vec<EpochSummary>,
    sweeps: Vec<SweepSummary>,
}

fn summarize(r: &RunResult) -> Summary {
    let f = &r.final_run;
    Summary {
        best_k: r.best_k,
        best_cost: r.best_cost,
        total_mass: r.total_mass,
        steps: f.steps,
        end_time: f.end_time,
        final_cost: f.cost,
        agents: f.agents.iter().map(|z| [z.re, z.im]).collect(),
        faults: f.faults.iter().map(|(t, ids)| FaultEvent { time: *t, agents: ids.clone() }).collect(),
        metrics: r.metrics.clone(),
        messages: Messages {
            workload: r.message_log.workload,
            position: r.message_log.position,
            consensus: r.message_log.consensus,
        },
        epochs: f
            .epochs
            .iter()
            .map(|e| EpochSummary {
                ids: e.ids.clone(),
                start_step: e.start_step,
                converged_at: e.converged_at,
                mean_workload: mean(&e.workloads),
                imbalance: imbalance(&e.workloads),
                workloads: e.workloads.clone(),
                phases: e.phases.clone(),
            })
            .collect(),
        sweeps: r
            .sweeps
            .iter()
            .map(|s| SweepSummary {
                k: s.k,
                anchor: s.anchor,
                reference: s.reference,
                cost: s.cost,
                steps: s.steps,
                converged_at: s.converged_at,
                imbalance: imbalance(&s.workloads),
            })
            .collect(),
    }
}

fn generate(builtin: Option<String>, spec: Option<PathBuf>, out: &Path) -> Result<()> {
    let spec = match (builtin, spec) {
        (Some(name), None) => builtin_spec(&name)?,
        (None, Some(p)) => {
            let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        _ => bail!("give exactly one of --builtin or --spec"),
    };
    let mesh = gen::surface(&spec)?;
    save_mesh(&mesh, out)?;
    println!(
        "{} vertices, {} faces, {} obstacles -> {}",
        mesh.n_vertices(),
        mesh.n_faces(),
        mesh.obstacle_count(),
        out.display()
    );
    Ok(())
}

fn map(config: Option<&Path>, out: &Path) -> Result<()> {
    let c = load_config(config)?;
    let (mm, report) = build_scenario_mapping(&c)?;
    fs::create_dir_all(out)?;
    save_mapped(&mm, &out.join("mapped.txt"))?;
    write_text(&out.join("distortion.toml"), &toml::to_string(&report)?)?;
    println!("mean |mu| {:.3e}  max |mu| {:.3e}  flipped {}", report.mean_mu, report.max_mu, report.flipped_faces);
    for (k, (o, d)) in mm.obstacles.iter().zip(&report.radial_deviation).enumerate() {
        println!(
            "obstacle {k}: centre ({:.6}, {:.6}) radius {:.6} radial deviation {:.3e}",
            o.center.re, o.center.im, o.radius, d
        );
    }
    println!("saved {}", out.join("mapped.txt").display());
    Ok(())
}

fn partition(config: Option<&Path>, phases: &str, out: Option<&Path>) -> Result<()> {
    let c = load_config(config)?;
    let phases: Vec<f64> = phases
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad phase {s:?}")))
        .collect::<Result<_>>()?;
    let sc = Scenario::build(c)?;
    let state = PartitionState::new(phases, sc.config.k_psi, sc.config.beta)?;
    let bars = build_safe_bars(&state, &sc.mapped.obstacles)?;
    let check = check_bars(&bars, &sc.mapped.obstacles, sc.config.beta);
    let nominal = nominal_workloads(&state, &sc.table);
    let safe = bar_workloads(&state, &sc.table, &bars, &sc.mapped, &sc.rho_hat);
    println!("sector  phase        nominal      with bypasses");
    for i in 0..state.len() {
        println!("{i:>6}  {:<11.6}  {:<11.6}  {:.6}", state.phases[i], nominal[i], safe[i]);
    }
    println!(
        "total {:.6} (face sum {:.6}), imbalance {:.5}, bar violations {}",
        safe.iter().sum::<f64>(),
        sc.total_mass,
        imbalance(&safe),
        check.violations()
    );
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let path = dir.join("bars.csv");
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["bar", "x", "y"])?;
        for (i, b) in bars.iter().enumerate() {
            for p in &b.points {
                w.write_record([i.to_string(), format!("{:.11e}", p.re), format!("{:.11e}", p.im)])?;
            }
        }
        w.flush()?;
        println!("saved {}", path.display());
    }
    Ok(())
}

fn run(config: Option<&Path>, out: &Path, seed: Option<u64>, k_star: Option<usize>, faults: &[String]) -> Result<()> {
    let mut c = load_config(config)?;
    if let Some(s) = seed {
        c.seed = s;
    }
    if let Some(k) = k_star {
        c.k_star = k;
    }
    for f in faults {
        c.faults.push(FaultEvent::parse(f)?);
    }
    c.validate()?;
    let sc = Scenario::build(c)?;
    let result = run_scenario(&sc)?;
    fs::create_dir_all(out)?;
    // `analyze` reads this copy from inside the output directory
    let mut cfg = sc.config.clone();
    if let MeshSource::File { path } = &mut cfg.mesh {
        *path = fs::canonicalize(&*path)?;
    }
    if let Some(p) = &mut cfg.mapped {
        *p = fs::canonicalize(&*p)?;
    }
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let metrics = File::create(out.join("metrics.csv"))?;
    write_metrics_csv(&result, sc.config.n_agents, BufWriter::new(metrics))?;
    if !result.snapshots.is_empty() {
        write_snapshots_csv(&result.snapshots, BufWriter::new(File::create(out.join("snapshots.csv"))?))?;
    }
    let summary = summarize(&result);
    write_text(&out.join("summary.toml"), &toml::to_string(&summary)?)?;
    let m = &result.metrics;
    println!("best k {} of {}, J* {:.6}", result.best_k, sc.config.k_star, result.best_cost);
    println!(
        "mean workload {:.5}  imbalance {:.5}  rmse {:.3e}  iterations {}{}",
        m.mean_workload,
        m.imbalance,
        m.workload_rmse,
        m.iterations,
        if m.converged { "" } else { " (not converged)" }
    );
    for (i, e) in summary.epochs.iter().enumerate().skip(1) {
        println!(
            "after fault {i}: agents {:?}  mean workload {:.5}  ratio {:.4}  imbalance {:.5}",
            e.ids,
            e.mean_workload,
            e.mean_workload / summary.epochs[0].mean_workload,
            e.imbalance
        );
    }
    println!(
        "bar violations {}  min clearance {:.4}  max mass error {:.2e}  t/agent-step {:.2e} s",
        m.bar_violations, m.min_obstacle_clearance, m.max_mass_error, m.wall_time_per_agent_step
    );
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EpochAnalysis {
    ids: Vec<usize>,
    start_time: f64,
    omega_floor: f64,
    decay_ok: bool,
    iss: IssReport,
}

#[derive(Debug, Serialize)]
struct SpectralCheck {
    phases: Vec<f64>,
    omega: Vec<f64>,
    lambda2: f64,
    bound: f64,
}

#[derive(Debug, Serialize)]
struct Analysis {
    max_agents: usize,
    epochs: Vec<EpochAnalysis>,
    spectral: SpectralCheck,
    /// Connected pieces of each straight-line Voronoi cell of the final agents.
    euclidean_cell_components: Vec<usize>,
}

fn analyze(dir: &Path) -> Result<()> {
    let c = ScenarioConfig::load(&dir.join("config.toml"))?;
    let summary: Summary = toml::from_str(&fs::read_to_string(dir.join("summary.toml")).context("reading summary.toml")?)?;
    let rows = read_metrics_csv(File::open(dir.join("metrics.csv")).context("opening metrics.csv")?)?;
    let sc = Scenario::build(c)?;
    let best = best_rows(&rows, summary.best_k);
    if best.is_empty() {
        bail!("no rows for sweep run {}", summary.best_k);
    }
    let epochs: Vec<EpochAnalysis> = split_epochs(&best)
        .iter()
        .map(|e| {
            let iss = sc.iss_report(e, sc.config.beta);
            EpochAnalysis {
                ids: e[0].ids.clone(),
                start_time: e[0].time,
                omega_floor: e.iter().map(|r| r.omega_min).fold(f64::INFINITY, f64::min),
                decay_ok: iss.decay_ok(),
                iss,
            }
        })
        .collect();
    let last = best.last().expect("non-empty");
    let omega: Vec<f64> = last.phases.iter().map(|&p| sc.table.at(p)).collect();
    let lambda2 = weighted_laplacian(&omega).1;
    let bound = omega.iter().copied().fold(f64::INFINITY, f64::min) * cycle_connectivity(omega.len());
    let sites: Vec<_> = summary
        .agents
        .iter()
        .map(|p| SurfacePoint::at_image(&sc.mapped, Complex2::new(p[0], p[1])).map(|s| sc.mapped.surface_point(s.face, s.bary)))
        .collect::<porecov_core::Result<_>>()?;
    let analysis = Analysis {
        max_agents: sc.max_agents(epochs[0].omega_floor),
        spectral: SpectralCheck {
            phases: last.phases.clone(),
            omega,
            lambda2,
            bound,
        },
        euclidean_cell_components: euclidean_cell_components(&sc.mapped.mesh, &sites),
        epochs,
    };
    for (i, e) in analysis.epochs.iter().enumerate() {
        println!(
            "epoch {i} agents {:?}: gamma {:.4}  fitted slope {}  steady error {:.3e}  bound {:.3e}  envelope violations {}",
            e.ids,
            e.iss.gamma,
            e.iss.decay_slope.map_or("n/a".into(), |s| format!("{s:.4}")),
            e.iss.steady_state,
            e.iss.ultimate_bound,
            e.iss.violations.len()
        );
    }
    println!("max agents {}", analysis.max_agents);
    println!("lambda2 {:.6} >= {:.6}: {}", lambda2, bound, lambda2 >= bound - 1e-9);
    println!("straight-line Voronoi cell pieces {:?}", analysis.euclidean_cell_components);
    write_text(&dir.join("analysis.toml"), &toml::to_string(&analysis)?)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Generate { builtin, spec, out } => generate(builtin, spec, &out),
        Cmd::Map { config, out } => map(config.as_deref(), &out),
        Cmd::Partition { config, phases, out } => partition(config.as_deref(), &phases, out.as_deref()),
        Cmd::Run {
            config,
            out,
            seed,
            k_star,
            fault,
        } => run(config.as_deref(), &out, seed, k_star, &fault),
        Cmd::Analyze { run } => analyze(&run),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn run_flags_parse() {
        let cli = Cli::try_parse_from(["porecov", "run", "--k-star", "3", "--fault", "200:3,4,5", "--fault", "300:1"]).unwrap();
        match cli.cmd {
            Cmd::Run { k_star, fault, .. } => {
                assert_eq!(k_star, Some(3));
                assert_eq!(fault, vec!["200:3,4,5", "300:1"]);
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["porecov", "generate", "--builtin", "six_hole", "--spec", "x", "--out", "m"]).is_err());
    }
}
