//! Coverage runs: the anchor sweep, the continued best run with its faults,
//! and the run metrics.

pub mod analysis;
pub mod comm;
pub mod config;
pub mod trace;

use std::f64::consts::TAU;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{build_mapping, read_mapped, DistortionReport, MappedMesh};
use crate::control::{control_step, AgentState, CoverageModel, PerformanceFn, StepOutcome};
use crate::decomposition::{gvt_partition, GeneratorSet};
use crate::error::{Error, Result};
use crate::geometry::Complex2;
use crate::metric::{image_mass, transport_density, LengthGraph, MetricField};
use crate::partition::{
    bar_workloads, build_safe_bar, build_safe_bars, check_bars, nominal_workloads, partition_step, workload_error_bound,
    MarginalTable, PartitionState,
};

use analysis::{reference_phase, select_anchor_at};
use comm::{pass_to_successor, CommGraph, MessageLog};
pub use config::{DensitySpec, FaultEvent, MeshSource, ScenarioConfig, Tolerances};
pub use trace::TraceRow;

/// Halvings of the partition time step before a run gives up.
const MAX_PARTITION_HALVINGS: usize = 10;

/// A mapped workspace with its density and metric, ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub mapped: MappedMesh,
    pub report: Option<DistortionReport>,
    /// Surface density per vertex after normalisation.
    pub rho: Vec<f64>,
    /// The same density carried to the disk.
    pub rho_hat: Vec<f64>,
    pub table: MarginalTable,
    /// Face-sum mass of `rho_hat`.
    pub total_mass: f64,
    pub graph: LengthGraph,
    pub field: MetricField,
}

/// Loads the mesh, places generators and builds the conformal map.
pub fn build_scenario_mapping(config: &ScenarioConfig) -> Result<(MappedMesh, DistortionReport)> {
    let mesh = config.mesh.load().map_err(|e| e.at("load mesh"))?;
    let star = config.star_flags(mesh.obstacle_count());
    let (gens, _) = GeneratorSet::search_on_loops(
        &mesh,
        &star,
        config.generators_per_obstacle,
        config.seed,
        config.tolerances.generator_tries,
    )
    .map_err(|e| e.at("place generators"))?;
    let subs = gvt_partition(&mesh, &gens).map_err(|e| e.at("decompose"))?;
    build_mapping(&mesh, &subs, &gens, &config.tolerances.map_options())
}

impl Scenario {
    pub fn build(config: ScenarioConfig) -> Result<Scenario> {
        config.validate()?;
        if let Some(path) = &config.mapped {
            let mesh = config.mesh.load().map_err(|e| e.at("load mesh"))?;
            let mm = read_mapped(mesh, path).map_err(|e| e.at("load mapping"))?;
            return Scenario::with_mapping(config, mm);
        }
        let (mm, report) = build_scenario_mapping(&config)?;
        let mut s = Scenario::with_mapping(config, mm)?;
        s.report = Some(report);
        Ok(s)
    }

    pub fn with_mapping(config: ScenarioConfig, mapped: MappedMesh) -> Result<Scenario> {
        config.validate()?;
        let raw = config.density.field(&mapped.mesh)?.source_values(&mapped.mesh, 1.0)?;
        let raw_total = image_mass(&mapped, &transport_density(&raw, &mapped));
        let mut factor = config.density_scale;
        if let Some(t) = config.density_total {
            if raw_total > 0.0 {
                factor *= t / raw_total;
            }
        }
        let rho: Vec<f64> = raw.iter().map(|v| v * factor).collect();
        let rho_hat = transport_density(&rho, &mapped);
        let total_mass = image_mass(&mapped, &rho_hat);
        let table = MarginalTable::build_checked(&mapped, &rho_hat);
        let graph = LengthGraph::new(&mapped);
        let field = MetricField::new(config.mu, config.agent_radius, mapped.obstacles.clone())?;
        Ok(Scenario {
            config,
            mapped,
            report: None,
            rho,
            rho_hat,
            table,
            total_mass,
            graph,
            field,
        })
    }

    pub fn model(&self) -> CoverageModel<'_> {
        CoverageModel::new(&self.mapped, &self.graph, &self.field, &self.rho, PerformanceFn::Square)
    }

    /// `C_δ` in `δ(β) = C_δ β` for a team of `n`.
    pub fn c_delta(&self, n: usize) -> f64 {
        let rho_sup = self.rho_hat.iter().copied().fold(0.0, f64::max);
        workload_error_bound(1.0, n, &self.mapped.obstacles, rho_sup)
    }

    /// Stability check of one epoch of rows, on the nominal workload error.
    pub fn iss_report(&self, rows: &[TraceRow], beta: f64) -> analysis::IssReport {
        let n = rows.first().map_or(self.config.n_agents, |r| r.ids.len());
        let omega_floor = rows.iter().map(|r| r.omega_min).fold(f64::INFINITY, f64::min);
        let trace: Vec<(f64, f64)> = rows.iter().map(|r| (r.time, r.nominal_error)).collect();
        analysis::verify_iss(&trace, beta, omega_floor, self.config.k_psi, n, self.c_delta(n))
    }

    /// Largest team the obstacle layout and workload tolerance allow.
    pub fn max_agents(&self, omega_floor: f64) -> usize {
        let obs = &self.mapped.obstacles;
        let c = &self.config;
        let r_max = obs.iter().map(|o| o.radius).fold(0.0, f64::max);
        let mut d_min = f64::INFINITY;
        for (k, a) in obs.iter().enumerate() {
            d_min = d_min.min(1.0 - a.center.norm() - a.radius);
            for b in &obs[k + 1..] {
                d_min = d_min.min((a.center - b.center).norm() - a.radius - b.radius);
            }
        }
        if obs.is_empty() {
            return analysis::AGENT_CAP;
        }
        // the stability term uses the per-agent constant at the requested team size
        let gamma = analysis::decay_rate(c.k_psi, omega_floor, c.n_agents);
        analysis::max_agents(r_max, c.beta, gamma, self.c_delta(c.n_agents), c.tolerances.eps_max, d_min)
    }
}

/// Agents, phases and bookkeeping of one run in progress. Agent `i` covers
/// the sector from `phases[i]` to `phases[i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub agents: Vec<AgentState>,
    pub partition: PartitionState,
    pub comm: CommGraph,
    /// Slot whose phase is pinned.
    pub anchor: usize,
    pub reference: f64,
    pub time: f64,
}

impl SimState {
    pub fn ids(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.id).collect()
    }
}

/// Removes every agent named by an event at or before `t`. Survivors keep
/// their phases and the cycle is re-linked over them; if the anchor failed
/// the survivor nearest the reference phase takes over.
pub fn inject_fault(state: &SimState, schedule: &[FaultEvent], t: f64) -> Result<SimState> {
    let failed: Vec<usize> = schedule
        .iter()
        .filter(|f| f.time <= t)
        .flat_map(|f| f.agents.iter().copied())
        .collect();
    let keep: Vec<usize> = (0..state.agents.len())
        .filter(|&i| !failed.contains(&state.agents[i].id))
        .collect();
    if keep.len() == state.agents.len() {
        return Ok(state.clone());
    }
    if keep.len() < 2 {
        return Err(Error::MissionAbort);
    }
    let phases: Vec<f64> = keep.iter().map(|&i| state.partition.phases[i]).collect();
    let anchor = match keep.iter().position(|&i| i == state.anchor) {
        Some(a) => a,
        None => select_anchor_at(&phases, state.reference),
    };
    Ok(SimState {
        agents: keep.iter().map(|&i| state.agents[i]).collect(),
        partition: PartitionState::new(phases, state.partition.k_psi, state.partition.beta)?,
        comm: CommGraph::cycle(keep.len()),
        anchor,
        reference: state.reference,
        time: state.time,
    })
}

/// Bar polylines and agent positions at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Sweep index, `None` for the continued best run.
    pub k: Option<usize>,
    pub step: usize,
    pub time: f64,
    pub bars: Vec<Vec<Complex2>>,
    pub agents: Vec<(usize, Complex2)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub k: usize,
    pub reference: f64,
    pub anchor: usize,
    /// Coverage cost of the final state.
    pub cost: f64,
    pub steps: usize,
    /// Step at which the settling window closed.
    pub converged_at: Option<usize>,
    pub workloads: Vec<f64>,
    pub phases: Vec<f64>,
    pub agents: Vec<Complex2>,
    /// Smallest marginal density at a bar over the run.
    pub omega_floor: f64,
    pub rows: Vec<TraceRow>,
}

/// A stretch of the continued run with a fixed set of agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub ids: Vec<usize>,
    pub start_step: usize,
    /// Step at which the settling window closed, counted from the run start.
    pub converged_at: Option<usize>,
    /// Workloads and phases on the last step of the epoch.
    pub workloads: Vec<f64>,
    pub phases: Vec<f64>,
}

/// The best sweep run carried on until it settles, through any faults.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalRecord {
    pub k: usize,
    /// One epoch before the first fault and one after each fault.
    pub epochs: Vec<Epoch>,
    /// `(time, failed ids)` as applied.
    pub faults: Vec<(f64, Vec<usize>)>,
    /// Steps taken in total, the sweep part included.
    pub steps: usize,
    pub end_time: f64,
    pub cost: f64,
    pub agents: Vec<Complex2>,
    /// Rows after the sweep part.
    pub rows: Vec<TraceRow>,
}

impl FinalRecord {
    pub fn nominal(&self) -> &Epoch {
        &self.epochs[0]
    }

    pub fn last(&self) -> &Epoch {
        self.epochs.last().expect("at least one epoch")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mean_workload: f64,
    /// `max(m̂) / min(m̂)` when the continued best run settles.
    pub imbalance: f64,
    /// Root mean square deviation of the workloads from their mean.
    pub workload_rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_per_agent_step: f64,
    pub bar_violations: usize,
    pub max_spacing_error: f64,
    pub min_obstacle_clearance: f64,
    /// Smallest `|p_i − p_j| − 2r_a` over accepted states.
    pub min_separation_margin: f64,
    /// Largest `J_after − J_before` over control steps.
    pub max_cost_increase: f64,
    /// Largest `|Σ m̂ − M| / M` over logged steps.
    pub max_mass_error: f64,
    pub stuck_events: usize,
    pub held_events: usize,
    pub gradient_unavailable_events: usize,
    pub partition_halvings: usize,
    pub messages: u64,
    pub agent_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub best_k: usize,
    pub best_cost: f64,
    pub sweeps: Vec<SweepRecord>,
    pub final_run: FinalRecord,
    pub metrics: RunMetrics,
    pub snapshots: Vec<Snapshot>,
    pub total_mass: f64,
    pub message_log: MessageLog,
}

impl RunResult {
    pub fn best(&self) -> &SweepRecord {
        &self.sweeps[self.best_k - 1]
    }
}

pub fn imbalance(m: &[f64]) -> f64 {
    let max = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = m.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

pub fn mean(m: &[f64]) -> f64 {
    m.iter().sum::<f64>() / m.len() as f64
}

pub fn rmse(m: &[f64]) -> f64 {
    let mu = mean(m);
    (m.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / m.len() as f64).sqrt()
}

struct Runner<'a> {
    sc: &'a Scenario,
    model: CoverageModel<'a>,
    metrics: RunMetrics,
    log: MessageLog,
    snapshots: Vec<Snapshot>,
    /// Inputs and outcome of the last control step, reused while nothing changes.
    last: Option<(Vec<Vec<usize>>, Vec<AgentState>, StepOutcome)>,
}

struct StepResult {
    row: TraceRow,
    workloads: Vec<f64>,
    max_speed: f64,
}

impl<'a> Runner<'a> {
    fn new(sc: &'a Scenario) -> Runner<'a> {
        Runner {
            sc,
            model: sc.model(),
            metrics: RunMetrics {
                mean_workload: 0.0,
                imbalance: 0.0,
                workload_rmse: 0.0,
                iterations: 0,
                converged: false,
                wall_time_per_agent_step: 0.0,
                bar_violations: 0,
                max_spacing_error: 0.0,
                min_obstacle_clearance: f64::INFINITY,
                min_separation_margin: f64::INFINITY,
                max_cost_increase: f64::NEG_INFINITY,
                max_mass_error: 0.0,
                stuck_events: 0,
                held_events: 0,
                gradient_unavailable_events: 0,
                partition_halvings: 0,
                messages: 0,
                agent_steps: 0,
            },
            log: MessageLog::default(),
            snapshots: Vec::new(),
            last: None,
        }
    }

    fn initial_state(&self, k: usize) -> Result<SimState> {
        let c = &self.sc.config;
        let n = c.n_agents;
        let base: Vec<f64> = (0..n).map(|i| TAU * i as f64 / n as f64).collect();
        let reference = reference_phase(k, c.k_star);
        let anchor = select_anchor_at(&base, reference);
        let shift = reference - base[anchor];
        let phases: Vec<f64> = base
            .iter()
            .map(|p| {
                let x = (p + shift).rem_euclid(TAU);
                if x >= TAU {
                    0.0
                } else {
                    x
                }
            })
            .collect();
        let partition = PartitionState::new(phases, c.k_psi, c.beta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64));
        let field = &self.sc.field;
        let mut agents: Vec<AgentState> = Vec::with_capacity(n);
        for i in 0..n {
            let width = partition.width(i);
            let mid = partition.phases[i] + 0.5 * width;
            let mut placed = None;
            for _ in 0..1000 {
                let q = Complex2::from_polar(rng.random_range(0.3..0.7), mid + width * rng.random_range(-0.25..0.25));
                if field.obstacle_clearance(q) <= 4.0 * field.r_a
                    || agents.iter().any(|a| (a.image - q).norm() <= 4.0 * field.r_a)
                {
                    continue;
                }
                if let Ok(a) = AgentState::at_image(&self.sc.mapped, i, q) {
                    placed = Some(a);
                    break;
                }
            }
            agents.push(placed.ok_or_else(|| Error::Config(format!("no free start position for agent {i}")))?);
        }
        Ok(SimState {
            agents,
            comm: CommGraph::cycle(n),
            partition,
            anchor,
            reference,
            time: 0.0,
        })
    }

    fn step(&mut self, st: &mut SimState, k: Option<usize>, step: usize) -> Result<StepResult> {
        let sc = self.sc;
        let c = &sc.config;
        let obs = &sc.mapped.obstacles;
        let annotate = |e: Error| Error::RunStep {
            context: match k {
                Some(k) => format!("sweep k={k}, step {step}"),
                None => format!("continued run, step {step}"),
            },
            source: Box::new(e),
        };
        let n = st.agents.len();
        let bars = build_safe_bars(&st.partition, obs).map_err(annotate)?;
        let check = check_bars(&bars, obs, c.beta);
        self.metrics.bar_violations += check.violations();
        self.metrics.max_spacing_error = self.metrics.max_spacing_error.max(check.spacing_error);
        let m = bar_workloads(&st.partition, &sc.table, &bars, &sc.mapped, &sc.rho_hat);
        let nominal = nominal_workloads(&st.partition, &sc.table);
        let mass_err = (m.iter().sum::<f64>() - sc.total_mass).abs() / sc.total_mass.max(f64::MIN_POSITIVE);
        if sc.total_mass > 0.0 {
            self.metrics.max_mass_error = self.metrics.max_mass_error.max(mass_err);
        }
        if c.snapshot_every > 0 && step % c.snapshot_every == 0 {
            self.snapshots.push(Snapshot {
                k,
                step,
                time: st.time,
                bars: bars.iter().map(|b| b.points.clone()).collect(),
                agents: st.agents.iter().map(|a| (a.id, a.image)).collect(),
            });
        }

        let sectors = self.model.sector_faces(&st.partition.phases);
        let outcome = match &self.last {
            Some((s, a, out)) if *s == sectors && *a == st.agents => out.clone(),
            _ => {
                let out = control_step(&self.model, &st.agents, &sectors, c.k_p, c.v_max, c.dt);
                self.last = Some((sectors, st.agents.clone(), out.clone()));
                out
            }
        };
        self.metrics.max_cost_increase = self.metrics.max_cost_increase.max(outcome.cost_after - outcome.cost_before);
        self.metrics.stuck_events += outcome.stuck.len();
        self.metrics.held_events += outcome.held.len();
        self.metrics.gradient_unavailable_events += outcome.gradient_unavailable.len();
        self.metrics.agent_steps += n as u64;
        // each agent reads every other position for its barrier terms
        self.log.position += (n * (n - 1)) as u64;

        // each agent learns its predecessor's workload
        let received = pass_to_successor(&m, &mut self.log);
        debug_assert!((0..n).all(|i| received[i] == m[(i + n - 1) % n]));
        let mut dt = c.dt;
        let mut halvings = 0;
        let phases = loop {
            match partition_step(&st.partition, &m, dt, Some(st.anchor)) {
                Ok(p) => break p,
                Err(Error::StepRejected) if halvings < MAX_PARTITION_HALVINGS => {
                    dt *= 0.5;
                    halvings += 1;
                }
                Err(e) => return Err(annotate(e)),
            }
        };
        self.metrics.partition_halvings += halvings;

        let mean_m = sc.total_mass / n as f64;
        let row = TraceRow {
            k,
            step,
            time: st.time,
            cost: outcome.cost_before,
            nominal_error: nominal.iter().map(|x| (x - mean_m).powi(2)).sum::<f64>().sqrt(),
            omega_min: st.partition.phases.iter().map(|&p| sc.table.at(p)).fold(f64::INFINITY, f64::min),
            ids: st.ids(),
            workloads: m.clone(),
            phases: st.partition.phases.clone(),
            speeds: outcome.speed.clone(),
        };
        let max_speed = outcome.speed.iter().cloned().fold(0.0, f64::max);

        st.agents = outcome.agents;
        st.partition.phases = phases;
        self.record_safety(&st.agents);
        Ok(StepResult { row, workloads: m, max_speed })
    }

    fn record_safety(&mut self, agents: &[AgentState]) {
        let f = &self.sc.field;
        for (i, a) in agents.iter().enumerate() {
            self.metrics.min_obstacle_clearance = self.metrics.min_obstacle_clearance.min(f.obstacle_clearance(a.image));
            for b in &agents[i + 1..] {
                self.metrics.min_separation_margin =
                    self.metrics.min_separation_margin.min((a.image - b.image).norm() - 2.0 * f.r_a);
            }
        }
    }

    fn final_workloads(&self, st: &SimState) -> Result<Vec<f64>> {
        let bars = build_safe_bars(&st.partition, &self.sc.mapped.obstacles)?;
        Ok(bar_workloads(&st.partition, &self.sc.table, &bars, &self.sc.mapped, &self.sc.rho_hat))
    }

    fn sweep(&mut self, k: usize) -> Result<(SweepRecord, SimState)> {
        let c = &self.sc.config;
        let mut st = self.initial_state(k)?;
        self.record_safety(&st.agents);
        self.last = None;
        let steps = c.steps_per_run();
        let mut rows = Vec::with_capacity(steps);
        let mut prev: Option<Vec<f64>> = None;
        let mut settled = 0;
        let mut converged_at = None;
        let mut done = 0;
        for s in 0..steps {
            st.time = s as f64 * c.dt;
            let r = self.step(&mut st, Some(k), s)?;
            let change = prev
                .as_ref()
                .map(|p| p.iter().zip(&r.workloads).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .unwrap_or(f64::INFINITY);
            let tol = c.tolerances.convergence;
            settled = if change < tol && r.max_speed < tol { settled + 1 } else { 0 };
            prev = Some(r.workloads);
            rows.push(r.row);
            done = s + 1;
            if settled >= c.tolerances.window {
                converged_at = Some(s);
                break;
            }
        }
        st.time = done as f64 * c.dt;
        let sectors = self.model.sector_faces(&st.partition.phases);
        let cost = self.model.cost_with(&st.agents, &sectors).total;
        let workloads = self.final_workloads(&st)?;
        let omega_floor = rows.iter().map(|r| r.omega_min).fold(f64::INFINITY, f64::min);
        let rec = SweepRecord {
            k,
            reference: st.reference,
            anchor: st.anchor,
            cost,
            steps: done,
            converged_at,
            workloads,
            phases: st.partition.phases.clone(),
            agents: st.agents.iter().map(|a| a.image).collect(),
            omega_floor,
            rows,
        };
        Ok((rec, st))
    }

    /// Continues the best sweep run until it settles, applying faults as
    /// their times come, and at least until `mission_time`.
    fn finish(&mut self, rec: &SweepRecord, mut st: SimState) -> Result<FinalRecord> {
        let c = self.sc.config.clone();
        let window = c.tolerances.window;
        let tol = c.tolerances.convergence;
        let mut epochs = vec![Epoch {
            ids: st.ids(),
            start_step: 0,
            converged_at: rec.converged_at,
            workloads: rec.workloads.clone(),
            phases: rec.phases.clone(),
        }];
        let mut settled = if rec.converged_at.is_some() { window } else { 0 };
        let mut prev: Option<Vec<f64>> = None;
        let mut applied: Vec<(f64, Vec<usize>)> = Vec::new();
        let mut rows = Vec::new();
        let mut s = rec.steps;
        self.last = None;
        while s < c.tolerances.max_steps.max(rec.steps) {
            let t = s as f64 * c.dt;
            st.time = t;
            let ids = st.ids();
            let next = inject_fault(&st, &c.faults, t)?;
            if next.agents.len() != st.agents.len() {
                let now = next.ids();
                applied.push((t, ids.into_iter().filter(|id| !now.contains(id)).collect()));
                epochs.push(Epoch {
                    ids: now,
                    start_step: s,
                    converged_at: None,
                    workloads: Vec::new(),
                    phases: Vec::new(),
                });
                settled = 0;
                prev = None;
                self.last = None;
            }
            st = next;
            let pending = c.faults.iter().any(|f| f.time > t && f.agents.iter().any(|a| st.ids().contains(a)));
            let epoch = epochs.last_mut().expect("epoch");
            if epoch.converged_at.is_some() && !pending && c.mission_time.is_none_or(|m| t >= m) {
                break;
            }
            let r = self.step(&mut st, None, s)?;
            let change = prev
                .as_ref()
                .map(|p| p.iter().zip(&r.workloads).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .unwrap_or(f64::INFINITY);
            settled = if change < tol && r.max_speed < tol { settled + 1 } else { 0 };
            if settled >= window && epoch.converged_at.is_none() {
                epoch.converged_at = Some(s);
                epoch.workloads = r.workloads.clone();
                epoch.phases = r.row.phases.clone();
            }
            prev = Some(r.workloads);
            rows.push(r.row);
            s += 1;
        }
        st.time = s as f64 * c.dt;
        let sectors = self.model.sector_faces(&st.partition.phases);
        let cost = self.model.cost_with(&st.agents, &sectors).total;
        // an epoch that never settled keeps its state from just before the
        // next fault, or the end state for the last one
        for e in 0..epochs.len() {
            if epochs[e].converged_at.is_some() && !epochs[e].workloads.is_empty() {
                continue;
            }
            if let Some(next) = epochs.get(e + 1).map(|n| n.start_step) {
                if let Some(row) = rows.iter().rev().find(|r| r.step < next) {
                    epochs[e].workloads = row.workloads.clone();
                    epochs[e].phases = row.phases.clone();
                }
            } else {
                epochs[e].workloads = self.final_workloads(&st)?;
                epochs[e].phases = st.partition.phases.clone();
            }
        }
        Ok(FinalRecord {
            k: rec.k,
            epochs,
            faults: applied,
            steps: s,
            end_time: st.time,
            cost,
            agents: st.agents.iter().map(|a| a.image).collect(),
            rows,
        })
    }
}

/// Sweeps the anchor reference over `K*` phases, keeps the run with the
/// lowest final cost, then continues it until it settles and through the
/// fault schedule.
pub fn run_scenario(sc: &Scenario) -> Result<RunResult> {
    let c = &sc.config;
    // the widest buffers belong to the last bar; reject teams they cannot fit
    build_safe_bar(c.n_agents, 0.0, &sc.mapped.obstacles, c.beta)?;
    let mut runner = Runner::new(sc);
    let clock = Instant::now();
    let mut sweeps = Vec::with_capacity(c.k_star);
    let mut best: Option<(usize, f64, SimState)> = None;
    for k in 1..=c.k_star {
        let (rec, st) = runner.sweep(k)?;
        if best.as_ref().is_none_or(|b| rec.cost < b.1) {
            best = Some((k, rec.cost, st));
        }
        sweeps.push(rec);
    }
    let (best_k, best_cost, best_state) = best.expect("k_star >= 1");
    let final_run = runner.finish(&sweeps[best_k - 1], best_state)?;
    let secs = clock.elapsed().as_secs_f64();
    let nominal = final_run.nominal();
    let mut metrics = runner.metrics.clone();
    metrics.mean_workload = mean(&nominal.workloads);
    metrics.imbalance = imbalance(&nominal.workloads);
    metrics.workload_rmse = rmse(&nominal.workloads);
    metrics.iterations = nominal.converged_at.map_or(final_run.steps, |s| s + 1);
    metrics.converged = nominal.converged_at.is_some();
    metrics.wall_time_per_agent_step = secs / runner.metrics.agent_steps.max(1) as f64;
    metrics.messages = runner.log.total();
    Ok(RunResult {
        best_k,
        best_cost,
        sweeps,
        final_run,
        metrics,
        snapshots: runner.snapshots,
        total_mass: sc.total_mass,
        message_log: runner.log,
    })
}

/// Builds the scenario from its config and runs it.
pub fn run_coverage(config: &ScenarioConfig) -> Result<RunResult> {
    run_scenario(&Scenario::build(config.clone())?)
}
