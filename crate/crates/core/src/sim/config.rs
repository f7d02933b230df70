//! Scenario configuration, read from TOML.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conformal::MapOptions;
use crate::error::{Error, Result};
use crate::mesh::gen::{self, SurfaceSpec};
use crate::mesh::io::read_mesh;
use crate::metric::{DensityField, DEFAULT_AGENT_RADIUS, DEFAULT_MU};
use crate::TriMesh;
use crate::control::DEFAULT_V_MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    /// `three_hole` or `six_hole`.
    Builtin { name: String },
    /// Mesh file, relative paths resolved against the config file.
    File { path: PathBuf },
    Generated { spec: SurfaceSpec },
}

impl MeshSource {
    pub fn load(&self) -> Result<TriMesh> {
        match self {
            MeshSource::Builtin { name } => gen::surface(&builtin_spec(name)?),
            MeshSource::File { path } => read_mesh(path),
            MeshSource::Generated { spec } => gen::surface(spec),
        }
    }
}

pub fn builtin_spec(name: &str) -> Result<SurfaceSpec> {
    match name {
        "three_hole" => Ok(gen::three_hole_spec()),
        "six_hole" => Ok(gen::six_hole_spec()),
        other => Err(Error::Config(format!("unknown builtin mesh {other:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensitySpec {
    /// `exp(sin²θ + cosθ) + 0.01r` over the source plane.
    ExpSinCos,
    Uniform,
    /// Per-vertex samples stored in the mesh file.
    MeshSamples,
}

impl DensitySpec {
    pub fn field(&self, mesh: &TriMesh) -> Result<DensityField> {
        Ok(match self {
            DensitySpec::ExpSinCos => DensityField::ExpSinCos,
            DensitySpec::Uniform => DensityField::Uniform,
            DensitySpec::MeshSamples => DensityField::Samples(
                mesh.samples()
                    .ok_or_else(|| Error::Config("mesh has no scalar samples".into()))?
                    .to_vec(),
            ),
        })
    }
}

/// Agents that stop working at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEvent {
    pub time: f64,
    pub agents: Vec<usize>,
}

impl FaultEvent {
    /// Parses `"t:id,id,..."`.
    pub fn parse(s: &str) -> Result<FaultEvent> {
        let bad = || Error::Config(format!("fault {s:?} is not of the form t:id,id"));
        let (t, ids) = s.split_once(':').ok_or_else(bad)?;
        let time = t.trim().parse().map_err(|_| bad())?;
        let agents = ids
            .split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<Vec<usize>>>()?;
        Ok(FaultEvent { time, agents })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Largest per-step workload change and agent speed counted as settled.
    pub convergence: f64,
    /// Consecutive settled steps that end a sweep run.
    pub window: usize,
    /// Workload error allowed when sizing the team.
    pub eps_max: f64,
    pub weld_tol: f64,
    pub closure_tol: f64,
    pub refine_iter: usize,
    /// Attempts at placing admissible generators.
    pub generator_tries: usize,
    /// Cap on the steps of the continued best run, counted from its start.
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let m = MapOptions::default();
        Tolerances {
            convergence: 1e-4,
            window: 10,
            eps_max: 0.05,
            weld_tol: m.weld_tol,
            closure_tol: m.closure_tol,
            refine_iter: m.refine_iter,
            generator_tries: 300,
            max_steps: 2000,
        }
    }
}

impl Tolerances {
    pub fn map_options(&self) -> MapOptions {
        MapOptions {
            weld_tol: self.weld_tol,
            closure_tol: self.closure_tol,
            refine_iter: self.refine_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub mesh: MeshSource,
    /// Saved conformal map of `mesh`; the map is rebuilt when absent.
    pub mapped: Option<PathBuf>,
    pub generators_per_obstacle: usize,
    /// Star-shape declaration per obstacle; missing entries are `false`.
    pub star_shaped: Vec<bool>,
    pub n_agents: usize,
    /// Number of anchor reference phases in the sweep.
    pub k_star: usize,
    /// Simulated time per sweep run.
    pub t_eps: f64,
    pub dt: f64,
    pub k_psi: f64,
    pub k_p: f64,
    pub beta: f64,
    pub mu: f64,
    pub agent_radius: f64,
    /// Largest agent speed in disk units per unit time.
    pub v_max: f64,
    pub density: DensitySpec,
    /// Transported mass after normalisation; `None` keeps the raw density.
    pub density_total: Option<f64>,
    /// Multiplier applied after normalisation.
    pub density_scale: f64,
    pub faults: Vec<FaultEvent>,
    /// Earliest end of the continued best run.
    pub mission_time: Option<f64>,
    pub seed: u64,
    pub tolerances: Tolerances,
    /// Steps between stored snapshots; 0 stores none.
    pub snapshot_every: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mesh: MeshSource::Builtin {
                name: "six_hole".into(),
            },
            mapped: None,
            generators_per_obstacle: 2,
            star_shaped: Vec::new(),
            n_agents: 6,
            k_star: 30,
            t_eps: 40.0,
            dt: 0.3,
            k_psi: 0.2,
            k_p: 0.12,
            beta: 0.005,
            mu: DEFAULT_MU,
            agent_radius: DEFAULT_AGENT_RADIUS,
            v_max: DEFAULT_V_MAX,
            density: DensitySpec::ExpSinCos,
            density_total: Some(TAU),
            density_scale: 1.0,
            faults: Vec::new(),
            mission_time: None,
            seed: 0,
            tolerances: Tolerances::default(),
            snapshot_every: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<ScenarioConfig> {
        let c: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<ScenarioConfig> {
        let mut c = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        if let MeshSource::File { path: p } = &mut c.mesh {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        if let Some(p) = &mut c.mapped {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_agents < 2 {
            return bad("n_agents must be at least 2");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if self.k_star < 1 {
            return bad("k_star must be at least 1");
        }
        if !(self.dt > 0.0) || !(self.t_eps > 0.0) {
            return bad("dt and t_eps must be positive");
        }
        if !(self.k_psi > 0.0) || !(self.k_p >= 0.0) || !(self.v_max > 0.0) {
            return bad("gains must be positive");
        }
        if !(self.mu > 0.0) || !(self.agent_radius >= 0.0) {
            return bad("mu must be positive and agent_radius non-negative");
        }
        if !(self.density_scale >= 0.0) || self.density_total.is_some_and(|t| !(t >= 0.0)) {
            return bad("density scale and total must be non-negative");
        }
        if self.tolerances.window == 0 {
            return bad("convergence window must be positive");
        }
        for f in &self.faults {
            if let Some(&a) = f.agents.iter().find(|&&a| a >= self.n_agents) {
                return Err(Error::Config(format!("fault names agent {a} of {}", self.n_agents)));
            }
        }
        Ok(())
    }

    pub fn steps_per_run(&self) -> usize {
        (self.t_eps / self.dt).round() as usize
    }

    pub fn star_flags(&self, obstacles: usize) -> Vec<bool> {
        (0..obstacles).map(|k| self.star_shaped.get(k).copied().unwrap_or(false)).collect()
    }
}
