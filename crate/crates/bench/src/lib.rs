//! Shared fixtures for the pipeline benchmarks.

use std::f64::consts::TAU;

use porecov_core::sim::{MeshSource, Scenario, ScenarioConfig};
use porecov_core::{AgentState, Complex2};

pub fn three_hole_config() -> ScenarioConfig {
    ScenarioConfig {
        mesh: MeshSource::Builtin { name: "three_hole".into() },
        ..ScenarioConfig::default()
    }
}

/// Evenly spaced phases and one agent inside each sector, clear of obstacles.
pub fn spread_agents(sc: &Scenario, n: usize) -> (Vec<f64>, Vec<AgentState>) {
    let phases: Vec<f64> = (0..n).map(|i| TAU * i as f64 / n as f64).collect();
    let agents = (0..n)
        .map(|i| {
            let mid = phases[i] + TAU / (2 * n) as f64;
            let q = [0.3, 0.2, 0.85, 0.45]
                .iter()
                .map(|&r| Complex2::from_polar(r, mid))
                .find(|&q| sc.field.obstacle_clearance(q) > 0.05)
                .expect("free point in sector");
            AgentState::at_image(&sc.mapped, i, q).expect("agent on mesh")
        })
        .collect();
    (phases, agents)
}
