//! Stability checks on workload traces and capacity limits.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

/// Returned by [`max_agents`] when neither limit binds.
pub const AGENT_CAP: usize = 1_000_000;

/// Circular distance between two angles.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Agent whose phase is closest to `2π(k−1)/K*`; ties go to the lower index.
pub fn select_anchor(phases: &[f64], k: usize, k_star: usize) -> usize {
    select_anchor_at(phases, reference_phase(k, k_star))
}

pub fn reference_phase(k: usize, k_star: usize) -> f64 {
    TAU * (k as f64 - 1.0) / k_star as f64
}

pub fn select_anchor_at(phases: &[f64], reference: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, &p) in phases.iter().enumerate() {
        let d = circular_distance(p, reference);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// `2(1 − cos(2π/N))`, the algebraic connectivity of the unit-weight cycle.
pub fn cycle_connectivity(n: usize) -> f64 {
    2.0 * (1.0 - (TAU / n as f64).cos())
}

/// `γ = k_ψ ω_floor 2(1 − cos(2π/N))`.
pub fn decay_rate(k_psi: f64, omega_floor: f64, n: usize) -> f64 {
    k_psi * omega_floor * cycle_connectivity(n)
}

/// `⌊min{ d_min / (2 r_max β), γ ε_max / (C_δ β) }⌋`, capped at [`AGENT_CAP`].
pub fn max_agents(r_max: f64, beta: f64, gamma: f64, c_delta: f64, eps_max: f64, d_min: f64) -> usize {
    let geometric = 0.5 * d_min / (r_max * beta);
    let stability = gamma * eps_max / (c_delta * beta);
    let n = geometric.min(stability);
    if !n.is_finite() || n >= AGENT_CAP as f64 {
        AGENT_CAP
    } else {
        n.floor().max(0.0) as usize
    }
}

/// Least-squares slope of `ln y` against `t` over positive samples.
pub fn log_slope(t: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, &y)| y > 0.0).map(|(&t, &y)| (t, y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum::<f64>() / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssReport {
    pub gamma: f64,
    /// `C_δ β / γ`.
    pub ultimate_bound: f64,
    /// Mean of the last tenth of the trace.
    pub steady_state: f64,
    /// Fitted slope of `ln‖e‖` over the decay phase.
    pub decay_slope: Option<f64>,
    /// End of the decay window used for the fit.
    pub decay_window: f64,
    /// Smallest `bound(t) − ‖e(t)‖`.
    pub margin: f64,
    /// Sample times where the envelope is exceeded.
    pub violations: Vec<f64>,
}

impl IssReport {
    /// Slope at least half the predicted rate.
    pub fn decay_ok(&self) -> bool {
        self.decay_slope.is_some_and(|s| s <= -0.5 * self.gamma)
    }
}

/// Checks `‖e(t)‖ ≤ ‖e(0)‖ e^{−γt} + C_δβ/γ` along a trace of `(t, ‖e‖)`.
/// The decay phase runs until the error first falls within twice its
/// steady-state value; the slope is fitted over its first half.
pub fn verify_iss(trace: &[(f64, f64)], beta: f64, omega_floor: f64, k_psi: f64, n: usize, c_delta: f64) -> IssReport {
    let gamma = decay_rate(k_psi, omega_floor, n);
    let ultimate_bound = if gamma > 0.0 { c_delta * beta / gamma } else { f64::INFINITY };
    if trace.is_empty() {
        return IssReport {
            gamma,
            ultimate_bound,
            steady_state: 0.0,
            decay_slope: None,
            decay_window: 0.0,
            margin: f64::INFINITY,
            violations: Vec::new(),
        };
    }
    let (t0, e0) = trace[0];
    let tail = (trace.len() / 10).max(1);
    let steady_state = trace[trace.len() - tail..].iter().map(|p| p.1).sum::<f64>() / tail as f64;
    let mut margin = f64::INFINITY;
    let mut violations = Vec::new();
    for &(t, e) in trace {
        let bound = e0 * (-gamma * (t - t0)).exp() + ultimate_bound;
        margin = margin.min(bound - e);
        if e > bound * (1.0 + 1e-9) {
            violations.push(t);
        }
    }
    let settle = trace
        .iter()
        .find(|p| p.1 <= 2.0 * steady_state)
        .map(|p| p.0)
        .unwrap_or(trace[trace.len() - 1].0);
    let decay_window = t0 + 0.5 * (settle - t0);
    let (ts, es): (Vec<f64>, Vec<f64>) = trace.iter().filter(|p| p.0 <= decay_window).cloned().unzip();
    IssReport {
        gamma,
        ultimate_bound,
        steady_state,
        decay_slope: log_slope(&ts, &es),
        decay_window,
        margin,
        violations,
    }
}

/// Total disk area `Σ π r²` of the obstacle circles.
pub fn obstacle_area(radii: impl IntoIterator<Item = f64>) -> f64 {
    radii.into_iter().map(|r| PI * r * r).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_examples() {
        assert_eq!(select_anchor(&[0.1, 2.0, 4.0], 1, 30), 0);
        assert_eq!(select_anchor_at(&[1.0, 2.0], 1.5), 0);
        assert_eq!(select_anchor(&[6.2, 3.0], 1, 4), 0);
        assert!((circular_distance(6.2, 0.0) - (TAU - 6.2)).abs() < 1e-15);
        assert_eq!(select_anchor_at(&[3.0, 6.2], 0.0), 1);
        assert_eq!(reference_phase(3, 4), PI);
    }

    #[test]
    fn capacity_examples() {
        // geometric term alone
        assert_eq!(max_agents(0.2, 0.005, 1.0, 1e-9, 1.0, 0.2), 100);
        assert_eq!(max_agents(0.2, 0.0, 1.0, 1.0, 1.0, 0.2), AGENT_CAP);
        assert_eq!(max_agents(0.2, 0.005, 0.1, 1.0, 0.05, 0.2), 1);
    }

    #[test]
    fn slope_of_exponential() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        assert!((log_slope(&t, &y).unwrap() + 0.7).abs() < 1e-12);
        assert!(log_slope(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn iss_envelope_on_synthetic_trace() {
        let gamma = decay_rate(0.2, 1.0, 6);
        assert!((gamma - 0.2).abs() < 1e-12);
        let floor = 1e-3;
        let trace: Vec<(f64, f64)> = (0..400)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, 0.5 * (-gamma * t).exp() + floor * (1.0 - (-gamma * t).exp()))
            })
            .collect();
        let r = verify_iss(&trace, 0.005, 1.0, 0.2, 6, floor * gamma / 0.005);
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        assert!(r.margin >= -1e-12);
        assert!(r.decay_ok());
        // β → 0 removes the disturbance term
        let r0 = verify_iss(&[(0.0, 1.0), (1.0, 0.9)], 0.0, 1.0, 0.2, 6, 1.0);
        assert_eq!(r0.ultimate_bound, 0.0);
        assert_eq!(r0.violations, vec![1.0]);
    }
}
