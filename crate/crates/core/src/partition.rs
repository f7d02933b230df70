//! Sectorial partition of the circle domain: angular marginal density, sector
//! workloads, phase balancing, obstacle-bypassing bars and the cycle Laplacian.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;

use crate::conformal::MappedMesh;
use crate::error::{Error, Result};
use crate::geometry::{arc_sweep, line_circle_intersect, Circle, Complex2};
use crate::metric::{density_at, image_mass, segment_clearance};

pub const ANGULAR_BINS: usize = 1024;
pub const RADIAL_SAMPLES: usize = 64;
/// Relative drift between tabulated and face-summed mass that triggers refinement.
pub const MASS_TOLERANCE: f64 = 0.01;

/// `∫₀¹ ρ̂(r, θ) r dr` by `q`-point midpoint quadrature.
pub fn marginal_density(mm: &MappedMesh, rho_hat: &[f64], theta: f64, q: usize) -> f64 {
    assert!(q >= 2, "radial quadrature needs at least two points");
    let dir = Complex2::from_polar(1.0, theta);
    let h = 1.0 / q as f64;
    (0..q)
        .map(|j| {
            let r = (j as f64 + 0.5) * h;
            density_at(mm, rho_hat, dir * r) * r
        })
        .sum::<f64>()
        * h
}

/// The marginal density tabulated at bin centres, integrated as a periodic
/// piecewise-linear function.
#[derive(Debug, Clone)]
pub struct MarginalTable {
    omega: Vec<f64>,
    /// `cum[j]` is the integral from 0 to the start of bin `j`.
    cum: Vec<f64>,
    pub radial: usize,
}

impl MarginalTable {
    pub fn from_values(omega: Vec<f64>, radial: usize) -> MarginalTable {
        let n = omega.len();
        let h = TAU / n as f64;
        // bin j spans [jh, (j+1)h]; the linear interpolant through centres is
        // integrated in two halves around each centre
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for j in 0..n {
            let prev = omega[(j + n - 1) % n];
            let next = omega[(j + 1) % n];
            let w = omega[j];
            let left = 0.5 * h * (0.75 * w + 0.25 * prev);
            let right = 0.5 * h * (0.75 * w + 0.25 * next);
            cum.push(cum[j] + left + right);
        }
        MarginalTable { omega, cum, radial }
    }

    pub fn build(mm: &MappedMesh, rho_hat: &[f64], bins: usize, radial: usize) -> MarginalTable {
        let omega = (0..bins)
            .map(|j| marginal_density(mm, rho_hat, (j as f64 + 0.5) * TAU / bins as f64, radial))
            .collect();
        Self::from_values(omega, radial)
    }

    /// Builds at the default resolution and doubles both resolutions (at
    /// most three times) while the table total and the face-summed mass
    /// disagree by more than [`MASS_TOLERANCE`].
    pub fn build_checked(mm: &MappedMesh, rho_hat: &[f64]) -> MarginalTable {
        let target = image_mass(mm, rho_hat);
        let (mut bins, mut radial) = (ANGULAR_BINS, RADIAL_SAMPLES);
        let mut t = Self::build(mm, rho_hat, bins, radial);
        for _ in 0..3 {
            if (t.total() - target).abs() <= MASS_TOLERANCE * target.abs() {
                break;
            }
            bins *= 2;
            radial *= 2;
            t = Self::build(mm, rho_hat, bins, radial);
        }
        t
    }

    pub fn bins(&self) -> usize {
        self.omega.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.omega
    }

    pub fn total(&self) -> f64 {
        self.cum[self.omega.len()]
    }

    pub fn floor(&self) -> f64 {
        self.omega.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup(&self) -> f64 {
        self.omega.iter().copied().fold(0.0, f64::max)
    }

    /// Interpolated `ω̂(θ)`.
    pub fn at(&self, theta: f64) -> f64 {
        let n = self.omega.len();
        let x = theta.rem_euclid(TAU) / TAU * n as f64 - 0.5;
        let j = x.floor();
        let t = x - j;
        let j0 = (j as i64).rem_euclid(n as i64) as usize;
        let j1 = (j0 + 1) % n;
        self.omega[j0] * (1.0 - t) + self.omega[j1] * t
    }

    /// Integral from 0 to `theta ∈ [0, 2π]`.
    fn primitive(&self, theta: f64) -> f64 {
        let n = self.omega.len();
        let h = TAU / n as f64;
        let x = (theta / h).clamp(0.0, n as f64);
        let j = (x.floor() as usize).min(n - 1);
        let s = x - j as f64;
        let w = self.omega[j];
        let prev = self.omega[(j + n - 1) % n];
        let next = self.omega[(j + 1) % n];
        // value at local coordinate u ∈ [0, 1] of the bin
        let val = |u: f64| {
            if u < 0.5 {
                prev + (w - prev) * (u + 0.5)
            } else {
                w + (next - w) * (u - 0.5)
            }
        };
        let part = if s <= 0.5 {
            0.5 * s * h * (val(0.0) + val(s))
        } else {
            0.5 * 0.5 * h * (val(0.0) + w) + 0.5 * (s - 0.5) * h * (w + val(s))
        };
        self.cum[j] + part
    }

    /// `∫ ω̂` from `start` counterclockwise over `width ∈ [0, 2π]`.
    pub fn mass_over(&self, start: f64, width: f64) -> f64 {
        let a = start.rem_euclid(TAU);
        let b = a + width;
        if b <= TAU {
            self.primitive(b) - self.primitive(a)
        } else {
            self.total() - self.primitive(a) + self.primitive(b - TAU)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionState {
    pub phases: Vec<f64>,
    pub k_psi: f64,
    pub beta: f64,
}

impl PartitionState {
    pub fn new(phases: Vec<f64>, k_psi: f64, beta: f64) -> Result<PartitionState> {
        if !(k_psi > 0.0) || !(beta > 0.0) {
            return Err(Error::Config("partition needs k_psi > 0 and beta > 0".into()));
        }
        let s = PartitionState { phases, k_psi, beta };
        if !cyclically_ordered(&s.phases) {
            return Err(Error::StepRejected);
        }
        Ok(s)
    }

    /// Evenly spaced phases `2π(i−1)/N`.
    pub fn uniform(n: usize, k_psi: f64, beta: f64) -> Result<PartitionState> {
        Self::new((0..n).map(|i| TAU * i as f64 / n as f64).collect(), k_psi, beta)
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    /// Angular width of sector `i`, from bar `i` to bar `i+1`.
    pub fn width(&self, i: usize) -> f64 {
        sector_widths(&self.phases)[i]
    }
}

/// Angular widths from each phase to the next, cyclically.
pub fn sector_widths(phases: &[f64]) -> Vec<f64> {
    let n = phases.len();
    if n == 1 {
        return vec![TAU];
    }
    (0..n).map(|i| (phases[(i + 1) % n] - phases[i]).rem_euclid(TAU)).collect()
}

/// Phases in `[0, 2π)` whose successive counterclockwise gaps are positive
/// and wind exactly once.
pub fn cyclically_ordered(phases: &[f64]) -> bool {
    if phases.is_empty() || phases.iter().any(|p| !(0.0..TAU).contains(p)) {
        return false;
    }
    let w = sector_widths(phases);
    w.iter().all(|&g| g > 0.0) && (w.iter().sum::<f64>() - TAU).abs() < 1e-9
}

/// Workload of sector `i` under the nominal straight bars.
pub fn sector_workload(state: &PartitionState, i: usize, table: &MarginalTable) -> f64 {
    table.mass_over(state.phases[i], state.width(i))
}

pub fn nominal_workloads(state: &PartitionState, table: &MarginalTable) -> Vec<f64> {
    (0..state.len()).map(|i| sector_workload(state, i, table)).collect()
}

/// One explicit Euler step of `ψ̇_i = k_ψ(m_i − m_{i−1})`. A `pinned` phase
/// keeps its value.
pub fn partition_step(
    state: &PartitionState,
    workloads: &[f64],
    dt: f64,
    pinned: Option<usize>,
) -> Result<Vec<f64>> {
    assert!(dt > 0.0, "time step must be positive");
    let n = state.len();
    let rates: Vec<f64> = (0..n)
        .map(|i| {
            if Some(i) == pinned {
                0.0
            } else {
                state.k_psi * (workloads[i] - workloads[(i + n - 1) % n])
            }
        })
        .collect();
    // every gap must stay positive without a phase passing its neighbour
    if n >= 2 {
        let old = sector_widths(&state.phases);
        if (0..n).any(|i| !(old[i] + dt * (rates[(i + 1) % n] - rates[i]) > 0.0)) {
            return Err(Error::StepRejected);
        }
    }
    let next: Vec<f64> = state
        .phases
        .iter()
        .zip(&rates)
        .map(|(p, r)| {
            let x = (p + dt * r).rem_euclid(TAU);
            if x >= TAU {
                0.0
            } else {
                x
            }
        })
        .collect();
    if !cyclically_ordered(&next) {
        return Err(Error::StepRejected);
    }
    Ok(next)
}

/// Detour of a bar around one obstacle along its buffer circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bypass {
    pub obstacle: usize,
    pub buffer: Circle,
    /// Ray parameters where the bar meets the buffer circle.
    pub xi_in: f64,
    pub xi_out: f64,
    pub psi_in: f64,
    /// Signed sweep from `psi_in`.
    pub sweep: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeBar {
    /// 1-based position of the bar in the cyclic order.
    pub index: usize,
    pub angle: f64,
    pub points: Vec<Complex2>,
    pub bypasses: Vec<Bypass>,
}

/// Radius of the buffer circle of obstacle radius `r` for the bar at 1-based position `index`.
pub fn buffer_radius(r: f64, index: usize, beta: f64) -> f64 {
    r * (1.0 + index as f64 * beta)
}

fn arc_samples(sweep: f64, index: usize, beta: f64) -> usize {
    // chords of angle Δ on the buffer keep clear of the obstacle while
    // Δ² < 8iβ/(1+iβ); a quarter of that gives margin
    let x = index as f64 * beta / (1.0 + index as f64 * beta);
    let step = (2.0 * x).sqrt().min(0.05);
    ((sweep.abs() / step).ceil() as usize + 1).clamp(3, 4000)
}

/// The bar at angle `psi`: the unit ray with every stretch inside a buffer
/// circle replaced by the arc of that circle on the counterclockwise side.
pub fn build_safe_bar(index: usize, psi: f64, obstacles: &[Circle], beta: f64) -> Result<SafeBar> {
    assert!(index >= 1, "bar positions are 1-based");
    assert!(beta > 0.0, "sequence factor must be positive");
    let buffers: Vec<Circle> = obstacles
        .iter()
        .map(|c| Circle::new(c.center, buffer_radius(c.radius, index, beta)))
        .collect();
    for (k, b) in buffers.iter().enumerate() {
        if b.center.norm() + b.radius >= 1.0 {
            return Err(Error::TopologyViolation(format!("buffer of obstacle {k} for bar {index} leaves the disk")));
        }
        if b.center.norm() <= b.radius {
            return Err(Error::TopologyViolation(format!("buffer of obstacle {k} for bar {index} covers the origin")));
        }
        for (l, o) in buffers.iter().enumerate().skip(k + 1) {
            if (b.center - o.center).norm() <= b.radius + o.radius {
                return Err(Error::TopologyViolation(format!("buffers of obstacles {k} and {l} overlap for bar {index}")));
            }
        }
    }
    let dir = Complex2::from_polar(1.0, psi);
    let mut hits: Vec<Bypass> = Vec::new();
    for (k, b) in buffers.iter().enumerate() {
        if let Some((lo, hi)) = line_circle_intersect(dir, b) {
            if hi - lo <= 1e-12 {
                continue;
            }
            let p_in = dir * lo;
            let p_out = dir * hi;
            let psi_in = (p_in - b.center).im.atan2((p_in - b.center).re);
            let psi_out = (p_out - b.center).im.atan2((p_out - b.center).re);
            // always pass on the counterclockwise side of the ray, so a bar
            // with a larger buffer never swings back over an earlier bar
            let mut sweep = crate::geometry::shorter_sweep(psi_in, psi_out);
            let mid = b.point_at(psi_in + 0.5 * sweep);
            if dir.re * mid.im - dir.im * mid.re <= 0.0 {
                sweep -= sweep.signum() * TAU;
            }
            hits.push(Bypass {
                obstacle: k,
                buffer: *b,
                xi_in: lo,
                xi_out: hi,
                psi_in,
                sweep,
            });
        }
    }
    hits.sort_by(|a, b| a.xi_in.total_cmp(&b.xi_in));
    let mut points = vec![Complex2::new(0.0, 0.0)];
    for h in &hits {
        let mut arc = arc_sweep(&h.buffer, h.psi_in, h.sweep, arc_samples(h.sweep, index, beta));
        // pin the ends onto the ray exactly
        let last = arc.len() - 1;
        arc[0] = dir * h.xi_in;
        arc[last] = dir * h.xi_out;
        points.extend(arc);
    }
    points.push(dir);
    Ok(SafeBar {
        index,
        angle: psi,
        points,
        bypasses: hits,
    })
}

/// Direction from the origin farthest in angle from every buffer of the
/// widest bar. `None` when every direction meets a buffer.
pub fn numbering_cut(obstacles: &[Circle], n: usize, beta: f64) -> Option<f64> {
    let mut spans = Vec::with_capacity(obstacles.len());
    for c in obstacles {
        let d = c.center.norm();
        let r = buffer_radius(c.radius, n, beta);
        if d <= r {
            return None;
        }
        let half = (r / d).asin();
        let start = (c.center.im.atan2(c.center.re) - half).rem_euclid(TAU);
        spans.push((start, 2.0 * half));
    }
    if spans.is_empty() {
        return Some(0.0);
    }
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    // merge, then look at the gaps between merged spans, the wrap included
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (start, width) in spans {
        match merged.last_mut() {
            Some(m) if start <= m.0 + m.1 => m.1 = m.1.max(start + width - m.0),
            _ => merged.push((start, width)),
        }
    }
    let first = merged[0];
    let last = *merged.last().expect("non-empty");
    if last.0 + last.1 >= first.0 + TAU {
        if merged.len() == 1 {
            return None;
        }
        let end = (first.0 + first.1).max(last.0 + last.1 - TAU);
        merged[0] = (last.0 - TAU, end - (last.0 - TAU));
        merged.pop();
    }
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..merged.len() {
        let end = merged[i].0 + merged[i].1;
        let next = if i + 1 < merged.len() { merged[i + 1].0 } else { merged[0].0 + TAU };
        if next - end > best.0 {
            best = (next - end, (0.5 * (end + next)).rem_euclid(TAU));
        }
    }
    (best.0 > 0.0).then_some(best.1)
}

/// Bars for every phase, numbered 1..N counterclockwise from
/// [`numbering_cut`]. No obstacle then lies across the jump from bar N back
/// to bar 1, which is the one ordering the counterclockwise bypasses cannot
/// keep apart. Without a free direction, bar `i` (0-based) is number `i + 1`.
pub fn build_safe_bars(state: &PartitionState, obstacles: &[Circle]) -> Result<Vec<SafeBar>> {
    let n = state.len();
    let mut number: Vec<usize> = (1..=n).collect();
    if let Some(cut) = numbering_cut(obstacles, n, state.beta) {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            (state.phases[a] - cut).rem_euclid(TAU).total_cmp(&(state.phases[b] - cut).rem_euclid(TAU))
        });
        for (rank, &slot) in order.iter().enumerate() {
            number[slot] = rank + 1;
        }
    }
    state
        .phases
        .iter()
        .zip(number)
        .map(|(&p, i)| build_safe_bar(i, p, obstacles, state.beta))
        .collect()
}

/// Density mass between a bypass arc and the straight ray, outside the obstacle.
pub fn sliver_mass(mm: &MappedMesh, rho_hat: &[f64], angle: f64, bypass: &Bypass, obstacle: &Circle) -> f64 {
    const ANG: usize = 64;
    const RAD: usize = 16;
    let dir = Complex2::from_polar(1.0, angle);
    let normal = Complex2::new(-dir.im, dir.re);
    let dot = |a: Complex2, b: Complex2| a.re * b.re + a.im * b.im;
    let side = 1.0;
    let o = bypass.buffer.center;
    let big = bypass.buffer.radius;
    let h = dot(normal, o);
    let dphi = bypass.sweep / ANG as f64;
    let mut total = 0.0;
    for a in 0..ANG {
        let phi = bypass.psi_in + (a as f64 + 0.5) * dphi;
        let u = Complex2::from_polar(1.0, phi);
        let nu = dot(normal, u);
        // keep side·(h + s·nu) > 0 within [r, R]
        let (mut lo, mut hi) = (obstacle.radius, big);
        if side * nu > 0.0 {
            lo = lo.max(-h / nu);
        } else if side * nu < 0.0 {
            hi = hi.min(-h / nu);
        } else if side * h <= 0.0 {
            continue;
        }
        if lo >= hi {
            continue;
        }
        let ds = (hi - lo) / RAD as f64;
        for j in 0..RAD {
            let s = lo + (j as f64 + 0.5) * ds;
            total += density_at(mm, rho_hat, o + u * s) * s * ds;
        }
    }
    total * dphi.abs()
}

/// Workloads of the sectors bounded by the safe bars: each sliver leaves the
/// sector ahead of its bar for the one behind it.
pub fn bar_workloads(
    state: &PartitionState,
    table: &MarginalTable,
    bars: &[SafeBar],
    mm: &MappedMesh,
    rho_hat: &[f64],
) -> Vec<f64> {
    let n = state.len();
    let mut m = nominal_workloads(state, table);
    for (j, bar) in bars.iter().enumerate() {
        let before = (j + n - 1) % n;
        for b in &bar.bypasses {
            let s = sliver_mass(mm, rho_hat, bar.angle, b, &mm.obstacles[b.obstacle]);
            m[j] -= s;
            m[before] += s;
        }
    }
    m
}

/// `β N ‖ρ̂‖∞ Σ_k π r̂_k²`, the worst-case workload displacement caused by the bypasses.
pub fn workload_error_bound(beta: f64, n: usize, obstacles: &[Circle], rho_sup: f64) -> f64 {
    let c_g: f64 = obstacles.iter().map(|c| c.radius * PI * c.radius).sum();
    beta * n as f64 * c_g * rho_sup
}

/// Weighted cycle Laplacian with `ω[i]` the marginal density at bar `i`:
/// the edge between sectors `i−1` and `i` carries `ω[i]`, so the diagonal is
/// `ω[i] + ω[i+1]`. Returns the matrix and its second-smallest eigenvalue.
pub fn weighted_laplacian(omega: &[f64]) -> (DMatrix<f64>, f64) {
    let n = omega.len();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let prev = (i + n - 1) % n;
        if prev == i {
            continue;
        }
        // edge prev–i, weight ω at the bar between them
        l[(i, i)] += omega[i];
        l[(prev, prev)] += omega[i];
        l[(i, prev)] -= omega[i];
        l[(prev, i)] -= omega[i];
    }
    let mut eig: Vec<f64> = l.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let l2 = if n >= 2 { eig[1] } else { 0.0 };
    (l, l2)
}

/// Whether two segments share a point farther than `1e-12` from the origin.
fn segments_meet_away_from_origin(a: Complex2, b: Complex2, c: Complex2, d: Complex2) -> bool {
    let cr = |u: Complex2, v: Complex2| u.re * v.im - u.im * v.re;
    let r = b - a;
    let s = d - c;
    let den = cr(r, s);
    let qp = c - a;
    if den.abs() < 1e-300 {
        // parallel: overlap only if collinear
        if cr(qp, r).abs() > 1e-15 {
            return false;
        }
        let rr = r.norm_sqr();
        if rr == 0.0 {
            return false;
        }
        let t0 = (qp.re * r.re + qp.im * r.im) / rr;
        let t1 = t0 + (s.re * r.re + s.im * r.im) / rr;
        let (lo, hi) = (t0.min(t1).max(0.0), t0.max(t1).min(1.0));
        if lo > hi {
            return false;
        }
        return (a + r * lo).norm() > 1e-12 || (a + r * hi).norm() > 1e-12;
    }
    let t = cr(qp, s) / den;
    let u = cr(qp, r) / den;
    if !(-1e-12..=1.0 + 1e-12).contains(&t) || !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return false;
    }
    (a + r * t).norm() > 1e-12
}

/// Topological checks over a set of bars.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BarCheck {
    /// Pairs `(bar, obstacle)` whose polyline touches the obstacle disk.
    pub obstacle_hits: Vec<(usize, usize)>,
    /// Pairs of bars that meet away from the origin.
    pub crossings: Vec<(usize, usize)>,
    /// Largest deviation of same-obstacle buffer spacing from `r̂β|i−j|`.
    pub spacing_error: f64,
}

impl BarCheck {
    pub fn violations(&self) -> usize {
        self.obstacle_hits.len() + self.crossings.len()
    }
}

/// Segment-level clearance of every bar against the obstacles and the other bars.
pub fn check_bars(bars: &[SafeBar], obstacles: &[Circle], beta: f64) -> BarCheck {
    let mut out = BarCheck::default();
    for (i, bar) in bars.iter().enumerate() {
        for (k, c) in obstacles.iter().enumerate() {
            if bar.points.windows(2).any(|w| segment_clearance(w[0], w[1], c) <= 0.0) {
                out.obstacle_hits.push((i, k));
            }
        }
    }
    let bbox = |pts: &[Complex2]| {
        pts.iter().fold([f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY], |b, p| {
            [b[0].min(p.re), b[1].min(p.im), b[2].max(p.re), b[3].max(p.im)]
        })
    };
    for i in 0..bars.len() {
        for j in i + 1..bars.len() {
            let mut met = false;
            'outer: for s in bars[i].points.windows(2) {
                let bs = bbox(s);
                for t in bars[j].points.windows(2) {
                    let bt = bbox(t);
                    if bs[2] < bt[0] || bt[2] < bs[0] || bs[3] < bt[1] || bt[3] < bs[1] {
                        continue;
                    }
                    if segments_meet_away_from_origin(s[0], s[1], t[0], t[1]) {
                        met = true;
                        break 'outer;
                    }
                }
            }
            if met {
                out.crossings.push((i, j));
            }
            for a in &bars[i].bypasses {
                for _ in bars[j].bypasses.iter().filter(|b| b.obstacle == a.obstacle) {
                    let r = obstacles[a.obstacle].radius;
                    let want = r * beta * (bars[i].index as f64 - bars[j].index as f64).abs();
                    // measured on the polylines: arc points are the closest to the centre
                    let closest = |bar: &SafeBar| {
                        bar.points.iter().map(|p| (p - a.buffer.center).norm()).fold(f64::INFINITY, f64::min)
                    };
                    let got = (closest(&bars[i]) - closest(&bars[j])).abs();
                    out.spacing_error = out.spacing_error.max((got - want).abs());
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::gen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_identity(spacing: f64) -> MappedMesh {
        let m = gen::flat_disk(1.0, spacing).unwrap();
        let img = m.vertices().iter().map(|p| Complex2::new(p.x, p.y)).collect();
        MappedMesh::new(m, img).unwrap()
    }

    fn centred(r_in: f64) -> MappedMesh {
        let m = gen::centred_annulus(r_in, 1.0, 24, 160);
        let img = m.vertices().iter().map(|p| Complex2::new(p.x, p.y)).collect();
        MappedMesh::new(m, img).unwrap()
    }

    #[test]
    fn marginal_density_examples() {
        let mm = flat_identity(0.05);
        let ones = vec![1.0; mm.mesh.n_vertices()];
        let zeros = vec![0.0; mm.mesh.n_vertices()];
        assert_eq!(marginal_density(&mm, &zeros, 0.3, 64), 0.0);
        let w = marginal_density(&mm, &ones, 0.3, 64);
        assert!((w - 0.5).abs() < 1e-3, "{w}");
        let mm = centred(0.3);
        let ones = vec![1.0; mm.mesh.n_vertices()];
        for t in [0.0, 1.0, 2.5] {
            let w = marginal_density(&mm, &ones, t, 64);
            assert!((w - 0.455).abs() < 2e-3, "{w}");
        }
    }

    #[test]
    fn table_integrates_linear_interpolant_exactly() {
        let n = 16;
        let vals: Vec<f64> = (0..n).map(|j| 1.0 + (j as f64 * 0.7).sin().abs()).collect();
        let t = MarginalTable::from_values(vals.clone(), 2);
        // fine trapezoid on the interpolant
        let fine = 20000;
        let h = TAU / fine as f64;
        let mut acc = 0.0;
        let (a, w) = (0.3, 4.0);
        for k in 0..fine {
            let x0 = a + w * k as f64 / fine as f64;
            let x1 = a + w * (k + 1) as f64 / fine as f64;
            acc += 0.5 * (t.at(x0) + t.at(x1)) * (x1 - x0);
        }
        let _ = h;
        assert!((t.mass_over(a, w) - acc).abs() < 1e-8);
        assert!((t.mass_over(5.0, TAU) - t.total()).abs() < 1e-12);
        assert_eq!(t.mass_over(1.0, 0.0), 0.0);
        let mean: f64 = vals.iter().sum::<f64>() / n as f64;
        assert!((t.total() - mean * TAU).abs() < 1e-12);
    }

    #[test]
    fn uniform_quarters_and_face_sum_oracle() {
        let mm = flat_identity(0.05);
        let ones = vec![1.0; mm.mesh.n_vertices()];
        let t = MarginalTable::build_checked(&mm, &ones);
        let s = PartitionState::uniform(4, 0.2, 0.005).unwrap();
        let m = nominal_workloads(&s, &t);
        let total: f64 = m.iter().sum();
        for x in &m {
            assert!((x - total / 4.0).abs() < 1e-3, "{m:?}");
        }
        // face sum of the image triangulation
        let mut faces = 0.0;
        for &[a, b, c] in mm.mesh.faces() {
            let (p, q, r) = (mm.image[a], mm.image[b], mm.image[c]);
            faces += 0.5 * ((q - p).re * (r - p).im - (q - p).im * (r - p).re);
        }
        assert!((total - faces).abs() < 0.01 * faces, "{total} {faces}");
    }

    #[test]
    fn step_examples() {
        let s = PartitionState::new(vec![0.5, 2.0, 4.0], 0.2, 0.005).unwrap();
        assert_eq!(partition_step(&s, &[1.0, 1.0, 1.0], 0.1, None).unwrap(), s.phases);
        let s = PartitionState::new(vec![1.0, 4.0], 0.2, 0.005).unwrap();
        let next = partition_step(&s, &[2.0, 1.0], 0.1, None).unwrap();
        assert!((next[0] - 1.02).abs() < 1e-12);
        assert!((next[1] - 3.98).abs() < 1e-12);
        // rates telescope
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..3.0)).collect();
        let rates: f64 = (0..7).map(|i| m[i] - m[(i + 6) % 7]).sum();
        assert!(rates.abs() < 1e-12);
        // overshooting a neighbour is refused
        let s = PartitionState::new(vec![1.0, 1.01], 0.2, 0.005).unwrap();
        assert!(matches!(partition_step(&s, &[5.0, 0.0], 1.0, None), Err(Error::StepRejected)));
        // pinned phase holds
        let s = PartitionState::new(vec![1.0, 4.0], 0.2, 0.005).unwrap();
        assert_eq!(partition_step(&s, &[2.0, 1.0], 0.1, Some(0)).unwrap()[0], 1.0);
    }

    #[test]
    fn wrapping_phase_keeps_cyclic_order() {
        let s = PartitionState::new(vec![0.001, 3.0], 0.2, 0.005).unwrap();
        let next = partition_step(&s, &[0.0, 1.0], 0.1, None).unwrap();
        assert!(next[0] > 6.0);
        assert!(cyclically_ordered(&next));
    }

    #[test]
    fn numbering_cut_avoids_every_buffer() {
        let obs = [
            Circle::new(Complex2::from_polar(0.6, 0.0), 0.13),
            Circle::new(Complex2::from_polar(0.6, 2.0), 0.13),
        ];
        let cut = numbering_cut(&obs, 6, 0.005).unwrap();
        // the larger gap runs from about 2.22 to 6.06
        assert!((cut - 4.14).abs() < 0.01, "{cut}");
        // a span across angle 0 is merged with the wrap
        let wrap = [Circle::new(Complex2::from_polar(0.6, 6.2), 0.13)];
        let cut = numbering_cut(&wrap, 6, 0.005).unwrap();
        assert!((cut - (6.2 - PI)).abs() < 1e-9, "{cut}");
        // the last span runs past 2π into the first one
        let joined = [0.3, 3.0, 6.2].map(|t| Circle::new(Complex2::from_polar(0.6, t), 0.13));
        let cut = numbering_cut(&joined, 6, 0.005).unwrap();
        assert!((cut - (3.0 + 6.2) / 2.0).abs() < 1e-9, "{cut}");
        assert_eq!(numbering_cut(&[Circle::new(Complex2::new(0.05, 0.0), 0.1)], 2, 0.005), None);
        let ring: Vec<Circle> = (0..8).map(|k| Circle::new(Complex2::from_polar(0.6, k as f64 * TAU / 8.0), 0.25)).collect();
        assert_eq!(numbering_cut(&ring, 2, 0.005), None);
    }

    #[test]
    fn bars_straddling_the_first_phase_do_not_cross() {
        let obs = [Circle::new(Complex2::new(0.6, 0.0), 0.135)];
        let s = PartitionState::new(vec![0.0, 1.2, 3.2, 4.8, 6.11, 6.275], 0.2, 0.001).unwrap();
        let bars = build_safe_bars(&s, &obs).unwrap();
        let numbers: Vec<usize> = bars.iter().map(|b| b.index).collect();
        assert_eq!(numbers, vec![5, 6, 1, 2, 3, 4]);
        let check = check_bars(&bars, &obs, 0.001);
        assert_eq!(check.violations(), 0, "{check:?}");
        assert!(check.spacing_error < 1e-9);
    }

    #[test]
    fn bar_through_centre_of_obstacle() {
        let obs = [Circle::new(Complex2::new(0.5, 0.0), 0.1)];
        let bar = build_safe_bar(2, 0.0, &obs, 0.005).unwrap();
        let b = bar.bypasses[0];
        assert!((b.buffer.radius - 0.101).abs() < 1e-12);
        assert!((b.xi_in - 0.399).abs() < 1e-12 && (b.xi_out - 0.601).abs() < 1e-12);
        assert_eq!(bar.points[0], Complex2::new(0.0, 0.0));
        assert_eq!(*bar.points.last().unwrap(), Complex2::new(1.0, 0.0));
        let check = check_bars(&[bar], &obs, 0.005);
        assert_eq!(check.violations(), 0);
        let miss = build_safe_bar(1, 2.0, &obs, 0.005).unwrap();
        assert_eq!(miss.points.len(), 2);
    }

    #[test]
    fn same_obstacle_bypasses_are_spaced_by_beta() {
        let obs = [Circle::new(Complex2::new(0.5, 0.05), 0.1)];
        let beta = 0.005;
        let a = build_safe_bar(1, 0.0, &obs, beta).unwrap();
        let b = build_safe_bar(2, 0.02, &obs, beta).unwrap();
        let gap = (a.bypasses[0].buffer.radius - b.bypasses[0].buffer.radius).abs();
        assert!((gap - 0.1 * beta).abs() < 1e-15);
        let check = check_bars(&[a, b], &obs, beta);
        assert!(check.spacing_error < 1e-9);
        assert_eq!(check.violations(), 0, "{check:?}");
    }

    #[test]
    fn overlapping_buffers_are_rejected() {
        let obs = [
            Circle::new(Complex2::new(0.5, 0.0), 0.1),
            Circle::new(Complex2::new(0.5, 0.2005), 0.1),
        ];
        assert!(matches!(build_safe_bar(1, 0.0, &obs, 0.01), Err(Error::TopologyViolation(_))));
        let edge = [Circle::new(Complex2::new(0.85, 0.0), 0.148)];
        assert!(matches!(build_safe_bar(2, 0.0, &edge, 0.01), Err(Error::TopologyViolation(_))));
    }

    #[test]
    fn bound_is_linear_and_dominates_sliver() {
        let obs = [Circle::new(Complex2::new(0.5, 0.0), 0.1)];
        assert_eq!(workload_error_bound(0.0, 6, &obs, 2.0), 0.0);
        let b1 = workload_error_bound(0.005, 6, &obs, 2.0);
        assert_eq!(workload_error_bound(0.01, 6, &obs, 2.0), 2.0 * b1);

        let m = gen::flat_disk(1.0, 0.02).unwrap();
        let img = m.vertices().iter().map(|p| Complex2::new(p.x, p.y)).collect();
        let mm = MappedMesh::new(m, img).unwrap();
        let ones = vec![1.0; mm.mesh.n_vertices()];
        for (i, psi, beta) in [(3usize, 0.0, 0.01), (6, 0.05, 0.005), (1, -0.08, 0.02)] {
            let bar = build_safe_bar(i, psi, &obs, beta).unwrap();
            let by = bar.bypasses[0];
            let s = sliver_mass(&mm, &ones, psi, &by, &obs[0]);
            // part of the buffer disk on the counterclockwise side of the ray,
            // minus the same part of the obstacle
            let seg = |r: f64, h: f64| {
                if h >= r {
                    0.0
                } else {
                    r * r * (h / r).acos() - h * (r * r - h * h).sqrt()
                }
            };
            let dir = Complex2::from_polar(1.0, psi);
            let d = dir.re * obs[0].center.im - dir.im * obs[0].center.re;
            let side = |r: f64| if d <= 0.0 { seg(r, -d) } else { PI * r * r - seg(r, d) };
            let want = side(by.buffer.radius) - side(0.1);
            assert!((s - want).abs() < 0.03 * want, "{s} vs {want}");
            assert!(s <= workload_error_bound(beta, 6, &obs, 1.0));
        }
    }

    #[test]
    fn laplacian_spectrum() {
        let (_, l3) = weighted_laplacian(&[1.0; 3]);
        assert!((l3 - 3.0).abs() < 1e-12);
        let (_, l4) = weighted_laplacian(&[1.0; 4]);
        assert!((l4 - 2.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 3..=8 {
            for _ in 0..100 {
                let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..3.0)).collect();
                let (l, l2) = weighted_laplacian(&w);
                assert_eq!(l, l.transpose());
                let ones = DMatrix::from_element(n, 1, 1.0);
                assert!((&l * ones).norm() < 1e-12);
                let floor = w.iter().copied().fold(f64::INFINITY, f64::min);
                assert!(l2 >= floor * 2.0 * (1.0 - (TAU / n as f64).cos()) - 1e-9);
            }
        }
    }
}
