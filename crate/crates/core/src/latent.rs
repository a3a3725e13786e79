//! The annular latent process.
//!
//! Each cycle draws a heading `θ` uniformly, moves outward along the ray from
//! radius `δ` to 1 with `r(s) = √(δ² + (1−δ²)s)` and retraces the same ray
//! back. Because `r(s)² ` is affine in `s`, a uniform `s` yields a radius with
//! density `2r/(1−δ²)`, so the time occupancy of every cycle with a uniform
//! heading is exactly the uniform law on the annulus.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::energy::leg_moments;
use crate::error::{domain, Result};
use crate::rng::{stream, Rng};
use crate::trajectory::{Leg, Sample, Trajectory};
use crate::Point;

/// The annulus `δ ≤ ‖z‖ ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnulusDomain {
    pub delta: f64,
}

impl AnnulusDomain {
    pub fn new(delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self { delta })
    }

    pub fn area(&self) -> f64 {
        PI * (1.0 - self.delta * self.delta)
    }

    /// Value of the uniform density on the annulus.
    pub fn uniform_density(&self) -> f64 {
        1.0 / self.area()
    }

    pub fn contains(&self, p: Point) -> bool {
        let r = crate::norm(p);
        r >= self.delta && r <= 1.0
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(domain("delta", format!("must lie in (0, 1), got {delta}")))
    }
}

/// One outward-and-back excursion along a fixed heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCycle {
    pub theta: f64,
    pub delta: f64,
    /// Outward leg followed by the return leg (the outward leg reversed).
    pub points: Vec<Point>,
    /// Cycle parameter of each outward sample.
    pub s_grid: Vec<f64>,
}

impl LatentCycle {
    pub fn n_per_leg(&self) -> usize {
        self.s_grid.len()
    }

    pub fn outward(&self) -> &[Point] {
        &self.points[..self.n_per_leg()]
    }

    pub fn return_leg(&self) -> &[Point] {
        &self.points[self.n_per_leg()..]
    }
}

/// `K` independent cycles sampled on a common uniform `s` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTrajectory {
    pub cycles: Vec<LatentCycle>,
    pub delta: f64,
    /// Seconds per unit of the cycle parameter, i.e. per leg.
    pub dt: f64,
    pub seed: u64,
}

impl LatentTrajectory {
    pub fn n_per_leg(&self) -> usize {
        self.cycles.first().map_or(0, |c| c.n_per_leg())
    }

    /// Time between consecutive samples of a leg.
    pub fn sample_spacing(&self) -> f64 {
        self.dt / (self.n_per_leg() as f64 - 1.0)
    }

    pub fn id(&self) -> String {
        format!(
            "latent(seed={},delta={},K={},n={})",
            self.seed,
            self.delta,
            self.cycles.len(),
            self.n_per_leg()
        )
    }

    /// Flattens to a timestamped trajectory. Sample `i` sits at
    /// `t = i · dt/(n−1)`; legs follow each other without a gap.
    pub fn to_trajectory(&self) -> Trajectory {
        let h = self.sample_spacing();
        let n = self.n_per_leg();
        let mut samples = Vec::with_capacity(self.cycles.len() * 2 * n);
        for (k, c) in self.cycles.iter().enumerate() {
            for (j, &pos) in c.points.iter().enumerate() {
                let leg = if j < n { Leg::Outward } else { Leg::Return };
                samples.push(Sample { t: samples.len() as f64 * h, pos, cycle: k, leg });
            }
        }
        Trajectory { samples, dt: h, provenance: Some(self.id()) }
    }
}

/// Radius at cycle parameter `s`.
pub fn radial_profile(s: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(0.0..=1.0).contains(&s) {
        return Err(domain("s", format!("must lie in [0, 1], got {s}")));
    }
    Ok((delta * delta + (1.0 - delta * delta) * s).sqrt())
}

/// One out-and-back cycle along heading `theta` with `n` samples per leg.
pub fn cycle_from_heading(theta: f64, delta: f64, n: usize) -> LatentCycle {
    let s_grid: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
    let (sn, cs) = theta.sin_cos();
    let a = 1.0 - delta * delta;
    let mut points: Vec<Point> = s_grid
        .iter()
        .map(|&s| {
            let r = (delta * delta + a * s).sqrt();
            [r * cs, r * sn]
        })
        .collect();
    let back: Vec<Point> = points.iter().rev().copied().collect();
    points.extend(back);
    LatentCycle { theta, delta, points, s_grid }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(domain("n_points_per_leg", format!("must be at least 2, got {n}")));
    }
    Ok(())
}

/// A single cycle. Uses the same sub-stream as cycle 0 of
/// [`generate_trajectory`] with the same seed.
pub fn sample_cycle(seed: u64, delta: f64, n_points_per_leg: usize) -> Result<LatentCycle> {
    check_delta(delta)?;
    check_n(n_points_per_leg)?;
    let theta = heading(seed, 0);
    Ok(cycle_from_heading(theta, delta, n_points_per_leg))
}

fn heading(seed: u64, k: u64) -> f64 {
    stream(seed, "cycle", k).random::<f64>() * 2.0 * PI
}

pub fn generate_trajectory(
    seed: u64,
    delta: f64,
    k_cycles: usize,
    n_points_per_leg: usize,
    dt: f64,
) -> Result<LatentTrajectory> {
    check_delta(delta)?;
    check_n(n_points_per_leg)?;
    if k_cycles == 0 {
        return Err(domain("K", "at least one cycle is required"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(domain("dt", format!("must be positive, got {dt}")));
    }
    let cycles = (0..k_cycles as u64)
        .map(|k| cycle_from_heading(heading(seed, k), delta, n_points_per_leg))
        .collect();
    Ok(LatentTrajectory { cycles, delta, dt, seed })
}

/// I.i.d. uniform points on the annulus by inverse-CDF sampling of the radius.
pub fn uniform_annulus_sample_with(rng: &mut Rng, delta: f64, n: usize) -> Vec<Point> {
    let a = 1.0 - delta * delta;
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let th = rng.random::<f64>() * 2.0 * PI;
            let r = (delta * delta + a * u).sqrt();
            [r * th.cos(), r * th.sin()]
        })
        .collect()
}

pub fn uniform_annulus_sample(seed: u64, delta: f64, n: usize) -> Result<Vec<Point>> {
    check_delta(delta)?;
    if n == 0 {
        return Err(domain("n", "at least one sample is required"));
    }
    Ok(uniform_annulus_sample_with(&mut stream(seed, "annulus", 0), delta, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentMoments {
    pub e_acc: f64,
    pub phi4: f64,
    pub ratio: f64,
}

/// Closed-form acceleration energy and fourth speed moment of `K` cycles with
/// one unit of time per leg.
pub fn latent_moments_closed_form(delta: f64, k_cycles: usize) -> Result<LatentMoments> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(domain(
            "delta",
            format!("must lie in (0, 1]; the moments diverge at 0 (got {delta})"),
        ));
    }
    let k = k_cycles as f64;
    let d2 = delta * delta;
    let a4 = (1.0 - d2).powi(4);
    Ok(LatentMoments {
        e_acc: k * a4 * (1.0 + d2) / (16.0 * d2 * d2),
        phi4: k * a4 / (8.0 * d2),
        ratio: 2.0 * d2 / (1.0 + d2),
    })
}

/// Radius and radial speed (per unit `s`) of the profile whose last `eps` of
/// the outward leg is replaced by a cubic Hermite segment ending at radius 1
/// with zero speed.
pub fn smoothed_radius(s: f64, delta: f64, eps: f64) -> (f64, f64) {
    let a = 1.0 - delta * delta;
    let s0 = 1.0 - eps;
    if s <= s0 {
        let r = (delta * delta + a * s).sqrt();
        return (r, a / (2.0 * r));
    }
    let p0 = (delta * delta + a * s0).sqrt();
    let m0 = a / (2.0 * p0) * eps;
    let t = (s - s0) / eps;
    let (t2, t3) = (t * t, t * t * t);
    let r = (2.0 * t3 - 3.0 * t2 + 1.0) * p0 + (-2.0 * t3 + 3.0 * t2) + (t3 - 2.0 * t2 + t) * m0;
    let dr = (6.0 * t2 - 6.0 * t) * p0 + (-6.0 * t2 + 6.0 * t) + (3.0 * t2 - 4.0 * t + 1.0) * m0;
    (r, dr / eps)
}

/// Replaces the outer end of the radial profile by a cubic Hermite splice
/// over `s ∈ [1−ε, 1]` so that the radial speed vanishes at the outer
/// turnaround. The return leg mirrors the smoothed outward leg.
pub fn smooth_cycle(cycle: &LatentCycle, epsilon_window: f64) -> Result<LatentCycle> {
    if !(epsilon_window > 0.0 && epsilon_window < 1.0) {
        return Err(domain("epsilon_window", format!("must lie in (0, 1), got {epsilon_window}")));
    }
    let n = cycle.n_per_leg();
    let spacing = 1.0 / (n as f64 - 1.0);
    if epsilon_window < 6.0 * spacing {
        return Err(domain(
            "epsilon_window",
            format!("{epsilon_window} spans fewer than 6 grid intervals of {spacing:.3e}"),
        ));
    }
    let (sn, cs) = cycle.theta.sin_cos();
    let mut points: Vec<Point> = cycle
        .s_grid
        .iter()
        .map(|&s| {
            let (r, _) = smoothed_radius(s, cycle.delta, epsilon_window);
            [r * cs, r * sn]
        })
        .collect();
    let back: Vec<Point> = points.iter().rev().copied().collect();
    points.extend(back);
    Ok(LatentCycle { points, ..cycle.clone() })
}

/// Squared-acceleration integral of the outward leg over the splice window
/// `s ∈ [1−ε, 1]`, one unit of time per leg.
pub fn splice_energy(cycle: &LatentCycle, epsilon_window: f64) -> Result<f64> {
    let n = cycle.n_per_leg();
    let h = 1.0 / (n as f64 - 1.0);
    let start = cycle
        .s_grid
        .iter()
        .position(|&s| s >= 1.0 - epsilon_window - 1e-12)
        .unwrap_or(n - 1);
    let (e, _, _, _) = leg_moments(&cycle.outward()[start..], h)?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::numeric_energy;

    #[test]
    fn profile_endpoints_and_midpoint() {
        assert!((radial_profile(0.0, 0.1).unwrap() - 0.1).abs() < 1e-15);
        assert!((radial_profile(1.0, 0.1).unwrap() - 1.0).abs() < 1e-15);
        let m = radial_profile(0.5, 0.01).unwrap();
        assert!((m - (0.0001f64 + 0.9999 * 0.5).sqrt()).abs() < 1e-15);
        assert!((m - 0.70714).abs() < 1e-5);
        assert!(radial_profile(1.5, 0.1).is_err());
        assert!(radial_profile(0.5, 0.0).is_err());
    }

    #[test]
    fn cycle_shape() {
        let c = sample_cycle(3, 0.05, 200).unwrap();
        assert!((crate::norm(c.points[0]) - 0.05).abs() < 1e-14);
        assert_eq!(c.points.len(), 400);
        let out = c.outward();
        assert!(out.windows(2).all(|w| crate::norm(w[1]) >= crate::norm(w[0])));
        let mut rev = c.return_leg().to_vec();
        rev.reverse();
        assert_eq!(rev, out);
        assert!(c.points.iter().all(|&p| {
            let r = crate::norm(p);
            r >= 0.05 - 1e-12 && r <= 1.0 + 1e-12
        }));
    }

    #[test]
    fn trajectory_is_deterministic_and_prefix_stable() {
        let a = generate_trajectory(9, 0.1, 5, 20, 1.0).unwrap();
        let b = generate_trajectory(9, 0.1, 5, 20, 1.0).unwrap();
        let c = generate_trajectory(9, 0.1, 8, 20, 1.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cycles[..], c.cycles[..5]);
        assert_eq!(a.cycles[0], sample_cycle(9, 0.1, 20).unwrap());
        let tr = generate_trajectory(1, 0.1, 1, 30, 1.0).unwrap().to_trajectory();
        assert_eq!(tr.len(), 60);
        assert!(tr.is_time_ordered());
    }

    #[test]
    fn closed_form_values() {
        let m = latent_moments_closed_form(0.1, 1).unwrap();
        assert!((m.ratio - 0.02 / 1.01).abs() < 1e-15);
        assert!((m.phi4 / m.e_acc - m.ratio).abs() < 1e-12);
        let m10 = latent_moments_closed_form(0.1, 10).unwrap();
        assert!((m10.e_acc / m.e_acc - 10.0).abs() < 1e-12);
        assert!((m10.phi4 / m.phi4 - 10.0).abs() < 1e-12);
        let one = latent_moments_closed_form(1.0, 3).unwrap();
        assert_eq!((one.e_acc, one.phi4), (0.0, 0.0));
        assert!(latent_moments_closed_form(0.0, 1).is_err());
    }

    #[test]
    fn numeric_energy_matches_closed_form() {
        for delta in [0.1, 0.3] {
            let tr = generate_trajectory(5, delta, 3, 2000, 1.0).unwrap().to_trajectory();
            let num = numeric_energy(&tr).unwrap();
            let exact = latent_moments_closed_form(delta, 3).unwrap();
            assert!((num.e_acc / exact.e_acc - 1.0).abs() < 0.01);
            assert!((num.phi4 / exact.phi4 - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn uniform_sample_second_moment() {
        let delta = 0.01;
        let pts = uniform_annulus_sample(11, delta, 100_000).unwrap();
        let r2: Vec<f64> = pts.iter().map(|p| p[0] * p[0] + p[1] * p[1]).collect();
        let mean = r2.iter().sum::<f64>() / r2.len() as f64;
        let var = r2.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r2.len() - 1) as f64;
        let se = (var / r2.len() as f64).sqrt();
        assert!((mean - (1.0 + delta * delta) / 2.0).abs() < 3.0 * se);
        let thin = uniform_annulus_sample(2, 0.999, 1000).unwrap();
        assert!(thin.iter().all(|p| crate::norm(*p) >= 0.999 - 1e-12));
    }

    #[test]
    fn smoothing_stops_at_the_rim() {
        let (r, dr) = smoothed_radius(1.0, 0.1, 0.1);
        assert!((r - 1.0).abs() < 1e-14);
        assert!(dr.abs() < 1e-12);
        // Continuous value and slope at the splice point.
        let a = smoothed_radius(0.9 - 1e-9, 0.1, 0.1);
        let b = smoothed_radius(0.9 + 1e-9, 0.1, 0.1);
        assert!((a.0 - b.0).abs() < 1e-8 && (a.1 - b.1).abs() < 1e-6);

        let c = sample_cycle(1, 0.1, 2001).unwrap();
        let e10 = splice_energy(&smooth_cycle(&c, 0.1).unwrap(), 0.1).unwrap();
        let e05 = splice_energy(&smooth_cycle(&c, 0.05).unwrap(), 0.05).unwrap();
        let ratio = e05 / e10;
        assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
        assert!(smooth_cycle(&sample_cycle(1, 0.1, 20).unwrap(), 0.1).is_err());
    }
}
