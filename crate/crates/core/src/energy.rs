//! Acceleration and speed moments of sampled trajectories.
//!
//! Derivatives are taken leg by leg and never across a turnaround, where the
//! velocity jumps. Each leg is differentiated with fourth-order stencils:
//! centred five-point formulas in the interior and one-sided formulas that
//! stay inside the leg at the two samples nearest each end. The squared
//! acceleration and fourth-power speed are then integrated with composite
//! Simpson weights. Second-order differences lose roughly a third of the
//! acceleration energy near the inner radius at δ = 0.05 with 2000 samples per
//! leg, which is why the higher-order scheme is used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyMoments {
    /// ∫‖ẍ‖² dt over the smooth legs.
    pub e_acc: f64,
    /// ∫‖ẋ‖⁴ dt over the smooth legs.
    pub phi4: f64,
    /// Sum over turnarounds of the velocity jump ‖v_in − v_out‖.
    pub turnaround_impulse: f64,
}

/// Fourth-order first and second derivative of a uniformly sampled scalar
/// sequence with spacing `h`. Needs at least 6 samples.
fn derivs4(f: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = f.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let (h1, h2) = (12.0 * h, 12.0 * h * h);
    for i in 2..n - 2 {
        d1[i] = (-f[i + 2] + 8.0 * f[i + 1] - 8.0 * f[i - 1] + f[i - 2]) / h1;
        d2[i] = (-f[i + 2] + 16.0 * f[i + 1] - 30.0 * f[i] + 16.0 * f[i - 1] - f[i - 2]) / h2;
    }
    // One-sided stencils at the first two nodes; `g(k)` reads forward from
    // the edge, `sign` flips the first derivative for the far end.
    let mut edge = |g: &dyn Fn(usize) -> f64, at0: usize, at1: usize, sign: f64| {
        d2[at0] = (45.0 * g(0) - 154.0 * g(1) + 214.0 * g(2) - 156.0 * g(3) + 61.0 * g(4) - 10.0 * g(5)) / h2;
        d1[at0] = sign * (-25.0 * g(0) + 48.0 * g(1) - 36.0 * g(2) + 16.0 * g(3) - 3.0 * g(4)) / h1;
        d2[at1] = (10.0 * g(0) - 15.0 * g(1) - 4.0 * g(2) + 14.0 * g(3) - 6.0 * g(4) + g(5)) / h2;
        d1[at1] = sign * (-3.0 * g(0) - 10.0 * g(1) + 18.0 * g(2) - 6.0 * g(3) + g(4)) / h1;
    };
    edge(&|k| f[k], 0, 1, 1.0);
    edge(&|k| f[n - 1 - k], n - 1, n - 2, -1.0);
    (d1, d2)
}

/// Composite Simpson weights for `n ≥ 2` equally spaced nodes (unit
/// spacing). An odd number of intervals closes with the 3/8 rule; two nodes
/// fall back to the trapezoid.
pub fn simpson_weights(n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    match n {
        0 | 1 => {}
        2 => {
            w[0] = 0.5;
            w[1] = 0.5;
        }
        _ => {
            let intervals = n - 1;
            let simpson_end = if intervals % 2 == 0 { n - 1 } else { n - 4 };
            let mut i = 0;
            while i + 2 <= simpson_end {
                w[i] += 1.0 / 3.0;
                w[i + 1] += 4.0 / 3.0;
                w[i + 2] += 1.0 / 3.0;
                i += 2;
            }
            if intervals % 2 == 1 {
                let s = simpson_end;
                w[s] += 3.0 / 8.0;
                w[s + 1] += 9.0 / 8.0;
                w[s + 2] += 9.0 / 8.0;
                w[s + 3] += 3.0 / 8.0;
            }
        }
    }
    w
}

/// Moments of a single smooth leg sampled with spacing `h`.
///
/// Returns `(e_acc, phi4, v_first, v_last)`.
pub fn leg_moments(points: &[Point], h: f64) -> Result<(f64, f64, Point, Point)> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Domain {
            name: "leg",
            reason: format!("needs at least 3 samples, got {n}"),
        });
    }
    if !(h > 0.0) {
        return Err(crate::error::domain("dt", "must be positive"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = points.iter().map(|p| p[1]).collect();
    if n >= 6 {
        let (vx, ax) = derivs4(&xs, h);
        let (vy, ay) = derivs4(&ys, h);
        let w = simpson_weights(n);
        let mut e = 0.0;
        let mut p4 = 0.0;
        for i in 0..n {
            let a2 = ax[i] * ax[i] + ay[i] * ay[i];
            let v2 = vx[i] * vx[i] + vy[i] * vy[i];
            e += w[i] * a2;
            p4 += w[i] * v2 * v2;
        }
        Ok((e * h, p4 * h, [vx[0], vy[0]], [vx[n - 1], vy[n - 1]]))
    } else {
        // Short legs: second-order central differences at interior samples.
        let mut e = 0.0;
        let mut p4 = 0.0;
        for i in 1..n - 1 {
            let a = [
                (xs[i + 1] - 2.0 * xs[i] + xs[i - 1]) / (h * h),
                (ys[i + 1] - 2.0 * ys[i] + ys[i - 1]) / (h * h),
            ];
            let v = [(xs[i + 1] - xs[i - 1]) / (2.0 * h), (ys[i + 1] - ys[i - 1]) / (2.0 * h)];
            let v2 = v[0] * v[0] + v[1] * v[1];
            e += (a[0] * a[0] + a[1] * a[1]) * h;
            p4 += v2 * v2 * h;
        }
        let vf = [(xs[1] - xs[0]) / h, (ys[1] - ys[0]) / h];
        let vl = [(xs[n - 1] - xs[n - 2]) / h, (ys[n - 1] - ys[n - 2]) / h];
        Ok((e, p4, vf, vl))
    }
}

/// Acceleration energy and fourth speed moment summed over all legs.
pub fn numeric_energy(traj: &Trajectory) -> Result<EnergyMoments> {
    let legs = traj.leg_points();
    if legs.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let mut out = EnergyMoments { e_acc: 0.0, phi4: 0.0, turnaround_impulse: 0.0 };
    let mut prev_end: Option<Point> = None;
    for leg in &legs {
        let (e, p4, v0, v1) = leg_moments(leg, traj.dt)?;
        out.e_acc += e;
        out.phi4 += p4;
        if let Some(v) = prev_end {
            out.turnaround_impulse += crate::dist(v, v0);
        }
        prev_end = Some(v1);
    }
    Ok(out)
}

/// Kinetic-energy proxy ∫‖ẋ‖² dt from first differences of consecutive
/// samples.
pub fn energy_proxy(traj: &Trajectory) -> Result<f64> {
    if traj.len() < 2 {
        return Err(Error::Domain {
            name: "traj",
            reason: "needs at least 2 samples".into(),
        });
    }
    Ok(traj
        .samples
        .windows(2)
        .map(|w| {
            let dt = w[1].t - w[0].t;
            crate::dist2(w[1].pos, w[0].pos) / dt
        })
        .sum())
}
