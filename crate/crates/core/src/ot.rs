//! Entropic coupling for minibatch pairing and an exact Wasserstein-2
//! oracle.
//!
//! Sinkhorn runs on the raw squared-Euclidean cost with uniform marginals.
//! Scaling vectors are periodically absorbed into log-potentials so the
//! Gibbs kernel stays representable; when even the stabilised kernel
//! underflows (very small `ε`) the iteration switches to log-sum-exp updates.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::assignment::lapjv;
use crate::error::{domain, Error, Result};
use crate::rng::{stream, Rng};
use crate::Point;

/// Largest assignment handled by [`exact_w2`] unless raised explicitly.
pub const DEFAULT_W2_CAP: usize = 4096;

const ABSORB_AT: f64 = 1e30;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingPlan {
    pub plan: Array2<f64>,
    pub row_marginal: Array1<f64>,
    pub col_marginal: Array1<f64>,
    pub eps_sink: f64,
}

impl CouplingPlan {
    /// Max absolute deviation of row and column sums from the marginals.
    pub fn marginal_residual(&self) -> f64 {
        let rows = self.plan.sum_axis(ndarray::Axis(1));
        let cols = self.plan.sum_axis(ndarray::Axis(0));
        let r = (&rows - &self.row_marginal).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let c = (&cols - &self.col_marginal).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        r.max(c)
    }

    /// `⟨P, C⟩` for the squared-Euclidean cost between the given sets.
    pub fn transport_cost(&self, source: &[Point], target: &[Point]) -> f64 {
        let mut total = 0.0;
        for (i, a) in source.iter().enumerate() {
            for (j, b) in target.iter().enumerate() {
                total += self.plan[[i, j]] * crate::dist2(*a, *b);
            }
        }
        total
    }
}

fn check_points(name: &'static str, pts: &[Point]) -> Result<()> {
    if pts.is_empty() {
        return Err(Error::Empty(name));
    }
    if pts.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::NonFinite(format!("{name} coordinates")));
    }
    Ok(())
}

/// Entropic OT plan between uniform measures on two point sets.
pub fn sinkhorn_plan(source: &[Point], target: &[Point], eps_sink: f64, n_iters: usize) -> Result<CouplingPlan> {
    check_points("source", source)?;
    check_points("target", target)?;
    if !(eps_sink > 0.0 && eps_sink.is_finite()) {
        return Err(domain("eps_sink", format!("must be positive, got {eps_sink}")));
    }
    let (n, m) = (source.len(), target.len());
    let a = 1.0 / n as f64;
    let b = 1.0 / m as f64;
    let cost = Array2::from_shape_fn((n, m), |(i, j)| crate::dist2(source[i], target[j]));

    let mut f = Array1::<f64>::zeros(n);
    let mut g = Array1::<f64>::zeros(m);
    let kernel = |f: &Array1<f64>, g: &Array1<f64>| {
        Array2::from_shape_fn((n, m), |(i, j)| ((f[i] + g[j] - cost[[i, j]]) / eps_sink).exp())
    };
    let mut k = kernel(&f, &g);
    let mut u = Array1::<f64>::ones(n);
    let mut v = Array1::<f64>::ones(m);
    let mut log_mode = false;

    for _ in 0..n_iters {
        if !log_mode {
            let kv = mat_vec(&k, &v);
            let new_u = kv.mapv(|s| a / s);
            let ktu = mat_t_vec(&k, &new_u);
            let new_v = ktu.mapv(|s| b / s);
            let ok = new_u.iter().chain(new_v.iter()).all(|x| x.is_finite() && *x > 0.0);
            let big = new_u.iter().chain(new_v.iter()).any(|&x| !(1.0 / ABSORB_AT..=ABSORB_AT).contains(&x));
            if ok && !big {
                u = new_u;
                v = new_v;
                continue;
            }
            // Absorb the current scalings and rebuild the kernel.
            f.zip_mut_with(&u, |f, &u| *f += eps_sink * u.ln());
            g.zip_mut_with(&v, |g, &v| *g += eps_sink * v.ln());
            u.fill(1.0);
            v.fill(1.0);
            k = kernel(&f, &g);
            let kv = mat_vec(&k, &v);
            if kv.iter().all(|s| *s > 0.0 && s.is_finite()) {
                let new_u = kv.mapv(|s| a / s);
                let ktu = mat_t_vec(&k, &new_u);
                if ktu.iter().all(|s| *s > 0.0 && s.is_finite()) {
                    u = new_u;
                    v = ktu.mapv(|s| b / s);
                    continue;
                }
            }
            log_mode = true;
        }
        log_update(&cost, eps_sink, a, b, &mut f, &mut g);
    }
    let plan = if log_mode {
        Array2::from_shape_fn((n, m), |(i, j)| ((f[i] + g[j] - cost[[i, j]]) / eps_sink).exp())
    } else {
        Array2::from_shape_fn((n, m), |(i, j)| u[i] * k[[i, j]] * v[j])
    };
    Ok(CouplingPlan {
        plan,
        row_marginal: Array1::from_elem(n, a),
        col_marginal: Array1::from_elem(m, b),
        eps_sink,
    })
}

fn mat_vec(k: &Array2<f64>, v: &Array1<f64>) -> Array1<f64> {
    let v = v.as_slice().expect("contiguous");
    Array1::from_iter(k.outer_iter().map(|row| dot(row.as_slice().expect("row-major"), v)))
}

/// Dot product with eight independent accumulators so the loop vectorises.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

fn mat_t_vec(k: &Array2<f64>, u: &Array1<f64>) -> Array1<f64> {
    let mut out = vec![0.0; k.ncols()];
    for (row, &ui) in k.outer_iter().zip(u) {
        for (o, &x) in out.iter_mut().zip(row.as_slice().expect("row-major")) {
            *o += ui * x;
        }
    }
    Array1::from(out)
}

fn log_update(cost: &Array2<f64>, eps: f64, a: f64, b: f64, f: &mut Array1<f64>, g: &mut Array1<f64>) {
    let (n, m) = cost.dim();
    for i in 0..n {
        let lse = log_sum_exp((0..m).map(|j| (g[j] - cost[[i, j]]) / eps));
        f[i] = eps * (a.ln() - lse);
    }
    for j in 0..m {
        let lse = log_sum_exp((0..n).map(|i| (f[i] - cost[[i, j]]) / eps));
        g[j] = eps * (b.ln() - lse);
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// One target index per source row, drawn with probability proportional to
/// the plan row.
pub fn sample_pairs_with(plan: &CouplingPlan, rng: &mut Rng) -> Result<Vec<(usize, usize)>> {
    let (n, m) = plan.plan.dim();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = plan.plan.row(i);
        let total: f64 = row.sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegenerateRow(i));
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = m - 1;
        for (j, &p) in row.iter().enumerate() {
            if u < p {
                pick = j;
                break;
            }
            u -= p;
        }
        // Never land on a zero-mass column through round-off.
        while row[pick] <= 0.0 && pick > 0 {
            pick -= 1;
        }
        out.push((i, pick));
    }
    Ok(out)
}

pub fn sample_pairs(plan: &CouplingPlan, seed: u64) -> Result<Vec<(usize, usize)>> {
    sample_pairs_with(plan, &mut stream(seed, "pairs", 0))
}

/// Plan-weighted mean target of each source row.
pub fn barycentric_targets(plan: &CouplingPlan, target: &[Point]) -> Result<Vec<Point>> {
    let (n, _) = plan.plan.dim();
    (0..n)
        .map(|i| {
            let row = plan.plan.row(i);
            let total: f64 = row.sum();
            if !(total > 0.0) {
                return Err(Error::DegenerateRow(i));
            }
            let mut p = [0.0, 0.0];
            for (w, t) in row.iter().zip(target) {
                p[0] += w * t[0];
                p[1] += w * t[1];
            }
            Ok([p[0] / total, p[1] / total])
        })
        .collect()
}

/// How pairs are formed from a plan during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    #[default]
    Sample,
    Barycentric,
}

/// Exact W2 between equal-size point sets: the square root of the minimum
/// mean squared pairing distance.
pub fn exact_w2(a: &[Point], b: &[Point]) -> Result<f64> {
    exact_w2_capped(a, b, DEFAULT_W2_CAP)
}

pub fn exact_w2_capped(a: &[Point], b: &[Point], cap: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("point sets of size {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("point set"));
    }
    if a.len() > cap {
        return Err(Error::CapExceeded { size: a.len(), cap });
    }
    check_points("points_a", a)?;
    check_points("points_b", b)?;
    let n = a.len();
    let mut cost = Vec::with_capacity(n * n);
    for p in a {
        for q in b {
            cost.push(crate::dist2(*p, *q));
        }
    }
    let x = lapjv(n, &cost);
    let total: f64 = x.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Gap between the entropic transport cost and the exact squared W2 on the
/// same sets; logged as a proxy for the coupling residual.
pub fn sinkhorn_anneal_gap(source: &[Point], target: &[Point], eps_sink: f64, n_iters: usize) -> Result<f64> {
    let plan = sinkhorn_plan(source, target, eps_sink, n_iters)?;
    let w2 = exact_w2(source, target)?;
    Ok(plan.transport_cost(source, target) - w2 * w2)
}
