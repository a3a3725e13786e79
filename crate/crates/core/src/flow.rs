//! The pushforward map `G_θ`: fixed-step RK4 integration of the velocity
//! field from `s = 0` to `s = 1`, plus Jacobian-based Lipschitz estimates
//! and a bilinear lookup-table distillation.

use ndarray::{Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::latent::uniform_annulus_sample_with;
use crate::net::MlpParams;
use crate::ot::{sample_pairs_with, sinkhorn_plan};
use crate::rng::stream;
use crate::targets::TargetSpec;
use crate::trajectory::Trajectory;
use crate::Point;

/// Rows integrated together; bounds the size of intermediate matrices.
const CHUNK: usize = 1024;

/// Anything that maps latent points to target points in batches.
pub trait PushMap {
    fn push(&self, z: &[Point]) -> Result<Vec<Point>>;
}

/// A plain function used as a map.
pub struct FnMap<F: Fn(Point) -> Point>(pub F);

impl<F: Fn(Point) -> Point> PushMap for FnMap<F> {
    fn push(&self, z: &[Point]) -> Result<Vec<Point>> {
        Ok(z.iter().map(|&p| (self.0)(p)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMap {
    pub params: MlpParams,
    pub n_steps: usize,
}

impl FlowMap {
    pub fn new(params: MlpParams, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(domain("n_steps", "must be at least 1"));
        }
        Ok(FlowMap { params, n_steps })
    }

    /// Velocities at rows `y` (N×2) at flow time `s`.
    pub fn velocity(&self, s: f64, y: &Array2<f64>) -> Array2<f64> {
        let mut x = Array2::from_elem((y.nrows(), 3), s);
        x.slice_mut(ndarray::s![.., 1..3]).assign(y);
        self.params.forward_batch(x.view())
    }

    /// Integrates a block of rows in place.
    pub fn integrate_rows(&self, y: &mut Array2<f64>) -> Result<()> {
        let h = 1.0 / self.n_steps as f64;
        for step in 0..self.n_steps {
            let s = step as f64 * h;
            let k1 = self.velocity(s, y);
            let k2 = self.velocity(s + 0.5 * h, &(&*y + &(&k1 * (0.5 * h))));
            let k3 = self.velocity(s + 0.5 * h, &(&*y + &(&k2 * (0.5 * h))));
            let k4 = self.velocity(s + h, &(&*y + &(&k3 * h)));
            let incr = (k1 + &k2 * 2.0 + &k3 * 2.0 + k4) * (h / 6.0);
            *y += &incr;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { step, n_steps: self.n_steps });
            }
        }
        Ok(())
    }

    pub fn integrate_batch(&self, z: &[Point]) -> Result<Vec<Point>> {
        if z.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::NonFinite("initial state".into()));
        }
        let mut out = Vec::with_capacity(z.len());
        for chunk in z.chunks(CHUNK) {
            let mut y = points_to_rows(chunk);
            self.integrate_rows(&mut y)?;
            out.extend(rows_to_points(&y));
        }
        Ok(out)
    }

    pub fn integrate(&self, z0: Point) -> Result<Point> {
        Ok(self.integrate_batch(&[z0])?[0])
    }
}

impl PushMap for FlowMap {
    fn push(&self, z: &[Point]) -> Result<Vec<Point>> {
        self.integrate_batch(z)
    }
}

pub fn points_to_rows(p: &[Point]) -> Array2<f64> {
    Array2::from_shape_fn((p.len(), 2), |(i, k)| p[i][k])
}

pub fn rows_to_points(a: &Array2<f64>) -> Vec<Point> {
    a.axis_iter(Axis(0)).map(|r| [r[0], r[1]]).collect()
}

/// Maps every sample, keeping timestamps and cycle/leg tags.
pub fn pushforward_trajectory(map: &dyn PushMap, latent: &Trajectory) -> Result<Trajectory> {
    let z: Vec<Point> = latent.points().collect();
    let x = map.push(&z)?;
    latent.with_positions(&x)
}

pub type Mat2 = [[f64; 2]; 2];

/// Largest singular value of a 2×2 matrix.
pub fn sigma_max(j: &Mat2) -> f64 {
    let [[a, b], [c, d]] = *j;
    let s = 0.5 * (a * a + b * b + c * c + d * d);
    let det = a * d - b * c;
    (s + (s * s - det * det).max(0.0).sqrt()).sqrt()
}

/// Central-difference Jacobians; column `i` is `(G(z+h eᵢ) − G(z−h eᵢ))/2h`.
pub fn jacobians(map: &dyn PushMap, z: &[Point], h: f64) -> Result<Vec<Mat2>> {
    if !(h > 0.0) {
        return Err(domain("h", "must be positive"));
    }
    let mut probes = Vec::with_capacity(4 * z.len());
    for p in z {
        probes.push([p[0] + h, p[1]]);
        probes.push([p[0] - h, p[1]]);
        probes.push([p[0], p[1] + h]);
        probes.push([p[0], p[1] - h]);
    }
    let g = map.push(&probes)?;
    Ok(g.chunks(4)
        .map(|q| {
            let c0 = [(q[0][0] - q[1][0]) / (2.0 * h), (q[0][1] - q[1][1]) / (2.0 * h)];
            let c1 = [(q[2][0] - q[3][0]) / (2.0 * h), (q[2][1] - q[3][1]) / (2.0 * h)];
            [[c0[0], c1[0]], [c0[1], c1[1]]]
        })
        .collect())
}

pub fn jacobian(map: &dyn PushMap, z: Point, h: f64) -> Result<Mat2> {
    Ok(jacobians(map, &[z], h)?[0])
}

/// `max σ_max(J_G(zᵢ))` over uniform annulus samples: an empirical lower
/// bound on the Lipschitz constant of the map.
pub fn map_lipschitz_hat(map: &dyn PushMap, delta: f64, n_samples: usize, h: f64, seed: u64) -> Result<f64> {
    let z = uniform_annulus_sample_with(&mut stream(seed, "map-lipschitz", 0), delta, n_samples);
    Ok(jacobians(map, &z, h)?.iter().map(sigma_max).fold(0.0, f64::max))
}

/// Settings of the velocity Lipschitz probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LvProbe {
    pub n_pts: usize,
    pub power_iters: usize,
    pub h: f64,
    pub eps_sink: f64,
    pub sinkhorn_iters: usize,
}

impl Default for LvProbe {
    fn default() -> Self {
        LvProbe { n_pts: 1024, power_iters: 10, h: 1e-3, eps_sink: 0.05, sinkhorn_iters: 50 }
    }
}

/// Empirical spatial Lipschitz constant of the velocity field.
///
/// Points `(sᵢ, yᵢ)` follow the training law: `s` uniform and `y` on the
/// straight interpolant of a freshly Sinkhorn-coupled source/target pair.
/// At each point the spatial Jacobian is formed by central differences and
/// its top singular value estimated by power iteration on `JᵀJ`.
pub fn velocity_lipschitz_hat(
    params: &MlpParams,
    target: &TargetSpec,
    delta: f64,
    probe: &LvProbe,
    seed: u64,
) -> Result<f64> {
    let n = probe.n_pts;
    let mut rng = stream(seed, "velocity-lipschitz", 0);
    let src = uniform_annulus_sample_with(&mut rng, delta, n);
    let tgt = target.sample_with(&mut rng, n)?;
    let plan = sinkhorn_plan(&src, &tgt, probe.eps_sink, probe.sinkhorn_iters)?;
    let pairs = sample_pairs_with(&plan, &mut rng)?;
    let h = probe.h;
    let mut x = Array2::zeros((4 * n, 3));
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let s: f64 = rng.random();
        let y = [(1.0 - s) * src[i][0] + s * tgt[j][0], (1.0 - s) * src[i][1] + s * tgt[j][1]];
        let offsets = [[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]];
        for (o, d) in offsets.iter().enumerate() {
            let r = 4 * k + o;
            x[[r, 0]] = s;
            x[[r, 1]] = y[0] + d[0];
            x[[r, 2]] = y[1] + d[1];
        }
    }
    let v = params.forward_batch(x.view());
    let mut best: f64 = 0.0;
    for k in 0..n {
        let r = 4 * k;
        let j: Mat2 = [
            [(v[[r, 0]] - v[[r + 1, 0]]) / (2.0 * h), (v[[r + 2, 0]] - v[[r + 3, 0]]) / (2.0 * h)],
            [(v[[r, 1]] - v[[r + 1, 1]]) / (2.0 * h), (v[[r + 2, 1]] - v[[r + 3, 1]]) / (2.0 * h)],
        ];
        let th = rng.random::<f64>() * std::f64::consts::TAU;
        best = best.max(power_sigma(&j, [th.cos(), th.sin()], probe.power_iters));
    }
    Ok(best)
}

/// Power iteration on `JᵀJ` from `start`; returns `‖J u‖` for the final
/// unit vector `u`.
fn power_sigma(j: &Mat2, start: Point, iters: usize) -> f64 {
    let apply = |u: Point| [j[0][0] * u[0] + j[0][1] * u[1], j[1][0] * u[0] + j[1][1] * u[1]];
    let apply_t = |w: Point| [j[0][0] * w[0] + j[1][0] * w[1], j[0][1] * w[0] + j[1][1] * w[1]];
    let mut u = start;
    for _ in 0..iters {
        let w = apply_t(apply(u));
        let nw = crate::norm(w);
        if nw == 0.0 {
            return 0.0;
        }
        u = [w[0] / nw, w[1] / nw];
    }
    crate::norm(apply(u))
}

/// Norm `√(‖∇²G₁‖²_op + ‖∇²G₂‖²_op)` of the Hessian tensor at each point,
/// from a nine-point finite-difference stencil.
pub fn hessian_tensor_norms(map: &dyn PushMap, z: &[Point], h: f64) -> Result<Vec<f64>> {
    let offs: [[f64; 2]; 9] = [
        [0.0, 0.0],
        [h, 0.0],
        [-h, 0.0],
        [0.0, h],
        [0.0, -h],
        [h, h],
        [h, -h],
        [-h, h],
        [-h, -h],
    ];
    let probes: Vec<Point> = z.iter().flat_map(|p| offs.iter().map(move |o| [p[0] + o[0], p[1] + o[1]])).collect();
    let g = map.push(&probes)?;
    Ok(g.chunks(9)
        .map(|q| {
            let mut total = 0.0;
            for k in 0..2 {
                let hxx = (q[1][k] - 2.0 * q[0][k] + q[2][k]) / (h * h);
                let hyy = (q[3][k] - 2.0 * q[0][k] + q[4][k]) / (h * h);
                let hxy = (q[5][k] - q[6][k] - q[7][k] + q[8][k]) / (4.0 * h * h);
                // Spectral norm of a symmetric 2×2 matrix.
                let mean = 0.5 * (hxx + hyy);
                let rad = (0.25 * (hxx - hyy).powi(2) + hxy * hxy).sqrt();
                let op = mean.abs() + rad;
                total += op * op;
            }
            total.sqrt()
        })
        .collect())
}

/// `G` tabulated on a vertex grid over a box, evaluated by bilinear
/// interpolation (clamped to the box).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupTable {
    /// Vertices per axis.
    pub resolution: usize,
    pub bbox: [f64; 4],
    /// Row-major by `y` then `x`: vertex `(i, j)` sits at
    /// `(xmin + j·dx, ymin + i·dy)`.
    pub values: Vec<Point>,
}

impl LookupTable {
    pub fn build(map: &dyn PushMap, resolution: usize, bbox: [f64; 4]) -> Result<Self> {
        if resolution < 2 {
            return Err(domain("resolution", "needs at least 2 vertices per axis"));
        }
        let (dx, dy) = spacing(resolution, &bbox);
        let verts: Vec<Point> = (0..resolution * resolution)
            .map(|k| [bbox[0] + (k % resolution) as f64 * dx, bbox[2] + (k / resolution) as f64 * dy])
            .collect();
        let values = map.push(&verts)?;
        Ok(LookupTable { resolution, bbox, values })
    }

    pub fn eval(&self, p: Point) -> Point {
        let n = self.resolution;
        let (dx, dy) = spacing(n, &self.bbox);
        let gx = ((p[0] - self.bbox[0]) / dx).clamp(0.0, (n - 1) as f64);
        let gy = ((p[1] - self.bbox[2]) / dy).clamp(0.0, (n - 1) as f64);
        let j = (gx.floor() as usize).min(n - 2);
        let i = (gy.floor() as usize).min(n - 2);
        let (tx, ty) = (gx - j as f64, gy - i as f64);
        let v = |i: usize, j: usize| self.values[i * n + j];
        let (a, b, c, d) = (v(i, j), v(i, j + 1), v(i + 1, j), v(i + 1, j + 1));
        let mut out = [0.0; 2];
        for k in 0..2 {
            let lo = a[k] * (1.0 - tx) + b[k] * tx;
            let hi = c[k] * (1.0 - tx) + d[k] * tx;
            out[k] = lo * (1.0 - ty) + hi * ty;
        }
        out
    }
}

fn spacing(n: usize, bbox: &[f64; 4]) -> (f64, f64) {
    ((bbox[1] - bbox[0]) / (n - 1) as f64, (bbox[3] - bbox[2]) / (n - 1) as f64)
}

impl PushMap for LookupTable {
    fn push(&self, z: &[Point]) -> Result<Vec<Point>> {
        Ok(z.iter().map(|&p| self.eval(p)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeAudit {
    pub n_probes: usize,
    pub max_error: f64,
    pub mean_error: f64,
    pub tolerance: f64,
    pub within_tolerance: bool,
}

/// Compares the table with the direct map on uniform annulus probes.
pub fn probe_audit(
    map: &dyn PushMap,
    table: &LookupTable,
    delta: f64,
    n_probes: usize,
    tolerance: f64,
    seed: u64,
) -> Result<ProbeAudit> {
    let z = uniform_annulus_sample_with(&mut stream(seed, "lut-probe", 0), delta, n_probes);
    let exact = map.push(&z)?;
    let errs: Vec<f64> = z.iter().zip(&exact).map(|(p, e)| crate::dist(table.eval(*p), *e)).collect();
    let max_error = errs.iter().copied().fold(0.0, f64::max);
    Ok(ProbeAudit {
        n_probes,
        max_error,
        mean_error: errs.iter().sum::<f64>() / errs.len().max(1) as f64,
        tolerance,
        within_tolerance: max_error <= tolerance,
    })
}

/// Chebyshev interpolant of `r ↦ G(r·(cos θ, sin θ))` on `[δ, 1]`.
///
/// Latent legs run along rays, so one interpolant per cycle yields mapped
/// samples at any density along the leg without further integrations.
#[derive(Debug, Clone)]
pub struct RayInterpolant {
    pub theta: f64,
    lo: f64,
    hi: f64,
    nodes: Vec<f64>,
    values: Vec<Point>,
    weights: Vec<f64>,
}

impl RayInterpolant {
    pub fn eval(&self, r: f64) -> Point {
        let mut num = [0.0, 0.0];
        let mut den = 0.0;
        for ((&x, v), &w) in self.nodes.iter().zip(&self.values).zip(&self.weights) {
            let d = r - x;
            if d == 0.0 {
                return *v;
            }
            let c = w / d;
            num[0] += c * v[0];
            num[1] += c * v[1];
            den += c;
        }
        [num[0] / den, num[1] / den]
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

/// One interpolant per heading, with `n_nodes` Chebyshev–Lobatto nodes on
/// `[delta, 1]`. All nodes go through the map in one batch.
pub fn ray_interpolants(map: &dyn PushMap, thetas: &[f64], delta: f64, n_nodes: usize) -> Result<Vec<RayInterpolant>> {
    if n_nodes < 2 {
        return Err(domain("n_nodes", "needs at least 2 nodes"));
    }
    let m = n_nodes - 1;
    let nodes: Vec<f64> = (0..n_nodes)
        .map(|k| {
            let c = (std::f64::consts::PI * k as f64 / m as f64).cos();
            0.5 * (1.0 + delta) - 0.5 * (1.0 - delta) * c
        })
        .collect();
    let weights: Vec<f64> = (0..n_nodes)
        .map(|k| {
            let sgn = if k % 2 == 0 { 1.0 } else { -1.0 };
            if k == 0 || k == m {
                0.5 * sgn
            } else {
                sgn
            }
        })
        .collect();
    let pts: Vec<Point> = thetas
        .iter()
        .flat_map(|th| {
            let (s, c) = th.sin_cos();
            nodes.iter().map(move |r| [r * c, r * s])
        })
        .collect();
    let g = map.push(&pts)?;
    Ok(thetas
        .iter()
        .zip(g.chunks(n_nodes))
        .map(|(&theta, vals)| RayInterpolant {
            theta,
            lo: delta,
            hi: 1.0,
            nodes: nodes.clone(),
            values: vals.to_vec(),
            weights: weights.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, Layer};
    use ndarray::{array, Array1};

    /// `v(s, y) = A y + c` as a single affine layer.
    pub(crate) fn affine_field(a: Mat2, c: Point) -> MlpParams {
        let w = array![[0.0, a[0][0], a[0][1]], [0.0, a[1][0], a[1][1]]];
        MlpParams::from_layers(Activation::Identity, vec![Layer { w, b: Array1::from(vec![c[0], c[1]]) }]).unwrap()
    }

    fn rotation(theta: f64, p: Point) -> Point {
        let (s, c) = theta.sin_cos();
        [c * p[0] - s * p[1], s * p[0] + c * p[1]]
    }

    #[test]
    fn zero_and_constant_fields() {
        let zero = FlowMap::new(affine_field([[0.0; 2]; 2], [0.0, 0.0]), 50).unwrap();
        assert_eq!(zero.integrate([0.3, -0.2]).unwrap(), [0.3, -0.2]);
        let c = FlowMap::new(affine_field([[0.0; 2]; 2], [0.25, -0.5]), 3).unwrap();
        let y = c.integrate([0.1, 0.1]).unwrap();
        assert!((y[0] - 0.35).abs() < 1e-15 && (y[1] + 0.4).abs() < 1e-15);
        let j = jacobian(&c, [0.2, 0.2], 1e-3).unwrap();
        assert!((j[0][0] - 1.0).abs() < 1e-9 && j[0][1].abs() < 1e-9 && (j[1][1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_field_matches_matrix_exponential() {
        let f = FlowMap::new(affine_field([[0.0, -1.0], [1.0, 0.0]], [0.0, 0.0]), 50).unwrap();
        let z = [0.6, 0.3];
        let y = f.integrate(z).unwrap();
        assert!(crate::dist(y, rotation(1.0, z)) < 1e-8);
        let j = jacobian(&f, z, 1e-3).unwrap();
        let (s, c) = 1f64.sin_cos();
        let exp_a = [[c, -s], [s, c]];
        for r in 0..2 {
            for k in 0..2 {
                assert!((j[r][k] - exp_a[r][k]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let z = [0.6, 0.3];
        let exact = rotation(1.0, z);
        let err = |n: usize| {
            let f = FlowMap::new(affine_field([[0.0, -1.0], [1.0, 0.0]], [0.0, 0.0]), n).unwrap();
            crate::dist(f.integrate(z).unwrap(), exact)
        };
        let ratio = err(5) / err(10);
        assert!((12.0..=20.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn sigma_max_matches_known_values() {
        assert!((sigma_max(&[[3.0, 0.0], [0.0, 1.0]]) - 3.0).abs() < 1e-14);
        assert!((sigma_max(&[[0.0, -2.0], [2.0, 0.0]]) - 2.0).abs() < 1e-14);
        assert!((power_sigma(&[[1.0, 2.0], [0.0, 1.0]], [1.0, 0.0], 50) - (1.0 + 2f64.sqrt())).abs() < 1e-10);
    }

    #[test]
    fn identity_lookup_table_is_exact() {
        let id = FnMap(|p: Point| p);
        let lut = LookupTable::build(&id, 7, [-1.0, 1.0, -1.0, 1.0]).unwrap();
        let audit = probe_audit(&id, &lut, 0.05, 500, 1e-12, 1).unwrap();
        assert!(audit.within_tolerance, "{}", audit.max_error);
    }

    #[test]
    fn ray_interpolant_reproduces_smooth_map() {
        let m = FnMap(|p: Point| [p[0].sin() + p[1] * p[1], (p[0] * p[1]).exp()]);
        let rays = ray_interpolants(&m, &[0.3, 2.0], 0.01, 32).unwrap();
        for ray in &rays {
            let (s, c) = ray.theta.sin_cos();
            for k in 0..50 {
                let r = 0.01 + 0.99 * k as f64 / 49.0;
                let e = (m.0)([r * c, r * s]);
                assert!(crate::dist(ray.eval(r), e) < 1e-12);
            }
        }
    }

    #[test]
    fn hessian_of_quadratic() {
        let m = FnMap(|p: Point| [p[0] * p[0], 0.0]);
        let h = hessian_tensor_norms(&m, &[[0.3, 0.1]], 1e-3).unwrap();
        assert!((h[0] - 2.0).abs() < 1e-6);
    }
}
