//! Coverage, constraint, energy and bound diagnostics.
//!
//! Grids are row-major with row `i` running along `y` from `ymin`, matching
//! [`crate::targets::GriddedDensity`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cfm::Disc;
use crate::energy::{leg_moments, numeric_energy, EnergyMoments};
use crate::error::{domain, Error, Result};
use crate::flow::{hessian_tensor_norms, pushforward_trajectory, ray_interpolants, PushMap};
use crate::latent::{generate_trajectory, uniform_annulus_sample_with};
use crate::ot::exact_w2;
use crate::rng::{derive_seed, stream};
use crate::targets::TargetSpec;
use crate::trajectory::Trajectory;
use crate::Point;

pub const DEFAULT_GRID: usize = 50;
pub const UNIT_BOX: [f64; 4] = [-1.0, 1.0, -1.0, 1.0];
/// Poincaré constant of the unit disc, `1/(j′₁,₁)²`.
pub const POINCARE_DISC: f64 = 0.294_989;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub size: usize,
    pub bbox: [f64; 4],
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn zeros(size: usize, bbox: [f64; 4]) -> Result<Self> {
        if size == 0 {
            return Err(domain("grid_size", "must be positive"));
        }
        if !(bbox[1] > bbox[0] && bbox[3] > bbox[2]) {
            return Err(domain("bbox", "must have positive extent"));
        }
        Ok(GridDensity { size, bbox, values: vec![0.0; size * size] })
    }

    /// Cell index of `p`, or `None` outside the box. The upper edges belong
    /// to the last cells.
    pub fn cell_of(&self, p: Point) -> Option<usize> {
        let [x0, x1, y0, y1] = self.bbox;
        if !(p[0] >= x0 && p[0] <= x1 && p[1] >= y0 && p[1] <= y1) {
            return None;
        }
        let n = self.size;
        let j = (((p[0] - x0) / (x1 - x0) * n as f64) as usize).min(n - 1);
        let i = (((p[1] - y0) / (y1 - y0) * n as f64) as usize).min(n - 1);
        Some(i * n + j)
    }

    pub fn center(&self, cell: usize) -> Point {
        let [x0, x1, y0, y1] = self.bbox;
        let n = self.size as f64;
        let (i, j) = (cell / self.size, cell % self.size);
        [x0 + (j as f64 + 0.5) * (x1 - x0) / n, y0 + (i as f64 + 0.5) * (y1 - y0) / n]
    }

    pub fn add(&mut self, p: Point, w: f64) {
        if let Some(c) = self.cell_of(p) {
            self.values[c] += w;
        }
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Copy scaled to unit total mass.
    pub fn normalized(&self) -> Result<Self> {
        let t = self.total();
        if !(t > 0.0) {
            return Err(Error::Empty("grid mass"));
        }
        Ok(GridDensity { values: self.values.iter().map(|v| v / t).collect(), ..self.clone() })
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.size != other.size || self.bbox != other.bbox {
            return Err(Error::Shape(format!("grid {}x{} vs {}x{}", self.size, self.size, other.size, other.size)));
        }
        Ok(())
    }
}

/// Sample counts per cell. Points outside `bbox` are dropped.
pub fn grid_histogram(points: &[Point], grid_size: usize, bbox: [f64; 4]) -> Result<GridDensity> {
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    let mut g = GridDensity::zeros(grid_size, bbox)?;
    for &p in points {
        g.add(p, 1.0);
    }
    Ok(g)
}

/// Time-occupancy: each sample carries weight `dt`.
pub fn grid_histogram_traj(traj: &Trajectory, grid_size: usize, bbox: [f64; 4]) -> Result<GridDensity> {
    if traj.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let mut g = GridDensity::zeros(grid_size, bbox)?;
    for s in &traj.samples {
        g.add(s.pos, traj.dt);
    }
    Ok(g)
}

/// Target density evaluated at cell centres.
pub fn density_grid(target: &TargetSpec, grid_size: usize, bbox: [f64; 4]) -> Result<GridDensity> {
    let mut g = GridDensity::zeros(grid_size, bbox)?;
    for c in 0..g.values.len() {
        g.values[c] = target.density(g.center(c));
    }
    Ok(g)
}

pub fn pearson_corr(a: &GridDensity, b: &GridDensity) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.values.len() as f64;
    let ma = a.values.iter().sum::<f64>() / n;
    let mb = b.values.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(domain("grid", "zero variance"));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// RMSE over cells after normalizing both grids to unit mass.
pub fn grid_rmse(a: &GridDensity, b: &GridDensity) -> Result<f64> {
    a.same_shape(b)?;
    let (a, b) = (a.normalized()?, b.normalized()?);
    let s: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((s / a.values.len() as f64).sqrt())
}

/// Weighted mass per region, normalized to fractions. `classify` returns
/// the region index of a point, or `None` for points outside every region.
pub fn region_fractions(points: &[Point], m: usize, classify: impl Fn(Point) -> Option<usize>) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::Empty("regions"));
    }
    let mut c = vec![0.0; m];
    for &p in points {
        if let Some(k) = classify(p) {
            if k >= m {
                return Err(Error::Shape(format!("region {k} of {m}")));
            }
            c[k] += 1.0;
        }
    }
    let t: f64 = c.iter().sum();
    if t == 0.0 {
        return Err(Error::Empty("region mass"));
    }
    Ok(c.into_iter().map(|v| v / t).collect())
}

/// `100 · Σ|cᵢ − dᵢ|` between achieved and target fractions (both are
/// renormalized first).
pub fn l1_allocation(achieved: &[f64], target: &[f64]) -> Result<f64> {
    if achieved.is_empty() {
        return Err(Error::Empty("regions"));
    }
    if achieved.len() != target.len() {
        return Err(Error::Shape(format!("{} achieved vs {} target regions", achieved.len(), target.len())));
    }
    let (sa, st): (f64, f64) = (achieved.iter().sum(), target.iter().sum());
    if !(sa > 0.0 && st > 0.0) {
        return Err(domain("masses", "must have positive total"));
    }
    Ok(100.0 * achieved.iter().zip(target).map(|(a, t)| (a / sa - t / st).abs()).sum::<f64>())
}

/// `(Σw)² / (m Σw²)`.
pub fn jains_index(ratios: &[f64]) -> Result<f64> {
    if ratios.is_empty() {
        return Err(Error::Empty("ratios"));
    }
    if ratios.iter().any(|w| !(*w >= 0.0)) {
        return Err(domain("ratios", "must be nonnegative"));
    }
    let s: f64 = ratios.iter().sum();
    let s2: f64 = ratios.iter().map(|w| w * w).sum();
    if s2 == 0.0 {
        return Err(domain("ratios", "all zero"));
    }
    Ok(s * s / (ratios.len() as f64 * s2))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NfzMetrics {
    pub frac_inside: f64,
    pub max_depth: f64,
    pub n_incursions: usize,
    pub dwell_time: f64,
}

pub fn nfz_metrics(traj: &Trajectory, discs: &[Disc]) -> Result<NfzMetrics> {
    if discs.is_empty() {
        return Err(Error::Empty("discs"));
    }
    if traj.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let mut m = NfzMetrics::default();
    let mut inside_prev = false;
    let mut count = 0usize;
    for s in &traj.samples {
        let depth = discs.iter().map(|d| d.radius - crate::dist(s.pos, d.center)).fold(f64::NEG_INFINITY, f64::max);
        let inside = depth > 0.0;
        if inside {
            count += 1;
            m.max_depth = m.max_depth.max(depth);
            if !inside_prev {
                m.n_incursions += 1;
            }
        }
        inside_prev = inside;
    }
    m.frac_inside = count as f64 / traj.len() as f64;
    m.dwell_time = count as f64 * traj.dt;
    Ok(m)
}

/// `E_acc(x) / E_acc(z)` from numeric leg energies.
pub fn acc_ratio(target_traj: &Trajectory, latent_traj: &Trajectory) -> Result<f64> {
    if target_traj.len() != latent_traj.len() {
        return Err(Error::Shape("trajectories differ in length".into()));
    }
    let x = numeric_energy(target_traj)?;
    let z = numeric_energy(latent_traj)?;
    if !(z.e_acc > 0.0) {
        return Err(domain("latent", "zero acceleration energy"));
    }
    Ok(x.e_acc / z.e_acc)
}

/// Energies of latent legs and their images, per unit-duration leg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayEnergy {
    pub e_acc_x: f64,
    pub e_acc_z: f64,
    pub phi4_z: f64,
    pub ratio: f64,
}

/// Leg energies along radial rays at the given headings. Each mapped leg is
/// sampled at `n_per_leg` points from a Chebyshev interpolant with
/// `n_nodes` flow evaluations, so fine sampling near the inner radius costs
/// no extra integrations. Return legs retrace outward legs, so one leg per
/// heading carries the full ratio.
pub fn acc_ratio_on_rays(
    map: &dyn PushMap,
    delta: f64,
    thetas: &[f64],
    n_per_leg: usize,
    n_nodes: usize,
) -> Result<RayEnergy> {
    if thetas.is_empty() {
        return Err(Error::Empty("thetas"));
    }
    let rays = ray_interpolants(map, thetas, delta, n_nodes)?;
    let h = 1.0 / (n_per_leg as f64 - 1.0);
    let a = 1.0 - delta * delta;
    let radii: Vec<f64> = (0..n_per_leg).map(|j| (delta * delta + a * j as f64 * h).sqrt()).collect();
    let (mut ex, mut ez, mut pz) = (0.0, 0.0, 0.0);
    for ray in &rays {
        let (sn, cs) = ray.theta.sin_cos();
        let z: Vec<Point> = radii.iter().map(|r| [r * cs, r * sn]).collect();
        let x: Vec<Point> = radii.iter().map(|&r| ray.eval(r)).collect();
        let (e, p, _, _) = leg_moments(&z, h)?;
        ez += e;
        pz += p;
        ex += leg_moments(&x, h)?.0;
    }
    let k = rays.len() as f64;
    Ok(RayEnergy { e_acc_x: ex / k, e_acc_z: ez / k, phi4_z: pz / k, ratio: ex / ez })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Slack on the right-hand side, absorbing the lower-bound nature of
/// sampled Lipschitz estimates.
pub const ACC_BOUND_SLACK: f64 = 0.05;

/// `√E_acc(x) ≤ L √E_acc(z) + M_H √Φ₄(z)`.
pub fn bound_check_acceleration(e_acc_x: f64, latent: &EnergyMoments, l_hat: f64, m_h_hat: f64) -> AccBound {
    let lhs = e_acc_x.sqrt();
    let rhs = l_hat * latent.e_acc.sqrt() + m_h_hat * latent.phi4.sqrt();
    AccBound { lhs, rhs, holds: lhs <= (1.0 + ACC_BOUND_SLACK) * rhs }
}

pub fn bound_check_trajectories(target: &Trajectory, latent: &Trajectory, l_hat: f64, m_h_hat: f64) -> Result<AccBound> {
    let x = numeric_energy(target)?;
    let z = numeric_energy(latent)?;
    Ok(bound_check_acceleration(x.e_acc, &z, l_hat, m_h_hat))
}

/// Largest finite-difference Hessian tensor norm over `n` uniform annulus
/// samples.
pub fn m_h_hat(map: &dyn PushMap, delta: f64, n: usize, h: f64, seed: u64) -> Result<f64> {
    let z = uniform_annulus_sample_with(&mut stream(seed, "m-h", 0), delta, n);
    Ok(hessian_tensor_norms(map, &z, h)?.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub ks: Vec<usize>,
    pub seeds_per_k: usize,
    pub n_reference: usize,
    pub n_per_leg: usize,
    pub grid_size: usize,
    pub bbox: [f64; 4],
    pub delta: f64,
}

impl ConvergenceConfig {
    pub fn standard(delta: f64) -> Self {
        ConvergenceConfig {
            ks: vec![5, 10, 20, 50, 100],
            seeds_per_k: 5,
            n_reference: 20_000,
            n_per_leg: 100,
            grid_size: DEFAULT_GRID,
            bbox: UNIT_BOX,
            delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub ks: Vec<usize>,
    /// `rmse[i][j]` for `ks[i]` and seed index `j`.
    pub rmse: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Least-squares slope of `ln mean` against `ln K`.
    pub slope: f64,
}

/// Grid-RMSE between `K`-cycle time-occupancy and an i.i.d. pushforward
/// reference, across `K` and cycle-sampling seeds.
pub fn convergence_study(map: &dyn PushMap, cfg: &ConvergenceConfig, seed: u64) -> Result<ConvergenceStudy> {
    if cfg.ks.len() < 2 || cfg.seeds_per_k == 0 {
        return Err(domain("ks", "needs at least two K values and one seed"));
    }
    let z = uniform_annulus_sample_with(&mut stream(seed, "convergence-reference", 0), cfg.delta, cfg.n_reference);
    let reference = grid_histogram(&map.push(&z)?, cfg.grid_size, cfg.bbox)?;
    let mut rmse = Vec::with_capacity(cfg.ks.len());
    for &k in &cfg.ks {
        let mut row = Vec::with_capacity(cfg.seeds_per_k);
        for j in 0..cfg.seeds_per_k {
            let s = derive_seed(seed, "convergence", (k as u64) << 20 | j as u64);
            let latent = generate_trajectory(s, cfg.delta, k, cfg.n_per_leg, 1.0)?.to_trajectory();
            let mapped = pushforward_trajectory(map, &latent)?;
            row.push(grid_rmse(&grid_histogram_traj(&mapped, cfg.grid_size, cfg.bbox)?, &reference)?);
        }
        rmse.push(row);
    }
    let (mean, std): (Vec<f64>, Vec<f64>) = rmse.iter().map(|r| mean_std(r)).unzip();
    let lx: Vec<f64> = cfg.ks.iter().map(|&k| (k as f64).ln()).collect();
    let ly: Vec<f64> = mean.iter().map(|m| m.ln()).collect();
    Ok(ConvergenceStudy { ks: cfg.ks.clone(), rmse, mean, std, slope: ls_slope(&lx, &ly) })
}

/// Sample mean and (n−1) standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// `B √(2 ln(2/α) / K)`.
pub fn hoeffding_tail(b_phi: f64, k: usize, alpha: f64) -> Result<f64> {
    if k == 0 {
        return Err(domain("K", "must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    if !(b_phi >= 0.0) {
        return Err(domain("B_phi", "must be nonnegative"));
    }
    Ok(b_phi * (2.0 * (2.0 / alpha).ln() / k as f64).sqrt())
}

/// `L_φ e^{L_v} ε_v + L_φ η_top`.
pub fn end_to_end_floor(l_phi: f64, lv_hat: f64, eps_v: f64, eta_top: f64) -> Result<f64> {
    for (n, v) in [("L_phi", l_phi), ("Lv_hat", lv_hat), ("eps_v", eps_v), ("eta_top", eta_top)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(domain(n, format!("must be finite and nonnegative, got {v}")));
        }
    }
    Ok(l_phi * lv_hat.exp() * eps_v + l_phi * eta_top)
}

/// Topology residual: zero when the target support is an annulus like the
/// latent domain, `c_top · δ` otherwise.
pub fn eta_top(target: &TargetSpec, delta: f64, c_top: f64) -> f64 {
    if target.annular_support() {
        0.0
    } else {
        c_top * delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "k")]
pub enum SampleComplexity {
    Feasible(u64),
    /// The requested error does not exceed the floor; no `K` suffices.
    FloorDominates,
}

/// Smallest `K` with `K ≥ 2B² ln(2/α) / (ε − floor)²`.
pub fn sample_complexity(eps: f64, b_phi: f64, alpha: f64, floor: f64) -> Result<SampleComplexity> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    if eps <= floor {
        return Ok(SampleComplexity::FloorDominates);
    }
    let k = 2.0 * b_phi * b_phi * (2.0 / alpha).ln() / ((eps - floor) * (eps - floor));
    // Guard the ceiling against round-off just above an integer.
    let r = k.round();
    let k = if (k - r).abs() <= 1e-9 * r.max(1.0) { r } else { k.ceil() };
    Ok(SampleComplexity::Feasible((k as u64).max(1)))
}

/// Mean of `phi` over the samples of each cycle, in cycle order. Samples
/// are equally spaced in time, so this is the per-cycle time average.
pub fn cycle_averages(traj: &Trajectory, phi: impl Fn(Point) -> f64) -> Result<Vec<f64>> {
    if traj.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let mut out: Vec<(f64, usize)> = Vec::new();
    let mut current = None;
    for s in &traj.samples {
        if current != Some(s.cycle) {
            out.push((0.0, 0));
            current = Some(s.cycle);
        }
        let last = out.last_mut().expect("pushed above");
        last.0 += phi(s.pos);
        last.1 += 1;
    }
    Ok(out.into_iter().map(|(sum, n)| sum / n as f64).collect())
}

/// Empirical check of the concentration and variance bounds for the test
/// function `φ(x) = x₁` (so `L_φ = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingCoverage {
    pub k: usize,
    pub trials: usize,
    pub alpha: f64,
    /// `sup ‖G‖` over all evaluated points.
    pub b_phi: f64,
    /// `E[φ(G(Z))]` from i.i.d. pushforward samples.
    pub mu: f64,
    pub tail: f64,
    /// Fraction of trials with `|S_K − μ| > tail`.
    pub exceed_fraction: f64,
    /// Variance of single-cycle averages pooled over all trials.
    pub cycle_variance: f64,
    /// `C_D · L̂² · (1 + 10%)`.
    pub variance_envelope: f64,
}

/// Runs `trials` independent `k`-cycle trajectories through `map` and
/// compares the spread of their time averages of `x₁` with the Hoeffding
/// tail and the Poincaré variance envelope.
#[allow(clippy::too_many_arguments)]
pub fn hoeffding_coverage(
    map: &dyn PushMap,
    delta: f64,
    k: usize,
    trials: usize,
    alpha: f64,
    n_per_leg: usize,
    n_mu: usize,
    l_hat: f64,
    seed: u64,
) -> Result<HoeffdingCoverage> {
    if trials == 0 {
        return Err(domain("trials", "must be positive"));
    }
    let z = uniform_annulus_sample_with(&mut stream(seed, "hoeffding-mu", 0), delta, n_mu);
    let x = map.push(&z)?;
    let mu = x.iter().map(|p| p[0]).sum::<f64>() / x.len() as f64;
    let mut b_phi = x.iter().map(|p| crate::norm(*p)).fold(0.0, f64::max);
    let mut means = Vec::with_capacity(trials);
    let mut cycles = Vec::with_capacity(trials * k);
    for t in 0..trials {
        let s = derive_seed(seed, "hoeffding-trial", t as u64);
        let latent = generate_trajectory(s, delta, k, n_per_leg, 1.0)?.to_trajectory();
        let mapped = pushforward_trajectory(map, &latent)?;
        b_phi = mapped.points().map(crate::norm).fold(b_phi, f64::max);
        let avg = cycle_averages(&mapped, |p| p[0])?;
        means.push(avg.iter().sum::<f64>() / avg.len() as f64);
        cycles.extend(avg);
    }
    let tail = hoeffding_tail(b_phi, k, alpha)?;
    let exceed = means.iter().filter(|m| (*m - mu).abs() > tail).count();
    let (_, sd) = mean_std(&cycles);
    Ok(HoeffdingCoverage {
        k,
        trials,
        alpha,
        b_phi,
        mu,
        tail,
        exceed_fraction: exceed as f64 / trials as f64,
        cycle_variance: sd * sd,
        variance_envelope: POINCARE_DISC * l_hat * l_hat * 1.1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct W2Estimate {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

/// Exact `W₂` between `n` pushed annulus samples and `n` target samples,
/// once per seed.
pub fn w2_hat(map: &dyn PushMap, target: &TargetSpec, delta: f64, n: usize, seeds: &[u64]) -> Result<W2Estimate> {
    if seeds.is_empty() {
        return Err(Error::Empty("seeds"));
    }
    let mut values = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let z = uniform_annulus_sample_with(&mut stream(s, "w2-source", 0), delta, n);
        let x = target.sample_with(&mut stream(s, "w2-target", 0), n)?;
        values.push(exact_w2(&map.push(&z)?, &x)?);
    }
    let (mean, std) = mean_std(&values);
    Ok(W2Estimate { mean, std, values })
}

/// Sobolev-weighted distance between cosine-basis coefficients of two grids
/// on a square box: `Σ_k (1+‖k‖²)^{−3/2} (c_k − t_k)²` over modes
/// `0..n_modes` per axis, both grids normalized to unit mass.
pub fn fourier_ergodic_metric(occupancy: &GridDensity, target: &GridDensity, n_modes: usize) -> Result<f64> {
    occupancy.same_shape(target)?;
    let [x0, x1, y0, y1] = occupancy.bbox;
    if ((x1 - x0) - (y1 - y0)).abs() > 1e-12 * (x1 - x0) {
        return Err(domain("bbox", "must be square"));
    }
    let (a, b) = (occupancy.normalized()?, target.normalized()?);
    let n = a.size;
    // basis[k][j] = cos(k π u_j / L) at cell centres.
    let basis: Vec<Vec<f64>> = (0..n_modes)
        .map(|k| (0..n).map(|j| (k as f64 * PI * (j as f64 + 0.5) / n as f64).cos()).collect())
        .collect();
    let mut total = 0.0;
    for kx in 0..n_modes {
        for ky in 0..n_modes {
            let mut d = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let c = i * n + j;
                    d += (a.values[c] - b.values[c]) * basis[kx][j] * basis[ky][i];
                }
            }
            let w = (1.0 + (kx * kx + ky * ky) as f64).powf(-1.5);
            total += w * d * d;
        }
    }
    Ok(total)
}

/// Occupancy fractions on an equal-area polar partition of the annulus:
/// `n_radial` rings times `n_angular` sectors.
pub fn annulus_bin_fractions(points: &[Point], delta: f64, n_radial: usize, n_angular: usize) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    let mut c = vec![0.0; n_radial * n_angular];
    let a = 1.0 - delta * delta;
    for p in points {
        let r2 = p[0] * p[0] + p[1] * p[1];
        let u = ((r2 - delta * delta) / a).clamp(0.0, 1.0 - 1e-15);
        let ang = p[1].atan2(p[0]).rem_euclid(2.0 * PI) / (2.0 * PI);
        let ir = ((u * n_radial as f64) as usize).min(n_radial - 1);
        let ia = ((ang * n_angular as f64) as usize).min(n_angular - 1);
        c[ir * n_angular + ia] += 1.0;
    }
    let n = points.len() as f64;
    Ok(c.into_iter().map(|v| v / n).collect())
}

/// Pearson χ² statistic for `n_units` observations spread according to
/// `fractions`, against equal expected counts.
pub fn chi_square_uniform(fractions: &[f64], n_units: f64) -> f64 {
    let e = n_units / fractions.len() as f64;
    fractions.iter().map(|f| (f * n_units - e).powi(2) / e).sum()
}

/// Kolmogorov–Smirnov distance between the empirical radius distribution
/// and the uniform-annulus law `(r² − δ²)/(1 − δ²)`.
pub fn radial_ks(points: &[Point], delta: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    let mut u: Vec<f64> = points
        .iter()
        .map(|p| ((p[0] * p[0] + p[1] * p[1] - delta * delta) / (1.0 - delta * delta)).clamp(0.0, 1.0))
        .collect();
    u.sort_by(|a, b| a.total_cmp(b));
    let n = u.len() as f64;
    Ok(u.iter()
        .enumerate()
        .map(|(i, &f)| (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs()))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rho_iid: Option<f64>,
    pub rho_traj: Option<f64>,
    pub l1_allocation: Option<f64>,
    pub jain: Option<f64>,
    pub nfz: Option<NfzMetrics>,
    pub acc_ratio: Option<f64>,
    pub energy_proxy: Option<f64>,
    pub w2_hat: Option<W2Estimate>,
    #[serde(rename = "L_hat")]
    pub l_hat: Option<f64>,
    #[serde(rename = "Lv_hat")]
    pub lv_hat: Option<f64>,
    #[serde(rename = "Lv_net")]
    pub lv_net: Option<f64>,
    #[serde(rename = "M_H_hat")]
    pub m_h_hat: Option<f64>,
    pub eps_v: Option<f64>,
    pub eta_top: Option<f64>,
    pub floor: Option<f64>,
    pub sample_complexity_k: Option<SampleComplexity>,
    pub slope: Option<f64>,
    /// Spectral coverage distance; its normalization is this crate's own.
    pub fourier_metric: Option<f64>,
}
