//! Minibatch-OT conditional flow matching with soft constraint penalties.
//!
//! Every epoch draws a fresh source batch on the annulus and a fresh target
//! batch, couples them with Sinkhorn, samples one pair per source point and a
//! flow time `s ~ U[0,1]` per pair, and regresses `v_θ(s, (1−s)z₀ + s x₁)`
//! onto `x₁ − z₀`. One Adam step is taken per epoch. Penalties push latent
//! samples through a coarse RK4 flow and backpropagate through the
//! integrator stage by stage.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::flow::{points_to_rows, rows_to_points, PushMap};
use crate::latent::uniform_annulus_sample_with;
use crate::net::{adam_step, input_rows, AdamState, MlpParams, NetConfig, Tape};
use crate::ot::{barycentric_targets, sample_pairs_with, sinkhorn_anneal_gap, sinkhorn_plan, Pairing};
use crate::rng::{stream, Rng};
use crate::targets::TargetSpec;
use crate::Point;

/// Rows pushed through a penalty flow together.
const PENALTY_CHUNK: usize = 128;

/// A no-fly disc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disc {
    pub center: Point,
    pub radius: f64,
}

impl Disc {
    pub fn contains(&self, p: Point) -> bool {
        crate::dist(p, self.center) < self.radius
    }
}

fn default_rk4_train() -> usize {
    8
}
fn default_penalty_samples() -> usize {
    256
}
fn default_acc_samples() -> usize {
    16
}
fn default_fd_step() -> f64 {
    1e-2
}
fn default_chunk() -> usize {
    8
}
fn default_inference_steps() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_base: f64,
    pub eps_sink: f64,
    pub sinkhorn_iters: usize,
    pub seed: u64,
    pub delta: f64,
    #[serde(default)]
    pub lambda_nfz: f64,
    #[serde(default)]
    pub lambda_acc: f64,
    #[serde(default)]
    pub lambda_energy: f64,
    #[serde(default)]
    pub nfz_discs: Vec<Disc>,
    /// RK4 steps of the flow used inside penalties.
    #[serde(default = "default_rk4_train")]
    pub rk4_steps_train: usize,
    /// Latent samples per epoch for the NFZ and energy penalties.
    #[serde(default = "default_penalty_samples")]
    pub penalty_sample_count: usize,
    /// Latent samples per epoch for the Hessian penalty; each costs nine
    /// flow evaluations.
    #[serde(default = "default_acc_samples")]
    pub acc_sample_count: usize,
    #[serde(default = "default_fd_step")]
    pub acc_fd_step: f64,
    /// RK4 steps per energy chunk; gradients do not cross chunk boundaries.
    #[serde(default = "default_chunk")]
    pub energy_chunk_len: usize,
    /// RK4 steps of the deployed map.
    #[serde(default = "default_inference_steps")]
    pub inference_steps: usize,
    #[serde(default)]
    pub pairing: Pairing,
    pub net: NetConfig,
    pub target: TargetSpec,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.target.validate()?;
        if self.epochs == 0 {
            return Err(domain("epochs", "must be positive"));
        }
        if self.batch_size < 2 {
            return Err(domain("batch_size", "must be at least 2"));
        }
        if !(self.lr_base > 0.0 && self.lr_base.is_finite()) {
            return Err(domain("lr_base", "must be positive"));
        }
        if !(self.eps_sink > 0.0) {
            return Err(domain("eps_sink", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(domain("delta", "must lie in (0, 1)"));
        }
        for (name, v) in [
            ("lambda_nfz", self.lambda_nfz),
            ("lambda_acc", self.lambda_acc),
            ("lambda_energy", self.lambda_energy),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(domain(name, format!("must be nonnegative, got {v}")));
            }
        }
        if self.nfz_discs.iter().any(|d| !(d.radius > 0.0)) {
            return Err(domain("nfz_discs", "radii must be positive"));
        }
        if self.rk4_steps_train == 0 || self.inference_steps == 0 {
            return Err(domain("rk4_steps_train", "step counts must be positive"));
        }
        if self.energy_chunk_len == 0 || self.energy_chunk_len > self.rk4_steps_train {
            return Err(domain("energy_chunk_len", "must lie in 1..=rk4_steps_train"));
        }
        if !(self.acc_fd_step > 0.0) {
            return Err(domain("acc_fd_step", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub cfm_loss: Vec<f64>,
    pub nfz_penalty: Vec<f64>,
    pub acc_penalty: Vec<f64>,
    pub energy_penalty: Vec<f64>,
    pub total_loss: Vec<f64>,
    pub eps_v: Option<f64>,
    /// Entropic minus exact transport cost on a held-out batch after
    /// training.
    pub sinkhorn_gap: Option<f64>,
    pub wall_clock_s: f64,
}

/// Value of a loss term and its parameter gradient.
pub struct Graded {
    pub value: f64,
    pub grads: MlpParams,
}

/// Regression loss on coupled pairs. Draws one `s ~ U[0,1]` per pair from
/// `rng`.
pub fn cfm_batch_loss(
    params: &MlpParams,
    source: &[Point],
    target: &[Point],
    pairs: &[(usize, usize)],
    rng: &mut Rng,
) -> Result<Graded> {
    if pairs.is_empty() {
        return Err(Error::Empty("pairs"));
    }
    let mut s = Vec::with_capacity(pairs.len());
    let mut y = Vec::with_capacity(pairs.len());
    let mut u = Array2::zeros((pairs.len(), 2));
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let (z0, x1) = match (source.get(i), target.get(j)) {
            (Some(a), Some(b)) => (*a, *b),
            _ => return Err(Error::Shape(format!("pair ({i}, {j}) out of range"))),
        };
        let t: f64 = rng.random();
        s.push(t);
        y.push([(1.0 - t) * z0[0] + t * x1[0], (1.0 - t) * z0[1] + t * x1[1]]);
        u[[k, 0]] = x1[0] - z0[0];
        u[[k, 1]] = x1[1] - z0[1];
    }
    let (value, grads) = params.loss_and_grad(input_rows(&s, &y).view(), u.view())?;
    Ok(Graded { value, grads })
}

struct StageTape {
    tape: Tape,
    k: Array2<f64>,
}

/// Forward RK4 over steps `first..first+count` of an `n_steps` grid,
/// recording each stage.
fn rk4_taped(
    params: &MlpParams,
    y0: &Array2<f64>,
    n_steps: usize,
    first: usize,
    count: usize,
) -> (Array2<f64>, Vec<[StageTape; 4]>) {
    let h = 1.0 / n_steps as f64;
    let mut y = y0.clone();
    let mut tapes = Vec::with_capacity(count);
    let eval = |s: f64, y: &Array2<f64>| {
        let mut x = Array2::from_elem((y.nrows(), 3), s);
        x.slice_mut(s![.., 1..3]).assign(y);
        let (k, tape) = params.forward_tape(x.view());
        StageTape { tape, k }
    };
    for step in first..first + count {
        let s0 = step as f64 * h;
        let a = eval(s0, &y);
        let b = eval(s0 + 0.5 * h, &(&y + &(&a.k * (0.5 * h))));
        let c = eval(s0 + 0.5 * h, &(&y + &(&b.k * (0.5 * h))));
        let d = eval(s0 + h, &(&y + &(&c.k * h)));
        y = &y + &((&a.k + &(&b.k * 2.0) + &(&c.k * 2.0) + &d.k) * (h / 6.0));
        tapes.push([a, b, c, d]);
    }
    (y, tapes)
}

/// Reverse pass through recorded RK4 steps. `adj` is the gradient at the end
/// state; `energy_coef` adds `energy_coef · Σ w_j ‖k_j‖²` (RK4 weights) to
/// the objective. Returns the gradient at the start state.
fn rk4_backward(
    params: &MlpParams,
    tapes: &[[StageTape; 4]],
    n_steps: usize,
    mut adj: Array2<f64>,
    energy_coef: f64,
    grads: &mut MlpParams,
) -> Array2<f64> {
    let h = 1.0 / n_steps as f64;
    let weights = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
    for st in tapes.iter().rev() {
        let mut dk: Vec<Array2<f64>> = weights.iter().map(|w| &adj * *w).collect();
        if energy_coef != 0.0 {
            for j in 0..4 {
                dk[j].scaled_add(2.0 * energy_coef * weights[j], &st[j].k);
            }
        }
        let mut dy = adj;
        // Stage j's input is y + c_j h k_{j−1}.
        let feed = [0.0, 0.5 * h, 0.5 * h, h];
        for j in (0..4).rev() {
            let gin = params.backward(&st[j].tape, dk[j].view(), grads);
            let gy = gin.slice(s![.., 1..3]).to_owned();
            dy += &gy;
            if j > 0 {
                dk[j - 1].scaled_add(feed[j], &gy);
            }
        }
        adj = dy;
    }
    adj
}


fn hinge_terms(g: Point, discs: &[Disc]) -> (f64, Point) {
    let mut val = 0.0;
    let mut grad = [0.0, 0.0];
    for d in discs {
        let diff = [g[0] - d.center[0], g[1] - d.center[1]];
        let dist = crate::norm(diff);
        let m = d.radius - dist;
        if m > 0.0 {
            val += m * m;
            if dist > 0.0 {
                grad[0] -= 2.0 * m * diff[0] / dist;
                grad[1] -= 2.0 * m * diff[1] / dist;
            }
        }
    }
    (val, grad)
}

/// `mean_z Σ_discs max(0, r − ‖G(z) − c‖)²` through an `rk4_steps` flow.
pub fn nfz_penalty(params: &MlpParams, latent: &[Point], discs: &[Disc], rk4_steps: usize) -> Result<Graded> {
    let mut grads = params.zeros_like();
    let n = latent.len() as f64;
    let mut value = 0.0;
    for chunk in latent.chunks(PENALTY_CHUNK) {
        let (g, tapes) = rk4_taped(params, &points_to_rows(chunk), rk4_steps, 0, rk4_steps);
        let mut adj = Array2::zeros(g.dim());
        let mut active = false;
        for i in 0..g.nrows() {
            let (v, d) = hinge_terms([g[[i, 0]], g[[i, 1]]], discs);
            value += v / n;
            adj[[i, 0]] = d[0] / n;
            adj[[i, 1]] = d[1] / n;
            active |= v > 0.0;
        }
        if active {
            rk4_backward(params, &tapes, rk4_steps, adj, 0.0, &mut grads);
        }
    }
    check_finite(value, &grads)?;
    Ok(Graded { value, grads })
}

/// NFZ penalty value of an arbitrary map.
pub fn nfz_penalty_value(map: &dyn PushMap, latent: &[Point], discs: &[Disc]) -> Result<f64> {
    let g = map.push(latent)?;
    Ok(g.iter().map(|p| hinge_terms(*p, discs).0).sum::<f64>() / latent.len() as f64)
}

/// Nine-point stencil offsets: centre, ±x, ±y, then the diagonals.
fn stencil(h: f64) -> [[f64; 2]; 9] {
    [[0.0, 0.0], [h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h], [h, h], [h, -h], [-h, h], [-h, -h]]
}

/// Squared Frobenius norm of the finite-difference Hessian tensor at one
/// point from the nine stencil values, with its gradient in those values.
fn hessian_frob(q: &[Point], h: f64) -> (f64, [[f64; 2]; 9]) {
    let h2 = h * h;
    let mut val = 0.0;
    let mut d = [[0.0; 2]; 9];
    for k in 0..2 {
        let hxx = (q[1][k] - 2.0 * q[0][k] + q[2][k]) / h2;
        let hyy = (q[3][k] - 2.0 * q[0][k] + q[4][k]) / h2;
        let hxy = (q[5][k] - q[6][k] - q[7][k] + q[8][k]) / (4.0 * h2);
        val += hxx * hxx + hyy * hyy + 2.0 * hxy * hxy;
        let (gxx, gyy, gxy) = (2.0 * hxx / h2, 2.0 * hyy / h2, 4.0 * hxy / (4.0 * h2));
        d[0][k] += -2.0 * gxx - 2.0 * gyy;
        d[1][k] += gxx;
        d[2][k] += gxx;
        d[3][k] += gyy;
        d[4][k] += gyy;
        d[5][k] += gxy;
        d[6][k] -= gxy;
        d[7][k] -= gxy;
        d[8][k] += gxy;
    }
    (val, d)
}

/// `mean_z ‖H_G(z)‖²_F` from a nine-point finite-difference stencil of
/// step `fd_step`, through an `rk4_steps` flow.
pub fn acc_penalty(params: &MlpParams, latent: &[Point], fd_step: f64, rk4_steps: usize) -> Result<Graded> {
    if !(fd_step > 0.0) {
        return Err(domain("fd_step", "must be positive"));
    }
    let offs = stencil(fd_step);
    let n = latent.len() as f64;
    let mut grads = params.zeros_like();
    let mut value = 0.0;
    for chunk in latent.chunks((PENALTY_CHUNK / 9).max(1)) {
        let probes: Vec<Point> = chunk.iter().flat_map(|p| offs.iter().map(move |o| [p[0] + o[0], p[1] + o[1]])).collect();
        let (g, tapes) = rk4_taped(params, &points_to_rows(&probes), rk4_steps, 0, rk4_steps);
        let gp = rows_to_points(&g);
        let mut adj = Array2::zeros(g.dim());
        for (c, q) in gp.chunks(9).enumerate() {
            let (v, d) = hessian_frob(q, fd_step);
            value += v / n;
            for (t, dt) in d.iter().enumerate() {
                adj[[9 * c + t, 0]] = dt[0] / n;
                adj[[9 * c + t, 1]] = dt[1] / n;
            }
        }
        rk4_backward(params, &tapes, rk4_steps, adj, 0.0, &mut grads);
    }
    check_finite(value, &grads)?;
    Ok(Graded { value, grads })
}

/// Hessian penalty value of an arbitrary map.
pub fn acc_penalty_value(map: &dyn PushMap, latent: &[Point], fd_step: f64) -> Result<f64> {
    let offs = stencil(fd_step);
    let probes: Vec<Point> = latent.iter().flat_map(|p| offs.iter().map(move |o| [p[0] + o[0], p[1] + o[1]])).collect();
    let g = map.push(&probes)?;
    Ok(g.chunks(9).map(|q| hessian_frob(q, fd_step).0).sum::<f64>() / latent.len() as f64)
}

/// Mean over samples of `∫₀¹ ‖v(s, y_s)‖² ds` along the `rk4_steps` flow,
/// with RK4 stage weights as the quadrature. Gradients are truncated at
/// chunk boundaries of `chunk_len` steps.
pub fn energy_penalty(params: &MlpParams, latent: &[Point], rk4_steps: usize, chunk_len: usize) -> Result<Graded> {
    if chunk_len == 0 || chunk_len > rk4_steps {
        return Err(domain("chunk_len", "must lie in 1..=rk4_steps"));
    }
    let n = latent.len() as f64;
    let h = 1.0 / rk4_steps as f64;
    let w = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
    let mut grads = params.zeros_like();
    let mut value = 0.0;
    for chunk in latent.chunks(PENALTY_CHUNK) {
        let mut y = points_to_rows(chunk);
        let mut first = 0;
        while first < rk4_steps {
            let count = chunk_len.min(rk4_steps - first);
            let (end, tapes) = rk4_taped(params, &y, rk4_steps, first, count);
            for st in &tapes {
                for j in 0..4 {
                    value += w[j] * st[j].k.iter().map(|v| v * v).sum::<f64>() / n;
                }
            }
            rk4_backward(params, &tapes, rk4_steps, Array2::zeros(end.dim()), 1.0 / n, &mut grads);
            y = end;
            first += count;
        }
    }
    check_finite(value, &grads)?;
    Ok(Graded { value, grads })
}

fn check_finite(value: f64, grads: &MlpParams) -> Result<()> {
    if value.is_finite() && grads.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("penalty".into()))
    }
}

/// `√(median of the last 5% of CFM losses)`, taking the irreducible loss
/// as zero.
pub fn epsilon_v_from_log(log: &TrainLog) -> Result<f64> {
    let n = log.cfm_loss.len();
    if n < 20 {
        return Err(domain("log", format!("needs at least 20 epochs, has {n}")));
    }
    let tail = (n as f64 * 0.05).ceil() as usize;
    let mut last: Vec<f64> = log.cfm_loss[n - tail..].to_vec();
    last.sort_by(|a, b| a.total_cmp(b));
    let m = last.len();
    let median = if m % 2 == 1 { last[m / 2] } else { 0.5 * (last[m / 2 - 1] + last[m / 2]) };
    Ok(median.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub cfm_loss: f64,
    pub total_loss: f64,
}

/// Stateful training loop; parameters only change when an epoch completes
/// with finite loss and gradients, so after a failure [`Trainer::params`]
/// is the last good state.
pub struct Trainer {
    pub config: TrainConfig,
    params: MlpParams,
    adam: AdamState,
    log: TrainLog,
    epoch: usize,
    started: Instant,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = MlpParams::init(&config.net, config.seed)?;
        let adam = AdamState::new(&params, config.lr_base, config.epochs);
        Ok(Trainer { config, params, adam, log: TrainLog::default(), epoch: 0, started: Instant::now() })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn step(&mut self) -> Result<EpochStats> {
        let c = &self.config;
        let epoch = self.epoch;
        let mut rng = stream(c.seed, "epoch", epoch as u64);
        let src = uniform_annulus_sample_with(&mut rng, c.delta, c.batch_size);
        let tgt = c.target.sample_with(&mut rng, c.batch_size)?;
        let plan = sinkhorn_plan(&src, &tgt, c.eps_sink, c.sinkhorn_iters)?;
        let Graded { value: cfm, mut grads } = match c.pairing {
            Pairing::Sample => {
                let pairs = sample_pairs_with(&plan, &mut rng)?;
                cfm_batch_loss(&self.params, &src, &tgt, &pairs, &mut rng)?
            }
            Pairing::Barycentric => {
                let bary = barycentric_targets(&plan, &tgt)?;
                let pairs: Vec<(usize, usize)> = (0..src.len()).map(|i| (i, i)).collect();
                cfm_batch_loss(&self.params, &src, &bary, &pairs, &mut rng)?
            }
        };
        let mut total = cfm;
        let (mut nfz, mut acc, mut energy) = (0.0, 0.0, 0.0);
        if c.lambda_nfz > 0.0 && !c.nfz_discs.is_empty() {
            let z = uniform_annulus_sample_with(&mut stream(c.seed, "nfz", epoch as u64), c.delta, c.penalty_sample_count);
            let g = nfz_penalty(&self.params, &z, &c.nfz_discs, c.rk4_steps_train)?;
            grads.add_scaled(c.lambda_nfz, &g.grads);
            nfz = g.value;
            total += c.lambda_nfz * nfz;
        }
        if c.lambda_acc > 0.0 {
            let z = uniform_annulus_sample_with(&mut stream(c.seed, "acc", epoch as u64), c.delta, c.acc_sample_count);
            let g = acc_penalty(&self.params, &z, c.acc_fd_step, c.rk4_steps_train)?;
            grads.add_scaled(c.lambda_acc, &g.grads);
            acc = g.value;
            total += c.lambda_acc * acc;
        }
        if c.lambda_energy > 0.0 {
            let z = uniform_annulus_sample_with(&mut stream(c.seed, "energy", epoch as u64), c.delta, c.penalty_sample_count);
            let g = energy_penalty(&self.params, &z, c.rk4_steps_train, c.energy_chunk_len)?;
            grads.add_scaled(c.lambda_energy, &g.grads);
            energy = g.value;
            total += c.lambda_energy * energy;
        }
        if !(total.is_finite() && grads.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        adam_step(&mut self.params, &mut self.adam, &grads);
        if !self.params.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        self.log.cfm_loss.push(cfm);
        self.log.nfz_penalty.push(nfz);
        self.log.acc_penalty.push(acc);
        self.log.energy_penalty.push(energy);
        self.log.total_loss.push(total);
        self.epoch += 1;
        Ok(EpochStats { epoch, cfm_loss: cfm, total_loss: total })
    }

    /// Closes the log: ε_v, the Sinkhorn gap proxy and wall-clock time.
    pub fn finish(mut self) -> Result<Trained> {
        if self.log.cfm_loss.len() >= 20 {
            self.log.eps_v = Some(epsilon_v_from_log(&self.log)?);
        }
        let c = &self.config;
        let mut rng = stream(c.seed, "sinkhorn-gap", 0);
        let n = c.batch_size.min(256);
        let src = uniform_annulus_sample_with(&mut rng, c.delta, n);
        let tgt = c.target.sample_with(&mut rng, n)?;
        self.log.sinkhorn_gap = Some(sinkhorn_anneal_gap(&src, &tgt, c.eps_sink, c.sinkhorn_iters)?);
        self.log.wall_clock_s = self.started.elapsed().as_secs_f64();
        Ok(Trained { config: self.config, params: self.params, log: self.log })
    }
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub config: TrainConfig,
    pub params: MlpParams,
    pub log: TrainLog,
}

impl Trained {
    pub fn flow_map(&self) -> crate::flow::FlowMap {
        crate::flow::FlowMap { params: self.params.clone(), n_steps: self.config.inference_steps }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            log_tail: LogTail::from_log(&self.log),
        }
    }
}

/// Runs every epoch. On divergence the error names the epoch.
pub fn train(config: &TrainConfig) -> Result<Trained> {
    let mut t = Trainer::new(config.clone())?;
    while !t.done() {
        t.step()?;
    }
    t.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogTail {
    pub epochs: usize,
    pub final_cfm_loss: f64,
    pub final_total_loss: f64,
    pub eps_v: Option<f64>,
    pub sinkhorn_gap: Option<f64>,
}

impl LogTail {
    pub fn from_log(log: &TrainLog) -> Self {
        LogTail {
            epochs: log.cfm_loss.len(),
            final_cfm_loss: log.cfm_loss.last().copied().unwrap_or(f64::NAN),
            final_total_loss: log.total_loss.last().copied().unwrap_or(f64::NAN),
            eps_v: log.eps_v,
            sinkhorn_gap: log.sinkhorn_gap,
        }
    }
}

/// Everything needed to rebuild the map. Holds no timing information, so
/// equal configs give byte-identical files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: MlpParams,
    pub log_tail: LogTail,
}

impl Checkpoint {
    pub fn flow_map(&self) -> crate::flow::FlowMap {
        crate::flow::FlowMap { params: self.params.clone(), n_steps: self.config.inference_steps }
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let c: Checkpoint = serde_json::from_reader(r)?;
        c.config.validate()?;
        Ok(c)
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        {
            let f = std::fs::File::create(&tmp)?;
            let mut w = std::io::BufWriter::new(f);
            self.to_writer(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FnMap;
    use crate::net::Activation;

    fn small(seed: u64) -> MlpParams {
        let mut p = MlpParams::init(&NetConfig { depth: 2, hidden_dim: 8, activation: Activation::Silu }, seed).unwrap();
        p.scale(2.0);
        p
    }

    #[test]
    fn identity_pairs_give_zero_target() {
        let p = MlpParams::zeros(&NetConfig { depth: 2, hidden_dim: 4, activation: Activation::Silu }).unwrap();
        let pts = vec![[0.1, 0.2], [0.5, -0.3]];
        let g = cfm_batch_loss(&p, &pts, &pts, &[(0, 0), (1, 1)], &mut stream(1, "t", 0)).unwrap();
        assert_eq!(g.value, 0.0);
    }

    #[test]
    fn hinge_values() {
        let disc = Disc { center: [0.2, 0.2], radius: 0.3 };
        let id = FnMap(|p: Point| p);
        assert_eq!(nfz_penalty_value(&id, &[[0.9, 0.9]], &[disc]).unwrap(), 0.0);
        assert!((nfz_penalty_value(&id, &[[0.2, 0.2]], &[disc]).unwrap() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn quadratic_closure_hessian() {
        let m = FnMap(|p: Point| [p[0] * p[0], 0.0]);
        let v = acc_penalty_value(&m, &[[0.3, -0.2], [0.7, 0.1]], 1e-2).unwrap();
        assert!((v - 4.0).abs() < 1e-8);
    }

    #[test]
    fn energy_of_constant_field() {
        let mut p = MlpParams::zeros(&NetConfig { depth: 2, hidden_dim: 4, activation: Activation::Silu }).unwrap();
        p.layers.last_mut().unwrap().b[0] = 0.3;
        p.layers.last_mut().unwrap().b[1] = -0.4;
        let g = energy_penalty(&p, &[[0.1, 0.1], [-0.5, 0.2]], 8, 4).unwrap();
        assert!((g.value - 0.25).abs() < 1e-14);
        let zero = MlpParams::zeros(&NetConfig { depth: 2, hidden_dim: 4, activation: Activation::Silu }).unwrap();
        assert_eq!(energy_penalty(&zero, &[[0.1, 0.1]], 8, 8).unwrap().value, 0.0);
    }

    fn fd_check(p: &MlpParams, f: &dyn Fn(&MlpParams) -> Graded, h: f64) -> f64 {
        let g = f(p).grads.flatten();
        let base = p.flatten();
        let mut q = p.clone();
        let mut worst: f64 = 0.0;
        let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for k in 0..base.len() {
            let mut v = base.clone();
            v[k] += h;
            q.set_flat(&v);
            let up = f(&q).value;
            v[k] -= 2.0 * h;
            q.set_flat(&v);
            let dn = f(&q).value;
            let fd = (up - dn) / (2.0 * h);
            worst = worst.max((fd - g[k]).abs());
        }
        worst / gmax
    }

    #[test]
    fn penalty_gradients_match_finite_differences() {
        let p = small(4);
        let z = uniform_annulus_sample_with(&mut stream(2, "z", 0), 0.05, 12);
        let mapped = crate::flow::FlowMap { params: p.clone(), n_steps: 4 }.push(&z).unwrap();
        // Discs centred on mapped points guarantee active hinges.
        let discs = [Disc { center: [mapped[0][0] + 0.05, mapped[0][1]], radius: 0.3 }, Disc { center: mapped[3], radius: 0.2 }];
        let e = fd_check(&p, &|q| nfz_penalty(q, &z, &discs, 4).unwrap(), 1e-5);
        assert!(e < 1e-3, "nfz {e}");
        let e = fd_check(&p, &|q| acc_penalty(q, &z[..3], 0.05, 4).unwrap(), 1e-5);
        assert!(e < 1e-3, "acc {e}");
        let e = fd_check(&p, &|q| energy_penalty(q, &z, 4, 4).unwrap(), 1e-5);
        assert!(e < 1e-3, "energy {e}");
    }

    #[test]
    fn eps_v_from_plateau() {
        let mut log = TrainLog { cfm_loss: vec![1.0; 100], ..Default::default() };
        for v in &mut log.cfm_loss[95..] {
            *v = 0.0015;
        }
        assert!((epsilon_v_from_log(&log).unwrap() - 0.0015f64.sqrt()).abs() < 1e-15);
        log.cfm_loss[95..].iter_mut().for_each(|v| *v = 0.04);
        assert!((epsilon_v_from_log(&log).unwrap() - 0.2).abs() < 1e-15);
        log.cfm_loss = vec![0.0; 40];
        assert_eq!(epsilon_v_from_log(&log).unwrap(), 0.0);
        log.cfm_loss.truncate(5);
        assert!(epsilon_v_from_log(&log).is_err());
    }
}
