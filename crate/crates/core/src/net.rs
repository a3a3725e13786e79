//! Time-conditioned velocity field `v_θ(s, y)`: a fully connected network
//! with manual forward and reverse passes, Adam, and spectral diagnostics.
//!
//! Inputs are rows `(s, y₁, y₂)`; outputs are 2D velocities. Weights are
//! stored `out × in` and a batch is propagated as `H·Wᵀ + b`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::stream;
use crate::Point;

/// Maximum of `silu'`, attained near `x ≈ 2.3994`.
pub const SILU_LIPSCHITZ: f64 = 1.099_839_320_00;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    /// No nonlinearity; used for constructed affine networks.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let sg = 1.0 / (1.0 + (-x).exp());
                sg * (1.0 + x * (1.0 - sg))
            }
            Activation::Identity => 1.0,
        }
    }

    /// Global bound on `|σ'|`.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Silu => SILU_LIPSCHITZ,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Number of hidden layers; the network has `depth + 1` linear maps and
    /// `depth` activations.
    pub depth: usize,
    pub hidden_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { depth: 4, hidden_dim: 256, activation: Activation::Silu }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(domain("depth", format!("must be at least 2, got {}", self.depth)));
        }
        if self.hidden_dim == 0 {
            return Err(domain("hidden_dim", "must be positive"));
        }
        Ok(())
    }
}

pub const INPUT_DIM: usize = 3;
pub const OUTPUT_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerJson", into = "LayerJson")]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<Layer> for LayerJson {
    fn from(l: Layer) -> Self {
        let (rows, cols) = l.w.dim();
        LayerJson { rows, cols, weights: l.w.iter().copied().collect(), bias: l.b.to_vec() }
    }
}

impl TryFrom<LayerJson> for Layer {
    type Error = String;
    fn try_from(j: LayerJson) -> std::result::Result<Self, String> {
        if j.bias.len() != j.rows {
            return Err(format!("bias has {} entries for {} rows", j.bias.len(), j.rows));
        }
        let w = Array2::from_shape_vec((j.rows, j.cols), j.weights).map_err(|e| e.to_string())?;
        Ok(Layer { w, b: Array1::from(j.bias) })
    }
}

impl Layer {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Layer { w: Array2::zeros((out, inp)), b: Array1::zeros(out) }
    }
}

/// Network weights. Gradients and Adam moments reuse the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

/// Activations recorded by [`MlpParams::forward_tape`] for the reverse pass.
pub struct Tape {
    /// Input to each linear layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each hidden layer.
    pre: Vec<Array2<f64>>,
}

impl MlpParams {
    /// He-style initialisation with gain `√(1/3)`: weights are Gaussian with
    /// variance `1/(3·fan_in)` and biases uniform on `±1/√fan_in`. This is
    /// the variance of the common uniform fan-in default. Hidden layers start
    /// with their largest singular value near 1, so the weight product
    /// depends only mildly on depth, while the three-input first layer is
    /// wide enough to place activations in the curved part of the
    /// nonlinearity.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![INPUT_DIM];
        dims.extend(std::iter::repeat_n(config.hidden_dim, config.depth));
        dims.push(OUTPUT_DIM);
        let mut rng = stream(seed, "init", 0);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (inp, out) = (d[0], d[1]);
                let bound = 1.0 / (inp as f64).sqrt();
                let normal = Normal::new(0.0, bound / 3f64.sqrt()).expect("finite std");
                let w = Array2::from_shape_simple_fn((out, inp), || normal.sample(&mut rng));
                let b = Array1::from_shape_simple_fn(out, || rng.random_range(-bound..bound));
                Layer { w, b }
            })
            .collect();
        Ok(MlpParams { activation: config.activation, layers })
    }

    pub fn zeros(config: &NetConfig) -> Result<Self> {
        let mut p = Self::init(config, 0)?;
        p.scale(0.0);
        Ok(p)
    }

    /// Builds parameters from explicit layers, checking that shapes chain
    /// from 3 inputs to 2 outputs.
    pub fn from_layers(activation: Activation, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("no layers".into()));
        }
        let mut inp = INPUT_DIM;
        for (i, l) in layers.iter().enumerate() {
            let (r, c) = l.w.dim();
            if c != inp || l.b.len() != r {
                return Err(Error::Shape(format!("layer {i} is {r}x{c}, expected input {inp}")));
            }
            inp = r;
        }
        if inp != OUTPUT_DIM {
            return Err(Error::Shape(format!("network outputs {inp} values, expected 2")));
        }
        let p = MlpParams { activation, layers };
        if !p.is_finite() {
            return Err(Error::NonFinite("weights".into()));
        }
        Ok(p)
    }

    pub fn n_activations(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|x| x.is_finite()) && l.b.iter().all(|x| x.is_finite()))
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        MlpParams {
            activation: self.activation,
            layers: self.layers.iter().map(|l| Layer::zeros(l.w.nrows(), l.w.ncols())).collect(),
        }
    }

    pub fn scale(&mut self, a: f64) {
        for l in &mut self.layers {
            l.w *= a;
            l.b *= a;
        }
    }

    /// `self += a · other`.
    pub fn add_scaled(&mut self, a: f64, other: &MlpParams) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            l.w.scaled_add(a, &o.w);
            l.b.scaled_add(a, &o.b);
        }
    }

    /// All parameters in layer order, weights row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend(l.w.iter());
            v.extend(l.b.iter());
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            for x in l.w.iter_mut().chain(l.b.iter_mut()) {
                *x = flat[k];
                k += 1;
            }
        }
    }

    /// Batched evaluation of rows `(s, y₁, y₂)`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.w.t());
            z += &l.b;
            if i < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        h
    }

    /// Velocity at a single point.
    pub fn forward(&self, s: f64, y: Point) -> Result<Point> {
        if !(s.is_finite() && y[0].is_finite() && y[1].is_finite()) {
            return Err(Error::NonFinite(format!("input ({s}, {:?})", y)));
        }
        debug_assert!((0.0..=1.0).contains(&s), "flow time {s} outside [0, 1]");
        let x = Array2::from_shape_vec((1, 3), vec![s, y[0], y[1]]).expect("1x3");
        let out = self.forward_batch(x.view());
        Ok([out[[0, 0]], out[[0, 1]]])
    }

    /// Forward pass that records what the reverse pass needs.
    pub fn forward_tape(&self, x: ArrayView2<f64>) -> (Array2<f64>, Tape) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.w.t());
            z += &l.b;
            inputs.push(h);
            if i < last {
                let act = self.activation;
                h = z.mapv(|v| act.apply(v));
                pre.push(z);
            } else {
                h = z;
            }
        }
        (h, Tape { inputs, pre })
    }

    /// Reverse pass. Accumulates parameter gradients into `grads` and returns
    /// the gradient with respect to the input rows.
    pub fn backward(&self, tape: &Tape, d_out: ArrayView2<f64>, grads: &mut MlpParams) -> Array2<f64> {
        let mut g = d_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                let act = self.activation;
                Zip::from(&mut g).and(&tape.pre[i]).for_each(|g, &z| *g *= act.derivative(z));
            }
            let gl = &mut grads.layers[i];
            gl.w += &g.t().dot(&tape.inputs[i]);
            gl.b += &g.sum_axis(Axis(0));
            g = g.dot(&self.layers[i].w);
        }
        g
    }

    /// Mean squared regression loss `mean ‖v(s_i, y_i) − u_i‖²` and its
    /// gradient. `x` holds rows `(s, y₁, y₂)`, `u` the target velocities.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, u: ArrayView2<f64>) -> Result<(f64, MlpParams)> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        if x.ncols() != INPUT_DIM || u.dim() != (n, OUTPUT_DIM) {
            return Err(Error::Shape(format!("inputs {:?}, targets {:?}", x.dim(), u.dim())));
        }
        let (out, tape) = self.forward_tape(x);
        let diff = &out - &u;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
        let d_out = diff * (2.0 / n as f64);
        let mut grads = self.zeros_like();
        self.backward(&tape, d_out.view(), &mut grads);
        Ok((loss, grads))
    }

    /// Largest singular value of each weight matrix.
    pub fn spectral_norms(&self) -> Vec<f64> {
        self.layers.iter().map(|l| spectral_norm(l.w.view())).collect()
    }

    /// Architectural Lipschitz bound `L_σ^{n_act} · ∏ σ_max(W_ℓ)` of the
    /// field in its inputs.
    pub fn lv_net(&self) -> f64 {
        let prod: f64 = self.spectral_norms().iter().product();
        self.activation.lipschitz().powi(self.n_activations() as i32) * prod
    }
}

/// Largest singular value by power iteration on `WᵀW`, run until the
/// estimate changes by less than 1e-13 relative.
pub fn spectral_norm(w: ArrayView2<f64>) -> f64 {
    let n = w.ncols();
    if n == 0 || w.nrows() == 0 {
        return 0.0;
    }
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + 0.37 * ((i as f64) * 1.618).sin());
    let mut prev = 0.0;
    for _ in 0..20_000 {
        let nv = v.dot(&v).sqrt();
        if nv == 0.0 {
            return 0.0;
        }
        v /= nv;
        let wv = w.dot(&v);
        let sigma = wv.dot(&wv).sqrt();
        if sigma == 0.0 {
            return 0.0;
        }
        v = w.t().dot(&wv);
        if (sigma - prev).abs() <= 1e-13 * sigma {
            return sigma;
        }
        prev = sigma;
    }
    prev
}

/// Adam with bias correction and a cosine learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub step: usize,
    pub lr_base: f64,
    /// Number of steps over which the rate decays from `lr_base` to 0.
    pub horizon: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr_base: f64, horizon: usize) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr_base,
            horizon: horizon.max(1),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Learning rate at step `t`: `lr_base · (1 + cos(π t/(T−1)))/2`, so
    /// the last scheduled step uses rate 0.
    pub fn lr_at(&self, t: usize) -> f64 {
        if self.horizon <= 1 {
            return self.lr_base;
        }
        if t >= self.horizon {
            return 0.0;
        }
        let p = t as f64 / (self.horizon - 1) as f64;
        0.5 * self.lr_base * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

pub fn adam_step(params: &mut MlpParams, state: &mut AdamState, grads: &MlpParams) {
    let lr = state.lr_at(state.step);
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    };
    for (((l, m), v), g) in params
        .layers
        .iter_mut()
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
        .zip(&grads.layers)
    {
        Zip::from(&mut l.w).and(&mut m.w).and(&mut v.w).and(&g.w).for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut l.b).and(&mut m.b).and(&mut v.b).and(&g.b).for_each(|p, m, v, &g| update(p, m, v, g));
    }
}

/// Stacks `(s, y)` rows into the network input layout.
pub fn input_rows(s: &[f64], y: &[Point]) -> Array2<f64> {
    let mut x = Array2::zeros((y.len(), INPUT_DIM));
    for (i, p) in y.iter().enumerate() {
        x[[i, 0]] = s[i];
        x[[i, 1]] = p[0];
        x[[i, 2]] = p[1];
    }
    x
}

/// Rows `(s, y)` with a shared flow time.
pub fn input_rows_at(s: f64, y: &[Point]) -> Array2<f64> {
    let mut x = Array2::from_elem((y.len(), INPUT_DIM), s);
    for (i, p) in y.iter().enumerate() {
        x[[i, 1]] = p[0];
        x[[i, 2]] = p[1];
    }
    x
}

/// Gradient of the input rows restricted to the spatial columns.
pub fn spatial_part(g: &Array2<f64>) -> ArrayView2<'_, f64> {
    g.slice(s![.., 1..3])
}
