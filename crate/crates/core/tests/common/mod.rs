#![allow(dead_code)]

use ergoflow::flow::FlowMap;
use ergoflow::net::{Activation, Layer, MlpParams, NetConfig};
use ergoflow::Point;
use ndarray::{arr1, arr2, Array2};

/// Random net with weights scaled up so activations leave the linear regime.
pub fn small_net(depth: usize, width: usize, seed: u64) -> MlpParams {
    let mut p = MlpParams::init(&NetConfig { depth, hidden_dim: width, activation: Activation::Silu }, seed).unwrap();
    p.scale(2.0);
    p
}

/// Velocity `v(s, y) = A y + c` as a single identity-activation layer.
pub fn affine_field(a: [[f64; 2]; 2], c: [f64; 2]) -> MlpParams {
    let w = arr2(&[[0.0, a[0][0], a[0][1]], [0.0, a[1][0], a[1][1]]]);
    MlpParams::from_layers(Activation::Identity, vec![Layer { w, b: arr1(&c) }]).unwrap()
}

pub fn affine_flow(a: [[f64; 2]; 2], c: [f64; 2], n_steps: usize) -> FlowMap {
    FlowMap::new(affine_field(a, c), n_steps).unwrap()
}

/// `max |g − fd| / max |fd|` over all parameters, with central differences.
pub fn fd_rel_error(p: &MlpParams, f: &dyn Fn(&MlpParams) -> (f64, MlpParams), h: f64) -> f64 {
    let g = f(p).1.flatten();
    let base = p.flatten();
    let mut q = p.clone();
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for k in 0..base.len() {
        let mut v = base.clone();
        v[k] = base[k] + h;
        q.set_flat(&v);
        let up = f(&q).0;
        v[k] = base[k] - h;
        q.set_flat(&v);
        let dn = f(&q).0;
        let fd = (up - dn) / (2.0 * h);
        num = num.max((fd - g[k]).abs());
        den = den.max(fd.abs());
    }
    num / den
}

/// `exp(A)` by scaling and squaring of a truncated series.
pub fn expm(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let scale = 1.0 / 1024.0;
    let b = [[a[0][0] * scale, a[0][1] * scale], [a[1][0] * scale, a[1][1] * scale]];
    let mut sum = [[1.0, 0.0], [0.0, 1.0]];
    let mut term = sum;
    for k in 1..20 {
        term = mul(term, b);
        term.iter_mut().flatten().for_each(|v| *v /= k as f64);
        for i in 0..2 {
            for j in 0..2 {
                sum[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..10 {
        sum = mul(sum, sum);
    }
    sum
}

pub fn mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum over all `n!` pairings, summed in row order like the solver.
pub fn brute_w2(a: &[Point], b: &[Point]) -> f64 {
    let best = permutations(a.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| (a[i][0] - b[j][0]).powi(2) + (a[i][1] - b[j][1]).powi(2)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    (best / a.len() as f64).sqrt()
}

/// Plain 2D convolution with a kernel normalised over the taps that land
/// inside the grid, built independently of the crate.
pub fn direct_blur(raw: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let w = |t: isize| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp();
    let (h, wd) = raw.dim();
    Array2::from_shape_fn((h, wd), |(i, j)| {
        let (mut num, mut den) = (0.0, 0.0);
        for di in -r..=r {
            for dj in -r..=r {
                let (p, q) = (i as isize + di, j as isize + dj);
                if p < 0 || q < 0 || p >= h as isize || q >= wd as isize {
                    continue;
                }
                let k = w(di) * w(dj);
                num += k * raw[[p as usize, q as usize]];
                den += k;
            }
        }
        num / den
    })
}
