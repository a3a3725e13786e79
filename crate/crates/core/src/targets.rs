//! Target densities: Gaussian mixtures clipped to a support, the binary
//! half-disc, and gridded demand maps with their ingestion pipeline.

use std::f64::consts::PI;
use std::io::Read;
use std::sync::OnceLock;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{stream, Rng};
use crate::Point;

/// Proposals used to estimate the mass a mixture keeps inside its support.
pub const NORMALIZATION_PROPOSALS: usize = 1_000_000;

/// Region a clipped density lives on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Support {
    #[default]
    Plane,
    Disc,
    Annulus { delta: f64 },
}

impl Support {
    pub fn contains(&self, p: Point) -> bool {
        let r = crate::norm(p);
        match *self {
            Support::Plane => true,
            Support::Disc => r <= 1.0,
            Support::Annulus { delta } => r >= delta && r <= 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Point>,
    /// Symmetric positive semi-definite 2×2 covariances.
    pub covariances: Vec<[[f64; 2]; 2]>,
    #[serde(default)]
    pub support_clip: Support,
    #[serde(skip)]
    support_mass: OnceLock<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Point>, covariances: Vec<[[f64; 2]; 2]>, support_clip: Support) -> Result<Self> {
        let m = GaussianMixture { weights, means, covariances, support_clip, support_mass: OnceLock::new() };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.covariances.len() != k {
            return Err(Error::Shape("mixture needs matching weights, means and covariances".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(domain("weights", "must be nonnegative with positive sum"));
        }
        for c in &self.covariances {
            if (c[0][1] - c[1][0]).abs() > 1e-12 || c[0][0] < 0.0 || c[1][1] < 0.0 || det(c) < -1e-15 {
                return Err(domain("covariances", "must be symmetric positive semi-definite"));
            }
        }
        Ok(())
    }

    fn raw_pdf(&self, x: Point) -> f64 {
        let wsum: f64 = self.weights.iter().sum();
        let mut total = 0.0;
        for ((w, mu), c) in self.weights.iter().zip(&self.means).zip(&self.covariances) {
            let d = det(c);
            if d <= 0.0 {
                continue;
            }
            let dx = [x[0] - mu[0], x[1] - mu[1]];
            let q = (c[1][1] * dx[0] * dx[0] - 2.0 * c[0][1] * dx[0] * dx[1] + c[0][0] * dx[1] * dx[1]) / d;
            total += w / wsum * (-0.5 * q).exp() / (2.0 * PI * d.sqrt());
        }
        total
    }

    fn draw_raw(&self, rng: &mut Rng) -> Point {
        let wsum: f64 = self.weights.iter().sum();
        let mut u = rng.random::<f64>() * wsum;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            if u < *w {
                k = i;
                break;
            }
            u -= w;
        }
        let c = &self.covariances[k];
        let l11 = c[0][0].max(0.0).sqrt();
        let l21 = if l11 > 0.0 { c[1][0] / l11 } else { 0.0 };
        let l22 = (c[1][1] - l21 * l21).max(0.0).sqrt();
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let mu = self.means[k];
        [mu[0] + l11 * z0, mu[1] + l21 * z0 + l22 * z1]
    }

    /// Fraction of the unclipped mixture that falls inside the support,
    /// estimated once from a fixed-seed Monte-Carlo run and cached.
    pub fn support_mass(&self) -> f64 {
        *self.support_mass.get_or_init(|| {
            if self.support_clip == Support::Plane {
                return 1.0;
            }
            let mut rng = stream(0, "support-mass", 0);
            let inside = (0..NORMALIZATION_PROPOSALS)
                .filter(|_| self.support_clip.contains(self.draw_raw(&mut rng)))
                .count();
            inside as f64 / NORMALIZATION_PROPOSALS as f64
        })
    }
}

fn det(c: &[[f64; 2]; 2]) -> f64 {
    c[0][0] * c[1][1] - c[0][1] * c[1][0]
}

/// Uniform on the unit disc with density ratio `ratio_low_over_high`
/// between the lower (`x₂ < 0`) and upper halves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryHalfDisc {
    pub ratio_low_over_high: f64,
}

impl BinaryHalfDisc {
    /// Probability mass of the lower half.
    pub fn lower_mass(&self) -> f64 {
        self.ratio_low_over_high / (1.0 + self.ratio_low_over_high)
    }
}

/// Piecewise density on a regular grid over `bbox = [xmin, xmax, ymin, ymax]`.
/// Row `i` covers `y ∈ [ymin + i·h, ymin + (i+1)·h]`, column `j` the
/// analogous `x` interval. Values are densities, so `Σ values · cell_area = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GriddedDensity {
    pub height: usize,
    pub width: usize,
    pub bbox: [f64; 4],
    /// Row-major cell values.
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meters_per_unit: Option<f64>,
}

impl GriddedDensity {
    pub fn cell_size(&self) -> (f64, f64) {
        (
            (self.bbox[1] - self.bbox[0]) / self.width as f64,
            (self.bbox[3] - self.bbox[2]) / self.height as f64,
        )
    }

    pub fn cell_area(&self) -> f64 {
        let (w, h) = self.cell_size();
        w * h
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.values.len() != self.height * self.width {
            return Err(Error::Shape(format!(
                "grid {}x{} with {} values",
                self.height,
                self.width,
                self.values.len()
            )));
        }
        if !(self.bbox[1] > self.bbox[0] && self.bbox[3] > self.bbox[2]) {
            return Err(domain("bbox", "needs xmin < xmax and ymin < ymax"));
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(domain("values", "must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Bilinear interpolation between cell centres, clamped to the edge
    /// cells, zero outside the box. Integrates to `Σ values · cell_area`.
    pub fn interpolate(&self, x: Point) -> f64 {
        let [x0, x1, y0, y1] = self.bbox;
        if x[0] < x0 || x[0] > x1 || x[1] < y0 || x[1] > y1 {
            return 0.0;
        }
        let (cw, ch) = self.cell_size();
        let axis = |u: f64, n: usize| -> (usize, usize, f64) {
            let g = (u - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = (g.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            (lo, hi, g - lo as f64)
        };
        let (j0, j1, tx) = axis((x[0] - x0) / cw, self.width);
        let (i0, i1, ty) = axis((x[1] - y0) / ch, self.height);
        let top = self.value(i0, j0) * (1.0 - tx) + self.value(i0, j1) * tx;
        let bot = self.value(i1, j0) * (1.0 - tx) + self.value(i1, j1) * tx;
        top * (1.0 - ty) + bot * ty
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.height, self.width), self.values.clone()).expect("validated shape")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum TargetSpec {
    GaussianMixture(GaussianMixture),
    BinaryHalfDisc(BinaryHalfDisc),
    GriddedDensity(GriddedDensity),
}

impl TargetSpec {
    /// Equal mixture of `N((−0.3,0), 0.04 I)` and `N((0.3,0), 0.04 I)`
    /// restricted to the annulus of inner radius `delta`.
    pub fn two_gaussians(delta: f64) -> Self {
        let cov = [[0.04, 0.0], [0.0, 0.04]];
        TargetSpec::GaussianMixture(
            GaussianMixture::new(
                vec![0.5, 0.5],
                vec![[-0.3, 0.0], [0.3, 0.0]],
                vec![cov, cov],
                Support::Annulus { delta },
            )
            .expect("valid mixture"),
        )
    }

    /// Unit disc with three times the density below the horizontal axis.
    pub fn half_disc_3_to_1() -> Self {
        TargetSpec::BinaryHalfDisc(BinaryHalfDisc { ratio_low_over_high: 3.0 })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TargetSpec::GaussianMixture(m) => m.validate(),
            TargetSpec::BinaryHalfDisc(b) => {
                if b.ratio_low_over_high > 0.0 && b.ratio_low_over_high.is_finite() {
                    Ok(())
                } else {
                    Err(domain("ratio_low_over_high", "must be positive"))
                }
            }
            TargetSpec::GriddedDensity(g) => g.validate(),
        }
    }

    pub fn density(&self, x: Point) -> f64 {
        match self {
            TargetSpec::GaussianMixture(m) => {
                if !m.support_clip.contains(x) {
                    return 0.0;
                }
                m.raw_pdf(x) / m.support_mass()
            }
            TargetSpec::BinaryHalfDisc(b) => {
                if crate::norm(x) > 1.0 {
                    0.0
                } else if x[1] < 0.0 {
                    b.lower_mass() / (PI / 2.0)
                } else {
                    (1.0 - b.lower_mass()) / (PI / 2.0)
                }
            }
            TargetSpec::GriddedDensity(g) => g.interpolate(x),
        }
    }

    /// Mixture value before clipping and renormalisation; equals
    /// [`TargetSpec::density`] for the other variants.
    pub fn unnormalized_density(&self, x: Point) -> f64 {
        match self {
            TargetSpec::GaussianMixture(m) => m.raw_pdf(x),
            _ => self.density(x),
        }
    }

    pub fn sample_with(&self, rng: &mut Rng, n: usize) -> Result<Vec<Point>> {
        match self {
            TargetSpec::GaussianMixture(m) => {
                let mut out = Vec::with_capacity(n);
                let mut attempts = 0usize;
                while out.len() < n {
                    let p = m.draw_raw(rng);
                    attempts += 1;
                    if m.support_clip.contains(p) {
                        out.push(p);
                    }
                    if attempts >= 10_000 && (out.len() as f64) < 1e-3 * attempts as f64 {
                        return Err(Error::LowAcceptance { rate: out.len() as f64 / attempts as f64 });
                    }
                }
                Ok(out)
            }
            TargetSpec::BinaryHalfDisc(b) => Ok((0..n)
                .map(|_| {
                    let lower = rng.random::<f64>() < b.lower_mass();
                    let r = rng.random::<f64>().sqrt();
                    let th = rng.random::<f64>() * PI;
                    let y = r * th.sin();
                    [r * th.cos(), if lower { -y } else { y }]
                })
                .collect()),
            TargetSpec::GriddedDensity(g) => {
                let total: f64 = g.values.iter().sum();
                if !(total > 0.0) {
                    return Err(Error::Empty("grid has no mass"));
                }
                let mut cdf = Vec::with_capacity(g.values.len());
                let mut acc = 0.0;
                for v in &g.values {
                    acc += v;
                    cdf.push(acc);
                }
                let (cw, ch) = g.cell_size();
                Ok((0..n)
                    .map(|_| {
                        let u = rng.random::<f64>() * total;
                        let mut k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                        while g.values[k] <= 0.0 && k > 0 {
                            k -= 1;
                        }
                        let (i, j) = (k / g.width, k % g.width);
                        [
                            g.bbox[0] + (j as f64 + rng.random::<f64>()) * cw,
                            g.bbox[2] + (i as f64 + rng.random::<f64>()) * ch,
                        ]
                    })
                    .collect())
            }
        }
    }

    pub fn sample(&self, seed: u64, n: usize) -> Result<Vec<Point>> {
        if n == 0 {
            return Err(domain("n", "at least one sample is required"));
        }
        self.sample_with(&mut stream(seed, "target", 0), n)
    }

    /// Box enclosing the support.
    pub fn bbox(&self) -> [f64; 4] {
        match self {
            TargetSpec::GriddedDensity(g) => g.bbox,
            _ => [-1.0, 1.0, -1.0, 1.0],
        }
    }

    /// True when the support excludes a disc around the origin, in which
    /// case the annular latent domain loses nothing topologically.
    pub fn annular_support(&self) -> bool {
        matches!(self, TargetSpec::GaussianMixture(m) if matches!(m.support_clip, Support::Annulus { .. }))
    }
}

/// One-dimensional truncated Gaussian weights with radius `⌈3σ⌉`.
fn gauss_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    (-radius..=radius).map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp()).collect()
}

/// Separable truncated Gaussian blur along both axes. At the edges the
/// kernel is renormalised over the in-range taps, so constant grids are
/// fixed points. `sigma = 0` leaves the grid unchanged.
pub fn gaussian_blur(raw: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return raw.clone();
    }
    let k = gauss_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let pass = |a: &Array2<f64>, along_rows: bool| -> Array2<f64> {
        let (h, w) = a.dim();
        Array2::from_shape_fn((h, w), |(i, j)| {
            let (pos, len) = if along_rows { (j as isize, w as isize) } else { (i as isize, h as isize) };
            let mut num = 0.0;
            let mut den = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let q = pos + t as isize - r;
                if q < 0 || q >= len {
                    continue;
                }
                let v = if along_rows { a[[i, q as usize]] } else { a[[q as usize, j]] };
                num += kv * v;
                den += kv;
            }
            num / den
        })
    };
    pass(&pass(raw, true), false)
}

/// Blur, clip below at `floor`, and normalise to a probability density on
/// `bbox`.
pub fn ingest_grid(raw: &Array2<f64>, smoothing_sigma: f64, floor: f64, bbox: [f64; 4]) -> Result<GriddedDensity> {
    let (h, w) = raw.dim();
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("grid must be at least 2x2, got {h}x{w}")));
    }
    if raw.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(domain("grid", "entries must be finite and nonnegative"));
    }
    if !(smoothing_sigma >= 0.0 && smoothing_sigma.is_finite()) {
        return Err(domain("smoothing_sigma", "must be nonnegative"));
    }
    if !(floor >= 0.0) {
        return Err(domain("floor", "must be nonnegative"));
    }
    let mut g = gaussian_blur(raw, smoothing_sigma);
    g.mapv_inplace(|v| v.max(floor));
    let mut out = GriddedDensity { height: h, width: w, bbox, values: Vec::new(), meters_per_unit: None };
    out.validate_bbox()?;
    let mass = g.sum() * out.cell_area();
    assert!(mass > 0.0, "grid has no mass after the floor");
    out.values = g.iter().map(|v| v / mass).collect();
    Ok(out)
}

impl GriddedDensity {
    fn validate_bbox(&self) -> Result<()> {
        if self.bbox[1] > self.bbox[0] && self.bbox[3] > self.bbox[2] {
            Ok(())
        } else {
            Err(domain("bbox", "needs xmin < xmax and ymin < ymax"))
        }
    }
}

/// Reads a raw grid as headerless CSV (one line per row) or as JSON
/// `{height, width, bbox, values}` with row-major values. Returns the grid
/// and the bounding box if the file carries one.
pub fn read_grid<R: Read>(mut r: R) -> Result<(Array2<f64>, Option<[f64; 4]>)> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    if text.trim_start().starts_with('{') {
        #[derive(Deserialize)]
        struct Wrapper {
            height: usize,
            width: usize,
            #[serde(default)]
            bbox: Option<[f64; 4]>,
            values: Vec<f64>,
        }
        let wr: Wrapper = serde_json::from_str(&text)?;
        let a = Array2::from_shape_vec((wr.height, wr.width), wr.values)
            .map_err(|e| Error::Shape(format!("grid values: {e}")))?;
        return Ok((a, wr.bbox));
    }
    let mut rd = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("grid cell `{s}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let h = rows.len();
    let w = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != w) {
        return Err(Error::Shape("grid rows have different lengths".into()));
    }
    let a = Array2::from_shape_vec((h, w), rows.concat()).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((a, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_disc_values() {
        let t = TargetSpec::half_disc_3_to_1();
        assert!((t.density([0.0, -0.5]) - 3.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((t.density([0.0, 0.5]) - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert_eq!(t.density([0.9, 0.9]), 0.0);
    }

    #[test]
    fn mixture_mode_value() {
        let t = TargetSpec::two_gaussians(0.01);
        let at_mode = t.unnormalized_density([-0.3, 0.0]);
        let peak = 1.0 / (2.0 * PI * 0.04);
        let other = peak * (-0.5 * 0.36 / 0.04f64).exp();
        assert!((at_mode - 0.5 * (peak + other)).abs() < 1e-12);
        assert!((at_mode - 2.0116).abs() < 1e-3);
        assert_eq!(t.density([1.0, 0.5]), 0.0);
        assert_eq!(t.density([0.0, 0.001]), 0.0);
    }

    #[test]
    fn degenerate_component_samples_its_mean() {
        let m = GaussianMixture::new(vec![1.0], vec![[0.2, -0.1]], vec![[[0.0, 0.0], [0.0, 0.0]]], Support::Plane)
            .unwrap();
        let pts = TargetSpec::GaussianMixture(m).sample(1, 100).unwrap();
        assert!(pts.iter().all(|p| *p == [0.2, -0.1]));
    }

    #[test]
    fn low_acceptance_aborts() {
        let m = GaussianMixture::new(vec![1.0], vec![[5.0, 5.0]], vec![[[0.01, 0.0], [0.0, 0.01]]], Support::Disc)
            .unwrap();
        let err = TargetSpec::GaussianMixture(m).sample(1, 10).unwrap_err();
        assert!(matches!(err, Error::LowAcceptance { .. }));
    }

    #[test]
    fn single_hot_cell_samples_inside_it() {
        let mut values = vec![0.0; 16];
        values[6] = 1.0;
        let g = GriddedDensity { height: 4, width: 4, bbox: [-1.0, 1.0, -1.0, 1.0], values, meters_per_unit: None };
        let pts = TargetSpec::GriddedDensity(g).sample(3, 1000).unwrap();
        // Cell (1, 2): x ∈ [0, 0.5], y ∈ [−0.5, 0].
        assert!(pts.iter().all(|p| (0.0..=0.5).contains(&p[0]) && (-0.5..=0.0).contains(&p[1])));
    }

    #[test]
    fn bilinear_integral_equals_cell_sum() {
        let raw = Array2::from_shape_fn((5, 7), |(i, j)| 1.0 + (i * 7 + j) as f64 % 3.0);
        let g = ingest_grid(&raw, 0.0, 0.0, [-1.0, 1.0, -1.0, 1.0]).unwrap();
        // Exact in each direction: midpoint rule on a fine grid.
        let n = 1400;
        let h = 2.0 / n as f64;
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += g.interpolate([-1.0 + (a as f64 + 0.5) * h, -1.0 + (b as f64 + 0.5) * h]);
            }
        }
        assert!((s * h * h - 1.0).abs() < 1e-4, "{}", s * h * h);
    }

    #[test]
    fn uniform_grid_is_a_fixed_point() {
        let raw = Array2::from_elem((10, 12), 3.5);
        let g = ingest_grid(&raw, 1.5, 1e-12, [-1.0, 1.0, -1.0, 1.0]).unwrap();
        assert!(g.values.iter().all(|v| (v - 0.25).abs() < 1e-14));
    }

    #[test]
    fn csv_and_json_grids() {
        let (a, bbox) = read_grid("1, 2, 3\n4, 5, 6\n".as_bytes()).unwrap();
        assert_eq!(a.dim(), (2, 3));
        assert_eq!(a[[1, 2]], 6.0);
        assert!(bbox.is_none());
        let (b, bbox) =
            read_grid(r#"{"height":2,"width":2,"bbox":[0,1,0,1],"values":[1,2,3,4]}"#.as_bytes()).unwrap();
        assert_eq!(b[[1, 0]], 3.0);
        assert_eq!(bbox, Some([0.0, 1.0, 0.0, 1.0]));
        assert!(read_grid("1,2\n3\n".as_bytes()).is_err());
    }

    #[test]
    fn target_round_trips_through_json() {
        let t = TargetSpec::two_gaussians(0.01);
        let json = serde_json::to_string(&t).unwrap();
        let back: TargetSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.density([0.3, 0.1]), t.density([0.3, 0.1]));
    }
}
