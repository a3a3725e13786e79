//! Browser bindings for the demo page in `www/`.
//!
//! The page never trains; it draws latent cycles, pushes them through a
//! lookup table exported by `ergoflow distill` (or the identity when none is
//! loaded) and compares time-occupancy with a target density.

use ergoflow::eval::{density_grid, grid_histogram_traj, pearson_corr, GridDensity, UNIT_BOX};
use ergoflow::flow::{pushforward_trajectory, FnMap, LookupTable, PushMap};
use ergoflow::latent::generate_trajectory;
use ergoflow::targets::TargetSpec;
use ergoflow::trajectory::Trajectory;
use wasm_bindgen::prelude::*;

fn js(e: ergoflow::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn target_by_name(name: &str, delta: f64) -> Result<TargetSpec, JsError> {
    match name {
        "two_gaussians" => Ok(TargetSpec::two_gaussians(delta)),
        "half_disc" => Ok(TargetSpec::half_disc_3_to_1()),
        _ => Err(JsError::new(&format!("unknown target {name:?}"))),
    }
}

#[wasm_bindgen]
pub struct Demo {
    delta: f64,
    table: Option<LookupTable>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(delta: f64) -> Result<Demo, JsError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(JsError::new("delta must lie in (0, 1)"));
        }
        Ok(Demo { delta, table: None })
    }

    #[wasm_bindgen(getter)]
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Accepts the `lut.json` written by `ergoflow distill`. Returns the
    /// table resolution.
    pub fn load_table(&mut self, json: &str) -> Result<usize, JsError> {
        let t: LookupTable = serde_json::from_str(json).map_err(|e| JsError::new(&e.to_string()))?;
        if t.resolution < 2 || t.values.len() != t.resolution * t.resolution {
            return Err(JsError::new("lookup table shape does not match its resolution"));
        }
        let n = t.resolution;
        self.table = Some(t);
        Ok(n)
    }

    pub fn clear_table(&mut self) {
        self.table = None;
    }

    #[wasm_bindgen(getter)]
    pub fn has_table(&self) -> bool {
        self.table.is_some()
    }

    /// `k` cycles as interleaved `[zx, zy, gx, gy, …]`.
    pub fn trajectory(&self, k: usize, n_per_leg: usize, seed: u64) -> Result<Vec<f64>, JsError> {
        let (latent, mapped) = self.paths(k, n_per_leg, seed)?;
        Ok(latent.points().zip(mapped.points()).flat_map(|(z, x)| [z[0], z[1], x[0], x[1]]).collect())
    }

    /// Time-occupancy of the mapped path against a named target
    /// (`two_gaussians` or `half_disc`) on a `grid × grid` box.
    pub fn coverage(&self, k: usize, n_per_leg: usize, seed: u64, grid: usize, target: &str) -> Result<Coverage, JsError> {
        let spec = target_by_name(target, self.delta)?;
        let (_, mapped) = self.paths(k, n_per_leg, seed)?;
        let occ = grid_histogram_traj(&mapped, grid, UNIT_BOX).map_err(js)?;
        let tgt = density_grid(&spec, grid, UNIT_BOX).map_err(js)?;
        let rho = pearson_corr(&occ, &tgt).map_err(js)?;
        Ok(Coverage { occupancy: normalized(&occ), target: normalized(&tgt), rho })
    }
}

impl Demo {
    fn paths(&self, k: usize, n_per_leg: usize, seed: u64) -> Result<(Trajectory, Trajectory), JsError> {
        let latent = generate_trajectory(seed, self.delta, k, n_per_leg, 1.0).map_err(js)?.to_trajectory();
        let identity = FnMap(|z| z);
        let map: &dyn PushMap = match &self.table {
            Some(t) => t,
            None => &identity,
        };
        let mapped = pushforward_trajectory(map, &latent).map_err(js)?;
        Ok((latent, mapped))
    }
}

/// Grid values scaled to a maximum of one for display.
fn normalized(g: &GridDensity) -> Vec<f64> {
    let m = g.values.iter().copied().fold(0.0, f64::max);
    if m > 0.0 {
        g.values.iter().map(|v| v / m).collect()
    } else {
        g.values.clone()
    }
}

#[wasm_bindgen]
pub struct Coverage {
    occupancy: Vec<f64>,
    target: Vec<f64>,
    rho: f64,
}

#[wasm_bindgen]
impl Coverage {
    /// Row-major, first row at the bottom of the box, scaled to max 1.
    #[wasm_bindgen(getter)]
    pub fn occupancy(&self) -> Vec<f64> {
        self.occupancy.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn target(&self) -> Vec<f64> {
        self.target.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn rho(&self) -> f64 {
        self.rho
    }
}
