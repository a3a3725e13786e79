//! Independent agents sharing one trained map.
//!
//! Agent `a` runs the latent trajectory seeded by
//! `derive_seed(seed, "agent", a)`; agents never interact.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::eval::{grid_histogram, grid_histogram_traj, grid_rmse, ls_slope, mean_std, pearson_corr, GridDensity};
use crate::flow::{pushforward_trajectory, PushMap};
use crate::latent::{generate_trajectory, uniform_annulus_sample_with};
use crate::rng::{derive_seed, stream};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleetParams {
    pub k_cycles: usize,
    pub n_per_leg: usize,
    pub delta: f64,
    pub grid_size: usize,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetRun {
    pub n_agents: usize,
    pub agent_ids: Vec<String>,
    pub per_agent: Vec<GridDensity>,
    /// Sum of the per-agent time-occupancy grids.
    pub pooled: GridDensity,
}

pub fn agent_seed(seed: u64, agent: usize) -> u64 {
    derive_seed(seed, "agent", agent as u64)
}

/// Mapped trajectory of one agent.
pub fn agent_trajectory(map: &dyn PushMap, fp: &FleetParams, seed: u64, agent: usize) -> Result<Trajectory> {
    let latent = generate_trajectory(agent_seed(seed, agent), fp.delta, fp.k_cycles, fp.n_per_leg, 1.0)?;
    pushforward_trajectory(map, &latent.to_trajectory())
}

pub fn simulate_fleet(map: &dyn PushMap, n_agents: usize, fp: &FleetParams, seed: u64) -> Result<FleetRun> {
    if n_agents == 0 {
        return Err(domain("N", "at least one agent is required"));
    }
    let mut pooled = GridDensity::zeros(fp.grid_size, fp.bbox)?;
    let mut per_agent = Vec::with_capacity(n_agents);
    let mut agent_ids = Vec::with_capacity(n_agents);
    for a in 0..n_agents {
        let traj = agent_trajectory(map, fp, seed, a)?;
        let g = grid_histogram_traj(&traj, fp.grid_size, fp.bbox)?;
        pooled.values.iter_mut().zip(&g.values).for_each(|(p, v)| *p += v);
        agent_ids.push(traj.provenance.clone().unwrap_or_default());
        per_agent.push(g);
    }
    Ok(FleetRun { n_agents, agent_ids, per_agent, pooled })
}

impl FleetRun {
    /// Smallest Pearson correlation between any two agents' occupancy grids.
    pub fn min_pairwise_rho(&self) -> Result<f64> {
        if self.per_agent.len() < 2 {
            return Err(domain("N", "needs at least two agents"));
        }
        let mut min = f64::INFINITY;
        for (a, ga) in self.per_agent.iter().enumerate() {
            for gb in &self.per_agent[a + 1..] {
                min = min.min(pearson_corr(ga, gb)?);
            }
        }
        Ok(min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledRate {
    pub ns: Vec<usize>,
    /// Seed-mean pooled grid-RMSE against the i.i.d. reference, per `N`.
    pub metric: Vec<f64>,
    pub std: Vec<f64>,
    /// `metric[0] / √N`.
    pub reference: Vec<f64>,
    pub slope: f64,
    /// `metric(first N) / metric(last N)`.
    pub ratio: f64,
}

/// Pooled grid-RMSE against an i.i.d. pushforward reference of
/// `n_reference` samples, for each fleet size.
pub fn pooled_rate_check(
    map: &dyn PushMap,
    ns: &[usize],
    fp: &FleetParams,
    n_seeds: usize,
    n_reference: usize,
    seed: u64,
) -> Result<PooledRate> {
    if ns.len() < 2 || n_seeds == 0 {
        return Err(domain("Ns", "needs at least two fleet sizes and one seed"));
    }
    let z = uniform_annulus_sample_with(&mut stream(seed, "fleet-reference", 0), fp.delta, n_reference);
    let reference = grid_histogram(&map.push(&z)?, fp.grid_size, fp.bbox)?;
    let n_max = *ns.iter().max().unwrap_or(&1);
    let mut rows = vec![Vec::with_capacity(n_seeds); ns.len()];
    for s in 0..n_seeds {
        // The largest fleet's agents are reused: fleet N is its first N.
        let run = simulate_fleet(map, n_max, fp, derive_seed(seed, "fleet-seed", s as u64))?;
        for (row, &n) in rows.iter_mut().zip(ns) {
            let mut pooled = GridDensity::zeros(fp.grid_size, fp.bbox)?;
            for g in &run.per_agent[..n] {
                pooled.values.iter_mut().zip(&g.values).for_each(|(p, v)| *p += v);
            }
            row.push(grid_rmse(&pooled, &reference)?);
        }
    }
    let (metric, std): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| mean_std(r)).unzip();
    let reference_curve = ns.iter().map(|&n| metric[0] / (n as f64).sqrt()).collect();
    let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = metric.iter().map(|m| m.ln()).collect();
    Ok(PooledRate {
        ns: ns.to_vec(),
        ratio: metric[0] / metric[metric.len() - 1],
        slope: ls_slope(&lx, &ly),
        metric,
        std,
        reference: reference_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::UNIT_BOX;
    use crate::flow::FnMap;
    use crate::Point;

    fn params() -> FleetParams {
        FleetParams { k_cycles: 5, n_per_leg: 30, delta: 0.05, grid_size: 20, bbox: UNIT_BOX }
    }

    #[test]
    fn pooled_mass_and_distinct_agents() {
        let id = FnMap(|p: Point| p);
        let one = simulate_fleet(&id, 1, &params(), 9).unwrap();
        let four = simulate_fleet(&id, 4, &params(), 9).unwrap();
        assert!((four.pooled.total() - 4.0 * one.pooled.total()).abs() < 1e-9);
        assert_eq!(one.per_agent[0], four.per_agent[0]);
        for a in 0..4 {
            for b in a + 1..4 {
                assert_ne!(four.agent_ids[a], four.agent_ids[b]);
                assert_ne!(four.per_agent[a], four.per_agent[b]);
            }
        }
    }

    #[test]
    fn pooled_is_sum_of_agents() {
        let id = FnMap(|p: Point| [0.5 * p[0], p[1]]);
        let run = simulate_fleet(&id, 3, &params(), 2).unwrap();
        for c in 0..run.pooled.values.len() {
            let s: f64 = run.per_agent.iter().map(|g| g.values[c]).sum();
            assert!((run.pooled.values[c] - s).abs() < 1e-12);
        }
    }
}
