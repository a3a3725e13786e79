use ergoflow::eval::{grid_histogram_traj, UNIT_BOX};
use ergoflow::fleet::*;
use ergoflow::flow::{pushforward_trajectory, FnMap};
use ergoflow::latent::generate_trajectory;

fn bend(z: [f64; 2]) -> [f64; 2] {
    [0.8 * (z[0] + 0.3 * z[1] * z[1]).tanh(), 0.9 * z[1]]
}

fn params(k: usize) -> FleetParams {
    FleetParams { k_cycles: k, n_per_leg: 50, delta: 0.05, grid_size: 20, bbox: UNIT_BOX }
}

#[test]
fn single_agent_matches_the_plain_pipeline() {
    let fp = params(6);
    let run = simulate_fleet(&FnMap(bend), 1, &fp, 4).unwrap();
    let latent = generate_trajectory(agent_seed(4, 0), fp.delta, fp.k_cycles, fp.n_per_leg, 1.0).unwrap();
    let mapped = pushforward_trajectory(&FnMap(bend), &latent.to_trajectory()).unwrap();
    assert_eq!(run.per_agent[0], grid_histogram_traj(&mapped, fp.grid_size, fp.bbox).unwrap());
    assert_eq!(run.pooled, run.per_agent[0]);
    assert_eq!(run.agent_ids, vec![latent.id()]);
}

#[test]
fn pooling_conserves_time_and_averages_agents() {
    let fp = params(4);
    let run = simulate_fleet(&FnMap(bend), 7, &fp, 1).unwrap();
    let single: f64 = run.per_agent[0].total();
    assert!((run.pooled.total() - 7.0 * single).abs() < 1e-9);
    let pooled_mean = run.pooled.normalized().unwrap();
    for c in 0..pooled_mean.values.len() {
        let avg: f64 = run.per_agent.iter().map(|g| g.normalized().unwrap().values[c]).sum::<f64>() / 7.0;
        assert!((pooled_mean.values[c] - avg).abs() < 1e-12);
    }
    assert!(simulate_fleet(&FnMap(bend), 0, &fp, 1).is_err());
}

#[test]
fn pooled_error_falls_like_inverse_root_n() {
    let r = pooled_rate_check(&FnMap(bend), &[1, 2, 5, 10, 20], &params(20), 4, 400_000, 3).unwrap();
    for w in r.metric.windows(2) {
        assert!(w[1] < w[0], "{r:?}");
    }
    assert!((2.0..=6.0).contains(&r.ratio), "{r:?}");
    assert!((-0.7..=-0.3).contains(&r.slope), "{r:?}");
    assert_eq!(r.reference[0], r.metric[0]);
}

/// Pulls mass towards the origin, so occupancy has real contrast.
fn squeeze(z: [f64; 2]) -> [f64; 2] {
    let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
    [z[0] * r, z[1] * r]
}

#[test]
fn agents_share_one_marginal() {
    let run = simulate_fleet(&FnMap(squeeze), 4, &params(300), 8).unwrap();
    let rho = run.min_pairwise_rho().unwrap();
    assert!(rho > 0.9, "{rho}");
    assert!(simulate_fleet(&FnMap(bend), 1, &params(3), 8).unwrap().min_pairwise_rho().is_err());
}
