use ergoflow::cfm::Disc;
use ergoflow::energy::energy_proxy;
use ergoflow::eval::*;
use ergoflow::flow::{map_lipschitz_hat, pushforward_trajectory, FnMap};
use ergoflow::latent::{generate_trajectory, uniform_annulus_sample};
use ergoflow::rng::{derive_seed, stream};
use ergoflow::targets::TargetSpec;
use ergoflow::trajectory::{Leg, Sample, Trajectory};
use proptest::prelude::*;
use rand::Rng;

fn ident(z: [f64; 2]) -> [f64; 2] {
    z
}

/// Smooth, mildly nonlinear map of the disc into itself.
fn tanh_map(seed: u64) -> impl Fn([f64; 2]) -> [f64; 2] {
    let mut rng = stream(seed, "tanh-map", 0);
    let mut c = [0.0; 6];
    c.iter_mut().for_each(|v| *v = rng.random::<f64>() * 2.0 - 1.0);
    move |z: [f64; 2]| {
        [
            0.7 * (c[0] * z[0] + c[1] * z[1] + 0.6 * z[0]).tanh() + 0.1 * c[4],
            0.7 * (c[2] * z[0] + c[3] * z[1] + 0.6 * z[1]).tanh() + 0.1 * c[5],
        ]
    }
}

fn line(n: usize, dt: f64, pos: impl Fn(usize) -> [f64; 2]) -> Trajectory {
    let samples = (0..n)
        .map(|k| Sample { t: k as f64 * dt, pos: pos(k), cycle: 0, leg: Leg::Outward })
        .collect();
    Trajectory { samples, dt, provenance: None }
}

#[test]
fn uniform_points_fill_the_grid_evenly() {
    let mut rng = stream(3, "uniform", 0);
    let pts: Vec<[f64; 2]> =
        (0..1_000_000).map(|_| [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0]).collect();
    // At 50² cells the multinomial CV is itself 5%, so the check uses 40².
    let g = grid_histogram(&pts, 40, UNIT_BOX).unwrap();
    assert_eq!(g.total(), 1e6);
    let (m, sd) = mean_std(&g.values);
    assert!(sd / m < 0.05, "cv {}", sd / m);
}

#[test]
fn trajectory_histogram_weighs_by_time() {
    let traj = generate_trajectory(4, 0.05, 3, 40, 0.25).unwrap().to_trajectory();
    let g = grid_histogram_traj(&traj, 20, UNIT_BOX).unwrap();
    assert!((g.total() - traj.duration()).abs() < 1e-9);
}

#[test]
fn nfz_metrics_of_simple_paths() {
    let disc = Disc { center: [0.0, 0.0], radius: 0.5 };
    let far = line(50, 0.1, |k| [0.6 + 0.001 * k as f64, 0.0]);
    let m = nfz_metrics(&far, &[disc]).unwrap();
    assert_eq!((m.frac_inside, m.dwell_time, m.n_incursions, m.max_depth), (0.0, 0.0, 0, 0.0));

    let inside = line(50, 0.1, |k| [0.001 * k as f64, 0.0]);
    let m = nfz_metrics(&inside, &[disc]).unwrap();
    assert_eq!(m.frac_inside, 1.0);
    assert!((m.dwell_time - inside.duration()).abs() < 1e-12);
    assert_eq!(m.n_incursions, 1);
    assert!((m.max_depth - 0.5).abs() < 1e-15);

    // In, out, in again.
    let twice = line(30, 0.1, |k| if (10..20).contains(&k) { [0.9, 0.0] } else { [0.1, 0.0] });
    assert_eq!(nfz_metrics(&twice, &[disc]).unwrap().n_incursions, 2);
    assert!(nfz_metrics(&twice, &[]).is_err());
}

#[test]
fn acc_ratio_of_identity_and_scaling() {
    let latent = generate_trajectory(5, 0.05, 8, 400, 1.0 / 399.0).unwrap().to_trajectory();
    let same = pushforward_trajectory(&FnMap(ident), &latent).unwrap();
    assert!((acc_ratio(&same, &latent).unwrap() - 1.0).abs() < 0.01);
    let a = 0.6;
    let scaled = pushforward_trajectory(&FnMap(move |z: [f64; 2]| [a * z[0], a * z[1]]), &latent).unwrap();
    assert!((acc_ratio(&scaled, &latent).unwrap() - a * a).abs() < 0.01 * a * a);

    let rays = acc_ratio_on_rays(&FnMap(ident), 0.05, &[0.0, 1.0, 2.5], 20_001, 32).unwrap();
    assert!((rays.ratio - 1.0).abs() < 0.01, "{rays:?}");
    let rays = acc_ratio_on_rays(&FnMap(move |z: [f64; 2]| [a * z[0], a * z[1]]), 0.05, &[0.3], 20_001, 32).unwrap();
    assert!((rays.ratio - a * a).abs() < 0.01 * a * a, "{rays:?}");
}

#[test]
fn acceleration_bound_for_affine_maps() {
    let latent = generate_trajectory(6, 0.1, 5, 300, 1.0 / 299.0).unwrap().to_trajectory();
    let m = [[0.8, -0.3], [0.4, 0.5]];
    let affine = FnMap(move |z: [f64; 2]| [m[0][0] * z[0] + m[0][1] * z[1] + 0.1, m[1][0] * z[0] + m[1][1] * z[1]]);
    let mapped = pushforward_trajectory(&affine, &latent).unwrap();
    let l = map_lipschitz_hat(&affine, 0.1, 2048, 1e-4, 1).unwrap();
    let mh = m_h_hat(&affine, 0.1, 256, 1e-3, 1).unwrap();
    assert!(mh < 1e-6, "{mh}");
    let b = bound_check_trajectories(&mapped, &latent, l, 0.0).unwrap();
    assert!(b.holds, "{b:?}");
}

#[test]
fn acceleration_bound_for_smooth_maps() {
    for seed in 0..20 {
        let map = FnMap(tanh_map(seed));
        let latent = generate_trajectory(seed, 0.1, 4, 300, 1.0 / 299.0).unwrap().to_trajectory();
        let mapped = pushforward_trajectory(&map, &latent).unwrap();
        let l = map_lipschitz_hat(&map, 0.1, 2048, 1e-4, seed).unwrap();
        let mh = m_h_hat(&map, 0.1, 2048, 1e-3, seed).unwrap();
        let b = bound_check_trajectories(&mapped, &latent, l, mh).unwrap();
        assert!(b.holds, "seed {seed}: {b:?}");
    }
}

#[test]
fn cycle_averages_follow_cycle_tags() {
    let traj = generate_trajectory(7, 0.05, 6, 25, 0.1).unwrap().to_trajectory();
    let avg = cycle_averages(&traj, |_| 2.0).unwrap();
    assert_eq!(avg, vec![2.0; 6]);
    let r = cycle_averages(&traj, |p| p[0] * p[0] + p[1] * p[1]).unwrap();
    assert!(r.iter().all(|v| *v > 0.0 && *v < 1.0));
}

#[test]
fn hoeffding_tail_covers_cycle_averages() {
    let map = FnMap(tanh_map(3));
    let l = map_lipschitz_hat(&map, 0.05, 2048, 1e-4, 3).unwrap();
    let cov = hoeffding_coverage(&map, 0.05, 50, 200, 0.05, 50, 200_000, l, 11).unwrap();
    assert!(cov.exceed_fraction <= 0.05, "{cov:?}");
    assert!(cov.cycle_variance <= cov.variance_envelope, "{cov:?}");
    // The identity gives Var = (E r)² / 2 for φ = x₁, inside the envelope.
    let id = hoeffding_coverage(&FnMap(ident), 0.05, 20, 50, 0.05, 200, 100_000, 1.0, 12).unwrap();
    assert!(id.cycle_variance <= id.variance_envelope && id.cycle_variance > 0.15, "{id:?}");
}

#[test]
fn occupancy_error_shrinks_with_cycles() {
    let map = FnMap(tanh_map(9));
    let cfg = ConvergenceConfig {
        ks: vec![5, 20, 100],
        seeds_per_k: 4,
        n_reference: 50_000,
        n_per_leg: 100,
        grid_size: 20,
        bbox: UNIT_BOX,
        delta: 0.05,
    };
    let s = convergence_study(&map, &cfg, 2).unwrap();
    assert!(s.mean[2] < s.mean[0], "{s:?}");
    assert!(s.slope < -0.2, "{s:?}");
    assert_eq!(s.rmse.len(), 3);
    assert!(s.rmse.iter().all(|r| r.len() == 4));
}

#[test]
fn standard_error_shrinks_with_more_seeds() {
    // Across independent draws the spread of a mean over n seeds scales as
    // 1/√n; check the ratio between 8 and 32 seeds is near 2.
    let spread = |n: usize| {
        let means: Vec<f64> = (0..200)
            .map(|rep| {
                let v: Vec<f64> = (0..n)
                    .map(|j| {
                        let s = derive_seed(1, "se", (rep * 1000 + j) as u64);
                        let z = uniform_annulus_sample(s, 0.05, 1).unwrap()[0];
                        z[0]
                    })
                    .collect();
                mean_std(&v).0
            })
            .collect();
        mean_std(&means).1
    };
    let ratio = spread(8) / spread(32);
    assert!((ratio - 2.0).abs() < 0.3 * 2.0, "{ratio}");
}

#[test]
fn w2_separates_mismatched_distributions() {
    let target = TargetSpec::two_gaussians(0.05);
    let w = w2_hat(&FnMap(ident), &target, 0.05, 500, &[1, 2]).unwrap();
    assert!(w.mean > 0.1 && w.values.len() == 2, "{w:?}");
    // A rigid shift by 2 adds roughly 2 to the distance.
    let far = w2_hat(&FnMap(|z: [f64; 2]| [z[0] + 2.0, z[1]]), &target, 0.05, 500, &[1, 2]).unwrap();
    assert!(far.mean > w.mean + 1.5, "{far:?} vs {w:?}");
    assert!(w2_hat(&FnMap(ident), &target, 0.05, 10, &[]).is_err());
}

#[test]
fn fourier_metric_behaviour() {
    let pts = TargetSpec::two_gaussians(0.05).sample(1, 200_000).unwrap();
    let t = grid_histogram(&pts, 30, UNIT_BOX).unwrap();
    assert_eq!(fourier_ergodic_metric(&t, &t, 8).unwrap(), 0.0);
    let single = grid_histogram(&[[0.9, 0.9]], 30, UNIT_BOX).unwrap();
    assert!(fourier_ergodic_metric(&single, &t, 8).unwrap() > 0.0);
    let traj = |k: usize| {
        let latent = generate_trajectory(2, 0.05, k, 60, 1.0).unwrap().to_trajectory();
        let occ = grid_histogram_traj(&latent, 30, UNIT_BOX).unwrap();
        let uniform = grid_histogram(&uniform_annulus_sample(3, 0.05, 200_000).unwrap(), 30, UNIT_BOX).unwrap();
        fourier_ergodic_metric(&occ, &uniform, 8).unwrap()
    };
    assert!(traj(200) < traj(5));
    let mut skewed = t.clone();
    skewed.bbox = [-1.0, 1.0, -1.0, 2.0];
    assert!(fourier_ergodic_metric(&skewed, &skewed, 4).is_err());
}

#[test]
fn energy_proxy_of_simple_motions() {
    let still = line(10, 0.5, |_| [0.2, 0.3]);
    assert_eq!(energy_proxy(&still).unwrap(), 0.0);
    // Unit speed for T = 2: ∫‖ẋ‖² dt = 2.
    let moving = line(21, 0.1, |k| [0.1 * k as f64, 0.0]);
    assert!((energy_proxy(&moving).unwrap() - 2.0).abs() < 1e-12);
    assert!(energy_proxy(&line(1, 0.1, |_| [0.0, 0.0])).is_err());
}

#[test]
fn latent_uniformity_statistics() {
    let z = uniform_annulus_sample(8, 0.05, 100_000).unwrap();
    let f = annulus_bin_fractions(&z, 0.05, 4, 8).unwrap();
    assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // 31 degrees of freedom; the 0.999 quantile is about 61.
    assert!(chi_square_uniform(&f, z.len() as f64) < 61.1);
    assert!(radial_ks(&z, 0.05).unwrap() < 1.95 / (z.len() as f64).sqrt());
    let squeezed: Vec<[f64; 2]> = z.iter().map(|p| [0.5 * p[0], 0.5 * p[1]]).collect();
    assert!(radial_ks(&squeezed, 0.05).unwrap() > 0.5);
}

#[test]
fn metrics_report_round_trips() {
    let r = MetricsReport {
        rho_iid: Some(0.9),
        l_hat: Some(2.5),
        nfz: Some(NfzMetrics { frac_inside: 0.01, max_depth: 0.05, n_incursions: 3, dwell_time: 0.4 }),
        ..MetricsReport::default()
    };
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"L_hat\":2.5"));
    assert_eq!(serde_json::from_str::<MetricsReport>(&json).unwrap(), r);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn region_fractions_sum_to_one(seed in 0u64..1000, n in 1usize..500) {
        let z = uniform_annulus_sample(seed, 0.05, n).unwrap();
        let f = region_fractions(&z, 2, |p| Some(usize::from(p[1] < 0.0))).unwrap();
        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let j = jains_index(&[f[0] / 0.25 + 1e-9, f[1] / 0.75 + 1e-9]).unwrap();
        prop_assert!(j > 0.0 && j <= 1.0 + 1e-12);
    }
}
