mod common;

use common::direct_blur;
use ergoflow::eval::{density_grid, grid_histogram, pearson_corr, UNIT_BOX};
use ergoflow::rng::stream;
use ergoflow::targets::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn smooth_grid() -> GriddedDensity {
    let raw = Array2::from_shape_fn((40, 40), |(i, j)| {
        let (x, y) = (j as f64 / 39.0 - 0.5, i as f64 / 39.0 - 0.3);
        (-(x * x + y * y) / 0.05).exp() + 0.1
    });
    ingest_grid(&raw, 1.5, 1e-12, [-1.0, 1.0, -1.0, 1.0]).unwrap()
}

#[test]
fn densities_integrate_to_one() {
    let targets = [
        TargetSpec::two_gaussians(0.01),
        TargetSpec::half_disc_3_to_1(),
        TargetSpec::GriddedDensity(smooth_grid()),
    ];
    let mut rng = stream(17, "proposals", 0);
    let proposals: Vec<[f64; 2]> =
        (0..1_000_000).map(|_| [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0]).collect();
    for t in &targets {
        let mc = 4.0 * proposals.iter().map(|p| t.density(*p)).sum::<f64>() / proposals.len() as f64;
        assert!((mc - 1.0).abs() < 0.01, "{t:?}: {mc}");
    }
}

#[test]
fn half_disc_split_is_three_to_one() {
    let pts = TargetSpec::half_disc_3_to_1().sample(4, 1_000_000).unwrap();
    let lower = pts.iter().filter(|p| p[1] < 0.0).count() as f64 / pts.len() as f64;
    let sigma = (0.75 * 0.25 / pts.len() as f64).sqrt();
    assert!((lower - 0.75).abs() < 3.0 * sigma, "{lower}");
    assert!(pts.iter().all(|p| p[0] * p[0] + p[1] * p[1] <= 1.0));
}

#[test]
fn samples_match_density() {
    for t in [TargetSpec::two_gaussians(0.01), TargetSpec::GriddedDensity(smooth_grid())] {
        let pts = t.sample(5, 1_000_000).unwrap();
        let h = grid_histogram(&pts, 50, UNIT_BOX).unwrap();
        let d = density_grid(&t, 50, UNIT_BOX).unwrap();
        let rho = pearson_corr(&h, &d).unwrap();
        assert!(rho > 0.99, "{rho}");
    }
}

#[test]
fn mixture_respects_annulus_clip() {
    let pts = TargetSpec::two_gaussians(0.05).sample(6, 50_000).unwrap();
    assert!(pts.iter().all(|p| {
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        (0.05..=1.0).contains(&r)
    }));
}

#[test]
fn blur_matches_direct_convolution() {
    let mut hot = Array2::zeros((100, 100));
    hot[[37, 61]] = 1.0;
    let mut rng = stream(8, "grid", 0);
    let noisy = Array2::from_shape_fn((23, 31), |_| rng.random::<f64>());
    for (raw, sigma) in [(&hot, 1.5), (&noisy, 1.5), (&noisy, 0.7), (&noisy, 4.0)] {
        let got = gaussian_blur(raw, sigma);
        let want = direct_blur(raw, sigma);
        let err = (&got - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-9, "sigma {sigma}: {err}");
    }
    let g = ingest_grid(&hot, 1.5, 0.0, [-1.0, 1.0, -1.0, 1.0]).unwrap();
    let arg = g.values.iter().enumerate().fold((0, 0.0), |b, (k, &v)| if v > b.1 { (k, v) } else { b }).0;
    assert_eq!((arg / 100, arg % 100), (37, 61));
    assert!((g.total_mass() - 1.0).abs() < 1e-12);
}

#[test]
fn floor_keeps_density_positive() {
    let mut raw = Array2::zeros((30, 30));
    raw[[3, 3]] = 5.0;
    let floor = 1e-12;
    let g = ingest_grid(&raw, 1.5, floor, [-1.0, 1.0, -1.0, 1.0]).unwrap();
    let blurred = gaussian_blur(&raw, 1.5).mapv(|v| v.max(floor));
    let norm = 1.0 / (blurred.sum() * g.cell_area());
    let min = g.values.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min > 0.0 && min >= floor * norm * (1.0 - 1e-12), "{min}");
}

#[test]
fn ingestion_is_idempotent_on_normalised_grids() {
    let g = smooth_grid();
    let again = ingest_grid(&g.to_array(), 0.0, 1e-12, g.bbox).unwrap();
    for (a, b) in g.values.iter().zip(&again.values) {
        assert!((a - b).abs() <= 1e-9 * a.abs(), "{a} vs {b}");
    }
}

#[test]
fn rejects_malformed_grids() {
    assert!(ingest_grid(&Array2::zeros((1, 5)), 1.0, 1e-12, UNIT_BOX).is_err());
    assert!(ingest_grid(&Array2::from_elem((3, 3), -1.0), 1.0, 1e-12, UNIT_BOX).is_err());
    assert!(ingest_grid(&Array2::from_elem((3, 3), f64::NAN), 1.0, 1e-12, UNIT_BOX).is_err());
    assert!(read_grid("1,2\n3\n".as_bytes()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ingested_grids_are_probability_densities(
        h in 2usize..20,
        w in 2usize..20,
        sigma in 0.0f64..3.0,
        seed in 0u64..1000,
    ) {
        let mut rng = stream(seed, "grid", 0);
        let raw = Array2::from_shape_fn((h, w), |_| if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random::<f64>() * 10.0 });
        let g = ingest_grid(&raw, sigma, 1e-12, UNIT_BOX).unwrap();
        prop_assert!((g.total_mass() - 1.0).abs() < 1e-3);
        prop_assert!(g.values.iter().all(|v| *v > 0.0));
    }
}
