mod common;

use common::brute_w2;
use ergoflow::ot::*;
use ergoflow::rng::stream;
use ergoflow::Point;
use proptest::prelude::*;
use rand::Rng;

fn cloud(seed: u64, n: usize) -> Vec<Point> {
    let mut r = stream(seed, "cloud", 0);
    (0..n).map(|_| [r.random::<f64>() * 2.0 - 1.0, r.random::<f64>() * 2.0 - 1.0]).collect()
}

#[test]
fn exact_w2_equals_brute_force() {
    for inst in 0..100u64 {
        let n = 1 + (inst % 8) as usize;
        let (a, b) = (cloud(2 * inst, n), cloud(2 * inst + 1, n));
        assert_eq!(exact_w2(&a, &b).unwrap(), brute_w2(&a, &b), "instance {inst}");
    }
}

#[test]
fn w2_rejects_bad_sizes() {
    assert!(exact_w2(&cloud(0, 3), &cloud(1, 4)).is_err());
    assert!(exact_w2_capped(&cloud(0, 10), &cloud(1, 10), 8).is_err());
}

#[test]
fn sinkhorn_marginals_converge() {
    let (a, b) = (cloud(3, 64), cloud(4, 64));
    let plan = sinkhorn_plan(&a, &b, 0.05, 300).unwrap();
    assert!(plan.marginal_residual() < 1e-6);
    assert!(plan.plan.iter().all(|v| *v >= 0.0));
}

#[test]
fn anneal_gap_closes_on_tiny_instances() {
    for seed in 0..5 {
        let (a, b) = (cloud(10 + seed, 6), cloud(20 + seed, 6));
        let exact = exact_w2(&a, &b).unwrap().powi(2);
        // Convergence is sublinear at this ε, so the budget is generous.
        let plan = sinkhorn_plan(&a, &b, 1e-4, 20_000).unwrap();
        let cost = plan.transport_cost(&a, &b);
        assert!((cost - exact).abs() <= 0.02 * exact, "{cost} vs {exact}");
    }
}

#[test]
fn pair_sampling_is_reproducible() {
    let (a, b) = (cloud(5, 32), cloud(6, 32));
    let plan = sinkhorn_plan(&a, &b, 0.05, 50).unwrap();
    assert_eq!(sample_pairs(&plan, 9).unwrap(), sample_pairs(&plan, 9).unwrap());
    assert!(sample_pairs(&plan, 9).unwrap().iter().enumerate().all(|(i, (r, _))| i == *r));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn w2_is_a_metric_on_samples(s in 0u64..10_000, n in 1usize..24) {
        let (a, b, c) = (cloud(s, n), cloud(s + 1, n), cloud(s + 2, n));
        let ab = exact_w2(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - exact_w2(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(exact_w2(&a, &a).unwrap(), 0.0);
        let mut shuffled = a.clone();
        shuffled.reverse();
        prop_assert_eq!(exact_w2(&a, &shuffled).unwrap(), 0.0);
        let (bc, ac) = (exact_w2(&b, &c).unwrap(), exact_w2(&a, &c).unwrap());
        prop_assert!(ac <= ab + bc + 1e-10);
    }
}
