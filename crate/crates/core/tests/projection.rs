mod common;

use common::{max_abs_diff, oracle_project};
use probmask::projection::{project_global, project_layerwise, residual, DEFAULT_TOL};
use proptest::prelude::*;

fn proj(z: &[f64], k: f64) -> Vec<f64> {
    project_global(z, k, DEFAULT_TOL).unwrap().s
}

#[test]
fn oracle_matches_worked_examples() {
    assert_eq!(oracle_project(&[0.2, 0.3], 1.0), vec![0.2, 0.3]);
    assert_eq!(oracle_project(&[1.0, 1.0], 1.0), vec![0.5, 0.5]);
    assert_eq!(oracle_project(&[2.0, 0.3, -0.1], 1.0), vec![1.0, 0.0, 0.0]);
    assert_eq!(oracle_project(&[-0.5, 0.5], 2.0), vec![0.0, 0.5]);
}

#[test]
#[should_panic(expected = "refuses")]
fn oracle_refuses_large_inputs() {
    oracle_project(&[0.0; 13], 1.0);
}

#[test]
fn degenerate_ties_agree_with_oracle() {
    for (z, k) in [
        (vec![2.0, 2.0, 0.5], 2.0),
        (vec![1.0, 1.0, 1.0], 3.0),
        (vec![0.3, 0.3, 0.3, 0.3], 0.6),
        (vec![5.0, -5.0], 0.5),
    ] {
        assert!(max_abs_diff(&proj(&z, k), &oracle_project(&z, k)) < 1e-9, "{z:?}");
    }
}

#[test]
fn flat_residual_gives_same_point_at_both_ends() {
    // z = [2, 2, 0.5], K = 2: residual is zero for every v in [0.5, 1].
    let z = [2.0, 2.0, 0.5];
    let at = |v: f64| z.iter().map(|zi| (zi - v).clamp(0.0, 1.0)).collect::<Vec<_>>();
    assert_eq!(residual(0.5, &z, 2.0), 0.0);
    assert_eq!(residual(1.0, &z, 2.0), 0.0);
    assert_eq!(at(0.5), at(1.0));
    assert_eq!(proj(&z, 2.0), at(0.75));
}

#[test]
fn layerwise_budgets_scale_with_layer_size() {
    let out = project_layerwise(&[vec![1.0; 4], vec![1.0; 2]], 0.5, DEFAULT_TOL).unwrap();
    assert!((out[0].s.iter().sum::<f64>() - 2.0).abs() < 1e-9);
    assert!((out[1].s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

fn instance() -> impl Strategy<Value = (Vec<f64>, f64)> {
    prop::collection::vec(-2.0f64..3.0, 1..40).prop_flat_map(|z| {
        let n = z.len() as f64;
        (Just(z), 1e-3f64..=n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn output_is_feasible((z, k) in instance()) {
        let s = proj(&z, k);
        prop_assert!(s.iter().all(|&v| (-1e-8..=1.0 + 1e-8).contains(&v)));
        prop_assert!(s.iter().sum::<f64>() <= k + 1e-8);
    }

    #[test]
    fn projection_is_idempotent((z, k) in instance()) {
        let s = proj(&z, k);
        prop_assert!(max_abs_diff(&proj(&s, k), &s) <= 1e-10);
    }

    #[test]
    fn projection_is_non_expansive(
        (z1, k) in instance(),
        shift in prop::collection::vec(-1.0f64..1.0, 40),
    ) {
        let z2: Vec<f64> = z1.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let (p1, p2) = (proj(&z1, k), proj(&z2, k));
        let dp: f64 = p1.iter().zip(&p2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let dz: f64 = z1.iter().zip(&z2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(dp <= dz + 1e-9);
    }

    #[test]
    fn residual_is_non_increasing((z, k) in instance(), mut vs in prop::collection::vec(-4.0f64..4.0, 2..30)) {
        vs.sort_by(f64::total_cmp);
        for w in vs.windows(2) {
            prop_assert!(residual(w[1], &z, k) <= residual(w[0], &z, k));
        }
    }

    #[test]
    fn small_instances_match_oracle(z in prop::collection::vec(-2.0f64..3.0, 1..7), frac in 0.05f64..1.0) {
        let k = frac * z.len() as f64;
        prop_assert!(max_abs_diff(&proj(&z, k), &oracle_project(&z, k)) <= 1e-6);
    }
}
