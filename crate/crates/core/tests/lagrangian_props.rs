use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regpd::lagrangian::{
    grad_lambda, grad_x, lagrangian_value, sample_constraint, sampling_distribution, stochastic_grad_x, DualVector,
    RegularizationConfig,
};
use regpd::problem::{build_hinge_problem, build_logistic_problem, generate_dataset, project_box_ball, ProblemSpec};

fn problems() -> &'static [ProblemSpec; 2] {
    static P: OnceLock<[ProblemSpec; 2]> = OnceLock::new();
    P.get_or_init(|| {
        let data = generate_dataset(12, 4, 3).unwrap();
        [build_logistic_problem(&data, 0.2, 0.3).unwrap(), build_hinge_problem(&data, 0.2, 0.3).unwrap()]
    })
}

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d).prop_map(|v| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1.0 {
            v.iter().map(|x| x / n).collect()
        } else {
            v
        }
    })
}

fn dual(m: usize) -> impl Strategy<Value = DualVector> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..10.0], m).prop_map(|v| DualVector::new(v).unwrap())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn concave_in_the_multiplier(fam in 0usize..2, agent in 0usize..12, x in point(4), a in dual(8), b in dual(8),
                                 theta in 0.0f64..1.0, eta in 0.0f64..3.0) {
        let p = &problems()[fam];
        let reg = RegularizationConfig::new(eta.max(1e-3)).unwrap();
        let mix = DualVector::new(a.as_slice().iter().zip(b.as_slice()).map(|(u, v)| theta * u + (1.0 - theta) * v).collect()).unwrap();
        let lhs = lagrangian_value(p, agent, &x, &mix, reg).unwrap();
        let rhs = theta * lagrangian_value(p, agent, &x, &a, reg).unwrap()
            + (1.0 - theta) * lagrangian_value(p, agent, &x, &b, reg).unwrap();
        prop_assert!(lhs >= rhs - 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn subgradient_inequality_in_x(fam in 0usize..2, agent in 0usize..12, x in point(4), y in point(4), lam in dual(8)) {
        let p = &problems()[fam];
        let reg = RegularizationConfig::new(1.0).unwrap();
        let lx = lagrangian_value(p, agent, &x, &lam, reg).unwrap();
        let ly = lagrangian_value(p, agent, &y, &lam, reg).unwrap();
        let g = grad_x(p, agent, &x, &lam).unwrap();
        let diff: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        prop_assert!(ly >= lx + dot(&g, &diff) - 1e-12 * (1.0 + lx.abs()));
    }

    #[test]
    fn convex_in_x(fam in 0usize..2, agent in 0usize..12, x in point(4), y in point(4), lam in dual(8), theta in 0.0f64..1.0) {
        let p = &problems()[fam];
        let reg = RegularizationConfig::new(1.0).unwrap();
        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
        let lz = lagrangian_value(p, agent, &z, &lam, reg).unwrap();
        let mix = theta * lagrangian_value(p, agent, &x, &lam, reg).unwrap()
            + (1.0 - theta) * lagrangian_value(p, agent, &y, &lam, reg).unwrap();
        prop_assert!(lz <= mix + 1e-12 * (1.0 + mix.abs()));
    }

    #[test]
    fn dual_gradient_matches_central_differences(fam in 0usize..2, x in point(4), lam in dual(8), eta in 0.01f64..3.0) {
        let p = &problems()[fam];
        let reg = RegularizationConfig::new(eta).unwrap();
        let g = grad_lambda(p, &x, &lam, reg).unwrap();
        let h = 1e-4;
        for k in 0..p.m() {
            let shifted = |s: f64| {
                let mut v = lam.as_slice().to_vec();
                v[k] += s;
                lagrangian_value(p, 0, &x, &DualVector::new(v).unwrap(), reg).unwrap()
            };
            // exact for a quadratic up to rounding
            let fd = (shifted(h) - shifted(0.0)) / h + 0.5 * eta * h;
            prop_assert!((fd - g[k]).abs() <= 1e-7, "k={} fd={} g={}", k, fd, g[k]);
        }
    }

    #[test]
    fn sampled_direction_is_unbiased(fam in 0usize..2, agent in 0usize..12, x in point(4), lam in dual(8)) {
        let p = &problems()[fam];
        let probs = sampling_distribution(&lam);
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let mut expected = [0.0; 4];
        for (k, pk) in probs.iter().enumerate() {
            for (e, v) in expected.iter_mut().zip(stochastic_grad_x(p, agent, &x, &lam, k).unwrap()) {
                *e += pk * v;
            }
        }
        let exact = grad_x(p, agent, &x, &lam).unwrap();
        for (e, v) in expected.iter().zip(&exact) {
            prop_assert!((e - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn box_ball_projection_is_feasible_and_closest(z in prop::collection::vec(-3.0f64..3.0, 4), probe in point(4)) {
        let p = &problems()[0];
        let b = p.feasible_box().unwrap();
        let y = project_box_ball(&z, b, 1.0);
        prop_assert!(b.contains(&y, 1e-9));
        prop_assert!(dot(&y, &y).sqrt() <= 1.0 + 1e-9);
        // any feasible point is at least as far from z
        let mut q = probe.clone();
        b.clamp(&mut q);
        let dist = |a: &[f64]| a.iter().zip(&z).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
        prop_assert!(dist(&q) >= dist(&y) - 1e-9);
    }
}

#[test]
fn sampling_frequencies_follow_the_multiplier() {
    let lam = DualVector::new(vec![1.0, 0.0, 3.0, 6.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 200_000;
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        counts[sample_constraint(&lam, &mut rng)] += 1;
    }
    for (c, p) in counts.iter().zip([0.1, 0.0, 0.3, 0.6]) {
        let freq = *c as f64 / draws as f64;
        // five standard deviations
        assert!((freq - p).abs() <= 5.0 * (p * (1.0 - p) / draws as f64).sqrt() + 1e-12, "{freq} vs {p}");
    }
}
