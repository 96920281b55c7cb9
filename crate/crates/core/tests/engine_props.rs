use proptest::prelude::*;
use regpd::engine::{
    initial_point, run, step_deterministic, step_stochastic, AgentState, InitMode, RunConfig, StepParams, Variant,
};
use regpd::graph::{erdos_renyi, lazy_metropolis, watts_strogatz};
use regpd::metrics::{rate_fit, Column};
use regpd::problem::{build_hinge_problem, build_logistic_problem, generate_dataset, reference_optimum};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn iterates_stay_in_ball_and_orthant(seed in 0u64..500, hinge in any::<bool>(), stochastic in any::<bool>(),
                                        eta in 0.05f64..3.0, margin in 0.01f64..1.0) {
        let data = generate_dataset(12, 3, seed).unwrap();
        let p = if hinge {
            build_hinge_problem(&data, margin, margin).unwrap()
        } else {
            build_logistic_problem(&data, margin, margin).unwrap()
        };
        let w = lazy_metropolis(&erdos_renyi(12, 0.4, seed).unwrap());
        let params = StepParams::new(eta, (0.5 / eta).min(1.0));
        let x0 = initial_point(&p, InitMode::RandomFeasible, seed).unwrap();
        let mut states: Vec<AgentState> = (0..12).map(|_| AgentState::new(x0.clone(), p.m(), params.alpha(0))).collect();
        for t in 0..200 {
            states = if stochastic {
                step_stochastic(&states, &p, &w, t, &params, seed).unwrap()
            } else {
                step_deterministic(&states, &p, &w, t, &params).unwrap()
            };
            for s in &states {
                let nx = s.x.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(nx <= 1.0 + 1e-12);
                prop_assert!(s.lam.as_slice().iter().all(|&l| l >= 0.0));
            }
        }
    }
}

#[test]
fn traces_are_identical_across_thread_counts() {
    let data = generate_dataset(30, 4, 2).unwrap();
    let p = build_logistic_problem(&data, 0.1, 0.1).unwrap();
    let w = lazy_metropolis(&watts_strogatz(30, 6, 0.1, 2).unwrap());
    let reference = reference_optimum(&p, 50_000, 2).unwrap();
    for variant in [Variant::Deterministic, Variant::Stochastic] {
        let cfg = RunConfig { variant, iterations: 500, seed: 9, record_every: 5, ..RunConfig::default() };
        let one = in_pool(1, || run(&p, &w, &cfg, &reference).unwrap());
        let many = in_pool(4, || run(&p, &w, &cfg, &reference).unwrap());
        assert_eq!(one.to_csv(), many.to_csv());
        assert_eq!(one.final_states, many.final_states);
    }
}

#[test]
fn seeds_change_only_the_stochastic_variant() {
    let data = generate_dataset(20, 3, 5).unwrap();
    let p = build_logistic_problem(&data, 0.1, 0.1).unwrap();
    let w = lazy_metropolis(&watts_strogatz(20, 4, 0.1, 5).unwrap());
    let reference = reference_optimum(&p, 20_000, 5).unwrap();
    let go = |variant, seed| {
        let cfg = RunConfig { variant, iterations: 200, seed, ..RunConfig::default() };
        run(&p, &w, &cfg, &reference).unwrap().final_states
    };
    assert_eq!(go(Variant::Deterministic, 1), go(Variant::Deterministic, 2));
    assert_ne!(go(Variant::Stochastic, 1), go(Variant::Stochastic, 2));
}

#[test]
fn default_run_decays_at_the_expected_pace() {
    // margins l = u = 1 as used for the topology comparison
    let data = generate_dataset(100, 5, 1).unwrap();
    let p = build_logistic_problem(&data, 1.0, 1.0).unwrap();
    let w = lazy_metropolis(&watts_strogatz(100, 20, 0.02, 7).unwrap());
    let reference = reference_optimum(&p, 1_000_000, 1).unwrap();
    let cfg = RunConfig { iterations: 10_000, ..RunConfig::default() };
    let trace = run(&p, &w, &cfg, &reference).unwrap();
    let early = trace.record_at(100).unwrap().eps;
    let late = trace.record_at(10_000).unwrap().eps;
    assert!(late < early / 3.0, "eps {early} at 100, {late} at 10^4");
    let fit = rate_fit(&trace, Column::Eps, (100, 10_000)).unwrap();
    assert!(fit.exponent <= -0.3, "fitted exponent {}", fit.exponent);
}
