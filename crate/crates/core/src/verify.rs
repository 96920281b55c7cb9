//! Invariant and theory-bound checks runnable outside the test suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::engine::{project_ball, project_orthant, run, DebugOptions, EngineError, RunConfig, Trace, Variant};
use crate::graph::{barbell, erdos_renyi, lattice8, laplacian_weights, lazy_metropolis, watts_strogatz, ConsensusMatrix};
use crate::lagrangian::{grad_x, sampling_distribution, stochastic_grad_x, DualVector};
use crate::linalg::{axpy, distance, norm};
use crate::metrics::{check_product_sum_inequality, check_tau_inequality};
use crate::problem::{
    build_hinge_problem, build_logistic_problem, generate_dataset, reference_optimum, sample_in_ball, ProblemSpec,
    ReferenceSolution,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyLevel {
    Quick,
    Full,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub level: VerifyLevel,
    pub seed: u64,
    /// Horizon of the canonical run used by the full level.
    pub iterations: usize,
    pub reference_iterations: usize,
    /// Mutation switch: runs the full level with a mis-signed dual update.
    #[doc(hidden)]
    pub flip_dual_sign: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { level: VerifyLevel::Quick, seed: 0, iterations: 10_000, reference_iterations: 1_000_000, flip_dual_sign: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

/// Projection onto the radius-`r` ball by bisection on the multiplier of
/// `min ||y - x||² s.t. ||y||² <= r²`, whose stationary points are
/// `y = x / (1 + μ)`.
pub fn ball_projection_by_bisection(x: &[f64], r: f64) -> Vec<f64> {
    if norm(x) <= r {
        return x.to_vec();
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while norm(x) / (1.0 + hi) > r {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm(x) / (1.0 + mid) > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    x.iter().map(|v| v / (1.0 + hi)).collect()
}

fn check_projections(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_ball = 0.0f64;
    let mut worst_orthant = 0.0f64;
    for _ in 0..10_000 {
        let d = rng.random_range(1..=8);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let x: Vec<f64> = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let r = rng.random_range(0.1..3.0);
        worst_ball = worst_ball.max(distance(&project_ball(&x, r), &ball_projection_by_bisection(&x, r)));
        // coordinatewise: the closest nonnegative number to v
        let oracle: Vec<f64> = x.iter().map(|v| if *v < 0.0 { 0.0 } else { *v }).collect();
        worst_orthant = worst_orthant.max(distance(project_orthant(&x).as_slice(), &oracle));
    }
    vec![
        CheckOutcome::new("ball projection", worst_ball <= 1e-10, format!("max deviation {worst_ball:.2e} over 10^4 inputs")),
        CheckOutcome::new(
            "orthant projection",
            worst_orthant <= 1e-10,
            format!("max deviation {worst_orthant:.2e} over 10^4 inputs"),
        ),
    ]
}

fn check_unbiasedness(seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = generate_dataset(20, 5, seed).expect("valid sizes");
    let problems = [
        build_logistic_problem(&data, 0.1, 0.1).expect("positive margins"),
        build_hinge_problem(&data, 0.1, 0.1).expect("positive margins"),
    ];
    let mut worst = 0.0f64;
    for p in &problems {
        for _ in 0..500 {
            let x = sample_in_ball(&mut rng, p.d(), p.radius());
            let lam = DualVector::new((0..p.m()).map(|_| rng.random::<f64>() * 5.0).collect()).expect("nonnegative");
            let agent = rng.random_range(0..p.n());
            let probs = sampling_distribution(&lam);
            let mut avg = vec![0.0; p.d()];
            for (k, pk) in probs.iter().enumerate() {
                axpy(*pk, &stochastic_grad_x(p, agent, &x, &lam, k).expect("valid index"), &mut avg);
            }
            worst = worst.max(distance(&avg, &grad_x(p, agent, &x, &lam).expect("valid agent")));
        }
    }
    CheckOutcome::new("unbiasedness", worst <= 1e-12, format!("max deviation {worst:.2e} over 10^3 points"))
}

fn check_inequalities(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..10_000 {
        let len = rng.random_range(1..200);
        let eta = rng.random_range(0.01..10.0);
        let alphas: Vec<f64> = (0..len).map(|_| (1.0 - rng.random::<f64>()) / eta).collect();
        if !check_product_sum_inequality(&alphas, eta).unwrap_or(false) {
            failures += 1;
        }
    }
    let mut tau_failures = 0;
    for tau in 1..=50 {
        for t in tau - 1..=10_000 {
            if !check_tau_inequality(tau, t).unwrap_or(false) {
                tau_failures += 1;
            }
        }
    }
    vec![
        CheckOutcome::new("product-sum inequality", failures == 0, format!("{failures} failures in 10^4 sequences")),
        CheckOutcome::new(
            "tau inequality",
            tau_failures == 0,
            format!("{tau_failures} failures for tau <= 50, t <= 10^4"),
        ),
    ]
}

/// Doubly stochastic, structure, symmetry checks; returns a description of
/// the first failure.
pub fn mixing_matrix_problems(
    w: &ConsensusMatrix,
    g: &crate::graph::GraphTopology,
    diagonally_dominant: bool,
) -> Option<String> {
    let n = w.n();
    for i in 0..n {
        let row: f64 = (0..n).map(|j| w.get(i, j)).sum();
        let col: f64 = (0..n).map(|j| w.get(j, i)).sum();
        if (row - 1.0).abs() > 1e-12 || (col - 1.0).abs() > 1e-12 {
            return Some(format!("row/column {i} sums to {row}/{col}"));
        }
        let mut off = 0.0;
        for j in 0..n {
            let v = w.get(i, j);
            if v < 0.0 {
                return Some(format!("negative entry at ({i},{j})"));
            }
            if i != j {
                if v > 0.0 && !g.has_edge(i, j) {
                    return Some(format!("weight on non-edge ({i},{j})"));
                }
                if (v - w.get(j, i)).abs() > 1e-15 {
                    return Some(format!("asymmetric at ({i},{j})"));
                }
                off += v;
            }
        }
        if diagonally_dominant && w.get(i, i) < off - 1e-15 {
            return Some(format!("row {i} not diagonally dominant"));
        }
    }
    if w.sigma2() >= 1.0 {
        return Some("sigma2 = 1 on a connected graph".into());
    }
    None
}

fn check_mixing(seed: u64) -> CheckOutcome {
    let graphs = [
        watts_strogatz(40, 6, 0.1, seed),
        erdos_renyi(40, 0.2, seed),
        lattice8(5, 6),
        barbell(20, 2),
        watts_strogatz(100, 20, 0.02, seed),
    ];
    for g in graphs {
        let g = match g {
            Ok(g) => g,
            Err(e) => return CheckOutcome::new("mixing matrices", false, format!("graph generation failed: {e}")),
        };
        let lm = lazy_metropolis(&g);
        if let Some(problem) = mixing_matrix_problems(&lm, &g, true) {
            return CheckOutcome::new("mixing matrices", false, format!("lazy Metropolis: {problem}"));
        }
        let bound = 71.0 * (g.n() as f64).powi(2);
        if 1.0 / lm.spectral_gap() > bound {
            return CheckOutcome::new("mixing matrices", false, format!("1/(1-sigma2) above 71 n^2 for n = {}", g.n()));
        }
        match laplacian_weights(&g) {
            Ok(lw) => {
                if let Some(problem) = mixing_matrix_problems(&lw, &g, false) {
                    return CheckOutcome::new("mixing matrices", false, format!("Laplacian: {problem}"));
                }
            }
            Err(e) => return CheckOutcome::new("mixing matrices", false, format!("Laplacian weights: {e}")),
        }
    }
    CheckOutcome::new("mixing matrices", true, "5 graphs, both weightings".into())
}

fn monitored_run(
    p: &ProblemSpec,
    w: &ConsensusMatrix,
    cfg: &RunConfig,
    reference: &ReferenceSolution,
) -> Result<Trace, String> {
    match run(p, w, cfg, reference) {
        Ok(t) => Ok(t),
        Err(EngineError::Diverged { t, reason, partial }) => {
            log::warn!("canonical run diverged at t = {t}: {reason}");
            Ok(*partial)
        }
        Err(e) => Err(e.to_string()),
    }
}

fn full_checks(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let data = match generate_dataset(100, 5, opts.seed) {
        Ok(d) => d,
        Err(e) => return vec![CheckOutcome::new("setup", false, e.to_string())],
    };
    let graph = match watts_strogatz(100, 20, 0.02, opts.seed) {
        Ok(g) => g,
        Err(e) => return vec![CheckOutcome::new("setup", false, e.to_string())],
    };
    let w = lazy_metropolis(&graph);
    let p = build_logistic_problem(&data, 0.1, 0.1).expect("positive margins");
    let reference = match reference_optimum(&p, opts.reference_iterations, opts.seed) {
        Ok(r) => r,
        Err(e) => return vec![CheckOutcome::new("reference optimum", false, e.to_string())],
    };
    let cfg = RunConfig {
        variant: Variant::Deterministic,
        iterations: opts.iterations,
        eta: 1.0,
        seed: opts.seed,
        monitor_bounds: true,
        debug: DebugOptions { flip_dual_sign: opts.flip_dual_sign, constant_step: false },
        ..RunConfig::default()
    };
    match monitored_run(&p, &w, &cfg, &reference) {
        Ok(trace) => {
            let mon = trace.monitors.as_ref().expect("monitoring enabled");
            let completed = trace.iterations_completed == opts.iterations;
            for c in mon.checks() {
                let passed = c.passed() && completed;
                let mut detail = format!(
                    "{} checks, {} violations, worst margin {:.3e} at t = {}",
                    c.checks, c.violations, c.worst_margin, c.worst_t
                );
                if !completed {
                    detail.push_str(&format!("; run stopped after {} iterations", trace.iterations_completed));
                }
                out.push(CheckOutcome::new(&format!("bound {}", c.name), passed, detail));
            }
        }
        Err(e) => out.push(CheckOutcome::new("canonical run", false, e)),
    }

    // strictly feasible instance: the ball optimum stays clear of the box
    let strict = build_logistic_problem(&data, 0.8, 0.8).expect("positive margins");
    let outcome = match reference_optimum(&strict, opts.reference_iterations, opts.seed) {
        Ok(r) => {
            let slack = strict.constraint_values(&r.x_star).into_iter().fold(f64::NEG_INFINITY, f64::max);
            let cfg = RunConfig { monitor_bounds: false, ..cfg.clone() };
            match monitored_run(&strict, &w, &cfg, &r) {
                Ok(trace) => {
                    let ratio = |lo: usize, hi: usize| {
                        trace
                            .records
                            .iter()
                            .filter(|rec| rec.t >= lo && rec.t <= hi && rec.t >= 2)
                            .map(|rec| rec.violation_sq * (rec.t as f64).sqrt() / (trace.eta * (rec.t as f64).ln()))
                            .fold(0.0, f64::max)
                    };
                    let early = ratio(100, 1000);
                    let late = ratio(1000, opts.iterations);
                    let passed = slack < 0.0 && late.is_finite() && late <= 2.0 * early + 1e-9;
                    CheckOutcome::new(
                        "violation rate, strictly feasible",
                        passed,
                        format!("max g(x*) = {slack:.3e}; scaled violation {early:.3e} early, {late:.3e} late"),
                    )
                }
                Err(e) => CheckOutcome::new("violation rate, strictly feasible", false, e),
            }
        }
        Err(e) => CheckOutcome::new("violation rate, strictly feasible", false, e.to_string()),
    };
    out.push(outcome);
    out
}

/// Runs the suite for `opts.level` and returns one outcome per check.
pub fn run_checks(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let mut out = check_projections(opts.seed);
    out.push(check_unbiasedness(opts.seed));
    out.extend(check_inequalities(opts.seed));
    out.push(check_mixing(opts.seed));
    if opts.level == VerifyLevel::Full {
        out.extend(full_checks(opts));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisection_projection_agrees_on_hand_cases() {
        let y = ball_projection_by_bisection(&[3.0, 4.0], 1.0);
        assert!((y[0] - 0.6).abs() < 1e-12 && (y[1] - 0.8).abs() < 1e-12);
        assert_eq!(ball_projection_by_bisection(&[0.1, 0.2], 1.0), vec![0.1, 0.2]);
    }

    #[test]
    fn quick_suite_passes() {
        let results = run_checks(&VerifyOptions::default());
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
        assert_eq!(results.len(), 6);
    }
}
