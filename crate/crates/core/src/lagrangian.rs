//! Regularized Lagrangian `L_i(x, λ) = f_i(x) + <λ, g(x)> - (η/2)||λ||²`,
//! its subgradients, and the constraint-sampled stochastic subgradient.

use rand::Rng;
use rand_distr::{Distribution, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{axpy, dot, norm1};
use crate::problem::ProblemSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LagrangianError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("{what} index {index} out of range 0..{len}")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },
    #[error("dual vector has invalid component {value} at {index}")]
    InvalidDual { index: usize, value: f64 },
    #[error("regularization parameter must be positive and finite, got {0}")]
    InvalidEta(f64),
    #[error("eta * alpha({t}) = {product} exceeds 1/2")]
    StepTooLarge { t: usize, product: f64 },
}

/// Multipliers in the nonnegative orthant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DualVector(Vec<f64>);

impl DualVector {
    pub fn new(values: Vec<f64>) -> Result<Self, LagrangianError> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(LagrangianError::InvalidDual { index, value });
        }
        Ok(Self(values))
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    /// Orthant projection: replaces every negative component by zero.
    pub fn project(mut values: Vec<f64>) -> Self {
        values.iter_mut().for_each(|v| *v = v.max(0.0));
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm1(&self) -> f64 {
        norm1(&self.0)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

impl TryFrom<Vec<f64>> for DualVector {
    type Error = LagrangianError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<DualVector> for Vec<f64> {
    fn from(d: DualVector) -> Self {
        d.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationConfig {
    eta: f64,
}

impl RegularizationConfig {
    pub fn new(eta: f64) -> Result<Self, LagrangianError> {
        if eta > 0.0 && eta.is_finite() {
            Ok(Self { eta })
        } else {
            Err(LagrangianError::InvalidEta(eta))
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Checks `η α(t) <= 1/2` for every step in the schedule.
    pub fn validate_steps(&self, steps: impl IntoIterator<Item = f64>) -> Result<(), LagrangianError> {
        for (t, a) in steps.into_iter().enumerate() {
            let product = self.eta * a;
            if product > 0.5 {
                return Err(LagrangianError::StepTooLarge { t, product });
            }
        }
        Ok(())
    }
}

fn check(p: &ProblemSpec, agent: usize, x: &[f64], lam: &DualVector) -> Result<(), LagrangianError> {
    if agent >= p.n() {
        return Err(LagrangianError::IndexOutOfRange { what: "agent", index: agent, len: p.n() });
    }
    check_point(p, x, lam)
}

fn check_point(p: &ProblemSpec, x: &[f64], lam: &DualVector) -> Result<(), LagrangianError> {
    if x.len() != p.d() {
        return Err(LagrangianError::DimensionMismatch { what: "x", expected: p.d(), got: x.len() });
    }
    if lam.len() != p.m() {
        return Err(LagrangianError::DimensionMismatch { what: "lambda", expected: p.m(), got: lam.len() });
    }
    Ok(())
}

pub fn lagrangian_value(
    p: &ProblemSpec,
    agent: usize,
    x: &[f64],
    lam: &DualVector,
    reg: RegularizationConfig,
) -> Result<f64, LagrangianError> {
    check(p, agent, x, lam)?;
    let g = p.constraint_values(x);
    Ok(p.objective(agent).value(x) + dot(lam.as_slice(), &g) - 0.5 * reg.eta() * lam.norm_sq())
}

/// `∇f_i(x) + Σ_k λ_k ∇g_k(x)`.
pub fn grad_x(p: &ProblemSpec, agent: usize, x: &[f64], lam: &DualVector) -> Result<Vec<f64>, LagrangianError> {
    check(p, agent, x, lam)?;
    let mut out = vec![0.0; p.d()];
    let mut scratch = vec![0.0; p.d()];
    grad_x_into(p, agent, x, lam.as_slice(), &mut out, &mut scratch);
    Ok(out)
}

/// Unchecked [`grad_x`] writing into `out`; `scratch` must have length `d`.
pub fn grad_x_into(p: &ProblemSpec, agent: usize, x: &[f64], lam: &[f64], out: &mut [f64], scratch: &mut [f64]) {
    p.objective(agent).subgradient(x, out);
    for (k, &l) in lam.iter().enumerate() {
        if l != 0.0 {
            p.constraint(k).subgradient(x, scratch);
            axpy(l, scratch, out);
        }
    }
}

/// `g(x) - η λ`.
pub fn grad_lambda(
    p: &ProblemSpec,
    x: &[f64],
    lam: &DualVector,
    reg: RegularizationConfig,
) -> Result<Vec<f64>, LagrangianError> {
    check_point(p, x, lam)?;
    let mut out = vec![0.0; p.m()];
    grad_lambda_into(p, x, lam.as_slice(), reg.eta(), &mut out);
    Ok(out)
}

/// Unchecked [`grad_lambda`]; `eta` may be zero here (unregularized baseline).
pub fn grad_lambda_into(p: &ProblemSpec, x: &[f64], lam: &[f64], eta: f64, out: &mut [f64]) {
    for (k, (o, l)) in out.iter_mut().zip(lam).enumerate() {
        *o = p.constraint(k).value(x) - eta * l;
    }
}

/// `p_k = λ_k / ||λ||_1`, or uniform when λ is exactly zero.
pub fn sampling_distribution(lam: &DualVector) -> Vec<f64> {
    let m = lam.len();
    let total = lam.norm1();
    if total == 0.0 {
        vec![1.0 / m as f64; m]
    } else {
        lam.as_slice().iter().map(|v| v / total).collect()
    }
}

/// Draws a constraint index from [`sampling_distribution`].
pub fn sample_constraint<R: Rng + ?Sized>(lam: &DualVector, rng: &mut R) -> usize {
    if lam.is_zero() {
        rng.random_range(0..lam.len())
    } else {
        WeightedIndex::new(lam.as_slice()).expect("nonzero dual has positive mass").sample(rng)
    }
}

/// `∇f_i(x) + ||λ||_1 ∇g_k(x)`.
pub fn stochastic_grad_x(
    p: &ProblemSpec,
    agent: usize,
    x: &[f64],
    lam: &DualVector,
    k: usize,
) -> Result<Vec<f64>, LagrangianError> {
    check(p, agent, x, lam)?;
    if k >= p.m() {
        return Err(LagrangianError::IndexOutOfRange { what: "constraint", index: k, len: p.m() });
    }
    let mut out = vec![0.0; p.d()];
    let mut scratch = vec![0.0; p.d()];
    stochastic_grad_x_into(p, agent, x, lam.norm1(), k, &mut out, &mut scratch);
    Ok(out)
}

/// Unchecked [`stochastic_grad_x`] taking `||λ||_1` directly.
pub fn stochastic_grad_x_into(
    p: &ProblemSpec,
    agent: usize,
    x: &[f64],
    lam_norm1: f64,
    k: usize,
    out: &mut [f64],
    scratch: &mut [f64],
) {
    p.objective(agent).subgradient(x, out);
    if lam_norm1 != 0.0 {
        p.constraint(k).subgradient(x, scratch);
        axpy(lam_norm1, scratch, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_hinge_problem, build_logistic_problem, generate_dataset, Affine, ConvexFunction};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn toy() -> ProblemSpec {
        let f: Arc<dyn ConvexFunction> = Arc::new(Affine { coefficients: vec![1.0], offset: 0.0 });
        let g: Arc<dyn ConvexFunction> = Arc::new(Affine { coefficients: vec![1.0], offset: -0.5 });
        ProblemSpec::new(1, vec![f], vec![g], 1.0, 1.0).unwrap()
    }

    fn reg(eta: f64) -> RegularizationConfig {
        RegularizationConfig::new(eta).unwrap()
    }

    #[test]
    fn toy_lagrangian_value() {
        let lam = DualVector::new(vec![2.0]).unwrap();
        assert_abs_diff_eq!(lagrangian_value(&toy(), 0, &[0.0], &lam, reg(1.0)).unwrap(), -3.0);
        let zero = DualVector::zeros(1);
        assert_abs_diff_eq!(lagrangian_value(&toy(), 0, &[0.3], &zero, reg(1.0)).unwrap(), 0.3);
        // g(0.5) = 0 leaves only the regularizer
        assert_abs_diff_eq!(lagrangian_value(&toy(), 0, &[0.5], &lam, reg(0.5)).unwrap(), 0.5 - 1.0);
    }

    #[test]
    fn toy_grad_lambda() {
        let g = grad_lambda(&toy(), &[0.0], &DualVector::zeros(1), reg(1.0)).unwrap();
        assert_eq!(g, vec![-0.5]);
        // g(x) = η λ makes the dual gradient vanish
        let lam = DualVector::new(vec![0.25]).unwrap();
        assert_abs_diff_eq!(grad_lambda(&toy(), &[1.0], &lam, reg(2.0)).unwrap()[0], 0.0);
    }

    #[test]
    fn box_constraint_multiplier_shifts_gradient() {
        let data = generate_dataset(4, 3, 2).unwrap();
        let p = build_logistic_problem(&data, 0.1, 0.1).unwrap();
        let x = [0.05, -0.02, 0.3];
        let base = grad_x(&p, 1, &x, &DualVector::zeros(6)).unwrap();
        let mut e = vec![0.0; 6];
        e[2] = 1.0;
        let shifted = grad_x(&p, 1, &x, &DualVector::new(e).unwrap()).unwrap();
        assert_eq!(shifted[0], base[0]);
        assert_eq!(shifted[1], base[1]);
        assert_abs_diff_eq!(shifted[2], base[2] - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sampling_distribution_cases() {
        assert_eq!(sampling_distribution(&DualVector::zeros(4)), vec![0.25; 4]);
        assert_eq!(sampling_distribution(&DualVector::new(vec![2.0, 0.0, 0.0]).unwrap()), vec![1.0, 0.0, 0.0]);
        assert_eq!(sampling_distribution(&DualVector::new(vec![1.0, 3.0]).unwrap()), vec![0.25, 0.75]);
    }

    #[test]
    fn sampled_index_follows_weights() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let lam = DualVector::new(vec![0.0, 1.0, 3.0]).unwrap();
        let mut counts = [0usize; 3];
        for _ in 0..40_000 {
            counts[sample_constraint(&lam, &mut rng)] += 1;
        }
        assert_eq!(counts[0], 0);
        assert!((counts[2] as f64 / 40_000.0 - 0.75).abs() < 0.01);
    }

    #[test]
    fn single_constraint_stochastic_equals_deterministic() {
        let lam = DualVector::new(vec![1.7]).unwrap();
        let a = grad_x(&toy(), 0, &[0.2], &lam).unwrap();
        let b = stochastic_grad_x(&toy(), 0, &[0.2], &lam, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unbiasedness_by_enumeration() {
        use crate::problem::sample_in_ball;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let data = generate_dataset(10, 5, 8).unwrap();
        for p in [build_logistic_problem(&data, 0.1, 0.1).unwrap(), build_hinge_problem(&data, 0.1, 0.1).unwrap()] {
            for _ in 0..100 {
                let x = sample_in_ball(&mut rng, 5, 1.0);
                let lam = DualVector::new((0..10).map(|_| rng.random::<f64>() * 3.0).collect()).unwrap();
                let probs = sampling_distribution(&lam);
                let exact = grad_x(&p, 3, &x, &lam).unwrap();
                let mut avg = vec![0.0; 5];
                for (k, pk) in probs.iter().enumerate() {
                    axpy(*pk, &stochastic_grad_x(&p, 3, &x, &lam, k).unwrap(), &mut avg);
                }
                for (a, e) in avg.iter().zip(&exact) {
                    assert_abs_diff_eq!(a, e, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn errors() {
        let p = toy();
        let lam = DualVector::zeros(1);
        assert!(matches!(grad_x(&p, 1, &[0.0], &lam), Err(LagrangianError::IndexOutOfRange { .. })));
        assert!(matches!(grad_x(&p, 0, &[0.0, 1.0], &lam), Err(LagrangianError::DimensionMismatch { .. })));
        assert!(matches!(
            stochastic_grad_x(&p, 0, &[0.0], &lam, 1),
            Err(LagrangianError::IndexOutOfRange { what: "constraint", .. })
        ));
        assert!(DualVector::new(vec![1.0, -1e-300]).is_err());
        assert!(DualVector::new(vec![f64::NAN]).is_err());
        assert!(RegularizationConfig::new(0.0).is_err());
        assert_eq!(DualVector::project(vec![-1.0, 2.0, 0.0]).as_slice(), &[0.0, 2.0, 0.0]);
    }

    #[test]
    fn step_validation() {
        let r = reg(1.0);
        assert!(r.validate_steps((0..10).map(|t| 0.5 / ((t + 1) as f64).sqrt())).is_ok());
        assert_eq!(
            r.validate_steps([0.4, 0.6]),
            Err(LagrangianError::StepTooLarge { t: 1, product: 0.6 })
        );
    }

    #[test]
    fn dual_vector_serde_rejects_negative() {
        assert!(serde_json::from_str::<DualVector>("[1.0, -2.0]").is_err());
        let d: DualVector = serde_json::from_str("[1.0, 2.0]").unwrap();
        assert_eq!(d.norm1(), 3.0);
    }
}
