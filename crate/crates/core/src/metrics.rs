//! Evaluation metrics, theory-bound constants and numeric inequality checks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{AgentState, Trace};
use crate::graph::ConsensusMatrix;
use crate::linalg::norm;
use crate::problem::{ProblemSpec, ReferenceSolution};

/// Normalizers below this are treated as degenerate.
pub const DEGENERATE_NORMALIZER: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("agent {0} has no running average yet")]
    UndefinedAverage(usize),
    #[error("agent count mismatch: {0} states vs {1} initial states")]
    AgentMismatch(usize, usize),
    #[error("initial constraint norm of agent {0} is zero")]
    ZeroDenominator(usize),
    #[error("spectral gap is zero; the graph is disconnected")]
    ZeroGap,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("need at least {needed} records in the window, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("non-positive value {value} at t = {t}")]
    NonPositive { t: usize, value: f64 },
    #[error("unknown metric column `{0}`")]
    UnknownColumn(String),
}

/// Metrics for one recorded iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub eps: f64,
    /// Set when the initial gap was degenerate and `eps` holds the absolute
    /// gap instead of the relative one.
    pub eps_absolute: bool,
    pub delta: f64,
    pub max_lambda_norm: f64,
    pub consensus_diameter: f64,
    pub thm2_bound: Option<f64>,
    pub bound_margin_thm2: Option<f64>,
    pub violation_sq: f64,
    /// `max_i f(x̂_i) - f*`.
    pub max_gap: f64,
    /// `Σ_i ||λ_i||²`.
    pub lambda_sq_sum: f64,
}

/// Columns of a trace that can be fitted or exported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Column {
    #[serde(rename = "eps_G")]
    Eps,
    #[serde(rename = "delta_G")]
    Delta,
    #[serde(rename = "max_lambda_norm")]
    MaxLambdaNorm,
    #[serde(rename = "consensus_diameter")]
    ConsensusDiameter,
    #[serde(rename = "violation_sq")]
    ViolationSq,
    #[serde(rename = "max_gap")]
    MaxGap,
    #[serde(rename = "lambda_sq_sum")]
    LambdaSqSum,
}

impl Column {
    pub const ALL: [Column; 7] = [
        Column::Eps,
        Column::Delta,
        Column::MaxLambdaNorm,
        Column::ConsensusDiameter,
        Column::ViolationSq,
        Column::MaxGap,
        Column::LambdaSqSum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::Eps => "eps_G",
            Column::Delta => "delta_G",
            Column::MaxLambdaNorm => "max_lambda_norm",
            Column::ConsensusDiameter => "consensus_diameter",
            Column::ViolationSq => "violation_sq",
            Column::MaxGap => "max_gap",
            Column::LambdaSqSum => "lambda_sq_sum",
        }
    }

    pub fn get(self, r: &IterationRecord) -> f64 {
        match self {
            Column::Eps => r.eps,
            Column::Delta => r.delta,
            Column::MaxLambdaNorm => r.max_lambda_norm,
            Column::ConsensusDiameter => r.consensus_diameter,
            Column::ViolationSq => r.violation_sq,
            Column::MaxGap => r.max_gap,
            Column::LambdaSqSum => r.lambda_sq_sum,
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Column {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Column::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| MetricsError::UnknownColumn(s.to_string()))
    }
}

fn averages(states: &[AgentState]) -> Result<Vec<Vec<f64>>, MetricsError> {
    states.iter().enumerate().map(|(i, s)| s.average().ok_or(MetricsError::UndefinedAverage(i))).collect()
}

fn paired(states: &[AgentState], initial: &[AgentState]) -> Result<(), MetricsError> {
    if states.len() == initial.len() {
        Ok(())
    } else {
        Err(MetricsError::AgentMismatch(states.len(), initial.len()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonValue {
    pub value: f64,
    pub absolute: bool,
}

/// `max_i |(f(x̂_i) - f*) / (f(x̂_i(0)) - f*)|`, computed from the objective
/// values. If any normalizer is below [`DEGENERATE_NORMALIZER`] the whole
/// metric falls back to `max_i |f(x̂_i) - f*|` and is tagged absolute.
pub fn epsilon_from_values(values: &[f64], initial_values: &[f64], f_star: f64) -> EpsilonValue {
    let degenerate = initial_values.iter().any(|f0| (f0 - f_star).abs() < DEGENERATE_NORMALIZER);
    let value = values
        .iter()
        .zip(initial_values)
        .map(|(f, f0)| if degenerate { (f - f_star).abs() } else { ((f - f_star) / (f0 - f_star)).abs() })
        .fold(0.0, f64::max);
    EpsilonValue { value, absolute: degenerate }
}

pub fn epsilon_g(
    p: &ProblemSpec,
    reference: &ReferenceSolution,
    states: &[AgentState],
    initial_states: &[AgentState],
) -> Result<EpsilonValue, MetricsError> {
    paired(states, initial_states)?;
    let f: Vec<f64> = averages(states)?.iter().map(|x| p.cumulative_value(x)).collect();
    let f0: Vec<f64> = averages(initial_states)?.iter().map(|x| p.cumulative_value(x)).collect();
    Ok(epsilon_from_values(&f, &f0, reference.f_star))
}

/// `max_i ||g(x̂_i)|| / ||g(x̂_i(0))||` from precomputed norms.
pub fn delta_from_norms(norms: &[f64], initial_norms: &[f64]) -> Result<f64, MetricsError> {
    let mut out = 0.0f64;
    for (i, (n, n0)) in norms.iter().zip(initial_norms).enumerate() {
        if *n0 == 0.0 {
            return Err(MetricsError::ZeroDenominator(i));
        }
        out = out.max(n / n0);
    }
    Ok(out)
}

pub fn delta_g(p: &ProblemSpec, states: &[AgentState], initial_states: &[AgentState]) -> Result<f64, MetricsError> {
    paired(states, initial_states)?;
    let g_norm = |x: &Vec<f64>| norm(&p.constraint_values(x));
    let n: Vec<f64> = averages(states)?.iter().map(g_norm).collect();
    let n0: Vec<f64> = averages(initial_states)?.iter().map(g_norm).collect();
    delta_from_norms(&n, &n0)
}

/// `||[(1/n) Σ_i g_i]_+||²` from per-agent constraint vectors.
pub fn violation_from_values(constraint_values: &[Vec<f64>]) -> f64 {
    let n = constraint_values.len() as f64;
    let m = constraint_values.first().map_or(0, Vec::len);
    (0..m)
        .map(|k| {
            let mean = constraint_values.iter().map(|g| g[k]).sum::<f64>() / n;
            let pos = mean.max(0.0);
            pos * pos
        })
        .sum()
}

pub fn violation_functional(p: &ProblemSpec, states: &[AgentState]) -> Result<f64, MetricsError> {
    let g: Vec<Vec<f64>> = averages(states)?.iter().map(|x| p.constraint_values(x)).collect();
    Ok(violation_from_values(&g))
}

/// `(log(T sqrt(nT)) / (1 - σ₂))^{3/2}`.
pub fn mixing_log_term(n: usize, horizon: f64, sigma2: f64) -> Result<f64, MetricsError> {
    let gap = 1.0 - sigma2;
    if gap <= 0.0 {
        return Err(MetricsError::ZeroGap);
    }
    let log = (horizon * (n as f64 * horizon).sqrt()).ln();
    Ok((log.max(0.0) / gap).powf(1.5))
}

/// `1 + n m^{3/2} L R / η`, the factor in the primal subgradient bound.
pub fn dual_growth_factor(n: usize, m: usize, lipschitz: f64, radius: f64, eta: f64) -> f64 {
    1.0 + n as f64 * (m as f64).powf(1.5) * lipschitz * radius / eta
}

/// The constant `C` of the convergence-rate bound.
pub fn thm2_constant(p: &ProblemSpec, w: &ConsensusMatrix, eta: f64, horizon: usize, n: usize) -> Result<f64, MetricsError> {
    if horizon < 2 {
        return Err(MetricsError::Precondition(format!("horizon T = {horizon} < 2")));
    }
    let (m, l, r) = (p.m() as f64, p.lipschitz(), p.radius());
    let growth = dual_growth_factor(n, p.m(), l, r, eta);
    let log_term = mixing_log_term(n, horizon as f64, w.sigma2())?;
    Ok(1.0 + 2.5 * m * l * l * r * r + 20.0 * l * l * growth * growth * log_term)
}

/// `R C log(T) / (sqrt(T) - 1)` for `T >= 2`.
pub fn thm2_bound(radius: f64, c: f64, t: usize) -> Option<f64> {
    (t >= 2).then(|| radius * c * (t as f64).ln() / ((t as f64).sqrt() - 1.0))
}

/// High-probability bound for the stochastic variant:
/// `log(T) / (sqrt(T) - 1) * (R C + 4 sqrt(10) n m² L² R³ / η)`.
pub fn sampled_high_probability_bound(p: &ProblemSpec, c: f64, eta: f64, n: usize, t: usize) -> Option<f64> {
    let (m, l, r) = (p.m() as f64, p.lipschitz(), p.radius());
    let extra = 4.0 * 10f64.sqrt() * n as f64 * m * m * l * l * r.powi(3) / eta;
    (t >= 2).then(|| (t as f64).ln() / ((t as f64).sqrt() - 1.0) * (r * c + extra))
}

/// `n m L² R² / η²`, the bound on `Σ_i ||λ_i||²`.
pub fn lambda_sq_bound(n: usize, m: usize, lipschitz: f64, radius: f64, eta: f64) -> f64 {
    n as f64 * m as f64 * (lipschitz * radius / eta).powi(2)
}

/// `L (1 + n m^{3/2} L R / η)`.
pub fn grad_x_bound(n: usize, m: usize, lipschitz: f64, radius: f64, eta: f64) -> f64 {
    lipschitz * dual_growth_factor(n, m, lipschitz, radius, eta)
}

/// `2 m L² R² + 2 η² ||λ||²`.
pub fn grad_lambda_sq_bound(m: usize, lipschitz: f64, radius: f64, eta: f64, lambda_sq: f64) -> f64 {
    2.0 * m as f64 * (lipschitz * radius).powi(2) + 2.0 * eta * eta * lambda_sq
}

/// `5 L (1 + n m^{3/2} L R / η) (log(T sqrt(nT)) / (1 - σ₂))^{3/2} α(t)`.
#[allow(clippy::too_many_arguments)]
pub fn consensus_bound(
    n: usize,
    m: usize,
    lipschitz: f64,
    radius: f64,
    eta: f64,
    horizon: usize,
    sigma2: f64,
    alpha_t: f64,
) -> Result<f64, MetricsError> {
    let log_term = mixing_log_term(n, horizon.max(2) as f64, sigma2)?;
    Ok(5.0 * lipschitz * dual_growth_factor(n, m, lipschitz, radius, eta) * log_term * alpha_t)
}

/// Checks `Σ_{ℓ<=t} α(ℓ)η Π_{k=ℓ+1..t} (1 - α(k)η) <= 1` for every prefix
/// `t`, using the recursion `S_t = (1 - α(t)η) S_{t-1} + α(t)η`.
pub fn check_product_sum_inequality(alphas: &[f64], eta: f64) -> Result<bool, MetricsError> {
    if let Some((t, a)) = alphas.iter().enumerate().find(|(_, a)| !(**a >= 0.0 && **a * eta <= 1.0)) {
        return Err(MetricsError::Precondition(format!("alpha({t}) * eta = {} not in [0, 1]", a * eta)));
    }
    if !(eta >= 0.0) {
        return Err(MetricsError::Precondition(format!("eta = {eta} is negative")));
    }
    let mut s = 0.0;
    for a in alphas {
        let q = a * eta;
        s = s * (1.0 - q) + q;
        if s > 1.0 + 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Checks `Σ_{r=t-τ+1}^{t-1} sqrt((t+1)/(r+1)) <= τ^{3/2}`.
pub fn check_tau_inequality(tau: usize, t: usize) -> Result<bool, MetricsError> {
    if tau == 0 || t + 1 < tau {
        return Err(MetricsError::Precondition(format!("need tau >= 1 and t >= tau - 1 (tau={tau}, t={t})")));
    }
    let lhs: f64 = (t + 1 - tau..t).map(|r| ((t + 1) as f64 / (r + 1) as f64).sqrt()).sum();
    Ok(lhs <= (tau as f64).powf(1.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: f64,
    pub r2: f64,
    pub points: usize,
}

/// Least-squares slope of `log(value)` against `log(t)`.
pub fn fit_power_law(ts: &[usize], values: &[f64]) -> Result<RateFit, MetricsError> {
    if ts.len() < 10 {
        return Err(MetricsError::InsufficientData { needed: 10, found: ts.len() });
    }
    let mut xs = Vec::with_capacity(ts.len());
    let mut ys = Vec::with_capacity(ts.len());
    for (&t, &v) in ts.iter().zip(values) {
        if !(v > 0.0) || t == 0 {
            return Err(MetricsError::NonPositive { t, value: v });
        }
        xs.push((t as f64).ln());
        ys.push(v.ln());
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::Precondition("all t values coincide".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(RateFit { exponent: slope, r2, points: xs.len() })
}

/// Fits the decay exponent of `column` over records with `t` in
/// `[window.0, window.1]`.
pub fn rate_fit(trace: &Trace, column: Column, window: (usize, usize)) -> Result<RateFit, MetricsError> {
    let (ts, vs): (Vec<usize>, Vec<f64>) = trace
        .records
        .iter()
        .filter(|r| r.t >= window.0 && r.t <= window.1)
        .map(|r| (r.t, column.get(r)))
        .unzip();
    fit_power_law(&ts, &vs)
}
