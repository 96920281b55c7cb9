//! Synchronous multi-agent execution of the regularized primal-dual
//! iteration (deterministic and constraint-sampled variants) and the
//! centralized unregularized baseline.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::ConsensusMatrix;
use crate::lagrangian::{
    grad_lambda_into, grad_x_into, sample_constraint, stochastic_grad_x_into, DualVector, LagrangianError,
    RegularizationConfig,
};
use crate::linalg::{axpy, distance, dot, norm};
use crate::metrics::{self, IterationRecord, MetricsError};
use crate::problem::{sample_on_sphere, ProblemError, ProblemSpec, ReferenceSolution};

/// Runs abort once any agent's multiplier norm exceeds this.
pub const LAMBDA_GUARD: f64 = 1e6;

/// Slack allowed on the convergence-rate monitor for the approximate `f*`.
pub const REFERENCE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("run diverged at t = {t}: {reason}")]
    Diverged { t: usize, reason: String, partial: Box<Trace> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Deterministic,
    Stochastic,
    CentralizedUnregularized,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Deterministic => "deterministic",
            Variant::Stochastic => "stochastic",
            Variant::CentralizedUnregularized => "centralized_unregularized",
        }
    }

    fn is_regularized(self) -> bool {
        !matches!(self, Variant::CentralizedUnregularized)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Variant::Deterministic, Variant::Stochastic, Variant::CentralizedUnregularized]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Origin,
    RandomFeasible,
}

impl InitMode {
    pub fn name(self) -> &'static str {
        match self {
            InitMode::Origin => "origin",
            InitMode::RandomFeasible => "random_feasible",
        }
    }
}

impl FromStr for InitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "origin" => Ok(InitMode::Origin),
            "random_feasible" => Ok(InitMode::RandomFeasible),
            _ => Err(format!("unknown init mode `{s}`")),
        }
    }
}

/// Options for experiments only; not part of the documented interface.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebugOptions {
    /// Ascends in the wrong direction on the dual update.
    #[serde(default)]
    pub flip_dual_sign: bool,
    /// Uses `α(t) = c` instead of `c / sqrt(t + 1)`.
    #[serde(default)]
    pub constant_step: bool,
}

impl DebugOptions {
    fn is_default(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub iterations: usize,
    pub eta: f64,
    /// `c` in `α(t) = c / sqrt(t + 1)`. When unset: `R`, lowered to
    /// `1 / (2η)` if needed so that `η α(0) <= 1/2`.
    pub step_scale: Option<f64>,
    pub seed: u64,
    pub init: InitMode,
    pub record_every: usize,
    pub monitor_bounds: bool,
    #[doc(hidden)]
    #[serde(default, skip_serializing_if = "DebugOptions::is_default")]
    pub debug: DebugOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Deterministic,
            iterations: 10_000,
            eta: 1.0,
            step_scale: None,
            seed: 0,
            init: InitMode::Origin,
            record_every: 10,
            monitor_bounds: false,
            debug: DebugOptions::default(),
        }
    }
}

impl RunConfig {
    /// The effective `c` for problem `p`.
    pub fn step_scale_for(&self, p: &ProblemSpec) -> f64 {
        self.step_scale.unwrap_or_else(|| {
            let r = p.radius();
            if self.variant.is_regularized() && self.eta > 0.0 {
                r.min(0.5 / self.eta)
            } else {
                r
            }
        })
    }

    /// The regularization actually used; zero for the baseline.
    pub fn effective_eta(&self) -> f64 {
        if self.variant.is_regularized() {
            self.eta
        } else {
            0.0
        }
    }

    pub fn validate(&self, p: &ProblemSpec) -> Result<(), EngineError> {
        if self.record_every == 0 {
            return Err(EngineError::Config("record_every must be at least 1".into()));
        }
        let c = self.step_scale_for(p);
        if !(c > 0.0 && c.is_finite()) {
            return Err(EngineError::Config(format!("step scale must be positive and finite, got {c}")));
        }
        if self.variant.is_regularized() {
            let reg = RegularizationConfig::new(self.eta)?;
            // α is non-increasing, so α(0) is the binding step.
            reg.validate_steps([c]).map_err(|e| {
                EngineError::Config(format!("{e}; lower step_scale to at most {}", 0.5 / self.eta))
            })?;
        }
        Ok(())
    }

    fn params(&self, p: &ProblemSpec) -> StepParams {
        StepParams {
            eta: self.effective_eta(),
            step_scale: self.step_scale_for(p),
            constant_step: self.debug.constant_step,
            flip_dual_sign: self.debug.flip_dual_sign,
        }
    }
}

/// `c / sqrt(t + 1)`.
pub fn stepsize(t: usize, step_scale: f64) -> f64 {
    step_scale / ((t + 1) as f64).sqrt()
}

/// Resolved per-step constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub eta: f64,
    pub step_scale: f64,
    #[doc(hidden)]
    pub constant_step: bool,
    #[doc(hidden)]
    pub flip_dual_sign: bool,
}

impl StepParams {
    pub fn new(eta: f64, step_scale: f64) -> Self {
        Self { eta, step_scale, constant_step: false, flip_dual_sign: false }
    }

    pub fn alpha(&self, t: usize) -> f64 {
        if self.constant_step {
            self.step_scale
        } else {
            stepsize(t, self.step_scale)
        }
    }
}

/// `R x / max(R, ||x||)`.
pub fn project_ball(x: &[f64], radius: f64) -> Vec<f64> {
    let mut v = x.to_vec();
    project_ball_in_place(&mut v, radius);
    v
}

fn project_ball_in_place(x: &mut [f64], radius: f64) {
    let nrm = norm(x);
    if nrm > radius {
        x.iter_mut().for_each(|v| *v = radius * *v / nrm);
    }
}

/// Componentwise `max(0, v_k)`.
pub fn project_orthant(v: &[f64]) -> DualVector {
    DualVector::project(v.to_vec())
}

/// Local variables of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: Vec<f64>,
    pub lam: DualVector,
    /// `Σ_s α(s) x(s)`.
    pub avg_numerator: Vec<f64>,
    /// `Σ_s α(s)`.
    pub weight_sum: f64,
}

impl AgentState {
    /// State at `t = 0`, with the running average seeded by `x0` at weight
    /// `alpha0`.
    pub fn new(x0: Vec<f64>, m: usize, alpha0: f64) -> Self {
        let avg_numerator = x0.iter().map(|v| alpha0 * v).collect();
        Self { x: x0, lam: DualVector::zeros(m), avg_numerator, weight_sum: alpha0 }
    }

    /// `x̂ = avg_numerator / weight_sum`, or `None` before any weight.
    pub fn average(&self) -> Option<Vec<f64>> {
        (self.weight_sum > 0.0).then(|| self.avg_numerator.iter().map(|v| v / self.weight_sum).collect())
    }
}

/// Per-agent diagnostics from one step, taken at the pre-step point.
#[derive(Debug, Clone, Copy)]
struct LocalDiag {
    grad_x_norm: f64,
    grad_lambda_sq: f64,
    lambda_sq: f64,
}

/// Counter-based stream for agent `i` at iteration `t`.
fn agent_rng(seed: u64, agent: usize, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64);
    rng.set_word_pos((t as u128) << 8);
    rng
}

fn rows_of(w: &ConsensusMatrix) -> Vec<Vec<(usize, f64)>> {
    (0..w.n()).map(|i| w.row_support(i)).collect()
}

fn check_shapes(states: &[AgentState], p: &ProblemSpec, w: &ConsensusMatrix) -> Result<(), EngineError> {
    if states.len() != p.n() || w.n() != p.n() {
        return Err(EngineError::DimensionMismatch(format!(
            "{} states, {} agents in the problem, {}x{} mixing matrix",
            states.len(),
            p.n(),
            w.n(),
            w.n()
        )));
    }
    for (i, s) in states.iter().enumerate() {
        if s.x.len() != p.d() || s.lam.len() != p.m() || s.avg_numerator.len() != p.d() {
            return Err(EngineError::DimensionMismatch(format!("agent {i} has inconsistent dimensions")));
        }
    }
    Ok(())
}

/// One synchronous iteration. `sampling_seed` selects the stochastic
/// direction.
fn advance(
    states: &[AgentState],
    p: &ProblemSpec,
    rows: &[Vec<(usize, f64)>],
    t: usize,
    params: &StepParams,
    sampling_seed: Option<u64>,
) -> (Vec<AgentState>, Vec<LocalDiag>) {
    let (d, m) = (p.d(), p.m());
    let alpha = params.alpha(t);
    let dual_sign = if params.flip_dual_sign { -1.0 } else { 1.0 };

    let local: Vec<(Vec<f64>, Vec<f64>, LocalDiag)> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut gx = vec![0.0; d];
            let mut scratch = vec![0.0; d];
            match sampling_seed {
                None => grad_x_into(p, i, &s.x, s.lam.as_slice(), &mut gx, &mut scratch),
                Some(seed) => {
                    let k = sample_constraint(&s.lam, &mut agent_rng(seed, i, t));
                    stochastic_grad_x_into(p, i, &s.x, s.lam.norm1(), k, &mut gx, &mut scratch);
                }
            }
            let mut gl = vec![0.0; m];
            grad_lambda_into(p, &s.x, s.lam.as_slice(), params.eta, &mut gl);
            let diag =
                LocalDiag { grad_x_norm: norm(&gx), grad_lambda_sq: dot(&gl, &gl), lambda_sq: s.lam.norm_sq() };
            let mut y = s.x.clone();
            axpy(-alpha, &gx, &mut y);
            let mut gamma = s.lam.as_slice().to_vec();
            axpy(dual_sign * alpha, &gl, &mut gamma);
            (y, gamma, diag)
        })
        .collect();

    let alpha_next = params.alpha(t + 1);
    let radius = p.radius();
    let next: Vec<AgentState> = (0..states.len())
        .into_par_iter()
        .map(|i| {
            let mut x = vec![0.0; d];
            let mut lam = vec![0.0; m];
            for &(j, wij) in &rows[i] {
                axpy(wij, &local[j].0, &mut x);
                axpy(wij, &local[j].1, &mut lam);
            }
            project_ball_in_place(&mut x, radius);
            let mut avg_numerator = states[i].avg_numerator.clone();
            axpy(alpha_next, &x, &mut avg_numerator);
            AgentState { x, lam: DualVector::project(lam), avg_numerator, weight_sum: states[i].weight_sum + alpha_next }
        })
        .collect();
    (next, local.into_iter().map(|l| l.2).collect())
}

/// One iteration of the deterministic method from the iteration-`t`
/// snapshot `states`.
pub fn step_deterministic(
    states: &[AgentState],
    p: &ProblemSpec,
    w: &ConsensusMatrix,
    t: usize,
    params: &StepParams,
) -> Result<Vec<AgentState>, EngineError> {
    check_shapes(states, p, w)?;
    let (next, _) = advance(states, p, &rows_of(w), t, params, None);
    ensure_finite(&next, t)?;
    Ok(next)
}

/// One iteration of the constraint-sampled method; agent `i` draws its index
/// from the stream keyed by `(seed, i, t)`.
pub fn step_stochastic(
    states: &[AgentState],
    p: &ProblemSpec,
    w: &ConsensusMatrix,
    t: usize,
    params: &StepParams,
    seed: u64,
) -> Result<Vec<AgentState>, EngineError> {
    check_shapes(states, p, w)?;
    let (next, _) = advance(states, p, &rows_of(w), t, params, Some(seed));
    ensure_finite(&next, t)?;
    Ok(next)
}

fn ensure_finite(states: &[AgentState], t: usize) -> Result<(), EngineError> {
    match divergence_reason(states) {
        None => Ok(()),
        Some(reason) => Err(EngineError::Diverged { t: t + 1, reason, partial: Box::new(Trace::empty()) }),
    }
}

fn divergence_reason(states: &[AgentState]) -> Option<String> {
    for (i, s) in states.iter().enumerate() {
        if !s.x.iter().chain(s.lam.as_slice()).all(|v| v.is_finite()) {
            return Some(format!("agent {i} has non-finite iterates"));
        }
        let ln = s.lam.norm_sq().sqrt();
        if ln > LAMBDA_GUARD {
            return Some(format!("agent {i} multiplier norm {ln:.3e} exceeds {LAMBDA_GUARD:e}"));
        }
    }
    None
}

/// Shared starting point: the origin, or a uniformly random direction
/// scaled by bisection to the edge of the feasible set within the ball.
pub fn initial_point(p: &ProblemSpec, init: InitMode, seed: u64) -> Result<Vec<f64>, EngineError> {
    match init {
        InitMode::Origin => Ok(vec![0.0; p.d()]),
        InitMode::RandomFeasible => {
            let feasible = |x: &[f64]| p.constraint_values(x).iter().all(|g| *g <= 0.0);
            if !feasible(&vec![0.0; p.d()]) {
                return Err(EngineError::Config("random_feasible init needs a feasible origin".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::MAX);
            let dir: Vec<f64> = sample_on_sphere(&mut rng, p.d()).into_iter().map(|v| v * p.radius()).collect();
            let at = |s: f64| dir.iter().map(|v| s * v).collect::<Vec<f64>>();
            if feasible(&at(1.0)) {
                return Ok(at(1.0));
            }
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if feasible(&at(mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(at(lo))
        }
    }
}

/// Outcome of one bound monitored over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub checks: u64,
    pub violations: u64,
    /// Smallest `bound - observed` seen.
    pub worst_margin: f64,
    pub worst_t: usize,
}

impl BoundCheck {
    fn new(name: &str) -> Self {
        Self { name: name.to_string(), checks: 0, violations: 0, worst_margin: f64::INFINITY, worst_t: 0 }
    }

    fn observe(&mut self, t: usize, observed: f64, bound: f64) {
        self.checks += 1;
        let margin = bound - observed;
        if !(observed <= bound + 1e-12 * bound.abs().max(1.0)) {
            self.violations += 1;
        }
        if margin < self.worst_margin || margin.is_nan() {
            self.worst_margin = margin;
            self.worst_t = t;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Theory bounds checked along a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundMonitor {
    /// `Σ_i ||λ_i(t)||² <= n m L² R² / η²` at every iteration.
    pub lambda_sq: BoundCheck,
    /// Primal direction norm bound at every iteration and agent.
    pub grad_x: BoundCheck,
    /// Dual direction squared-norm bound at every iteration and agent.
    pub grad_lambda: BoundCheck,
    /// Pairwise distance bound at recorded iterations.
    pub consensus: BoundCheck,
    /// Convergence-rate bound (plus reference tolerance) at recorded `t >= 2`.
    pub rate: BoundCheck,
}

impl BoundMonitor {
    fn new() -> Self {
        Self {
            lambda_sq: BoundCheck::new("lambda_sq_sum"),
            grad_x: BoundCheck::new("grad_x_norm"),
            grad_lambda: BoundCheck::new("grad_lambda_sq"),
            consensus: BoundCheck::new("consensus_distance"),
            rate: BoundCheck::new("rate_thm2"),
        }
    }

    pub fn checks(&self) -> [&BoundCheck; 5] {
        [&self.lambda_sq, &self.grad_x, &self.grad_lambda, &self.consensus, &self.rate]
    }

    pub fn all_passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed())
    }
}

/// Result of a run: metric records, final agent states and bound monitors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub variant: Option<Variant>,
    pub records: Vec<IterationRecord>,
    pub final_states: Vec<AgentState>,
    pub monitors: Option<BoundMonitor>,
    pub f_star: f64,
    pub step_scale: f64,
    pub eta: f64,
    pub iterations_completed: usize,
}

pub const TRACE_COLUMNS: [&str; 11] = [
    "t",
    "eps_G",
    "delta_G",
    "max_lambda_norm",
    "consensus_diameter",
    "bound_margin_thm2",
    "thm2_bound",
    "violation_sq",
    "max_gap",
    "lambda_sq_sum",
    "eps_absolute",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Trace {
    fn empty() -> Self {
        Self {
            variant: None,
            records: Vec::new(),
            final_states: Vec::new(),
            monitors: None,
            f_star: f64::NAN,
            step_scale: f64::NAN,
            eta: f64::NAN,
            iterations_completed: 0,
        }
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn record_at(&self, t: usize) -> Option<&IterationRecord> {
        self.records.iter().find(|r| r.t == t)
    }

    /// Running averages `x̂_i` of the final states.
    pub fn final_averages(&self) -> Vec<Option<Vec<f64>>> {
        self.final_states.iter().map(AgentState::average).collect()
    }

    /// Metric table, one row per record; floats use shortest round-trip
    /// formatting so equal traces give equal bytes.
    pub fn to_csv(&self) -> String {
        let mut out = TRACE_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            let row = [
                r.t.to_string(),
                r.eps.to_string(),
                r.delta.to_string(),
                r.max_lambda_norm.to_string(),
                r.consensus_diameter.to_string(),
                opt(r.bound_margin_thm2),
                opt(r.thm2_bound),
                r.violation_sq.to_string(),
                r.max_gap.to_string(),
                r.lambda_sq_sum.to_string(),
                u8::from(r.eps_absolute).to_string(),
            ];
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Two-column `t,<metric>` table for plotting tools.
    pub fn column_csv(&self, column: metrics::Column) -> String {
        let mut out = format!("t,{}\n", column.name());
        for r in &self.records {
            out.push_str(&format!("{},{}\n", r.t, column.get(r)));
        }
        out
    }
}

/// Runs the configured variant for `cfg.iterations` steps.
pub fn run(
    p: &ProblemSpec,
    w: &ConsensusMatrix,
    cfg: &RunConfig,
    reference: &ReferenceSolution,
) -> Result<Trace, EngineError> {
    if cfg.variant == Variant::CentralizedUnregularized {
        return run_centralized_unregularized(p, cfg, reference);
    }
    cfg.validate(p)?;
    if w.n() != p.n() {
        return Err(EngineError::DimensionMismatch(format!("{} agents but a {}x{} mixing matrix", p.n(), w.n(), w.n())));
    }
    execute(p, w, cfg, &cfg.params(p), reference)
}

/// Single agent with the averaged objective, `η = 0`, no consensus step.
pub fn run_centralized_unregularized(
    p: &ProblemSpec,
    cfg: &RunConfig,
    reference: &ReferenceSolution,
) -> Result<Trace, EngineError> {
    if cfg.variant != Variant::CentralizedUnregularized {
        return Err(EngineError::Config(format!("variant {} is not the centralized baseline", cfg.variant)));
    }
    cfg.validate(p)?;
    let central = p.centralized();
    execute(&central, &ConsensusMatrix::uniform(1), cfg, &cfg.params(p), reference)
}

struct Recorder<'a> {
    p: &'a ProblemSpec,
    f_star: f64,
    f0: Vec<f64>,
    g0_norm: Vec<f64>,
    thm2: Option<(f64, f64, usize)>,
    sigma2: f64,
}

impl Recorder<'_> {
    fn record(&self, t: usize, states: &[AgentState]) -> Result<IterationRecord, EngineError> {
        let p = self.p;
        let evals: Vec<(f64, Vec<f64>)> = states
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let xh = s.average().ok_or(MetricsError::UndefinedAverage(i))?;
                Ok((p.cumulative_value(&xh), p.constraint_values(&xh)))
            })
            .collect::<Result<_, MetricsError>>()?;
        let f: Vec<f64> = evals.iter().map(|e| e.0).collect();
        let g_norm: Vec<f64> = evals.iter().map(|e| norm(&e.1)).collect();
        let g: Vec<Vec<f64>> = evals.into_iter().map(|e| e.1).collect();
        let eps = metrics::epsilon_from_values(&f, &self.f0, self.f_star);
        let delta = metrics::delta_from_norms(&g_norm, &self.g0_norm)?;
        let max_gap = f.iter().map(|v| v - self.f_star).fold(f64::NEG_INFINITY, f64::max);
        let mut diameter = 0.0f64;
        for i in 0..states.len() {
            for j in i + 1..states.len() {
                diameter = diameter.max(distance(&states[i].x, &states[j].x));
            }
        }
        let lambda_sq_sum: f64 = states.iter().map(|s| s.lam.norm_sq()).sum();
        let max_lambda_norm = states.iter().map(|s| s.lam.norm_sq().sqrt()).fold(0.0, f64::max);
        let thm2_bound = self.thm2.and_then(|(eta, _, n)| {
            let c = thm2_constant_raw(p, self.sigma2, eta, t, n)?;
            metrics::thm2_bound(p.radius(), c, t)
        });
        Ok(IterationRecord {
            t,
            eps: eps.value,
            eps_absolute: eps.absolute,
            delta,
            max_lambda_norm,
            consensus_diameter: diameter,
            thm2_bound,
            bound_margin_thm2: thm2_bound.map(|b| b - max_gap),
            violation_sq: metrics::violation_from_values(&g),
            max_gap,
            lambda_sq_sum,
        })
    }
}

fn thm2_constant_raw(p: &ProblemSpec, sigma2: f64, eta: f64, t: usize, n: usize) -> Option<f64> {
    if t < 2 {
        return None;
    }
    let (m, l, r) = (p.m() as f64, p.lipschitz(), p.radius());
    let growth = metrics::dual_growth_factor(n, p.m(), l, r, eta);
    let log_term = metrics::mixing_log_term(n, t as f64, sigma2).ok()?;
    Some(1.0 + 2.5 * m * l * l * r * r + 20.0 * l * l * growth * growth * log_term)
}

fn execute(
    p: &ProblemSpec,
    w: &ConsensusMatrix,
    cfg: &RunConfig,
    params: &StepParams,
    reference: &ReferenceSolution,
) -> Result<Trace, EngineError> {
    let (n, m, d) = (p.n(), p.m(), p.d());
    if reference.x_star.len() != d {
        return Err(EngineError::DimensionMismatch(format!(
            "reference point has dimension {}, problem has {d}",
            reference.x_star.len()
        )));
    }
    let x0 = initial_point(p, cfg.init, cfg.seed)?;
    let mut states: Vec<AgentState> = (0..n).map(|_| AgentState::new(x0.clone(), m, params.alpha(0))).collect();
    let rows = rows_of(w);
    let regularized = params.eta > 0.0;
    let sigma2 = w.sigma2();

    let f0_val = p.cumulative_value(&x0);
    let g0 = norm(&p.constraint_values(&x0));
    if g0 == 0.0 {
        return Err(EngineError::Metrics(MetricsError::ZeroDenominator(0)));
    }
    let recorder = Recorder {
        p,
        f_star: reference.f_star,
        f0: vec![f0_val; n],
        g0_norm: vec![g0; n],
        thm2: regularized.then_some((params.eta, p.radius(), n)),
        sigma2,
    };

    let (l, r) = (p.lipschitz(), p.radius());
    let mut monitor = (cfg.monitor_bounds && regularized).then(BoundMonitor::new);
    let lambda_bound = regularized.then(|| metrics::lambda_sq_bound(n, m, l, r, params.eta));
    let grad_x_bound = regularized.then(|| metrics::grad_x_bound(n, m, l, r, params.eta));
    let horizon = cfg.iterations.max(2);

    let mut trace = Trace {
        variant: Some(cfg.variant),
        records: Vec::new(),
        final_states: Vec::new(),
        monitors: None,
        f_star: reference.f_star,
        step_scale: params.step_scale,
        eta: params.eta,
        iterations_completed: 0,
    };

    let observe_record = |monitor: &mut Option<BoundMonitor>, rec: &IterationRecord| -> Result<(), EngineError> {
        if let Some(mon) = monitor.as_mut() {
            let cb = metrics::consensus_bound(n, m, l, r, params.eta, horizon, sigma2, params.alpha(rec.t))?;
            mon.consensus.observe(rec.t, rec.consensus_diameter, cb);
            if let Some(b) = rec.thm2_bound {
                mon.rate.observe(rec.t, rec.max_gap, b + REFERENCE_TOLERANCE);
            }
        }
        Ok(())
    };

    let first = recorder.record(0, &states)?;
    observe_record(&mut monitor, &first)?;
    trace.records.push(first);
    if let (Some(mon), Some(lb)) = (monitor.as_mut(), lambda_bound) {
        mon.lambda_sq.observe(0, states.iter().map(|s| s.lam.norm_sq()).sum(), lb);
    }

    let sampling_seed = (cfg.variant == Variant::Stochastic).then_some(cfg.seed);
    for t in 0..cfg.iterations {
        let (next, diags) = advance(&states, p, &rows, t, params, sampling_seed);
        if let (Some(mon), Some(gb)) = (monitor.as_mut(), grad_x_bound) {
            for dg in &diags {
                mon.grad_x.observe(t, dg.grad_x_norm, gb);
                let bound = metrics::grad_lambda_sq_bound(m, l, r, params.eta, dg.lambda_sq);
                mon.grad_lambda.observe(t, dg.grad_lambda_sq, bound);
            }
        }
        if let Some(reason) = divergence_reason(&next) {
            log::error!("divergence at t = {}: {reason}", t + 1);
            trace.iterations_completed = t;
            trace.final_states = states;
            trace.monitors = monitor;
            return Err(EngineError::Diverged { t: t + 1, reason, partial: Box::new(trace) });
        }
        states = next;
        let now = t + 1;
        if let (Some(mon), Some(lb)) = (monitor.as_mut(), lambda_bound) {
            mon.lambda_sq.observe(now, states.iter().map(|s| s.lam.norm_sq()).sum(), lb);
        }
        if now % cfg.record_every == 0 || now == cfg.iterations {
            let rec = recorder.record(now, &states)?;
            observe_record(&mut monitor, &rec)?;
            log::debug!("t={now} eps={:.4e} delta={:.4e} viol={:.3e}", rec.eps, rec.delta, rec.violation_sq);
            trace.records.push(rec);
        }
    }
    if let Some(mon) = &monitor {
        for c in mon.checks() {
            if !c.passed() {
                log::warn!("bound {} violated {} times (worst margin {:e} at t = {})", c.name, c.violations, c.worst_margin, c.worst_t);
            }
        }
    }
    trace.iterations_completed = cfg.iterations;
    trace.final_states = states;
    trace.monitors = monitor;
    Ok(trace)
}
