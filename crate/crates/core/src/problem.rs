//! Separable constrained problems: per-agent objectives, shared constraints,
//! synthetic classification data and a centralized reference solver.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid problem parameters: {0}")]
    InvalidParameters(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("reference solver residual {residual:.3e} above tolerance {tolerance:.1e}")]
    NonConvergence { residual: f64, tolerance: f64, solution: Box<ReferenceSolution> },
    #[error("reference solver needs a box-shaped feasible set")]
    NoBox,
    #[error("parse error: {0}")]
    Parse(String),
}

/// A convex function on `R^d` with a subgradient oracle.
pub trait ConvexFunction: Send + Sync + fmt::Debug {
    fn value(&self, x: &[f64]) -> f64;

    /// Writes one subgradient at `x` into `out` (overwriting it).
    fn subgradient(&self, x: &[f64], out: &mut [f64]);
}

/// Numerically stable `log(1 + exp(z))`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Numerically stable logistic function `1 / (1 + exp(-z))`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(b <a, x>))`.
#[derive(Debug, Clone)]
pub struct LogisticLoss {
    pub features: Vec<f64>,
    pub label: f64,
}

impl ConvexFunction for LogisticLoss {
    fn value(&self, x: &[f64]) -> f64 {
        softplus(self.label * dot(&self.features, x))
    }

    fn subgradient(&self, x: &[f64], out: &mut [f64]) {
        let s = self.label * sigmoid(self.label * dot(&self.features, x));
        for (o, a) in out.iter_mut().zip(&self.features) {
            *o = s * a;
        }
    }
}

/// `max(0, 1 - b <a, x>)`. At the kink the zero subgradient is returned.
#[derive(Debug, Clone)]
pub struct HingeLoss {
    pub features: Vec<f64>,
    pub label: f64,
}

impl ConvexFunction for HingeLoss {
    fn value(&self, x: &[f64]) -> f64 {
        (1.0 - self.label * dot(&self.features, x)).max(0.0)
    }

    fn subgradient(&self, x: &[f64], out: &mut [f64]) {
        let margin = 1.0 - self.label * dot(&self.features, x);
        if margin > 0.0 {
            for (o, a) in out.iter_mut().zip(&self.features) {
                *o = -self.label * a;
            }
        } else {
            out.fill(0.0);
        }
    }
}

/// `-margin - x[coord]`, i.e. the constraint `x[coord] >= -margin`.
#[derive(Debug, Clone)]
pub struct LowerBound {
    pub coord: usize,
    pub margin: f64,
}

impl ConvexFunction for LowerBound {
    fn value(&self, x: &[f64]) -> f64 {
        -self.margin - x[self.coord]
    }

    fn subgradient(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[self.coord] = -1.0;
    }
}

/// `x[coord] - margin`, i.e. the constraint `x[coord] <= margin`.
#[derive(Debug, Clone)]
pub struct UpperBound {
    pub coord: usize,
    pub margin: f64,
}

impl ConvexFunction for UpperBound {
    fn value(&self, x: &[f64]) -> f64 {
        x[self.coord] - self.margin
    }

    fn subgradient(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[self.coord] = 1.0;
    }
}

/// `<c, x> + offset`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub coefficients: Vec<f64>,
    pub offset: f64,
}

impl ConvexFunction for Affine {
    fn value(&self, x: &[f64]) -> f64 {
        dot(&self.coefficients, x) + self.offset
    }

    fn subgradient(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.coefficients);
    }
}

/// `scale * ||x||^2`.
#[derive(Debug, Clone)]
pub struct SquaredNorm {
    pub scale: f64,
}

impl ConvexFunction for SquaredNorm {
    fn value(&self, x: &[f64]) -> f64 {
        self.scale * dot(x, x)
    }

    fn subgradient(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = 2.0 * self.scale * v;
        }
    }
}

/// Average of several functions, used to collapse a separable objective
/// into a single centralized one.
#[derive(Debug, Clone)]
pub struct MeanOf {
    parts: Vec<Arc<dyn ConvexFunction>>,
}

impl MeanOf {
    pub fn new(parts: Vec<Arc<dyn ConvexFunction>>) -> Self {
        assert!(!parts.is_empty(), "mean of no functions");
        Self { parts }
    }
}

impl ConvexFunction for MeanOf {
    fn value(&self, x: &[f64]) -> f64 {
        self.parts.iter().map(|f| f.value(x)).sum::<f64>() / self.parts.len() as f64
    }

    fn subgradient(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut buf = vec![0.0; out.len()];
        for f in &self.parts {
            f.subgradient(x, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += b;
            }
        }
        let inv = 1.0 / self.parts.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }
}

/// Axis-aligned box `lower <= x <= upper` (bounds may be infinite).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSet {
    pub fn symmetric_margins(d: usize, l: f64, u: f64) -> Self {
        Self { lower: vec![-l; d], upper: vec![u; d] }
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter().zip(&self.lower).zip(&self.upper).all(|((v, lo), hi)| *v >= lo - tol && *v <= hi + tol)
    }

    pub fn contains_origin(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(lo, hi)| *lo <= 0.0 && *hi >= 0.0)
    }
}

/// Which synthetic family a problem was built from; recorded in run
/// manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    Logistic,
    Hinge,
    Custom,
}

/// A separable problem `min (1/n) sum_i f_i(x)` subject to `g_k(x) <= 0`,
/// with primal iterates confined to the origin-centred ball of radius `R`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    d: usize,
    objectives: Vec<Arc<dyn ConvexFunction>>,
    constraints: Vec<Arc<dyn ConvexFunction>>,
    lipschitz: f64,
    radius: f64,
    feasible_box: Option<BoxSet>,
    family: LossFamily,
}

impl ProblemSpec {
    pub fn new(
        d: usize,
        objectives: Vec<Arc<dyn ConvexFunction>>,
        constraints: Vec<Arc<dyn ConvexFunction>>,
        lipschitz: f64,
        radius: f64,
    ) -> Result<Self, ProblemError> {
        if d == 0 || objectives.is_empty() || constraints.is_empty() {
            return Err(ProblemError::InvalidParameters(format!(
                "need d >= 1, n >= 1 and m >= 1 (d={d}, n={}, m={})",
                objectives.len(),
                constraints.len()
            )));
        }
        if !(lipschitz > 0.0 && lipschitz.is_finite() && radius > 0.0 && radius.is_finite()) {
            return Err(ProblemError::InvalidParameters(format!(
                "Lipschitz constant {lipschitz} and radius {radius} must be positive and finite"
            )));
        }
        Ok(Self { d, objectives, constraints, lipschitz, radius, feasible_box: None, family: LossFamily::Custom })
    }

    /// Problem whose constraints are the box `lower <= x <= upper`, listed as
    /// all finite lower bounds first, then all finite upper bounds.
    pub fn box_constrained(
        objectives: Vec<Arc<dyn ConvexFunction>>,
        feasible_box: BoxSet,
        lipschitz: f64,
        radius: f64,
    ) -> Result<Self, ProblemError> {
        let d = feasible_box.lower.len();
        if feasible_box.upper.len() != d {
            return Err(ProblemError::DimensionMismatch { expected: d, got: feasible_box.upper.len() });
        }
        let mut constraints: Vec<Arc<dyn ConvexFunction>> = Vec::new();
        for (k, lo) in feasible_box.lower.iter().enumerate() {
            if lo.is_finite() {
                constraints.push(Arc::new(LowerBound { coord: k, margin: -lo }));
            }
        }
        for (k, hi) in feasible_box.upper.iter().enumerate() {
            if hi.is_finite() {
                constraints.push(Arc::new(UpperBound { coord: k, margin: *hi }));
            }
        }
        let mut p = Self::new(d, objectives, constraints, lipschitz, radius)?;
        p.feasible_box = Some(feasible_box);
        Ok(p)
    }

    pub fn with_family(mut self, family: LossFamily) -> Self {
        self.family = family;
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of agents (objective terms).
    pub fn n(&self) -> usize {
        self.objectives.len()
    }

    /// Number of constraints.
    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn family(&self) -> LossFamily {
        self.family
    }

    pub fn feasible_box(&self) -> Option<&BoxSet> {
        self.feasible_box.as_ref()
    }

    pub fn objective(&self, i: usize) -> &dyn ConvexFunction {
        self.objectives[i].as_ref()
    }

    pub fn objectives(&self) -> &[Arc<dyn ConvexFunction>] {
        &self.objectives
    }

    pub fn constraint(&self, k: usize) -> &dyn ConvexFunction {
        self.constraints[k].as_ref()
    }

    pub fn constraints(&self) -> &[Arc<dyn ConvexFunction>] {
        &self.constraints
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<(), ProblemError> {
        if x.len() == self.d {
            Ok(())
        } else {
            Err(ProblemError::DimensionMismatch { expected: self.d, got: x.len() })
        }
    }

    /// The cumulative objective `f(x) = (1/n) sum_i f_i(x)`.
    pub fn cumulative_value(&self, x: &[f64]) -> f64 {
        self.objectives.iter().map(|f| f.value(x)).sum::<f64>() / self.n() as f64
    }

    pub fn cumulative_subgradient(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut buf = vec![0.0; self.d];
        for f in &self.objectives {
            f.subgradient(x, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += b;
            }
        }
        let inv = 1.0 / self.n() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }

    /// `g(x) = (g_1(x), ..., g_m(x))`.
    pub fn constraint_values(&self, x: &[f64]) -> Vec<f64> {
        self.constraints.iter().map(|g| g.value(x)).collect()
    }

    /// Single-agent problem with objective `f = (1/n) sum_i f_i` and the same
    /// constraints.
    pub fn centralized(&self) -> ProblemSpec {
        let mean: Arc<dyn ConvexFunction> = Arc::new(MeanOf::new(self.objectives.clone()));
        ProblemSpec {
            d: self.d,
            objectives: vec![mean],
            constraints: self.constraints.clone(),
            lipschitz: self.lipschitz,
            radius: self.radius,
            feasible_box: self.feasible_box.clone(),
            family: self.family,
        }
    }

    /// Spot-checks the subgradient bound `||grad|| <= L` at `samples` points
    /// drawn uniformly from the radius-`R` ball. Violations are logged at
    /// error level and returned.
    pub fn validate_lipschitz(&self, samples: usize, seed: u64) -> Vec<LipschitzViolation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grad = vec![0.0; self.d];
        let mut found = Vec::new();
        for _ in 0..samples {
            let x = sample_in_ball(&mut rng, self.d, self.radius);
            let oracles = self
                .objectives
                .iter()
                .enumerate()
                .map(|(i, f)| (OracleKind::Objective(i), f))
                .chain(self.constraints.iter().enumerate().map(|(k, g)| (OracleKind::Constraint(k), g)));
            for (kind, f) in oracles {
                f.subgradient(&x, &mut grad);
                let nrm = norm(&grad);
                if nrm > self.lipschitz + 1e-12 {
                    log::error!("{kind:?} has subgradient norm {nrm} > L = {}", self.lipschitz);
                    found.push(LipschitzViolation { oracle: kind, point: x.clone(), norm: nrm });
                }
            }
        }
        found
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Objective(usize),
    Constraint(usize),
}

#[derive(Debug, Clone)]
pub struct LipschitzViolation {
    pub oracle: OracleKind,
    pub point: Vec<f64>,
    pub norm: f64,
}

/// Uniform sample from the Euclidean ball of the given radius.
pub fn sample_in_ball<R: Rng + ?Sized>(rng: &mut R, d: usize, radius: f64) -> Vec<f64> {
    let mut v = sample_on_sphere(rng, d);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    v.iter_mut().for_each(|c| *c *= r);
    v
}

/// Uniform sample from the unit sphere (normalized Gaussian).
pub fn sample_on_sphere<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let nrm = norm(&v);
        if nrm > 1e-300 {
            return v.into_iter().map(|c| c / nrm).collect();
        }
    }
}

/// Synthetic binary classification data with unit-norm features.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub ground_truth: Vec<f64>,
}

impl SyntheticDataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.ground_truth.len()
    }

    /// CSV: first line `d,n`, then one `b,a_1,...,a_d` row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.d(), self.n());
        for (a, b) in self.features.iter().zip(&self.labels) {
            out.push_str(&format!("{b:?}"));
            for v in a {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV written by [`to_csv`](Self::to_csv). The generating
    /// vector is not stored in the file; it comes back as zeros.
    pub fn from_csv(text: &str) -> Result<Self, ProblemError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| ProblemError::Parse("empty dataset".into()))?;
        let dims: Vec<usize> = header
            .split(',')
            .map(|v| v.trim().parse().map_err(|e| ProblemError::Parse(format!("header: {e}"))))
            .collect::<Result<_, _>>()?;
        let [d, n] = dims[..] else {
            return Err(ProblemError::Parse(format!("header `{header}` is not `d,n`")));
        };
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for line in lines {
            let row: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse().map_err(|e| ProblemError::Parse(format!("row `{line}`: {e}"))))
                .collect::<Result<_, _>>()?;
            if row.len() != d + 1 {
                return Err(ProblemError::Parse(format!("row `{line}` has {} fields, expected {}", row.len(), d + 1)));
            }
            labels.push(row[0]);
            features.push(row[1..].to_vec());
        }
        if labels.len() != n {
            return Err(ProblemError::Parse(format!("expected {n} rows, found {}", labels.len())));
        }
        Ok(Self { features, labels, ground_truth: vec![0.0; d] })
    }
}

/// Draws `w ~ N(0, I_d)`, features uniformly on the unit sphere and labels
/// with `P(b = +1 | a) = 1 / (1 + exp(<w, a>))`.
pub fn generate_dataset(n: usize, d: usize, seed: u64) -> Result<SyntheticDataset, ProblemError> {
    if n == 0 || d == 0 {
        return Err(ProblemError::InvalidParameters(format!("need n, d >= 1 (n={n}, d={d})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ground_truth: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let a = sample_on_sphere(&mut rng, d);
        let p_plus = sigmoid(-dot(&ground_truth, &a));
        labels.push(if rng.random::<f64>() < p_plus { 1.0 } else { -1.0 });
        features.push(a);
    }
    Ok(SyntheticDataset { features, labels, ground_truth })
}

fn check_margins(l: f64, u: f64) -> Result<(), ProblemError> {
    if l > 0.0 && u > 0.0 && l.is_finite() && u.is_finite() {
        Ok(())
    } else {
        Err(ProblemError::InvalidParameters(format!("box margins must be positive (l={l}, u={u})")))
    }
}

/// Logistic regression with box constraints `-l <= x_k <= u` (m = 2d),
/// `R = 1`, `L = 1`.
pub fn build_logistic_problem(data: &SyntheticDataset, l: f64, u: f64) -> Result<ProblemSpec, ProblemError> {
    check_margins(l, u)?;
    let objectives = data
        .features
        .iter()
        .zip(&data.labels)
        .map(|(a, &b)| Arc::new(LogisticLoss { features: a.clone(), label: b }) as Arc<dyn ConvexFunction>)
        .collect();
    Ok(ProblemSpec::box_constrained(objectives, BoxSet::symmetric_margins(data.d(), l, u), 1.0, 1.0)?
        .with_family(LossFamily::Logistic))
}

/// Hinge-loss classification with the same box constraints as
/// [`build_logistic_problem`].
pub fn build_hinge_problem(data: &SyntheticDataset, l: f64, u: f64) -> Result<ProblemSpec, ProblemError> {
    check_margins(l, u)?;
    let objectives = data
        .features
        .iter()
        .zip(&data.labels)
        .map(|(a, &b)| Arc::new(HingeLoss { features: a.clone(), label: b }) as Arc<dyn ConvexFunction>)
        .collect();
    Ok(ProblemSpec::box_constrained(objectives, BoxSet::symmetric_margins(data.d(), l, u), 1.0, 1.0)?
        .with_family(LossFamily::Hinge))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMethod {
    ProjectedSubgradient,
    GridSearch,
}

/// Approximate solution of the centralized problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub f_star: f64,
    pub x_star: Vec<f64>,
    pub method: ReferenceMethod,
    /// Certified upper bound on `f_star - min f`.
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_estimate: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ReferenceOptions {
    pub iterations: usize,
    pub seed: u64,
    /// `c` in the step `c / sqrt(t + 1)`; defaults to the problem radius.
    pub step_scale: Option<f64>,
    pub tolerance: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self { iterations: 1_000_000, seed: 0, step_scale: None, tolerance: 1e-4 }
    }
}

/// Euclidean projection onto `box ∩ ball(R)`.
///
/// Runs Dykstra's alternating projections for at most 200 cycles at
/// tolerance 1e-12. Points far outside the set can need many more cycles;
/// those fall back to the exact multiplier search
/// `x(mu) = clamp(z / (1 + mu))`.
pub fn project_box_ball(z: &[f64], feasible_box: &BoxSet, radius: f64) -> Vec<f64> {
    let (x, converged) = dykstra_box_ball(z, feasible_box, radius, 200, 1e-12);
    if converged {
        x
    } else {
        log::trace!("Dykstra hit the cycle cap; using multiplier search");
        multiplier_projection(z, feasible_box, radius)
    }
}

/// Dykstra's scheme for `box ∩ ball(R)`. Returns the last iterate and
/// whether the tolerance was met.
pub fn dykstra_box_ball(
    z: &[f64],
    feasible_box: &BoxSet,
    radius: f64,
    max_cycles: usize,
    tol: f64,
) -> (Vec<f64>, bool) {
    let d = z.len();
    let mut x = z.to_vec();
    let mut p = vec![0.0; d];
    let mut q = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut converged = false;
    for _ in 0..max_cycles {
        for k in 0..d {
            y[k] = x[k] + p[k];
        }
        feasible_box.clamp(&mut y);
        for k in 0..d {
            p[k] += x[k] - y[k];
            next[k] = y[k] + q[k];
        }
        let nrm = norm(&next);
        if nrm > radius {
            next.iter_mut().for_each(|v| *v *= radius / nrm);
        }
        for k in 0..d {
            q[k] += y[k] - next[k];
        }
        // Consecutive iterates can coincide while the corrections still move,
        // so also require the two sets' iterates to agree.
        let change = crate::linalg::distance(&x, &next);
        let gap = crate::linalg::distance(&y, &next);
        x.copy_from_slice(&next);
        if change <= tol && gap <= tol {
            converged = true;
            break;
        }
    }
    (x, converged)
}

fn multiplier_projection(z: &[f64], feasible_box: &BoxSet, radius: f64) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(k, v)| (v / (1.0 + mu)).clamp(feasible_box.lower[k], feasible_box.upper[k]))
            .collect()
    };
    let x0 = at(0.0);
    if norm(&x0) <= radius {
        return x0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while norm(&at(hi)) > radius {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm(&at(mid)) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(hi)
}

/// `argmin_{y in box ∩ ball(R)} <c, y>` by bisection on the ball multiplier.
pub(crate) fn linear_minimizer(c: &[f64], feasible_box: &BoxSet, radius: f64) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> {
        c.iter()
            .enumerate()
            .map(|(k, &ck)| {
                let (lo, hi) = (feasible_box.lower[k].max(-radius), feasible_box.upper[k].min(radius));
                if mu == 0.0 {
                    if ck > 0.0 {
                        lo
                    } else if ck < 0.0 {
                        hi
                    } else {
                        0.0f64.clamp(lo, hi)
                    }
                } else {
                    (-ck / mu).clamp(lo, hi)
                }
            })
            .collect()
    };
    let y0 = at(0.0);
    if norm(&y0) <= radius {
        return y0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while norm(&at(hi)) > radius {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm(&at(mid)) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(hi)
}

/// [`reference_optimum_with`] using the default options with the given
/// iteration count and seed.
pub fn reference_optimum(p: &ProblemSpec, iterations: usize, seed: u64) -> Result<ReferenceSolution, ProblemError> {
    reference_optimum_with(p, &ReferenceOptions { iterations, seed, ..ReferenceOptions::default() })
}

/// Centralized projected subgradient on `f = (1/n) sum f_i` over
/// `box ∩ ball(R)` with step `c / sqrt(t + 1)`, returning the best iterate.
///
/// The residual is certified from below with linear cuts: each visited
/// `(x_s, f(x_s), xi_s)` gives `f* >= f(x_s) + min_y <xi_s, y - x_s>`, and a
/// step-weighted average of the cuts over the second half of the run gives a
/// tighter aggregated bound. The best of these is subtracted from the best
/// objective value seen.
pub fn reference_optimum_with(p: &ProblemSpec, opts: &ReferenceOptions) -> Result<ReferenceSolution, ProblemError> {
    let feasible_box = p.feasible_box().ok_or(ProblemError::NoBox)?;
    let d = p.d();
    let radius = p.radius();
    let scale = opts.step_scale.unwrap_or(radius);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = sample_in_ball(&mut rng, d, radius);
    let mut x = project_box_ball(&start, feasible_box, radius);
    let mut g = vec![0.0; d];

    let mut best_x = x.clone();
    let mut best_f = f64::INFINITY;
    let mut best_cut = f64::NEG_INFINITY;
    let window_start = opts.iterations / 2;
    let mut agg_grad = vec![0.0; d];
    let mut agg_const = 0.0;
    let mut agg_weight = 0.0;

    let total = opts.iterations.max(1);
    for t in 0..total {
        let fx = p.cumulative_value(&x);
        p.cumulative_subgradient(&x, &mut g);
        if fx < best_f {
            best_f = fx;
            best_x.copy_from_slice(&x);
            let y = linear_minimizer(&g, feasible_box, radius);
            let cut = fx + dot(&g, &y) - dot(&g, &x);
            best_cut = best_cut.max(cut);
        }
        let step = scale / ((t + 1) as f64).sqrt();
        if t >= window_start {
            agg_weight += step;
            agg_const += step * (fx - dot(&g, &x));
            for (a, gk) in agg_grad.iter_mut().zip(&g) {
                *a += step * gk;
            }
        }
        if t + 1 == total {
            break;
        }
        let z: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
        x = project_box_ball(&z, feasible_box, radius);
    }
    if agg_weight > 0.0 {
        let avg: Vec<f64> = agg_grad.iter().map(|v| v / agg_weight).collect();
        let y = linear_minimizer(&avg, feasible_box, radius);
        best_cut = best_cut.max(agg_const / agg_weight + dot(&avg, &y));
    }
    let residual = (best_f - best_cut).max(0.0);
    let solution = ReferenceSolution {
        f_star: best_f,
        x_star: best_x,
        method: ReferenceMethod::ProjectedSubgradient,
        residual,
        dual_estimate: None,
    };
    if residual > opts.tolerance {
        log::warn!("reference solver residual {residual:.3e} exceeds tolerance {:.1e}", opts.tolerance);
        return Err(ProblemError::NonConvergence {
            residual,
            tolerance: opts.tolerance,
            solution: Box::new(solution),
        });
    }
    Ok(solution)
}

/// Exhaustive search over a `resolution`-spaced grid covering the box
/// (clipped to the ball), for `d <= 2`. The residual is the Lipschitz bound
/// `L * resolution * sqrt(d)` on the distance from any feasible point to
/// the grid; cells cut by the sphere are not covered by it.
pub fn grid_search_optimum(p: &ProblemSpec, resolution: f64) -> Result<ReferenceSolution, ProblemError> {
    let feasible_box = p.feasible_box().ok_or(ProblemError::NoBox)?;
    let d = p.d();
    if d > 2 || !(resolution > 0.0) {
        return Err(ProblemError::InvalidParameters(format!(
            "grid search needs d <= 2 and a positive resolution (d={d}, resolution={resolution})"
        )));
    }
    let r = p.radius();
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let lo = feasible_box.lower[k].max(-r);
            let hi = feasible_box.upper[k].min(r);
            let steps = ((hi - lo) / resolution).ceil().max(1.0) as usize;
            (0..=steps).map(|s| lo + (hi - lo) * s as f64 / steps as f64).collect()
        })
        .collect();
    let mut best = (f64::INFINITY, vec![0.0; d]);
    let mut point = vec![0.0; d];
    let count: usize = axes.iter().map(Vec::len).product();
    for idx in 0..count {
        let mut rest = idx;
        for (k, axis) in axes.iter().enumerate() {
            point[k] = axis[rest % axis.len()];
            rest /= axis.len();
        }
        if norm(&point) > r {
            continue;
        }
        let v = p.cumulative_value(&point);
        if v < best.0 {
            best = (v, point.clone());
        }
    }
    Ok(ReferenceSolution {
        f_star: best.0,
        x_star: best.1,
        method: ReferenceMethod::GridSearch,
        residual: p.lipschitz() * resolution * (d as f64).sqrt(),
        dual_estimate: None,
    })
}

/// Positive parts of the constraint values and the excess of `||x||` over
/// the radius.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub violations: Vec<f64>,
    pub norm_excess: f64,
}

impl FeasibilityReport {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.norm_excess <= tol && self.violations.iter().all(|v| *v <= tol)
    }
}

pub fn feasibility_report(p: &ProblemSpec, x: &[f64]) -> Result<FeasibilityReport, ProblemError> {
    p.check_dim(x)?;
    Ok(FeasibilityReport {
        violations: p.constraint_values(x).into_iter().map(|v| v.max(0.0)).collect(),
        norm_excess: (norm(x) - p.radius()).max(0.0),
    })
}
