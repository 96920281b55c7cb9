use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use regpd::engine::{run, EngineError, Trace};
use regpd::graph::{
    barbell, erdos_renyi, lattice8, laplacian_weights, lazy_metropolis, watts_strogatz, ConsensusMatrix, GraphTopology,
};
use regpd::metrics::{rate_fit, Column, RateFit};
use regpd::problem::{
    build_hinge_problem, build_logistic_problem, generate_dataset, reference_optimum, ProblemError, ProblemSpec,
    ReferenceSolution,
};
use regpd::verify::{run_checks, CheckOutcome, VerifyOptions};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, GraphFamily, ProblemFamily, Weights};
use crate::{resolve_output_dir, CliError};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

fn problem_error(e: ProblemError) -> CliError {
    match e {
        ProblemError::NonConvergence { .. } => CliError::Diverged(format!("reference optimum: {e}")),
        other => CliError::Config(other.to_string()),
    }
}

fn engine_error(e: EngineError) -> CliError {
    match e {
        EngineError::Diverged { .. } => CliError::Diverged(e.to_string()),
        EngineError::Problem(p) => problem_error(p),
        other => CliError::Config(other.to_string()),
    }
}

pub fn build_graph(cfg: &ExperimentConfig) -> Result<GraphTopology, CliError> {
    let n = cfg.problem.n;
    let g = &cfg.graph;
    let graph = match g.family {
        GraphFamily::WattsStrogatz => watts_strogatz(n, g.k, g.theta, g.graph_seed),
        GraphFamily::ErdosRenyi => erdos_renyi(n, g.p, g.graph_seed),
        GraphFamily::Lattice8 => {
            if g.rows * g.cols != n {
                return Err(CliError::Config(format!("lattice {}x{} does not have {n} nodes", g.rows, g.cols)));
            }
            lattice8(g.rows, g.cols)
        }
        GraphFamily::Barbell => barbell(n, g.bridges),
    };
    graph.map_err(|e| CliError::Config(e.to_string()))
}

pub fn build_weights(cfg: &ExperimentConfig, g: &GraphTopology) -> Result<ConsensusMatrix, CliError> {
    match cfg.weights {
        Weights::LazyMetropolis => Ok(lazy_metropolis(g)),
        Weights::Laplacian => laplacian_weights(g).map_err(|e| CliError::Config(e.to_string())),
    }
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<ProblemSpec, CliError> {
    let p = &cfg.problem;
    let data = generate_dataset(p.n, p.d, p.data_seed).map_err(problem_error)?;
    match p.family {
        ProblemFamily::Logistic => build_logistic_problem(&data, p.l, p.u),
        ProblemFamily::Hinge => build_hinge_problem(&data, p.l, p.u),
    }
    .map_err(problem_error)
}

/// Content hash of everything that determines the reference optimum.
pub fn reference_cache_key(cfg: &ExperimentConfig) -> String {
    let p = &cfg.problem;
    let canonical = format!(
        "family={};data_seed={};n={};d={};l={};u={};reference_iterations={};reference_seed={}",
        p.family, p.data_seed, p.n, p.d, p.l, p.u, cfg.reference.iterations, cfg.reference.seed
    );
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Loads the reference optimum from `cache_dir`, computing and storing it
/// on a miss. Returns the solution and whether it came from the cache.
pub fn obtain_reference(
    cfg: &ExperimentConfig,
    problem: &ProblemSpec,
    cache_dir: &Path,
) -> Result<(ReferenceSolution, bool), CliError> {
    let path = cache_dir.join(format!("{}.json", reference_cache_key(cfg)));
    if let Ok(text) = std::fs::read_to_string(&path) {
        match serde_json::from_str::<ReferenceSolution>(&text) {
            Ok(r) if r.x_star.len() == problem.d() => return Ok((r, true)),
            _ => log::warn!("ignoring unreadable cache entry {}", path.display()),
        }
    }
    log::info!("computing reference optimum ({} iterations)", cfg.reference.iterations);
    let reference = reference_optimum(problem, cfg.reference.iterations, cfg.reference.seed).map_err(problem_error)?;
    create_dir(cache_dir)?;
    // write then rename so concurrent readers never see a partial entry
    let tmp = cache_dir.join(format!(".{}.{}.tmp", reference_cache_key(cfg), std::process::id()));
    write(&tmp, to_json(&reference))?;
    std::fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
    Ok((reference, false))
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub family: GraphFamily,
    pub weights: Weights,
    pub n: usize,
    pub edges: usize,
    pub sigma2: f64,
    pub spectral_gap: f64,
    /// `71 n²`, the ceiling on `1 / (1 - σ₂)` for lazy Metropolis weights.
    pub bound_71n2: f64,
    /// `71 n² - 1 / (1 - σ₂)`.
    pub bound_margin: f64,
}

/// Writes `graph.edges`, `weights.csv` and `spectral.json` into `out`.
pub fn generate_graph(cfg: &ExperimentConfig, out: &Path) -> Result<SpectralReport, CliError> {
    let g = build_graph(cfg)?;
    let w = build_weights(cfg, &g)?;
    let n = g.n() as f64;
    let report = SpectralReport {
        family: cfg.graph.family,
        weights: cfg.weights,
        n: g.n(),
        edges: g.edge_count(),
        sigma2: w.sigma2(),
        spectral_gap: w.spectral_gap(),
        bound_71n2: 71.0 * n * n,
        bound_margin: 71.0 * n * n - 1.0 / w.spectral_gap(),
    };
    create_dir(out)?;
    write(&out.join("graph.edges"), g.to_edge_list())?;
    write(&out.join("weights.csv"), w.to_csv())?;
    write(&out.join("spectral.json"), to_json(&report))?;
    Ok(report)
}

/// Final metrics and fitted rates of a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub iterations_completed: usize,
    pub final_eps: Option<f64>,
    pub final_delta: Option<f64>,
    pub final_violation: Option<f64>,
    pub final_max_gap: Option<f64>,
    pub rate_fits: BTreeMap<String, Option<RateFit>>,
}

impl RunSummary {
    fn from_trace(trace: &Trace) -> Self {
        let last = trace.last();
        let hi = trace.iterations_completed;
        let window = ((hi / 100).max(1), hi);
        let rate_fits = [Column::Eps, Column::Delta, Column::ViolationSq]
            .into_iter()
            .map(|c| (c.name().to_string(), rate_fit(trace, c, window).ok()))
            .collect();
        Self {
            iterations_completed: trace.iterations_completed,
            final_eps: last.map(|r| r.eps),
            final_delta: last.map(|r| r.delta),
            final_violation: last.map(|r| r.violation_sq),
            final_max_gap: last.map(|r| r.max_gap),
            rate_fits,
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    library_version: &'a str,
    status: &'a str,
    divergence: Option<&'a str>,
    config: &'a ExperimentConfig,
    output_dir_resolved: &'a Path,
    problem: serde_json::Value,
    graph: serde_json::Value,
    reference: serde_json::Value,
    step_scale: f64,
    eta: f64,
    summary: &'a RunSummary,
    monitors: Option<&'a regpd::engine::BoundMonitor>,
}

fn final_x_csv(trace: &Trace, d: usize) -> String {
    let mut out = String::from("agent");
    for k in 1..=d {
        out.push_str(&format!(",x{k}"));
    }
    out.push('\n');
    for (i, avg) in trace.final_averages().into_iter().enumerate() {
        out.push_str(&i.to_string());
        for v in avg.unwrap_or_else(|| vec![f64::NAN; d]) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Default cache location: a `reference-cache` directory next to `out`.
pub fn default_cache_dir(out: &Path) -> PathBuf {
    out.parent().unwrap_or(Path::new("")).join("reference-cache")
}

/// Runs one experiment and persists the manifest, trace, per-metric tables
/// and final averages under `out`. A diverged run still writes its partial
/// outputs before returning [`CliError::Diverged`].
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, cache_dir: &Path) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    let graph = build_graph(cfg)?;
    let w = build_weights(cfg, &graph)?;
    cfg.run.validate(&problem).map_err(engine_error)?;
    let (reference, cached) = obtain_reference(cfg, &problem, cache_dir)?;

    let (trace, divergence) = match run(&problem, &w, &cfg.run, &reference) {
        Ok(t) => (t, None),
        Err(EngineError::Diverged { t, reason, partial }) => {
            (*partial, Some(format!("run diverged at t = {t}: {reason}")))
        }
        Err(e) => return Err(engine_error(e)),
    };

    let summary = RunSummary::from_trace(&trace);
    let mut reference_json = serde_json::to_value(&reference).expect("serializable");
    reference_json["cache_key"] = reference_cache_key(cfg).into();
    reference_json["cached"] = cached.into();
    let manifest = Manifest {
        library_version: regpd::VERSION,
        status: if divergence.is_some() { "diverged" } else { "completed" },
        divergence: divergence.as_deref(),
        config: cfg,
        output_dir_resolved: out,
        problem: serde_json::json!({
            "family": cfg.problem.family,
            "n": problem.n(),
            "d": problem.d(),
            "m": problem.m(),
            "lipschitz": problem.lipschitz(),
            "radius": problem.radius(),
        }),
        graph: serde_json::json!({
            "family": cfg.graph.family,
            "weights": cfg.weights,
            "n": graph.n(),
            "edges": graph.edge_count(),
            "sigma2": w.sigma2(),
            "spectral_gap": w.spectral_gap(),
        }),
        reference: reference_json,
        step_scale: trace.step_scale,
        eta: trace.eta,
        summary: &summary,
        monitors: trace.monitors.as_ref(),
    };

    create_dir(&out.join("metrics"))?;
    write(&out.join("manifest.json"), to_json(&manifest))?;
    write(&out.join("config.cfg"), cfg.to_flat_string())?;
    write(&out.join("trace.csv"), trace.to_csv())?;
    for c in Column::ALL {
        write(&out.join("metrics").join(format!("{}.csv", c.name())), trace.column_csv(c))?;
    }
    write(&out.join("final_x.csv"), final_x_csv(&trace, problem.d()))?;

    match divergence {
        Some(msg) => Err(CliError::Diverged(msg)),
        None => Ok(summary),
    }
}

/// Parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Eta,
    N,
    Iterations,
    GraphFamily,
    Variant,
    /// Sets `η = T^{-r}` with `T = run.iterations`.
    R,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Eta => "eta",
            SweepParam::N => "n",
            SweepParam::Iterations => "T",
            SweepParam::GraphFamily => "graph",
            SweepParam::Variant => "variant",
            SweepParam::R => "r",
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig, value: &str) -> Result<(), CliError> {
        match self {
            SweepParam::Eta => cfg.set("run.eta", value),
            SweepParam::N => cfg.set("problem.n", value),
            SweepParam::Iterations => cfg.set("run.iterations", value),
            SweepParam::GraphFamily => cfg.set("graph.family", value),
            SweepParam::Variant => cfg.set("run.variant", value),
            SweepParam::R => {
                let r: f64 = value.trim().parse().map_err(|e| CliError::Config(format!("r: {e}")))?;
                cfg.run.eta = (cfg.run.iterations.max(1) as f64).powf(-r);
                Ok(())
            }
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eta" | "run.eta" => Ok(SweepParam::Eta),
            "n" | "problem.n" => Ok(SweepParam::N),
            "T" | "iterations" | "run.iterations" => Ok(SweepParam::Iterations),
            "graph" | "graph.family" => Ok(SweepParam::GraphFamily),
            "variant" | "run.variant" => Ok(SweepParam::Variant),
            "r" => Ok(SweepParam::R),
            _ => Err(format!("cannot sweep `{s}` (expected eta, n, T, graph, variant or r)")),
        }
    }
}

#[derive(Debug)]
pub struct SweepLeg {
    pub value: String,
    pub dir: PathBuf,
    pub result: Result<RunSummary, CliError>,
}

#[derive(Debug)]
pub struct SweepReport {
    pub legs: Vec<SweepLeg>,
}

impl SweepReport {
    /// 0 if every leg completed, otherwise the largest leg exit code.
    pub fn exit_code(&self) -> u8 {
        self.legs.iter().filter_map(|l| l.result.as_ref().err()).map(CliError::exit_code).max().unwrap_or(0)
    }
}

fn leg_dir_name(param: SweepParam, value: &str) -> String {
    let clean: String =
        value.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect();
    format!("{}_{clean}", param.name())
}

const SUMMARY_HEADER: &str =
    "param,value,status,exit_code,final_eps,final_delta,final_violation,eps_exponent,delta_exponent,violation_exponent,dir\n";

fn summary_row(param: SweepParam, leg: &SweepLeg) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let (status, code, cells) = match &leg.result {
        Ok(s) => {
            let fit = |c: Column| opt(s.rate_fits.get(c.name()).copied().flatten().map(|f| f.exponent));
            let cells = [
                opt(s.final_eps),
                opt(s.final_delta),
                opt(s.final_violation),
                fit(Column::Eps),
                fit(Column::Delta),
                fit(Column::ViolationSq),
            ];
            ("completed", 0, cells)
        }
        Err(e) => {
            let status = if matches!(e, CliError::Diverged(_)) { "diverged" } else { "failed" };
            (status, e.exit_code(), Default::default())
        }
    };
    format!("{param},{},{status},{code},{},{}\n", leg.value, cells.join(","), leg.dir.display())
}

/// Runs one leg per value, in parallel, under `out/<param>_<value>`, and
/// writes `out/summary.csv` in value order. Failing legs are recorded and do
/// not stop the sweep.
pub fn sweep(
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[String],
    out: &Path,
) -> Result<SweepReport, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    create_dir(out)?;
    let cache_dir = out.join("reference-cache");
    let legs: Vec<(String, PathBuf, Result<ExperimentConfig, CliError>)> = values
        .iter()
        .map(|v| {
            let dir = out.join(leg_dir_name(param, v));
            let mut cfg = base.clone();
            let applied = param.apply(&mut cfg, v).map(|_| {
                cfg.output_dir = dir.clone();
                cfg
            });
            (v.clone(), dir, applied)
        })
        .collect();

    // compute each distinct reference once before the legs share the cache
    let mut distinct: BTreeMap<String, &ExperimentConfig> = BTreeMap::new();
    for (_, _, cfg) in &legs {
        if let Ok(cfg) = cfg {
            distinct.entry(reference_cache_key(cfg)).or_insert(cfg);
        }
    }
    distinct.into_par_iter().for_each(|(_, cfg)| {
        if let Err(e) = cfg.validate().and_then(|_| build_problem(cfg)).and_then(|p| obtain_reference(cfg, &p, &cache_dir)) {
            log::warn!("reference for sweep leg unavailable: {e}");
        }
    });

    let legs: Vec<SweepLeg> = legs
        .into_par_iter()
        .map(|(value, dir, cfg)| {
            let result = cfg.and_then(|cfg| run_experiment(&cfg, &dir, &cache_dir));
            if let Err(e) = &result {
                log::warn!("sweep leg {param}={value} failed: {e}");
            }
            SweepLeg { value, dir, result }
        })
        .collect();

    let mut summary = String::from(SUMMARY_HEADER);
    for leg in &legs {
        summary.push_str(&summary_row(param, leg));
    }
    write(&out.join("summary.csv"), summary)?;
    Ok(SweepReport { legs })
}

/// Runs the verification suite and optionally writes the outcomes as JSON.
pub fn verify(opts: &VerifyOptions, out: Option<&Path>) -> Result<Vec<CheckOutcome>, CliError> {
    let results = run_checks(opts);
    if let Some(dir) = out {
        let dir = resolve_output_dir(dir);
        create_dir(&dir)?;
        write(&dir.join("verify.json"), to_json(&results))?;
    }
    Ok(results)
}

/// Plain-text table of verification outcomes.
pub fn format_outcomes(results: &[CheckOutcome]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    results
        .iter()
        .map(|r| format!("{}  {:width$}  {}\n", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_key_tracks_problem_fields_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.run.eta = 3.0;
        b.graph.family = GraphFamily::Barbell;
        assert_eq!(reference_cache_key(&a), reference_cache_key(&b));
        b.problem.l = 0.2;
        assert_ne!(reference_cache_key(&a), reference_cache_key(&b));
        assert_eq!(reference_cache_key(&a).len(), 64);
    }

    #[test]
    fn r_sets_eta_from_the_horizon() {
        let mut cfg = ExperimentConfig::default();
        cfg.run.iterations = 10_000;
        SweepParam::R.apply(&mut cfg, "0.25").unwrap();
        assert!((cfg.run.eta - 0.1).abs() < 1e-15);
    }

    #[test]
    fn sweep_params_parse() {
        assert_eq!("T".parse::<SweepParam>().unwrap(), SweepParam::Iterations);
        assert_eq!("graph.family".parse::<SweepParam>().unwrap(), SweepParam::GraphFamily);
        assert!("problem.l".parse::<SweepParam>().is_err());
    }

    #[test]
    fn leg_names_are_path_safe() {
        assert_eq!(leg_dir_name(SweepParam::Eta, "0.5"), "eta_0.5");
        assert_eq!(leg_dir_name(SweepParam::GraphFamily, "a/b"), "graph_a_b");
    }

    #[test]
    fn empty_sweep_is_a_config_error() {
        let dir = std::env::temp_dir();
        let err = sweep(&ExperimentConfig::default(), SweepParam::Eta, &[], &dir).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
