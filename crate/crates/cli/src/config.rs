//! Experiment configuration: a flat `section.key = value` text format that
//! maps one-to-one onto [`ExperimentConfig`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use regpd::engine::{InitMode, RunConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::CliError;

macro_rules! named_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $ty {
            $($variant),+
        }

        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::ALL.iter().copied().find(|v| v.name() == s).ok_or_else(|| {
                    let names: Vec<&str> = Self::ALL.iter().map(|v| v.name()).collect();
                    format!("unknown value `{s}` (expected one of {})", names.join(", "))
                })
            }
        }
    };
}

named_enum!(ProblemFamily { Logistic => "logistic", Hinge => "hinge" });
named_enum!(GraphFamily {
    WattsStrogatz => "watts_strogatz",
    ErdosRenyi => "erdos_renyi",
    Lattice8 => "lattice8",
    Barbell => "barbell",
});
named_enum!(Weights { LazyMetropolis => "lazy_metropolis", Laplacian => "laplacian" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSection {
    pub family: ProblemFamily,
    pub n: usize,
    pub d: usize,
    pub l: f64,
    pub u: f64,
    pub data_seed: u64,
}

/// Graph parameters; only those of the selected family are used. The node
/// count is `problem.n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSection {
    pub family: GraphFamily,
    pub k: usize,
    pub theta: f64,
    pub p: f64,
    pub rows: usize,
    pub cols: usize,
    pub bridges: usize,
    pub graph_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSection {
    pub iterations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub graph: GraphSection,
    pub weights: Weights,
    pub run: RunConfig,
    pub reference: ReferenceSection,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSection { family: ProblemFamily::Logistic, n: 100, d: 5, l: 0.1, u: 0.1, data_seed: 1 },
            graph: GraphSection {
                family: GraphFamily::WattsStrogatz,
                k: 20,
                theta: 0.02,
                p: 0.06,
                rows: 10,
                cols: 10,
                bridges: 1,
                graph_seed: 7,
            },
            weights: Weights::LazyMetropolis,
            run: RunConfig::default(),
            reference: ReferenceSection { iterations: 1_000_000, seed: 1 },
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| CliError::Config(format!("{key}: {e}")))
}

impl ExperimentConfig {
    /// Every key accepted by [`ExperimentConfig::set`], in file order.
    pub const KEYS: [&'static str; 26] = [
        "problem.family",
        "problem.n",
        "problem.d",
        "problem.l",
        "problem.u",
        "problem.data_seed",
        "graph.family",
        "graph.k",
        "graph.theta",
        "graph.p",
        "graph.rows",
        "graph.cols",
        "graph.bridges",
        "graph.graph_seed",
        "weights",
        "run.variant",
        "run.iterations",
        "run.eta",
        "run.step_scale",
        "run.seed",
        "run.init",
        "run.record_every",
        "run.monitor_bounds",
        "reference.iterations",
        "reference.seed",
        "output_dir",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key.trim() {
            "problem.family" => self.problem.family = parse(key, v)?,
            "problem.n" => self.problem.n = parse(key, v)?,
            "problem.d" => self.problem.d = parse(key, v)?,
            "problem.l" => self.problem.l = parse(key, v)?,
            "problem.u" => self.problem.u = parse(key, v)?,
            "problem.data_seed" => self.problem.data_seed = parse(key, v)?,
            "graph.family" => self.graph.family = parse(key, v)?,
            "graph.k" => self.graph.k = parse(key, v)?,
            "graph.theta" => self.graph.theta = parse(key, v)?,
            "graph.p" => self.graph.p = parse(key, v)?,
            "graph.rows" => self.graph.rows = parse(key, v)?,
            "graph.cols" => self.graph.cols = parse(key, v)?,
            "graph.bridges" => self.graph.bridges = parse(key, v)?,
            "graph.graph_seed" => self.graph.graph_seed = parse(key, v)?,
            "weights" => self.weights = parse(key, v)?,
            "run.variant" => self.run.variant = parse::<Variant>(key, v)?,
            "run.iterations" => self.run.iterations = parse(key, v)?,
            "run.eta" => self.run.eta = parse(key, v)?,
            "run.step_scale" => self.run.step_scale = if v == "auto" { None } else { Some(parse(key, v)?) },
            "run.seed" => self.run.seed = parse(key, v)?,
            "run.init" => self.run.init = parse::<InitMode>(key, v)?,
            "run.record_every" => self.run.record_every = parse(key, v)?,
            "run.monitor_bounds" => self.run.monitor_bounds = parse(key, v)?,
            "run.debug.flip_dual_sign" => self.run.debug.flip_dual_sign = parse(key, v)?,
            "run.debug.constant_step" => self.run.debug.constant_step = parse(key, v)?,
            "reference.iterations" => self.reference.iterations = parse(key, v)?,
            "reference.seed" => self.reference.seed = parse(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            other => return Err(CliError::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not of the form key=value")))?;
        self.set(k, v)
    }

    /// `(key, value)` pairs that rebuild this config through [`ExperimentConfig::set`].
    pub fn to_flat(&self) -> Vec<(&'static str, String)> {
        let p = &self.problem;
        let g = &self.graph;
        let r = &self.run;
        let mut out = vec![
            ("problem.family", p.family.to_string()),
            ("problem.n", p.n.to_string()),
            ("problem.d", p.d.to_string()),
            ("problem.l", p.l.to_string()),
            ("problem.u", p.u.to_string()),
            ("problem.data_seed", p.data_seed.to_string()),
            ("graph.family", g.family.to_string()),
            ("graph.k", g.k.to_string()),
            ("graph.theta", g.theta.to_string()),
            ("graph.p", g.p.to_string()),
            ("graph.rows", g.rows.to_string()),
            ("graph.cols", g.cols.to_string()),
            ("graph.bridges", g.bridges.to_string()),
            ("graph.graph_seed", g.graph_seed.to_string()),
            ("weights", self.weights.to_string()),
            ("run.variant", r.variant.to_string()),
            ("run.iterations", r.iterations.to_string()),
            ("run.eta", r.eta.to_string()),
            ("run.step_scale", r.step_scale.map_or_else(|| "auto".to_string(), |c| c.to_string())),
            ("run.seed", r.seed.to_string()),
            ("run.init", r.init.name().to_string()),
            ("run.record_every", r.record_every.to_string()),
            ("run.monitor_bounds", r.monitor_bounds.to_string()),
            ("reference.iterations", self.reference.iterations.to_string()),
            ("reference.seed", self.reference.seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
        ];
        if r.debug.flip_dual_sign {
            out.push(("run.debug.flip_dual_sign", "true".into()));
        }
        if r.debug.constant_step {
            out.push(("run.debug.constant_step", "true".into()));
        }
        out
    }

    pub fn to_flat_string(&self) -> String {
        self.to_flat().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses the flat format on top of the defaults. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_flat_str(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k, v).map_err(|e| CliError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    /// Reads a flat config file, or the `config` entry of a run manifest when
    /// the file has a `.json` extension.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let cfg = manifest.get("config").cloned().unwrap_or(manifest);
            serde_json::from_value(cfg).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        } else {
            Self::from_flat_str(&text)
        }
    }

    /// Checks the problem and graph sections; run settings are checked by
    /// the engine.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        if p.n == 0 || p.d == 0 {
            return Err(CliError::Config(format!("problem.n and problem.d must be positive (n={}, d={})", p.n, p.d)));
        }
        if !(p.l > 0.0 && p.u > 0.0) {
            return Err(CliError::Config(format!("box margins must be positive (l={}, u={})", p.l, p.u)));
        }
        if self.graph.family == GraphFamily::Lattice8 && self.graph.rows * self.graph.cols != p.n {
            return Err(CliError::Config(format!(
                "lattice {}x{} does not have problem.n = {} nodes",
                self.graph.rows, self.graph.cols, p.n
            )));
        }
        if self.reference.iterations == 0 {
            return Err(CliError::Config("reference.iterations must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip_is_identity() {
        let mut cfg = ExperimentConfig::default();
        cfg.run.step_scale = Some(0.3);
        cfg.run.variant = Variant::Stochastic;
        cfg.problem.l = 0.001;
        cfg.graph.theta = 1.0 / 3.0;
        cfg.run.debug.flip_dual_sign = true;
        let back = ExperimentConfig::from_flat_str(&cfg.to_flat_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn json_round_trip_is_identity() {
        let cfg = ExperimentConfig { weights: Weights::Laplacian, ..ExperimentConfig::default() };
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn every_documented_key_is_emitted() {
        let keys: Vec<&str> = ExperimentConfig::default().to_flat().into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys, ExperimentConfig::KEYS);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let cfg = ExperimentConfig::from_flat_str("# defaults\n\nrun.eta = 2\ngraph.family=barbell\n").unwrap();
        assert_eq!(cfg.run.eta, 2.0);
        assert_eq!(cfg.graph.family, GraphFamily::Barbell);
    }

    #[test]
    fn bad_input_is_a_config_error() {
        for text in ["graph.family = ring", "run.eta = fast", "nope = 1", "problem.n"] {
            match ExperimentConfig::from_flat_str(text) {
                Err(CliError::Config(_)) => {}
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn lattice_size_must_match() {
        let mut cfg = ExperimentConfig::default();
        cfg.graph.family = GraphFamily::Lattice8;
        assert!(cfg.validate().is_ok());
        cfg.problem.n = 50;
        assert!(cfg.validate().is_err());
    }
}
