use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algos::{SampleMode, StepSchedule};
use crate::error::{Error, Result};

/// Which problem to run on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Two-state chain with scalar features `(1, 2)`.
    Example1,
    /// Random chain with random features in `(0, 1)`.
    Example2 {
        n_states: usize,
        d: usize,
        seed: u64,
        /// Use tabular features instead of random ones (`d` is ignored).
        #[serde(default)]
        identity_features: bool,
    },
    /// Chain and features loaded from JSON files (paths relative to the spec file).
    Files { mrp: PathBuf, features: PathBuf },
}

/// One estimator block of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Td0 {
        schedule: StepSchedule,
        /// Run even if the schedule fails its admissibility check.
        #[serde(default, rename = "override")]
        allow_inadmissible: bool,
    },
    Td0Avg {
        schedule: StepSchedule,
        #[serde(default, rename = "override")]
        allow_inadmissible: bool,
    },
    Ctd {
        gamma: f64,
        epoch_length: usize,
        /// Projection radius; defaults to `2 (1 + |r|_inf) / (mu (1 - beta))`.
        #[serde(default)]
        radius: Option<f64>,
        #[serde(default)]
        sample_mode: SampleMode,
        #[serde(default, rename = "override")]
        allow_inadmissible: bool,
    },
}

impl AlgorithmSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::Td0 { .. } => "td0",
            AlgorithmSpec::Td0Avg { .. } => "td0_avg",
            AlgorithmSpec::Ctd { .. } => "ctd",
        }
    }

    /// Column prefix in the trace CSV.
    pub fn column_prefix(&self) -> &'static str {
        match self {
            AlgorithmSpec::Td0 { .. } => "td0",
            AlgorithmSpec::Td0Avg { .. } => "td0avg",
            AlgorithmSpec::Ctd { .. } => "ctd",
        }
    }

    /// Position in the fixed column order `td0, td0avg, ctd`.
    pub fn column_rank(&self) -> usize {
        match self {
            AlgorithmSpec::Td0 { .. } => 0,
            AlgorithmSpec::Td0Avg { .. } => 1,
            AlgorithmSpec::Ctd { .. } => 2,
        }
    }
}

/// How checkpoints are laid out over `[1, n_iterations]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckpointSpec {
    /// `1, 2, 4, ...` plus the final iteration.
    #[default]
    Geometric,
    /// Roughly `per_decade` log-spaced points per factor of ten, plus the final iteration.
    LogSpaced { per_decade: u32 },
    /// Every `stride` iterations, plus the final iteration.
    Stride { stride: u64 },
    List { iterations: Vec<u64> },
}

impl CheckpointSpec {
    pub fn resolve(&self, n_iterations: u64) -> Result<Vec<u64>> {
        let mut out: Vec<u64> = match self {
            CheckpointSpec::Geometric => {
                let mut v = Vec::new();
                let mut n = 1u64;
                while n <= n_iterations {
                    v.push(n);
                    n = n.saturating_mul(2);
                }
                v
            }
            CheckpointSpec::LogSpaced { per_decade } => {
                if *per_decade == 0 {
                    return Err(Error::InvalidSpec("per_decade must be positive".into()));
                }
                let mut v = Vec::new();
                let top = (n_iterations.max(1) as f64).log10();
                let steps = (top * *per_decade as f64).ceil() as u64;
                for i in 0..=steps {
                    let n = 10f64.powf(i as f64 / *per_decade as f64).round() as u64;
                    if n >= 1 && n <= n_iterations && v.last() != Some(&n) {
                        v.push(n);
                    }
                }
                v
            }
            CheckpointSpec::Stride { stride } => {
                if *stride == 0 {
                    return Err(Error::InvalidSpec("checkpoint stride must be positive".into()));
                }
                (1..=n_iterations / stride).map(|k| k * stride).collect()
            }
            CheckpointSpec::List { iterations } => {
                if iterations.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidSpec("checkpoints must be strictly increasing".into()));
                }
                if iterations.last().is_some_and(|&n| n > n_iterations) {
                    return Err(Error::InvalidSpec("checkpoint beyond n_iterations".into()));
                }
                iterations.clone()
            }
        };
        if !matches!(self, CheckpointSpec::List { .. }) && out.last() != Some(&n_iterations) && n_iterations > 0 {
            out.push(n_iterations);
        }
        if out.is_empty() {
            return Err(Error::InvalidSpec("no checkpoints".into()));
        }
        Ok(out)
    }
}

/// Discount used by the built-in problems when the spec does not set one.
pub const DEFAULT_DISCOUNT: f64 = 0.9;

fn default_runs() -> usize {
    50
}

fn default_truncation() -> usize {
    200
}

fn default_mixing_tolerance() -> f64 {
    1e-6
}

fn default_delta() -> f64 {
    0.05
}

/// Experiment configuration, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub problem: ProblemSpec,
    /// Discount factor. Built-in problems default to 0.9; file problems default
    /// to the discount stored in the chain file.
    #[serde(default)]
    pub discount: Option<f64>,
    pub algorithms: Vec<AlgorithmSpec>,
    pub n_iterations: u64,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub checkpoints: CheckpointSpec,
    #[serde(default)]
    pub start_state: usize,
    /// Initial iterate; zero when absent.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    /// Also write every run's normalized errors next to the aggregated CSV.
    #[serde(default)]
    pub dump_runs: bool,
    /// Enforce `|r| <= 1` and `|phi(s)| <= 1`.
    #[serde(default)]
    pub strict_assumptions: bool,
    /// Truncation horizon for the mixing sums used by the bound report.
    #[serde(default = "default_truncation")]
    pub mixing_truncation: usize,
    #[serde(default = "default_mixing_tolerance")]
    pub mixing_tolerance: f64,
    /// Confidence parameter for the high-probability bounds.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Load a spec and resolve file-problem paths against the spec's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut spec = Self::from_json(&text)?;
        spec.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(spec)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let ProblemSpec::Files { mrp, features } = &mut self.problem {
            if mrp.is_relative() {
                *mrp = base.join(&*mrp);
            }
            if features.is_relative() {
                *features = base.join(&*features);
            }
        }
    }

    /// Structural checks that do not need the problem to be built.
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::InvalidSpec("n_runs must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidSpec("no algorithms configured".into()));
        }
        let mut ranks: Vec<usize> = self.algorithms.iter().map(AlgorithmSpec::column_rank).collect();
        ranks.sort_unstable();
        if ranks.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSpec("each algorithm kind may appear at most once".into()));
        }
        if let Some(beta) = self.discount {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::InvalidSpec(format!("discount {beta} must lie in (0, 1)")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidSpec(format!("delta {} must lie in (0, 1)", self.delta)));
        }
        self.checkpoints.resolve(self.n_iterations)?;
        Ok(())
    }

    /// Algorithms sorted into CSV column order.
    pub fn ordered_algorithms(&self) -> Vec<&AlgorithmSpec> {
        let mut algs: Vec<&AlgorithmSpec> = self.algorithms.iter().collect();
        algs.sort_by_key(|a| a.column_rank());
        algs
    }

    /// Example 1 with the default step sizes used throughout the project.
    pub fn example1_default() -> Self {
        ExperimentSpec {
            problem: ProblemSpec::Example1,
            discount: Some(DEFAULT_DISCOUNT),
            algorithms: vec![
                AlgorithmSpec::Td0 {
                    schedule: StepSchedule::InverseLinear { c0: 0.04, c: 100.0 },
                    allow_inadmissible: false,
                },
                AlgorithmSpec::Td0Avg {
                    schedule: StepSchedule::InversePower { c0: 0.1, c: 100.0, alpha: 0.75 },
                    allow_inadmissible: false,
                },
                AlgorithmSpec::Ctd {
                    gamma: 0.02,
                    epoch_length: 100,
                    radius: None,
                    sample_mode: SampleMode::Online,
                    allow_inadmissible: false,
                },
            ],
            n_iterations: 100_000,
            n_runs: 50,
            master_seed: 1,
            checkpoints: CheckpointSpec::LogSpaced { per_decade: 10 },
            start_state: 0,
            theta0: None,
            output_path: None,
            dump_runs: false,
            strict_assumptions: false,
            mixing_truncation: default_truncation(),
            mixing_tolerance: default_mixing_tolerance(),
            delta: default_delta(),
        }
    }
}
