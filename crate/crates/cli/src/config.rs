//! Experiment configuration files.
//!
//! A config is TOML with the sections `[problem]`, `[penalty]`, `[solve]`,
//! `[sweep]`, `[check]` and `[output]`. Unknown keys are rejected so that a
//! misspelled field is reported by name.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sparsereg::analysis::SamplingOptions;
use sparsereg::experiments::{log_grid, ProblemKind, ProblemSpec, SweepOptions, Weights};
use sparsereg::operators::read_matrix_csv;
use sparsereg::solver::SolverConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub penalty: PenaltySection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Either a path to a CSV file (relative to the config) or inline rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    File(PathBuf),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    pub n: usize,
    /// Data dimension for `random-dense` and `toy-nonlinear`; defaults to `n`.
    pub m: Option<usize>,
    #[serde(default)]
    pub sparsity: usize,
    #[serde(default = "default_p")]
    pub p: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub decay: f64,
    #[serde(default = "one")]
    pub width: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub matrix: Option<MatrixSource>,
    pub u_dagger: Option<Vec<f64>>,
    /// Build a non-sparse `u†` from the range condition instead of a sparse one.
    #[serde(default)]
    pub source_condition: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySection {
    #[serde(default = "one")]
    pub q: f64,
    #[serde(default)]
    pub weights: Weights,
}

impl Default for PenaltySection {
    fn default() -> Self {
        Self {
            q: 1.0,
            weights: Weights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    /// Explicit regularization parameter; otherwise `c_alpha delta^(p-1)`.
    pub alpha: Option<f64>,
    #[serde(default)]
    pub delta: f64,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub inner_max_iter: Option<usize>,
    pub inner_tol: Option<f64>,
    pub step_safety: Option<f64>,
}

impl Default for SolveSection {
    fn default() -> Self {
        Self {
            alpha: None,
            delta: 0.0,
            max_iter: None,
            tol: None,
            inner_max_iter: None,
            inner_tol: None,
            step_safety: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_delta_min")]
    pub delta_min: f64,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "one")]
    pub c_alpha: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Noise seed; defaults to the problem seed.
    pub seed: Option<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            delta_min: default_delta_min(),
            delta_max: default_delta_max(),
            count: default_count(),
            c_alpha: 1.0,
            trials: default_trials(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            radius: default_radius(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

fn one() -> f64 {
    1.0
}
fn default_p() -> u32 {
    2
}
fn default_epsilon() -> f64 {
    1e-3
}
fn default_delta_min() -> f64 {
    1e-4
}
fn default_delta_max() -> f64 {
    1e-1
}
fn default_count() -> usize {
    10
}
fn default_trials() -> usize {
    5
}
fn default_samples() -> usize {
    1000
}
fn default_radius() -> f64 {
    0.1
}
fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative matrix paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => config_error(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let Some(MatrixSource::File(file)) = &mut cfg.problem.matrix {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    *file = dir.join(&*file);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config values are representable in TOML")
    }

    fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        if p.n == 0 {
            return Err(config_error("problem.n: must be positive"));
        }
        if p.sparsity > p.n {
            return Err(config_error(format!("problem.sparsity: {} exceeds n = {}", p.sparsity, p.n)));
        }
        if p.p != 1 && p.p != 2 {
            return Err(config_error(format!("problem.p: {} is not 1 or 2", p.p)));
        }
        if p.m == Some(0) {
            return Err(config_error("problem.m: must be positive"));
        }
        if !(1.0..=2.0).contains(&self.penalty.q) {
            return Err(config_error(format!("penalty.q: {} is outside [1, 2]", self.penalty.q)));
        }
        if let Weights::List(w) = &self.penalty.weights {
            if w.len() != p.n {
                return Err(config_error(format!("penalty.weights: {} entries for n = {}", w.len(), p.n)));
            }
        }
        if let Some(alpha) = self.solve.alpha {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(config_error(format!("solve.alpha: {alpha} must be positive")));
            }
        }
        if !(self.solve.delta.is_finite() && self.solve.delta >= 0.0) {
            return Err(config_error(format!("solve.delta: {} must be nonnegative", self.solve.delta)));
        }
        let s = &self.sweep;
        if s.count == 0 {
            return Err(config_error("sweep.count: the delta grid is empty"));
        }
        if !(s.delta_min > 0.0 && s.delta_max >= s.delta_min && s.delta_max.is_finite()) {
            return Err(config_error(format!(
                "sweep.delta_min/delta_max: need 0 < delta_min <= delta_max, got {} and {}",
                s.delta_min, s.delta_max
            )));
        }
        if s.count > 1 && s.delta_max == s.delta_min {
            return Err(config_error("sweep.delta_max: equals delta_min with more than one point"));
        }
        if s.trials == 0 {
            return Err(config_error("sweep.trials: must be at least 1"));
        }
        if !(s.c_alpha.is_finite() && s.c_alpha > 0.0) {
            return Err(config_error(format!("sweep.c_alpha: {} must be positive", s.c_alpha)));
        }
        if self.check.samples < 100 {
            return Err(config_error("check.samples: at least 100 samples are required"));
        }
        if !(self.check.radius.is_finite() && self.check.radius > 0.0) {
            return Err(config_error("check.radius: must be positive"));
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.problem.seed = seed;
        self.sweep.seed = Some(seed);
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec, CliError> {
        let p = &self.problem;
        let mut spec = ProblemSpec::new(p.kind, p.n, p.sparsity, self.penalty.q, p.p, p.seed);
        spec.m = p.m.unwrap_or(p.n);
        spec.weights = self.penalty.weights.clone();
        spec.decay = p.decay;
        spec.width = p.width;
        spec.epsilon = p.epsilon;
        spec.u_dagger = p.u_dagger.clone();
        spec.matrix = match &p.matrix {
            None => None,
            Some(MatrixSource::File(path)) => Some(read_matrix_csv(path).map_err(|e| {
                config_error(format!("problem.matrix: {}: {e}", path.display()))
            })?),
            Some(MatrixSource::Rows(rows)) => Some(rows_to_matrix(rows)?),
        };
        Ok(spec)
    }

    pub fn solver_config(&self, alpha: f64) -> SolverConfig {
        let s = &self.solve;
        let d = SolverConfig::new(self.problem.p, alpha);
        SolverConfig {
            max_iter: s.max_iter.unwrap_or(d.max_iter),
            tol: s.tol.unwrap_or(d.tol),
            inner_max_iter: s.inner_max_iter.unwrap_or(d.inner_max_iter),
            inner_tol: s.inner_tol.unwrap_or(d.inner_tol),
            step_safety: s.step_safety.unwrap_or(d.step_safety),
            ..d
        }
    }

    pub fn sweep_options(&self) -> Result<SweepOptions, CliError> {
        let s = &self.sweep;
        let deltas = if s.count == 1 {
            vec![s.delta_max]
        } else {
            log_grid(s.delta_min, s.delta_max, s.count).map_err(|e| config_error(format!("sweep: {e}")))?
        };
        let mut opts = SweepOptions::new(deltas, s.c_alpha, s.trials, s.seed.unwrap_or(self.problem.seed));
        opts.solver = self.solver_config(1.0);
        opts.constant_samples = self.check.samples;
        opts.constant_radius = self.check.radius;
        Ok(opts)
    }

    pub fn sampling(&self) -> SamplingOptions {
        SamplingOptions {
            samples: self.check.samples,
            radius: self.check.radius,
            seed: self.problem.seed,
        }
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(config_error("problem.matrix: rows must be nonempty and of equal length"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}
