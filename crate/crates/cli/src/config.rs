//! TOML run configuration. Every table rejects unknown keys; omitted keys
//! take the library defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mlfp::pipeline::{SamplingStrategy, StartPoint, TrialConfig};
use mlfp::sqp::HessianMode;
use mlfp::svm::KernelChoice;
use nalgebra::DVector;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    #[serde(default = "one")]
    pub n_trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub svm: SvmSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub sqp: SqpSection,
}

fn one() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Default, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Adaptive,
    Lhs,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    #[serde(default)]
    pub strategy: Strategy,
    pub budget: Option<usize>,
    pub initial_fraction: Option<f64>,
    pub bound_expansion: Option<f64>,
    pub subregion_fraction: Option<f64>,
    pub rounds: Option<usize>,
    pub oversample: Option<usize>,
    pub proposal_attempts: Option<usize>,
}

#[derive(Debug, Default, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Rbf,
    Linear,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmSection {
    pub c: Option<f64>,
    #[serde(default)]
    pub kernel: Kernel,
    pub gamma: Option<f64>,
    pub tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub hidden_dims: Option<Vec<usize>>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub validation_fraction: Option<f64>,
    pub early_stop_patience: Option<usize>,
    /// Rows held out by `train` for test metrics.
    pub test_fraction: Option<f64>,
    /// Extra LHS rows drawn by `benchmark` for test R² (not counted in the budget).
    pub test_rows: Option<usize>,
}

#[derive(Debug, Default, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Hessian {
    #[default]
    Exact,
    Bfgs,
}

#[derive(Debug, Deserialize, Clone, PartialEq)]
#[serde(untagged)]
pub enum Start {
    Named(String),
    Point(Vec<f64>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqpSection {
    pub eta: Option<f64>,
    pub tol: Option<f64>,
    pub beta: Option<f64>,
    pub n_max: Option<usize>,
    pub delta: Option<f64>,
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub hessian: Hessian,
    pub bfgs_eps: Option<f64>,
    /// `"upper"`, `"lower"`, `"best"` or an explicit point.
    pub start: Option<Start>,
    #[serde(default)]
    pub trace_true_objective: bool,
}

macro_rules! set {
    ($target:expr, $source:expr) => {
        if let Some(v) = $source.clone() {
            $target = v;
        }
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        if cfg.n_trials == 0 {
            bail!("n_trials must be at least 1");
        }
        cfg.trial_config()?;
        Ok(cfg)
    }

    pub fn test_fraction(&self) -> f64 {
        self.training.test_fraction.unwrap_or(0.1)
    }

    pub fn start(&self) -> Result<StartPoint<f64>> {
        Ok(match &self.sqp.start {
            None => StartPoint::UpperCorner,
            Some(Start::Named(s)) => match s.as_str() {
                "upper" => StartPoint::UpperCorner,
                "lower" => StartPoint::LowerCorner,
                "best" => StartPoint::BestSample,
                other => bail!("unknown start {other:?}; expected upper, lower, best or a point"),
            },
            Some(Start::Point(p)) => StartPoint::Fixed(DVector::from_vec(p.clone())),
        })
    }

    /// Library configuration with every override applied and validated.
    pub fn trial_config(&self) -> Result<TrialConfig<f64>> {
        let mut t = TrialConfig::<f64>::default();
        t.strategy = match self.sampling.strategy {
            Strategy::Adaptive => SamplingStrategy::Adaptive,
            Strategy::Lhs => SamplingStrategy::Lhs,
        };
        let s = &self.sampling;
        set!(t.sampling.budget, s.budget);
        set!(t.sampling.initial_fraction, s.initial_fraction);
        set!(t.sampling.bound_expansion, s.bound_expansion);
        set!(t.sampling.subregion_fraction, s.subregion_fraction);
        set!(t.sampling.rounds, s.rounds);
        set!(t.sampling.oversample, s.oversample);
        set!(t.sampling.proposal_attempts, s.proposal_attempts);
        t.sampling.rng_seed = self.seed;
        t.sampling.validate()?;

        set!(t.svm.c, self.svm.c);
        set!(t.svm.tol, self.svm.tol);
        t.svm.kernel = match self.svm.kernel {
            Kernel::Rbf => KernelChoice::Rbf { gamma: self.svm.gamma },
            Kernel::Linear => KernelChoice::Linear,
        };

        let tr = &self.training;
        set!(t.train.hidden_dims, tr.hidden_dims);
        set!(t.train.epochs, tr.epochs);
        set!(t.train.batch_size, tr.batch_size);
        set!(t.train.learning_rate, tr.learning_rate);
        set!(t.train.validation_fraction, tr.validation_fraction);
        set!(t.train.early_stop_patience, tr.early_stop_patience);
        set!(t.test_rows, tr.test_rows);
        t.train.seed = self.seed;
        t.train.validate()?;
        let tf = self.test_fraction();
        if !(0.0..1.0).contains(&tf) {
            bail!("test_fraction must be in [0, 1)");
        }

        let q = &self.sqp;
        set!(t.sqp.eta, q.eta);
        set!(t.sqp.tol, q.tol);
        set!(t.sqp.beta, q.beta);
        set!(t.sqp.n_max, q.n_max);
        set!(t.sqp.delta, q.delta);
        set!(t.sqp.max_iterations, q.max_iterations);
        set!(t.sqp.bfgs_eps, q.bfgs_eps);
        t.sqp.hessian_mode = match q.hessian {
            Hessian::Exact => HessianMode::Exact,
            Hessian::Bfgs => HessianMode::Bfgs,
        };
        t.sqp.trace_true_objective = q.trace_true_objective;
        t.sqp.validate()?;
        t.start = self.start()?;
        Ok(t)
    }
}
