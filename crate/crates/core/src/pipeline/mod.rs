//! End-to-end trials: sample, train, optimize, validate.

mod stats;

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::problems::{BlackBox, CountingBlackBox, ProblemError, ProblemSpec};
use crate::sampling::{adaptive_sample, best_feasible, lhs, lhs_sample, Dataset, SamplingConfig, SamplingError};
use crate::sqp::{solve, solve_formulation, Formulation, HessianMode, SqpConfig, SqpError, SqpResult};
use crate::surrogate::{train_mlp, FiniteDifferenceModel, MlpSurrogate, SurrogateError, TrainConfig, TrainReport};
use crate::svm::SvmParams;
use crate::Real;

pub use stats::{StatsParseError, Summary, TrialRow, TrialStats};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Sqp(#[from] SqpError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingStrategy {
    Adaptive,
    Lhs,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StartPoint<T: Real> {
    UpperCorner,
    LowerCorner,
    /// Best feasible sampled point, clipped into the variable bounds.
    BestSample,
    Fixed(DVector<T>),
}

impl<T: Real> StartPoint<T> {
    pub fn resolve(&self, spec: &ProblemSpec<T>, data: Option<&Dataset<T>>) -> DVector<T> {
        match self {
            StartPoint::UpperCorner => spec.bounds_hi.clone(),
            StartPoint::LowerCorner => spec.bounds_lo.clone(),
            StartPoint::Fixed(x) => x.clone(),
            StartPoint::BestSample => data
                .and_then(|d| best_feasible(d, spec.objective_output).map(|i| d.x.row(i).transpose()))
                .map(|x| x.zip_zip_map(&spec.bounds_lo, &spec.bounds_hi, |v, l, h| v.max(l).min(h)))
                .unwrap_or_else(|| spec.bounds_hi.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialConfig<T: Real> {
    pub strategy: SamplingStrategy,
    pub sampling: SamplingConfig<T>,
    pub svm: SvmParams<T>,
    pub train: TrainConfig<T>,
    pub sqp: SqpConfig<T>,
    pub start: StartPoint<T>,
    /// Extra LHS rows used only to measure surrogate accuracy. They are
    /// counted separately from the optimization budget.
    pub test_rows: usize,
}

impl<T: Real> Default for TrialConfig<T> {
    fn default() -> Self {
        Self {
            strategy: SamplingStrategy::Adaptive,
            sampling: SamplingConfig::default(),
            svm: SvmParams::default(),
            train: TrainConfig::default(),
            sqp: SqpConfig::default(),
            start: StartPoint::UpperCorner,
            test_rows: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrialOutcome<T: Real> {
    pub seed: u64,
    pub dataset: Dataset<T>,
    pub model: MlpSurrogate<T>,
    pub train_report: TrainReport<T>,
    /// Coefficient of determination per output on the test rows.
    pub test_r2: Option<Vec<T>>,
    pub start: DVector<T>,
    pub result: SqpResult<T>,
    pub sampling_evaluations: usize,
    pub validation_evaluations: usize,
    pub test_evaluations: usize,
    /// Wall time of the optimization call alone.
    pub optimize_time: Duration,
    /// Distance from the returned point to the nearest known minimizer.
    pub distance: Option<T>,
    /// Whether the validated outputs satisfy every constraint.
    pub true_feasible: Option<bool>,
}

impl<T: Real> TrialOutcome<T> {
    pub fn total_evaluations(&self) -> usize {
        self.sampling_evaluations + self.validation_evaluations
    }
}

fn counted<T: Real>(spec: &ProblemSpec<T>) -> (ProblemSpec<T>, Arc<CountingBlackBox<T>>) {
    let counter = Arc::new(CountingBlackBox::new(spec.black_box.clone()));
    let mut s = spec.clone();
    s.black_box = counter.clone() as Arc<dyn BlackBox<T>>;
    (s, counter)
}

/// `1 − SSE/SST` for each column.
pub fn r_squared<T: Real>(pred: &nalgebra::DMatrix<T>, truth: &nalgebra::DMatrix<T>) -> Vec<T> {
    (0..truth.ncols())
        .map(|j| {
            let col = truth.column(j);
            let mean = col.mean();
            let sst = col.iter().fold(T::zero(), |s, v| s + (*v - mean) * (*v - mean));
            let sse = (0..truth.nrows()).fold(T::zero(), |s, i| {
                let e = pred[(i, j)] - truth[(i, j)];
                s + e * e
            });
            if sst > T::zero() {
                T::one() - sse / sst
            } else {
                T::one()
            }
        })
        .collect()
}

pub fn run_trial<T: Real>(spec: &ProblemSpec<T>, cfg: &TrialConfig<T>, seed: u64) -> Result<TrialOutcome<T>, PipelineError> {
    let (counted_spec, counter) = counted(spec);

    let dataset = match cfg.strategy {
        SamplingStrategy::Adaptive => {
            let sc = SamplingConfig {
                rng_seed: seed,
                ..cfg.sampling.clone()
            };
            adaptive_sample(&counted_spec, &sc, &cfg.svm)?.0
        }
        SamplingStrategy::Lhs => lhs_sample(&counted_spec, cfg.sampling.budget, seed)?,
    };
    let sampling_evaluations = counter.count();

    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (model, train_report) = train_mlp(&dataset, &tc)?;

    let (test_r2, test_evaluations) = if cfg.test_rows > 0 {
        let x = lhs(&spec.bounds_lo, &spec.bounds_hi, cfg.test_rows, seed ^ 0x9e37_79b9_7f4a_7c15)?;
        let test = {
            let (ts, tcount) = counted(spec);
            let mut d = Dataset::new(spec.dim_independent(), spec.n_outputs);
            for row in x.row_iter() {
                let xi = row.transpose();
                if let Ok(y) = ts.evaluate(xi.as_slice()) {
                    if y.iter().all(|v| v.is_finite_value()) {
                        d.push(&xi, &y, true, true, crate::sampling::Provenance::Initial);
                    }
                }
            }
            (d, tcount.count())
        };
        let (d, n) = test;
        let pred = model.forward_batch(&d.x)?;
        (Some(r_squared(&pred, &d.y)), n)
    } else {
        (None, 0)
    };

    let start = cfg.start.resolve(spec, Some(&dataset));
    let before = counter.count();
    let clock = Instant::now();
    let result = solve(&counted_spec, &model, &start, &cfg.sqp)?;
    let optimize_time = clock.elapsed();
    let validation_evaluations = counter.count() - before;

    let distance = spec.known_optimum.as_ref().map(|o| o.distance(&result.x));
    let true_feasible = result.y_true.as_ref().map(|y| spec.is_feasible(&result.x, y, T::lit(1e-9)));
    Ok(TrialOutcome {
        seed,
        dataset,
        model,
        train_report,
        test_r2,
        start,
        result,
        sampling_evaluations,
        validation_evaluations,
        test_evaluations,
        optimize_time,
        distance,
        true_feasible,
    })
}

/// Optimizes the black box directly, with finite-difference derivatives and
/// BFGS curvature. Returns the result and the number of true evaluations.
pub fn optimize_black_box<T: Real>(
    spec: &ProblemSpec<T>,
    x0: &DVector<T>,
    cfg: &SqpConfig<T>,
) -> Result<(SqpResult<T>, usize), PipelineError> {
    let (counted_spec, counter) = counted(spec);
    let model = FiniteDifferenceModel::new(counted_spec.black_box.clone());
    let cfg = SqpConfig {
        hessian_mode: HessianMode::Bfgs,
        validate_final: false,
        ..cfg.clone()
    };
    let form = Formulation::from_spec(spec);
    let mut result = solve_formulation(&form, &model, x0, &cfg, None)?;
    result.f_true = Some(result.f_pred);
    result.y_true = Some(result.y_pred.clone());
    Ok((result, counter.count()))
}

/// Runs `n_trials` trials with seeds `seed_base + i`. Failed trials are
/// reported with their error and the run continues.
pub fn run_trials<T: Real>(
    spec: &ProblemSpec<T>,
    cfg: &TrialConfig<T>,
    seed_base: u64,
    n_trials: usize,
) -> Vec<Result<TrialOutcome<T>, PipelineError>> {
    (0..n_trials).map(|i| run_trial(spec, cfg, seed_base + i as u64)).collect()
}
