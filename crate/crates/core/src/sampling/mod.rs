//! Latin hypercube sampling and the adaptive two-stage sampler.
//!
//! The adaptive sampler draws a small global design over slightly expanded
//! bounds, trains a conservative feasibility classifier when the problem is
//! constrained, and spends the rest of the budget in a box around the best
//! feasible point, discarding candidates the classifier predicts infeasible
//! before they are evaluated.

mod dataset;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::problems::ProblemSpec;
use crate::svm::{conservative_retrain, train_svm, SvmModel, SvmParams};
use crate::Real;

pub use dataset::{Dataset, Provenance};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplingError {
    #[error("sample count must be positive")]
    EmptySample,
    #[error("invalid bounds in dimension {0}")]
    InvalidBounds(usize),
    #[error("invalid sampling configuration: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingConfig<T> {
    /// Total number of black-box evaluations.
    pub budget: usize,
    pub initial_fraction: T,
    pub bound_expansion: T,
    /// Subregion width as a fraction of each variable's range.
    pub subregion_fraction: T,
    pub rng_seed: u64,
    pub rounds: usize,
    /// Candidates proposed per requested point when a classifier filters.
    pub oversample: usize,
    pub proposal_attempts: usize,
}

impl<T: Real> Default for SamplingConfig<T> {
    fn default() -> Self {
        Self {
            budget: 100,
            initial_fraction: T::lit(0.10),
            bound_expansion: T::lit(0.05),
            subregion_fraction: T::lit(0.25),
            rng_seed: 0,
            rounds: 3,
            oversample: 3,
            proposal_attempts: 5,
        }
    }
}

impl<T: Real> SamplingConfig<T> {
    pub fn validate(&self) -> Result<(), SamplingError> {
        let bad = |m: &str| Err(SamplingError::InvalidConfig(m.to_string()));
        if !(self.initial_fraction > T::zero() && self.initial_fraction < T::one()) {
            return bad("initial_fraction must lie in (0, 1)");
        }
        if !(self.bound_expansion >= T::zero()) {
            return bad("bound_expansion must be nonnegative");
        }
        if !(self.subregion_fraction > T::zero()) {
            return bad("subregion_fraction must be positive");
        }
        if self.budget < 10 {
            return bad("budget must be at least 10");
        }
        if self.rounds == 0 || self.oversample == 0 || self.proposal_attempts == 0 {
            return bad("rounds, oversample and proposal_attempts must be positive");
        }
        Ok(())
    }

    pub fn initial_count(&self) -> usize {
        let n = (self.initial_fraction * T::from_usize_lossy(self.budget)).round().as_f64() as usize;
        n.clamp(1, self.budget)
    }
}

fn check_bounds<T: Real>(lo: &DVector<T>, hi: &DVector<T>) -> Result<(), SamplingError> {
    if lo.len() != hi.len() {
        return Err(SamplingError::InvalidBounds(lo.len().min(hi.len())));
    }
    for i in 0..lo.len() {
        if !(lo[i] <= hi[i]) || !lo[i].is_finite_value() || !hi[i].is_finite_value() {
            return Err(SamplingError::InvalidBounds(i));
        }
    }
    Ok(())
}

/// Latin hypercube design: each column places exactly one point in each of
/// `n` equal-width strata. Rows are samples.
pub fn lhs<T: Real>(lo: &DVector<T>, hi: &DVector<T>, n: usize, seed: u64) -> Result<DMatrix<T>, SamplingError> {
    lhs_with_rng(lo, hi, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn lhs_with_rng<T: Real, R: Rng>(
    lo: &DVector<T>,
    hi: &DVector<T>,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<T>, SamplingError> {
    if n == 0 {
        return Err(SamplingError::EmptySample);
    }
    check_bounds(lo, hi)?;
    let mut x = DMatrix::zeros(n, lo.len());
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..lo.len() {
        strata.shuffle(rng);
        let width = (hi[j] - lo[j]) / T::from_usize_lossy(n);
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.gen();
            x[(i, j)] = lo[j] + width * (T::from_usize_lossy(s) + T::lit(u));
        }
    }
    Ok(x)
}

pub fn expand_bounds<T: Real>(lo: &DVector<T>, hi: &DVector<T>, frac: T) -> (DVector<T>, DVector<T>) {
    let span = (hi - lo) * frac;
    (lo - &span, hi + &span)
}

/// Box of width `frac · (hi − lo)` centred at `center`, clipped to the bounds.
pub fn subregion<T: Real>(center: &DVector<T>, lo: &DVector<T>, hi: &DVector<T>, frac: T) -> (DVector<T>, DVector<T>) {
    let half = (hi - lo) * (frac / T::lit(2.0));
    let a = (center - &half).zip_map(lo, |v, l| v.max(l));
    let b = (center + &half).zip_map(hi, |v, h| v.min(h));
    (a, b)
}

/// A row is feasible when every white-box inequality and output bound holds.
pub fn label_feasibility<T: Real>(spec: &ProblemSpec<T>, x: &DMatrix<T>, y: &DMatrix<T>) -> Vec<bool> {
    (0..x.nrows())
        .map(|i| {
            let yi = y.row(i).transpose();
            yi.iter().all(|v| v.is_finite_value()) && spec.is_feasible(&x.row(i).transpose(), &yi, T::zero())
        })
        .collect()
}

fn evaluate_rows<T: Real>(spec: &ProblemSpec<T>, x: &DMatrix<T>, provenance: Provenance, data: &mut Dataset<T>) {
    for row in x.row_iter() {
        let xi = row.transpose();
        let (y, valid) = match spec.evaluate(xi.as_slice()) {
            Ok(y) if y.iter().all(|v| v.is_finite_value()) => (y, true),
            _ => (DVector::from_element(spec.n_outputs, T::lit(f64::NAN)), false),
        };
        let feasible = valid && spec.is_feasible(&xi, &y, T::zero());
        data.push(&xi, &y, feasible, valid, provenance);
    }
}

/// Plain LHS over the problem bounds.
pub fn lhs_sample<T: Real>(spec: &ProblemSpec<T>, budget: usize, seed: u64) -> Result<Dataset<T>, SamplingError> {
    let x = lhs(&spec.bounds_lo, &spec.bounds_hi, budget, seed)?;
    let mut data = Dataset::new(spec.dim_independent(), spec.n_outputs);
    evaluate_rows(spec, &x, Provenance::Initial, &mut data);
    Ok(data)
}

fn classifier_for<T: Real>(data: &Dataset<T>, params: &SvmParams<T>) -> Option<SvmModel<T>> {
    let labels: Vec<i8> = data.feasible.iter().map(|&f| if f { 1 } else { -1 }).collect();
    let model = train_svm(&data.x, &labels, params).ok()?;
    conservative_retrain(&model, &data.x, &labels, params).ok()
}

/// Index of the feasible row with the smallest objective.
pub fn best_feasible<T: Real>(data: &Dataset<T>, objective: usize) -> Option<usize> {
    (0..data.len())
        .filter(|&i| data.feasible[i] && data.valid[i])
        .min_by(|&a, &b| {
            data.y[(a, objective)]
                .partial_cmp(&data.y[(b, objective)])
                .unwrap_or(std::cmp::Ordering::Equal)
        })
}

/// Adaptive two-stage sampling. Returns the dataset and the last
/// classifier (none for unconstrained problems or single-class data).
pub fn adaptive_sample<T: Real>(
    spec: &ProblemSpec<T>,
    cfg: &SamplingConfig<T>,
    svm_params: &SvmParams<T>,
) -> Result<(Dataset<T>, Option<SvmModel<T>>), SamplingError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let (lo, hi) = expand_bounds(&spec.bounds_lo, &spec.bounds_hi, cfg.bound_expansion);
    let mut data = Dataset::new(spec.dim_independent(), spec.n_outputs);

    let n0 = cfg.initial_count();
    let x0 = lhs_with_rng(&lo, &hi, n0, &mut rng)?;
    evaluate_rows(spec, &x0, Provenance::Initial, &mut data);

    let constrained = spec.has_constraints();
    let mut classifier = if constrained { classifier_for(&data, svm_params) } else { None };

    let mut remaining = cfg.budget - n0;
    for round in 0..cfg.rounds {
        if remaining == 0 {
            break;
        }
        let quota = remaining / (cfg.rounds - round);
        let quota = quota.max(1).min(remaining);
        let Some(best) = best_feasible(&data, spec.objective_output) else {
            data.global_fallback = true;
            let x = lhs_with_rng(&lo, &hi, remaining, &mut rng)?;
            evaluate_rows(spec, &x, Provenance::Subregion, &mut data);
            break;
        };
        let center = data.x.row(best).transpose();
        let (slo, shi) = subregion(&center, &lo, &hi, cfg.subregion_fraction);
        let x = propose(&slo, &shi, quota, classifier.as_ref(), cfg, &mut rng)?;
        evaluate_rows(spec, &x, Provenance::Subregion, &mut data);
        remaining -= quota;
        if constrained {
            classifier = classifier_for(&data, svm_params);
        }
    }
    Ok((data, classifier))
}

/// `quota` candidates from the box. With a classifier, predicted-feasible
/// candidates are kept in design order; a shortfall after every attempt is
/// filled with the rejected candidates of highest decision value.
fn propose<T: Real>(
    lo: &DVector<T>,
    hi: &DVector<T>,
    quota: usize,
    classifier: Option<&SvmModel<T>>,
    cfg: &SamplingConfig<T>,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<T>, SamplingError> {
    let Some(svm) = classifier else {
        return lhs_with_rng(lo, hi, quota, rng);
    };
    let dim = lo.len();
    let mut kept: Vec<DVector<T>> = Vec::with_capacity(quota);
    let mut rejected: Vec<(T, DVector<T>)> = Vec::new();
    for _ in 0..cfg.proposal_attempts {
        let cand = lhs_with_rng(lo, hi, quota * cfg.oversample, rng)?;
        for row in cand.row_iter() {
            if kept.len() == quota {
                break;
            }
            let x = row.transpose();
            let (label, d) = svm.predict(x.as_slice());
            if label == 1 {
                kept.push(x);
            } else {
                rejected.push((d, x));
            }
        }
        if kept.len() == quota {
            break;
        }
    }
    if kept.len() < quota {
        rejected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        kept.extend(rejected.into_iter().take(quota - kept.len()).map(|(_, x)| x));
    }
    Ok(DMatrix::from_fn(kept.len(), dim, |i, j| kept[i][j]))
}
