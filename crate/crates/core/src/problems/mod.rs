//! Registry of black-box problem instances.
//!
//! Every problem is exposed through [`BlackBox`]: a pure map from the
//! independent variables to a vector of outputs. The first output is always
//! the objective to minimize. Constraints that do not need the black box
//! (white-box inequalities) and bounds on outputs live in [`ProblemSpec`].

pub mod benchmarks;
pub mod williams_otto;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::DVector;

use crate::Real;
pub use benchmarks::Benchmark;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProblemError {
    #[error("unknown problem id `{0}`")]
    UnknownProblem(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("black-box evaluation failed: {0}")]
    EvaluationFailed(String),
}

/// Evaluate-only interface to an expensive or opaque model.
pub trait BlackBox<T: Real>: Send + Sync {
    fn dim(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn evaluate(&self, x: &[T]) -> Result<DVector<T>, ProblemError>;
}

/// White-box inequality `a · x_I + c · x_D + b <= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineInequality<T: Real> {
    pub independent: DVector<T>,
    pub dependent: DVector<T>,
    pub constant: T,
}

impl<T: Real> AffineInequality<T> {
    pub fn value(&self, x: &DVector<T>, y: &DVector<T>) -> T {
        self.independent.dot(x) + self.dependent.dot(y) + self.constant
    }

    /// Whether the constraint can be evaluated without the black box.
    pub fn is_independent_only(&self) -> bool {
        self.dependent.iter().all(|c| *c == T::zero())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnownOptimum<T: Real> {
    /// All catalogued global minimizers.
    pub points: Vec<DVector<T>>,
    pub value: T,
}

impl<T: Real> KnownOptimum<T> {
    /// Euclidean distance from `x` to the nearest catalogued minimizer.
    pub fn distance(&self, x: &DVector<T>) -> T {
        self.points
            .iter()
            .map(|p| (x - p).norm())
            .fold(T::max_value().unwrap_or_else(T::one), |a, b| a.min(b))
    }
}

/// A black-box optimization instance.
#[derive(Clone)]
pub struct ProblemSpec<T: Real> {
    pub id: String,
    pub bounds_lo: DVector<T>,
    pub bounds_hi: DVector<T>,
    pub n_outputs: usize,
    /// Index of the output minimized by the optimizer.
    pub objective_output: usize,
    pub white_box_ineq: Vec<AffineInequality<T>>,
    /// Optional `(lo, hi)` per output.
    pub output_bounds: Vec<Option<(T, T)>>,
    pub known_optimum: Option<KnownOptimum<T>>,
    pub black_box: Arc<dyn BlackBox<T>>,
}

impl<T: Real> fmt::Debug for ProblemSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("id", &self.id)
            .field("bounds_lo", &self.bounds_lo.as_slice())
            .field("bounds_hi", &self.bounds_hi.as_slice())
            .field("n_outputs", &self.n_outputs)
            .field("white_box_ineq", &self.white_box_ineq.len())
            .field("output_bounds", &self.output_bounds)
            .finish()
    }
}

impl<T: Real> ProblemSpec<T> {
    pub fn dim_independent(&self) -> usize {
        self.bounds_lo.len()
    }

    pub fn has_constraints(&self) -> bool {
        !self.white_box_ineq.is_empty() || self.output_bounds.iter().any(Option::is_some)
    }

    pub fn evaluate(&self, x: &[T]) -> Result<DVector<T>, ProblemError> {
        if x.len() != self.dim_independent() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.dim_independent(),
                actual: x.len(),
            });
        }
        self.black_box.evaluate(x)
    }

    /// Whether `(x, y)` satisfies every white-box inequality and output bound
    /// to within `tol`.
    pub fn is_feasible(&self, x: &DVector<T>, y: &DVector<T>, tol: T) -> bool {
        self.white_box_ineq.iter().all(|g| g.value(x, y) <= tol)
            && self
                .output_bounds
                .iter()
                .zip(y.iter())
                .all(|(b, &v)| match b {
                    Some((lo, hi)) => v >= *lo - tol && v <= *hi + tol,
                    None => true,
                })
    }

    pub fn contains(&self, x: &DVector<T>) -> bool {
        x.iter()
            .zip(self.bounds_lo.iter().zip(self.bounds_hi.iter()))
            .all(|(v, (lo, hi))| v >= lo && v <= hi)
    }
}

struct BenchmarkBox(Benchmark);

impl<T: Real> BlackBox<T> for BenchmarkBox {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn n_outputs(&self) -> usize {
        1
    }

    fn evaluate(&self, x: &[T]) -> Result<DVector<T>, ProblemError> {
        Ok(DVector::from_element(1, self.0.evaluate(x)))
    }
}

/// Williams-Otto black box: `x = [V, T, eta, F_A, F_B]`, `y = [-ROI, F_P]`.
pub struct WilliamsOttoBox;

impl<T: Real> BlackBox<T> for WilliamsOttoBox {
    fn dim(&self) -> usize {
        5
    }

    fn n_outputs(&self) -> usize {
        2
    }

    fn evaluate(&self, x: &[T]) -> Result<DVector<T>, ProblemError> {
        let state = williams_otto::simulate(williams_otto::WoInputs::from_slice(x))
            .map_err(|e| ProblemError::EvaluationFailed(e.to_string()))?;
        Ok(DVector::from_vec(vec![-state.roi, state.product]))
    }
}

/// Wraps a black box and counts every call.
pub struct CountingBlackBox<T: Real> {
    inner: Arc<dyn BlackBox<T>>,
    count: AtomicUsize,
}

impl<T: Real> CountingBlackBox<T> {
    pub fn new(inner: Arc<dyn BlackBox<T>>) -> Self {
        Self {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }
}

impl<T: Real> BlackBox<T> for CountingBlackBox<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn n_outputs(&self) -> usize {
        self.inner.n_outputs()
    }

    fn evaluate(&self, x: &[T]) -> Result<DVector<T>, ProblemError> {
        self.count.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate(x)
    }
}

/// Registered problem ids.
pub const PROBLEM_IDS: [&str; 12] = [
    "sphere10",
    "quadratic10",
    "camel",
    "schaffer2",
    "griewank5",
    "ackley5",
    "hartmann3",
    "powell4",
    "rosenbrock4",
    "trid6",
    "camel_constrained",
    "wo",
];

pub fn benchmark_by_id(id: &str) -> Option<Benchmark> {
    Some(match id {
        "sphere10" => Benchmark::Sphere,
        "quadratic10" => Benchmark::Quadratic,
        "camel" | "camel_constrained" => Benchmark::SixHumpCamel,
        "schaffer2" => Benchmark::SchafferN2,
        "griewank5" => Benchmark::Griewank,
        "ackley5" => Benchmark::Ackley,
        "hartmann3" => Benchmark::Hartmann3,
        "powell4" => Benchmark::Powell,
        "rosenbrock4" => Benchmark::Rosenbrock,
        "trid6" => Benchmark::Trid,
        _ => return None,
    })
}

fn to_vec<T: Real>(v: &[f64]) -> DVector<T> {
    DVector::from_iterator(v.len(), v.iter().map(|&e| T::lit(e)))
}

/// Looks up a registered problem.
pub fn problem_spec<T: Real>(id: &str) -> Result<ProblemSpec<T>, ProblemError> {
    if id == "wo" {
        return Ok(ProblemSpec {
            id: id.to_string(),
            bounds_lo: to_vec(&williams_otto::LOWER),
            bounds_hi: to_vec(&williams_otto::UPPER),
            n_outputs: 2,
            objective_output: 0,
            white_box_ineq: Vec::new(),
            output_bounds: vec![None, Some((T::zero(), T::lit(williams_otto::PRODUCT_FLOW_MAX)))],
            known_optimum: None,
            black_box: Arc::new(WilliamsOttoBox),
        });
    }
    let bench = benchmark_by_id(id).ok_or_else(|| ProblemError::UnknownProblem(id.to_string()))?;
    let d = bench.dim();
    let (lo, hi) = if id == "camel_constrained" {
        (-1.0, 1.0)
    } else {
        bench.domain()
    };
    let mut white_box_ineq = Vec::new();
    let mut points: Vec<DVector<T>> = bench.minimizers().iter().map(|p| to_vec(p)).collect();
    if id == "camel_constrained" {
        // x2 - x1 <= 0
        let g = AffineInequality {
            independent: to_vec(&[-1.0, 1.0]),
            dependent: DVector::zeros(1),
            constant: T::zero(),
        };
        let y0 = DVector::zeros(1);
        points.retain(|p| g.value(p, &y0) <= T::zero());
        white_box_ineq.push(g);
    }
    Ok(ProblemSpec {
        id: id.to_string(),
        bounds_lo: DVector::from_element(d, T::lit(lo)),
        bounds_hi: DVector::from_element(d, T::lit(hi)),
        n_outputs: 1,
        objective_output: 0,
        white_box_ineq,
        output_bounds: vec![None],
        known_optimum: Some(KnownOptimum {
            points,
            value: T::lit(bench.min_value()),
        }),
        black_box: Arc::new(BenchmarkBox(bench)),
    })
}

/// Evaluates a registered analytic benchmark.
pub fn evaluate_benchmark<T: Real>(id: &str, x: &[T]) -> Result<T, ProblemError> {
    let bench = benchmark_by_id(id).ok_or_else(|| ProblemError::UnknownProblem(id.to_string()))?;
    if x.len() != bench.dim() {
        return Err(ProblemError::DimensionMismatch {
            expected: bench.dim(),
            actual: x.len(),
        });
    }
    Ok(bench.evaluate(x))
}

/// Catalogued `(x*, f*)`; the first minimizer when there are several.
pub fn benchmark_optimum<T: Real>(id: &str) -> Option<(DVector<T>, T)> {
    let spec = problem_spec::<T>(id).ok()?;
    let opt = spec.known_optimum?;
    Some((opt.points.first()?.clone(), opt.value))
}
