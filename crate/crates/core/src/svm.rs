//! Soft-margin kernel SVM for feasibility classification.
//!
//! The dual
//!
//! ```text
//!     minimize ½ αᵀQα − Σα,  Q_ij = y_i y_j K(x_i, x_j)
//!     subject to 0 <= α <= C,  yᵀα = 0
//! ```
//!
//! is solved by SMO with second-order working-set selection on a
//! precomputed kernel matrix. Features are standardized inside the model.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::surrogate::Scaler;
use crate::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SvmError {
    #[error("training data has a single class")]
    SingleClass,
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("labels must be +1 or -1 (row {0})")]
    BadLabel(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelChoice<T> {
    /// `γ = None` picks `1 / (dim · var)` of the standardized features.
    Rbf { gamma: Option<T> },
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kernel<T> {
    Rbf { gamma: T },
    Linear,
}

impl<T: Real> Kernel<T> {
    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        match *self {
            Kernel::Linear => a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y),
            Kernel::Rbf { gamma } => {
                let d2 = a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + (*x - *y) * (*x - *y));
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmParams<T> {
    pub c: T,
    pub kernel: KernelChoice<T>,
    /// Maximal KKT violation accepted at termination.
    pub tol: T,
    /// Iteration cap is `max_passes · n`.
    pub max_passes: usize,
}

impl<T: Real> Default for SvmParams<T> {
    fn default() -> Self {
        Self {
            c: T::lit(10.0),
            kernel: KernelChoice::Rbf { gamma: None },
            tol: T::lit(1e-3),
            max_passes: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel<T: Real> {
    pub kernel: Kernel<T>,
    pub scaler: Scaler<T>,
    /// Standardized support vectors, one per row.
    pub support: DMatrix<T>,
    /// `α_i y_i` for each support vector.
    pub dual_coef: DVector<T>,
    pub bias: T,
    pub c: T,
    /// Training-row index of each support vector.
    pub support_indices: Vec<usize>,
    pub iterations: usize,
    /// Final maximal KKT violation.
    pub kkt_violation: T,
    /// Dual objective at the solution.
    pub dual_objective: T,
}

const SV_THRESHOLD: f64 = 1e-8;

fn check_labels<T: Real>(x: &DMatrix<T>, labels: &[i8]) -> Result<(), SvmError> {
    if x.nrows() != labels.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.nrows(),
            actual: labels.len(),
        });
    }
    if x.nrows() < 2 {
        return Err(SvmError::TooFewRows(x.nrows()));
    }
    if let Some(i) = labels.iter().position(|&l| l != 1 && l != -1) {
        return Err(SvmError::BadLabel(i));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(SvmError::SingleClass);
    }
    Ok(())
}

fn standardize<T: Real>(x: &DMatrix<T>, scaler: &Scaler<T>) -> DMatrix<T> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - scaler.shift[j]) / scaler.scale[j])
}

pub fn train_svm<T: Real>(x: &DMatrix<T>, labels: &[i8], params: &SvmParams<T>) -> Result<SvmModel<T>, SvmError> {
    check_labels(x, labels)?;
    let (scaler, _) = Scaler::fit(x);
    let xs = standardize(x, &scaler);
    let kernel = match params.kernel {
        KernelChoice::Linear => Kernel::Linear,
        KernelChoice::Rbf { gamma: Some(g) } => Kernel::Rbf { gamma: g },
        KernelChoice::Rbf { gamma: None } => {
            let n = T::from_usize_lossy(xs.len());
            let mean = xs.sum() / n;
            let var = xs.iter().fold(T::zero(), |s, v| s + (*v - mean) * (*v - mean)) / n;
            let var = if var > T::zero() { var } else { T::one() };
            Kernel::Rbf {
                gamma: T::one() / (T::from_usize_lossy(xs.ncols()) * var),
            }
        }
    };
    let n = xs.nrows();
    let rows: Vec<Vec<T>> = xs.row_iter().map(|r| r.iter().copied().collect()).collect();
    let y: Vec<T> = labels.iter().map(|&l| T::from_f64(l as f64).unwrap()).collect();
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * kernel.eval(&rows[i], &rows[j]));
    let sol = smo(&q, &y, params.c, params.tol, params.max_passes.saturating_mul(n).max(1));

    let support_indices: Vec<usize> = (0..n).filter(|&i| sol.alpha[i] > T::lit(SV_THRESHOLD)).collect();
    let support = DMatrix::from_fn(support_indices.len(), xs.ncols(), |r, c| xs[(support_indices[r], c)]);
    let dual_coef = DVector::from_iterator(support_indices.len(), support_indices.iter().map(|&i| sol.alpha[i] * y[i]));
    Ok(SvmModel {
        kernel,
        scaler,
        support,
        dual_coef,
        bias: -sol.rho,
        c: params.c,
        support_indices,
        iterations: sol.iterations,
        kkt_violation: sol.violation,
        dual_objective: sol.objective,
    })
}

struct SmoSolution<T> {
    alpha: Vec<T>,
    rho: T,
    iterations: usize,
    violation: T,
    objective: T,
}

fn smo<T: Real>(q: &DMatrix<T>, y: &[T], c: T, tol: T, max_iter: usize) -> SmoSolution<T> {
    let n = y.len();
    let zero = T::zero();
    let tau = T::lit(1e-12);
    let mut alpha = vec![zero; n];
    let mut grad = vec![-T::one(); n];
    let pos = |v: T| v > zero;
    let up = |a: &[T], t: usize| if pos(y[t]) { a[t] < c } else { a[t] > zero };
    let low = |a: &[T], t: usize| if pos(y[t]) { a[t] > zero } else { a[t] < c };
    let mut iterations = 0;
    let mut violation;

    loop {
        // i: maximal violator in I_up.
        let mut gmax = -T::max_value().unwrap();
        let mut i = usize::MAX;
        for t in 0..n {
            if up(&alpha, t) && -y[t] * grad[t] >= gmax {
                if -y[t] * grad[t] > gmax || i == usize::MAX {
                    gmax = -y[t] * grad[t];
                    i = t;
                }
            }
        }
        // j: second-order choice within I_low.
        let mut gmin = T::max_value().unwrap();
        let mut j = usize::MAX;
        let mut best = T::max_value().unwrap();
        for t in 0..n {
            if !low(&alpha, t) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let a = q[(i, i)] + q[(t, t)] - T::lit(2.0) * y[i] * y[t] * q[(i, t)];
                let a = if a > zero { a } else { tau };
                let score = -(b * b) / a;
                if score < best {
                    best = score;
                    j = t;
                }
            }
        }
        violation = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || violation < tol || iterations >= max_iter {
            break;
        }
        iterations += 1;

        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let quad = q[(i, i)] + q[(j, j)] - T::lit(2.0) * y[i] * y[j] * q[(i, j)];
        let quad = if quad > zero { quad } else { tau };
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > zero && alpha[j] < zero {
                alpha[j] = zero;
                alpha[i] = diff;
            } else if diff <= zero && alpha[i] < zero {
                alpha[i] = zero;
                alpha[j] = -diff;
            }
            if diff > zero && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = c - diff;
            } else if diff <= zero && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = sum - c;
            } else if sum <= c && alpha[j] < zero {
                alpha[j] = zero;
                alpha[i] = sum;
            }
            if sum > c && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = sum - c;
            } else if sum <= c && alpha[i] < zero {
                alpha[i] = zero;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai_old, alpha[j] - aj_old);
        for t in 0..n {
            grad[t] += q[(t, i)] * di + q[(t, j)] * dj;
        }
    }

    // ρ from free vectors, else midpoint of the feasible interval.
    let mut sum = zero;
    let mut count = 0usize;
    let mut ub = T::max_value().unwrap();
    let mut lb = -T::max_value().unwrap();
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > zero && alpha[t] < c {
            sum += yg;
            count += 1;
        } else if (alpha[t] >= c && pos(y[t])) || (alpha[t] <= zero && !pos(y[t])) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if count > 0 {
        sum / T::from_usize_lossy(count)
    } else {
        (ub + lb) / T::lit(2.0)
    };
    let objective = (0..n).fold(zero, |s, t| s + alpha[t] * (grad[t] - T::one())) / T::lit(2.0);
    SmoSolution {
        alpha,
        rho,
        iterations,
        violation,
        objective,
    }
}

impl<T: Real> SvmModel<T> {
    /// Classifier that accepts every point.
    pub fn accept_all(dim: usize) -> Self {
        Self {
            kernel: Kernel::Linear,
            scaler: Scaler::identity(dim),
            support: DMatrix::zeros(0, dim),
            dual_coef: DVector::zeros(0),
            bias: T::one(),
            c: T::zero(),
            support_indices: Vec::new(),
            iterations: 0,
            kkt_violation: T::zero(),
            dual_objective: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.scaler.len()
    }

    pub fn decision(&self, x: &[T]) -> T {
        let xs: Vec<T> = x
            .iter()
            .zip(self.scaler.shift.iter().zip(self.scaler.scale.iter()))
            .map(|(v, (m, s))| (*v - *m) / *s)
            .collect();
        self.support
            .row_iter()
            .zip(self.dual_coef.iter())
            .fold(self.bias, |acc, (sv, a)| {
                let sv: Vec<T> = sv.iter().copied().collect();
                acc + *a * self.kernel.eval(&sv, &xs)
            })
    }

    /// Label `+1` (feasible) when the decision value is nonnegative.
    pub fn predict(&self, x: &[T]) -> (i8, T) {
        let d = self.decision(x);
        (if d >= T::zero() { 1 } else { -1 }, d)
    }

    pub fn predict_batch(&self, x: &DMatrix<T>) -> Vec<(i8, T)> {
        x.row_iter()
            .map(|r| {
                let v: Vec<T> = r.iter().copied().collect();
                self.predict(&v)
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "mlfp-svm 1").unwrap();
        match self.kernel {
            Kernel::Rbf { gamma } => writeln!(s, "kernel rbf {gamma:.16e}").unwrap(),
            Kernel::Linear => writeln!(s, "kernel linear").unwrap(),
        }
        writeln!(s, "c {:.16e}", self.c).unwrap();
        writeln!(s, "bias {:.16e}", self.bias).unwrap();
        let join = |v: &mut dyn Iterator<Item = T>| v.map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
        writeln!(s, "x_shift {}", join(&mut self.scaler.shift.iter().copied())).unwrap();
        writeln!(s, "x_scale {}", join(&mut self.scaler.scale.iter().copied())).unwrap();
        writeln!(s, "support {} {}", self.support.nrows(), self.support.ncols()).unwrap();
        for (r, row) in self.support.row_iter().enumerate() {
            writeln!(s, "{} {} {}", self.support_indices[r], self.dual_coef[r], join(&mut row.iter().copied()))
                .unwrap();
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self, SvmError> {
        let lines: Vec<&str> = text.lines().collect();
        let err = |line: usize, m: &str| SvmError::Parse {
            line: line + 1,
            message: m.to_string(),
        };
        let get = |i: usize| lines.get(i).map(|l| l.trim()).ok_or_else(|| err(i, "unexpected end of input"));
        let nums = |i: usize, tag: &str| -> Result<Vec<T>, SvmError> {
            let line = get(i)?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(tag) {
                return Err(err(i, &format!("expected `{tag}`")));
            }
            parts.map(|p| p.parse().map_err(|_| err(i, &format!("invalid number `{p}`")))).collect()
        };
        if get(0)? != "mlfp-svm 1" {
            return Err(err(0, "missing or unsupported svm header"));
        }
        let kernel = match get(1)?.split_whitespace().collect::<Vec<_>>()[..] {
            ["kernel", "linear"] => Kernel::Linear,
            ["kernel", "rbf", g] => Kernel::Rbf {
                gamma: g.parse().map_err(|_| err(1, &format!("invalid number `{g}`")))?,
            },
            _ => return Err(err(1, "bad kernel line")),
        };
        let scalar = |i: usize, tag: &str| -> Result<T, SvmError> {
            nums(i, tag)?.first().copied().ok_or_else(|| err(i, "missing value"))
        };
        let c = scalar(2, "c")?;
        let bias = scalar(3, "bias")?;
        let shift = nums(4, "x_shift")?;
        let scale = nums(5, "x_scale")?;
        let header: Vec<usize> = get(6)?
            .strip_prefix("support ")
            .ok_or_else(|| err(6, "expected `support`"))?
            .split_whitespace()
            .map(|p| p.parse().map_err(|_| err(6, "bad support shape")))
            .collect::<Result<_, _>>()?;
        if header.len() != 2 || header[1] != shift.len() || scale.len() != shift.len() {
            return Err(err(6, "inconsistent support shape"));
        }
        let (n_sv, dim) = (header[0], header[1]);
        let mut support = DMatrix::zeros(n_sv, dim);
        let mut coef = DVector::zeros(n_sv);
        let mut indices = Vec::with_capacity(n_sv);
        for r in 0..n_sv {
            let i = 7 + r;
            let parts: Vec<&str> = get(i)?.split_whitespace().collect();
            if parts.len() != dim + 2 {
                return Err(err(i, "wrong number of fields in support row"));
            }
            indices.push(parts[0].parse().map_err(|_| err(i, "bad index"))?);
            coef[r] = parts[1].parse().map_err(|_| err(i, "bad coefficient"))?;
            for c in 0..dim {
                support[(r, c)] = parts[c + 2].parse().map_err(|_| err(i, "bad support value"))?;
            }
        }
        if get(7 + n_sv)? != "end" {
            return Err(err(7 + n_sv, "expected `end`"));
        }
        Ok(Self {
            kernel,
            scaler: Scaler {
                shift: DVector::from_vec(shift),
                scale: DVector::from_vec(scale),
            },
            support,
            dual_coef: coef,
            bias,
            c,
            support_indices: indices,
            iterations: 0,
            kkt_violation: T::zero(),
            dual_objective: T::zero(),
        })
    }
}

/// Relabels every support vector of `model` as feasible and retrains. When
/// that leaves a single class the result accepts everything.
pub fn conservative_retrain<T: Real>(
    model: &SvmModel<T>,
    x: &DMatrix<T>,
    labels: &[i8],
    params: &SvmParams<T>,
) -> Result<SvmModel<T>, SvmError> {
    let mut relabeled = labels.to_vec();
    for &i in &model.support_indices {
        if i < relabeled.len() {
            relabeled[i] = 1;
        }
    }
    match train_svm(x, &relabeled, params) {
        Err(SvmError::SingleClass) => Ok(SvmModel::accept_all(x.ncols())),
        other => other,
    }
}
