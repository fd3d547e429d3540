//! SQP feasible path optimizer.
//!
//! Dependent variables are eliminated through a surrogate `x_D = s(x_I)`,
//! so the optimizer works over the independent variables only:
//!
//! ```text
//!     minimize    f(x_I, s(x_I))
//!     subject to  h(x_I, s(x_I)) = 0,  g(x_I, s(x_I)) <= 0,  lo <= x_I <= hi
//! ```
//!
//! Each iteration solves a convex QP built from the chain-rule gradients and
//! either the eigenvalue-clipped Lagrangian Hessian or a BFGS approximation,
//! then globalizes the step with an ℓ1 merit Armijo line search.

mod derivatives;
mod merit;

use std::fmt::Write as _;
use std::io::BufRead;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::problems::{AffineInequality, ProblemSpec};
use crate::qp::{solve_qp, QpError, QpProblem, QpStatus};
use crate::surrogate::{Surrogate, SurrogateError};
use crate::Real;

pub use derivatives::{
    bfgs_update, chain_gradient, chain_gradient_with, lagrangian_hessian, modify_hessian, weighted_chain_hessian,
    BfgsUpdate, Outer, OuterHessian, OutputTerm,
};
pub use merit::{
    check_convergence, directional_derivative, infeasibility, line_search, merit, update_penalties, LineSearch,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SqpError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("start point {0:?} lies outside the variable bounds")]
    StartOutOfBounds(Vec<f64>),
    #[error("non-finite derivatives at iteration {iteration}, x = {x:?}")]
    NonFinite { iteration: usize, x: Vec<f64> },
    #[error("invalid SQP configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianMode {
    Exact,
    Bfgs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SqpConfig<T> {
    pub eta: T,
    pub tol: T,
    pub beta: T,
    pub n_max: usize,
    pub delta: T,
    pub max_iterations: usize,
    pub hessian_mode: HessianMode,
    /// Curvature threshold of the BFGS safeguard.
    pub bfgs_eps: T,
    /// Consecutive unaccepted line searches before giving up.
    pub stall_limit: usize,
    /// Evaluate the true black box at every iterate (costs evaluations).
    pub trace_true_objective: bool,
    /// Evaluate the true black box at the returned point.
    pub validate_final: bool,
}

impl<T: Real> Default for SqpConfig<T> {
    fn default() -> Self {
        Self {
            eta: T::lit(0.1),
            tol: T::lit(1e-6),
            beta: T::lit(0.618),
            n_max: 10,
            delta: T::lit(1e-8),
            max_iterations: 200,
            hessian_mode: HessianMode::Exact,
            bfgs_eps: T::lit(1e-6),
            stall_limit: 3,
            trace_true_objective: false,
            validate_final: true,
        }
    }
}

impl<T: Real> SqpConfig<T> {
    pub fn validate(&self) -> Result<(), SqpError> {
        let bad = |m: &str| Err(SqpError::InvalidConfig(m.to_string()));
        if !(self.eta > T::zero() && self.eta < T::lit(0.5)) {
            return bad("eta must lie in (0, 0.5)");
        }
        if !(self.beta > T::zero() && self.beta < T::one()) {
            return bad("beta must lie in (0, 1)");
        }
        if !(self.tol > T::zero()) || !(self.delta > T::zero()) {
            return bad("tol and delta must be positive");
        }
        if self.n_max == 0 || self.max_iterations == 0 || self.stall_limit == 0 {
            return bad("n_max, max_iterations and stall_limit must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SqpStatus {
    ConvergedFeasibleSmallStep,
    ConvergedFeasibleSmallDf,
    MaxIter,
    LineSearchStall,
}

impl SqpStatus {
    pub fn is_converged(self) -> bool {
        matches!(self, SqpStatus::ConvergedFeasibleSmallStep | SqpStatus::ConvergedFeasibleSmallDf)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SqpStatus::ConvergedFeasibleSmallStep => "converged_feasible_small_step",
            SqpStatus::ConvergedFeasibleSmallDf => "converged_feasible_small_df",
            SqpStatus::MaxIter => "max_iter",
            SqpStatus::LineSearchStall => "line_search_stall",
        }
    }
}

/// One SQP iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow<T: Real> {
    pub iter: usize,
    /// Surrogate objective at the new iterate.
    pub f_pred: T,
    pub f_true: Option<T>,
    /// `‖d‖₂` of the QP step.
    pub step_norm: T,
    pub infeasibility: T,
    pub alpha: T,
    pub accepted: bool,
    pub directional_derivative: T,
    pub merit_before: T,
    pub merit_after: T,
    /// Penalties before and after this iteration's update.
    pub rho_prev: DVector<T>,
    pub nu_prev: DVector<T>,
    pub rho: DVector<T>,
    pub nu: DVector<T>,
    pub lambda: DVector<T>,
    pub mu: DVector<T>,
    /// The QP was infeasible and its elastic relaxation was used.
    pub relaxed: bool,
    /// Secant residual `‖B'Δx − ΔL‖∞ / max(1, ‖ΔL‖∞)` when a BFGS update was applied.
    pub secant_residual: Option<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SqpResult<T: Real> {
    pub x: DVector<T>,
    pub y_pred: DVector<T>,
    pub f_pred: T,
    pub f_true: Option<T>,
    pub y_true: Option<DVector<T>>,
    pub status: SqpStatus,
    pub iterations: usize,
    /// True black-box evaluations made by the solver.
    pub evaluations_used: usize,
    pub trace: Vec<TraceRow<T>>,
    pub lambda: DVector<T>,
    pub mu: DVector<T>,
    /// Stationarity residual of a fresh QP at the returned point.
    pub kkt_residual: Option<T>,
    pub diagnostics: Vec<String>,
}

/// The optimization problem seen by the solver: outer functions of
/// `(x_I, x_D)` plus variable bounds.
#[derive(Clone)]
pub struct Formulation<T: Real> {
    pub objective: Arc<dyn Outer<T>>,
    pub equalities: Vec<Arc<dyn Outer<T>>>,
    pub inequalities: Vec<Arc<dyn Outer<T>>>,
    pub bounds_lo: DVector<T>,
    pub bounds_hi: DVector<T>,
}

impl<T: Real> Formulation<T> {
    /// White-box inequalities followed by output bounds written as
    /// `y_k − hi <= 0` and `lo − y_k <= 0`.
    pub fn from_spec(spec: &ProblemSpec<T>) -> Self {
        let mut inequalities: Vec<Arc<dyn Outer<T>>> = spec
            .white_box_ineq
            .iter()
            .map(|g| Arc::new(g.clone()) as Arc<dyn Outer<T>>)
            .collect();
        let n = spec.dim_independent();
        let m = spec.n_outputs;
        for (k, b) in spec.output_bounds.iter().enumerate() {
            let Some((lo, hi)) = b else { continue };
            let row = |sign: T, constant: T| {
                let mut dependent = DVector::zeros(m);
                dependent[k] = sign;
                Arc::new(AffineInequality {
                    independent: DVector::zeros(n),
                    dependent,
                    constant,
                }) as Arc<dyn Outer<T>>
            };
            if hi.is_finite_value() {
                inequalities.push(row(T::one(), -*hi));
            }
            if lo.is_finite_value() {
                inequalities.push(row(-T::one(), *lo));
            }
        }
        Self {
            objective: Arc::new(OutputTerm {
                index: spec.objective_output,
                sign: T::one(),
            }),
            equalities: Vec::new(),
            inequalities,
            bounds_lo: spec.bounds_lo.clone(),
            bounds_hi: spec.bounds_hi.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds_lo.len()
    }

    /// `(1, f), (λ_i, h_i), (μ_j, g_j)`.
    pub fn weighted_terms<'a>(&'a self, lambda: &DVector<T>, mu: &DVector<T>) -> Vec<(T, &'a dyn Outer<T>)> {
        let mut terms: Vec<(T, &dyn Outer<T>)> = vec![(T::one(), self.objective.as_ref())];
        terms.extend(lambda.iter().zip(&self.equalities).map(|(l, h)| (*l, h.as_ref())));
        terms.extend(mu.iter().zip(&self.inequalities).map(|(m, g)| (*m, g.as_ref())));
        terms
    }

    fn values(&self, x: &DVector<T>, y: &DVector<T>) -> (T, DVector<T>, DVector<T>) {
        let f = self.objective.value(x, y);
        let h = DVector::from_iterator(self.equalities.len(), self.equalities.iter().map(|c| c.value(x, y)));
        let g = DVector::from_iterator(self.inequalities.len(), self.inequalities.iter().map(|c| c.value(x, y)));
        (f, h, g)
    }
}

/// Everything the QP needs at one iterate.
struct Point<T: Real> {
    x: DVector<T>,
    y: DVector<T>,
    jac: DMatrix<T>,
    f: T,
    grad_f: DVector<T>,
    h: DVector<T>,
    jh: DMatrix<T>,
    g: DVector<T>,
    jg: DMatrix<T>,
}

impl<T: Real> Point<T> {
    fn new(model: &dyn Surrogate<T>, form: &Formulation<T>, x: DVector<T>) -> Result<Self, SqpError> {
        let y = model.value(&x)?;
        let jac = model.jacobian(&x)?;
        let (f, h, g) = form.values(&x, &y);
        let n = x.len();
        let rows = |cs: &[Arc<dyn Outer<T>>]| {
            let mut m = DMatrix::zeros(cs.len(), n);
            for (i, c) in cs.iter().enumerate() {
                m.set_row(i, &chain_gradient_with(c.as_ref(), &x, &y, &jac).transpose());
            }
            m
        };
        let grad_f = chain_gradient_with(form.objective.as_ref(), &x, &y, &jac);
        let jh = rows(&form.equalities);
        let jg = rows(&form.inequalities);
        Ok(Self {
            x,
            y,
            jac,
            f,
            grad_f,
            h,
            jh,
            g,
            jg,
        })
    }

    fn is_finite(&self) -> bool {
        let fin = |m: &[T]| m.iter().all(|v| v.is_finite_value());
        self.f.is_finite_value()
            && fin(self.y.as_slice())
            && fin(self.jac.as_slice())
            && fin(self.grad_f.as_slice())
            && fin(self.h.as_slice())
            && fin(self.g.as_slice())
            && fin(self.jh.as_slice())
            && fin(self.jg.as_slice())
    }

    fn grad_lagrangian(&self, lambda: &DVector<T>, mu: &DVector<T>) -> DVector<T> {
        &self.grad_f + self.jh.transpose() * lambda + self.jg.transpose() * mu
    }
}

/// Bound rows `d_i − (hi_i − x_i) <= 0` and `(lo_i − x_i) − d_i <= 0`.
fn bound_rows<T: Real>(form: &Formulation<T>, x: &DVector<T>) -> (DMatrix<T>, DVector<T>) {
    let n = x.len();
    let mut rows = Vec::new();
    for i in 0..n {
        if form.bounds_hi[i].is_finite_value() {
            rows.push((i, T::one(), x[i] - form.bounds_hi[i]));
        }
        if form.bounds_lo[i].is_finite_value() {
            rows.push((i, -T::one(), form.bounds_lo[i] - x[i]));
        }
    }
    let mut a = DMatrix::zeros(rows.len(), n);
    let mut b = DVector::zeros(rows.len());
    for (r, (i, s, c)) in rows.into_iter().enumerate() {
        a[(r, i)] = s;
        b[r] = c;
    }
    (a, b)
}

struct Step<T: Real> {
    d: DVector<T>,
    lambda: DVector<T>,
    /// Multipliers of the `g` rows only.
    mu: DVector<T>,
    /// Multipliers of the bound rows.
    mu_bounds: DVector<T>,
    relaxed: bool,
}

fn qp_step<T: Real>(
    form: &Formulation<T>,
    pt: &Point<T>,
    b: &DMatrix<T>,
    penalty: T,
) -> Result<Option<Step<T>>, SqpError> {
    let n = pt.x.len();
    let (ab, bb) = bound_rows(form, &pt.x);
    let m_g = pt.g.len();
    let a_in = stack(&pt.jg, &ab);
    let b_in = concat(&pt.g, &bb);
    let p = QpProblem::unconstrained(b.clone(), pt.grad_f.clone())
        .with_equalities(pt.jh.clone(), pt.h.clone())
        .with_inequalities(a_in, b_in);
    let s = solve_qp(&p)?;
    if s.status == QpStatus::Optimal {
        return Ok(Some(Step {
            d: s.d,
            lambda: s.lambda,
            mu: s.mu.rows(0, m_g).into_owned(),
            mu_bounds: s.mu.rows(m_g, bb.len()).into_owned(),
            relaxed: false,
        }));
    }

    // Elastic relaxation: z = [d, p, q, t] with h-rows  J_h d + h − p + q = 0
    // and g-rows  J_g d + g − t <= 0, slacks nonnegative and penalized.
    let m_h = pt.h.len();
    let ns = 2 * m_h + m_g;
    let nz = n + ns;
    let eps = T::lit(1e-8);
    let mut hz = DMatrix::identity(nz, nz) * eps;
    hz.view_mut((0, 0), (n, n)).copy_from(b);
    let mut gz = DVector::from_element(nz, penalty);
    gz.rows_mut(0, n).copy_from(&pt.grad_f);
    let mut aeq = DMatrix::zeros(m_h, nz);
    aeq.view_mut((0, 0), (m_h, n)).copy_from(&pt.jh);
    for i in 0..m_h {
        aeq[(i, n + i)] = -T::one();
        aeq[(i, n + m_h + i)] = T::one();
    }
    let n_in = m_g + bb.len() + ns;
    let mut ain = DMatrix::zeros(n_in, nz);
    let mut bin = DVector::zeros(n_in);
    ain.view_mut((0, 0), (m_g, n)).copy_from(&pt.jg);
    bin.rows_mut(0, m_g).copy_from(&pt.g);
    for j in 0..m_g {
        ain[(j, n + 2 * m_h + j)] = -T::one();
    }
    ain.view_mut((m_g, 0), (bb.len(), n)).copy_from(&ab);
    bin.rows_mut(m_g, bb.len()).copy_from(&bb);
    for k in 0..ns {
        ain[(m_g + bb.len() + k, n + k)] = -T::one();
    }
    let p = QpProblem::unconstrained(hz, gz)
        .with_equalities(aeq, pt.h.clone())
        .with_inequalities(ain, bin);
    let s = solve_qp(&p)?;
    if s.status != QpStatus::Optimal {
        return Ok(None);
    }
    Ok(Some(Step {
        d: s.d.rows(0, n).into_owned(),
        lambda: s.lambda,
        mu: s.mu.rows(0, m_g).into_owned(),
        mu_bounds: s.mu.rows(m_g, bb.len()).into_owned(),
        relaxed: true,
    }))
}

fn stack<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let mut m = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    m.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    m.view_mut((a.nrows(), 0), (b.nrows(), b.ncols())).copy_from(b);
    m
}

fn concat<T: Real>(a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

fn clip<T: Real>(x: &DVector<T>, form: &Formulation<T>) -> DVector<T> {
    DVector::from_fn(x.len(), |i, _| x[i].max(form.bounds_lo[i]).min(form.bounds_hi[i]))
}

fn to_f64<T: Real>(x: &DVector<T>) -> Vec<f64> {
    x.iter().map(|v| v.as_f64()).collect()
}

/// Runs the optimizer on `form` through `model`. `truth` evaluates the true
/// objective and outputs at a point; it is called per iterate when
/// `trace_true_objective` is set and once at the end when `validate_final`
/// is set.
pub fn solve_formulation<T: Real>(
    form: &Formulation<T>,
    model: &dyn Surrogate<T>,
    x0: &DVector<T>,
    cfg: &SqpConfig<T>,
    mut truth: Option<&mut dyn FnMut(&DVector<T>) -> Option<(T, DVector<T>)>>,
) -> Result<SqpResult<T>, SqpError> {
    cfg.validate()?;
    let n = form.dim();
    if x0.len() != n || model.n_inputs() != n {
        return Err(SqpError::DimensionMismatch {
            expected: n,
            actual: if x0.len() != n { x0.len() } else { model.n_inputs() },
        });
    }
    let slack = T::lit(1e-12);
    if (0..n).any(|i| x0[i] < form.bounds_lo[i] - slack || x0[i] > form.bounds_hi[i] + slack) {
        return Err(SqpError::StartOutOfBounds(to_f64(x0)));
    }

    let mut evaluations = 0;
    let mut pt = Point::new(model, form, clip(x0, form))?;
    if !pt.is_finite() {
        return Err(SqpError::NonFinite {
            iteration: 0,
            x: to_f64(&pt.x),
        });
    }
    let m_h = pt.h.len();
    let m_g = pt.g.len();
    let mut lambda = DVector::zeros(m_h);
    let mut mu = DVector::zeros(m_g);
    let mut rho = DVector::zeros(m_h);
    let mut nu = DVector::zeros(m_g);
    let mut b_bfgs = DMatrix::identity(n, n);
    let mut trace = Vec::new();
    let mut stalls = 0;
    let mut status = SqpStatus::MaxIter;
    let mut diagnostics = Vec::new();
    let mut iterations = 0;

    for k in 1..=cfg.max_iterations {
        iterations = k;
        let b = match cfg.hessian_mode {
            HessianMode::Exact => {
                let terms = form.weighted_terms(&lambda, &mu);
                let h = weighted_chain_hessian(model, &terms, &pt.x, &pt.y, &pt.jac)?;
                if h.iter().any(|v| !v.is_finite_value()) {
                    return Err(SqpError::NonFinite {
                        iteration: k,
                        x: to_f64(&pt.x),
                    });
                }
                modify_hessian(&h, cfg.delta)
            }
            HessianMode::Bfgs => b_bfgs.clone(),
        };
        let penalty = T::lit(10.0) * rho.iter().chain(nu.iter()).fold(T::one(), |a, v| a.max(*v));
        let Some(step) = qp_step(form, &pt, &b, penalty)? else {
            status = SqpStatus::LineSearchStall;
            diagnostics.push(format!(
                "iteration {k}: QP infeasible after elastic relaxation at x = {:?}",
                to_f64(&pt.x)
            ));
            break;
        };
        if step.relaxed {
            diagnostics.push(format!("iteration {k}: QP infeasible, elastic relaxation used"));
        }
        let (rho_prev, nu_prev) = (rho.clone(), nu.clone());
        (rho, nu) = update_penalties(&rho, &nu, &step.lambda, &step.mu);
        let dd = directional_derivative(&pt.grad_f, &step.d, &pt.h, &pt.g, &rho, &nu);
        let phi0 = merit(pt.f, &pt.h, &pt.g, &rho, &nu);
        let ls = line_search(phi0, dd, cfg, |alpha| {
            let xt = clip(&(&pt.x + &step.d * alpha), form);
            let yt = model.value(&xt).ok()?;
            let (f, h, g) = form.values(&xt, &yt);
            Some(merit(f, &h, &g, &rho, &nu))
        });
        let x_new = clip(&(&pt.x + &step.d * ls.alpha), form);
        let new_pt = match Point::new(model, form, x_new) {
            Ok(p) => p,
            Err(SqpError::Surrogate(SurrogateError::Evaluation(e))) => {
                diagnostics.push(format!("iteration {k}: model failed at trial point: {e}"));
                stalls += 1;
                if stalls >= cfg.stall_limit {
                    status = SqpStatus::LineSearchStall;
                    break;
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        if !new_pt.is_finite() {
            return Err(SqpError::NonFinite {
                iteration: k,
                x: to_f64(&new_pt.x),
            });
        }

        let mut secant_residual = None;
        if cfg.hessian_mode == HessianMode::Bfgs {
            let dx = &new_pt.x - &pt.x;
            let gl_new = new_pt.grad_lagrangian(&step.lambda, &step.mu);
            let dl = &gl_new - pt.grad_lagrangian(&step.lambda, &step.mu);
            let upd = bfgs_update(&b_bfgs, &dx, &dl, cfg.bfgs_eps, gl_new.norm());
            if upd.applied {
                secant_residual = Some(crate::linalg::max_abs(&(&upd.matrix * &dx - &dl)) / crate::linalg::max_abs(&dl).max(T::one()));
            }
            b_bfgs = upd.matrix;
        }

        stalls = if ls.accepted { 0 } else { stalls + 1 };
        let infeas = infeasibility(&new_pt.h, &new_pt.g);
        let f_true = if cfg.trace_true_objective {
            truth.as_mut().and_then(|t| {
                evaluations += 1;
                t(&new_pt.x).map(|(f, _)| f)
            })
        } else {
            None
        };
        let step_norm = step.d.norm();
        let merit_after = merit(new_pt.f, &new_pt.h, &new_pt.g, &rho, &nu);
        trace.push(TraceRow {
            iter: k,
            f_pred: new_pt.f,
            f_true,
            step_norm,
            infeasibility: infeas,
            alpha: ls.alpha,
            accepted: ls.accepted,
            directional_derivative: dd,
            merit_before: phi0,
            merit_after,
            rho_prev,
            nu_prev,
            rho: rho.clone(),
            nu: nu.clone(),
            lambda: step.lambda.clone(),
            mu: step.mu.clone(),
            relaxed: step.relaxed,
            secant_residual,
        });
        let converged = check_convergence(infeas, new_pt.f, pt.f, step_norm, cfg);
        pt = new_pt;
        lambda = step.lambda;
        mu = step.mu;
        if let Some(s) = converged {
            status = s;
            break;
        }
        if stalls >= cfg.stall_limit {
            status = SqpStatus::LineSearchStall;
            diagnostics.push(format!("{stalls} consecutive line searches without sufficient decrease"));
            break;
        }
    }

    let kkt_residual = if status.is_converged() {
        let b = match cfg.hessian_mode {
            HessianMode::Exact => {
                let terms = form.weighted_terms(&lambda, &mu);
                modify_hessian(&weighted_chain_hessian(model, &terms, &pt.x, &pt.y, &pt.jac)?, cfg.delta)
            }
            HessianMode::Bfgs => b_bfgs.clone(),
        };
        qp_step(form, &pt, &b, T::one())?.filter(|s| !s.relaxed).map(|s| {
            let (ab, _) = bound_rows(form, &pt.x);
            let r = &pt.grad_f + pt.jh.transpose() * &s.lambda + pt.jg.transpose() * &s.mu + ab.transpose() * &s.mu_bounds;
            crate::linalg::max_abs(&r)
        })
    } else {
        None
    };

    let (f_true, y_true) = match (cfg.validate_final, truth.as_mut()) {
        (true, Some(t)) => {
            evaluations += 1;
            match t(&pt.x) {
                Some((f, y)) => (Some(f), Some(y)),
                None => {
                    diagnostics.push("true model evaluation failed at the returned point".into());
                    (None, None)
                }
            }
        }
        _ => (None, None),
    };

    Ok(SqpResult {
        x: pt.x,
        y_pred: pt.y,
        f_pred: pt.f,
        f_true,
        y_true,
        status,
        iterations,
        evaluations_used: evaluations,
        trace,
        lambda,
        mu,
        kkt_residual,
        diagnostics,
    })
}

/// Optimizes `spec` through `model`, validating with the spec's black box.
pub fn solve<T: Real>(
    spec: &ProblemSpec<T>,
    model: &dyn Surrogate<T>,
    x0: &DVector<T>,
    cfg: &SqpConfig<T>,
) -> Result<SqpResult<T>, SqpError> {
    if model.n_outputs() != spec.n_outputs {
        return Err(SqpError::DimensionMismatch {
            expected: spec.n_outputs,
            actual: model.n_outputs(),
        });
    }
    let form = Formulation::from_spec(spec);
    let mut truth = |x: &DVector<T>| {
        let y = spec.evaluate(x.as_slice()).ok()?;
        Some((y[spec.objective_output], y))
    };
    solve_formulation(&form, model, x0, cfg, Some(&mut truth))
}

pub const TRACE_HEADER: &str = "iter,f_pred,f_true,step_norm,infeasibility,alpha,accepted";

pub fn trace_to_csv<T: Real>(trace: &[TraceRow<T>]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in trace {
        let f_true = r.f_true.map_or("NaN".to_string(), |v| format!("{v:.16e}"));
        writeln!(
            s,
            "{},{:.16e},{},{:.16e},{:.16e},{:.16e},{}",
            r.iter, r.f_pred, f_true, r.step_norm, r.infeasibility, r.alpha, r.accepted as u8
        )
        .unwrap();
    }
    s
}

/// Columns of a trace CSV: `(iter, f_pred, f_true, step_norm,
/// infeasibility, alpha, accepted)`.
pub type TraceRecord<T> = (usize, T, Option<T>, T, T, T, bool);

pub fn trace_from_csv<T: Real, R: BufRead>(input: R) -> Result<Vec<TraceRecord<T>>, SqpError> {
    let err = |line: usize, m: String| SqpError::Parse { line, message: m };
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| err(i + 1, e.to_string()))?;
        if i == 0 {
            if line.trim() != TRACE_HEADER {
                return Err(err(1, "unexpected trace header".into()));
            }
            continue;
        }
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(err(i + 1, format!("expected 7 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<T>().map_err(|_| err(i + 1, format!("invalid number `{s}`")));
        let f_true = num(f[2])?;
        out.push((
            f[0].parse().map_err(|_| err(i + 1, format!("invalid iteration `{}`", f[0])))?,
            num(f[1])?,
            if f_true.is_finite_value() { Some(f_true) } else { None },
            num(f[3])?,
            num(f[4])?,
            num(f[5])?,
            f[6] == "1",
        ));
    }
    Ok(out)
}
