//! Dense strictly convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize    ½ dᵀ B d + gᵀ d
//!     subject to  A_eq d + b_eq  = 0
//!                 A_in d + b_in <= 0
//! ```
//!
//! with a dual active-set method (Goldfarb-Idnani). The iteration starts from
//! the unconstrained minimizer and adds violated constraints one at a time
//! while keeping the multipliers of the active set dual feasible, so no
//! feasible starting point is needed and infeasibility is detected when a
//! violated constraint can be neither added nor compensated by dropping an
//! active one. Multipliers satisfy
//! `B d + g + A_eqᵀ λ + A_inᵀ μ = 0`, `μ >= 0`.

use nalgebra::{DMatrix, DVector};

use crate::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem<T: Real> {
    pub hessian: DMatrix<T>,
    pub gradient: DVector<T>,
    pub a_eq: DMatrix<T>,
    pub b_eq: DVector<T>,
    pub a_in: DMatrix<T>,
    pub b_in: DVector<T>,
}

impl<T: Real> QpProblem<T> {
    /// Problem without constraints.
    pub fn unconstrained(hessian: DMatrix<T>, gradient: DVector<T>) -> Self {
        let n = gradient.len();
        Self {
            hessian,
            gradient,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<T>, b: DVector<T>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<T>, b: DVector<T>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, d: &DVector<T>) -> T {
        (d.transpose() * &self.hessian * d)[(0, 0)] * T::lit(0.5) + self.gradient.dot(d)
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        let shapes = [
            (self.hessian.nrows(), n),
            (self.hessian.ncols(), n),
            (self.a_eq.ncols(), n),
            (self.a_eq.nrows(), self.b_eq.len()),
            (self.a_in.ncols(), n),
            (self.a_in.nrows(), self.b_in.len()),
        ];
        for (actual, expected) in shapes {
            if actual != expected {
                return Err(QpError::DimensionMismatch { expected, actual });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution<T: Real> {
    pub d: DVector<T>,
    pub lambda: DVector<T>,
    pub mu: DVector<T>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Indices (into the inequality rows) active at the solution.
    pub active_inequalities: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("QP Hessian is not positive definite")]
    NotPositiveDefinite,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpOptions<T> {
    /// Relative violation tolerated before a constraint is considered for
    /// the active set.
    pub feasibility_tol: T,
    /// Relative size of `zᵀn` below which a normal is treated as linearly
    /// dependent on the active set.
    pub dependence_tol: T,
    /// Iteration cap is `iteration_factor · (n + m)`.
    pub iteration_factor: usize,
    /// Print the active set at every iteration to stderr.
    pub verbose: bool,
}

impl<T: Real> Default for QpOptions<T> {
    fn default() -> Self {
        Self {
            feasibility_tol: T::lit(1e-11),
            dependence_tol: T::lit(1e-12),
            iteration_factor: 50,
            verbose: false,
        }
    }
}

pub fn solve_qp<T: Real>(p: &QpProblem<T>) -> Result<QpSolution<T>, QpError> {
    solve_qp_with(p, &QpOptions::default())
}

/// Constraint in the internal `cᵀx >= e` form.
struct Row<T: Real> {
    normal: DVector<T>,
    rhs: T,
}

struct Active<T: Real> {
    /// Index into the combined constraint list (equalities first).
    index: usize,
    /// Orientation applied to equality rows (+1 or -1).
    sign: T,
    multiplier: T,
}

pub fn solve_qp_with<T: Real>(p: &QpProblem<T>, opts: &QpOptions<T>) -> Result<QpSolution<T>, QpError> {
    p.validate()?;
    let n = p.dim();
    let m_eq = p.b_eq.len();
    let m_in = p.b_in.len();
    let chol = p
        .hessian
        .clone()
        .cholesky()
        .ok_or(QpError::NotPositiveDefinite)?;

    // a d + b <= 0  <=>  (-a) d >= b
    let rows: Vec<Row<T>> = (0..m_eq)
        .map(|i| Row {
            normal: -p.a_eq.row(i).transpose(),
            rhs: p.b_eq[i],
        })
        .chain((0..m_in).map(|i| Row {
            normal: -p.a_in.row(i).transpose(),
            rhs: p.b_in[i],
        }))
        .collect();

    let mut x = -chol.solve(&p.gradient);
    let mut active: Vec<Active<T>> = Vec::new();
    let max_iter = opts.iteration_factor * (n + m_eq + m_in).max(1);
    let mut iterations = 0;

    let slack = |x: &DVector<T>, r: &Row<T>| r.normal.dot(x) - r.rhs;
    let scale = |r: &Row<T>, x: &DVector<T>| T::one() + r.rhs.abs() + r.normal.norm() * x.norm();

    // Returns (z, r, zᵀn) for adding `normal` to the current active set.
    let directions = |active: &[Active<T>], normal: &DVector<T>| -> (DVector<T>, DVector<T>, T) {
        let hn = chol.solve(normal);
        let q = active.len();
        if q == 0 {
            let zn = hn.dot(normal);
            return (hn, DVector::zeros(0), zn);
        }
        let mut nmat = DMatrix::zeros(n, q);
        for (j, a) in active.iter().enumerate() {
            nmat.set_column(j, &(&rows[a.index].normal * a.sign));
        }
        let hnmat = chol.solve(&nmat);
        let m = nmat.transpose() * &hnmat;
        let rhs = nmat.transpose() * &hn;
        let r = match m.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => m.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(q)),
        };
        let z = &hn - &hnmat * &r;
        let zn = z.dot(normal);
        (z, r, zn)
    };

    // Equalities first. They never leave the active set.
    for i in 0..m_eq {
        let s = slack(&x, &rows[i]);
        let sign = if s > T::zero() { -T::one() } else { T::one() };
        let normal = &rows[i].normal * sign;
        let s = s * sign;
        let (z, r, zn) = directions(&active, &normal);
        let reference = chol.solve(&normal).dot(&normal);
        if zn <= opts.dependence_tol * reference {
            if -s <= opts.feasibility_tol * scale(&rows[i], &x) {
                continue;
            }
            return Ok(finish(p, x, &active, m_eq, QpStatus::Infeasible, iterations));
        }
        let t = -s / zn;
        x += &z * t;
        for (a, rj) in active.iter_mut().zip(r.iter()) {
            a.multiplier -= t * *rj;
        }
        active.push(Active {
            index: i,
            sign,
            multiplier: t,
        });
        iterations += 1;
    }

    loop {
        // Most violated inequality, lowest index on ties.
        let mut chosen: Option<(usize, T)> = None;
        for i in m_eq..m_eq + m_in {
            if active.iter().any(|a| a.index == i) {
                continue;
            }
            let s = slack(&x, &rows[i]);
            if s < -opts.feasibility_tol * scale(&rows[i], &x) {
                let normalized = s / (T::one() + rows[i].normal.norm());
                if chosen.map_or(true, |(_, best)| normalized < best) {
                    chosen = Some((i, normalized));
                }
            }
        }
        let Some((pidx, _)) = chosen else {
            polish(p, &mut x, &mut active, m_eq, opts);
            return Ok(finish(p, x, &active, m_eq, QpStatus::Optimal, iterations));
        };
        if opts.verbose {
            let set: Vec<usize> = active.iter().map(|a| a.index).collect();
            eprintln!("qp iter {iterations}: active {set:?}, adding {pidx}");
        }
        let normal = rows[pidx].normal.clone();
        let mut u_new = T::zero();

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Ok(finish(p, x, &active, m_eq, QpStatus::MaxIter, iterations));
            }
            let (z, r, zn) = directions(&active, &normal);

            // Partial (dual) step limit over active inequalities.
            let mut t1: Option<(T, usize)> = None;
            for (j, (a, rj)) in active.iter().zip(r.iter()).enumerate() {
                if a.index < m_eq || *rj <= T::zero() {
                    continue;
                }
                let ratio = a.multiplier / *rj;
                let better = match t1 {
                    None => true,
                    Some((t, k)) => ratio < t || (ratio == t && a.index < active[k].index),
                };
                if better {
                    t1 = Some((ratio, j));
                }
            }

            let reference = chol.solve(&normal).dot(&normal);
            if zn <= opts.dependence_tol * reference {
                // Normal lies in the span of the active set: pure dual step.
                let Some((t, k)) = t1 else {
                    return Ok(finish(p, x, &active, m_eq, QpStatus::Infeasible, iterations));
                };
                for (a, rj) in active.iter_mut().zip(r.iter()) {
                    a.multiplier -= t * *rj;
                }
                u_new += t;
                active.remove(k);
                continue;
            }

            let t2 = -slack(&x, &rows[pidx]) / zn;
            let full = t1.map_or(true, |(t, _)| t2 <= t);
            let t = if full { t2 } else { t1.unwrap().0 };
            x += &z * t;
            for (a, rj) in active.iter_mut().zip(r.iter()) {
                a.multiplier -= t * *rj;
            }
            u_new += t;
            if full {
                active.push(Active {
                    index: pidx,
                    sign: T::one(),
                    multiplier: u_new,
                });
                break;
            }
            active.remove(t1.unwrap().1);
        }
    }
}

/// Re-solves the KKT system of the final working set with a pivoted LU and
/// one round of iterative refinement. The dual updates lose accuracy when
/// `B` is badly conditioned; the refined point replaces the iterate only if
/// it stays primal and dual feasible and lowers the stationarity residual.
fn polish<T: Real>(p: &QpProblem<T>, x: &mut DVector<T>, active: &mut [Active<T>], m_eq: usize, opts: &QpOptions<T>) {
    let n = p.dim();
    let q = active.len();
    let row = |i: usize| {
        if i < m_eq {
            (p.a_eq.row(i).transpose(), p.b_eq[i])
        } else {
            (p.a_in.row(i - m_eq).transpose(), p.b_in[i - m_eq])
        }
    };
    let mut k = DMatrix::zeros(n + q, n + q);
    k.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
    let mut rhs = DVector::zeros(n + q);
    rhs.rows_mut(0, n).copy_from(&(-&p.gradient));
    for (j, a) in active.iter().enumerate() {
        let (ai, bi) = row(a.index);
        k.view_mut((0, n + j), (n, 1)).copy_from(&ai);
        k.view_mut((n + j, 0), (1, n)).copy_from(&ai.transpose());
        rhs[n + j] = -bi;
    }
    let lu = k.clone().full_piv_lu();
    let Some(mut sol) = lu.solve(&rhs) else { return };
    if let Some(corr) = lu.solve(&(&rhs - &k * &sol)) {
        sol += corr;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return;
    }
    let d = sol.rows(0, n).into_owned();
    let y: Vec<T> = (0..q).map(|j| sol[n + j]).collect();

    let ymax = y.iter().fold(T::one(), |m, v| m.max(v.abs()));
    for (a, &yj) in active.iter().zip(&y) {
        if a.index >= m_eq && yj < -opts.feasibility_tol * ymax {
            return;
        }
    }
    for i in m_eq..m_eq + p.b_in.len() {
        if active.iter().any(|a| a.index == i) {
            continue;
        }
        let (ai, bi) = row(i);
        let v = ai.dot(&d) + bi;
        if v > opts.feasibility_tol * (T::one() + bi.abs() + ai.norm() * d.norm()) {
            return;
        }
    }
    let stationarity = |d: &DVector<T>, y: &dyn Fn(usize) -> T| {
        let mut r = &p.hessian * d + &p.gradient;
        for (j, a) in active.iter().enumerate() {
            r += row(a.index).0 * y(j);
        }
        crate::linalg::max_abs(&r)
    };
    let before = stationarity(x, &|j| active[j].multiplier * active[j].sign);
    let clamp = |j: usize| if active[j].index < m_eq { y[j] } else { y[j].max(T::zero()) };
    let after = stationarity(&d, &clamp);
    if after > before {
        return;
    }
    let clamped: Vec<T> = (0..q).map(clamp).collect();
    for (a, yj) in active.iter_mut().zip(clamped) {
        a.multiplier = yj * a.sign;
    }
    *x = d;
}

fn finish<T: Real>(
    p: &QpProblem<T>,
    d: DVector<T>,
    active: &[Active<T>],
    m_eq: usize,
    status: QpStatus,
    iterations: usize,
) -> QpSolution<T> {
    let mut lambda = DVector::zeros(m_eq);
    let mut mu = DVector::zeros(p.b_in.len());
    let mut active_inequalities = Vec::new();
    for a in active {
        if a.index < m_eq {
            lambda[a.index] = a.multiplier * a.sign;
        } else {
            // Clamp round-off below zero.
            mu[a.index - m_eq] = a.multiplier.max(T::zero());
            active_inequalities.push(a.index - m_eq);
        }
    }
    active_inequalities.sort_unstable();
    QpSolution {
        d,
        lambda,
        mu,
        status,
        iterations,
        active_inequalities,
    }
}

/// Residuals of the KKT conditions at a candidate solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals<T> {
    /// `‖B d + g + A_eqᵀ λ + A_inᵀ μ‖∞`
    pub stationarity: T,
    /// `‖A_eq d + b_eq‖∞`
    pub equality: T,
    /// `max(0, max(A_in d + b_in))`
    pub inequality: T,
    /// `max(0, -min μ)`
    pub dual: T,
    /// `max |μ_i (A_in d + b_in)_i|`
    pub complementarity: T,
}

pub fn kkt_residuals<T: Real>(p: &QpProblem<T>, s: &QpSolution<T>) -> KktResiduals<T> {
    let grad = &p.hessian * &s.d + &p.gradient + p.a_eq.transpose() * &s.lambda + p.a_in.transpose() * &s.mu;
    let eq = &p.a_eq * &s.d + &p.b_eq;
    let ineq = &p.a_in * &s.d + &p.b_in;
    let zero = T::zero();
    KktResiduals {
        stationarity: crate::linalg::max_abs(&grad),
        equality: crate::linalg::max_abs(&eq),
        inequality: ineq.iter().fold(zero, |m, &v| m.max(v)),
        dual: s.mu.iter().fold(zero, |m, &v| m.max(-v)),
        complementarity: s
            .mu
            .iter()
            .zip(ineq.iter())
            .fold(zero, |m, (&u, &v)| m.max((u * v).abs())),
    }
}
