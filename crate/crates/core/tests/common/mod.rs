#![allow(dead_code)]

use mlfp::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimizes a strictly convex QP by solving the equality-constrained
/// problem for every subset of inequalities and keeping the best primal
/// feasible candidate. Returns `None` when no candidate is feasible.
pub fn brute_force_qp(p: &QpProblem<f64>) -> Option<(DVector<f64>, f64)> {
    let n = p.dim();
    let m_eq = p.b_eq.len();
    let m_in = p.b_in.len();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << m_in) {
        let rows: Vec<usize> = (0..m_in).filter(|i| mask & (1 << i) != 0).collect();
        let k = m_eq + rows.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
        rhs.rows_mut(0, n).copy_from(&(-&p.gradient));
        let mut put = |j: usize, a: nalgebra::RowDVector<f64>, b: f64| {
            for c in 0..n {
                kkt[(n + j, c)] = a[c];
                kkt[(c, n + j)] = a[c];
            }
            rhs[n + j] = -b;
        };
        for i in 0..m_eq {
            put(i, p.a_eq.row(i).into_owned(), p.b_eq[i]);
        }
        for (j, &i) in rows.iter().enumerate() {
            put(m_eq + j, p.a_in.row(i).into_owned(), p.b_in[i]);
        }
        let lu = kkt.lu();
        if lu.determinant().abs() < 1e-12 {
            continue;
        }
        let Some(sol) = lu.solve(&rhs) else { continue };
        let d = sol.rows(0, n).into_owned();
        let eq_ok = (&p.a_eq * &d + &p.b_eq).iter().all(|v| v.abs() < 1e-9);
        let in_ok = (&p.a_in * &d + &p.b_in).iter().all(|&v| v < 1e-9);
        if !(eq_ok && in_ok) {
            continue;
        }
        let f = p.objective(&d);
        if best.as_ref().map_or(true, |(_, fb)| f < *fb) {
            best = Some((d, f));
        }
    }
    best
}

/// Random feasible QP with `n` variables, `m_eq` equalities and `m_in`
/// inequalities. Constraints are built around a random point so the
/// feasible set is nonempty.
pub fn random_qp(rng: &mut ChaCha8Rng, n: usize, m_eq: usize, m_in: usize) -> QpProblem<f64> {
    let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let b = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let a_eq = DMatrix::from_fn(m_eq, n, |_, _| rng.gen_range(-1.0..1.0));
    let b_eq = -(&a_eq * &x0);
    let a_in = DMatrix::from_fn(m_in, n, |_, _| rng.gen_range(-1.0..1.0));
    let slack = DVector::from_fn(m_in, |_, _| rng.gen_range(0.0..1.0));
    let b_in = -(&a_in * &x0) - slack;
    QpProblem::unconstrained(b, g)
        .with_equalities(a_eq, b_eq)
        .with_inequalities(a_in, b_in)
}

pub fn random_small_qp(seed: u64) -> QpProblem<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=5);
    let m = rng.gen_range(0..=4);
    let m_eq = if m > 0 && n > 1 { rng.gen_range(0..=m.min(n - 1).min(1)) } else { 0 };
    random_qp(&mut rng, n, m_eq, m - m_eq)
}
