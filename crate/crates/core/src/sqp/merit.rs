use nalgebra::DVector;

use super::{SqpConfig, SqpStatus};
use crate::Real;

fn violation<T: Real>(g: &DVector<T>) -> DVector<T> {
    g.map(|v| v.max(T::zero()))
}

/// `‖h‖₁ + ‖max(0, g)‖₁`.
pub fn infeasibility<T: Real>(h: &DVector<T>, g: &DVector<T>) -> T {
    h.iter().fold(T::zero(), |s, v| s + v.abs()) + violation(g).sum()
}

/// ℓ1 merit `f + ρᵀ|h| + νᵀ max(0, g)`.
pub fn merit<T: Real>(f: T, h: &DVector<T>, g: &DVector<T>, rho: &DVector<T>, nu: &DVector<T>) -> T {
    f + rho.dot(&h.abs()) + nu.dot(&violation(g))
}

/// `ρ = max(|λ|, (ρ_prev + |λ|)/2)` elementwise, and likewise for `ν`.
pub fn update_penalties<T: Real>(
    rho_prev: &DVector<T>,
    nu_prev: &DVector<T>,
    lambda: &DVector<T>,
    mu: &DVector<T>,
) -> (DVector<T>, DVector<T>) {
    let rule = |prev: &DVector<T>, mult: &DVector<T>| {
        prev.zip_map(mult, |p, m| {
            let a = m.abs();
            a.max((p + a) / T::lit(2.0))
        })
    };
    (rule(rho_prev, lambda), rule(nu_prev, mu))
}

/// Directional derivative of the merit function along `d`:
/// `∇fᵀd − ρᵀ|h| − νᵀ max(0, g)`.
pub fn directional_derivative<T: Real>(
    grad_f: &DVector<T>,
    d: &DVector<T>,
    h: &DVector<T>,
    g: &DVector<T>,
    rho: &DVector<T>,
    nu: &DVector<T>,
) -> T {
    grad_f.dot(d) - rho.dot(&h.abs()) - nu.dot(&violation(g))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSearch<T> {
    pub alpha: T,
    pub accepted: bool,
    /// Every step length tried, in order.
    pub trials: Vec<T>,
    /// Merit at the returned step.
    pub merit: T,
}

/// Armijo backtracking over `α = 1, β, β², …` (at most `n_max` trials).
/// Accepts the first `α` with `φ(α) − φ(0) < α η D`; otherwise returns the
/// last trial with `accepted = false`. `merit_at` returns `None` where the
/// model cannot be evaluated, which counts as a rejection.
pub fn line_search<T: Real>(
    phi0: T,
    d: T,
    cfg: &SqpConfig<T>,
    mut merit_at: impl FnMut(T) -> Option<T>,
) -> LineSearch<T> {
    let mut alpha = T::one();
    let mut trials = Vec::with_capacity(cfg.n_max);
    let mut last = T::max_value().unwrap();
    for k in 0..cfg.n_max.max(1) {
        if k > 0 {
            alpha *= cfg.beta;
        }
        trials.push(alpha);
        let phi = merit_at(alpha).filter(|v| v.is_finite_value());
        last = phi.unwrap_or(T::max_value().unwrap());
        if let Some(phi) = phi {
            if phi - phi0 < alpha * cfg.eta * d {
                return LineSearch {
                    alpha,
                    accepted: true,
                    trials,
                    merit: phi,
                };
            }
        }
    }
    LineSearch {
        alpha,
        accepted: false,
        trials,
        merit: last,
    }
}

/// Converged when the point is feasible to `tol` and either the objective
/// change or the QP step is below `tol`.
pub fn check_convergence<T: Real>(infeasibility: T, f_new: T, f_old: T, step_norm: T, cfg: &SqpConfig<T>) -> Option<SqpStatus> {
    if !(infeasibility < cfg.tol) {
        return None;
    }
    if step_norm < cfg.tol {
        Some(SqpStatus::ConvergedFeasibleSmallStep)
    } else if (f_new - f_old).abs() < cfg.tol {
        Some(SqpStatus::ConvergedFeasibleSmallDf)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn merit_formula() {
        let e = v(&[]);
        assert_eq!(merit(1.5, &v(&[0.0]), &v(&[-1.0]), &v(&[5.0]), &v(&[5.0])), 1.5);
        assert_eq!(merit(1.0, &v(&[1.0]), &e, &v(&[2.0]), &e), 3.0);
        assert_eq!(merit(0.0, &e, &v(&[0.5]), &e, &v(&[4.0])), 2.0);
    }

    #[test]
    fn penalty_rule() {
        let e = v(&[]);
        assert_eq!(update_penalties(&v(&[0.0]), &e, &v(&[2.0]), &e).0, v(&[2.0]));
        assert_eq!(update_penalties(&v(&[4.0]), &e, &v(&[2.0]), &e).0, v(&[3.0]));
        assert_eq!(update_penalties(&v(&[6.0]), &e, &v(&[0.0]), &e).0, v(&[3.0]));
        assert_eq!(update_penalties(&e, &v(&[1.0]), &e, &v(&[-3.0])).1, v(&[3.0]));
    }

    #[test]
    fn directional_derivative_cases() {
        let e = v(&[]);
        let gf = v(&[1.0, -2.0]);
        let d = v(&[0.5, 0.5]);
        assert_eq!(directional_derivative(&gf, &d, &e, &v(&[-1.0]), &e, &v(&[3.0])), -0.5);
        assert_eq!(directional_derivative(&gf, &v(&[0.0, 0.0]), &e, &e, &e, &e), 0.0);
        assert_eq!(directional_derivative(&gf, &d, &v(&[-2.0]), &e, &v(&[1.0]), &e), -2.5);
    }

    #[test]
    fn full_step_on_a_quadratic() {
        // φ(α) = (1 - α)², D = -2: φ(1) - φ(0) = -1 < 0.1 · -2.
        let cfg = SqpConfig::default();
        let ls = line_search(1.0, -2.0, &cfg, |a: f64| Some((1.0 - a) * (1.0 - a)));
        assert!(ls.accepted);
        assert_eq!(ls.alpha, 1.0);
        assert_eq!(ls.trials, vec![1.0]);
    }

    #[test]
    fn exhaustion_returns_last_trial() {
        let cfg = SqpConfig::default();
        let ls = line_search(0.0, -1.0, &cfg, |a: f64| Some(a));
        assert!(!ls.accepted);
        assert_eq!(ls.trials.len(), 10);
        assert!((ls.alpha - 0.618f64.powi(9)).abs() < 1e-15);
        for (k, t) in ls.trials.iter().enumerate() {
            assert!((t - 0.618f64.powi(k as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn unevaluable_trials_are_rejected() {
        let cfg = SqpConfig::default();
        let ls = line_search(1.0, -1.0, &cfg, |a: f64| if a > 0.5 { None } else { Some(0.0) });
        assert!(ls.accepted);
        assert!((ls.alpha - 0.618 * 0.618).abs() < 1e-15);
    }

    #[test]
    fn convergence_tests() {
        let cfg = SqpConfig::default();
        assert_eq!(check_convergence(0.0, 1.0, 1.0 + 1e-9, 1.0, &cfg), Some(SqpStatus::ConvergedFeasibleSmallDf));
        assert_eq!(check_convergence(0.1, 1.0, 1.0, 1e-12, &cfg), None);
        assert_eq!(check_convergence(0.0, 1.0, 5.0, 1e-9, &cfg), Some(SqpStatus::ConvergedFeasibleSmallStep));
    }
}
