use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::SqpError;
use crate::problems::AffineInequality;
use crate::surrogate::Surrogate;
use crate::Real;

/// Analytic function `F(x_I, x_D)` of the independent variables and the
/// surrogate outputs.
pub trait Outer<T: Real>: Send + Sync {
    fn value(&self, x: &DVector<T>, y: &DVector<T>) -> T;
    fn grad_x(&self, x: &DVector<T>, y: &DVector<T>) -> DVector<T>;
    fn grad_y(&self, x: &DVector<T>, y: &DVector<T>) -> DVector<T>;
    /// Second derivatives; `None` means `F` is affine.
    fn hessians(&self, _x: &DVector<T>, _y: &DVector<T>) -> Option<OuterHessian<T>> {
        None
    }
}

/// Blocks of the Hessian of `F` in `(x_I, x_D)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterHessian<T: Real> {
    pub xx: DMatrix<T>,
    /// `∂²F/∂x ∂y`, `n × m`.
    pub xy: DMatrix<T>,
    pub yy: DMatrix<T>,
}

/// `F = sign · y_k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutputTerm<T> {
    pub index: usize,
    pub sign: T,
}

impl<T: Real> Outer<T> for OutputTerm<T> {
    fn value(&self, _x: &DVector<T>, y: &DVector<T>) -> T {
        self.sign * y[self.index]
    }

    fn grad_x(&self, x: &DVector<T>, _y: &DVector<T>) -> DVector<T> {
        DVector::zeros(x.len())
    }

    fn grad_y(&self, _x: &DVector<T>, y: &DVector<T>) -> DVector<T> {
        let mut g = DVector::zeros(y.len());
        g[self.index] = self.sign;
        g
    }
}

impl<T: Real> Outer<T> for AffineInequality<T> {
    fn value(&self, x: &DVector<T>, y: &DVector<T>) -> T {
        AffineInequality::value(self, x, y)
    }

    fn grad_x(&self, _x: &DVector<T>, _y: &DVector<T>) -> DVector<T> {
        self.independent.clone()
    }

    fn grad_y(&self, _x: &DVector<T>, _y: &DVector<T>) -> DVector<T> {
        self.dependent.clone()
    }
}

/// `∂F/∂x_I + Jᵀ ∂F/∂x_D` at `x` through the surrogate Jacobian `jac`.
pub fn chain_gradient_with<T: Real>(outer: &dyn Outer<T>, x: &DVector<T>, y: &DVector<T>, jac: &DMatrix<T>) -> DVector<T> {
    outer.grad_x(x, y) + jac.transpose() * outer.grad_y(x, y)
}

pub fn chain_gradient<T: Real>(
    model: &dyn Surrogate<T>,
    outer: &dyn Outer<T>,
    x: &DVector<T>,
) -> Result<DVector<T>, SqpError> {
    check_dim(model, x)?;
    let y = model.value(x)?;
    let jac = model.jacobian(x)?;
    Ok(chain_gradient_with(outer, x, &y, &jac))
}

fn check_dim<T: Real>(model: &dyn Surrogate<T>, x: &DVector<T>) -> Result<(), SqpError> {
    if x.len() != model.n_inputs() {
        return Err(SqpError::DimensionMismatch {
            expected: model.n_inputs(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// Hessian of `Σ c_i F_i(x, s(x))` over `x_I` by the second-order chain rule.
pub fn weighted_chain_hessian<T: Real>(
    model: &dyn Surrogate<T>,
    terms: &[(T, &dyn Outer<T>)],
    x: &DVector<T>,
    y: &DVector<T>,
    jac: &DMatrix<T>,
) -> Result<DMatrix<T>, SqpError> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut output_weights = DVector::zeros(y.len());
    for (c, f) in terms {
        if *c == T::zero() {
            continue;
        }
        output_weights += f.grad_y(x, y) * *c;
        if let Some(oh) = f.hessians(x, y) {
            let cross = &oh.xy * jac;
            let block = &oh.xx + &cross + cross.transpose() + jac.transpose() * &oh.yy * jac;
            h += block * *c;
        }
    }
    if output_weights.iter().any(|w| *w != T::zero()) {
        h += model.hessian_weighted(x, &output_weights)?;
    }
    crate::linalg::symmetrize(&mut h);
    Ok(h)
}

/// `∇²f + Σ λ_i ∇²h_i + Σ μ_j ∇²g_j` over `x_I`.
pub fn lagrangian_hessian<T: Real>(
    model: &dyn Surrogate<T>,
    problem: &super::Formulation<T>,
    x: &DVector<T>,
    lambda: &DVector<T>,
    mu: &DVector<T>,
) -> Result<DMatrix<T>, SqpError> {
    check_dim(model, x)?;
    let y = model.value(x)?;
    let jac = model.jacobian(x)?;
    let terms = problem.weighted_terms(lambda, mu);
    weighted_chain_hessian(model, &terms, x, &y, &jac)
}

/// Raises every eigenvalue of `h` below `delta` to `delta`. This is the
/// Frobenius-minimal correction making `h` positive definite; `h` is
/// returned unchanged when its spectrum already exceeds `delta`.
pub fn modify_hessian<T: Real>(h: &DMatrix<T>, delta: T) -> DMatrix<T> {
    let mut sym = h.clone();
    crate::linalg::symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&v| v > delta) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(delta));
    let q = &eig.eigenvectors;
    let mut b = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    crate::linalg::symmetrize(&mut b);
    b
}

/// Outcome of a BFGS update.
#[derive(Clone, Debug, PartialEq)]
pub struct BfgsUpdate<T: Real> {
    pub matrix: DMatrix<T>,
    /// Whether the curvature test passed and the update was applied.
    pub applied: bool,
}

/// BFGS update with the curvature safeguard
/// `dLᵀdx > eps · ‖∇L‖ · dxᵀdx`; the matrix is kept when it fails.
pub fn bfgs_update<T: Real>(b: &DMatrix<T>, dx: &DVector<T>, dl: &DVector<T>, eps: T, grad_norm: T) -> BfgsUpdate<T> {
    let curvature = dl.dot(dx);
    let bs = b * dx;
    let sbs = dx.dot(&bs);
    if !(curvature > eps * grad_norm * dx.dot(dx)) || !(sbs > T::zero()) {
        return BfgsUpdate {
            matrix: b.clone(),
            applied: false,
        };
    }
    let mut next = b - &bs * bs.transpose() / sbs + dl * dl.transpose() / curvature;
    crate::linalg::symmetrize(&mut next);
    BfgsUpdate {
        matrix: next,
        applied: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{Layer, MlpSurrogate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn modify_clips_negative_eigenvalues() {
        let h = DMatrix::<f64>::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0]));
        let b = modify_hessian(&h, 1e-8);
        assert!((b[(0, 0)] - 1e-8).abs() < 1e-15 && (b[(1, 1)] - 2.0).abs() < 1e-14);
        assert!(b[(0, 1)].abs() < 1e-15);
        let i = DMatrix::<f64>::identity(3, 3);
        assert_eq!(modify_hessian(&i, 1e-8), i);
    }

    #[test]
    fn modification_is_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a: DMatrix<f64> = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
            let h = (&a + a.transpose()) * 0.5;
            let delta: f64 = 1e-8;
            let b = modify_hessian(&h, delta);
            let eig = SymmetricEigen::new(b.clone());
            assert!(eig.eigenvalues.iter().all(|&v| v >= delta - 1e-12));
            let lam = SymmetricEigen::new(h.clone()).eigenvalues;
            let expected: f64 = lam.iter().map(|&v| (delta - v).max(0.0).powi(2)).sum::<f64>().sqrt();
            assert!(((&b - &h).norm() - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn bfgs_identity_case_and_fallback() {
        let i = DMatrix::<f64>::identity(3, 3);
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let u = bfgs_update(&i, &e1, &e1, 1e-6, 1.0);
        assert!(u.applied);
        assert!((u.matrix - &i).amax() < 1e-15);
        let u = bfgs_update(&i, &e1, &(-&e1), 1e-6, 1.0);
        assert!(!u.applied);
        assert_eq!(u.matrix, i);
    }

    #[test]
    fn bfgs_keeps_positive_definiteness_and_secant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let b = &a * a.transpose() + DMatrix::identity(4, 4) * 0.1;
            let dx = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let m = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let dl = (&m * m.transpose() + DMatrix::identity(4, 4)) * &dx;
            let u = bfgs_update(&b, &dx, &dl, 1e-6, 1.0);
            assert!(u.applied);
            assert!(u.matrix.clone().cholesky().is_some());
            assert!((&u.matrix * &dx - &dl).amax() <= 1e-8 * (1.0 + dl.amax()));
        }
    }

    fn linear_model() -> MlpSurrogate<f64> {
        MlpSurrogate::from_layers(vec![Layer {
            weights: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]),
            bias: DVector::from_vec(vec![0.1, 0.2]),
        }])
    }

    #[test]
    fn chain_gradient_of_output_is_jacobian_row() {
        let m = linear_model();
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let g = chain_gradient(&m, &OutputTerm { index: 1, sign: 1.0 }, &x).unwrap();
        assert_eq!(g, DVector::from_vec(vec![-1.0, 0.5]));
        let ineq = AffineInequality {
            independent: DVector::from_vec(vec![3.0, -4.0]),
            dependent: DVector::zeros(2),
            constant: 1.0,
        };
        assert_eq!(chain_gradient(&m, &ineq, &x).unwrap(), ineq.independent);
    }

    struct Quadratic;

    impl Outer<f64> for Quadratic {
        fn value(&self, x: &DVector<f64>, _y: &DVector<f64>) -> f64 {
            x[0] * x[0] + 3.0 * x[0] * x[1]
        }
        fn grad_x(&self, x: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![2.0 * x[0] + 3.0 * x[1], 3.0 * x[0]])
        }
        fn grad_y(&self, _x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(y.len())
        }
        fn hessians(&self, x: &DVector<f64>, y: &DVector<f64>) -> Option<OuterHessian<f64>> {
            Some(OuterHessian {
                xx: DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 3.0, 0.0]),
                xy: DMatrix::zeros(x.len(), y.len()),
                yy: DMatrix::zeros(y.len(), y.len()),
            })
        }
    }

    #[test]
    fn white_box_quadratic_hessian() {
        let m = linear_model();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let y = m.forward(&x).unwrap();
        let jac = m.jacobian(&x).unwrap();
        let h = weighted_chain_hessian(&m, &[(1.0, &Quadratic as &dyn Outer<f64>)], &x, &y, &jac).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 3.0, 0.0]));
        // Linear surrogate: no curvature from the output term.
        let h = weighted_chain_hessian(&m, &[(1.0, &OutputTerm { index: 0, sign: 1.0 } as &dyn Outer<f64>)], &x, &y, &jac)
            .unwrap();
        assert_eq!(h, DMatrix::zeros(2, 2));
    }
}
