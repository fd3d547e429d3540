use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Surrogate, SurrogateError};
use crate::problems::BlackBox;
use crate::Real;

/// Uses a black box directly as the optimizer's model, with central
/// difference derivatives. Each Jacobian costs `2n` evaluations and each
/// Hessian `4n` more.
pub struct FiniteDifferenceModel<T: Real> {
    inner: Arc<dyn BlackBox<T>>,
    /// Relative step; the absolute step is `step · (1 + |x_i|)`.
    pub step: T,
}

impl<T: Real> FiniteDifferenceModel<T> {
    pub fn new(inner: Arc<dyn BlackBox<T>>) -> Self {
        Self {
            inner,
            step: T::machine_eps().powf(T::lit(1.0 / 3.0)),
        }
    }

    fn eval(&self, x: &DVector<T>) -> Result<DVector<T>, SurrogateError> {
        self.inner
            .evaluate(x.as_slice())
            .map_err(|e| SurrogateError::Evaluation(e.to_string()))
    }

    fn h(&self, xi: T) -> T {
        self.step * (T::one() + xi.abs())
    }
}

impl<T: Real> Surrogate<T> for FiniteDifferenceModel<T> {
    fn n_inputs(&self) -> usize {
        self.inner.dim()
    }

    fn n_outputs(&self) -> usize {
        self.inner.n_outputs()
    }

    fn value(&self, x: &DVector<T>) -> Result<DVector<T>, SurrogateError> {
        self.eval(x)
    }

    fn jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>, SurrogateError> {
        let n = x.len();
        let mut j = DMatrix::zeros(self.n_outputs(), n);
        for c in 0..n {
            let h = self.h(x[c]);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let d = (self.eval(&xp)? - self.eval(&xm)?) / (h + h);
            j.set_column(c, &d);
        }
        Ok(j)
    }

    fn hessian(&self, x: &DVector<T>, output: usize) -> Result<DMatrix<T>, SurrogateError> {
        if output >= self.n_outputs() {
            return Err(SurrogateError::OutputIndex {
                index: output,
                n_outputs: self.n_outputs(),
            });
        }
        let n = x.len();
        let mut hess = DMatrix::zeros(n, n);
        for c in 0..n {
            let h = T::machine_eps().powf(T::lit(0.25)) * (T::one() + x[c].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let d = (self.jacobian(&xp)?.row(output) - self.jacobian(&xm)?.row(output)) / (h + h);
            hess.set_column(c, &d.transpose());
        }
        crate::linalg::symmetrize(&mut hess);
        Ok(hess)
    }
}
