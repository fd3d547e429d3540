//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::Real;

pub fn max_abs<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |m, &e| m.max(e.abs()))
}

pub fn max_abs_matrix<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, &e| acc.max(e.abs()))
}

/// `‖A − Aᵀ‖∞` elementwise.
pub fn asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    max_abs_matrix(&(m - m.transpose()))
}

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

pub fn l1_norm<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |acc, &e| acc + e.abs())
}

pub fn all_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|e| e.is_finite_value())
}
