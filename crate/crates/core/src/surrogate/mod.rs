//! Multilayer perceptron surrogates with Swish hidden activations.
//!
//! A network maps problem-unit inputs through a per-feature affine scaler,
//! a stack of `W a + b` layers with Swish on every hidden layer and the
//! identity on the output, and finally the inverse output scaler. Value,
//! Jacobian and per-output Hessian are all exact.

mod finite_difference;
mod io;
mod train;

use nalgebra::{DMatrix, DVector};

use crate::scalar::sigmoid;
use crate::Real;

pub use finite_difference::FiniteDifferenceModel;
pub use io::{read_training_log, write_training_log, FORMAT_VERSION};
pub use train::{train_mlp, train_mlp_xy, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SurrogateError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("output index {index} out of range for {n_outputs} outputs")]
    OutputIndex { index: usize, n_outputs: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(String),
    #[error("not enough training rows: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in training data at row {0}")]
    NonFiniteData(usize),
    #[error("model evaluation failed: {0}")]
    Evaluation(String),
}

/// Differentiable model of a black box used by the optimizer.
pub trait Surrogate<T: Real>: Send + Sync {
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn value(&self, x: &DVector<T>) -> Result<DVector<T>, SurrogateError>;
    /// `n_outputs × n_inputs`.
    fn jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>, SurrogateError>;
    fn hessian(&self, x: &DVector<T>, output: usize) -> Result<DMatrix<T>, SurrogateError>;
    /// `Σ_k w_k ∇²s_k`.
    fn hessian_weighted(&self, x: &DVector<T>, weights: &DVector<T>) -> Result<DMatrix<T>, SurrogateError> {
        let n = self.n_inputs();
        let mut h = DMatrix::zeros(n, n);
        for (k, w) in weights.iter().enumerate() {
            if *w != T::zero() {
                h += self.hessian(x, k)? * *w;
            }
        }
        Ok(h)
    }
    /// False when every output is affine in the inputs.
    fn has_curvature(&self) -> bool {
        true
    }
}

pub fn swish<T: Real>(z: T) -> T {
    z * sigmoid(z)
}

pub fn swish_d1<T: Real>(z: T) -> T {
    let s = sigmoid(z);
    s + z * s * (T::one() - s)
}

pub fn swish_d2<T: Real>(z: T) -> T {
    let s = sigmoid(z);
    s * (T::one() - s) * (T::lit(2.0) + z * (T::one() - T::lit(2.0) * s))
}

/// Per-feature affine map `scaled = (v - shift) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler<T: Real> {
    pub shift: DVector<T>,
    pub scale: DVector<T>,
}

impl<T: Real> Scaler<T> {
    pub fn identity(n: usize) -> Self {
        Self {
            shift: DVector::zeros(n),
            scale: DVector::from_element(n, T::one()),
        }
    }

    /// Standardizes each column of `data` (rows are samples). Columns with
    /// zero spread get unit scale; their indices are returned.
    pub fn fit(data: &DMatrix<T>) -> (Self, Vec<usize>) {
        let n = T::from_usize_lossy(data.nrows().max(1));
        let mut shift = DVector::zeros(data.ncols());
        let mut scale = DVector::from_element(data.ncols(), T::one());
        let mut constant = Vec::new();
        for (j, col) in data.column_iter().enumerate() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (*v - mean) * (*v - mean)).fold(T::zero(), |a, b| a + b) / n;
            shift[j] = mean;
            let sd = var.sqrt();
            if sd > T::machine_eps() * (T::one() + mean.abs()) {
                scale[j] = sd;
            } else {
                constant.push(j);
            }
        }
        (Self { shift, scale }, constant)
    }

    pub fn len(&self) -> usize {
        self.shift.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shift.is_empty()
    }

    pub fn scale(&self, v: &DVector<T>) -> DVector<T> {
        (v - &self.shift).component_div(&self.scale)
    }

    pub fn unscale(&self, v: &DVector<T>) -> DVector<T> {
        v.component_mul(&self.scale) + &self.shift
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T: Real> {
    /// `out × in`.
    pub weights: DMatrix<T>,
    pub bias: DVector<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingMeta<T> {
    pub seed: u64,
    /// `(epoch, train_mse, val_mse)` in scaled units.
    pub history: Vec<(usize, T, T)>,
    /// Output columns with zero spread, trained with unit scale.
    pub constant_outputs: Vec<usize>,
}

impl<T> Default for TrainingMeta<T> {
    fn default() -> Self {
        Self {
            seed: 0,
            history: Vec::new(),
            constant_outputs: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSurrogate<T: Real> {
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Layer<T>>,
    pub x_scaler: Scaler<T>,
    pub y_scaler: Scaler<T>,
    pub meta: TrainingMeta<T>,
}

impl<T: Real> MlpSurrogate<T> {
    /// Network with identity scalers. `layers` must chain dimensions.
    pub fn from_layers(layers: Vec<Layer<T>>) -> Self {
        let n_in = layers[0].weights.ncols();
        let n_out = layers.last().map(|l| l.weights.nrows()).unwrap_or(0);
        Self {
            layers,
            x_scaler: Scaler::identity(n_in),
            y_scaler: Scaler::identity(n_out),
            meta: TrainingMeta::default(),
        }
    }

    /// Layer widths `[input, hidden..., output]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].weights.ncols()];
        dims.extend(self.layers.iter().map(|l| l.weights.nrows()));
        dims
    }

    fn check_input(&self, x: &DVector<T>) -> Result<(), SurrogateError> {
        let expected = self.layers[0].weights.ncols();
        if x.len() != expected {
            return Err(SurrogateError::DimensionMismatch {
                expected,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-activations of every hidden layer and the scaled output.
    fn pass(&self, u: &DVector<T>) -> (Vec<DVector<T>>, DVector<T>) {
        let (hidden, last) = self.layers.split_at(self.layers.len() - 1);
        let mut z = Vec::with_capacity(hidden.len());
        let mut a = u.clone();
        for layer in hidden {
            let zl = &layer.weights * &a + &layer.bias;
            a = zl.map(swish);
            z.push(zl);
        }
        let out = &last[0].weights * &a + &last[0].bias;
        (z, out)
    }

    pub fn forward(&self, x: &DVector<T>) -> Result<DVector<T>, SurrogateError> {
        self.check_input(x)?;
        let (_, out) = self.pass(&self.x_scaler.scale(x));
        Ok(self.y_scaler.unscale(&out))
    }

    /// Rows are samples.
    pub fn forward_batch(&self, x: &DMatrix<T>) -> Result<DMatrix<T>, SurrogateError> {
        let n_out = self.y_scaler.len();
        let mut y = DMatrix::zeros(x.nrows(), n_out);
        for (i, row) in x.row_iter().enumerate() {
            let yi = self.forward(&row.transpose())?;
            y.set_row(i, &yi.transpose());
        }
        Ok(y)
    }

    /// Jacobians of the hidden pre-activations with respect to the scaled
    /// input, and the scaled-output Jacobian.
    fn pre_activation_jacobians(&self, z: &[DVector<T>]) -> (Vec<DMatrix<T>>, DMatrix<T>) {
        let n_in = self.layers[0].weights.ncols();
        let mut da = DMatrix::<T>::identity(n_in, n_in);
        let mut dz = Vec::with_capacity(z.len());
        for (layer, zl) in self.layers.iter().zip(z) {
            let j = &layer.weights * &da;
            let mut next = j.clone();
            for (i, zi) in zl.iter().enumerate() {
                let d = swish_d1(*zi);
                next.row_mut(i).scale_mut(d);
            }
            dz.push(j);
            da = next;
        }
        let out = &self.layers.last().unwrap().weights * &da;
        (dz, out)
    }

    pub fn jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>, SurrogateError> {
        self.check_input(x)?;
        let (z, _) = self.pass(&self.x_scaler.scale(x));
        let (_, mut j) = self.pre_activation_jacobians(&z);
        self.unscale_jacobian(&mut j);
        Ok(j)
    }

    fn unscale_jacobian(&self, j: &mut DMatrix<T>) {
        for (r, s) in self.y_scaler.scale.iter().enumerate() {
            j.row_mut(r).scale_mut(*s);
        }
        for (c, s) in self.x_scaler.scale.iter().enumerate() {
            j.column_mut(c).unscale_mut(*s);
        }
    }

    /// Exact Hessian of one output before symmetrization.
    pub fn hessian_raw(&self, x: &DVector<T>, output: usize) -> Result<DMatrix<T>, SurrogateError> {
        let n_out = self.y_scaler.len();
        if output >= n_out {
            return Err(SurrogateError::OutputIndex {
                index: output,
                n_outputs: n_out,
            });
        }
        let mut w = DVector::zeros(n_out);
        w[output] = T::one();
        self.weighted_hessian_raw(x, &w)
    }

    /// Exact `Σ_k w_k ∇²y_k` before symmetrization.
    ///
    /// Every hidden unit contributes `adjoint · φ''(z) · ∇z ∇zᵀ`, where the
    /// adjoint is the derivative of the weighted output with respect to the
    /// unit's activation and `∇z` is the unit's pre-activation gradient.
    pub fn weighted_hessian_raw(&self, x: &DVector<T>, weights: &DVector<T>) -> Result<DMatrix<T>, SurrogateError> {
        self.check_input(x)?;
        let n_out = self.y_scaler.len();
        if weights.len() != n_out {
            return Err(SurrogateError::DimensionMismatch {
                expected: n_out,
                actual: weights.len(),
            });
        }
        let (z, _) = self.pass(&self.x_scaler.scale(x));
        let (dz, _) = self.pre_activation_jacobians(&z);
        let n = x.len();
        let mut h = DMatrix::zeros(n, n);
        let top = weights.component_mul(&self.y_scaler.scale);
        let mut adjoint = self.layers.last().unwrap().weights.transpose() * top;
        for l in (0..z.len()).rev() {
            // Σ_i c_i ∇z_i ∇z_iᵀ = dzᵀ diag(c) dz
            let mut scaled = dz[l].clone();
            for (i, zi) in z[l].iter().enumerate() {
                scaled.row_mut(i).scale_mut(adjoint[i] * swish_d2(*zi));
            }
            h += dz[l].transpose() * scaled;
            let local = adjoint.zip_map(&z[l], |a, zi| a * swish_d1(zi));
            adjoint = self.layers[l].weights.transpose() * local;
        }
        for i in 0..n {
            for j in 0..n {
                h[(i, j)] /= self.x_scaler.scale[i] * self.x_scaler.scale[j];
            }
        }
        Ok(h)
    }

    pub fn hessian(&self, x: &DVector<T>, output: usize) -> Result<DMatrix<T>, SurrogateError> {
        let mut h = self.hessian_raw(x, output)?;
        crate::linalg::symmetrize(&mut h);
        Ok(h)
    }
}

impl<T: Real> Surrogate<T> for MlpSurrogate<T> {
    fn n_inputs(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    fn n_outputs(&self) -> usize {
        self.y_scaler.len()
    }

    fn value(&self, x: &DVector<T>) -> Result<DVector<T>, SurrogateError> {
        self.forward(x)
    }

    fn jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>, SurrogateError> {
        MlpSurrogate::jacobian(self, x)
    }

    fn hessian(&self, x: &DVector<T>, output: usize) -> Result<DMatrix<T>, SurrogateError> {
        MlpSurrogate::hessian(self, x, output)
    }

    fn hessian_weighted(&self, x: &DVector<T>, weights: &DVector<T>) -> Result<DMatrix<T>, SurrogateError> {
        let mut h = self.weighted_hessian_raw(x, weights)?;
        crate::linalg::symmetrize(&mut h);
        Ok(h)
    }

    fn has_curvature(&self) -> bool {
        self.layers.len() > 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng, dims: &[usize]) -> MlpSurrogate<f64> {
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.gen_range(-1.0..1.0)),
                bias: DVector::from_fn(w[1], |_, _| rng.gen_range(-0.5..0.5)),
            })
            .collect();
        let mut m = MlpSurrogate::from_layers(layers);
        let (n_in, n_out) = (dims[0], *dims.last().unwrap());
        m.x_scaler = Scaler {
            shift: DVector::from_fn(n_in, |_, _| rng.gen_range(-1.0..1.0)),
            scale: DVector::from_fn(n_in, |_, _| rng.gen_range(0.5..2.0)),
        };
        m.y_scaler = Scaler {
            shift: DVector::from_fn(n_out, |_, _| rng.gen_range(-1.0..1.0)),
            scale: DVector::from_fn(n_out, |_, _| rng.gen_range(0.5..2.0)),
        };
        m
    }

    fn tiny() -> MlpSurrogate<f64> {
        MlpSurrogate::from_layers(vec![
            Layer {
                weights: DMatrix::from_element(1, 1, 1.0),
                bias: DVector::zeros(1),
            },
            Layer {
                weights: DMatrix::from_element(1, 1, 2.0),
                bias: DVector::from_element(1, 1.0),
            },
        ])
    }

    #[test]
    fn swish_values() {
        assert_eq!(swish(0.0), 0.0);
        assert_eq!(swish_d1(0.0), 0.5);
        assert!((swish(40.0) - 40.0f64).abs() < 1e-12);
        assert!(swish(-800.0f64).is_finite() && swish_d2(-800.0f64).is_finite());
    }

    #[test]
    fn swish_derivatives_match_differences() {
        let h = 1e-5;
        for z in [-3.0, -1.0, 0.5, 2.0f64] {
            let d1 = (swish(z + h) - swish(z - h)) / (2.0 * h);
            let d2 = (swish_d1(z + h) - swish_d1(z - h)) / (2.0 * h);
            assert!((swish_d1(z) - d1).abs() < 1e-6);
            assert!((swish_d2(z) - d2).abs() < 1e-6);
        }
    }

    #[test]
    fn hand_built_network() {
        let m = tiny();
        let x = DVector::from_element(1, 1.0);
        let s1 = 1.0 / (1.0 + (-1.0f64).exp());
        let y = m.forward(&x).unwrap()[0];
        assert!((y - (2.0 * s1 + 1.0)).abs() < 1e-14);
        assert!((y - 2.4621).abs() < 5e-5);
        assert!((m.jacobian(&x).unwrap()[(0, 0)] - 2.0 * swish_d1(1.0)).abs() < 1e-14);
        assert!((m.hessian(&x, 0).unwrap()[(0, 0)] - 2.0 * swish_d2(1.0)).abs() < 1e-14);
    }

    #[test]
    fn dead_network_returns_unscaled_output_bias() {
        let mut m = tiny();
        m.layers[0].weights.fill(0.0);
        m.layers[1].weights.fill(0.0);
        m.y_scaler = Scaler {
            shift: DVector::from_element(1, 3.0),
            scale: DVector::from_element(1, 2.0),
        };
        assert_eq!(m.forward(&DVector::from_element(1, 7.0)).unwrap()[0], 1.0 * 2.0 + 3.0);
    }

    #[test]
    fn linear_network_is_identity_with_zero_hessian() {
        let m = MlpSurrogate::from_layers(vec![Layer {
            weights: DMatrix::<f64>::identity(3, 3),
            bias: DVector::zeros(3),
        }]);
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        assert_eq!(m.forward(&x).unwrap(), x);
        assert_eq!(m.jacobian(&x).unwrap(), DMatrix::identity(3, 3));
        assert_eq!(m.hessian(&x, 1).unwrap(), DMatrix::zeros(3, 3));
        assert!(!m.has_curvature());
    }

    #[test]
    fn dimension_and_output_errors() {
        let m = tiny();
        assert!(matches!(
            m.forward(&DVector::zeros(2)),
            Err(SurrogateError::DimensionMismatch { expected: 1, actual: 2 })
        ));
        assert!(matches!(
            m.hessian(&DVector::zeros(1), 1),
            Err(SurrogateError::OutputIndex { .. })
        ));
    }

    #[test]
    fn scaler_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = DMatrix::from_fn(50, 3, |_, j| rng.gen_range(-100.0..100.0) * (j + 1) as f64);
        let (s, constant) = Scaler::fit(&data);
        assert!(constant.is_empty());
        let v = DVector::from_vec(vec![1.0, -250.0, 3e-3]);
        assert!((s.unscale(&s.scale(&v)) - &v).amax() <= 1e-12 * v.amax());
    }

    #[test]
    fn constant_columns_get_unit_scale() {
        let data = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 5.0 } else { i as f64 });
        let (s, constant) = Scaler::fit(&data);
        assert_eq!(constant, vec![0]);
        assert_eq!(s.scale[0], 1.0);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_net(&mut rng, &[5, 16, 16, 3]);
        let h = 1e-5;
        for _ in 0..20 {
            let x = DVector::from_fn(5, |_, _| rng.gen_range(-2.0..2.0));
            let j = m.jacobian(&x).unwrap();
            for c in 0..5 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let fd = (m.forward(&xp).unwrap() - m.forward(&xm).unwrap()) / (2.0 * h);
                for r in 0..3 {
                    assert!((j[(r, c)] - fd[r]).abs() <= 1e-5 * (1.0 + fd[r].abs()));
                }
            }
        }
    }

    #[test]
    fn hessian_matches_jacobian_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_net(&mut rng, &[4, 8, 1]);
        let h = 1e-4;
        for _ in 0..20 {
            let x = DVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
            let raw = m.hessian_raw(&x, 0).unwrap();
            assert!(crate::linalg::asymmetry(&raw) <= 1e-10);
            for c in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let fd = (m.jacobian(&xp).unwrap() - m.jacobian(&xm).unwrap()) / (2.0 * h);
                for r in 0..4 {
                    assert!((raw[(r, c)] - fd[(0, r)]).abs() <= 1e-4 * (1.0 + fd[(0, r)].abs()));
                }
            }
        }
    }

    /// Forward second-order recursion: the Hessian of each pre-activation is
    /// propagated layer by layer alongside its gradient.
    fn layerwise_hessian(m: &MlpSurrogate<f64>, x: &DVector<f64>, output: usize) -> DMatrix<f64> {
        let n = x.len();
        let mut a = m.x_scaler.scale(x);
        let mut da = DMatrix::<f64>::identity(n, n);
        let mut d2a: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); n];
        for layer in &m.layers[..m.layers.len() - 1] {
            let z = &layer.weights * &a + &layer.bias;
            let dz = &layer.weights * &da;
            let d2z: Vec<DMatrix<f64>> = (0..z.len())
                .map(|i| {
                    let mut acc = DMatrix::zeros(n, n);
                    for (k, h) in d2a.iter().enumerate() {
                        acc += h * layer.weights[(i, k)];
                    }
                    acc
                })
                .collect();
            let mut next = Vec::with_capacity(z.len());
            for i in 0..z.len() {
                let g = dz.row(i).transpose();
                next.push(&g * g.transpose() * swish_d2(z[i]) + &d2z[i] * swish_d1(z[i]));
            }
            let mut da_next = dz.clone();
            for i in 0..z.len() {
                da_next.row_mut(i).scale_mut(swish_d1(z[i]));
            }
            a = z.map(swish);
            da = da_next;
            d2a = next;
        }
        let w = &m.layers.last().unwrap().weights;
        let mut h = DMatrix::zeros(n, n);
        for (k, hk) in d2a.iter().enumerate() {
            h += hk * w[(output, k)];
        }
        let sy = m.y_scaler.scale[output];
        DMatrix::from_fn(n, n, |i, j| h[(i, j)] * sy / (m.x_scaler.scale[i] * m.x_scaler.scale[j]))
    }

    #[test]
    fn adjoint_hessian_matches_layerwise_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_net(&mut rng, &[3, 6, 5, 2]);
        for _ in 0..10 {
            let x = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            for out in 0..2 {
                let a = m.hessian(&x, out).unwrap();
                let b = layerwise_hessian(&m, &x, out);
                assert!((a - b).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn weighted_hessian_is_linear_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_net(&mut rng, &[3, 5, 3]);
        let x = DVector::from_vec(vec![0.2, -0.4, 1.1]);
        let w = DVector::from_vec(vec![0.5, -2.0, 1.5]);
        let mut sum = DMatrix::zeros(3, 3);
        for k in 0..3 {
            sum += m.hessian(&x, k).unwrap() * w[k];
        }
        assert!((Surrogate::hessian_weighted(&m, &x, &w).unwrap() - sum).amax() < 1e-12);
    }

    #[test]
    fn single_precision_tracks_double() {
        let m64 = tiny();
        let m32 = MlpSurrogate::<f32>::from_layers(vec![
            Layer {
                weights: DMatrix::from_element(1, 1, 1.0),
                bias: DVector::zeros(1),
            },
            Layer {
                weights: DMatrix::from_element(1, 1, 2.0),
                bias: DVector::from_element(1, 1.0),
            },
        ]);
        let y64 = m64.forward(&DVector::from_element(1, 0.7)).unwrap()[0];
        let y32 = m32.forward(&DVector::from_element(1, 0.7)).unwrap()[0];
        assert!((y64 - y32 as f64).abs() < 1e-6);
    }
}
