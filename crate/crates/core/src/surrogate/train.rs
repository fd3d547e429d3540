use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, MlpSurrogate, Scaler, SurrogateError, TrainingMeta};
use crate::sampling::Dataset;
use crate::scalar::sigmoid;
use crate::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig<T> {
    pub hidden_dims: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: T,
    pub validation_fraction: T,
    pub seed: u64,
    pub early_stop_patience: usize,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            hidden_dims: vec![64, 64],
            epochs: 2000,
            batch_size: 64,
            learning_rate: T::lit(1e-3),
            validation_fraction: T::lit(0.1),
            seed: 0,
            early_stop_patience: 300,
        }
    }
}

impl<T: Real> TrainConfig<T> {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        let bad = |m: &str| Err(SurrogateError::InvalidConfig(m.to_string()));
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return bad("hidden_dims must be nonempty and positive");
        }
        if !(self.learning_rate > T::zero()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(self.validation_fraction >= T::zero() && self.validation_fraction < T::one()) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport<T> {
    /// Mean squared error in scaled output units.
    pub train_mse: T,
    pub val_mse: T,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_val: usize,
}

const MIN_ROWS: usize = 10;

/// Trains on every valid row of `data`.
pub fn train_mlp<T: Real>(
    data: &Dataset<T>,
    cfg: &TrainConfig<T>,
) -> Result<(MlpSurrogate<T>, TrainReport<T>), SurrogateError> {
    let (x, y) = data.valid_xy();
    train_mlp_xy(&x, &y, cfg)
}

/// Trains on `x` (samples × inputs) and `y` (samples × outputs).
pub fn train_mlp_xy<T: Real>(
    x: &DMatrix<T>,
    y: &DMatrix<T>,
    cfg: &TrainConfig<T>,
) -> Result<(MlpSurrogate<T>, TrainReport<T>), SurrogateError> {
    cfg.validate()?;
    if x.nrows() != y.nrows() {
        return Err(SurrogateError::DimensionMismatch {
            expected: x.nrows(),
            actual: y.nrows(),
        });
    }
    if x.nrows() < MIN_ROWS {
        return Err(SurrogateError::InsufficientData {
            needed: MIN_ROWS,
            got: x.nrows(),
        });
    }
    for i in 0..x.nrows() {
        if x.row(i).iter().chain(y.row(i).iter()).any(|v| !v.is_finite_value()) {
            return Err(SurrogateError::NonFiniteData(i));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = (cfg.validation_fraction * T::from_usize_lossy(n)).round().as_f64() as usize;
    let n_val = n_val.min(n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);

    let rows = |idx: &[usize], m: &DMatrix<T>| DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)]);
    let x_train = rows(train_idx, x);
    let y_train = rows(train_idx, y);
    let (x_scaler, _) = Scaler::fit(&x_train);
    let (y_scaler, constant_outputs) = Scaler::fit(&y_train);

    // Columns are samples from here on.
    let to_cols = |m: &DMatrix<T>, s: &Scaler<T>| {
        let mut t = m.transpose();
        for mut c in t.column_iter_mut() {
            let v = s.scale(&c.clone_owned());
            c.copy_from(&v);
        }
        t
    };
    let u_train = to_cols(&x_train, &x_scaler);
    let t_train = to_cols(&y_train, &y_scaler);
    let u_val = to_cols(&rows(val_idx, x), &x_scaler);
    let t_val = to_cols(&rows(val_idx, y), &y_scaler);

    let mut dims = vec![x.ncols()];
    dims.extend(&cfg.hidden_dims);
    dims.push(y.ncols());
    let mut layers: Vec<Layer<T>> = dims
        .windows(2)
        .map(|w| {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            Layer {
                weights: DMatrix::from_fn(w[1], w[0], |_, _| T::lit(rng.gen_range(-limit..limit))),
                bias: DVector::zeros(w[1]),
            }
        })
        .collect();

    let mut adam = Adam::new(&layers, cfg.learning_rate);
    let mut best = layers.clone();
    let mut best_loss = mse(&layers, &u_val, &t_val).unwrap_or(T::max_value().unwrap());
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut train_pos: Vec<usize> = (0..u_train.ncols()).collect();
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        train_pos.shuffle(&mut rng);
        for chunk in train_pos.chunks(cfg.batch_size) {
            let ub = u_train.select_columns(chunk);
            let tb = t_train.select_columns(chunk);
            let grads = gradients(&layers, &ub, &tb);
            adam.step(&mut layers, &grads);
        }
        let train_loss = mse(&layers, &u_train, &t_train).unwrap();
        let val_loss = mse(&layers, &u_val, &t_val).unwrap_or(train_loss);
        history.push((epoch, train_loss, val_loss));
        if !val_loss.is_finite_value() {
            break;
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best = layers.clone();
            best_epoch = epoch;
        } else if epoch - best_epoch >= cfg.early_stop_patience {
            break;
        }
    }

    let report = TrainReport {
        train_mse: mse(&best, &u_train, &t_train).unwrap(),
        val_mse: mse(&best, &u_val, &t_val).unwrap_or(T::zero()),
        epochs_run,
        best_epoch,
        n_train: train_idx.len(),
        n_val,
    };
    let model = MlpSurrogate {
        layers: best,
        x_scaler,
        y_scaler,
        meta: TrainingMeta {
            seed: cfg.seed,
            history,
            constant_outputs,
        },
    };
    Ok((model, report))
}

struct Cache<T: Real> {
    /// Activations, starting with the input.
    a: Vec<DMatrix<T>>,
    /// `φ'` at each hidden pre-activation.
    d1: Vec<DMatrix<T>>,
}

fn forward_cols<T: Real>(layers: &[Layer<T>], u: &DMatrix<T>) -> (DMatrix<T>, Cache<T>) {
    let mut a = vec![u.clone()];
    let mut d1 = Vec::with_capacity(layers.len() - 1);
    for (l, layer) in layers.iter().enumerate() {
        let mut z = &layer.weights * &a[l];
        for mut c in z.column_iter_mut() {
            c += &layer.bias;
        }
        if l + 1 == layers.len() {
            return (z, Cache { a, d1 });
        }
        let mut d = z.clone();
        for (zi, di) in z.iter_mut().zip(d.iter_mut()) {
            let s = sigmoid(*zi);
            let act = *zi * s;
            *di = s + act * (T::one() - s);
            *zi = act;
        }
        d1.push(d);
        a.push(z);
    }
    unreachable!("network has an output layer")
}

fn mse<T: Real>(layers: &[Layer<T>], u: &DMatrix<T>, t: &DMatrix<T>) -> Option<T> {
    if u.ncols() == 0 {
        return None;
    }
    let (out, _) = forward_cols(layers, u);
    Some((out - t).norm_squared() / T::from_usize_lossy(t.len()))
}

fn gradients<T: Real>(layers: &[Layer<T>], u: &DMatrix<T>, t: &DMatrix<T>) -> Vec<Layer<T>> {
    let (out, cache) = forward_cols(layers, u);
    let mut delta = (out - t) * (T::lit(2.0) / T::from_usize_lossy(t.len()));
    let mut grads = Vec::with_capacity(layers.len());
    for l in (0..layers.len()).rev() {
        let gw = &delta * cache.a[l].transpose();
        let gb = delta.column_sum();
        if l > 0 {
            let mut back = layers[l].weights.transpose() * &delta;
            back.component_mul_assign(&cache.d1[l - 1]);
            delta = back;
        }
        grads.push(Layer { weights: gw, bias: gb });
    }
    grads.reverse();
    grads
}

struct Adam<T: Real> {
    lr: T,
    t: i32,
    m: Vec<Layer<T>>,
    v: Vec<Layer<T>>,
}

impl<T: Real> Adam<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(layers: &[Layer<T>], lr: T) -> Self {
        let zeros: Vec<Layer<T>> = layers
            .iter()
            .map(|l| Layer {
                weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                bias: DVector::zeros(l.bias.len()),
            })
            .collect();
        Self {
            lr,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, layers: &mut [Layer<T>], grads: &[Layer<T>]) {
        self.t += 1;
        let (b1, b2) = (T::lit(Self::BETA1), T::lit(Self::BETA2));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let step = self.lr * c2.sqrt() / c1;
        let eps = T::lit(Self::EPS) * c2.sqrt();
        let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
            for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (T::one() - b1) * *g;
                *v = b2 * *v + (T::one() - b2) * *g * *g;
                *p -= step * *m / (v.sqrt() + eps);
            }
        };
        for (((layer, g), m), v) in layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            update(
                layer.weights.as_mut_slice(),
                g.weights.as_slice(),
                m.weights.as_mut_slice(),
                v.weights.as_mut_slice(),
            );
            update(
                layer.bias.as_mut_slice(),
                g.bias.as_slice(),
                m.bias.as_mut_slice(),
                v.bias.as_mut_slice(),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_data(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
        let y = x.map(|v| 2.0 * v + 1.0);
        (x, y)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layers: Vec<Layer<f64>> = [(3, 2), (2, 3)]
            .iter()
            .map(|&(o, i)| Layer {
                weights: DMatrix::from_fn(o, i, |_, _| rng.gen_range(-1.0..1.0)),
                bias: DVector::from_fn(o, |_, _| rng.gen_range(-1.0..1.0)),
            })
            .collect();
        let u = DMatrix::from_fn(2, 5, |_, _| rng.gen_range(-1.0..1.0));
        let t = DMatrix::from_fn(2, 5, |_, _| rng.gen_range(-1.0..1.0));
        let g = gradients(&layers, &u, &t);
        let h = 1e-6;
        for l in 0..2 {
            for k in 0..layers[l].weights.len() {
                let mut p = layers.clone();
                let mut m = layers.clone();
                p[l].weights.as_mut_slice()[k] += h;
                m[l].weights.as_mut_slice()[k] -= h;
                let fd = (mse(&p, &u, &t).unwrap() - mse(&m, &u, &t).unwrap()) / (2.0 * h);
                assert!((g[l].weights.as_slice()[k] - fd).abs() < 1e-8);
            }
            for k in 0..layers[l].bias.len() {
                let mut p = layers.clone();
                let mut m = layers.clone();
                p[l].bias[k] += h;
                m[l].bias[k] -= h;
                let fd = (mse(&p, &u, &t).unwrap() - mse(&m, &u, &t).unwrap()) / (2.0 * h);
                assert!((g[l].bias[k] - fd).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn fits_linear_target() {
        let (x, y) = linear_data(200, 0);
        let (m, report) = train_mlp_xy(&x, &y, &TrainConfig::default()).unwrap();
        assert!(report.val_mse <= 1e-4, "{report:?}");
        let pred = m.forward(&DVector::from_element(1, 0.25)).unwrap()[0];
        assert!((pred - 1.5).abs() < 1e-2);
    }

    #[test]
    fn validation_error_is_stable_across_seeds() {
        let (x, y) = linear_data(200, 1);
        let errs: Vec<f64> = (0..5)
            .map(|seed| {
                let cfg = TrainConfig { seed, ..TrainConfig::default() };
                let (_, r) = train_mlp_xy(&x, &y, &cfg).unwrap();
                r.val_mse.max(1e-12)
            })
            .collect();
        let (lo, hi) = errs.iter().fold((f64::MAX, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
        assert!(hi <= 3.0 * lo.max(1e-6), "{errs:?}");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (x, y) = linear_data(40, 2);
        let cfg = TrainConfig { epochs: 20, ..TrainConfig::default() };
        let a = train_mlp_xy(&x, &y, &cfg).unwrap().0;
        let b = train_mlp_xy(&x, &y, &cfg).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn output_rescaling_is_equivariant() {
        let (x, y) = linear_data(100, 3);
        let cfg = TrainConfig { epochs: 200, ..TrainConfig::default() };
        let (a, _) = train_mlp_xy(&x, &y, &cfg).unwrap();
        let (b, _) = train_mlp_xy(&x, &(&y * 1000.0), &cfg).unwrap();
        for v in [-0.8, 0.1, 0.9] {
            let p = DVector::from_element(1, v);
            let ya = a.forward(&p).unwrap()[0] * 1000.0;
            let yb = b.forward(&p).unwrap()[0];
            assert!((ya - yb).abs() <= 1e-6 * yb.abs());
        }
    }

    #[test]
    fn constant_output_is_flagged() {
        let (x, y) = linear_data(30, 4);
        let mut y2 = DMatrix::zeros(30, 2);
        y2.set_column(0, &y.column(0));
        y2.column_mut(1).fill(3.0);
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let (m, _) = train_mlp_xy(&x, &y2, &cfg).unwrap();
        assert_eq!(m.meta.constant_outputs, vec![1]);
    }

    #[test]
    fn rejects_bad_input() {
        let (x, y) = linear_data(5, 5);
        assert!(matches!(
            train_mlp_xy(&x, &y, &TrainConfig::default()),
            Err(SurrogateError::InsufficientData { .. })
        ));
        let (x, mut y) = linear_data(20, 5);
        y[(3, 0)] = f64::NAN;
        assert_eq!(
            train_mlp_xy(&x, &y, &TrainConfig::default()).unwrap_err(),
            SurrogateError::NonFiniteData(3)
        );
        let cfg = TrainConfig::<f64> { hidden_dims: vec![], ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
