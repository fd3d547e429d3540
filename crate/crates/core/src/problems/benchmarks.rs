//! Analytic test functions used as stand-in black boxes.

use nalgebra::DVector;

use crate::Real;

/// The ten analytic benchmark functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Benchmark {
    Sphere,
    Quadratic,
    SixHumpCamel,
    SchafferN2,
    Griewank,
    Ackley,
    Hartmann3,
    Powell,
    Rosenbrock,
    Trid,
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_A: [[f64; 3]; 4] = [
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
];
const HARTMANN_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
];

impl Benchmark {
    pub fn dim(self) -> usize {
        match self {
            Benchmark::Sphere | Benchmark::Quadratic => 10,
            Benchmark::SixHumpCamel | Benchmark::SchafferN2 => 2,
            Benchmark::Griewank | Benchmark::Ackley => 5,
            Benchmark::Hartmann3 => 3,
            Benchmark::Powell | Benchmark::Rosenbrock => 4,
            Benchmark::Trid => 6,
        }
    }

    /// Sampling and optimization box `(lo, hi)`, identical in every dimension.
    pub fn domain(self) -> (f64, f64) {
        match self {
            Benchmark::Hartmann3 => (0.0, 1.0),
            Benchmark::Powell => (-4.0, 5.0),
            Benchmark::Rosenbrock => (-2.048, 2.048),
            Benchmark::Trid => (-36.0, 36.0),
            _ => (-2.0, 2.0),
        }
    }

    /// Catalogued global minimum value.
    pub fn min_value(self) -> f64 {
        match self {
            Benchmark::SixHumpCamel => -1.0316,
            Benchmark::Hartmann3 => -3.8628,
            Benchmark::Trid => -50.0,
            _ => 0.0,
        }
    }

    /// Catalogued global minimizers. The camel function has two.
    pub fn minimizers(self) -> Vec<Vec<f64>> {
        let d = self.dim();
        match self {
            Benchmark::SixHumpCamel => vec![vec![0.0898, -0.7126], vec![-0.0898, 0.7126]],
            Benchmark::Hartmann3 => vec![vec![0.1146, 0.5556, 0.8525]],
            Benchmark::Rosenbrock => vec![vec![1.0; d]],
            Benchmark::Trid => vec![(1..=d).map(|i| (i * (d + 1 - i)) as f64).collect()],
            _ => vec![vec![0.0; d]],
        }
    }

    pub fn evaluate<T: Real>(self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.dim());
        let c = T::lit;
        match self {
            Benchmark::Sphere => x.iter().fold(T::zero(), |acc, &v| acc + v * v),
            Benchmark::Quadratic => {
                let squares = x.iter().fold(T::zero(), |acc, &v| acc + v * v);
                let diffs = x
                    .windows(2)
                    .fold(T::zero(), |acc, w| acc + (w[0] - w[1]) * (w[0] - w[1]));
                squares + diffs
            }
            Benchmark::SixHumpCamel => six_hump_camel(x[0], x[1]),
            Benchmark::SchafferN2 => {
                let (a, b) = (x[0] * x[0], x[1] * x[1]);
                let s = (a - b).sin();
                let den = T::one() + c(0.001) * (a + b);
                c(0.5) + (s * s - c(0.5)) / (den * den)
            }
            Benchmark::Griewank => {
                let mut sum = T::zero();
                let mut prod = T::one();
                for (i, &v) in x.iter().enumerate() {
                    sum += v * v;
                    prod *= (v / T::from_usize_lossy(i + 1).sqrt()).cos();
                }
                T::one() + sum / c(4000.0) - prod
            }
            Benchmark::Ackley => {
                let n = T::from_usize_lossy(x.len());
                let sq = x.iter().fold(T::zero(), |acc, &v| acc + v * v);
                let cs = x
                    .iter()
                    .fold(T::zero(), |acc, &v| acc + (T::two_pi() * v).cos());
                -c(20.0) * (-c(0.2) * (sq / n).sqrt()).exp() - (cs / n).exp() + c(20.0) + T::e()
            }
            Benchmark::Hartmann3 => {
                let mut total = T::zero();
                for i in 0..4 {
                    let mut inner = T::zero();
                    for j in 0..3 {
                        let d = x[j] - c(HARTMANN_P[i][j]);
                        inner += c(HARTMANN_A[i][j]) * d * d;
                    }
                    total += c(HARTMANN_ALPHA[i]) * (-inner).exp();
                }
                -total
            }
            Benchmark::Powell => {
                let t1 = x[0] + c(10.0) * x[1];
                let t2 = x[2] - x[3];
                let t3 = x[1] - c(2.0) * x[2];
                let t4 = x[0] - x[3];
                t1 * t1 + c(5.0) * t2 * t2 + t3.powi(4) + c(10.0) * t4.powi(4)
            }
            Benchmark::Rosenbrock => x.windows(2).fold(T::zero(), |acc, w| {
                let a = w[1] - w[0] * w[0];
                let b = w[0] - T::one();
                acc + c(100.0) * a * a + b * b
            }),
            Benchmark::Trid => {
                let sq = x
                    .iter()
                    .fold(T::zero(), |acc, &v| acc + (v - T::one()) * (v - T::one()));
                let cross = x.windows(2).fold(T::zero(), |acc, w| acc + w[0] * w[1]);
                sq - cross
            }
        }
    }

    pub fn evaluate_vec<T: Real>(self, x: &DVector<T>) -> T {
        self.evaluate(x.as_slice())
    }
}

fn six_hump_camel<T: Real>(x1: T, x2: T) -> T {
    let c = T::lit;
    let a = x1 * x1;
    (c(4.0) - c(2.1) * a + a * a / c(3.0)) * a + x1 * x2 + c(4.0) * (x2 * x2 - T::one()) * x2 * x2
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Benchmark; 10] = [
        Benchmark::Sphere,
        Benchmark::Quadratic,
        Benchmark::SixHumpCamel,
        Benchmark::SchafferN2,
        Benchmark::Griewank,
        Benchmark::Ackley,
        Benchmark::Hartmann3,
        Benchmark::Powell,
        Benchmark::Rosenbrock,
        Benchmark::Trid,
    ];

    #[test]
    fn catalogued_minima_reproduce_minimal_values() {
        for b in ALL {
            let tol = if b == Benchmark::SixHumpCamel { 5e-3 } else { 1e-3 };
            for xs in b.minimizers() {
                let f = b.evaluate(&xs);
                assert!((f - b.min_value()).abs() <= tol, "{b:?}: {f}");
            }
        }
    }

    #[test]
    fn trid_optimum_is_minus_fifty() {
        let x: Vec<f64> = (1..=6).map(|i| (i * (7 - i)) as f64).collect();
        assert_eq!(x, vec![6.0, 10.0, 12.0, 12.0, 10.0, 6.0]);
        assert!((Benchmark::Trid.evaluate(&x) + 50.0).abs() < 1e-12);
    }

    #[test]
    fn hartmann_and_camel_reference_points() {
        let h: f64 = Benchmark::Hartmann3.evaluate(&[0.1146, 0.5556, 0.8525]);
        assert!((h + 3.8628).abs() < 1e-3);
        let c: f64 = Benchmark::SixHumpCamel.evaluate(&[0.0898, -0.7126]);
        assert!((c + 1.03).abs() < 5e-3);
    }

    #[test]
    fn sphere_origin_is_zero_in_both_precisions() {
        assert_eq!(Benchmark::Sphere.evaluate(&[0.0f64; 10]), 0.0);
        assert_eq!(Benchmark::Sphere.evaluate(&[0.0f32; 10]), 0.0);
        let a = Benchmark::Ackley.evaluate(&[0.0f64; 5]);
        assert!(a.abs() < 1e-12);
    }

    #[test]
    fn f32_tracks_f64() {
        for b in ALL {
            let x: Vec<f64> = (0..b.dim()).map(|i| 0.1 + 0.05 * i as f64).collect();
            let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
            let (a, s) = (b.evaluate(&x), b.evaluate(&xf) as f64);
            assert!((a - s).abs() <= 1e-4 * (1.0 + a.abs()), "{b:?}");
        }
    }
}
