use mlfp::problems::problem_spec;
use mlfp::qp::{solve_qp, QpProblem, QpStatus};
use mlfp::sampling::{expand_bounds, label_feasibility, lhs};
use mlfp::svm::{conservative_retrain, train_svm, Kernel, KernelChoice, SvmParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dual_by_qp(x: &DMatrix<f64>, labels: &[i8], kernel: Kernel<f64>, shift: &DVector<f64>, scale: &DVector<f64>, c: f64) -> f64 {
    let n = x.nrows();
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..x.ncols()).map(|j| (x[(i, j)] - shift[j]) / scale[j]).collect())
        .collect();
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * kernel.eval(&xs[i], &xs[j]));
    let ridge = &q + DMatrix::identity(n, n) * 1e-9;
    let mut a_in = DMatrix::zeros(2 * n, n);
    let mut b_in = DVector::zeros(2 * n);
    for i in 0..n {
        a_in[(i, i)] = -1.0;
        a_in[(n + i, i)] = 1.0;
        b_in[n + i] = -c;
    }
    let p = QpProblem::unconstrained(ridge, DVector::from_element(n, -1.0))
        .with_equalities(DMatrix::from_row_slice(1, n, &y), DVector::zeros(1))
        .with_inequalities(a_in, b_in);
    let s = solve_qp(&p).unwrap();
    assert_eq!(s.status, QpStatus::Optimal);
    0.5 * (s.d.transpose() * &q * &s.d)[(0, 0)] - s.d.sum()
}

#[test]
fn smo_dual_objective_matches_dense_qp() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..20 {
        let n = rng.gen_range(6..=30);
        let x: DMatrix<f64> = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let mut labels: Vec<i8> = (0..n)
            .map(|i| if x[(i, 0)] + 0.5 * x[(i, 1)].sin() + rng.gen_range(-0.3..0.3) > 0.0 { 1 } else { -1 })
            .collect();
        labels[0] = 1;
        labels[1] = -1;
        let kernel = if trial % 2 == 0 {
            KernelChoice::Rbf { gamma: None }
        } else {
            KernelChoice::Linear
        };
        let params = SvmParams {
            kernel,
            c: [0.5, 10.0][trial % 2],
            ..SvmParams::default()
        };
        let m = train_svm(&x, &labels, &params).unwrap();
        let reference = dual_by_qp(&x, &labels, m.kernel, &m.scaler.shift, &m.scaler.scale, params.c);
        let rel = (m.dual_objective - reference).abs() / reference.abs().max(1e-12);
        assert!(rel <= 1e-3, "trial {trial}: {} vs {reference}", m.dual_objective);
    }
}

#[test]
fn conservative_model_accepts_a_superset_of_training_rows() {
    let spec = problem_spec::<f64>("camel_constrained").unwrap();
    let (lo, hi) = expand_bounds(&spec.bounds_lo, &spec.bounds_hi, 0.05);
    for seed in 0..10 {
        let x = lhs(&lo, &hi, 50, seed).unwrap();
        let y = DMatrix::zeros(50, 1);
        let labels: Vec<i8> = label_feasibility(&spec, &x, &y).iter().map(|&f| if f { 1 } else { -1 }).collect();
        let params = SvmParams::default();
        let m = train_svm(&x, &labels, &params).unwrap();
        let r = conservative_retrain(&m, &x, &labels, &params).unwrap();
        let before = m.predict_batch(&x);
        let after = r.predict_batch(&x);
        for i in 0..50 {
            if before[i].0 == 1 {
                assert_eq!(after[i].0, 1, "seed {seed} row {i}");
            }
        }
    }
}
