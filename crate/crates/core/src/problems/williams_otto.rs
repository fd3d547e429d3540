//! Williams-Otto reactor/decanter/column process with recycle.
//!
//! Component order everywhere in this module is `A, B, C, E, G, P`.
//! The steady state is the fixed point `F = G(F)` of the reactor balance,
//! where `G` maps an effluent guess to the effluent produced by the
//! corresponding rates and recycle. It is solved by damped successive
//! substitution followed by a Newton polish.

use std::fmt::Write as _;

use nalgebra::{Matrix6, Vector6};

use crate::Real;

pub const A: usize = 0;
pub const B: usize = 1;
pub const C: usize = 2;
pub const E: usize = 3;
pub const G: usize = 4;
pub const P: usize = 5;

pub const COMPONENTS: [&str; 6] = ["A", "B", "C", "E", "G", "P"];

/// Mixture density.
pub const DENSITY: f64 = 50.0;
/// Upper bound on the product flow.
pub const PRODUCT_FLOW_MAX: f64 = 4.763;

const PRE_EXP: [f64; 3] = [5.9755e9, 2.5962e12, 9.6283e15];
const ACTIVATION: [f64; 3] = [120.0, 150.0, 200.0];

/// Independent-variable box `[V, T, eta, F_A, F_B]`.
pub const LOWER: [f64; 5] = [0.03, 5.8, 0.0, 1.0, 1.0];
pub const UPPER: [f64; 5] = [0.1, 6.8, 1.0, 20.0, 40.0];

pub const INPUT_NAMES: [&str; 5] = ["V", "T", "eta", "F_A", "F_B"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WoInputs<T> {
    pub volume: T,
    pub temperature: T,
    pub purge: T,
    pub feed_a: T,
    pub feed_b: T,
}

impl<T: Real> WoInputs<T> {
    pub fn from_slice(x: &[T]) -> Self {
        Self {
            volume: x[0],
            temperature: x[1],
            purge: x[2],
            feed_a: x[3],
            feed_b: x[4],
        }
    }

    pub fn to_array(self) -> [T; 5] {
        [self.volume, self.temperature, self.purge, self.feed_a, self.feed_b]
    }

    fn rate_constants(&self) -> [T; 3] {
        let vr = self.volume * T::lit(DENSITY);
        let mut k = [T::zero(); 3];
        for i in 0..3 {
            k[i] = T::lit(PRE_EXP[i]) * (-T::lit(ACTIVATION[i]) / self.temperature).exp() * vr;
        }
        k
    }
}

/// Converged process state.
#[derive(Clone, Debug, PartialEq)]
pub struct WoState<T> {
    pub inputs: WoInputs<T>,
    /// Reactor effluent per component.
    pub effluent: [T; 6],
    pub effluent_sum: T,
    /// Effluent mass fractions.
    pub mass_fractions: [T; 6],
    /// Recycle flow per component (zero for G).
    pub recycle: [T; 6],
    pub rates: [T; 3],
    pub product: T,
    pub purge_flow: T,
    pub waste: T,
    /// Return on investment in percent.
    pub roi: T,
    pub iterations: usize,
    pub residual: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WoSolverOptions<T> {
    pub damping: T,
    pub max_iterations: usize,
    pub tolerance: T,
}

impl<T: Real> Default for WoSolverOptions<T> {
    fn default() -> Self {
        Self {
            damping: T::lit(0.5),
            max_iterations: 500,
            tolerance: T::lit(1e-10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WoError {
    #[error("recycle balance did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("converged to an unphysical state (negative flow {flow:e})")]
    Unphysical { flow: f64 },
    #[error("input outside the admissible region: {0}")]
    InvalidInput(String),
}

fn rates<T: Real>(k: &[T; 3], f: &Vector6<T>) -> [T; 3] {
    let s = f.sum();
    let (xa, xb, xc, xp) = (f[A] / s, f[B] / s, f[C] / s, f[P] / s);
    [k[0] * xa * xb, k[1] * xb * xc, k[2] * xp * xc]
}

/// One application of the reactor/recycle map `G`.
pub fn balance_map<T: Real>(inputs: &WoInputs<T>, f: &Vector6<T>) -> Vector6<T> {
    let k = inputs.rate_constants();
    map_with_constants(inputs, &k, f)
}

fn map_with_constants<T: Real>(inputs: &WoInputs<T>, k: &[T; 3], f: &Vector6<T>) -> Vector6<T> {
    let r = rates(k, f);
    let keep = T::one() - inputs.purge;
    let two = T::lit(2.0);
    let mut out = Vector6::zeros();
    out[A] = inputs.feed_a + keep * f[A] - r[0];
    out[B] = inputs.feed_b + keep * f[B] - r[0] - r[1];
    out[C] = keep * f[C] + two * r[0] - two * r[1] - r[2];
    out[E] = keep * f[E] + two * r[1];
    out[G] = T::lit(1.5) * r[2];
    out[P] = T::lit(0.1) * keep * f[E] + r[1] - T::lit(0.5) * r[2];
    out
}

/// Jacobian of the residual `G(F) - F` with respect to `F`.
fn residual_jacobian<T: Real>(inputs: &WoInputs<T>, k: &[T; 3], f: &Vector6<T>) -> Matrix6<T> {
    let s = f.sum();
    let x = f / s;
    // d x_j / d F_m = (delta_jm - x_j) / s
    let dx = |j: usize, m: usize| -> T {
        let delta = if j == m { T::one() } else { T::zero() };
        (delta - x[j]) / s
    };
    let mut dr = [[T::zero(); 6]; 3];
    for m in 0..6 {
        dr[0][m] = k[0] * (dx(A, m) * x[B] + x[A] * dx(B, m));
        dr[1][m] = k[1] * (dx(B, m) * x[C] + x[B] * dx(C, m));
        dr[2][m] = k[2] * (dx(P, m) * x[C] + x[P] * dx(C, m));
    }
    let keep = T::one() - inputs.purge;
    let two = T::lit(2.0);
    let mut jac = Matrix6::zeros();
    for m in 0..6 {
        jac[(A, m)] = -dr[0][m];
        jac[(B, m)] = -dr[0][m] - dr[1][m];
        jac[(C, m)] = two * dr[0][m] - two * dr[1][m] - dr[2][m];
        jac[(E, m)] = two * dr[1][m];
        jac[(G, m)] = T::lit(1.5) * dr[2][m];
        jac[(P, m)] = dr[1][m] - T::lit(0.5) * dr[2][m];
    }
    for c in [A, B, C, E] {
        jac[(c, c)] += keep;
    }
    jac[(P, E)] += T::lit(0.1) * keep;
    jac - Matrix6::identity()
}

/// Residuals `G(F) - F` of the balance at the state's effluent.
pub fn balance_residuals<T: Real>(state: &WoState<T>) -> [T; 6] {
    let f = Vector6::from_column_slice(&state.effluent);
    let r = balance_map(&state.inputs, &f) - f;
    [r[0], r[1], r[2], r[3], r[4], r[5]]
}

fn max_abs<T: Real>(v: &Vector6<T>) -> T {
    v.iter().fold(T::zero(), |m, &e| m.max(e.abs()))
}

fn initial_guess<T: Real>(inputs: &WoInputs<T>) -> Vector6<T> {
    let small = T::lit(0.1);
    Vector6::new(inputs.feed_a, inputs.feed_b, small, small, small, small)
}

/// Solves the recycle balance and evaluates the economics.
pub fn simulate<T: Real>(inputs: WoInputs<T>) -> Result<WoState<T>, WoError> {
    simulate_with(inputs, &WoSolverOptions::default())
}

pub fn simulate_with<T: Real>(
    inputs: WoInputs<T>,
    opts: &WoSolverOptions<T>,
) -> Result<WoState<T>, WoError> {
    let arr = inputs.to_array();
    if arr.iter().any(|v| !v.is_finite_value()) {
        return Err(WoError::InvalidInput("non-finite input".into()));
    }
    if inputs.volume <= T::zero() || inputs.temperature <= T::zero() {
        return Err(WoError::InvalidInput("volume and temperature must be positive".into()));
    }
    if inputs.purge <= T::zero() || inputs.purge > T::one() {
        // Without purge, E accumulates and no steady state exists.
        return Err(WoError::InvalidInput("purge fraction must lie in (0, 1]".into()));
    }
    if inputs.feed_a <= T::zero() || inputs.feed_b <= T::zero() {
        return Err(WoError::InvalidInput("feeds must be positive".into()));
    }

    let k = inputs.rate_constants();
    let floor = T::lit(1e-12);
    let mut f = initial_guess(&inputs);
    let mut residual = max_abs(&(map_with_constants(&inputs, &k, &f) - f));
    let mut iterations = 0;
    let coarse = T::lit(1e-6);

    // Damped successive substitution until the residual is small enough for
    // Newton to take over.
    while iterations < opts.max_iterations {
        let scale = T::one().max(max_abs(&f));
        if residual <= coarse * scale {
            break;
        }
        let g = map_with_constants(&inputs, &k, &f);
        f = (f * (T::one() - opts.damping) + g * opts.damping).map(|v| v.max(floor));
        residual = max_abs(&(map_with_constants(&inputs, &k, &f) - f));
        iterations += 1;
    }

    // Newton polish.
    for _ in 0..50 {
        if residual <= opts.tolerance {
            break;
        }
        let r = map_with_constants(&inputs, &k, &f) - f;
        let jac = residual_jacobian(&inputs, &k, &f);
        let Some(step) = jac.lu().solve(&(-r)) else {
            break;
        };
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..20 {
            let trial = f + step * t;
            if trial.iter().all(|v| *v > T::zero()) {
                let tr = max_abs(&(map_with_constants(&inputs, &k, &trial) - trial));
                if tr < residual || tr <= opts.tolerance {
                    f = trial;
                    residual = tr;
                    accepted = true;
                    break;
                }
            }
            t *= T::lit(0.5);
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }

    if !(residual <= opts.tolerance) {
        return Err(WoError::NotConverged {
            iterations,
            residual: residual.as_f64(),
        });
    }
    if let Some(neg) = f.iter().find(|v| **v < T::zero()) {
        return Err(WoError::Unphysical { flow: neg.as_f64() });
    }
    Ok(assemble_state(inputs, &k, f, iterations, residual))
}

fn assemble_state<T: Real>(
    inputs: WoInputs<T>,
    k: &[T; 3],
    f: Vector6<T>,
    iterations: usize,
    residual: T,
) -> WoState<T> {
    let keep = T::one() - inputs.purge;
    let sum = f.sum();
    let mut effluent = [T::zero(); 6];
    let mut fractions = [T::zero(); 6];
    let mut recycle = [T::zero(); 6];
    for j in 0..6 {
        effluent[j] = f[j];
        fractions[j] = f[j] / sum;
    }
    for j in [A, B, C, E] {
        recycle[j] = keep * f[j];
    }
    recycle[P] = T::lit(0.1) * keep * f[E];
    let r = rates(k, &f);
    let product = f[P] - T::lit(0.1) * f[E];
    let purge_flow = inputs.purge * (f[A] + f[B] + f[C] + T::lit(1.1) * f[E]);
    let waste = f[G];
    let mut state = WoState {
        inputs,
        effluent,
        effluent_sum: sum,
        mass_fractions: fractions,
        recycle,
        rates: r,
        product,
        purge_flow,
        waste,
        roi: T::zero(),
        iterations,
        residual,
    };
    state.roi = return_on_investment(&state);
    state
}

/// ROI in percent, recomputed from the flows stored in `state`.
pub fn return_on_investment<T: Real>(state: &WoState<T>) -> T {
    let c = T::lit;
    let i = &state.inputs;
    let vr = i.volume * c(DENSITY);
    let numerator = c(2207.0) * state.product + c(50.0) * state.purge_flow
        - c(168.0) * i.feed_a
        - c(252.0) * i.feed_b
        - c(2.22) * state.effluent_sum
        - c(84.0) * state.waste
        - c(60.0) * vr;
    numerator / (c(600.0) * vr) * c(100.0)
}

/// Runs the simulator and returns `(ROI, F_P, state)`.
pub fn wo_simulate<T: Real>(
    volume: T,
    temperature: T,
    purge: T,
    feed_a: T,
    feed_b: T,
) -> Result<(T, T, WoState<T>), WoError> {
    let state = simulate(WoInputs {
        volume,
        temperature,
        purge,
        feed_a,
        feed_b,
    })?;
    Ok((state.roi, state.product, state))
}

impl<T: Real> WoState<T> {
    /// Flat `key=value` diagnostic dump, one entry per line.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let i = &self.inputs;
        for (name, v) in INPUT_NAMES.iter().zip(i.to_array()) {
            let _ = writeln!(out, "{name}={v:.16e}");
        }
        for (j, name) in COMPONENTS.iter().enumerate() {
            let _ = writeln!(out, "F_eff_{name}={:.16e}", self.effluent[j]);
        }
        let _ = writeln!(out, "F_eff_sum={:.16e}", self.effluent_sum);
        for (j, name) in COMPONENTS.iter().enumerate() {
            let _ = writeln!(out, "x_{name}={:.16e}", self.mass_fractions[j]);
        }
        for (j, name) in COMPONENTS.iter().enumerate() {
            let _ = writeln!(out, "F_R_{name}={:.16e}", self.recycle[j]);
        }
        for (j, r) in self.rates.iter().enumerate() {
            let _ = writeln!(out, "r{}={r:.16e}", j + 1);
        }
        let _ = writeln!(out, "F_P={:.16e}", self.product);
        let _ = writeln!(out, "F_purge={:.16e}", self.purge_flow);
        let _ = writeln!(out, "F_G={:.16e}", self.waste);
        let _ = writeln!(out, "ROI={:.16e}", self.roi);
        let _ = writeln!(out, "iterations={}", self.iterations);
        let _ = writeln!(out, "residual={:.16e}", self.residual);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal() -> WoInputs<f64> {
        WoInputs {
            volume: 0.05,
            temperature: 6.0,
            purge: 0.2,
            feed_a: 10.0,
            feed_b: 20.0,
        }
    }

    /// Independent oracle: plain damped substitution, no Newton, no clamping.
    fn substitution_oracle(inputs: &WoInputs<f64>) -> Vector6<f64> {
        let mut f = initial_guess(inputs);
        for _ in 0..200_000 {
            let g = balance_map(inputs, &f);
            let next = f * 0.5 + g * 0.5;
            let change = max_abs(&(next - f));
            f = next;
            if change <= 1e-12 && max_abs(&(balance_map(inputs, &f) - f)) <= 1e-12 {
                break;
            }
        }
        f
    }

    #[test]
    fn nominal_point_matches_substitution_oracle() {
        let state = simulate(nominal()).unwrap();
        let oracle = substitution_oracle(&nominal());
        for j in 0..6 {
            assert!(
                (state.effluent[j] - oracle[j]).abs() <= 1e-8,
                "{}: {} vs {}",
                COMPONENTS[j],
                state.effluent[j],
                oracle[j]
            );
        }
    }

    #[test]
    fn converged_state_satisfies_balance_and_roi() {
        let state = simulate(nominal()).unwrap();
        let res = balance_residuals(&state);
        assert!(res.iter().all(|r| r.abs() <= 1e-10), "{res:?}");
        assert_eq!(return_on_investment(&state), state.roi);
        assert!(state.mass_fractions.iter().all(|x| (0.0..=1.0).contains(x)));
        assert!(state.effluent.iter().all(|f| *f >= 0.0));
        assert!(state.recycle.iter().all(|f| *f >= 0.0));
    }

    #[test]
    fn full_purge_means_no_recycle() {
        let mut i = nominal();
        i.purge = 1.0;
        let state = simulate(i).unwrap();
        assert!(state.recycle.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn zero_purge_has_no_steady_state() {
        let mut i = nominal();
        i.purge = 0.0;
        assert!(simulate(i).is_err());
    }

    #[test]
    fn known_optimum_region_reaches_reported_roi() {
        // Point on the optimal ridge found by an independent multistart run.
        let (roi, fp, _) = wo_simulate::<f64>(0.03, 6.743525, 0.1001731, 13.140873, 29.948848).unwrap();
        assert!((roi - 121.1).abs() < 0.05, "{roi}");
        assert!(fp <= PRODUCT_FLOW_MAX);
    }

    #[test]
    fn newton_jacobian_matches_differences() {
        let i = nominal();
        let k = i.rate_constants();
        let f = substitution_oracle(&i) * 1.1;
        let jac = residual_jacobian(&i, &k, &f);
        let h = 1e-6;
        for m in 0..6 {
            let mut fp = f;
            let mut fm = f;
            fp[m] += h;
            fm[m] -= h;
            let col = (map_with_constants(&i, &k, &fp) - fp - map_with_constants(&i, &k, &fm) + fm)
                / (2.0 * h);
            for r in 0..6 {
                assert!((col[r] - jac[(r, m)]).abs() <= 1e-6 * (1.0 + col[r].abs()));
            }
        }
    }

    #[test]
    fn key_value_dump_contains_roi() {
        let state = simulate(nominal()).unwrap();
        let dump = state.to_key_value();
        let roi_line = dump.lines().find(|l| l.starts_with("ROI=")).unwrap();
        let parsed: f64 = roi_line[4..].parse().unwrap();
        assert_eq!(parsed, state.roi);
    }
}
