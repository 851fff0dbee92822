//! Adaptive embedded Runge-Kutta reference integrator.
//!
//! Dormand-Prince 5(4) with PI step-size control, written directly against
//! the QP right-hand side. It shares no code with the Taylor machinery, so
//! trajectories from the two paths are genuinely independent cross-checks.

use nalgebra::DVector;
use qpflow_core::{QpSystem, Trajectory, TrajectoryMeta};

/// Steps below this fraction of `t_end` abort the integration.
const UNDERFLOW_FRACTION: f64 = 1e-14;

const SAFETY: f64 = 0.9;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 5.0;
/// PI controller exponents for a 4th-order error estimate.
const ALPHA: f64 = 0.17;
const BETA: f64 = 0.04;

/// Butcher tableau of the Dormand-Prince 5(4) pair.
const STAGE_ROWS: [&[f64]; 5] = [
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    ],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
];

/// Fifth-order solution weights (the seventh stage has weight zero).
const SOLUTION_WEIGHTS: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];

/// Difference between the fifth- and embedded fourth-order weights.
const ERROR_WEIGHTS: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, PartialEq)]
pub enum RkError {
    /// The accepted state left the positive cone at time `t`.
    PositivityLoss { t: f64 },
    /// The controller drove the step below the underflow floor.
    StepUnderflow { t: f64, step: f64 },
}

impl std::fmt::Display for RkError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RkError::PositivityLoss { t } => {
                write!(f, "state left the positive cone at t = {t:.6e}")
            }
            RkError::StepUnderflow { t, step } => write!(
                f,
                "step size underflow at t = {t:.6e} (step {step:.3e})"
            ),
        }
    }
}

impl std::error::Error for RkError {}

/// Integrates the QP right-hand side from its initial state to `t_end` with
/// absolute and relative tolerance `tol`, returning every accepted step.
pub fn rk_reference(sys: &QpSystem, t_end: f64, tol: f64) -> Result<Trajectory, RkError> {
    assert!(t_end > 0.0, "t_end must be positive");
    assert!(tol > 0.0, "tol must be positive");

    let dim = sys.dim();
    let h_min = UNDERFLOW_FRACTION * t_end;
    let mut t = 0.0;
    let mut state = sys.initial_state().clone();
    let mut times = vec![0.0];
    let mut states = vec![state.clone()];
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut err_prev: f64 = 1e-4;

    // Positivity can only fail inside a trial step; at an accepted state the
    // right-hand side is always defined.
    let eval = |x: &DVector<f64>| sys.rhs(x).ok();

    let f0 = eval(&state).ok_or(RkError::PositivityLoss { t: 0.0 })?;
    let mut h = initial_step(&state, &f0, t_end);

    while t < t_end {
        let remaining = t_end - t;
        let step = h.min(remaining);
        if step < h_min {
            return Err(RkError::StepUnderflow { t, step });
        }

        let outcome = attempt_step(&eval, &state, step, dim);
        let Some((candidate, err_raw)) = outcome else {
            // A stage left the positive cone; retry shorter.
            rejected += 1;
            h = step / 2.0;
            continue;
        };

        // Scaled RMS error against atol = rtol = tol.
        let mut sum = 0.0;
        for i in 0..dim {
            let scale = tol + tol * state[i].abs().max(candidate[i].abs());
            sum += (err_raw[i] / scale).powi(2);
        }
        let err = (sum / dim as f64).sqrt();

        if err <= 1.0 {
            t = if step == remaining { t_end } else { t + step };
            if candidate.iter().any(|&x| !x.is_finite() || x <= 0.0) {
                return Err(RkError::PositivityLoss { t });
            }
            state = candidate;
            times.push(t);
            states.push(state.clone());
            accepted += 1;
            let factor = SAFETY * err.powf(-ALPHA) * err_prev.powf(BETA);
            h = step * factor.clamp(MIN_SCALE, MAX_SCALE);
            err_prev = err.max(1e-4);
        } else {
            rejected += 1;
            let factor = SAFETY * err.powf(-ALPHA);
            h = step * factor.clamp(MIN_SCALE, 1.0);
        }
    }

    let meta = TrajectoryMeta {
        method: "rk45".into(),
        order: 5,
        tol,
        accepted,
        rejected,
    };
    Ok(Trajectory::new(times, states, meta).expect("rk invariants hold"))
}

/// One 5(4) step attempt: the candidate state and the raw error vector, or
/// `None` when any stage state is not strictly positive.
fn attempt_step(
    eval: &impl Fn(&DVector<f64>) -> Option<DVector<f64>>,
    state: &DVector<f64>,
    h: f64,
    dim: usize,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let mut stages: Vec<DVector<f64>> = Vec::with_capacity(7);
    stages.push(eval(state)?);
    for row in STAGE_ROWS {
        let mut trial = state.clone();
        for (stage, &coeff) in stages.iter().zip(row) {
            trial += h * coeff * stage;
        }
        stages.push(eval(&trial)?);
    }

    let mut candidate = state.clone();
    for (stage, &weight) in stages.iter().zip(&SOLUTION_WEIGHTS) {
        if weight != 0.0 {
            candidate += h * weight * stage;
        }
    }
    stages.push(eval(&candidate)?);

    let mut err = DVector::zeros(dim);
    for (stage, &weight) in stages.iter().zip(&ERROR_WEIGHTS) {
        if weight != 0.0 {
            err += h * weight * stage;
        }
    }
    Some((candidate, err))
}

/// Crude first step from the state/velocity ratio; the controller corrects
/// it within a few steps.
fn initial_step(state: &DVector<f64>, velocity: &DVector<f64>, t_end: f64) -> f64 {
    let d0 = state.amax();
    let d1 = velocity.amax();
    let guess = if d1 > 0.0 { 0.01 * d0 / d1 } else { 0.1 * t_end };
    guess.min(0.1 * t_end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn logistic() -> QpSystem {
        QpSystem::new(
            DMatrix::from_row_slice(1, 2, &[2.0, -1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DVector::from_vec(vec![0.5]),
        )
        .unwrap()
    }

    fn predator_prey() -> QpSystem {
        QpSystem::new(
            DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, -1.0, 0.0, 1.0]),
            DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0]),
            DVector::from_vec(vec![0.5, 0.5]),
        )
        .unwrap()
    }

    #[test]
    fn constant_system_stays_constant() {
        let sys = QpSystem::new(
            DMatrix::from_row_slice(1, 1, &[0.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![0.7]),
        )
        .unwrap();
        let traj = rk_reference(&sys, 3.0, 1e-10).unwrap();
        assert_eq!(traj.final_time(), 3.0);
        for state in traj.states() {
            assert_eq!(state[0], 0.7);
        }
    }

    #[test]
    fn logistic_matches_closed_form() {
        let traj = rk_reference(&logistic(), 5.0, 1e-10).unwrap();
        let expect = 2.0 / (1.0 + 3.0 * (-10.0f64).exp());
        let got = traj.final_state()[0];
        assert!((got - expect).abs() < 1e-8, "{got} vs {expect}");
    }

    #[test]
    fn predator_prey_conserves_first_integral() {
        let traj = rk_reference(&predator_prey(), 10.0, 1e-10).unwrap();
        let h = |s: &DVector<f64>| s[0] - s[0].ln() + s[1] - s[1].ln();
        let h0 = h(&traj.states()[0]);
        let drift = traj
            .states()
            .iter()
            .map(|s| (h(s) - h0).abs())
            .fold(0.0f64, f64::max);
        assert!(drift < 1e-6, "drift {drift:.3e}");
    }

    #[test]
    fn blowup_is_detected() {
        let sys = QpSystem::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        assert!(rk_reference(&sys, 2.0, 1e-10).is_err());
    }
}
