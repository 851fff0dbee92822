//! Taylor-series solutions of LV and QP systems and the step integrator
//! built on them.
//!
//! For a Lotka-Volterra system the coefficients of the formal solution obey
//! the convolution recursion
//!
//! ```text
//! (k+1) * a_i(k+1) = sum_{m=0..k} a_i(m) * (M * a)_i(k-m)
//! ```
//!
//! which costs `O(N^2 K^2)` for a full order-`K` bundle; `k! * a_i(k)`
//! reproduces the closed-form sums of [`crate::oracle`] term for term. The
//! series for a QP system is obtained through its LV embedding: with
//! `U_j(t)` the embedded series, each original component satisfies
//! `x_i' = x_i * sum_j A[i][j] U_j(t)`, so `x_i` is the initial value times
//! the series exponential of the antiderivative of that row combination.
//!
//! Long horizons are covered by analytic continuation: expand at the current
//! state, step a fraction of the estimated convergence radius (capped by the
//! tolerance test on the last retained term), and re-expand. Movable
//! singularities, which are generic for nonlinear QP systems, surface as
//! [`SeriesError::StepUnderflow`].

use nalgebra::{DMatrix, DVector};

use crate::qp::{LvSystem, QpSystem};
use crate::series::{self, SeriesBundle, SeriesError};

/// Fraction of the estimated convergence radius used as the step cap.
const RADIUS_SAFETY: f64 = 0.8;

/// Steps below `UNDERFLOW_FRACTION * t_end` abort the integration.
const UNDERFLOW_FRACTION: f64 = 1e-14;

/// Systems whose flow can be Taylor-expanded around any admissible state.
pub trait SeriesExpandable {
    /// State dimension.
    fn dim(&self) -> usize;

    /// The system's own initial state.
    fn initial_state(&self) -> DVector<f64>;

    /// Taylor expansion of the solution through `(t - t0)^order` for the
    /// trajectory passing through `state` at `t0`.
    fn expand(
        &self,
        state: &DVector<f64>,
        t0: f64,
        order: usize,
    ) -> Result<SeriesBundle, SeriesError>;
}

impl SeriesExpandable for LvSystem {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn initial_state(&self) -> DVector<f64> {
        self.initial_state().clone()
    }

    fn expand(
        &self,
        state: &DVector<f64>,
        t0: f64,
        order: usize,
    ) -> Result<SeriesBundle, SeriesError> {
        let reseeded = self.with_initial_state(state.clone())?;
        let rows = lv_rows(reseeded.interaction_matrix(), reseeded.initial_state(), order)?;
        Ok(SeriesBundle::new(t0, rows).expect("rows are finite by construction"))
    }
}

impl SeriesExpandable for QpSystem {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn initial_state(&self) -> DVector<f64> {
        self.initial_state().clone()
    }

    fn expand(
        &self,
        state: &DVector<f64>,
        t0: f64,
        order: usize,
    ) -> Result<SeriesBundle, SeriesError> {
        let rows = qp_rows(self, state, order)?;
        Ok(SeriesBundle::new(t0, rows).expect("rows are finite by construction"))
    }
}

/// Coefficients `a_i(k)` of the formal LV solution with `a_i(0) = u0_i`,
/// expanded at `t0 = 0`. Multiplying by `k!` recovers the derivative-basis
/// coefficients of the closed-form sum.
pub fn lv_taylor_coefficients(lv: &LvSystem, order: usize) -> Result<SeriesBundle, SeriesError> {
    lv.expand(&lv.initial_state().clone(), 0.0, order)
}

/// Coefficients of the QP solution in the original variables, expanded at
/// `t0 = 0`, via the LV embedding and log-derivative integration.
pub fn qp_taylor_coefficients(sys: &QpSystem, order: usize) -> Result<SeriesBundle, SeriesError> {
    sys.expand(&sys.initial_state().clone(), 0.0, order)
}

fn lv_rows(
    interactions: &DMatrix<f64>,
    u0: &DVector<f64>,
    order: usize,
) -> Result<Vec<Vec<f64>>, SeriesError> {
    let n = u0.len();
    let mut a = vec![vec![0.0; order + 1]; n];
    // v_i = (M * a)_i, filled order by order alongside a.
    let mut v = vec![vec![0.0; order + 1]; n];
    for i in 0..n {
        a[i][0] = u0[i];
    }
    for k in 0..=order {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += interactions[(i, j)] * a[j][k];
            }
            v[i][k] = acc;
        }
        if k == order {
            break;
        }
        for i in 0..n {
            let mut acc = 0.0;
            for m in 0..=k {
                acc += a[i][m] * v[i][k - m];
            }
            let next = acc / (k + 1) as f64;
            if !next.is_finite() {
                return Err(SeriesError::Overflow { order: k + 1 });
            }
            a[i][k + 1] = next;
        }
    }
    Ok(a)
}

fn qp_rows(
    sys: &QpSystem,
    state: &DVector<f64>,
    order: usize,
) -> Result<Vec<Vec<f64>>, SeriesError> {
    let u0 = sys.evaluate_monomials(state)?;
    let invariant = sys.invariant_matrix();
    let embedded = lv_rows(&invariant, &u0, order)?;
    let coefficients = sys.coefficient_matrix();
    let mut rows = Vec::with_capacity(sys.dim());
    for i in 0..sys.dim() {
        let mut log_slope = vec![0.0; order + 1];
        for j in 0..sys.monomial_count() {
            let aij = coefficients[(i, j)];
            if aij != 0.0 {
                for (l, slot) in log_slope.iter_mut().enumerate() {
                    *slot += aij * embedded[j][l];
                }
            }
        }
        let integral = series::antiderivative(&log_slope, order);
        let growth = series::exp(&integral, order)?;
        let row: Vec<f64> = growth.iter().map(|c| state[i] * c).collect();
        if let Some(bad) = row.iter().position(|c| !c.is_finite()) {
            return Err(SeriesError::Overflow { order: bad });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Bookkeeping carried along a computed trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub method: String,
    pub order: usize,
    pub tol: f64,
    pub accepted: usize,
    pub rejected: usize,
}

/// An ordered sequence of `(t, state)` samples from one integration run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    meta: TrajectoryMeta,
}

impl Trajectory {
    /// Wraps samples, requiring strictly increasing times, strictly positive
    /// states, and matching lengths.
    pub fn new(
        times: Vec<f64>,
        states: Vec<DVector<f64>>,
        meta: TrajectoryMeta,
    ) -> Result<Self, SeriesError> {
        if times.is_empty() || times.len() != states.len() {
            return Err(SeriesError::InvalidBundle(
                "trajectory needs matching, non-empty time and state sequences".into(),
            ));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SeriesError::InvalidBundle(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        for (t, state) in times.iter().zip(&states) {
            if state.iter().any(|&x| !x.is_finite() || x <= 0.0) {
                return Err(SeriesError::InvalidBundle(format!(
                    "trajectory state at t = {t} is not strictly positive"
                )));
            }
        }
        Ok(Self {
            times,
            states,
            meta,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }

    /// CSV rendering: header `t,x1,...,xn`, one row per sample, every value
    /// with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let dim = self.states[0].len();
        let mut out = String::from("t");
        for i in 1..=dim {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for (t, state) in self.times.iter().zip(&self.states) {
            out.push_str(&format!("{t:.16e}"));
            for x in state.iter() {
                out.push_str(&format!(",{x:.16e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// A trajectory together with the per-step series, which make the solution
/// evaluable at any time inside the integration window.
#[derive(Debug, Clone)]
pub struct TaylorSolution {
    trajectory: Trajectory,
    segments: Vec<SeriesBundle>,
}

impl TaylorSolution {
    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.trajectory
    }

    /// The local expansions, one per accepted step, in time order.
    pub fn segments(&self) -> &[SeriesBundle] {
        &self.segments
    }

    /// Convergence-radius estimate of the expansion at `t = 0`.
    pub fn initial_radius_estimate(&self) -> Result<f64, SeriesError> {
        self.segments[0].estimate_radius()
    }

    /// Evaluates the piecewise series at any `t` inside the window.
    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>, SeriesError> {
        let times = self.trajectory.times();
        let (start, end) = (times[0], self.trajectory.final_time());
        if !(start..=end).contains(&t) {
            return Err(SeriesError::InvalidBundle(format!(
                "t = {t} outside the integrated window [{start}, {end}]"
            )));
        }
        // Last segment whose expansion point does not exceed t.
        let seg = match times[..times.len() - 1]
            .binary_search_by(|t0| t0.partial_cmp(&t).expect("times are finite"))
        {
            Ok(exact) => exact,
            Err(insertion) => insertion.saturating_sub(1),
        };
        Ok(self.segments[seg].evaluate(t))
    }
}

/// Integrates by repeated local expansion to `order`, stepping
/// `min(0.8 * radius, h_tol)` where `h_tol` solves `|a(K)| h^K = tol` on the
/// largest last-order coefficient, and re-expanding at each accepted state.
///
/// Steps that would leave the positive cone are halved and retried (counted
/// as rejected); steps below `1e-14 * t_end` abort with
/// [`SeriesError::StepUnderflow`], the signature of a movable singularity.
pub fn taylor_solve<S: SeriesExpandable>(
    sys: &S,
    t_end: f64,
    tol: f64,
    order: usize,
) -> Result<TaylorSolution, SeriesError> {
    assert!(t_end > 0.0, "t_end must be positive");
    assert!(tol > 0.0, "tol must be positive");
    assert!(order >= 4, "order must be at least 4");

    let h_min = UNDERFLOW_FRACTION * t_end;
    let mut t = 0.0;
    let mut state = sys.initial_state();
    let mut times = vec![0.0];
    let mut states = vec![state.clone()];
    let mut segments = Vec::new();
    let mut accepted = 0usize;
    let mut rejected = 0usize;

    while t < t_end {
        let bundle = sys.expand(&state, t, order)?;
        let radius = bundle.estimate_radius()?;
        let tail = (0..sys.dim())
            .map(|i| bundle.coeff(i, order).abs())
            .fold(0.0, f64::max);
        let h_tol = if tail == 0.0 {
            f64::INFINITY
        } else {
            (tol / tail).powf(1.0 / order as f64)
        };
        let mut h = (RADIUS_SAFETY * radius).min(h_tol);

        loop {
            let remaining = t_end - t;
            let step = h.min(remaining);
            if step < h_min {
                return Err(SeriesError::StepUnderflow { t, step });
            }
            let candidate = DVector::from_vec(bundle.evaluate(t + step));
            if candidate.iter().all(|&x| x.is_finite() && x > 0.0) {
                t = if step == remaining { t_end } else { t + step };
                state = candidate;
                times.push(t);
                states.push(state.clone());
                segments.push(bundle);
                accepted += 1;
                break;
            }
            rejected += 1;
            h = step / 2.0;
        }
    }

    let meta = TrajectoryMeta {
        method: "taylor".into(),
        order,
        tol,
        accepted,
        rejected,
    };
    let trajectory = Trajectory::new(times, states, meta)?;
    Ok(TaylorSolution {
        trajectory,
        segments,
    })
}

/// [`taylor_solve`] without the dense-output segments.
pub fn taylor_step_integrate<S: SeriesExpandable>(
    sys: &S,
    t_end: f64,
    tol: f64,
    order: usize,
) -> Result<Trajectory, SeriesError> {
    taylor_solve(sys, t_end, tol, order).map(TaylorSolution::into_trajectory)
}
