//! Truncated power-series rows and bundles.
//!
//! A series row is a plain `&[f64]` of coefficients in the monomial basis:
//! index `k` holds the coefficient of `(t - t0)^k`. Coefficients are stored
//! divided by `k!` relative to the derivative convention, which keeps them
//! representable far beyond order 170.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qp::QpError;

/// Errors from series construction, arithmetic, and integration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("series coefficient overflowed at order {order}")]
    Overflow { order: usize },
    #[error("series exponential requires a zero constant term")]
    NonzeroConstantTerm,
    #[error("radius estimation needs order >= 2, got {order}")]
    InsufficientOrder { order: usize },
    #[error("step size underflow at t = {t:.6e} (step {step:.3e}): movable singularity or positivity loss ahead")]
    StepUnderflow { t: f64, step: f64 },
    #[error("invalid series bundle: {0}")]
    InvalidBundle(String),
    #[error(transparent)]
    State(#[from] QpError),
}

/// Truncated Cauchy product of two rows, keeping powers `0..=order`.
/// Rows shorter than `order + 1` are zero-padded; an empty row is the zero
/// series.
pub fn product(a: &[f64], b: &[f64], order: usize) -> Vec<f64> {
    let mut out = vec![0.0; order + 1];
    if a.is_empty() || b.is_empty() {
        return out;
    }
    for (k, c) in out.iter_mut().enumerate() {
        let lo = (k + 1).saturating_sub(b.len());
        let hi = k.min(a.len() - 1);
        let mut acc = 0.0;
        for m in lo..=hi {
            acc += a[m] * b[k - m];
        }
        *c = acc;
    }
    out
}

/// Series exponential of a row with zero constant term.
///
/// Uses the log-derivative recursion `k*e(k) = sum_{m=1..k} m*a(m)*e(k-m)`,
/// so the result solves `e' = a' * e`, `e(0) = 1`, exactly through `order`.
pub fn exp(a: &[f64], order: usize) -> Result<Vec<f64>, SeriesError> {
    if a.first().is_some_and(|&c| c != 0.0) {
        return Err(SeriesError::NonzeroConstantTerm);
    }
    let mut out = vec![0.0; order + 1];
    out[0] = 1.0;
    for k in 1..=order {
        let mut acc = 0.0;
        for m in 1..=k.min(a.len().saturating_sub(1)) {
            acc += (m as f64) * a[m] * out[k - m];
        }
        out[k] = acc / k as f64;
    }
    Ok(out)
}

/// Term-wise antiderivative with zero constant term, truncated at `order`.
pub fn antiderivative(a: &[f64], order: usize) -> Vec<f64> {
    let mut out = vec![0.0; order + 1];
    for k in 1..=order {
        if k - 1 < a.len() {
            out[k] = a[k - 1] / k as f64;
        }
    }
    out
}

/// Formal derivative, one order shorter than the input.
pub fn derivative(a: &[f64]) -> Vec<f64> {
    a.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

/// Horner evaluation of a row at offset `dt` from the expansion point.
pub fn evaluate(a: &[f64], dt: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, &c| acc * dt + c)
}

/// Truncated Taylor expansion of a vector-valued solution around `t0`.
///
/// `coeffs[i][k]` is the coefficient of `(t - t0)^k` in component `i`; the
/// constant terms are the state at the expansion point.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesBundle {
    t0: f64,
    coeffs: Vec<Vec<f64>>,
}

impl SeriesBundle {
    /// Wraps coefficient rows, requiring at least one row, uniform row
    /// length of at least one, and finite entries.
    pub fn new(t0: f64, coeffs: Vec<Vec<f64>>) -> Result<Self, SeriesError> {
        if !t0.is_finite() {
            return Err(SeriesError::InvalidBundle("t0 must be finite".into()));
        }
        let Some(first) = coeffs.first() else {
            return Err(SeriesError::InvalidBundle("no coefficient rows".into()));
        };
        if first.is_empty() || coeffs.iter().any(|row| row.len() != first.len()) {
            return Err(SeriesError::InvalidBundle(
                "rows must share a common non-zero length".into(),
            ));
        }
        for (i, row) in coeffs.iter().enumerate() {
            if let Some(k) = row.iter().position(|c| !c.is_finite()) {
                return Err(SeriesError::InvalidBundle(format!(
                    "non-finite coefficient at component {i}, order {k}"
                )));
            }
        }
        Ok(Self { t0, coeffs })
    }

    /// Number of solution components.
    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    /// Highest retained power of `(t - t0)`.
    pub fn order(&self) -> usize {
        self.coeffs[0].len() - 1
    }

    /// Expansion point.
    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Coefficient row of component `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.coeffs[i]
    }

    /// Coefficient of `(t - t0)^k` in component `i`.
    pub fn coeff(&self, i: usize, k: usize) -> f64 {
        self.coeffs[i][k]
    }

    /// The state at the expansion point (the constant terms).
    pub fn state_at_t0(&self) -> Vec<f64> {
        self.coeffs.iter().map(|row| row[0]).collect()
    }

    /// Horner evaluation of every component at time `t`.
    pub fn evaluate(&self, t: f64) -> Vec<f64> {
        let dt = t - self.t0;
        self.coeffs.iter().map(|row| evaluate(row, dt)).collect()
    }

    /// Convergence-radius estimate by the Cauchy root test.
    ///
    /// Takes `max |a_i(k)|^(1/k)` over the top half of retained orders and
    /// all components and returns its reciprocal; `f64::INFINITY` when every
    /// examined coefficient vanishes (polynomial tail). This is an estimate
    /// of where the series stops converging, not a certificate; orders of 8
    /// or more give it a usable tail to look at.
    pub fn estimate_radius(&self) -> Result<f64, SeriesError> {
        let order = self.order();
        if order < 2 {
            return Err(SeriesError::InsufficientOrder { order });
        }
        let mut growth: f64 = 0.0;
        for row in &self.coeffs {
            for (k, coeff) in row.iter().enumerate().skip(order / 2 + 1) {
                let c = coeff.abs();
                if c > 0.0 {
                    growth = growth.max(c.powf(1.0 / k as f64));
                }
            }
        }
        if growth == 0.0 {
            Ok(f64::INFINITY)
        } else {
            Ok(1.0 / growth)
        }
    }

    /// Parses the JSON form `{"t0": ..., "order": K, "coeffs": [[...], ...]}`.
    pub fn from_json(text: &str) -> Result<Self, SeriesError> {
        let raw: SeriesBundleJson =
            serde_json::from_str(text).map_err(|e| SeriesError::InvalidBundle(e.to_string()))?;
        let bundle = Self::new(raw.t0, raw.coeffs)?;
        if bundle.order() != raw.order {
            return Err(SeriesError::InvalidBundle(format!(
                "order field is {} but rows hold order {}",
                raw.order,
                bundle.order()
            )));
        }
        Ok(bundle)
    }

    /// Serializes to the JSON form accepted by [`SeriesBundle::from_json`].
    pub fn to_json(&self) -> String {
        let raw = SeriesBundleJson {
            t0: self.t0,
            order: self.order(),
            coeffs: self.coeffs.clone(),
        };
        let mut out = serde_json::to_string_pretty(&raw).expect("plain data serializes");
        out.push('\n');
        out
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesBundleJson {
    t0: f64,
    order: usize,
    coeffs: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_with_one_is_identity() {
        let b = [3.0, -1.0, 0.25, 7.0];
        assert_eq!(product(&[1.0], &b, 3), b.to_vec());
    }

    #[test]
    fn product_difference_of_squares() {
        // (1 + t)(1 - t) = 1 - t^2
        assert_eq!(product(&[1.0, 1.0], &[1.0, -1.0], 2), vec![1.0, 0.0, -1.0]);
    }

    #[test]
    fn product_matches_independent_convolution() {
        let a = [0.5, -1.25, 2.0, 0.125, -0.75];
        let b = [1.5, 0.25, -3.0, 0.0625];
        let order = 6;
        // Accumulate a[i]*b[j] into c[i+j] in the opposite loop order.
        let mut expect = vec![0.0; order + 1];
        for (i, &ai) in a.iter().enumerate() {
            for (j, &bj) in b.iter().enumerate() {
                if i + j <= order {
                    expect[i + j] += ai * bj;
                }
            }
        }
        assert_eq!(product(&a, &b, order), expect);
    }

    #[test]
    fn exp_of_zero_is_one() {
        assert_eq!(exp(&[0.0, 0.0], 3).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn exp_of_t_gives_reciprocal_factorials() {
        let e = exp(&[0.0, 1.0], 6).unwrap();
        let mut factorial = 1.0;
        for (k, &c) in e.iter().enumerate() {
            if k > 0 {
                factorial *= k as f64;
            }
            assert!((c - 1.0 / factorial).abs() < 1e-15, "order {k}");
        }
    }

    #[test]
    fn exp_rejects_nonzero_constant_term() {
        assert_eq!(
            exp(&[0.5, 1.0], 3).unwrap_err(),
            SeriesError::NonzeroConstantTerm
        );
    }

    #[test]
    fn exp_agrees_with_pointwise_exponential() {
        let a = [0.0, 0.7, -0.3, 0.11, 0.45];
        let e = exp(&a, 12).unwrap();
        for &t in &[0.01, 0.05, -0.08] {
            let direct = evaluate(&a, t).exp();
            let via_series = evaluate(&e, t);
            assert!(
                (direct - via_series).abs() < 1e-9,
                "t = {t}: {direct} vs {via_series}"
            );
        }
    }

    #[test]
    fn antiderivative_shifts_and_scales() {
        assert_eq!(antiderivative(&[1.0], 2), vec![0.0, 1.0, 0.0]);
        assert_eq!(antiderivative(&[0.0, 2.0], 2), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn derivative_undoes_antiderivative() {
        let a = [0.5, -2.0, 0.125, 3.0];
        let round_trip = derivative(&antiderivative(&a, 4));
        assert_eq!(round_trip, a.to_vec());
    }

    #[test]
    fn evaluate_at_expansion_point_returns_constant_term() {
        let bundle = SeriesBundle::new(2.5, vec![vec![4.0, 100.0, -7.0]]).unwrap();
        assert_eq!(bundle.evaluate(2.5), vec![4.0]);
    }

    #[test]
    fn evaluate_is_linear_in_coefficients() {
        let a = [1.0, 2.0, 3.0];
        let b = [0.5, -1.0, 0.25];
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let t = 0.37;
        let lhs = evaluate(&sum, t);
        let rhs = evaluate(&a, t) + evaluate(&b, t);
        assert!((lhs - rhs).abs() < 1e-15);
    }

    #[test]
    fn radius_of_geometric_series() {
        for &r in &[0.5f64, 1.0, 2.0] {
            let coeffs: Vec<f64> = (0i32..=20).map(|k| r.powi(-k)).collect();
            let bundle = SeriesBundle::new(0.0, vec![coeffs]).unwrap();
            let rho = bundle.estimate_radius().unwrap();
            assert!((rho - r).abs() <= 0.05 * r, "r = {r}, estimate {rho}");
        }
    }

    #[test]
    fn radius_of_polynomial_is_unbounded() {
        let bundle = SeriesBundle::new(0.0, vec![vec![3.0, 1.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(bundle.estimate_radius().unwrap(), f64::INFINITY);
    }

    #[test]
    fn radius_needs_order_two() {
        let bundle = SeriesBundle::new(0.0, vec![vec![1.0, 1.0]]).unwrap();
        assert_eq!(
            bundle.estimate_radius().unwrap_err(),
            SeriesError::InsufficientOrder { order: 1 }
        );
    }

    #[test]
    fn bundle_rejects_ragged_rows() {
        assert!(SeriesBundle::new(0.0, vec![vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn bundle_json_round_trip() {
        let bundle = SeriesBundle::new(1.5, vec![vec![1.0, 0.5], vec![2.0, -0.25]]).unwrap();
        let text = bundle.to_json();
        assert_eq!(SeriesBundle::from_json(&text).unwrap(), bundle);
    }
}
