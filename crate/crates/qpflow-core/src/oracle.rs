//! Literal brute-force evaluation of the closed-form Taylor-coefficient sums
//! and of the generalized-factorial tensor underneath them.
//!
//! The `k`-th derivative of a Lotka-Volterra solution at `t = 0` has the
//! closed form
//!
//! ```text
//! c_i(k) = u0_i * sum over (i_1..i_k) of
//!          M[i][i_1] * (M[i][i_2] + M[i_1][i_2]) * ...
//!          * (M[i][i_k] + M[i_1][i_k] + ... + M[i_{k-1}][i_k])
//!          * u0_{i_1} * ... * u0_{i_k}
//! ```
//!
//! and the analogous sum in the original quasi-polynomial variables swaps the
//! leading factor of each parenthesis for the `A` matrix and the state
//! weights for quasi-monomial values. Replacing every matrix entry by a
//! Kronecker delta exposes an integer tensor that collapses to `k!` in one
//! dimension and whose contraction pattern governs the products of `M`.
//!
//! Everything here enumerates index tuples literally, costing `N^k` (or
//! `N^2k` for the doubled-sum form) terms per value. These functions are
//! ground truth for the recursion in [`crate::taylor`], not a production
//! path; an explicit term budget caps enumeration at desk scale.
//!
//! Indices are 0-based throughout.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default enumeration budget: at most `10^8` summed terms per query.
pub const DEFAULT_BUDGET: u64 = 100_000_000;

/// Largest tensor order whose entries (bounded by `k!`) stay exact in `u64`.
pub const MAX_TENSOR_ORDER: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("enumeration of {required} terms exceeds the budget of {budget}")]
    BudgetExceeded { required: u128, budget: u64 },
    #[error("invalid tensor index: {0}")]
    InvalidIndex(String),
}

/// Number of tuples in a dense scan, saturating on overflow.
fn enumeration_size(base: usize, exponent: usize) -> u128 {
    (base as u128)
        .checked_pow(exponent as u32)
        .unwrap_or(u128::MAX)
}

fn check_budget(base: usize, exponent: usize, budget: u64) -> Result<(), OracleError> {
    let required = enumeration_size(base, exponent);
    if required > budget as u128 {
        return Err(OracleError::BudgetExceeded { required, budget });
    }
    Ok(())
}

/// Advances a base-`base` odometer one step in lexicographic order.
/// Returns `false` once the tuple has wrapped around to all zeros.
fn advance(tuple: &mut [usize], base: usize) -> bool {
    for slot in tuple.iter_mut().rev() {
        *slot += 1;
        if *slot < base {
            return true;
        }
        *slot = 0;
    }
    false
}

/// Shared shape of the coefficient sums: for one index tuple, multiply the
/// factors `lead[t_m] + sum_{l<m} couple[t_l][t_m]` and the weights
/// `w[t_1] * ... * w[t_k]`, then add everything up.
fn tuple_sum(lead: impl Fn(usize) -> f64, couple: &DMatrix<f64>, weights: &DVector<f64>, k: usize) -> f64 {
    let n = weights.len();
    let mut tuple = vec![0usize; k];
    let mut total = 0.0;
    loop {
        let mut term = 1.0;
        for (m, &tm) in tuple.iter().enumerate() {
            let mut factor = lead(tm);
            for &tl in &tuple[..m] {
                factor += couple[(tl, tm)];
            }
            term *= factor * weights[tm];
        }
        total += term;
        if !advance(&mut tuple, n) {
            break;
        }
    }
    total
}

/// The closed-form `k`-th Lotka-Volterra derivative `c_i(k)`, enumerated
/// term by term. `c_i(0)` is `u0_i`; for `k >= 1` the cost is `N^k` terms.
///
/// Relates to the recursion of [`crate::taylor::lv_taylor_coefficients`] by
/// `c_i(k) = k! * a_i(k)`.
pub fn direct_lv_coefficient(
    interactions: &DMatrix<f64>,
    u0: &DVector<f64>,
    i: usize,
    k: usize,
    budget: u64,
) -> Result<f64, OracleError> {
    let n = interactions.nrows();
    assert_eq!(interactions.ncols(), n, "interaction matrix must be square");
    assert_eq!(u0.len(), n, "initial state length must match");
    assert!(i < n, "component index out of range");
    if k == 0 {
        return Ok(u0[i]);
    }
    check_budget(n, k, budget)?;
    Ok(u0[i] * tuple_sum(|t| interactions[(i, t)], interactions, u0, k))
}

/// The closed-form `k`-th derivative of the original quasi-polynomial
/// variables, exactly as the doubled sum is printed: factors lead with the
/// coefficient matrix `A`, couplings come from `M = B*A`, and the weights
/// are the quasi-monomial values of the initial state.
pub fn direct_qp_coefficient(
    coefficients: &DMatrix<f64>,
    exponents: &DMatrix<f64>,
    x0: &DVector<f64>,
    i: usize,
    k: usize,
    budget: u64,
) -> Result<f64, OracleError> {
    let (n, num_monomials) = (coefficients.nrows(), coefficients.ncols());
    assert_eq!(exponents.nrows(), num_monomials, "B must be N x n");
    assert_eq!(exponents.ncols(), n, "B must be N x n");
    assert_eq!(x0.len(), n, "initial state length must match");
    assert!(i < n, "component index out of range");
    if k == 0 {
        return Ok(x0[i]);
    }
    check_budget(num_monomials, k, budget)?;
    let invariant = exponents * coefficients;
    let monomials = DVector::from_fn(num_monomials, |j, _| {
        (0..n).fold(1.0, |acc, l| {
            let e = exponents[(j, l)];
            if e == 0.0 {
                acc
            } else if e == 1.0 {
                acc * x0[l]
            } else {
                acc * x0[l].powf(e)
            }
        })
    });
    Ok(x0[i] * tuple_sum(|t| coefficients[(i, t)], &invariant, &monomials, k))
}

/// An index `(i; i_1..i_k; j_1..j_k)` into the generalized-factorial tensor.
///
/// All indices are 0-based and must lie below the dimension; the two tuples
/// share the length `k`, capped at [`MAX_TENSOR_ORDER`] so entry values stay
/// exact integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorIndex {
    i: usize,
    upper: Vec<usize>,
    lower: Vec<usize>,
}

impl TensorIndex {
    pub fn new(
        i: usize,
        upper: Vec<usize>,
        lower: Vec<usize>,
        dim: usize,
    ) -> Result<Self, OracleError> {
        if dim == 0 {
            return Err(OracleError::InvalidIndex("dimension must be positive".into()));
        }
        if upper.len() != lower.len() {
            return Err(OracleError::InvalidIndex(format!(
                "tuple lengths differ: {} vs {}",
                upper.len(),
                lower.len()
            )));
        }
        if upper.len() > MAX_TENSOR_ORDER {
            return Err(OracleError::InvalidIndex(format!(
                "order {} exceeds the exact-integer cap {MAX_TENSOR_ORDER}",
                upper.len()
            )));
        }
        if i >= dim || upper.iter().chain(&lower).any(|&x| x >= dim) {
            return Err(OracleError::InvalidIndex(format!(
                "index out of range for dimension {dim}"
            )));
        }
        Ok(Self { i, upper, lower })
    }

    pub fn i(&self) -> usize {
        self.i
    }

    pub fn upper(&self) -> &[usize] {
        &self.upper
    }

    pub fn lower(&self) -> &[usize] {
        &self.lower
    }

    pub fn order(&self) -> usize {
        self.upper.len()
    }
}

fn delta(a: usize, b: usize) -> u64 {
    u64::from(a == b)
}

/// One entry of the generalized-factorial tensor:
///
/// ```text
/// delta(i,j_1) * (delta(i,j_2) + delta(i_1,j_2)) * ...
///             * (delta(i,j_k) + delta(i_1,j_k) + ... + delta(i_{k-1},j_k))
/// ```
///
/// an integer between 0 and `k!`. With `dim = 1` every delta fires and the
/// value is exactly `k!`.
pub fn factorial_tensor_entry(idx: &TensorIndex) -> u64 {
    let mut value = 1u64;
    for (m, &jm) in idx.lower.iter().enumerate() {
        let mut factor = delta(idx.i, jm);
        for &il in &idx.upper[..m] {
            factor += delta(il, jm);
        }
        value *= factor;
        if value == 0 {
            return 0;
        }
    }
    value
}

/// Sums the tensor over all lower tuples for a fixed `(i, upper)`. The
/// `m`-th factor is a sum of `m` Kronecker deltas, each summing to one over
/// its lower index, so the result is `k!` for every choice of `i` and upper
/// tuple.
pub fn tensor_sum_over_lower(
    i: usize,
    upper: &[usize],
    dim: usize,
    budget: u64,
) -> Result<u64, OracleError> {
    let k = upper.len();
    // Validates ranges and the exact-integer cap.
    TensorIndex::new(i, upper.to_vec(), vec![0; k], dim)?;
    if k == 0 {
        return Ok(1);
    }
    check_budget(dim, k, budget)?;
    let mut lower = vec![0usize; k];
    let mut total = 0u64;
    loop {
        let idx = TensorIndex {
            i,
            upper: upper.to_vec(),
            lower: lower.clone(),
        };
        total += factorial_tensor_entry(&idx);
        if !advance(&mut lower, dim) {
            break;
        }
    }
    Ok(total)
}

/// Both sides of the doubled-sum identity for the `k`-th coefficient:
///
/// - `lhs` sums the matrix-product form (factors built directly from `M`)
///   against the initial-state weights;
/// - `rhs` introduces the lower index tuple explicitly, summing
///   `tensor entry * M[j_1][i_1] * ... * M[j_k][i_k]` over both tuples.
///
/// The two are the same sum rearranged, so they agree to rounding; `rhs`
/// costs `N^2k` terms.
pub fn contracted_product_check(
    interactions: &DMatrix<f64>,
    u0: &DVector<f64>,
    i: usize,
    k: usize,
    budget: u64,
) -> Result<(f64, f64), OracleError> {
    let n = interactions.nrows();
    assert_eq!(interactions.ncols(), n, "interaction matrix must be square");
    assert_eq!(u0.len(), n, "initial state length must match");
    assert!(i < n, "component index out of range");
    if k == 0 {
        return Ok((1.0, 1.0));
    }
    check_budget(n, 2 * k, budget)?;

    let lhs = tuple_sum(|t| interactions[(i, t)], interactions, u0, k);

    let mut rhs = 0.0;
    let mut upper = vec![0usize; k];
    loop {
        let mut inner = 0.0;
        let mut lower = vec![0usize; k];
        loop {
            let idx = TensorIndex {
                i,
                upper: upper.clone(),
                lower: lower.clone(),
            };
            let entry = factorial_tensor_entry(&idx);
            if entry != 0 {
                let mut term = entry as f64;
                for m in 0..k {
                    term *= interactions[(lower[m], upper[m])];
                }
                inner += term;
            }
            if !advance(&mut lower, n) {
                break;
            }
        }
        let mut weight = 1.0;
        for &im in &upper {
            weight *= u0[im];
        }
        rhs += inner * weight;
        if !advance(&mut upper, n) {
            break;
        }
    }
    Ok((lhs, rhs))
}

/// Streams every nonzero tensor entry for fixed `i`, in lexicographic order
/// of `(upper, lower)`, by dense scan over all `dim^2k` index pairs.
pub fn tensor_nonzero_enumerate(
    dim: usize,
    k: usize,
    i: usize,
    budget: u64,
) -> Result<TensorScan, OracleError> {
    TensorIndex::new(i, vec![0; k], vec![0; k], dim)?;
    check_budget(dim, 2 * k, budget)?;
    Ok(TensorScan {
        dim,
        i,
        upper: vec![0; k],
        lower: vec![0; k],
        done: false,
    })
}

/// Iterator over nonzero tensor entries; see [`tensor_nonzero_enumerate`].
#[derive(Debug)]
pub struct TensorScan {
    dim: usize,
    i: usize,
    upper: Vec<usize>,
    lower: Vec<usize>,
    done: bool,
}

impl TensorScan {
    /// Steps the (upper, lower) odometer once; lower moves fastest.
    fn step(&mut self) {
        if !advance(&mut self.lower, self.dim) && !advance(&mut self.upper, self.dim) {
            self.done = true;
        }
    }
}

impl Iterator for TensorScan {
    type Item = (TensorIndex, u64);

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            let idx = TensorIndex {
                i: self.i,
                upper: self.upper.clone(),
                lower: self.lower.clone(),
            };
            let value = factorial_tensor_entry(&idx);
            // 0-order scan has exactly one (empty) index pair.
            if self.upper.is_empty() {
                self.done = true;
            } else {
                self.step();
            }
            if value != 0 {
                return Some((idx, value));
            }
        }
        None
    }
}
