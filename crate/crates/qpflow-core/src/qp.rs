//! Quasi-polynomial and Lotka-Volterra system types, quasi-monomial changes
//! of variables, and canonicalization.
//!
//! A [`QpSystem`] is the triple `(A, B, x0)`: an `n x N` coefficient matrix
//! `A`, an `N x n` real exponent matrix `B`, and a strictly positive initial
//! state, encoding
//!
//! ```text
//! dx_i/dt = x_i * sum_j A[i][j] * u_j(x),    u_j(x) = prod_k x_k^B[j][k]
//! ```
//!
//! The product `B*A` is invariant under every quasi-monomial change of
//! variables and labels the equivalence class of the system; the class
//! representative is the Lotka-Volterra system with interaction matrix
//! `M = B*A` and state `u = (u_1, ..., u_N)`. [`QpSystem::to_lotka_volterra`]
//! performs that embedding without ever inverting `B`, so it applies to
//! square-singular and non-square systems alike; [`QpSystem::square_canonicalize`]
//! is the explicit change of variables `C = B^-1` available when `B` is
//! square and invertible.
//!
//! All types are immutable values; operations are pure functions of their
//! inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Transforms whose reciprocal condition estimate falls below this threshold
/// are rejected as singular. Quasi-monomial exponents amplify
/// ill-conditioning exponentially through the log-space state map.
pub const SINGULARITY_RCOND: f64 = 1e-12;

/// Errors from system construction, evaluation, and transformation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("initial condition must be strictly positive: component {index} is {value}")]
    NonPositiveInitialCondition { index: usize, value: f64 },
    #[error("non-finite entry in {0}")]
    NonFiniteEntry(String),
    #[error("state must be strictly positive: component {index} is {value}")]
    NonPositiveState { index: usize, value: f64 },
    #[error("transform matrix is numerically singular: reciprocal condition {rcond:.3e} below {threshold:.3e}")]
    SingularTransform { rcond: f64, threshold: f64 },
    #[error("square canonicalization needs n = N, got n = {n}, N = {num_monomials}")]
    NotSquare { n: usize, num_monomials: usize },
    #[error("exponent matrix B is numerically singular: reciprocal condition {rcond:.3e}")]
    SingularB { rcond: f64 },
    #[error("invalid system file: {0}")]
    InvalidFormat(String),
}

fn check_state_positive(x: &DVector<f64>) -> Result<(), QpError> {
    for (index, &value) in x.iter().enumerate() {
        if !value.is_finite() {
            return Err(QpError::NonFiniteEntry(format!("state component {index}")));
        }
        if value <= 0.0 {
            return Err(QpError::NonPositiveState { index, value });
        }
    }
    Ok(())
}

/// Max-absolute-column-sum (induced 1-norm).
fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Reciprocal condition estimate in the 1-norm, together with the inverse.
/// Returns `None` when LU inversion fails outright.
fn invert_with_rcond(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let inverse = m.clone().lu().try_inverse()?;
    let denom = one_norm(m) * one_norm(&inverse);
    if denom == 0.0 || !denom.is_finite() {
        return None;
    }
    Some((inverse, 1.0 / denom))
}

/// Evaluates the power product `prod_k x_k^e_k` for one exponent row.
///
/// Exponents 0 and 1 are handled without `powf` so that integer-exponent
/// monomials evaluate exactly.
fn power_product(x: &DVector<f64>, exponents: impl Iterator<Item = f64>) -> f64 {
    let mut acc = 1.0;
    for (k, e) in exponents.enumerate() {
        if e == 0.0 {
            continue;
        } else if e == 1.0 {
            acc *= x[k];
        } else {
            acc *= x[k].powf(e);
        }
    }
    acc
}

/// A quasi-polynomial autonomous ODE system together with its initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSystem {
    /// `n x N` coefficient matrix `A`.
    coefficients: DMatrix<f64>,
    /// `N x n` exponent matrix `B`; row `j` is the exponent vector of the
    /// `j`-th quasi-monomial.
    exponents: DMatrix<f64>,
    /// Strictly positive initial state at `t = 0`.
    x0: DVector<f64>,
}

impl QpSystem {
    /// Builds a validated system from the coefficient matrix `A` (`n x N`),
    /// the exponent matrix `B` (`N x n`), and a strictly positive initial
    /// state of length `n`. Dimensions are inferred from `A`.
    pub fn new(
        coefficients: DMatrix<f64>,
        exponents: DMatrix<f64>,
        x0: DVector<f64>,
    ) -> Result<Self, QpError> {
        let (n, num_monomials) = (coefficients.nrows(), coefficients.ncols());
        if n == 0 || num_monomials == 0 {
            return Err(QpError::DimensionMismatch(
                "coefficient matrix A must have at least one row and one column".into(),
            ));
        }
        if exponents.nrows() != num_monomials || exponents.ncols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "A is {n} x {num_monomials}, so B must be {num_monomials} x {n}, got {} x {}",
                exponents.nrows(),
                exponents.ncols()
            )));
        }
        if x0.len() != n {
            return Err(QpError::DimensionMismatch(format!(
                "initial state has length {}, expected {n}",
                x0.len()
            )));
        }
        if !coefficients.iter().all(|v| v.is_finite()) {
            return Err(QpError::NonFiniteEntry("coefficient matrix A".into()));
        }
        if !exponents.iter().all(|v| v.is_finite()) {
            return Err(QpError::NonFiniteEntry("exponent matrix B".into()));
        }
        for (index, &value) in x0.iter().enumerate() {
            if !value.is_finite() {
                return Err(QpError::NonFiniteEntry(format!(
                    "initial state component {index}"
                )));
            }
            if value <= 0.0 {
                return Err(QpError::NonPositiveInitialCondition { index, value });
            }
        }
        Ok(Self {
            coefficients,
            exponents,
            x0,
        })
    }

    /// State dimension `n`.
    pub fn dim(&self) -> usize {
        self.coefficients.nrows()
    }

    /// Number of quasi-monomials `N`.
    pub fn monomial_count(&self) -> usize {
        self.coefficients.ncols()
    }

    /// The `n x N` coefficient matrix `A`.
    pub fn coefficient_matrix(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    /// The `N x n` exponent matrix `B`.
    pub fn exponent_matrix(&self) -> &DMatrix<f64> {
        &self.exponents
    }

    /// Initial state `x0`.
    pub fn initial_state(&self) -> &DVector<f64> {
        &self.x0
    }

    /// Returns a copy of the system re-seeded at a new strictly positive
    /// initial state. The dynamics (`A`, `B`) are unchanged.
    pub fn with_initial_state(&self, x0: DVector<f64>) -> Result<Self, QpError> {
        Self::new(self.coefficients.clone(), self.exponents.clone(), x0)
    }

    /// Evaluates the quasi-monomial vector `u_j = prod_k x_k^B[j][k]` at a
    /// strictly positive state.
    pub fn evaluate_monomials(&self, x: &DVector<f64>) -> Result<DVector<f64>, QpError> {
        if x.len() != self.dim() {
            return Err(QpError::DimensionMismatch(format!(
                "state has length {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        check_state_positive(x)?;
        Ok(DVector::from_fn(self.monomial_count(), |j, _| {
            power_product(x, self.exponents.row(j).iter().copied())
        }))
    }

    /// Evaluates the right-hand side `dx_i/dt = x_i * sum_j A[i][j] u_j(x)`.
    pub fn rhs(&self, x: &DVector<f64>) -> Result<DVector<f64>, QpError> {
        let u = self.evaluate_monomials(x)?;
        Ok(x.component_mul(&(&self.coefficients * u)))
    }

    /// The invariant `N x N` matrix `B*A`, unchanged by every quasi-monomial
    /// transform and shared by all systems in one equivalence class.
    pub fn invariant_matrix(&self) -> DMatrix<f64> {
        &self.exponents * &self.coefficients
    }

    /// Applies the quasi-monomial change of variables `x_i = prod_k y_k^C[i][k]`.
    ///
    /// The transformed system has coefficients `C^-1 * A`, exponents `B * C`,
    /// and initial state solving the power-product relation in log space,
    /// which keeps it strictly positive by construction.
    pub fn transform(&self, t: &QmTransform) -> Result<Self, QpError> {
        let n = self.dim();
        if t.matrix.nrows() != n {
            return Err(QpError::DimensionMismatch(format!(
                "transform is {} x {}, system dimension is {n}",
                t.matrix.nrows(),
                t.matrix.ncols()
            )));
        }
        let coefficients = &t.inverse * &self.coefficients;
        let exponents = &self.exponents * &t.matrix;
        let x0 = t.to_new_state(&self.x0)?;
        Self::new(coefficients, exponents, x0)
    }

    /// Embeds the system into its Lotka-Volterra canonical form via the
    /// monomial map `u_j = prod_k x_k^B[j][k]`. Never inverts `B`, so square,
    /// square-singular, and non-square systems are handled uniformly.
    pub fn to_lotka_volterra(&self) -> LvEmbedding {
        let interactions = self.invariant_matrix();
        let u0 = self
            .evaluate_monomials(&self.x0)
            .expect("initial state is validated positive at construction");
        LvEmbedding {
            lv: LvSystem {
                interactions,
                u0,
            },
            source: self.clone(),
        }
    }

    /// The explicit square-case canonicalization: transform by `C = B^-1`,
    /// available when `n = N` and `B` is invertible. The result has exponent
    /// matrix `I` and coefficient matrix `B*A`, i.e. it is a Lotka-Volterra
    /// system written as a QP system.
    pub fn square_canonicalize(&self) -> Result<Self, QpError> {
        let (n, num_monomials) = (self.dim(), self.monomial_count());
        if n != num_monomials {
            return Err(QpError::NotSquare { n, num_monomials });
        }
        let (b_inverse, rcond) = invert_with_rcond(&self.exponents)
            .ok_or(QpError::SingularB { rcond: 0.0 })?;
        if rcond < SINGULARITY_RCOND {
            return Err(QpError::SingularB { rcond });
        }
        self.transform(&QmTransform::new(b_inverse)?)
    }

    /// Parses the JSON interchange form: an object with exactly the keys
    /// `n`, `N`, `A` (n rows of N numbers), `B` (N rows of n numbers), and
    /// `x0` (n numbers). Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self, QpError> {
        let raw: QpSystemJson =
            serde_json::from_str(text).map_err(|e| QpError::InvalidFormat(e.to_string()))?;
        raw.try_into()
    }

    /// Serializes to the JSON interchange form accepted by [`QpSystem::from_json`].
    pub fn to_json(&self) -> String {
        let raw = QpSystemJson::from(self);
        let mut out = serde_json::to_string_pretty(&raw).expect("plain data serializes");
        out.push('\n');
        out
    }
}

/// A Lotka-Volterra system `du_j/dt = u_j * sum_l M[j][l] * u_l` with a
/// strictly positive initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct LvSystem {
    interactions: DMatrix<f64>,
    u0: DVector<f64>,
}

impl LvSystem {
    /// Builds a validated system from a square interaction matrix and a
    /// strictly positive initial state of matching length.
    pub fn new(interactions: DMatrix<f64>, u0: DVector<f64>) -> Result<Self, QpError> {
        let n = interactions.nrows();
        if n == 0 {
            return Err(QpError::DimensionMismatch(
                "interaction matrix must have at least one row".into(),
            ));
        }
        if interactions.ncols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "interaction matrix must be square, got {} x {}",
                n,
                interactions.ncols()
            )));
        }
        if u0.len() != n {
            return Err(QpError::DimensionMismatch(format!(
                "initial state has length {}, expected {n}",
                u0.len()
            )));
        }
        if !interactions.iter().all(|v| v.is_finite()) {
            return Err(QpError::NonFiniteEntry("interaction matrix M".into()));
        }
        for (index, &value) in u0.iter().enumerate() {
            if !value.is_finite() {
                return Err(QpError::NonFiniteEntry(format!(
                    "initial state component {index}"
                )));
            }
            if value <= 0.0 {
                return Err(QpError::NonPositiveInitialCondition { index, value });
            }
        }
        Ok(Self { interactions, u0 })
    }

    /// System dimension `N`.
    pub fn dim(&self) -> usize {
        self.interactions.nrows()
    }

    /// The `N x N` interaction matrix `M`.
    pub fn interaction_matrix(&self) -> &DMatrix<f64> {
        &self.interactions
    }

    /// Initial state `u0`.
    pub fn initial_state(&self) -> &DVector<f64> {
        &self.u0
    }

    /// Returns a copy re-seeded at a new strictly positive initial state.
    pub fn with_initial_state(&self, u0: DVector<f64>) -> Result<Self, QpError> {
        Self::new(self.interactions.clone(), u0)
    }

    /// Evaluates the right-hand side `du_j/dt = u_j * sum_l M[j][l] u_l`.
    pub fn rhs(&self, u: &DVector<f64>) -> Result<DVector<f64>, QpError> {
        if u.len() != self.dim() {
            return Err(QpError::DimensionMismatch(format!(
                "state has length {}, expected {}",
                u.len(),
                self.dim()
            )));
        }
        check_state_positive(u)?;
        Ok(u.component_mul(&(&self.interactions * u)))
    }
}

/// An invertible quasi-monomial change of variables `x_i = prod_k y_k^C[i][k]`.
///
/// The inverse matrix is computed once at construction; matrices whose
/// reciprocal condition estimate falls below [`SINGULARITY_RCOND`] are
/// rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct QmTransform {
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    rcond: f64,
}

impl QmTransform {
    /// Validates and wraps an exponent matrix `C`.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, QpError> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "transform matrix must be square and non-empty, got {} x {}",
                n,
                matrix.ncols()
            )));
        }
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(QpError::NonFiniteEntry("transform matrix C".into()));
        }
        let (inverse, rcond) = invert_with_rcond(&matrix).ok_or(QpError::SingularTransform {
            rcond: 0.0,
            threshold: SINGULARITY_RCOND,
        })?;
        if rcond < SINGULARITY_RCOND {
            return Err(QpError::SingularTransform {
                rcond,
                threshold: SINGULARITY_RCOND,
            });
        }
        Ok(Self {
            matrix,
            inverse,
            rcond,
        })
    }

    /// The exponent matrix `C`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The precomputed `C^-1`.
    pub fn inverse_matrix(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Reciprocal condition estimate of `C` in the 1-norm.
    pub fn reciprocal_condition(&self) -> f64 {
        self.rcond
    }

    /// Maps a state of the original system into transformed coordinates:
    /// `y_k = prod_i x_i^(C^-1)[k][i]`.
    pub fn to_new_state(&self, x: &DVector<f64>) -> Result<DVector<f64>, QpError> {
        check_state_positive(x)?;
        Ok(DVector::from_fn(x.len(), |k, _| {
            power_product(x, self.inverse.row(k).iter().copied())
        }))
    }

    /// Maps a transformed state back to original coordinates:
    /// `x_i = prod_k y_k^C[i][k]`.
    pub fn to_old_state(&self, y: &DVector<f64>) -> Result<DVector<f64>, QpError> {
        check_state_positive(y)?;
        Ok(DVector::from_fn(y.len(), |i, _| {
            power_product(y, self.matrix.row(i).iter().copied())
        }))
    }

    /// Composition: applying `self` then `other` equals applying the single
    /// transform with matrix `self.matrix * other.matrix`.
    pub fn compose(&self, other: &QmTransform) -> Result<QmTransform, QpError> {
        QmTransform::new(&self.matrix * &other.matrix)
    }

    /// The inverse change of variables.
    pub fn inverted(&self) -> QmTransform {
        QmTransform {
            matrix: self.inverse.clone(),
            inverse: self.matrix.clone(),
            rcond: self.rcond,
        }
    }
}

/// A QP system paired with its Lotka-Volterra embedding `u_j = prod_k x_k^B[j][k]`.
///
/// The interaction matrix of `lv` equals `B*A` of `source`, and `lv`'s
/// initial state is the monomial vector of `source`'s initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct LvEmbedding {
    source: QpSystem,
    lv: LvSystem,
}

impl LvEmbedding {
    /// The original QP system.
    pub fn source(&self) -> &QpSystem {
        &self.source
    }

    /// The embedded Lotka-Volterra system.
    pub fn lv(&self) -> &LvSystem {
        &self.lv
    }

    /// Applies the embedding map to an arbitrary strictly positive state of
    /// the source system.
    pub fn map_state(&self, x: &DVector<f64>) -> Result<DVector<f64>, QpError> {
        self.source.evaluate_monomials(x)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QpSystemJson {
    n: usize,
    #[serde(rename = "N")]
    num_monomials: usize,
    #[serde(rename = "A")]
    coefficients: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    exponents: Vec<Vec<f64>>,
    x0: Vec<f64>,
}

fn rows_to_matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>, QpError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(QpError::InvalidFormat(format!(
            "{name} must be {nrows} rows of {ncols} numbers"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl TryFrom<QpSystemJson> for QpSystem {
    type Error = QpError;

    fn try_from(raw: QpSystemJson) -> Result<Self, QpError> {
        let coefficients = rows_to_matrix(&raw.coefficients, raw.n, raw.num_monomials, "A")?;
        let exponents = rows_to_matrix(&raw.exponents, raw.num_monomials, raw.n, "B")?;
        if raw.x0.len() != raw.n {
            return Err(QpError::InvalidFormat(format!(
                "x0 must have {} numbers",
                raw.n
            )));
        }
        QpSystem::new(coefficients, exponents, DVector::from_vec(raw.x0))
    }
}

impl From<&QpSystem> for QpSystemJson {
    fn from(sys: &QpSystem) -> Self {
        // Normalize -0.0 so canonicalized systems serialize cleanly.
        let matrix_rows = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| {
                    m.row(i)
                        .iter()
                        .map(|&v| if v == 0.0 { 0.0 } else { v })
                        .collect()
                })
                .collect()
        };
        QpSystemJson {
            n: sys.dim(),
            num_monomials: sys.monomial_count(),
            coefficients: matrix_rows(&sys.coefficients),
            exponents: matrix_rows(&sys.exponents),
            x0: sys.x0.iter().copied().collect(),
        }
    }
}
