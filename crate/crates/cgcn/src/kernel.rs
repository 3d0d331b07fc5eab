//! Kernels over shifted node signals, and activation smoothness bounds.
//!
//! Two kernels are supported. The inverse-polynomial kernel
//! k(z, z') = 1 / (2 - <z, z'>) is defined on the unit l2 ball and takes
//! values in [1/3, 1] there; it is the kernel whose Mercer expansion
//! sum_j 2^{-(j+1)} <z, z'>^j certifies positive semi-definiteness. The
//! Gaussian RBF kernel k(z, z') = exp(-gamma * ||z - z'||^2) is defined
//! everywhere. Layer inputs are row-normalized per hop before any kernel
//! evaluation, so both kernels operate on unit (or zero) vectors in practice.
//!
//! `c_sigma_bound` quantifies how expensive an activation is to represent in
//! each kernel's feature space: the nuclear radius needed for the relaxed
//! class to contain a target filter class scales with it. An infinite value
//! means the pairing is invalid (erf and smoothed hinge under RBF).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Slack allowed on the unit-ball precondition of the inverse-polynomial
/// kernel, to absorb roundoff from row normalization.
pub const UNIT_BALL_SLACK: f64 = 1e-9;

/// A kernel choice. The RBF bandwidth rides along with the variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    InversePolynomial,
    GaussianRbf { gamma: f64 },
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "RBF bandwidth gamma must be a positive finite number, got {gamma}"
            )));
        }
        Ok(KernelSpec::GaussianRbf { gamma })
    }

    pub fn inverse_polynomial() -> Self {
        KernelSpec::InversePolynomial
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::InversePolynomial => f.write_str("inverse-polynomial"),
            KernelSpec::GaussianRbf { gamma } => write!(f, "gaussian-rbf(gamma={gamma})"),
        }
    }
}

fn check_dims(z: &DVector<f64>, z2: &DVector<f64>) -> Result<()> {
    if z.len() != z2.len() {
        return Err(Error::ShapeMismatch(format!(
            "kernel arguments have lengths {} and {}",
            z.len(),
            z2.len()
        )));
    }
    Ok(())
}

fn check_unit_ball(z: &DVector<f64>) -> Result<()> {
    let norm = z.norm();
    if norm > 1.0 + UNIT_BALL_SLACK {
        return Err(Error::KernelDomain(format!(
            "inverse-polynomial kernel requires ||z|| <= 1, got ||z|| = {norm}"
        )));
    }
    Ok(())
}

/// Evaluates the kernel on a pair of vectors.
pub fn eval_kernel(spec: &KernelSpec, z: &DVector<f64>, z2: &DVector<f64>) -> Result<f64> {
    check_dims(z, z2)?;
    match *spec {
        KernelSpec::InversePolynomial => {
            check_unit_ball(z)?;
            check_unit_ball(z2)?;
            Ok(1.0 / (2.0 - z.dot(z2)))
        }
        KernelSpec::GaussianRbf { gamma } => {
            let d2 = (z - z2).norm_squared();
            Ok((-gamma * d2).exp())
        }
    }
}

/// A kernel Gram matrix, tagged with the hop its input vectors came from.
///
/// Symmetric by construction (the upper triangle is computed and mirrored)
/// with unit-bounded diagonal. Positive semi-definiteness up to a -1e-8
/// eigenvalue tolerance is part of the contract and is enforced where it is
/// affordable: at factorization time and by the PSD verification sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    hop: usize,
    matrix: DMatrix<f64>,
}

impl KernelMatrix {
    /// Wraps an explicit square symmetric matrix as a kernel matrix.
    ///
    /// Checks shape and symmetry only; positive semi-definiteness is the
    /// caller's claim and is enforced downstream at factorization time.
    pub fn from_raw(matrix: DMatrix<f64>, hop: usize) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "kernel matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        for i in 0..matrix.nrows() {
            for j in (i + 1)..matrix.ncols() {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "kernel matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(KernelMatrix { hop, matrix })
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn with_hop(mut self, hop: usize) -> Self {
        self.hop = hop;
        self
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Builds the Gram matrix of the given row vectors (rows of `vectors`).
pub fn build_kernel_matrix(spec: &KernelSpec, vectors: &DMatrix<f64>) -> Result<KernelMatrix> {
    let n = vectors.nrows();
    let mut m = DMatrix::zeros(n, n);
    let rows: Vec<DVector<f64>> = (0..n).map(|i| vectors.row(i).transpose()).collect();
    for i in 0..n {
        for j in i..n {
            let v = eval_kernel(spec, &rows[i], &rows[j])?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let km = KernelMatrix { hop: 0, matrix: m };
    for i in 0..n {
        let d = km.matrix[(i, i)];
        if d > 1.0 + 1e-12 {
            return Err(Error::KernelDomain(format!(
                "kernel diagonal entry {d} exceeds 1"
            )));
        }
    }
    Ok(km)
}

/// Kernel products of one query vector against every row of `vectors`.
pub fn kernel_products_vector(
    spec: &KernelSpec,
    vectors: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    if vectors.ncols() != z.len() {
        return Err(Error::ShapeMismatch(format!(
            "query has length {} but stored vectors have {} features",
            z.len(),
            vectors.ncols()
        )));
    }
    let mut out = DVector::zeros(vectors.nrows());
    for i in 0..vectors.nrows() {
        out[i] = eval_kernel(spec, &vectors.row(i).transpose(), z)?;
    }
    Ok(out)
}

/// Activation functions whose filter classes the relaxation can absorb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    /// The monomial t^degree.
    Polynomial { degree: u32 },
    Sinusoid,
    Erf,
    SmoothedHinge,
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Polynomial { degree } => write!(f, "polynomial({degree})"),
            ActivationKind::Sinusoid => f.write_str("sinusoid"),
            ActivationKind::Erf => f.write_str("erf"),
            ActivationKind::SmoothedHinge => f.write_str("smoothed-hinge"),
        }
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("polynomial(").and_then(|r| r.strip_suffix(')')) {
            let degree = rest.parse::<u32>().map_err(|_| {
                Error::InvalidConfig(format!("invalid polynomial degree {rest:?}"))
            })?;
            return Ok(ActivationKind::Polynomial { degree });
        }
        match s {
            "sinusoid" => Ok(ActivationKind::Sinusoid),
            "erf" => Ok(ActivationKind::Erf),
            "smoothed-hinge" => Ok(ActivationKind::SmoothedHinge),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation {other:?} (expected polynomial(d), sinusoid, erf, \
                 or smoothed-hinge)"
            ))),
        }
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0f64, |acc, k| acc * k as f64)
}

/// The smoothness envelope C_sigma(t) of an activation under a kernel.
///
/// For the monomial t^d this is the exact single-term series:
/// sqrt(2^(d+1)) t^d under the inverse-polynomial kernel and
/// sqrt(d! e^(2 gamma) / (2 gamma)^d) t^d under RBF. For the sinusoid the
/// closed bounds are 2 e^(t^2) and e^(t^2/(4 gamma) + gamma). Erf and the
/// smoothed hinge are representable only under the inverse-polynomial kernel,
/// where the known bound is of the form e^(c t^2) with an unpinned universal
/// constant; this returns 2 e^(t^2) for them and +inf under RBF.
///
/// Requires t >= 0. Infinite output signals an invalid pairing, not an error.
pub fn c_sigma_bound(act: ActivationKind, t: f64, spec: &KernelSpec) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "C_sigma is defined for finite t >= 0, got {t}"
        )));
    }
    let value = match (*spec, act) {
        (KernelSpec::InversePolynomial, ActivationKind::Polynomial { degree }) => {
            (2.0f64.powi(degree as i32 + 1)).sqrt() * t.powi(degree as i32)
        }
        (KernelSpec::GaussianRbf { gamma }, ActivationKind::Polynomial { degree }) => {
            let d = degree;
            (factorial(d) * (2.0 * gamma).exp() / (2.0 * gamma).powi(d as i32)).sqrt()
                * t.powi(d as i32)
        }
        (KernelSpec::InversePolynomial, ActivationKind::Sinusoid) => 2.0 * (t * t).exp(),
        (KernelSpec::GaussianRbf { gamma }, ActivationKind::Sinusoid) => {
            (t * t / (4.0 * gamma) + gamma).exp()
        }
        (KernelSpec::InversePolynomial, ActivationKind::Erf)
        | (KernelSpec::InversePolynomial, ActivationKind::SmoothedHinge) => 2.0 * (t * t).exp(),
        (KernelSpec::GaussianRbf { .. }, ActivationKind::Erf)
        | (KernelSpec::GaussianRbf { .. }, ActivationKind::SmoothedHinge) => f64::INFINITY,
    };
    Ok(value)
}
