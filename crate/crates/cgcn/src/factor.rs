//! Kernel matrix factorizations K = Q Qᵀ and the induced feature maps.
//!
//! A trained layer never touches kernel values directly: it works with the
//! rows of a factor Q, and maps unseen vectors into that coordinate system by
//! applying a stored pseudo-inverse to their kernel-products vector. Exact
//! factorization eigendecomposes the full Gram matrix; Nystrom approximates
//! it from p sampled landmark rows, computing only the N x p block
//! (Q = K_{N,p} K_{p,p}^{-1/2}), so a query needs just p kernel evaluations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::{build_kernel_matrix, kernel_products_vector, KernelMatrix, KernelSpec};
use crate::rng;

/// Eigenvalues below `RANK_CUTOFF_REL * lambda_max` are treated as zero.
pub const RANK_CUTOFF_REL: f64 = 1e-10;

/// Eigenvalues below this absolute floor signal a non-PSD input.
pub const PSD_TOLERANCE: f64 = -1e-8;

/// A stored pseudo-inverse in SVD form: the factor is U diag(sigma) Vᵀ and
/// `apply` computes V diag(sigma)^{-1} Uᵀ v.
#[derive(Debug, Clone, PartialEq)]
pub struct PinvMap {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    vt: DMatrix<f64>,
    cutoff: f64,
}

impl PinvMap {
    pub(crate) fn new(u: DMatrix<f64>, sigma: DVector<f64>, vt: DMatrix<f64>, cutoff: f64) -> Self {
        PinvMap { u, sigma, vt, cutoff }
    }

    /// Rows the factor has (the length `apply` expects).
    pub fn input_dim(&self) -> usize {
        self.u.nrows()
    }

    /// Columns the factor has (the length `apply` produces).
    pub fn output_dim(&self) -> usize {
        self.vt.ncols()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn vt(&self) -> &DMatrix<f64> {
        &self.vt
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// V diag(sigma)^{-1} Uᵀ v.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.u.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "pseudo-inverse expects a length-{} vector, got {}",
                self.u.nrows(),
                v.len()
            )));
        }
        let mut coeffs = self.u.transpose() * v;
        for (i, c) in coeffs.iter_mut().enumerate() {
            *c /= self.sigma[i];
        }
        Ok(self.vt.transpose() * coeffs)
    }

    /// The dense pseudo-inverse V diag(sigma)^{-1} Uᵀ.
    pub fn pinv_matrix(&self) -> DMatrix<f64> {
        let mut ut = self.u.transpose();
        for (i, mut row) in ut.row_iter_mut().enumerate() {
            row /= self.sigma[i];
        }
        self.vt.transpose() * ut
    }

    /// The factor U diag(sigma) Vᵀ this map pseudo-inverts.
    pub fn factor_matrix(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (i, mut col) in us.column_iter_mut().enumerate() {
            col *= self.sigma[i];
        }
        us * &self.vt
    }
}

/// A factorized kernel: landmark vectors, the pseudo-inverse payload that
/// maps kernel-products vectors to features, and (for freshly factorized
/// training data) the N x P training feature matrix Q.
///
/// Exact factorization treats every training vector as a landmark; Nystrom
/// keeps only the sampled rows, recorded by `landmark_indices` into the
/// training (node, graph) flattening. Models restored from an archive carry
/// an empty Q: it is a training-time artifact that inference never reads.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedKernel {
    spec: KernelSpec,
    hop: usize,
    q: DMatrix<f64>,
    landmark_indices: Vec<usize>,
    landmarks: DMatrix<f64>,
    pinv: PinvMap,
}

impl FactorizedKernel {
    pub(crate) fn from_parts(
        spec: KernelSpec,
        hop: usize,
        q: DMatrix<f64>,
        landmark_indices: Vec<usize>,
        landmarks: DMatrix<f64>,
        pinv: PinvMap,
    ) -> Self {
        FactorizedKernel {
            spec,
            hop,
            q,
            landmark_indices,
            landmarks,
            pinv,
        }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn with_hop(mut self, hop: usize) -> Self {
        self.hop = hop;
        self
    }

    /// Feature width P (number of columns of Q).
    pub fn width(&self) -> usize {
        self.pinv.output_dim()
    }

    /// Input feature dimension the landmarks live in.
    pub fn input_dim(&self) -> usize {
        self.landmarks.ncols()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn landmarks(&self) -> &DMatrix<f64> {
        &self.landmarks
    }

    pub fn landmark_indices(&self) -> &[usize] {
        &self.landmark_indices
    }

    pub fn pinv(&self) -> &PinvMap {
        &self.pinv
    }

    /// Applies the stored pseudo-inverse to a raw kernel-products vector.
    pub fn pinv_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.pinv.apply(v)
    }
}

fn sorted_eigen_descending(matrix: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = matrix.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Eigendecomposes a PSD matrix into G Gᵀ with G = U_r diag(sqrt(lambda_r)),
/// dropping eigenvalues below the relative cutoff and rejecting eigenvalues
/// below the absolute PSD tolerance.
fn psd_half_factor(matrix: &DMatrix<f64>) -> Result<PinvMap> {
    let (values, vectors) = sorted_eigen_descending(matrix);
    if let Some(&min) = values.last() {
        if min < PSD_TOLERANCE {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
    }
    let lambda_max = values.first().copied().unwrap_or(0.0).max(0.0);
    let cutoff = RANK_CUTOFF_REL * lambda_max;
    let rank = values.iter().take_while(|&&v| v > cutoff).count();
    let n = matrix.nrows();
    let mut u = DMatrix::zeros(n, rank);
    let mut sigma = DVector::zeros(rank);
    for j in 0..rank {
        u.set_column(j, &vectors.column(j));
        sigma[j] = values[j].sqrt();
    }
    Ok(PinvMap::new(u, sigma, DMatrix::identity(rank, rank), cutoff))
}

/// Exact factorization: builds the full Gram matrix of `vectors` and
/// eigendecomposes it. Every training vector acts as a landmark.
pub fn factorize_exact(spec: &KernelSpec, vectors: &DMatrix<f64>) -> Result<FactorizedKernel> {
    let km = build_kernel_matrix(spec, vectors)?;
    factorize_gram(spec, vectors, &km)
}

/// Exact factorization of an explicit Gram matrix (rows of `vectors` must be
/// the vectors the matrix was built from).
pub fn factorize_gram(
    spec: &KernelSpec,
    vectors: &DMatrix<f64>,
    km: &KernelMatrix,
) -> Result<FactorizedKernel> {
    if vectors.nrows() != km.dim() {
        return Err(Error::ShapeMismatch(format!(
            "kernel matrix has dimension {} but {} vectors were supplied",
            km.dim(),
            vectors.nrows()
        )));
    }
    let pinv = psd_half_factor(km.matrix())?;
    let q = pinv.factor_matrix();
    Ok(FactorizedKernel {
        spec: *spec,
        hop: km.hop(),
        q,
        landmark_indices: Vec::new(),
        landmarks: vectors.clone(),
        pinv,
    })
}

/// Nystrom factorization from `p` landmarks sampled uniformly without
/// replacement (deterministic in `seed`). Only the N x p kernel block is
/// ever computed; the full N x N Gram matrix is never materialized.
pub fn nystrom(
    spec: &KernelSpec,
    vectors: &DMatrix<f64>,
    p: usize,
    seed: u64,
) -> Result<FactorizedKernel> {
    let n = vectors.nrows();
    if p == 0 || p > n {
        return Err(Error::InvalidArgument(format!(
            "landmark count p must satisfy 1 <= p <= {n}, got {p}"
        )));
    }
    let mut rng = rng::stream(seed, &[rng::tag::LANDMARKS]);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..p {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    let mut indices: Vec<usize> = pool[..p].to_vec();
    indices.sort_unstable();

    let mut landmarks = DMatrix::zeros(p, vectors.ncols());
    for (row, &idx) in indices.iter().enumerate() {
        landmarks.set_row(row, &vectors.row(idx));
    }
    let w = build_kernel_matrix(spec, &landmarks)?;
    let pinv = psd_half_factor(w.matrix())?;

    let mut q = DMatrix::zeros(n, pinv.output_dim());
    for i in 0..n {
        let v = kernel_products_vector(spec, &landmarks, &vectors.row(i).transpose())?;
        let features = pinv.apply(&v)?;
        q.set_row(i, &features.transpose());
    }
    Ok(FactorizedKernel {
        spec: *spec,
        hop: 0,
        q,
        landmark_indices: indices,
        landmarks,
        pinv,
    })
}

/// Maps one vector into the factor coordinate system: kernel products
/// against the landmarks, then the stored pseudo-inverse.
pub fn map_to_features(fk: &FactorizedKernel, z: &DVector<f64>) -> Result<DVector<f64>> {
    if z.len() != fk.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "feature map expects length-{} vectors, got {}",
            fk.input_dim(),
            z.len()
        )));
    }
    let v = kernel_products_vector(&fk.spec, &fk.landmarks, z)?;
    fk.pinv.apply(&v)
}

/// Maps every row of a signal matrix, producing the n x P feature matrix.
pub fn map_rows_to_features(fk: &FactorizedKernel, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(rows.nrows(), fk.width());
    for i in 0..rows.nrows() {
        let features = map_to_features(fk, &rows.row(i).transpose())?;
        out.set_row(i, &features.transpose());
    }
    Ok(out)
}
