//! Dense simulation of block encodings: one-ancilla dilations, encoded
//! matrix-vector products, product accounting and a statevector run of a
//! whole (tiny) qMG schedule.

use serde::Serialize;

use crate::fem::AssembledSystem;
use crate::linalg::{norm2, norm2_sq};
use crate::multigrid::{GridHierarchy, MgConfig};
use crate::qmg::{emulate, BlockIndexer, BlockOperation, CopyPolicy, HistoryVector, QmgError};
use crate::Scalar;

/// Largest statevector (including ancillas) the tiny simulation accepts.
pub const STATEVECTOR_CAP: usize = 1 << 22;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BlockEncError {
    #[error("subnormalization {alpha} is below the operator norm {norm}")]
    AlphaTooSmall { alpha: f64, norm: f64 },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("statevector of {size} amplitudes exceeds the cap {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error(transparent)]
    Qmg(#[from] QmgError),
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols, "ragged rows");
            m.data[i * cols..(i + 1) * cols].copy_from_slice(r);
        }
        m
    }

    pub fn from_diagonal(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Product that skips zero entries of `self`.
    pub fn matmul(&self, rhs: &DenseMatrix<T>) -> Self {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                let rrow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn sub(&self, other: &DenseMatrix<T>) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix<T>) -> T {
        self.sub(other).max_abs()
    }

    /// Copy of rows `r0..r0+nr`, columns `c0..c0+nc`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        let mut out = Self::zeros(nr, nc);
        for i in 0..nr {
            for j in 0..nc {
                out[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &DenseMatrix<T>) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// `‖self‖₂` from the eigenvalues of `selfᵀ self`.
    pub fn spectral_norm(&self) -> T {
        let gram = self.transpose().matmul(self);
        let (vals, _) = symmetric_eigen(&gram);
        vals.into_iter().fold(T::zero(), T::max).max(T::zero()).sqrt()
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenvalues and orthonormal eigenvectors (columns) of a symmetric matrix.
///
/// Cyclic Jacobi, run separately on each connected component of the
/// nonzero pattern so that block-diagonal structure stays cheap.
pub fn symmetric_eigen<T: Scalar>(m: &DenseMatrix<T>) -> (Vec<T>, DenseMatrix<T>) {
    let n = m.rows();
    assert_eq!(n, m.cols(), "symmetric_eigen needs a square matrix");
    let mut component = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let id = groups.len();
        let mut members = vec![start];
        component[start] = id;
        let mut k = 0;
        while k < members.len() {
            let i = members[k];
            for j in 0..n {
                if component[j] == usize::MAX && (m[(i, j)] != T::zero() || m[(j, i)] != T::zero()) {
                    component[j] = id;
                    members.push(j);
                }
            }
            k += 1;
        }
        members.sort_unstable();
        groups.push(members);
    }

    let mut values = vec![T::zero(); n];
    let mut vectors = DenseMatrix::zeros(n, n);
    for members in groups {
        let k = members.len();
        let mut sub = DenseMatrix::zeros(k, k);
        for (a, &i) in members.iter().enumerate() {
            for (b, &j) in members.iter().enumerate() {
                sub[(a, b)] = m[(i, j)];
            }
        }
        let (vals, vecs) = jacobi(sub);
        for (a, &i) in members.iter().enumerate() {
            values[members[a]] = vals[a];
            for (b, &col) in members.iter().enumerate() {
                vectors[(i, col)] = vecs[(a, b)];
            }
        }
    }
    (values, vectors)
}

fn jacobi<T: Scalar>(mut a: DenseMatrix<T>) -> (Vec<T>, DenseMatrix<T>) {
    let n = a.rows();
    let mut v = DenseMatrix::identity(n);
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let x = a[(i, j)] * a[(i, j)];
                total += x;
                if i != j {
                    off += x;
                }
            }
        }
        if off <= eps * eps * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// `U` with `A/α` as its top-left block.
#[derive(Debug, Clone)]
pub struct BlockEncoding<T> {
    pub alpha: T,
    pub ancillas: usize,
    pub matrix: DenseMatrix<T>,
    pub unitary: DenseMatrix<T>,
}

impl<T: Scalar> BlockEncoding<T> {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    /// `‖UᵀU − I‖_max`
    pub fn orthogonality_residual(&self) -> T {
        let n = self.unitary.rows();
        self.unitary
            .transpose()
            .matmul(&self.unitary)
            .max_abs_diff(&DenseMatrix::identity(n))
    }

    /// `‖U₀₀ − A/α‖_max`
    pub fn top_left_residual(&self) -> T {
        let n = self.dim();
        self.unitary
            .block(0, 0, n, n)
            .max_abs_diff(&self.matrix.scaled(T::one() / self.alpha))
    }
}

/// One-ancilla orthogonal dilation
/// `U = [[A', √(I − A'A'ᵀ)], [√(I − A'ᵀA'), −A'ᵀ]]`, `A' = A/α`.
///
/// Both square roots come from a single eigendecomposition of `A'ᵀA'`: the
/// lower one directly, the upper one as `I − A' G A'ᵀ` with
/// `G = (I + √(I − A'ᵀA'))⁻¹`, which stays accurate when `‖A'‖ = 1`.
pub fn dilate<T: Scalar>(a: &DenseMatrix<T>, alpha: T) -> Result<BlockEncoding<T>, BlockEncError> {
    let n = a.rows();
    if n != a.cols() {
        return Err(BlockEncError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let ap = a.scaled(T::one() / alpha);
    let apt = ap.transpose();
    let (lambda, v) = symmetric_eigen(&apt.matmul(&ap));
    let top = lambda.iter().copied().fold(T::zero(), T::max);
    if top > T::one() + T::lit(1e-10) {
        return Err(BlockEncError::AlphaTooSmall {
            alpha: alpha.to_f64_lossy(),
            norm: (alpha * top.sqrt()).to_f64_lossy(),
        });
    }
    let s: Vec<T> = lambda
        .iter()
        .map(|&l| (T::one() - l.max(T::zero()).min(T::one())).sqrt())
        .collect();
    let vt = v.transpose();
    let s2 = v.matmul(&DenseMatrix::from_diagonal(&s)).matmul(&vt);
    let g_diag: Vec<T> = s.iter().map(|&x| T::one() / (T::one() + x)).collect();
    let g = v.matmul(&DenseMatrix::from_diagonal(&g_diag)).matmul(&vt);
    let s1 = DenseMatrix::identity(n).sub(&ap.matmul(&g).matmul(&apt));

    let mut u = DenseMatrix::zeros(2 * n, 2 * n);
    u.set_block(0, 0, &ap);
    u.set_block(0, n, &s1);
    u.set_block(n, 0, &s2);
    u.set_block(n, n, &apt.scaled(-T::one()));
    Ok(BlockEncoding {
        alpha,
        ancillas: 1,
        matrix: a.clone(),
        unitary: u,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedApplication<T> {
    pub success_prob: T,
    pub post_state: Option<Vec<T>>,
}

/// Applies `U` to `|0⟩|b⟩` and projects the ancilla onto `|0⟩`.
pub fn apply_encoded<T: Scalar>(enc: &BlockEncoding<T>, b: &[T]) -> Result<EncodedApplication<T>, BlockEncError> {
    let n = enc.dim();
    if b.len() != n {
        return Err(BlockEncError::Dimension(format!("state has {} entries, encoding acts on {n}", b.len())));
    }
    let mut padded = b.to_vec();
    padded.resize(enc.unitary.cols(), T::zero());
    let out = enc.unitary.mul_vec(&padded);
    let projected = &out[..n];
    let p = norm2_sq(projected);
    let post_state = (p > T::zero()).then(|| {
        let nrm = p.sqrt();
        projected.iter().map(|&x| x / nrm).collect()
    });
    Ok(EncodedApplication {
        success_prob: p,
        post_state,
    })
}

/// Resource accounting for a product of block encodings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EncodingProduct<T> {
    pub factors: usize,
    pub z: T,
    pub a_naive: usize,
    pub a_comp: usize,
}

/// Ancillas of the compressed product: `max a_k + ⌈log₂ j⌉ + 1`.
pub fn compressed_ancillas(ancillas: &[usize]) -> usize {
    let j = ancillas.len();
    if j == 0 {
        return 0;
    }
    let max = ancillas.iter().copied().max().unwrap_or(0);
    max + ceil_log2(j) + 1
}

pub fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

pub fn product_encoding<T: Scalar>(factors: &[BlockEncoding<T>]) -> Result<EncodingProduct<T>, BlockEncError> {
    if let Some(first) = factors.first() {
        if let Some(bad) = factors.iter().find(|f| f.dim() != first.dim()) {
            return Err(BlockEncError::Dimension(format!(
                "factor of size {} next to size {}",
                bad.dim(),
                first.dim()
            )));
        }
    }
    let ancillas: Vec<usize> = factors.iter().map(|f| f.ancillas).collect();
    Ok(EncodingProduct {
        factors: factors.len(),
        z: factors.iter().fold(T::one(), |z, f| z * f.alpha),
        a_naive: ancillas.iter().sum(),
        a_comp: compressed_ancillas(&ancillas),
    })
}

/// Lifts `u` (acting on one ancilla qubit and an `n`-dimensional system)
/// to `ancillas` qubits, acting on qubit `position` (0 = most significant).
pub fn embed_on_ancilla<T: Scalar>(u: &DenseMatrix<T>, n: usize, position: usize, ancillas: usize) -> DenseMatrix<T> {
    assert_eq!(u.rows(), 2 * n);
    assert!(position < ancillas);
    let dim = (1usize << ancillas) * n;
    let shift = ancillas - 1 - position;
    let mut out = DenseMatrix::zeros(dim, dim);
    for rest in 0..(1usize << ancillas) {
        if rest >> shift & 1 == 1 {
            continue;
        }
        for bo in 0..2 {
            for bi in 0..2 {
                let ro = (rest | bo << shift) * n;
                let co = (rest | bi << shift) * n;
                for i in 0..n {
                    for j in 0..n {
                        out[(ro + i, co + j)] = u[(bo * n + i, bi * n + j)];
                    }
                }
            }
        }
    }
    out
}

/// Dense matrix of one block operation on the padded `(T+c+1)·N` vector:
/// identity on every block except the target, whose diagonal survives only
/// when its content is kept, plus the padded payload shifts.
pub fn operation_matrix<T: Scalar>(
    op: &BlockOperation,
    hierarchy: &GridHierarchy<T>,
    indexer: &BlockIndexer,
    levels: &[usize],
) -> DenseMatrix<T> {
    let n = hierarchy.dof_count(0);
    let blocks = indexer.total_blocks();
    let targets: Vec<usize> = (op.target..op.target + op.multiplicity).collect();
    let mut m = DenseMatrix::zeros(blocks * n, blocks * n);
    for b in 0..blocks {
        if targets.contains(&b) && !op.keeps_target {
            continue;
        }
        for i in 0..n {
            m[(b * n + i, b * n + i)] = T::one();
        }
    }
    let level_of = |b: usize| levels.get(b).copied().unwrap_or(0);
    for &t in &targets {
        for &(src, payload) in &op.sources {
            match hierarchy.payload_matrix(payload) {
                Some(p) => {
                    for i in 0..p.nrows() {
                        for (j, v) in p.row(i) {
                            m[(t * n + i, src * n + j)] += v;
                        }
                    }
                }
                None => {
                    let k = hierarchy.dof_count(level_of(src));
                    for i in 0..k {
                        m[(t * n + i, src * n + i)] += T::one();
                    }
                }
            }
        }
    }
    m
}

/// Outcome of the statevector run of a whole schedule.
#[derive(Debug, Clone, Serialize)]
pub struct TinyQuantumReport {
    pub state_dim: usize,
    pub xi: usize,
    pub operations: usize,
    pub log2_z: f64,
    pub z: f64,
    pub probability_statevector: f64,
    pub probability_formula: f64,
    pub probability_rel_error: f64,
    pub direction_residual: f64,
    pub max_orthogonality_residual: f64,
    pub max_top_left_residual: f64,
    pub product_norm: f64,
    pub z_bounds_product: bool,
}

/// Ancilla qubits of the full product: `1 + ⌈log₂(T+c+1)⌉ + 1`.
pub fn xi_for(indexer: &BlockIndexer) -> usize {
    1 + ceil_log2(indexer.total_blocks()) + 1
}

/// Dilates every operation of a tiny run with `α_i = ‖Op_i‖₂`, applies the
/// dilations to the normalized padded input with a fresh ancilla each and
/// keeps the ancilla-zero branch. By deferred measurement this equals
/// projecting all ancillas of the full product at the end.
pub fn tiny_end_to_end(
    system: &AssembledSystem<f64>,
    config: &MgConfig,
    v0: &[f64],
    copies: CopyPolicy,
) -> Result<TinyQuantumReport, BlockEncError> {
    let hierarchy = GridHierarchy::build(system, config).map_err(QmgError::from)?;
    let indexer = BlockIndexer::for_config(config, copies)?;
    let n = hierarchy.dof_count(0);
    let dim = indexer.total_blocks() * n;
    let xi = xi_for(&indexer);
    let size = dim.saturating_mul(1usize.checked_shl(xi as u32).unwrap_or(usize::MAX));
    if size > STATEVECTOR_CAP {
        return Err(BlockEncError::TooLarge {
            size,
            cap: STATEVECTOR_CAP,
        });
    }
    let initial = HistoryVector::initial(v0, &hierarchy, indexer)?;
    let run = emulate(&hierarchy, indexer, v0)?;
    let levels = indexer.block_levels();

    let x_in = initial.materialize_all();
    let x_out = run.history.materialize_all();
    let in_norm = norm2(&x_in);
    let mut psi: Vec<f64> = x_in.iter().map(|&v| v / in_norm).collect();
    let mut product = DenseMatrix::identity(dim);
    let mut log2_z = 0.0;
    let mut max_orth = 0.0f64;
    let mut max_top = 0.0f64;
    for op in &run.schedule {
        let m = operation_matrix(op, &hierarchy, &indexer, &levels);
        let alpha = m.spectral_norm();
        let enc = dilate(&m, alpha)?;
        max_orth = max_orth.max(enc.orthogonality_residual());
        max_top = max_top.max(enc.top_left_residual());
        let mut full = psi.clone();
        full.resize(2 * dim, 0.0);
        psi = enc.unitary.mul_vec(&full)[..dim].to_vec();
        product = m.matmul(&product);
        log2_z += alpha.log2();
    }
    let p_state = norm2_sq(&psi);
    let p_formula = (norm2_sq(&x_out) / norm2_sq(&x_in)) * (-2.0 * log2_z).exp2();
    let out_norm = norm2(&x_out);
    let psi_norm = p_state.sqrt();
    let direction_residual = psi
        .iter()
        .zip(&x_out)
        .map(|(&a, &b)| (a / psi_norm - b / out_norm).powi(2))
        .sum::<f64>()
        .sqrt();
    let product_norm = product.spectral_norm();
    Ok(TinyQuantumReport {
        state_dim: dim,
        xi,
        operations: run.schedule.len(),
        log2_z,
        z: log2_z.exp2(),
        probability_statevector: p_state,
        probability_formula: p_formula,
        probability_rel_error: (p_state - p_formula).abs() / p_formula,
        direction_residual,
        max_orthogonality_residual: max_orth,
        max_top_left_residual: max_top,
        product_norm,
        z_bounds_product: log2_z.exp2() * (1.0 + 1e-12) >= product_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(d: &[f64]) -> DenseMatrix<f64> {
        DenseMatrix::from_diagonal(d)
    }

    #[test]
    fn dilation_of_identity() {
        let enc = dilate(&DenseMatrix::<f64>::identity(3), 1.0).unwrap();
        let mut expected = DenseMatrix::identity(6);
        for i in 3..6 {
            expected[(i, i)] = -1.0;
        }
        assert!(enc.unitary.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn dilation_of_zero() {
        let enc = dilate(&DenseMatrix::<f64>::zeros(4, 4), 1.0).unwrap();
        assert!(enc.orthogonality_residual() < 1e-15);
        assert!(enc.unitary.block(0, 0, 4, 4).max_abs() == 0.0);
    }

    #[test]
    fn dilation_of_diagonal() {
        let enc = dilate(&diag(&[0.6, 0.8]), 1.0).unwrap();
        assert!(enc.top_left_residual() < 1e-15);
        assert!(enc.orthogonality_residual() <= 1e-12);
        let out = apply_encoded(&enc, &[1.0, 0.0]).unwrap();
        assert!((out.success_prob - 0.36).abs() < 1e-12);
        assert_eq!(out.post_state.unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn dilation_rejects_small_alpha() {
        let err = dilate(&diag(&[2.0, 0.5]), 1.0).unwrap_err();
        assert!(matches!(err, BlockEncError::AlphaTooSmall { .. }));
        assert!(dilate(&DenseMatrix::<f64>::zeros(2, 3), 1.0).is_err());
    }

    #[test]
    fn identity_encoding_keeps_state() {
        let enc = dilate(&DenseMatrix::<f64>::identity(2), 1.0).unwrap();
        let b = [0.6, -0.8];
        let out = apply_encoded(&enc, &b).unwrap();
        assert!((out.success_prob - 1.0).abs() < 1e-15);
        assert_eq!(out.post_state.unwrap(), b.to_vec());
    }

    #[test]
    fn zero_product_has_no_post_state() {
        let enc = dilate(&DenseMatrix::<f64>::zeros(2, 2), 1.0).unwrap();
        let out = apply_encoded(&enc, &[1.0, 0.0]).unwrap();
        assert_eq!(out.success_prob, 0.0);
        assert!(out.post_state.is_none());
    }

    #[test]
    fn unit_norm_nonnormal_matrix() {
        // rank-deficient, non-symmetric, norm exactly one
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.5]]);
        let alpha = a.spectral_norm();
        assert!((alpha - 2f64.sqrt()).abs() < 1e-14);
        let enc = dilate(&a, alpha).unwrap();
        assert!(enc.orthogonality_residual() < 1e-14);
    }

    #[test]
    fn jacobi_reconstructs() {
        let m = DenseMatrix::from_rows(&[
            vec![4.0, 1.0, 0.0, 0.0],
            vec![1.0, 3.0, 0.0, 0.0],
            vec![0.0, 0.0, 2.0, -1.0],
            vec![0.0, 0.0, -1.0, 2.0],
        ]);
        let (vals, v) = symmetric_eigen(&m);
        let back = v.matmul(&diag(&vals)).matmul(&v.transpose());
        assert!(back.max_abs_diff(&m) < 1e-14);
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((sorted[0] - 1.0).abs() < 1e-14);
        assert!((sorted[3] - (3.5 + 1.25f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn lemma_three_counts() {
        assert_eq!(compressed_ancillas(&[1, 1]), 3);
        assert_eq!(compressed_ancillas(&[1; 4]), 4);
        assert_eq!(compressed_ancillas(&[1; 8]), 5);
        assert_eq!(compressed_ancillas(&[2, 5, 1]), 8);
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(5), 3);
        assert_eq!(ceil_log2(8), 3);
    }

    #[test]
    fn product_accounting() {
        let a = dilate(&diag(&[1.0, 0.5]), 2.0).unwrap();
        let b = dilate(&diag(&[1.0, 0.5]), 3.0).unwrap();
        let p = product_encoding(&[a.clone(), b]).unwrap();
        assert_eq!(p.z, 6.0);
        assert_eq!((p.a_naive, p.a_comp), (2, 3));
        let unit = dilate(&diag(&[0.3]), 1.0).unwrap();
        let ones = product_encoding(&[unit.clone(), unit.clone(), unit]).unwrap();
        assert_eq!(ones.z, 1.0);
        let c = dilate(&DenseMatrix::<f64>::identity(3), 1.0).unwrap();
        assert!(product_encoding(&[a, c]).is_err());
    }

    #[test]
    fn embedding_places_ancilla() {
        let enc = dilate(&diag(&[0.5]), 1.0).unwrap();
        let e0 = embed_on_ancilla(&enc.unitary, 1, 0, 2);
        let e1 = embed_on_ancilla(&enc.unitary, 1, 1, 2);
        assert_eq!(e0[(0, 0)], 0.5);
        assert_eq!(e1[(0, 0)], 0.5);
        // qubit 0 flips index 0 <-> 2, qubit 1 flips 0 <-> 1
        assert!(e0[(2, 0)] != 0.0 && e0[(1, 0)] == 0.0);
        assert!(e1[(1, 0)] != 0.0 && e1[(2, 0)] == 0.0);
        let ident = DenseMatrix::identity(4);
        assert!(e0.transpose().matmul(&e0).max_abs_diff(&ident) < 1e-15);
    }
}
