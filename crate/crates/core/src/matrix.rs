//! Dense factorizations used by inference and smoothing.
//!
//! nalgebra does the heavy lifting; these wrappers pin the conventions the
//! rest of the crate relies on (row-major [`Tensor`] storage, jitter
//! escalation, singular-value cutoff, eigenvalue clipping).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::nd::tensor::Tensor;

pub fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Tensor {
    let mut out = Tensor::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.set(i, j, m[(i, j)]);
        }
    }
    out
}

/// Diagonal jitter levels tried when a Gram matrix fails to factor.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Cholesky factor (lower) of `k + jitter * I`, escalating jitter through
/// `JITTER_LADDER` until factorization succeeds.
pub fn cholesky_jittered(k: &Tensor) -> Result<(Tensor, f64)> {
    let n = k.rows();
    if n != k.cols() {
        return Err(Error::ShapeMismatch {
            context: "cholesky_jittered",
            expected: "square matrix".into(),
            got: format!("{}x{}", k.rows(), k.cols()),
        });
    }
    let base = to_dmatrix(k);
    for &j in JITTER_LADDER.iter() {
        let mut m = base.clone();
        for i in 0..n {
            m[(i, i)] += j;
        }
        if let Some(ch) = nalgebra::Cholesky::new(m) {
            return Ok((from_dmatrix(&ch.l()), j));
        }
    }
    Err(Error::Linalg(format!(
        "Cholesky failed for {n}x{n} matrix even with jitter {:.0e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// Solve L z = b by forward substitution, L lower triangular.
pub fn forward_sub(l: &Tensor, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    debug_assert_eq!(b.len(), n);
    let mut z = b.to_vec();
    for i in 0..n {
        let mut acc = z[i];
        let row = l.row(i);
        for j in 0..i {
            acc -= row[j] * z[j];
        }
        z[i] = acc / row[i];
    }
    z
}

/// Solve L L^T x = b given the lower factor.
pub fn chol_solve(l: &Tensor, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut z = forward_sub(l, b);
    // backward: L^T x = z
    for i in (0..n).rev() {
        let mut acc = z[i];
        for j in i + 1..n {
            acc -= l.get(j, i) * z[j];
        }
        z[i] = acc / l.get(i, i);
    }
    z
}

/// Inverse of L L^T from the lower factor.
pub fn chol_inverse(l: &Tensor) -> Tensor {
    let n = l.rows();
    let mut inv = Tensor::zeros(n, n);
    let mut e = vec![0.0; n];
    for c in 0..n {
        e[c] = 1.0;
        let col = chol_solve(l, &e);
        e[c] = 0.0;
        for (r, v) in col.iter().enumerate() {
            inv.set(r, c, *v);
        }
    }
    // Symmetrize to scrub accumulation asymmetry.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv.get(i, j) + inv.get(j, i));
            inv.set(i, j, v);
            inv.set(j, i, v);
        }
    }
    inv
}

pub fn chol_logdet(l: &Tensor) -> f64 {
    (0..l.rows()).map(|i| l.get(i, i).ln()).sum::<f64>() * 2.0
}

/// Moore-Penrose pseudo-inverse via SVD. Singular values at or below
/// `rcond * sigma_max` are treated as zero. Returns the inverse and the
/// numerical rank.
pub fn pinv(a: &Tensor, rcond: f64) -> Result<(Tensor, usize)> {
    let m = to_dmatrix(a);
    let svd = m.svd(true, true);
    let u = svd.u.as_ref().ok_or_else(|| Error::Linalg("SVD did not produce U".into()))?;
    let vt = svd.v_t.as_ref().ok_or_else(|| Error::Linalg("SVD did not produce V^T".into()))?;
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return Err(Error::Linalg("pseudo-inverse of an all-zero matrix".into()));
    }
    let cut = rcond * smax;
    let mut rank = 0usize;
    let sinv: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|&s| {
            if s > cut {
                rank += 1;
                1.0 / s
            } else {
                0.0
            }
        })
        .collect();
    // pinv = V * diag(sinv) * U^T
    let k = sinv.len();
    let mut out = DMatrix::zeros(a.cols(), a.rows());
    for i in 0..a.cols() {
        for j in 0..a.rows() {
            let mut acc = 0.0;
            for (r, &si) in sinv.iter().enumerate().take(k) {
                acc += vt[(r, i)] * si * u[(j, r)];
            }
            out[(i, j)] = acc;
        }
    }
    Ok((from_dmatrix(&out), rank))
}

/// Symmetric eigendecomposition a = V diag(lambda) V^T of the symmetrized
/// input, eigenvalues unmodified (negatives included).
pub fn sym_eig(a: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    if a.rows() != a.cols() {
        return Err(Error::ShapeMismatch {
            context: "sym_eig",
            expected: "square matrix".into(),
            got: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    let m = to_dmatrix(a);
    let sym = (&m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    Ok((from_dmatrix(&eig.eigenvectors), eig.eigenvalues.iter().copied().collect()))
}

/// Symmetric eigendecomposition with eigenvalues clipped at zero.
/// Returns (V, clipped lambda, number clipped).
pub fn sym_eig_clipped(a: &Tensor) -> Result<(Tensor, Vec<f64>, usize)> {
    let (vecs, mut lambda, mut clipped) = sym_eig(a).map(|(v, l)| (v, l, 0usize))?;
    for l in &mut lambda {
        if *l < 0.0 {
            clipped += 1;
            *l = 0.0;
        }
    }
    Ok((vecs, lambda, clipped))
}

/// Solve a symmetric positive-definite system without jitter. Errors if the
/// matrix fails to factor (caller treats that as a singular system).
pub fn solve_spd(a: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    let m = to_dmatrix(a);
    let ch = nalgebra::Cholesky::new(m)
        .ok_or_else(|| Error::Linalg("matrix is not positive definite".into()))?;
    let l = from_dmatrix(&ch.l());
    Ok(chol_solve(&l, b))
}

/// Inverse of a symmetric positive-definite matrix, no jitter.
pub fn inverse_spd(a: &Tensor) -> Result<Tensor> {
    let m = to_dmatrix(a);
    let ch = nalgebra::Cholesky::new(m)
        .ok_or_else(|| Error::Linalg("matrix is not positive definite".into()))?;
    Ok(from_dmatrix(&ch.inverse()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd3() -> Tensor {
        // A = B B^T + I with fixed B, guaranteed SPD.
        let b = Tensor::new(3, 3, vec![1.0, 0.2, -0.5, 0.0, 2.0, 0.3, 0.7, -0.1, 1.5]).unwrap();
        let mut a = b.matmul(&b.transposed()).unwrap();
        for i in 0..3 {
            a.set(i, i, a.get(i, i) + 1.0);
        }
        a
    }

    #[test]
    fn cholesky_solve_recovers_rhs() {
        let a = spd3();
        let x_true = [0.3, -1.2, 2.0];
        let b: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| a.get(i, j) * x_true[j]).sum())
            .collect();
        let (l, jit) = cholesky_jittered(&a).unwrap();
        assert_eq!(jit, 0.0);
        let x = chol_solve(&l, &b);
        for (xi, ti) in x.iter().zip(x_true.iter()) {
            assert!((xi - ti).abs() < 1e-12);
        }
    }

    #[test]
    fn chol_inverse_matches_identity_product() {
        let a = spd3();
        let (l, _) = cholesky_jittered(&a).unwrap();
        let inv = chol_inverse(&l);
        let prod = a.matmul(&inv).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get(i, j) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn jitter_escalates_for_singular_gram() {
        // Rank-1 matrix: plain Cholesky fails, jitter rescues.
        let v = [1.0, 2.0, 3.0];
        let mut a = Tensor::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                a.set(i, j, v[i] * v[j]);
            }
        }
        let (_, jit) = cholesky_jittered(&a).unwrap();
        assert!(jit > 0.0);
    }

    #[test]
    fn pinv_of_invertible_matrix_is_its_inverse() {
        let a = spd3();
        let (p, rank) = pinv(&a, 1e-10).unwrap();
        assert_eq!(rank, 3);
        let prod = a.matmul(&p).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get(i, j) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eigen_clipping_zeroes_negative_modes() {
        let a = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, -0.5]).unwrap();
        let (_, lambda, clipped) = sym_eig_clipped(&a).unwrap();
        assert_eq!(clipped, 1);
        assert!(lambda.iter().all(|&l| l >= 0.0));
        assert!((lambda.iter().cloned().fold(0.0_f64, f64::max) - 1.0).abs() < 1e-12);
    }
}
