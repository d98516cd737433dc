//! Matrix primitives consumed by every other module: ordered SVD, polar
//! decompositions, psd square roots, Vandermonde products and Frobenius
//! inner products.
//!
//! Everything here targets small dense square matrices (d ≲ a few dozen), so
//! factorizations are computed spectrally and accuracy wins over asymptotic
//! cost. All functions are pure and safe to call concurrently.

use nalgebra::{DMatrix, DVector};

use crate::error::{DlnError, Result};
use crate::tol;

/// Square real matrix with f64 entries. Rows = cols = d throughout the crate.
pub type Matrix = DMatrix<f64>;

/// Ordered singular value decomposition W = qLeft · diag(sigma) · qRightᵀ.
///
/// Singular values are sorted in descending order and the gauge is fixed by
/// requiring the first nonzero entry of each left singular vector to be
/// nonnegative, so the output is a deterministic function of the input.
#[derive(Clone, Debug)]
pub struct SvdTriple {
    pub q_left: Matrix,
    pub sigma: DVector<f64>,
    pub q_right: Matrix,
}

impl SvdTriple {
    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    /// qLeft · diag(sigma) · qRightᵀ.
    pub fn reconstruct(&self) -> Matrix {
        &self.q_left * Matrix::from_diagonal(&self.sigma) * self.q_right.transpose()
    }

    pub fn sigma_slice(&self) -> &[f64] {
        self.sigma.as_slice()
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma[0]
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma[self.sigma.len() - 1]
    }
}

/// Polar factorization of a square matrix: an orthogonal factor paired with
/// a symmetric positive semidefinite one.
///
/// `rank_deficient` is set when the orthogonal factor was completed from the
/// SVD frames because some singular values vanish; the completion is still
/// deterministic.
#[derive(Clone, Debug)]
pub struct PolarPair {
    pub orthogonal: Matrix,
    pub psd: Matrix,
    pub rank_deficient: bool,
}

fn check_square_finite(w: &Matrix, what: &str) -> Result<()> {
    if w.nrows() != w.ncols() {
        return Err(DlnError::NotSquare {
            rows: w.nrows(),
            cols: w.ncols(),
        });
    }
    if !w.iter().all(|x| x.is_finite()) {
        return Err(DlnError::NonFinite(what.to_string()));
    }
    Ok(())
}

/// Deterministic ordered SVD.
///
/// Descending singular values; the sign of each (left, right) singular-vector
/// pair is fixed so that the first nonzero entry of the left vector is
/// nonnegative.
pub fn svd_ordered(w: &Matrix) -> Result<SvdTriple> {
    check_square_finite(w, "svd input")?;
    let svd = w.clone().svd(true, true);
    let mut u = svd.u.expect("u requested");
    let mut v_t = svd.v_t.expect("v_t requested");
    let sigma = svd.singular_values;

    // nalgebra's `svd` already sorts descending; fix the sign gauge.
    for k in 0..sigma.len() {
        let lead = u.column(k).iter().copied().find(|x| *x != 0.0);
        if let Some(x) = lead {
            if x < 0.0 {
                u.column_mut(k).neg_mut();
                v_t.row_mut(k).neg_mut();
            }
        }
    }
    Ok(SvdTriple {
        q_left: u,
        sigma,
        q_right: v_t.transpose(),
    })
}

/// Left polar decomposition W = Q P with P = √(WᵀW) psd and Q orthogonal.
pub fn polar_left(w: &Matrix) -> Result<PolarPair> {
    let svd = svd_ordered(w)?;
    let rank_deficient = svd.sigma_min() <= tol::RANK_REL * svd.sigma_max().max(1.0);
    let p = &svd.q_right * Matrix::from_diagonal(&svd.sigma) * svd.q_right.transpose();
    let q = &svd.q_left * svd.q_right.transpose();
    Ok(PolarPair {
        orthogonal: q,
        psd: symmetrize(&p),
        rank_deficient,
    })
}

/// Right polar decomposition W = R Uᵀ with R = √(WWᵀ) psd and U orthogonal.
pub fn polar_right(w: &Matrix) -> Result<PolarPair> {
    let svd = svd_ordered(w)?;
    let rank_deficient = svd.sigma_min() <= tol::RANK_REL * svd.sigma_max().max(1.0);
    let r = &svd.q_left * Matrix::from_diagonal(&svd.sigma) * svd.q_left.transpose();
    let u = &svd.q_right * svd.q_left.transpose();
    Ok(PolarPair {
        orthogonal: u,
        psd: symmetrize(&r),
        rank_deficient,
    })
}

/// Spectral psd square root of a symmetric matrix.
///
/// Eigenvalues in [-tol, 0) are clamped to zero; anything more negative is a
/// domain error (the matrix is not psd).
pub fn psd_sqrt(m: &Matrix) -> Result<Matrix> {
    check_square_finite(m, "psd sqrt input")?;
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let floor = -tol::PSD_NEG_REL * scale.max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for x in roots.iter_mut() {
        if *x < floor {
            return Err(DlnError::NotPsd { min_eig: *x });
        }
        *x = x.max(0.0).sqrt();
    }
    let root = &eig.eigenvectors * Matrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok(symmetrize(&root))
}

/// ∏_{j<k} (a_k − a_j); the empty product (length 1) is 1.
pub fn vandermonde(values: &[f64]) -> f64 {
    let mut prod = 1.0;
    for k in 1..values.len() {
        for j in 0..k {
            prod *= values[k] - values[j];
        }
    }
    prod
}

/// Frobenius inner product Tr(AᵀB).
pub fn frob_inner(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Frobenius norm.
pub fn frob_norm(a: &Matrix) -> f64 {
    a.norm()
}

/// (M + Mᵀ)/2.
pub fn symmetrize(m: &Matrix) -> Matrix {
    0.5 * (m + m.transpose())
}

/// ‖QᵀQ − I‖_F.
pub fn orthogonality_defect(q: &Matrix) -> f64 {
    let d = q.nrows();
    (q.transpose() * q - Matrix::identity(d, d)).norm()
}
