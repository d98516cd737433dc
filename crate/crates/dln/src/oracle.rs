//! Independent reference implementations used by the audit battery and the
//! test suite.
//!
//! Everything here deliberately avoids the code paths it is used to check:
//! the power-sum operator goes through symmetric eigendecompositions of WWᵀ
//! and WᵀW rather than the SVD-based spectral route, gradients come from
//! central finite differences, and Gram matrices are assembled from raw
//! Frobenius inner products.

use nalgebra::DVector;
use rand::Rng;

use crate::flows::LossSpec;
use crate::geometry::{self, antisym_unit, PullbackBlocks};
use crate::matops::{self, Matrix};
use crate::network::{BalancedCoords, NetworkState, TangentStack};
use crate::thermo;

pub fn uniform<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(-1.0..1.0)
}

pub fn random_matrix<R: Rng>(d: usize, scale: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(d, d, |_, _| scale * uniform(rng))
}

/// Random matrix resampled until comfortably full rank.
pub fn random_full_rank<R: Rng>(d: usize, rng: &mut R) -> Matrix {
    loop {
        let w = random_matrix(d, 1.0, rng);
        let svd = w.clone().svd(false, false);
        let min = svd.singular_values[d - 1];
        if min > 0.05 {
            return w;
        }
    }
}

pub fn random_antisym<R: Rng>(d: usize, rng: &mut R) -> Matrix {
    let a = random_matrix(d, 1.0, rng);
    0.5 * (&a - a.transpose())
}

/// Fractional power of a symmetric psd matrix by eigendecomposition.
/// Tiny negative eigenvalues from roundoff are clamped to zero.
pub fn sym_power(m: &Matrix, alpha: f64) -> Matrix {
    let eig = matops::symmetrize(m).symmetric_eigen();
    let powered = eig.eigenvalues.map(|x| x.max(0.0).powf(alpha));
    &eig.eigenvectors * Matrix::from_diagonal(&powered) * eig.eigenvectors.transpose()
}

/// The literal power sum Σ_{p=1}^N (WWᵀ)^{(N-p)/N} Z (WᵀW)^{(p-1)/N},
/// with fractional powers taken by spectral calculus of WWᵀ and WᵀW.
pub fn apply_a_power_sum(w: &Matrix, z: &Matrix, n: usize) -> Matrix {
    let d = w.nrows();
    let ww = w * w.transpose();
    let wtw = w.transpose() * w;
    let nf = n as f64;
    let mut out = Matrix::zeros(d, d);
    for p in 1..=n {
        let left = sym_power(&ww, (n - p) as f64 / nf);
        let right = sym_power(&wtw, (p - 1) as f64 / nf);
        out += left * z * right;
    }
    out
}

/// Central finite differences of a loss value.
pub fn fd_loss_gradient(loss: &LossSpec, w: &Matrix, h: f64) -> Matrix {
    let d = w.nrows();
    Matrix::from_fn(d, d, |i, j| {
        let mut up = w.clone();
        let mut dn = w.clone();
        up[(i, j)] += h;
        dn[(i, j)] -= h;
        (loss.value(&up) - loss.value(&dn)) / (2.0 * h)
    })
}

/// Central finite differences of the lifted loss E∘φ with respect to every
/// entry of every layer.
pub fn fd_lifted_gradient(state: &NetworkState, loss: &LossSpec, h: f64) -> TangentStack {
    let n = state.depth();
    let d = state.width();
    let lifted = |s: &NetworkState| loss.value(&s.end_to_end());
    let mut layers_desc = Vec::with_capacity(n);
    for p in (1..=n).rev() {
        let grad = Matrix::from_fn(d, d, |i, j| {
            let mut up = state.clone();
            let mut dn = state.clone();
            let mut bump = TangentStack::zeros(d, n);
            let mut e = Matrix::zeros(d, d);
            e[(i, j)] = 1.0;
            bump.set_layer(p, e);
            up = up.translate(h, &bump);
            dn = dn.translate(-h, &bump);
            (lifted(&up) - lifted(&dn)) / (2.0 * h)
        });
        layers_desc.push(grad);
    }
    TangentStack::new(layers_desc)
}

/// The product-rule combination Σ_p W_N ⋯ V_p ⋯ W_1 assembling the
/// end-to-end rate from a layerwise field.
pub fn end_to_end_rate_from_layers(state: &NetworkState, field: &TangentStack) -> Matrix {
    geometry::push_forward(state, field)
}

/// Central finite differences of the orbit entropy as a function of W.
pub fn fd_entropy_gradient(w: &Matrix, n: usize, h: f64) -> Matrix {
    let d = w.nrows();
    let s_of = |m: &Matrix| {
        let svd = matops::svd_ordered(m).expect("finite perturbation");
        thermo::entropy(svd.sigma_slice(), n).expect("positive sigma")
    };
    Matrix::from_fn(d, d, |i, j| {
        let mut up = w.clone();
        let mut dn = w.clone();
        up[(i, j)] += h;
        dn[(i, j)] -= h;
        (s_of(&up) - s_of(&dn)) / (2.0 * h)
    })
}

/// One-sided finite difference of the parametrization along (θ, A):
/// (𝔷(Λ + εθ, e^{εA_p} Q_p) − 𝔷(Λ, Q)) / ε.
pub fn fd_differential_dz(
    coords: &BalancedCoords,
    theta: &DVector<f64>,
    a: &[Matrix],
    eps: f64,
) -> TangentStack {
    let n = coords.depth();
    let lambda = coords.lambda() + eps * theta;
    let frames_desc: Vec<Matrix> = (0..=n)
        .rev()
        .map(|p| (eps * &a[p]).exp() * coords.frame(p))
        .collect();
    let moved = BalancedCoords::new(lambda, frames_desc).expect("perturbed coords valid");
    let base = coords.to_state();
    let stepped = moved.to_state();
    let layers_desc: Vec<Matrix> = (1..=n)
        .rev()
        .map(|p| (stepped.layer(p) - base.layer(p)) / eps)
        .collect();
    TangentStack::new(layers_desc)
}

/// The standard parameter directions in the canonical order: d diagonal
/// directions, then for each pair (k < l) the rotation directions at depths
/// p = 0…N.
pub fn standard_directions(coords: &BalancedCoords) -> Vec<TangentStack> {
    let d = coords.width();
    let n = coords.depth();
    let mut dirs = Vec::with_capacity(d + (n + 1) * d * (d - 1) / 2);
    for i in 1..=d {
        dirs.push(geometry::diag_direction(coords, i));
    }
    for k in 1..=d {
        for l in (k + 1)..=d {
            for p in 0..=n {
                dirs.push(geometry::rotation_direction(coords, p, k, l));
            }
        }
    }
    dirs
}

/// Gram matrix of a family of stacks under the stack Frobenius product.
pub fn gram_of_stacks(vectors: &[TangentStack]) -> Matrix {
    let m = vectors.len();
    let mut g = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = vectors[i].inner(&vectors[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Numeric pullback Gram over the standard parameter basis.
pub fn numeric_pullback_gram(coords: &BalancedCoords) -> Matrix {
    gram_of_stacks(&standard_directions(coords))
}

/// The analytic pullback blocks assembled into one matrix in the same
/// ordering as [`numeric_pullback_gram`].
pub fn assemble_pullback_blocks(blocks: &PullbackBlocks, d: usize, n: usize) -> Matrix {
    let total = d + (n + 1) * d * (d - 1) / 2;
    let mut g = Matrix::zeros(total, total);
    for i in 0..d {
        g[(i, i)] = blocks.diagonal_scale;
    }
    let mut offset = d;
    for block in &blocks.pair_blocks {
        let b = &block.tridiagonal;
        for i in 0..=n {
            for j in 0..=n {
                g[(offset + i, offset + j)] = b[(i, j)];
            }
        }
        offset += n + 1;
    }
    g
}

/// log √det of the Gram matrix of the group directions (depths 1…N−1),
/// the orbit-volume oracle for the entropy formula.
pub fn group_gram_log_sqrt_det(coords: &BalancedCoords) -> f64 {
    let d = coords.width();
    let n = coords.depth();
    let mut dirs = Vec::new();
    for p in 1..n {
        for k in 1..=d {
            for l in (k + 1)..=d {
                dirs.push(geometry::rotation_direction(coords, p, k, l));
            }
        }
    }
    if dirs.is_empty() {
        return 0.0;
    }
    let gram = gram_of_stacks(&dirs);
    let chol = gram.cholesky().expect("group Gram is positive definite");
    chol.l().diagonal().iter().map(|x| x.ln()).sum()
}

/// Residual of the least-squares projection of `v` onto the span of
/// `directions` (Frobenius norm of the leftover, computed explicitly to
/// avoid cancellation).
pub fn projection_residual(v: &TangentStack, directions: &[TangentStack]) -> f64 {
    let m = directions.len();
    let gram = gram_of_stacks(directions);
    let b = DVector::from_fn(m, |i, _| directions[i].inner(v));
    let coeffs = gram.lu().solve(&b).expect("projection Gram is invertible");
    let mut leftover = v.clone();
    for (c, dir) in coeffs.iter().zip(directions.iter()) {
        leftover.axpy(-c, dir);
    }
    leftover.norm()
}

/// √det of the numeric Gram, in the depth-N metric downstairs, of the
/// coordinate directions of the map (Σ, Q_0, Q_N) → W = Q_N Σ Q_0ᵀ:
/// u_k v_kᵀ for each σ_k, Q_N α_{kl} Σ Q_0ᵀ and −Q_N Σ α_{kl} Q_0ᵀ for each
/// pair. This is the Jacobian oracle for the volume density.
pub fn svd_coordinate_volume(coords: &BalancedCoords) -> f64 {
    let d = coords.width();
    let n = coords.depth();
    let svd = coords.end_to_end_svd();
    let sigma_mat = Matrix::from_diagonal(&svd.sigma);
    let mut dirs: Vec<Matrix> = Vec::new();
    for k in 0..d {
        let u = svd.q_left.column(k).into_owned();
        let v = svd.q_right.column(k).into_owned();
        dirs.push(u * v.transpose());
    }
    for k in 1..=d {
        for l in (k + 1)..=d {
            let alpha = antisym_unit(d, k, l);
            dirs.push(&svd.q_left * &alpha * &sigma_mat * svd.q_right.transpose());
            dirs.push(-(&svd.q_left * &sigma_mat * &alpha * svd.q_right.transpose()));
        }
    }
    let m = dirs.len();
    let mut gram = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let g = geometry::metric_gn(&svd, &dirs[i], &dirs[j], n).expect("full rank");
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    let chol = gram
        .cholesky()
        .expect("coordinate Gram is positive definite");
    chol.l().diagonal().iter().product()
}

/// Brute-force RK4 integration of the deterministic interacting-particle
/// system ẋ_i = Σ_{j≠i} 1/(x_i − x_j).
pub fn dyson_deterministic_rk4(x0: &[f64], t_end: f64, dt: f64) -> Vec<f64> {
    let field = |x: &Vec<f64>| -> Vec<f64> {
        let d = x.len();
        (0..d)
            .map(|i| {
                (0..d)
                    .filter(|&j| j != i)
                    .map(|j| 1.0 / (x[i] - x[j]))
                    .sum()
            })
            .collect()
    };
    let mut x: Vec<f64> = x0.to_vec();
    let steps = (t_end / dt).round() as usize;
    let axpy = |x: &Vec<f64>, c: f64, k: &Vec<f64>| -> Vec<f64> {
        x.iter().zip(k.iter()).map(|(a, b)| a + c * b).collect()
    };
    for _ in 0..steps {
        let k1 = field(&x);
        let k2 = field(&axpy(&x, 0.5 * dt, &k1));
        let k3 = field(&axpy(&x, 0.5 * dt, &k2));
        let k4 = field(&axpy(&x, dt, &k3));
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sym_power_agrees_with_integer_powers() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let a = random_matrix(3, 1.0, &mut rng);
        let m = &a * a.transpose();
        let squared = sym_power(&m, 2.0);
        assert!((&squared - &m * &m).norm() <= 1e-10 * m.norm_squared().max(1.0));
        let identity = sym_power(&m, 0.0);
        assert!((identity - Matrix::identity(3, 3)).norm() <= 1e-11);
    }

    #[test]
    fn dyson_brute_force_matches_analytic_gap() {
        // Two symmetric particles: the gap obeys g(t) = √(g0² + 4t).
        let x = dyson_deterministic_rk4(&[-1.0, 1.0], 3.0, 1e-4);
        let gap = x[1] - x[0];
        assert!((gap - 4.0).abs() <= 1e-8, "gap {gap}");
    }

    #[test]
    fn entropy_gram_oracle_small_case() {
        // d = 2, N = 2, σ = (2, 1): the group Gram is the 1×1 matrix
        // [λ₁² + λ₂²] = [3], so log √det = ½ log 3 = entropy.
        let lambda = DVector::from_vec(vec![2.0f64.sqrt(), 1.0]);
        let coords = BalancedCoords::new(lambda, vec![Matrix::identity(2, 2); 3]).unwrap();
        let oracle = group_gram_log_sqrt_det(&coords);
        assert!((oracle - 0.5 * 3.0f64.ln()).abs() <= 1e-12);
        let s = thermo::entropy(&[2.0, 1.0], 2).unwrap();
        assert!((oracle - s).abs() <= 1e-12);
    }
}
