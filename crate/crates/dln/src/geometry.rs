//! Exact Riemannian structure: the depth-N metric downstairs and its
//! infinite-depth limit, the differential of the singular-value
//! parametrization, the orthonormal tangent basis upstairs, the
//! block-tridiagonal pullback metric, submersion diagnostics and the
//! volume-form density.
//!
//! Tangent vectors upstairs are stored as explicit layer stacks; nothing is
//! kept in implicit coordinates, so every inner product here can be checked
//! against a direct Frobenius computation.

use nalgebra::DVector;

use crate::error::{DlnError, Result};
use crate::flows::{self, LossSpec};
use crate::matops::{self, Matrix, SvdTriple};
use crate::network::{BalancedCoords, NetworkState, TangentStack};
use crate::tol;

/// α_{kl} = (e_k e_lᵀ − e_l e_kᵀ)/√2, the unit-norm antisymmetric basis
/// matrix (1-based indices).
pub fn antisym_unit(d: usize, k: usize, l: usize) -> Matrix {
    let s = 1.0 / 2.0f64.sqrt();
    let mut a = Matrix::zeros(d, d);
    a[(k - 1, l - 1)] = s;
    a[(l - 1, k - 1)] = -s;
    a
}

fn check_antisymmetric(a: &Matrix, idx: usize) -> Result<()> {
    let defect = (a + a.transpose()).norm();
    if defect > tol::SYMMETRY * (1.0 + a.norm()) {
        return Err(DlnError::Domain(format!(
            "matrix A_{idx} is not antisymmetric (defect {defect:.3e})"
        )));
    }
    Ok(())
}

/// Differential of the parametrization W_p = Q_p Λ Q_{p-1}ᵀ along the curve
/// Λ + tθ, Q_p ← e^{t A_p} Q_p:
///   layer p = A_p W_p + Q_p diag(θ) Q_{p-1}ᵀ − W_p A_{p-1}.
///
/// `a` lists (A_0, A_1, …, A_N) in ascending index order; each must be
/// antisymmetric.
pub fn differential_dz(
    coords: &BalancedCoords,
    theta: &DVector<f64>,
    a: &[Matrix],
) -> Result<TangentStack> {
    let n = coords.depth();
    let d = coords.width();
    if theta.len() != d {
        return Err(DlnError::Dimension(format!(
            "theta has length {}, expected {}",
            theta.len(),
            d
        )));
    }
    if a.len() != n + 1 {
        return Err(DlnError::Dimension(format!(
            "expected {} antisymmetric matrices, got {}",
            n + 1,
            a.len()
        )));
    }
    for (idx, m) in a.iter().enumerate() {
        check_antisymmetric(m, idx)?;
    }
    let state = coords.to_state();
    let theta_mat = Matrix::from_diagonal(theta);
    let mut layers_desc = Vec::with_capacity(n);
    for p in (1..=n).rev() {
        let w_p = state.layer(p);
        let layer = &a[p] * w_p + coords.frame(p) * &theta_mat * coords.frame(p - 1).transpose()
            - w_p * &a[p - 1];
        layers_desc.push(layer);
    }
    Ok(TangentStack::new(layers_desc))
}

/// The standard diagonal parameter direction: D𝔷(e_i, 0) (1-based i).
pub fn diag_direction(coords: &BalancedCoords, i: usize) -> TangentStack {
    let n = coords.depth();
    let d = coords.width();
    let mut theta = DVector::zeros(d);
    theta[i - 1] = 1.0;
    let zeros = vec![Matrix::zeros(d, d); n + 1];
    differential_dz(coords, &theta, &zeros).expect("zero matrices are antisymmetric")
}

/// The standard rotation direction at depth p: D𝔷(0, A) with the single
/// nonzero entry A_p = Q_p α_{kl} Q_pᵀ, i.e. the frame-aligned copy of the
/// unit antisymmetric basis matrix. 0 ≤ p ≤ N, 1 ≤ k < l ≤ d.
pub fn rotation_direction(coords: &BalancedCoords, p: usize, k: usize, l: usize) -> TangentStack {
    let n = coords.depth();
    let d = coords.width();
    let mut a = vec![Matrix::zeros(d, d); n + 1];
    let alpha = antisym_unit(d, k, l);
    a[p] = coords.frame(p) * alpha * coords.frame(p).transpose();
    let theta = DVector::zeros(d);
    differential_dz(coords, &theta, &a).expect("conjugated alpha is antisymmetric")
}

/// Analytic pullback metric in the standard parameter basis: the diagonal
/// sector is N·I_d and each pair (k, l) carries an (N+1)×(N+1) symmetric
/// tridiagonal block with interior diagonal λ_k² + λ_l², endpoint diagonal
/// ½(λ_k² + λ_l²) and off-diagonal −λ_k λ_l.
#[derive(Clone, Debug)]
pub struct PullbackBlocks {
    pub depth: usize,
    /// Scale of the diagonal sector block (N times the identity).
    pub diagonal_scale: f64,
    pub pair_blocks: Vec<PairBlock>,
    /// Set when Λ has (near-)repeated entries and the orthonormal basis
    /// built from these blocks degenerates.
    pub degenerate_lambda: bool,
}

#[derive(Clone, Debug)]
pub struct PairBlock {
    pub k: usize,
    pub l: usize,
    pub tridiagonal: Matrix,
}

pub fn pullback_metric(coords: &BalancedCoords) -> PullbackBlocks {
    let n = coords.depth();
    let d = coords.width();
    let lambda = coords.lambda();
    let mut pair_blocks = Vec::new();
    for k in 1..=d {
        for l in (k + 1)..=d {
            let lk = lambda[k - 1];
            let ll = lambda[l - 1];
            let s = lk * lk + ll * ll;
            let m = lk * ll;
            let mut block = Matrix::zeros(n + 1, n + 1);
            for p in 0..=n {
                block[(p, p)] = if p == 0 || p == n { 0.5 * s } else { s };
                if p < n {
                    block[(p, p + 1)] = -m;
                    block[(p + 1, p)] = -m;
                }
            }
            pair_blocks.push(PairBlock {
                k,
                l,
                tridiagonal: block,
            });
        }
    }
    PullbackBlocks {
        depth: n,
        diagonal_scale: n as f64,
        pair_blocks,
        degenerate_lambda: !coords.has_distinct_lambda(),
    }
}

/// One vector of the rotation family, labelled by its pair (k, l) and depth
/// index p (0 and N are the singular-frame directions, 1…N−1 the group
/// directions).
#[derive(Clone, Debug)]
pub struct UVector {
    pub k: usize,
    pub l: usize,
    pub p: usize,
    pub vector: TangentStack,
}

/// Orthonormal basis of the tangent space upstairs: d diagonal vectors and
/// (N+1)·d(d−1)/2 rotation vectors.
#[derive(Clone, Debug)]
pub struct BasisAtlas {
    pub l_vectors: Vec<TangentStack>,
    pub u_vectors: Vec<UVector>,
}

impl BasisAtlas {
    pub fn len(&self) -> usize {
        self.l_vectors.len() + self.u_vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All basis vectors in the fixed order: l^1 … l^d, then u^{k,l,p}
    /// lexicographic in (k, l, p).
    pub fn all(&self) -> Vec<&TangentStack> {
        let mut out: Vec<&TangentStack> = self.l_vectors.iter().collect();
        out.extend(self.u_vectors.iter().map(|u| &u.vector));
        out
    }

    /// The group directions u^{k,l,p}, 1 ≤ p ≤ N−1 (the kernel of the
    /// projection downstairs).
    pub fn group_vectors(&self) -> impl Iterator<Item = &UVector> {
        let n = self.depth();
        self.u_vectors.iter().filter(move |u| u.p >= 1 && u.p < n)
    }

    /// The horizontal complement: l vectors plus the p ∈ {0, N} rotation
    /// vectors.
    pub fn horizontal_vectors(&self) -> Vec<&TangentStack> {
        let n = self.depth();
        let mut out: Vec<&TangentStack> = self.l_vectors.iter().collect();
        out.extend(
            self.u_vectors
                .iter()
                .filter(|u| u.p == 0 || u.p == n)
                .map(|u| &u.vector),
        );
        out
    }

    fn depth(&self) -> usize {
        self.l_vectors.first().map(|v| v.depth()).unwrap_or(0)
    }

    /// Gram matrix of the whole atlas under the stack Frobenius product.
    pub fn gram(&self) -> Matrix {
        let vecs = self.all();
        let m = vecs.len();
        let mut g = Matrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = vecs[i].inner(vecs[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }
}

/// Orthonormal tangent basis at `coords` (Λ must be distinct):
///   l^k layer s     = N^{-1/2} q_{s,k} q_{s-1,k}ᵀ,
///   u^{k,l,p} layer s (1 ≤ p ≤ N−1, θ = pπ/N)
///                   = c_p (λ_l sin sθ − λ_k sin (s-1)θ) q_{s,k} q_{s-1,l}ᵀ
///                   + c_p (λ_l sin (s-1)θ − λ_k sin sθ) q_{s,l} q_{s-1,k}ᵀ,
///   u^{k,l,0} layer s = c λ_k^{s-1} λ_l^{N-s} q_{s,l} q_{s-1,k}ᵀ,
///   u^{k,l,N} layer s = c λ_k^{N-s} λ_l^{s-1} q_{s,k} q_{s-1,l}ᵀ,
/// with c = √[(λ_k² − λ_l²)/(λ_k^{2N} − λ_l^{2N})] and
/// c_p = [N (λ_k² + λ_l² − 2 λ_k λ_l cos pπ/N)]^{-1/2}.
///
/// The interior vectors are the Chebyshev eigenvectors of the group sector
/// of the pullback blocks: u^{k,l,p} ∝ Σ_s sin(spπ/N) · (rotation direction
/// at depth s). The relative sign between the two outer-product terms is
/// forced by tangency to the balanced manifold — flipping it produces a
/// family that is still orthonormal and still annihilated by the
/// pushforward, but lies outside the tangent space; the group-span
/// projection test pins the correct choice.
pub fn tangent_basis(coords: &BalancedCoords) -> Result<BasisAtlas> {
    let n = coords.depth();
    let d = coords.width();
    let lambda = coords.lambda();
    if !coords.has_distinct_lambda() {
        return Err(DlnError::DegenerateSpectrum {
            gap: coords.min_relative_gap(),
            threshold: tol::DEGENERATE_GAP_REL,
        });
    }
    let nf = n as f64;
    let col = |s: usize, k: usize| coords.frame(s).column(k - 1).into_owned();
    let outer = |s: usize, k: usize, l: usize| {
        // q_{s,k} q_{s-1,l}ᵀ
        col(s, k) * col(s - 1, l).transpose()
    };

    let mut l_vectors = Vec::with_capacity(d);
    for k in 1..=d {
        let mut layers_desc = Vec::with_capacity(n);
        for s in (1..=n).rev() {
            layers_desc.push(outer(s, k, k) / nf.sqrt());
        }
        l_vectors.push(TangentStack::new(layers_desc));
    }

    let mut u_vectors = Vec::new();
    for k in 1..=d {
        for l in (k + 1)..=d {
            let lk = lambda[k - 1];
            let ll = lambda[l - 1];
            let c = ((lk * lk - ll * ll) / (lk.powi(2 * n as i32) - ll.powi(2 * n as i32))).sqrt();
            for p in 0..=n {
                let mut layers_desc = Vec::with_capacity(n);
                for s in (1..=n).rev() {
                    let layer = if p == 0 {
                        c * lk.powi(s as i32 - 1) * ll.powi((n - s) as i32) * outer(s, l, k)
                    } else if p == n {
                        c * lk.powi((n - s) as i32) * ll.powi(s as i32 - 1) * outer(s, k, l)
                    } else {
                        let angle = p as f64 * std::f64::consts::PI / nf;
                        let c_p =
                            1.0 / (nf * (lk * lk + ll * ll - 2.0 * lk * ll * angle.cos())).sqrt();
                        let sin_prev = ((s - 1) as f64 * angle).sin();
                        let sin_cur = (s as f64 * angle).sin();
                        c_p * (ll * sin_cur - lk * sin_prev) * outer(s, k, l)
                            + c_p * (ll * sin_prev - lk * sin_cur) * outer(s, l, k)
                    };
                    layers_desc.push(layer);
                }
                u_vectors.push(UVector {
                    k,
                    l,
                    p,
                    vector: TangentStack::new(layers_desc),
                });
            }
        }
    }
    Ok(BasisAtlas {
        l_vectors,
        u_vectors,
    })
}

/// Pushforward of a tangent stack under the end-to-end projection:
/// φ_*(V) = Σ_p (W_N ⋯ W_{p+1}) V_p (W_{p-1} ⋯ W_1).
pub fn push_forward(state: &NetworkState, v: &TangentStack) -> Matrix {
    let n = state.depth();
    let d = state.width();
    let products = state.partial_products();
    let mut out = Matrix::zeros(d, d);
    for p in 1..=n {
        out += products.prefix(p + 1) * v.layer(p) * products.suffix(p - 1);
    }
    out
}

/// Depth-N metric downstairs: g^N(Z₁, Z₂) = Tr(Z₁ᵀ 𝒜⁻¹ Z₂), evaluated in the
/// singular basis of W.
pub fn metric_gn(svd: &SvdTriple, z1: &Matrix, z2: &Matrix, n: usize) -> Result<f64> {
    let d = svd.dim();
    let sigma_min = svd.sigma_min();
    if sigma_min <= tol::FULL_RANK_MIN {
        return Err(DlnError::SingularOperator { sigma_min });
    }
    let z1_hat = svd.q_left.transpose() * z1 * &svd.q_right;
    let z2_hat = svd.q_left.transpose() * z2 * &svd.q_right;
    let mut acc = 0.0;
    for k in 0..d {
        for l in 0..d {
            acc += z1_hat[(k, l)] * z2_hat[(k, l)] / flows::a_scale(svd.sigma[k], svd.sigma[l], n);
        }
    }
    Ok(acc)
}

/// Convenience wrapper taking W directly.
pub fn metric_gn_matrix(w: &Matrix, z1: &Matrix, z2: &Matrix, n: usize) -> Result<f64> {
    let svd = matops::svd_ordered(w)?;
    metric_gn(&svd, z1, z2, n)
}

/// Eigenvalue of the infinite-depth operator on the (k, l) direction:
/// (σ_k² − σ_l²)/(2 log σ_k/σ_l) off the diagonal and σ_k² on it.
pub fn a_infty_scale(sigma_k: f64, sigma_l: f64) -> f64 {
    let (hi, lo) = if sigma_k >= sigma_l {
        (sigma_k, sigma_l)
    } else {
        (sigma_l, sigma_k)
    };
    if hi == 0.0 {
        return 0.0;
    }
    if hi - lo <= tol::DEGENERATE_GAP_REL * hi {
        let mid = 0.5 * (hi + lo);
        return mid * mid;
    }
    if lo == 0.0 {
        return 0.0;
    }
    let log_ratio = ((hi - lo) / lo).ln_1p();
    (hi - lo) * (hi + lo) / (2.0 * log_ratio)
}

/// 𝒜_{∞,W}(Z) = ∫₀¹ (WWᵀ)^{1-s} Z (WᵀW)^s ds, applied spectrally.
pub fn apply_a_infty(svd: &SvdTriple, z: &Matrix) -> Matrix {
    let d = svd.dim();
    let mut z_hat = svd.q_left.transpose() * z * &svd.q_right;
    for k in 0..d {
        for l in 0..d {
            z_hat[(k, l)] *= a_infty_scale(svd.sigma[k], svd.sigma[l]);
        }
    }
    &svd.q_left * z_hat * svd.q_right.transpose()
}

/// Infinite-depth metric g^∞(Z₁, Z₂) = Tr(Z₁ᵀ 𝒜_∞⁻¹ Z₂).
pub fn metric_g_infty(w: &Matrix, z1: &Matrix, z2: &Matrix) -> Result<f64> {
    let svd = matops::svd_ordered(w)?;
    let d = svd.dim();
    let sigma_min = svd.sigma_min();
    if sigma_min <= tol::FULL_RANK_MIN {
        return Err(DlnError::SingularOperator { sigma_min });
    }
    let z1_hat = svd.q_left.transpose() * z1 * &svd.q_right;
    let z2_hat = svd.q_left.transpose() * z2 * &svd.q_right;
    let mut acc = 0.0;
    for k in 0..d {
        for l in 0..d {
            acc += z1_hat[(k, l)] * z2_hat[(k, l)] / a_infty_scale(svd.sigma[k], svd.sigma[l]);
        }
    }
    Ok(acc)
}

/// Volume-form density det(Σ²)^{(N-1)/(2N)} · van(Σ^{2/N}) over the given
/// singular values (in the given order; the sign follows the orientation of
/// the input). Repeated values legitimately give zero.
pub fn volume_density(sigma: &[f64], n: usize) -> f64 {
    let nf = n as f64;
    let det_sq: f64 = sigma.iter().map(|s| s * s).product();
    let powers: Vec<f64> = sigma.iter().map(|s| s.powf(2.0 / nf)).collect();
    det_sq.powf((nf - 1.0) / (2.0 * nf)) * matops::vandermonde(&powers)
}

/// Structured result of the submersion diagnostics.
#[derive(Clone, Debug)]
pub struct SubmersionReport {
    /// max ‖φ_*(u^{k,l,p})‖_F over the group directions 1 ≤ p ≤ N−1.
    pub kernel_residual: f64,
    /// ‖Gram − I‖_max of the pushed-forward horizontal basis in g^N.
    pub horizontal_gram_residual: f64,
    /// Σ_p ‖∇_{W_p}(E∘φ)‖² upstairs.
    pub upstairs_grad_norm_sq: f64,
    /// ‖grad E‖²_{g^N} downstairs.
    pub downstairs_grad_norm_sq: f64,
    /// Relative mismatch between the two gradient norms.
    pub grad_identity_residual: f64,
    pub tolerance: f64,
    /// Directions whose residual exceeded the tolerance.
    pub failures: Vec<String>,
}

impl SubmersionReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks that the projection downstairs is a Riemannian submersion at
/// `coords`: group directions push forward to zero, the horizontal frame
/// pushes forward to a g^N-orthonormal frame, and the gradient norms of the
/// lifted and reduced problems agree.
pub fn submersion_check(
    coords: &BalancedCoords,
    loss: &LossSpec,
    tolerance: f64,
) -> Result<SubmersionReport> {
    let n = coords.depth();
    let state = coords.to_state();
    let svd = coords.end_to_end_svd();
    let atlas = tangent_basis(coords)?;
    let mut failures = Vec::new();

    let mut kernel_residual = 0.0f64;
    for u in atlas.group_vectors() {
        let image_norm = push_forward(&state, &u.vector).norm();
        if image_norm > tolerance {
            failures.push(format!("kernel direction u[{},{},{}]", u.k, u.l, u.p));
        }
        kernel_residual = kernel_residual.max(image_norm);
    }

    let horizontal = atlas.horizontal_vectors();
    let images: Vec<Matrix> = horizontal.iter().map(|v| push_forward(&state, v)).collect();
    let m = images.len();
    let mut gram_residual = 0.0f64;
    for i in 0..m {
        for j in i..m {
            let g = metric_gn(&svd, &images[i], &images[j], n)?;
            let target = if i == j { 1.0 } else { 0.0 };
            let err = (g - target).abs();
            if err > tolerance {
                failures.push(format!("horizontal pair ({i}, {j})"));
            }
            gram_residual = gram_residual.max(err);
        }
    }

    let upstairs = flows::full_flow_field(&state, loss).norm_squared();
    let w = state.end_to_end();
    let e_prime = loss.gradient(&w);
    let downstairs = matops::frob_inner(&e_prime, &flows::apply_a(&svd, &e_prime, n));
    let scale = upstairs.abs().max(downstairs.abs()).max(1e-30);
    let grad_identity_residual = (upstairs - downstairs).abs() / scale;
    if grad_identity_residual > tolerance.max(1e-9) {
        failures.push("gradient norm identity".into());
    }

    Ok(SubmersionReport {
        kernel_residual,
        horizontal_gram_residual: gram_residual,
        upstairs_grad_norm_sq: upstairs,
        downstairs_grad_norm_sq: downstairs,
        grad_identity_residual,
        tolerance,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::random_balanced_coords;
    use crate::oracle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn well_separated_coords(d: usize, n: usize, seed: u64) -> BalancedCoords {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let coords = random_balanced_coords(d, n, 1.0, &mut rng).unwrap();
            if coords.min_relative_gap() > 0.05 {
                return coords;
            }
        }
    }

    #[test]
    fn differential_matches_stated_formula_for_theta() {
        // θ = e_1, A = 0: layer p is Q_p diag(1,0,…) Q_{p-1}ᵀ.
        let coords = well_separated_coords(3, 4, 50);
        let v = diag_direction(&coords, 1);
        for p in 1..=4 {
            let mut e11 = Matrix::zeros(3, 3);
            e11[(0, 0)] = 1.0;
            let expected = coords.frame(p) * e11 * coords.frame(p - 1).transpose();
            assert!((v.layer(p) - expected).norm() <= 1e-13);
        }
    }

    #[test]
    fn rotation_direction_touches_two_layers() {
        let coords = well_separated_coords(3, 5, 51);
        let v = rotation_direction(&coords, 2, 1, 3);
        for p in 1..=5 {
            let norm = v.layer(p).norm();
            if p == 2 || p == 3 {
                assert!(norm > 1e-8);
            } else {
                assert!(norm <= 1e-13);
            }
        }
    }

    #[test]
    fn differential_rejects_non_antisymmetric() {
        let coords = well_separated_coords(2, 2, 52);
        let theta = DVector::zeros(2);
        let mut a = vec![Matrix::zeros(2, 2); 3];
        a[1][(0, 0)] = 1.0;
        assert!(differential_dz(&coords, &theta, &a).is_err());
    }

    #[test]
    fn differential_matches_finite_difference_of_parametrization() {
        let coords = well_separated_coords(2, 3, 53);
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let theta = DVector::from_fn(2, |_, _| oracle::uniform(&mut rng));
        let a: Vec<Matrix> = (0..4)
            .map(|_| oracle::random_antisym(2, &mut rng))
            .collect();
        let analytic = differential_dz(&coords, &theta, &a).unwrap();
        let eps = 1e-6;
        let fd = oracle::fd_differential_dz(&coords, &theta, &a, eps);
        for p in 1..=3 {
            assert!(
                (analytic.layer(p) - fd.layer(p)).amax() <= 1e-5,
                "layer {p}"
            );
        }
    }

    #[test]
    fn pullback_small_block_matches_pattern() {
        // d = 2, N = 2: single 3×3 block [[s/2, −m, 0], [−m, s, −m], [0, −m, s/2]].
        let coords = well_separated_coords(2, 2, 55);
        let blocks = pullback_metric(&coords);
        assert_eq!(blocks.pair_blocks.len(), 1);
        let lam = coords.lambda();
        let s = lam[0] * lam[0] + lam[1] * lam[1];
        let m = lam[0] * lam[1];
        let b = &blocks.pair_blocks[0].tridiagonal;
        let expected =
            Matrix::from_row_slice(3, 3, &[0.5 * s, -m, 0.0, -m, s, -m, 0.0, -m, 0.5 * s]);
        assert!((b - expected).norm() <= 1e-14);
        assert_eq!(blocks.diagonal_scale, 2.0);
    }

    #[test]
    fn pullback_matches_numeric_gram_of_differential() {
        for (d, n, seed) in [(2usize, 2usize, 56u64), (3, 4, 57)] {
            let coords = well_separated_coords(d, n, seed);
            let numeric = oracle::numeric_pullback_gram(&coords);
            let analytic = oracle::assemble_pullback_blocks(&pullback_metric(&coords), d, n);
            assert!((numeric - analytic).amax() <= 1e-10, "d={d} n={n}");
        }
    }

    #[test]
    fn group_sector_eigenvalues_match_closed_form() {
        // The group sector of the pair block (rows/cols p = 1…N−1) is the
        // Toeplitz tridiagonal with diagonal λ_k² + λ_l² and off-diagonal
        // −λ_k λ_l; its eigenvalues are λ_k² + λ_l² − 2λ_kλ_l cos(pπ/N) —
        // exactly the normalization constants of the interior basis vectors.
        let coords = well_separated_coords(2, 5, 58);
        let blocks = pullback_metric(&coords);
        let n = 5usize;
        let b = &blocks.pair_blocks[0].tridiagonal;
        let interior = b.view((1, 1), (n - 1, n - 1)).into_owned();
        let mut eigs: Vec<f64> = interior
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lam = coords.lambda();
        let mut expected: Vec<f64> = (1..n)
            .map(|p| {
                lam[0] * lam[0] + lam[1] * lam[1]
                    - 2.0 * lam[0] * lam[1] * (p as f64 * std::f64::consts::PI / n as f64).cos()
            })
            .collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (e, x) in eigs.iter().zip(expected.iter()) {
            assert!(
                (e - x).abs() <= 1e-9 * x.max(1.0),
                "{eigs:?} vs {expected:?}"
            );
        }
    }

    #[test]
    fn atlas_vectors_are_tangent_to_the_manifold() {
        // Every basis vector must lie in the span of the differential of the
        // parametrization over the standard parameter directions; this is
        // the check that pins the relative sign inside the interior vectors.
        let coords = well_separated_coords(2, 4, 158);
        let atlas = tangent_basis(&coords).unwrap();
        let dirs = oracle::standard_directions(&coords);
        for v in atlas.all() {
            let residual = oracle::projection_residual(v, &dirs);
            assert!(
                residual <= 1e-9,
                "atlas vector off the tangent space: {residual}"
            );
        }
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        let coords = well_separated_coords(3, 5, 59);
        let atlas = tangent_basis(&coords).unwrap();
        assert_eq!(atlas.len(), 3 + 6 * 3); // d + (N+1)·d(d−1)/2
        let gram = atlas.gram();
        let m = gram.nrows();
        let residual = (&gram - Matrix::identity(m, m)).amax();
        assert!(residual <= 1e-10, "gram residual {residual}");
    }

    #[test]
    fn l_vectors_have_unit_norm() {
        let coords = well_separated_coords(2, 4, 60);
        let atlas = tangent_basis(&coords).unwrap();
        for lvec in &atlas.l_vectors {
            assert!((lvec.norm_squared() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn group_vectors_lie_in_rotation_span() {
        // Each u^{k,l,p} with 1 ≤ p ≤ N−1 must be reproducible from the
        // rotation directions at depths 1…N−1 by least squares.
        let coords = well_separated_coords(2, 4, 61);
        let atlas = tangent_basis(&coords).unwrap();
        let d = 2;
        let mut directions = Vec::new();
        for p in 1..4 {
            for k in 1..=d {
                for l in (k + 1)..=d {
                    directions.push(rotation_direction(&coords, p, k, l));
                }
            }
        }
        for u in atlas.group_vectors() {
            let residual = oracle::projection_residual(&u.vector, &directions);
            assert!(residual <= 1e-10, "u[{},{},{}]: {residual}", u.k, u.l, u.p);
        }
    }

    #[test]
    fn tangent_basis_rejects_repeated_lambda() {
        let coords = BalancedCoords::new(
            DVector::from_vec(vec![1.0, 1.0]),
            vec![Matrix::identity(2, 2); 3],
        )
        .unwrap();
        assert!(matches!(
            tangent_basis(&coords),
            Err(DlnError::DegenerateSpectrum { .. })
        ));
    }

    #[test]
    fn metric_gn_at_identity_and_scalar_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let w = Matrix::identity(3, 3);
        let svd = matops::svd_ordered(&w).unwrap();
        let z = oracle::random_matrix(3, 1.0, &mut rng);
        let g = metric_gn(&svd, &z, &z, 4).unwrap();
        assert!((g - z.norm_squared() / 4.0).abs() <= 1e-12);
    }

    #[test]
    fn metric_g_infty_diagonal_coefficient() {
        // Diagonal coefficient at σ_k = 2 is 1/σ_k² = 1/4.
        let w = Matrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let mut z = Matrix::zeros(2, 2);
        z[(0, 0)] = 1.0;
        let g = metric_g_infty(&w, &z, &z).unwrap();
        assert!((g - 0.25).abs() <= 1e-13);
    }

    #[test]
    fn rescaled_operator_converges_to_infinite_depth() {
        // (1/N) 𝒜_N → 𝒜_∞ at rate O(1/N).
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let w = Matrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let svd = matops::svd_ordered(&w).unwrap();
        let z = oracle::random_matrix(2, 1.0, &mut rng);
        let target = apply_a_infty(&svd, &z);
        let n = 1000usize;
        let approx = flows::apply_a(&svd, &z, n) / n as f64;
        let rel = (&approx - &target).norm() / z.norm();
        assert!(rel <= 2e-3, "relative error {rel}");
    }

    #[test]
    fn volume_density_edge_cases() {
        // N = 1: the det factor has exponent zero.
        let sigma = [3.0, 1.5, 0.5];
        let v1 = volume_density(&sigma, 1);
        let squares: Vec<f64> = sigma.iter().map(|s| s * s).collect();
        assert!((v1 - matops::vandermonde(&squares)).abs() <= 1e-12 * v1.abs().max(1.0));
        // d = 1: σ^{(N-1)/N} with an empty Vandermonde.
        let v = volume_density(&[2.0], 4);
        assert!((v - 2.0f64.powf(0.75)).abs() <= 1e-14);
        // Repeated σ: zero.
        assert_eq!(volume_density(&[1.0, 1.0], 3), 0.0);
    }

    #[test]
    fn volume_density_against_jacobian_gram() {
        // The coordinate volume of g^N in (Σ, Q_0, Q_N) parameters, measured
        // as √det of the numeric Gram, matches the analytic density with the
        // determinant exponent flipped, up to a Σ-independent constant:
        //   √det Gram = C(d, N) · det(Σ)^{-(N-1)/N} · |van(Σ^{2/N})|.
        // Equivalently density · √det Gram / |van(Σ^{2/N})|² is constant in Σ.
        let d = 2;
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let mut ratios = Vec::new();
        for _ in 0..6 {
            let coords = {
                loop {
                    let c = random_balanced_coords(d, n, 1.0, &mut rng).unwrap();
                    if c.min_relative_gap() > 0.05 {
                        break c;
                    }
                }
            };
            let sigma: Vec<f64> = coords.lambda().iter().map(|l| l.powi(n as i32)).collect();
            let sqrt_det = oracle::svd_coordinate_volume(&coords);
            let nf = n as f64;
            let det_sigma: f64 = sigma.iter().product();
            let van: f64 = {
                let powers: Vec<f64> = sigma.iter().map(|s| s.powf(2.0 / nf)).collect();
                matops::vandermonde(&powers).abs()
            };
            let predicted = det_sigma.powf(-(nf - 1.0) / nf) * van;
            ratios.push(sqrt_det / predicted);
        }
        let mean: f64 = ratios.iter().sum::<f64>() / ratios.len() as f64;
        for r in &ratios {
            assert!(
                ((r - mean) / mean).abs() <= 1e-6,
                "constant drifts: {ratios:?}"
            );
        }
    }

    #[test]
    fn submersion_report_on_random_coords() {
        let coords = well_separated_coords(2, 4, 65);
        let loss = LossSpec::diagonal_completion(2);
        let report = submersion_check(&coords, &loss, 1e-9).unwrap();
        assert!(report.passed(), "failures: {:?}", report.failures);
        assert!(report.kernel_residual <= 1e-9);
        assert!(report.horizontal_gram_residual <= 1e-9);
        assert!(report.grad_identity_residual <= 1e-9);
    }

    #[test]
    fn submersion_depth_one_has_empty_kernel() {
        let coords = well_separated_coords(3, 1, 66);
        let atlas = tangent_basis(&coords).unwrap();
        assert_eq!(atlas.group_vectors().count(), 0);
        let loss = LossSpec::diagonal_completion(3);
        let report = submersion_check(&coords, &loss, 1e-9).unwrap();
        assert!(report.passed());
        // At N = 1 the pushforward is the identity on layer 1.
        let state = coords.to_state();
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let z = oracle::random_matrix(3, 1.0, &mut rng);
        let v = TangentStack::new(vec![z.clone()]);
        assert!((push_forward(&state, &v) - z).norm() <= 1e-14);
    }

    #[test]
    fn pullback_blocks_invariant_under_group_action() {
        // Replacing the interior frames by fresh Haar draws fixes the SVD
        // data of W and must leave the numeric pullback Gram unchanged.
        let coords = well_separated_coords(2, 3, 68);
        let mut rng = ChaCha8Rng::seed_from_u64(69);
        let gram_a = oracle::numeric_pullback_gram(&coords);
        let mut frames_desc: Vec<Matrix> = (0..=3).rev().map(|p| coords.frame(p).clone()).collect();
        for f in frames_desc.iter_mut().skip(1).take(2) {
            *f = crate::network::haar_orthogonal(2, &mut rng);
        }
        let moved = BalancedCoords::new(coords.lambda().clone(), frames_desc).unwrap();
        let gram_b = oracle::numeric_pullback_gram(&moved);
        assert!((gram_a - gram_b).amax() <= 1e-11);
    }
}
