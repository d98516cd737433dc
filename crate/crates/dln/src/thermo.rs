//! Orbit entropy, free energy and their gradients.
//!
//! The entropy of the group orbit over an end-to-end matrix with singular
//! values σ is, up to an additive constant independent of σ,
//!   S(σ) = ½ Σ_{i<j} log[(σ_i² − σ_j²)/(σ_i^{2/N} − σ_j^{2/N})].
//! The omitted constant (N−1) log c_d (c_d the Haar volume of the orthogonal
//! group) never enters gradients or differences; callers that care can check
//! the `entropy_offset_omitted` flag on [`ThermoState`].

use nalgebra::DVector;

use crate::error::{DlnError, Result};
use crate::flows::{self, LossSpec};
use crate::matops::{self, Matrix};
use crate::tol;

/// Inverse temperature and bookkeeping for the entropy convention.
/// `beta` may be `f64::INFINITY` (zero temperature: pure energy descent).
#[derive(Clone, Copy, Debug)]
pub struct ThermoState {
    pub beta: f64,
    /// The additive constant (N−1) log c_d is not included in entropies.
    pub entropy_offset_omitted: bool,
}

impl ThermoState {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(DlnError::Config(format!(
                "beta must be positive (or infinite), got {beta}"
            )));
        }
        Ok(Self {
            beta,
            entropy_offset_omitted: true,
        })
    }
}

fn check_sigma_positive(sigma: &[f64]) -> Result<()> {
    if sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(DlnError::Domain(
            "entropy requires strictly positive singular values".into(),
        ));
    }
    Ok(())
}

/// Relative gap check used by the gradient formulas, which genuinely diverge
/// as singular values collide.
fn check_sigma_distinct(sigma: &[f64]) -> Result<()> {
    let d = sigma.len();
    let smax = sigma
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        .max(1e-300);
    for i in 0..d {
        for j in (i + 1)..d {
            let gap = (sigma[i] - sigma[j]).abs() / smax;
            if gap <= tol::DEGENERATE_GAP_REL {
                return Err(DlnError::DegenerateSpectrum {
                    gap,
                    threshold: tol::DEGENERATE_GAP_REL,
                });
            }
        }
    }
    Ok(())
}

/// Orbit entropy at depth N (σ-dependent part only).
///
/// Pairs closer than the degenerate-gap threshold contribute their analytic
/// limit ½ log(N σ̄^{2-2/N}), which keeps the value finite and continuous.
pub fn entropy(sigma: &[f64], n: usize) -> Result<f64> {
    check_sigma_positive(sigma)?;
    let d = sigma.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            s += 0.5 * flows::a_scale(sigma[i], sigma[j], n).ln();
        }
    }
    Ok(s)
}

/// Entropy for trajectory diagnostics: singular values are clamped away from
/// zero so records stay finite even while a flow collapses rank.
pub fn entropy_for_diagnostics(sigma: &[f64], n: usize) -> f64 {
    let clamped: Vec<f64> = sigma.iter().map(|&s| s.max(1e-300)).collect();
    entropy(&clamped, n).unwrap_or(f64::NAN)
}

/// Infinite-depth entropy Σ_{k<l} log[(σ_k² − σ_l²)/(2 log σ_k/σ_l)].
pub fn entropy_infty(sigma: &[f64]) -> Result<f64> {
    check_sigma_positive(sigma)?;
    let d = sigma.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            s += crate::geometry::a_infty_scale(sigma[i], sigma[j]).ln();
        }
    }
    Ok(s)
}

/// Diagonal of Σ′, the singular-value part of the entropy gradient:
/// Σ′_kk = Σ_{l≠k} [N λ_k^{2N-1}/(λ_k^{2N} − λ_l^{2N}) − λ_k/(λ_k² − λ_l²)] λ_k^{N-1}
/// with λ = σ^{1/N}. Refuses coincident singular values: the repulsion term
/// genuinely diverges there.
pub fn sigma_prime(sigma: &[f64], n: usize) -> Result<DVector<f64>> {
    check_sigma_positive(sigma)?;
    check_sigma_distinct(sigma)?;
    let d = sigma.len();
    let nf = n as f64;
    let mut out = DVector::zeros(d);
    for k in 0..d {
        let sk = sigma[k];
        let mut acc = 0.0;
        for l in 0..d {
            if l == k {
                continue;
            }
            let sl = sigma[l];
            // In σ variables the two terms read
            //   N σ_k^{3-2/N}/(σ_k² − σ_l²) − σ_k/(σ_k^{2/N} − σ_l^{2/N}).
            let num_gap = (sk - sl) * (sk + sl);
            acc +=
                nf * sk.powf(3.0 - 2.0 / nf) / num_gap - sk / flows::pow_diff_two_over_n(sk, sl, n);
        }
        out[k] = acc;
    }
    Ok(out)
}

/// Diagonal of Σ″ = (N−1) λ^{N-2} with λ = σ^{1/N}.
pub fn sigma_double_prime(sigma: &[f64], n: usize) -> DVector<f64> {
    let d = sigma.len();
    if n == 1 {
        return DVector::zeros(d);
    }
    let nf = n as f64;
    DVector::from_iterator(
        d,
        sigma.iter().map(|&s| (nf - 1.0) * s.powf((nf - 2.0) / nf)),
    )
}

/// Free energy F_β = E(W) − β⁻¹ S(σ); at β = ∞ this is just the energy.
pub fn free_energy(sigma: &[f64], n: usize, loss: &LossSpec, w: &Matrix, beta: f64) -> Result<f64> {
    let e = loss.value(w);
    if beta.is_infinite() {
        return Ok(e);
    }
    Ok(e - entropy(sigma, n)? / beta)
}

/// Riemannian gradient of the free energy at W:
/// grad F_β = 𝒜_{N,W}(E′(W)) − β⁻¹ Q_N Σ′ Q_0ᵀ.
pub fn grad_free_energy(w: &Matrix, loss: &LossSpec, n: usize, beta: f64) -> Result<Matrix> {
    let svd = matops::svd_ordered(w)?;
    grad_free_energy_svd(&svd, w, loss, n, beta)
}

/// Same as [`grad_free_energy`] but reusing precomputed SVD data of W.
pub fn grad_free_energy_svd(
    svd: &matops::SvdTriple,
    w: &Matrix,
    loss: &LossSpec,
    n: usize,
    beta: f64,
) -> Result<Matrix> {
    let mut grad = flows::apply_a(svd, &loss.gradient(w), n);
    if beta.is_finite() {
        let sp = sigma_prime(svd.sigma_slice(), n)?;
        grad -= (1.0 / beta) * &svd.q_left * Matrix::from_diagonal(&sp) * svd.q_right.transpose();
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::FlowConfig;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropy_trivial_cases() {
        // d = 1: no pairs, constant orbit volume.
        assert_eq!(entropy(&[2.5], 3).unwrap(), 0.0);
        // N = 1: no overparametrization, the ratio is 1 for every pair.
        assert!(entropy(&[3.0, 1.5, 0.2], 1).unwrap().abs() < 1e-14);
    }

    #[test]
    fn entropy_small_case_value() {
        // d = 2, N = 2, σ = (2, 1): ½ log((4 − 1)/(2 − 1)) = ½ log 3.
        let s = entropy(&[2.0, 1.0], 2).unwrap();
        assert!((s - 0.5 * 3.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn entropy_rejects_nonpositive() {
        assert!(entropy(&[1.0, 0.0], 2).is_err());
        assert!(entropy(&[1.0, -0.5], 2).is_err());
    }

    #[test]
    fn entropy_symmetric_and_gap_monotone() {
        let s_a = entropy(&[2.0, 0.7, 1.3], 3).unwrap();
        let s_b = entropy(&[0.7, 1.3, 2.0], 3).unwrap();
        assert!((s_a - s_b).abs() < 1e-13);

        // Widening the top gap at fixed other entries increases S.
        let base = entropy(&[2.0, 1.0, 0.5], 3).unwrap();
        let wider = entropy(&[2.2, 1.0, 0.5], 3).unwrap();
        assert!(wider > base);
    }

    #[test]
    fn entropy_infty_direct_value() {
        // σ = (e, 1): the only term is log[(e² − 1)/2].
        let s = entropy_infty(&[std::f64::consts::E, 1.0]).unwrap();
        let expected = ((std::f64::consts::E.powi(2) - 1.0) / 2.0).ln();
        assert!((s - expected).abs() < 1e-14);
        assert_eq!(entropy_infty(&[1.7]).unwrap(), 0.0);
    }

    #[test]
    fn entropy_depth_limit_with_compensation() {
        // entropy(σ, N) − (d(d−1)/4) log N → ½ entropy_infty(σ).
        let sigma = [2.0, 1.1, 0.6];
        let d = sigma.len() as f64;
        let comp = d * (d - 1.0) / 4.0;
        let target = 0.5 * entropy_infty(&sigma).unwrap();
        let mut err_prev = f64::INFINITY;
        for n in [100usize, 10_000] {
            let val = entropy(&sigma, n).unwrap() - comp * (n as f64).ln();
            let err = (val - target).abs();
            assert!(err < err_prev);
            err_prev = err;
        }
        assert!(err_prev < 1e-3);
    }

    #[test]
    fn sigma_prime_trivial_cases() {
        // d = 1: empty sum.
        let sp = sigma_prime(&[2.0], 4).unwrap();
        assert_eq!(sp[0], 0.0);
        // N = 1: the two terms cancel termwise.
        let sp = sigma_prime(&[2.0, 1.0], 1).unwrap();
        assert!(sp.amax() < 1e-12);
        // Coincident σ refuse.
        assert!(matches!(
            sigma_prime(&[1.0, 1.0 + 1e-12], 3),
            Err(DlnError::DegenerateSpectrum { .. })
        ));
    }

    #[test]
    fn sigma_double_prime_values() {
        let s = sigma_double_prime(&[8.0], 3);
        // λ = 8^{1/3} = 2, Σ″ = 2 · 2 = 4.
        assert!((s[0] - 4.0).abs() < 1e-12);
        assert_eq!(sigma_double_prime(&[3.0, 1.0], 1).amax(), 0.0);
    }

    #[test]
    fn sigma_prime_matches_entropy_finite_differences() {
        // dS/dσ_k via central differences against the chain-rule form of Σ′:
        // Σ′_kk = (A eigenvalue at (k,k)) · ∂S/∂σ_k.
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for n in [2usize, 5] {
            let mut sigma = [0.0; 3];
            loop {
                for s in sigma.iter_mut() {
                    *s = rng.random_range(0.5..2.5);
                }
                sigma.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if sigma[0] - sigma[1] > 0.05 && sigma[1] - sigma[2] > 0.05 {
                    break;
                }
            }
            let sp = sigma_prime(&sigma, n).unwrap();
            let h = 1e-6;
            for k in 0..3 {
                let mut up = sigma;
                let mut dn = sigma;
                up[k] += h;
                dn[k] -= h;
                let fd = (entropy(&up, n).unwrap() - entropy(&dn, n).unwrap()) / (2.0 * h);
                let predicted = flows::a_scale(sigma[k], sigma[k], n) * fd;
                assert!(
                    (sp[k] - predicted).abs() <= 1e-5 * predicted.abs().max(1.0),
                    "k={k} n={n}: {} vs {}",
                    sp[k],
                    predicted
                );
            }
        }
    }

    #[test]
    fn grad_free_energy_scalar_and_zero_temperature() {
        let loss = LossSpec::FrobeniusQuadratic;
        // β = ∞: pure Riemannian gradient.
        let w = Matrix::from_element(1, 1, 2.0);
        let g = grad_free_energy(&w, &loss, 3, f64::INFINITY).unwrap();
        let expected = 3.0 * 2.0f64.powf(2.0 - 2.0 / 3.0) * 2.0; // N w^{2-2/N} E′(w)
        assert!((g[(0, 0)] - expected).abs() < 1e-12);
        // d = 1 at finite β: no entropy term either (no pairs).
        let g = grad_free_energy(&w, &loss, 3, 2.0).unwrap();
        assert!((g[(0, 0)] - expected).abs() < 1e-12);
    }

    #[test]
    fn entropy_ascent_for_zero_energy() {
        // With E ≡ 0, the flow Ẇ = −grad F_β = β⁻¹ Q_N Σ′ Q_0ᵀ must increase
        // the entropy monotonically.
        let loss = LossSpec::Completion { entries: vec![] };
        let beta = 2.0;
        let w0 = Matrix::from_row_slice(2, 2, &[1.4, 0.3, -0.2, 0.8]);
        let cfg = FlowConfig::rk4(1e-3, 0.5, 50);
        let traj = crate::flows::integrate(
            |w: &Matrix| -grad_free_energy(w, &loss, 3, beta).unwrap(),
            w0,
            &cfg,
            |t, w, f| {
                let svd = matops::svd_ordered(w).unwrap();
                crate::flows::TrajectoryRecord {
                    t,
                    energy: loss.value(w),
                    entropy: entropy_for_diagnostics(svd.sigma_slice(), 3),
                    free_energy: 0.0,
                    sigma: svd.sigma_slice().to_vec(),
                    balance_residual: 0.0,
                    g_drift: 0.0,
                    det_w: w.determinant(),
                    grad_norm_sq: f.norm_squared(),
                    decay_residual: None,
                }
            },
        );
        assert!(traj.aborted_at.is_none());
        for pair in traj.records.windows(2) {
            assert!(pair[1].entropy >= pair[0].entropy - 1e-9);
        }
    }
}
