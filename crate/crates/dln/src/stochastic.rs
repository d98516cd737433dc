//! Stochastic dynamics: Brownian motion in the depth-N geometry downstairs,
//! the Langevin extension of the gradient flows with anisotropy κ upstairs
//! and downstairs, the eigenvalue/matrix diffusion pair, and the sphere
//! example that isolates the curvature drift.
//!
//! All steps are explicit Euler–Maruyama in Itô form with post-step
//! projection (re-balancing upstairs, re-symmetrization for the matrix
//! diffusion); noise is passed in by the caller so every step is a
//! deterministic function of (state, config, noise), and drivers draw one
//! ChaCha stream per path.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::flows::{self, LossSpec};
use crate::matops::{self, Matrix, SvdTriple};
use crate::network::{coords_from_state, NetworkState, TangentStack};
use crate::thermo;
use crate::tol;

/// Parameters of the stochastic schemes. `beta` is the inverse temperature
/// (∞ allowed), `kappa ≥ 0` splits the noise between gauge directions and
/// their orthogonal complement.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SdeConfig {
    pub beta: f64,
    pub kappa: f64,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub paths: usize,
    pub record_every: usize,
}

impl SdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(DlnError::Config(format!(
                "beta must be positive or infinite, got {}",
                self.beta
            )));
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(DlnError::Config(format!(
                "kappa must be finite and >= 0, got {}",
                self.kappa
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(DlnError::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end >= self.dt) {
            return Err(DlnError::Config(format!(
                "t_end ({}) must be at least dt ({})",
                self.t_end, self.dt
            )));
        }
        if self.paths == 0 {
            return Err(DlnError::Config("paths must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(DlnError::Config("record_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

/// One independent RNG stream per (seed, path index) pair.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

pub fn normal_matrix<R: Rng>(d: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector<R: Rng>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_stack<R: Rng>(d: usize, n: usize, rng: &mut R) -> TangentStack {
    TangentStack::new((0..n).map(|_| normal_matrix(d, rng)).collect())
}

/// Keeps the singular-vector gauge continuous along a path: after each
/// refresh, any singular pair whose left vector reversed orientation
/// relative to the previous step is flipped back (flipping left and right
/// vectors together, which preserves the decomposition).
#[derive(Default)]
pub struct SvdGauge {
    prev_left: Option<Matrix>,
}

impl SvdGauge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn refresh(&mut self, w: &Matrix) -> Result<SvdTriple> {
        let mut svd = matops::svd_ordered(w)?;
        if let Some(prev) = &self.prev_left {
            for k in 0..svd.dim() {
                if svd.q_left.column(k).dot(&prev.column(k)) < 0.0 {
                    svd.q_left.column_mut(k).neg_mut();
                    svd.q_right.column_mut(k).neg_mut();
                }
            }
        }
        self.prev_left = Some(svd.q_left.clone());
        Ok(svd)
    }
}

/// Entrywise noise scales of Brownian motion in the depth-N geometry, in the
/// singular frame: √(N) λ_k^{N-1} on the diagonal and
/// √[(λ_k^{2N} − λ_l^{2N})/(λ_k² − λ_l²)] off it — the square roots of the
/// operator eigenvalues.
pub fn bm_noise_scale(sigma_k: f64, sigma_l: f64, n: usize) -> f64 {
    flows::a_scale(sigma_k, sigma_l, n).sqrt()
}

/// The Brownian increment at temperature 1/β from precomputed SVD data:
/// √(2/β) Q_N D Q_0ᵀ √dt + β⁻¹ Q_N Σ″ Q_0ᵀ dt, where D carries the
/// entrywise-scaled noise. Returns zero at β = ∞.
pub fn bm_increment(svd: &SvdTriple, beta: f64, n: usize, dt: f64, noise: &Matrix) -> Matrix {
    let d = svd.dim();
    if beta.is_infinite() {
        return Matrix::zeros(d, d);
    }
    let mut scaled = Matrix::zeros(d, d);
    for k in 0..d {
        for l in 0..d {
            scaled[(k, l)] = bm_noise_scale(svd.sigma[k], svd.sigma[l], n) * noise[(k, l)];
        }
    }
    let diffusion =
        (2.0 / beta).sqrt() * dt.sqrt() * &svd.q_left * scaled * svd.q_right.transpose();
    let drift = (1.0 / beta)
        * dt
        * &svd.q_left
        * Matrix::from_diagonal(&thermo::sigma_double_prime(svd.sigma_slice(), n))
        * svd.q_right.transpose();
    diffusion + drift
}

/// One Euler–Maruyama step of Brownian motion on the space of full-rank
/// matrices with the depth-N metric.
pub fn bm_gn_step(w: &Matrix, beta: f64, n: usize, dt: f64, noise: &Matrix) -> Result<Matrix> {
    let svd = matops::svd_ordered(w)?;
    if svd.sigma_min() <= tol::FULL_RANK_MIN {
        return Err(DlnError::SingularOperator {
            sigma_min: svd.sigma_min(),
        });
    }
    Ok(w + bm_increment(&svd, beta, n, dt, noise))
}

/// One Langevin step downstairs: free-energy descent plus Brownian noise at
/// the rescaled temperature β/κ. κ = 0 recovers the deterministic
/// free-energy flow (no diffusion, no Itô drift).
pub fn rle_step_down(
    w: &Matrix,
    loss: &LossSpec,
    n: usize,
    cfg: &SdeConfig,
    noise: &Matrix,
) -> Result<Matrix> {
    let svd = matops::svd_ordered(w)?;
    if svd.sigma_min() <= tol::FULL_RANK_MIN {
        return Err(DlnError::SingularOperator {
            sigma_min: svd.sigma_min(),
        });
    }
    let grad = thermo::grad_free_energy_svd(&svd, w, loss, n, cfg.beta)?;
    let mut out = w - cfg.dt * grad;
    if cfg.kappa > 0.0 {
        out += bm_increment(&svd, cfg.beta / cfg.kappa, n, cfg.dt, noise);
    }
    Ok(out)
}

/// One Langevin step upstairs on the balanced manifold.
///
/// The drift is the full layerwise gradient field; the noise is the raw
/// stack noise projected onto the tangent space, with the gauge directions
/// weighted √(2 dt/β) and the horizontal complement weighted √(2 κ dt/β).
/// After the step the state is re-balanced through the singular-value
/// parametrization recovered from the stepped layers. At β = ∞ the step
/// reduces exactly to the Euler step of the deterministic field.
pub fn rle_step_up(
    state: &NetworkState,
    loss: &LossSpec,
    cfg: &SdeConfig,
    noise: &TangentStack,
) -> Result<NetworkState> {
    let residual = state.balance_residual();
    if residual > tol::BALANCE_PRECONDITION {
        return Err(DlnError::Unbalanced {
            residual,
            tolerance: tol::BALANCE_PRECONDITION,
        });
    }
    let drift = flows::full_flow_field(state, loss);
    if cfg.beta.is_infinite() {
        return Ok(state.translate(cfg.dt, &drift));
    }
    let coords = coords_from_state(state)?;
    let atlas = crate::geometry::tangent_basis(&coords)?;
    let w_group = (2.0 * cfg.dt / cfg.beta).sqrt();
    let w_perp = (2.0 * cfg.kappa * cfg.dt / cfg.beta).sqrt();
    let mut kick = TangentStack::zeros(state.width(), state.depth());
    for u in atlas.group_vectors() {
        kick.axpy(w_group * u.vector.inner(noise), &u.vector);
    }
    for h in atlas.horizontal_vectors() {
        kick.axpy(w_perp * h.inner(noise), h);
    }
    let stepped = state.translate(cfg.dt, &drift).translate(1.0, &kick);
    let projected = coords_from_state(&stepped)?;
    Ok(projected.to_state())
}

/// Exploratory Langevin step on the variety with a fixed imbalance `g`
/// (not necessarily zero): gradient drift plus noise projected onto the
/// numerically computed tangent space of the variety, followed by a
/// Gauss-Newton re-projection that restores the imbalance constraints to
/// machine precision.
///
/// Unlike [`rle_step_up`] there is no gauge/observable splitting here: the
/// orbit structure behind κ exists only at zero imbalance, so the whole
/// tangential noise enters at temperature 1/β.
pub fn rle_step_on_variety(
    state: &NetworkState,
    loss: &LossSpec,
    g: &crate::network::ImbalanceG,
    cfg: &SdeConfig,
    noise: &TangentStack,
) -> Result<NetworkState> {
    let drift = flows::full_flow_field(state, loss);
    let mut stepped = state.translate(cfg.dt, &drift);
    if cfg.beta.is_finite() {
        let jac = constraint_jacobian(state);
        let tangential = project_to_kernel(&jac, noise, state.width(), state.depth());
        stepped = stepped.translate((2.0 * cfg.dt / cfg.beta).sqrt(), &tangential);
    }
    reproject_to_variety(&stepped, g)
}

/// Jacobian of the imbalance constraints C_p(𝐰) = W_{p+1}ᵀW_{p+1} − W_pW_pᵀ
/// as a dense matrix acting on vectorized stacks: row block p holds the
/// upper triangle (including diagonal) of the symmetric derivative
/// DC_p(V) = V_{p+1}ᵀW_{p+1} + W_{p+1}ᵀV_{p+1} − V_pW_pᵀ − W_pV_pᵀ.
pub fn constraint_jacobian(state: &NetworkState) -> Matrix {
    let d = state.width();
    let n = state.depth();
    let rows = (n - 1) * d * (d + 1) / 2;
    let cols = n * d * d;
    let mut jac = Matrix::zeros(rows, cols);
    for col in 0..cols {
        let mut unit = TangentStack::zeros(d, n);
        let (p, i, j) = (col / (d * d) + 1, (col % (d * d)) / d, col % d);
        let mut e = Matrix::zeros(d, d);
        e[(i, j)] = 1.0;
        unit.set_layer(p, e);
        let mut row = 0;
        for q in 1..n {
            let dc = unit.layer(q + 1).transpose() * state.layer(q + 1)
                + state.layer(q + 1).transpose() * unit.layer(q + 1)
                - unit.layer(q) * state.layer(q).transpose()
                - state.layer(q) * unit.layer(q).transpose();
            for a in 0..d {
                for b in a..d {
                    jac[(row, col)] = dc[(a, b)];
                    row += 1;
                }
            }
        }
    }
    jac
}

fn stack_to_vec(stack: &TangentStack, d: usize, n: usize) -> nalgebra::DVector<f64> {
    let mut v = nalgebra::DVector::zeros(n * d * d);
    for p in 1..=n {
        let layer = stack.layer(p);
        for i in 0..d {
            for j in 0..d {
                v[(p - 1) * d * d + i * d + j] = layer[(i, j)];
            }
        }
    }
    v
}

fn vec_to_stack(v: &nalgebra::DVector<f64>, d: usize, n: usize) -> TangentStack {
    let mut stack = TangentStack::zeros(d, n);
    for p in 1..=n {
        let layer = Matrix::from_fn(d, d, |i, j| v[(p - 1) * d * d + i * d + j]);
        stack.set_layer(p, layer);
    }
    stack
}

/// Orthogonal projection of a stack onto the kernel of the constraint
/// Jacobian: v − Jᵀ(JJᵀ)⁻¹Jv.
fn project_to_kernel(jac: &Matrix, stack: &TangentStack, d: usize, n: usize) -> TangentStack {
    let v = stack_to_vec(stack, d, n);
    let jv = jac * &v;
    let gram = jac * jac.transpose();
    match gram.lu().solve(&jv) {
        Some(coeffs) => vec_to_stack(&(v - jac.transpose() * coeffs), d, n),
        // A singular constraint Gram means the variety is degenerate here;
        // pass the raw noise through rather than fabricating a projection.
        None => stack.clone(),
    }
}

/// Gauss-Newton re-projection onto the variety with imbalance `g`:
/// minimal-norm correction solving C(𝐰 + Δ) = G, iterated to 1e-12.
fn reproject_to_variety(
    state: &NetworkState,
    g: &crate::network::ImbalanceG,
) -> Result<NetworkState> {
    let d = state.width();
    let n = state.depth();
    let mut current = state.clone();
    for _ in 0..20 {
        let residual = current.imbalance().distance(g);
        if residual <= 1e-12 {
            return Ok(current);
        }
        let jac = constraint_jacobian(&current);
        let mut c = nalgebra::DVector::zeros((n - 1) * d * (d + 1) / 2);
        let mut row = 0;
        let imb = current.imbalance();
        for q in 1..n {
            let diff = imb.entry(q) - g.entry(q);
            for a in 0..d {
                for b in a..d {
                    c[row] = diff[(a, b)];
                    row += 1;
                }
            }
        }
        let gram = &jac * jac.transpose();
        let coeffs = gram.lu().solve(&c).ok_or(DlnError::SingularOperator {
            sigma_min: 0.0,
        })?;
        let delta = vec_to_stack(&(-(jac.transpose() * coeffs)), d, n);
        current = current.translate(1.0, &delta);
        if !current.all_finite() {
            return Err(DlnError::NonFinite("variety re-projection".into()));
        }
    }
    let residual = current.imbalance().distance(g);
    if residual <= 1e-8 {
        Ok(current)
    } else {
        Err(DlnError::Domain(format!(
            "variety re-projection stalled at residual {residual:.3e}"
        )))
    }
}

/// Strictly ordered particle configuration x_1 < x_2 < … < x_d.
#[derive(Clone, Debug, PartialEq)]
pub struct DysonState {
    positions: Vec<f64>,
}

impl DysonState {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(DlnError::Dimension("empty particle configuration".into()));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(DlnError::NonFinite("particle positions".into()));
        }
        if positions.windows(2).any(|p| p[0] >= p[1]) {
            return Err(DlnError::Domain(
                "particle positions must be strictly increasing".into(),
            ));
        }
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Consecutive gaps x_{i+1} − x_i.
    pub fn gaps(&self) -> Vec<f64> {
        self.positions.windows(2).map(|p| p[1] - p[0]).collect()
    }
}

/// Pairwise repulsion drift Σ_{j≠i} 1/(x_i − x_j).
pub fn dyson_drift(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..d)
        .map(|i| {
            (0..d)
                .filter(|&j| j != i)
                .map(|j| 1.0 / (x[i] - x[j]))
                .sum()
        })
        .collect()
}

/// One Euler–Maruyama step of the interacting particle system
/// dx_i = Σ_{j≠i} dt/(x_i − x_j) + √(2/β) dW_i. A step that destroys the
/// ordering is rejected with a collision error so the caller can halve dt.
pub fn dyson_particle_step(
    x: &DysonState,
    beta: f64,
    dt: f64,
    noise: &[f64],
) -> Result<DysonState> {
    let d = x.len();
    if noise.len() != d {
        return Err(DlnError::Dimension(format!(
            "noise has length {}, expected {d}",
            noise.len()
        )));
    }
    let drift = dyson_drift(&x.positions);
    let amp = if beta.is_infinite() {
        0.0
    } else {
        (2.0 / beta).sqrt() * dt.sqrt()
    };
    let next: Vec<f64> = (0..d)
        .map(|i| x.positions[i] + dt * drift[i] + amp * noise[i])
        .collect();
    if next.windows(2).any(|p| p[0] >= p[1]) {
        return Err(DlnError::ParticleCollision { dt });
    }
    DysonState::new(next)
}

/// Advances the particle system by `dt`, halving the substep on collision up
/// to `max_halvings` times. Extra noise for substeps is drawn from `rng`.
pub fn dyson_particle_advance<R: Rng>(
    x: &DysonState,
    beta: f64,
    dt: f64,
    max_halvings: usize,
    rng: &mut R,
) -> Result<DysonState> {
    let noise: Vec<f64> = (0..x.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    match dyson_particle_step(x, beta, dt, &noise) {
        Ok(next) => Ok(next),
        Err(DlnError::ParticleCollision { .. }) if max_halvings > 0 => {
            let half = dyson_particle_advance(x, beta, dt / 2.0, max_halvings - 1, rng)?;
            dyson_particle_advance(&half, beta, dt / 2.0, max_halvings - 1, rng)
        }
        Err(e) => Err(e),
    }
}

/// One step of the matrix diffusion whose eigenvalues follow the particle
/// system: tangential (isospectral) noise at unit weight plus normal noise
/// at weight √(2κ/β), both read off the symmetric `noise` input in the
/// eigenframe of M, with an optional external drift −∇L(M) dt.
///
/// The tangential noise is normalized so each off-diagonal eigenframe entry
/// has variance dt; with that convention the eigenvalue law matches
/// [`dyson_particle_step`] at the same β.
pub fn dyson_matrix_step(
    m: &Matrix,
    beta: f64,
    kappa: f64,
    dt: f64,
    noise: &Matrix,
    loss_drift: Option<&Matrix>,
) -> Result<Matrix> {
    let d = m.nrows();
    let sym = matops::symmetrize(m);
    let eig = sym.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vmax = values
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        .max(1e-300);
    for pair in values.windows(2) {
        let gap = (pair[1] - pair[0]) / vmax;
        if gap <= tol::DEGENERATE_GAP_REL {
            return Err(DlnError::DegenerateSpectrum {
                gap,
                threshold: tol::DEGENERATE_GAP_REL,
            });
        }
    }
    let mut frame = Matrix::zeros(d, d);
    for (col, &i) in order.iter().enumerate() {
        frame.set_column(col, &eig.eigenvectors.column(i));
    }
    let amp_normal = if beta.is_infinite() {
        0.0
    } else {
        (2.0 * kappa / beta).sqrt()
    };
    let sqrt_dt = dt.sqrt();
    let mut dh = Matrix::zeros(d, d);
    for i in 0..d {
        dh[(i, i)] = amp_normal * noise[(i, i)] * sqrt_dt;
        for j in (i + 1)..d {
            let v = noise[(i, j)] * sqrt_dt;
            dh[(i, j)] = v;
            dh[(j, i)] = v;
        }
    }
    let mut out = &sym + &frame * dh * frame.transpose();
    if let Some(g) = loss_drift {
        out -= dt * g;
    }
    Ok(matops::symmetrize(&out))
}

/// One step of tangential Brownian motion on concentric spheres:
/// m ← m + (I − mmᵀ/|m|²) ξ √dt.
pub fn sphere_step(m: &DVector<f64>, dt: f64, noise: &DVector<f64>) -> Result<DVector<f64>> {
    let r_sq = m.norm_squared();
    if r_sq == 0.0 {
        return Err(DlnError::Domain(
            "tangential projection is undefined at the origin".into(),
        ));
    }
    let radial = m.dot(noise) / r_sq;
    Ok(m + dt.sqrt() * (noise - radial * m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_random, InitMode};
    use crate::stats;

    fn cfg(beta: f64, kappa: f64, dt: f64) -> SdeConfig {
        SdeConfig {
            beta,
            kappa,
            dt,
            t_end: 1.0,
            seed: 0,
            paths: 1,
            record_every: 1,
        }
    }

    #[test]
    fn bm_scalar_depth_one_is_plain_brownian() {
        // d = 1, N = 1: dX = √(2/β) dB, no drift (Σ″ = 0).
        let w = Matrix::from_element(1, 1, 0.7);
        let noise = Matrix::from_element(1, 1, 1.3);
        let beta = 4.0;
        let dt = 1e-3;
        let next = bm_gn_step(&w, beta, 1, dt, &noise).unwrap();
        let expected = 0.7 + (2.0_f64 / beta).sqrt() * dt.sqrt() * 1.3;
        assert!((next[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn bm_scalar_depth_two_coefficients() {
        // d = 1, N = 2, λ = 1: diffusion √(2/β)·√2, drift β⁻¹·1.
        let w = Matrix::from_element(1, 1, 1.0);
        let beta = 3.0;
        let dt = 1e-3;
        // Zero noise isolates the drift.
        let drift_only = bm_gn_step(&w, beta, 2, dt, &Matrix::zeros(1, 1)).unwrap();
        assert!((drift_only[(0, 0)] - (1.0 + dt / beta)).abs() < 1e-15);
        let with_noise = bm_gn_step(&w, beta, 2, dt, &Matrix::from_element(1, 1, 1.0)).unwrap();
        let expected = 1.0 + dt / beta + (2.0 / beta).sqrt() * 2.0f64.sqrt() * dt.sqrt();
        assert!((with_noise[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn bm_coefficient_continuous_at_degenerate_sigma() {
        let n = 3;
        let s = 1.1;
        let above = bm_noise_scale(s, s * (1.0 - 1.001 * tol::DEGENERATE_GAP_REL), n);
        let below = bm_noise_scale(s, s * (1.0 - 0.999 * tol::DEGENERATE_GAP_REL), n);
        assert!(((above - below) / above).abs() <= 1e-6);
    }

    #[test]
    fn bm_rejects_singular_state() {
        let w = Matrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(
            bm_gn_step(&w, 1.0, 2, 1e-3, &Matrix::zeros(2, 2)),
            Err(DlnError::SingularOperator { .. })
        ));
    }

    #[test]
    fn bm_flattening_coordinate_is_driftless_gaussian() {
        // For d = 1 the process Y = √N X^{1/N} is exactly Brownian motion of
        // variance rate 2/β: the Σ″ drift is its Itô correction. Compare
        // ensemble moments of X at a fixed time with Gauss–Hermite-style
        // quadrature of the transformed normal law.
        let n = 3usize;
        let beta = 8.0;
        let dt = 1e-3;
        let steps = 50;
        let paths = 2000;
        let x0 = 1.0f64;
        let mut finals = Vec::with_capacity(paths);
        for path in 0..paths {
            let mut rng = path_rng(4242, path as u64);
            let mut w = Matrix::from_element(1, 1, x0);
            for _ in 0..steps {
                let noise = normal_matrix(1, &mut rng);
                w = bm_gn_step(&w, beta, n, dt, &noise).unwrap();
            }
            finals.push(w[(0, 0)]);
        }
        let t = steps as f64 * dt;
        let y0 = (n as f64).sqrt() * x0.powf(1.0 / n as f64);
        let var = 2.0 / beta * t;
        // E |X_t| and E X_t² by trapezoid quadrature of the Gaussian in y.
        let quad = |power: f64| -> f64 {
            let m = 4001;
            let lo = y0 - 8.0 * var.sqrt();
            let hi = y0 + 8.0 * var.sqrt();
            let h = (hi - lo) / (m - 1) as f64;
            let mut acc = 0.0;
            for i in 0..m {
                let y: f64 = lo + i as f64 * h;
                let x = (y.abs() / (n as f64).sqrt()).powi(n as i32);
                let dens = (-(y - y0) * (y - y0) / (2.0 * var)).exp()
                    / (2.0 * std::f64::consts::PI * var).sqrt();
                let wgt = if i == 0 || i == m - 1 { 0.5 } else { 1.0 };
                acc += wgt * x.powf(power) * dens * h;
            }
            acc
        };
        let abs_mean: f64 = finals.iter().map(|x| x.abs()).sum::<f64>() / paths as f64;
        let second: f64 = finals.iter().map(|x| x * x).sum::<f64>() / paths as f64;
        assert!(
            ((abs_mean - quad(1.0)) / quad(1.0)).abs() < 0.05,
            "first moment {abs_mean} vs {}",
            quad(1.0)
        );
        assert!(
            ((second - quad(2.0)) / quad(2.0)).abs() < 0.05,
            "second moment {second} vs {}",
            quad(2.0)
        );
    }

    #[test]
    fn rle_down_kappa_zero_matches_euler_free_energy_descent() {
        let loss = LossSpec::diagonal_completion(2);
        let w = Matrix::from_row_slice(2, 2, &[1.2, 0.1, -0.3, 0.9]);
        let noise = Matrix::from_element(2, 2, 5.0); // must be ignored
                                                     // β = ∞: identical to an Euler step of the reduced field.
        let c = cfg(f64::INFINITY, 0.0, 1e-3);
        let next = rle_step_down(&w, &loss, 3, &c, &noise).unwrap();
        let euler = &w + 1e-3 * flows::reduced_field(&w, &loss, 3).unwrap();
        assert!((next - euler).norm() <= 1e-14);
    }

    #[test]
    fn rle_down_free_energy_decreases_without_noise() {
        let loss = LossSpec::diagonal_completion(2);
        let c = cfg(5.0, 0.0, 1e-3);
        let mut w = Matrix::from_row_slice(2, 2, &[1.5, 0.2, -0.4, 0.8]);
        let noise = Matrix::zeros(2, 2);
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let svd = matops::svd_ordered(&w).unwrap();
            let f = thermo::free_energy(svd.sigma_slice(), 3, &loss, &w, c.beta).unwrap();
            assert!(f <= prev + 1e-9, "free energy rose: {f} > {prev}");
            prev = f;
            w = rle_step_down(&w, &loss, 3, &c, &noise).unwrap();
        }
    }

    #[test]
    fn rle_up_zero_noise_reduces_to_euler() {
        let mut rng = path_rng(7, 0);
        let state = init_random(2, 3, 1.0, InitMode::Balanced, &mut rng).unwrap();
        let loss = LossSpec::diagonal_completion(2);
        let c = cfg(f64::INFINITY, 1.0, 1e-3);
        let noise = TangentStack::zeros(2, 3);
        let next = rle_step_up(&state, &loss, &c, &noise).unwrap();
        let drift = flows::full_flow_field(&state, &loss);
        let euler = state.translate(1e-3, &drift);
        for p in 1..=3 {
            assert!((next.layer(p) - euler.layer(p)).norm() <= 1e-14);
        }
    }

    #[test]
    fn rle_up_reprojection_keeps_balance() {
        let mut rng = path_rng(8, 0);
        let mut state = init_random(2, 3, 1.0, InitMode::Balanced, &mut rng).unwrap();
        let loss = LossSpec::diagonal_completion(2);
        let c = cfg(50.0, 1.0, 1e-4);
        for _ in 0..50 {
            let noise = normal_stack(2, 3, &mut rng);
            state = rle_step_up(&state, &loss, &c, &noise).unwrap();
            assert!(state.balance_residual() <= 1e-8);
        }
    }

    #[test]
    fn rle_up_rejects_unbalanced_states() {
        let mut rng = path_rng(9, 0);
        let state = init_random(2, 3, 1.0, InitMode::Gaussian, &mut rng).unwrap();
        assert!(state.balance_residual() > tol::BALANCE_PRECONDITION);
        let loss = LossSpec::diagonal_completion(2);
        let c = cfg(10.0, 1.0, 1e-3);
        let noise = TangentStack::zeros(2, 3);
        assert!(matches!(
            rle_step_up(&state, &loss, &c, &noise),
            Err(DlnError::Unbalanced { .. })
        ));
    }

    #[test]
    fn variety_step_preserves_the_imbalance() {
        // From a generic Gaussian init (nonzero imbalance), the exploratory
        // step must keep the state on its variety to machine precision and
        // the tangential projection must annihilate the constraint Jacobian.
        let mut rng = path_rng(90, 0);
        let mut state = init_random(2, 3, 0.8, InitMode::Gaussian, &mut rng).unwrap();
        let g0 = state.imbalance();
        assert!(g0.norm() > 1e-2);
        let loss = LossSpec::diagonal_completion(2);
        let c = cfg(30.0, 1.0, 1e-3);
        for _ in 0..50 {
            let noise = normal_stack(2, 3, &mut rng);
            state = rle_step_on_variety(&state, &loss, &g0, &c, &noise).unwrap();
            assert!(state.imbalance().distance(&g0) <= 1e-10);
        }

        let jac = constraint_jacobian(&state);
        let noise = normal_stack(2, 3, &mut rng);
        let tangential = project_to_kernel(&jac, &noise, 2, 3);
        let v = stack_to_vec(&tangential, 2, 3);
        assert!((jac * v).norm() <= 1e-10);
    }

    #[test]
    fn variety_step_at_zero_temperature_is_projected_euler() {
        // β = ∞: the drift alone already preserves the variety, so the
        // re-projection is a no-op up to integrator-scale corrections.
        let mut rng = path_rng(91, 0);
        let state = init_random(2, 3, 0.8, InitMode::Gaussian, &mut rng).unwrap();
        let g0 = state.imbalance();
        let loss = LossSpec::diagonal_completion(2);
        let c = cfg(f64::INFINITY, 1.0, 1e-3);
        let noise = TangentStack::zeros(2, 3);
        let next = rle_step_on_variety(&state, &loss, &g0, &c, &noise).unwrap();
        let euler = state.translate(1e-3, &flows::full_flow_field(&state, &loss));
        for p in 1..=3 {
            assert!((next.layer(p) - euler.layer(p)).norm() <= 1e-6);
        }
        assert!(next.imbalance().distance(&g0) <= 1e-12);
    }

    #[test]
    fn dyson_single_particle_is_brownian() {
        let x = DysonState::new(vec![0.0]).unwrap();
        let beta = 2.0;
        let dt = 1e-2;
        let next = dyson_particle_step(&x, beta, dt, &[1.5]).unwrap();
        let expected = (2.0f64 / beta).sqrt() * dt.sqrt() * 1.5;
        assert!((next.positions()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn dyson_deterministic_center_of_mass_fixed() {
        let x = DysonState::new(vec![-2.0, -0.3, 0.9, 2.4]).unwrap();
        let drift = dyson_drift(x.positions());
        let total: f64 = drift.iter().sum();
        assert!(total.abs() <= 1e-14);
    }

    #[test]
    fn dyson_drift_is_half_entropy_gradient() {
        // The repulsion drift is ½∇S(x) with S = 2 log van(x); check against
        // central finite differences of the log-Vandermonde.
        let x = [-1.3, 0.2, 0.9, 2.1];
        let drift = dyson_drift(&x);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut up = x;
            let mut dn = x;
            up[i] += h;
            dn[i] -= h;
            let s = |v: &[f64]| 2.0 * crate::matops::vandermonde(v).abs().ln();
            let fd = (s(&up) - s(&dn)) / (2.0 * h);
            assert!(
                (drift[i] - 0.5 * fd).abs() <= 1e-6 * drift[i].abs().max(1.0),
                "component {i}"
            );
        }
    }

    #[test]
    fn rle_up_kappa_zero_rolls_without_slipping() {
        // κ = 0: gauge noise only. The projected path φ(w_t) tracks the
        // deterministic free-energy flow downstairs with a per-path
        // deviation of order √dt: quartering dt should roughly halve it.
        let (d, n) = (2usize, 3usize);
        let loss = LossSpec::diagonal_completion(d);
        let beta = 20.0;
        let t_end = 0.4;

        // Reference: RK4 on the free-energy flow at a fine step.
        let reference = {
            let dt = 2.5e-5;
            let steps = (t_end / dt) as usize;
            let mut rng = path_rng(71, 0);
            let state0 = init_random(d, n, 0.7, InitMode::Balanced, &mut rng).unwrap();
            let mut w = state0.end_to_end();
            let mut snapshots = vec![w.clone()];
            let field = |w: &Matrix| -thermo::grad_free_energy(w, &loss, n, beta).unwrap();
            for step in 1..=steps {
                let k1 = field(&w);
                let k2 = field(&(&w + 0.5 * dt * &k1));
                let k3 = field(&(&w + 0.5 * dt * &k2));
                let k4 = field(&(&w + dt * &k3));
                w += dt / 6.0 * (&k1 + 2.0 * &k2 + 2.0 * &k3 + &k4);
                if step % ((0.1 / dt) as usize) == 0 {
                    snapshots.push(w.clone());
                }
            }
            snapshots
        };

        let mean_sup_dev = |dt: f64| -> f64 {
            let paths = 24;
            let steps = (t_end / dt) as usize;
            let snap_every = (0.1 / dt) as usize;
            let mut acc = 0.0;
            for path in 0..paths {
                let mut rng = path_rng(71, 0); // same init as the reference
                let state0 = init_random(d, n, 0.7, InitMode::Balanced, &mut rng).unwrap();
                let mut state = state0;
                let mut noise_rng = path_rng(72, path as u64);
                let cfg = SdeConfig {
                    beta,
                    kappa: 0.0,
                    dt,
                    t_end,
                    seed: 0,
                    paths: 1,
                    record_every: 1,
                };
                let mut sup = 0.0f64;
                let mut snap = 1;
                for step in 1..=steps {
                    let noise = normal_stack(d, n, &mut noise_rng);
                    state = rle_step_up(&state, &loss, &cfg, &noise).unwrap();
                    if step % snap_every == 0 {
                        let dev = (state.end_to_end() - &reference[snap]).norm();
                        sup = sup.max(dev);
                        snap += 1;
                    }
                }
                acc += sup;
            }
            acc / paths as f64
        };

        let coarse = mean_sup_dev(2e-3);
        let fine = mean_sup_dev(5e-4);
        let ratio = coarse / fine;
        assert!(
            ratio > 1.3 && ratio < 3.5,
            "deviation {coarse:.3e} -> {fine:.3e}, ratio {ratio:.2} not ~2 (order 1/2)"
        );
    }

    #[test]
    fn dyson_deterministic_gap_matches_analytic_law() {
        // g(t) = √(g0² + 4t) for the symmetric pair; Euler at dt = 1e-4.
        let mut x = DysonState::new(vec![-1.0, 1.0]).unwrap();
        let dt = 1e-4;
        let steps = (3.0 / dt) as usize;
        for _ in 0..steps {
            x = dyson_particle_step(&x, f64::INFINITY, dt, &[0.0, 0.0]).unwrap();
        }
        let gap = x.positions()[1] - x.positions()[0];
        assert!((gap - 4.0).abs() <= 1e-3, "gap {gap}");
        // The analytic law itself rechecked by brute-force RK4.
        let brute = crate::oracle::dyson_deterministic_rk4(&[-1.0, 1.0], 3.0, 1e-4);
        assert!((brute[1] - brute[0] - 4.0).abs() <= 1e-8);
    }

    #[test]
    fn dyson_collision_is_rejected_and_halving_recovers() {
        let x = DysonState::new(vec![-0.01, 0.01]).unwrap();
        // A huge noise kick across the gap must be rejected...
        let err = dyson_particle_step(&x, 1.0, 1e-2, &[10.0, -10.0]);
        assert!(matches!(err, Err(DlnError::ParticleCollision { .. })));
        // ...while the halving driver pushes through.
        let mut rng = path_rng(11, 0);
        let next = dyson_particle_advance(&x, 1.0, 1e-2, 10, &mut rng).unwrap();
        assert!(next.positions()[0] < next.positions()[1]);
    }

    #[test]
    fn dyson_matrix_step_identity_cases() {
        let m = Matrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0]));
        // No noise, no loss: M is unchanged.
        let next = dyson_matrix_step(&m, 1.0, 1.0, 1e-3, &Matrix::zeros(2, 2), None).unwrap();
        assert!((next - &m).norm() <= 1e-14);
        // Degenerate spectrum is refused.
        let deg = Matrix::identity(2, 2);
        assert!(matches!(
            dyson_matrix_step(&deg, 1.0, 1.0, 1e-3, &Matrix::zeros(2, 2), None),
            Err(DlnError::DegenerateSpectrum { .. })
        ));
    }

    #[test]
    fn dyson_matrix_mean_eigenvalue_drift_matches_interaction() {
        // β = ∞: only tangential noise; the ensemble-mean eigenvalue
        // increment per step is the repulsion term (the Itô correction).
        let x0 = [-1.0, 0.2, 1.3];
        let m0 = Matrix::from_diagonal(&DVector::from_vec(x0.to_vec()));
        let dt = 1e-4;
        let paths = 20000;
        let mut mean_incr = vec![0.0f64; 3];
        for path in 0..paths {
            let mut rng = path_rng(12, path as u64);
            let noise = normal_matrix(3, &mut rng);
            let m1 = dyson_matrix_step(&m0, f64::INFINITY, 1.0, dt, &noise, None).unwrap();
            let eig = m1.symmetric_eigen();
            let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for i in 0..3 {
                mean_incr[i] += (vals[i] - x0[i]) / paths as f64;
            }
        }
        let drift = dyson_drift(&x0);
        for i in 0..3 {
            let expected = drift[i] * dt;
            // Monte Carlo error ~ √(dt/paths) per component.
            let se = (dt / paths as f64).sqrt() * 3.0;
            assert!(
                (mean_incr[i] - expected).abs() <= 3.0 * se + 0.05 * expected.abs(),
                "component {i}: {} vs {}",
                mean_incr[i],
                expected
            );
        }
    }

    #[test]
    fn sphere_step_edge_cases() {
        // Zero noise: unchanged.
        let m = DVector::from_vec(vec![1.0, 2.0]);
        let next = sphere_step(&m, 1e-2, &DVector::zeros(2)).unwrap();
        assert_eq!(next, m);
        // d = 1: the tangent space is trivial, noise is annihilated.
        let m1 = DVector::from_vec(vec![0.8]);
        let next = sphere_step(&m1, 1e-2, &DVector::from_vec(vec![3.0])).unwrap();
        assert!((next[0] - 0.8).abs() <= 1e-15);
        // Origin: undefined projection.
        assert!(sphere_step(&DVector::zeros(2), 1e-2, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn sde_paths_are_reproducible() {
        let run = || -> Vec<f64> {
            let mut rng = path_rng(33, 5);
            let mut x = DysonState::new(vec![-1.0, 1.0]).unwrap();
            for _ in 0..100 {
                x = dyson_particle_advance(&x, 1.0, 1e-3, 10, &mut rng).unwrap();
            }
            x.positions().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sphere_discretization_error_is_first_order() {
        // For this scheme E[r²] is exactly unbiased at every dt (the step
        // increment of r² is dt·ξᵀPξ with mean (d−1)dt), while the spurious
        // fluctuation of r² is a pure discretization artifact with variance
        // ≈ 2(d−1)·t·dt that must halve when dt halves.
        let d = 4;
        let t_end = 0.5;
        let paths = 4000;
        let run = |dt: f64, seed_lane: u64| -> Vec<f64> {
            let steps = (t_end / dt) as usize;
            (0..paths)
                .map(|path| {
                    let mut rng = path_rng(55 + seed_lane, path as u64);
                    let mut m = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
                    for _ in 0..steps {
                        let noise = normal_vector(d, &mut rng);
                        m = sphere_step(&m, dt, &noise).unwrap();
                    }
                    m.norm_squared()
                })
                .collect()
        };
        let target = 1.0 + (d as f64 - 1.0) * t_end;
        for (dt, lane) in [(0.02, 0), (0.01, 1)] {
            let finals = run(dt, lane);
            let bias = stats::mean(&finals) - target;
            let se = stats::standard_error(&finals);
            assert!(bias.abs() <= 4.0 * se, "dt={dt}: bias {bias} vs se {se}");
            let var = stats::variance(&finals);
            let predicted = 2.0 * (d as f64 - 1.0) * t_end * dt;
            assert!(
                (var / predicted - 1.0).abs() <= 0.2,
                "dt={dt}: var {var} vs predicted {predicted}"
            );
        }
    }
}
