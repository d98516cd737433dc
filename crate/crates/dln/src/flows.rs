//! Deterministic dynamics: loss functions, the full gradient flow on the
//! stack, the closed equation for the end-to-end matrix, the reduced flow on
//! the balanced manifold through the depth-N operator, and fixed-step ODE
//! integration with trajectory diagnostics.
//!
//! The depth-N operator
//!   𝒜_{N,W}(Z) = Σ_{k=1}^N (WWᵀ)^{(N-k)/N} Z (WᵀW)^{(k-1)/N}
//! is applied spectrally: in the singular basis of W it acts diagonally with
//! (σ_k² − σ_l²)/(σ_k^{2/N} − σ_l^{2/N}) on mixed directions and
//! N σ_k^{2-2/N} on aligned ones, which costs O(d³) regardless of N and
//! stays exact at large depth. The literal power sum survives only as a test
//! oracle (see `oracle`).

use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::matops::{self, Matrix, SvdTriple};
use crate::network::{NetworkState, TangentStack};
use crate::tol;

/// One observed entry of a completion problem (0-based indices).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub row: usize,
    pub col: usize,
    pub target: f64,
}

/// A differentiable energy on end-to-end matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// E(W) = ½ Σ_{(i,j)∈S} (W_ij − a_ij)².
    Completion { entries: Vec<MaskEntry> },
    /// E(W) = ½ Tr(WᵀW).
    FrobeniusQuadratic,
}

impl LossSpec {
    /// The completion problem that pins the diagonal to 1.
    pub fn diagonal_completion(d: usize) -> Self {
        LossSpec::Completion {
            entries: (0..d)
                .map(|i| MaskEntry {
                    row: i,
                    col: i,
                    target: 1.0,
                })
                .collect(),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if let LossSpec::Completion { entries } = self {
            for e in entries {
                if e.row >= d || e.col >= d {
                    return Err(DlnError::Config(format!(
                        "mask entry ({}, {}) outside a {d}x{d} matrix",
                        e.row, e.col
                    )));
                }
                if !e.target.is_finite() {
                    return Err(DlnError::Config("non-finite completion target".into()));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, w: &Matrix) -> f64 {
        match self {
            LossSpec::Completion { entries } => entries
                .iter()
                .map(|e| {
                    let r = w[(e.row, e.col)] - e.target;
                    0.5 * r * r
                })
                .sum(),
            LossSpec::FrobeniusQuadratic => 0.5 * w.norm_squared(),
        }
    }

    /// E′(W), the entrywise gradient.
    pub fn gradient(&self, w: &Matrix) -> Matrix {
        match self {
            LossSpec::Completion { entries } => {
                let mut g = Matrix::zeros(w.nrows(), w.ncols());
                for e in entries {
                    g[(e.row, e.col)] += w[(e.row, e.col)] - e.target;
                }
                g
            }
            LossSpec::FrobeniusQuadratic => w.clone(),
        }
    }
}

/// Eigenvalue of the depth-N operator on the (k, l) singular direction:
/// (σ_k² − σ_l²)/(σ_k^{2/N} − σ_l^{2/N}), evaluated through log1p/expm1 so
/// the divided difference keeps full precision down to the degenerate-gap
/// threshold, where the analytic limit N σ̄^{2-2/N} takes over.
pub fn a_scale(sigma_k: f64, sigma_l: f64, n: usize) -> f64 {
    let nf = n as f64;
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
        return nf * mid.powf(2.0 - 2.0 / nf);
    }
    if lo == 0.0 {
        return hi.powf(2.0 - 2.0 / nf);
    }
    let log_ratio = ((hi - lo) / lo).ln_1p();
    let num = (hi - lo) * (hi + lo);
    let den = lo.powf(2.0 / nf) * (2.0 * log_ratio / nf).exp_m1();
    num / den
}

/// σ_k^{2/N} − σ_l^{2/N}, signed, with the same stable evaluation as
/// [`a_scale`]. Requires both entries positive.
pub fn pow_diff_two_over_n(sigma_k: f64, sigma_l: f64, n: usize) -> f64 {
    if sigma_k == sigma_l {
        return 0.0;
    }
    let nf = n as f64;
    let (hi, lo, sign) = if sigma_k > sigma_l {
        (sigma_k, sigma_l, 1.0)
    } else {
        (sigma_l, sigma_k, -1.0)
    };
    let log_ratio = ((hi - lo) / lo).ln_1p();
    sign * lo.powf(2.0 / nf) * (2.0 * log_ratio / nf).exp_m1()
}

/// 𝒜_{N,W}(Z) from precomputed SVD data of W.
pub fn apply_a(svd: &SvdTriple, z: &Matrix, n: usize) -> Matrix {
    let d = svd.dim();
    let mut z_hat = svd.q_left.transpose() * z * &svd.q_right;
    for k in 0..d {
        for l in 0..d {
            z_hat[(k, l)] *= a_scale(svd.sigma[k], svd.sigma[l], n);
        }
    }
    &svd.q_left * z_hat * svd.q_right.transpose()
}

/// 𝒜_{N,W}(Z) taking W directly.
pub fn apply_a_matrix(w: &Matrix, z: &Matrix, n: usize) -> Result<Matrix> {
    let svd = matops::svd_ordered(w)?;
    Ok(apply_a(&svd, z, n))
}

/// 𝒜_{N,W}⁻¹(Z); requires all singular values strictly positive.
pub fn apply_a_inverse(svd: &SvdTriple, z: &Matrix, n: usize) -> Result<Matrix> {
    let d = svd.dim();
    let sigma_min = svd.sigma_min();
    if sigma_min <= tol::FULL_RANK_MIN {
        return Err(DlnError::SingularOperator { sigma_min });
    }
    let mut z_hat = svd.q_left.transpose() * z * &svd.q_right;
    for k in 0..d {
        for l in 0..d {
            z_hat[(k, l)] /= a_scale(svd.sigma[k], svd.sigma[l], n);
        }
    }
    Ok(&svd.q_left * z_hat * svd.q_right.transpose())
}

/// The gradient flow on the stack:
/// Ẇ_p = −(W_N ⋯ W_{p+1})ᵀ E′(W) (W_{p-1} ⋯ W_1)ᵀ,
/// with empty products equal to the identity. Partial products are built
/// once, so the whole field costs O(N) matrix multiplies.
pub fn full_flow_field(state: &NetworkState, loss: &LossSpec) -> TangentStack {
    let n = state.depth();
    let products = state.partial_products();
    let e_prime = loss.gradient(products.end_to_end());
    let mut layers_desc = Vec::with_capacity(n);
    for p in (1..=n).rev() {
        let layer =
            -(products.prefix(p + 1).transpose() * &e_prime * products.suffix(p - 1).transpose());
        layers_desc.push(layer);
    }
    TangentStack::new(layers_desc)
}

/// The closed equation for the end-to-end matrix on an arbitrary stack:
/// Ẇ = −Σ_p (A_{p+1} A_{p+1}ᵀ) E′(W) (B_{p-1}ᵀ B_{p-1}).
pub fn end_to_end_field_general(state: &NetworkState, loss: &LossSpec) -> Matrix {
    let n = state.depth();
    let d = state.width();
    let products = state.partial_products();
    let e_prime = loss.gradient(products.end_to_end());
    let mut field = Matrix::zeros(d, d);
    for p in 1..=n {
        let a = products.prefix(p + 1);
        let b = products.suffix(p - 1);
        field -= (a * a.transpose()) * &e_prime * (b.transpose() * b);
    }
    field
}

/// The reduced flow on the balanced manifold: Ẇ = −𝒜_{N,W}(E′(W)), which is
/// Riemannian gradient descent of E in the depth-N metric.
pub fn reduced_field(w: &Matrix, loss: &LossSpec, n: usize) -> Result<Matrix> {
    let svd = matops::svd_ordered(w)?;
    Ok(-apply_a(&svd, &loss.gradient(w), n))
}

/// Integration method for the fixed-step schemes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rk4,
    Euler,
}

/// Fixed-step integration settings.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FlowConfig {
    pub method: Method,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
}

impl FlowConfig {
    pub fn rk4(dt: f64, t_end: f64, record_every: usize) -> Self {
        Self {
            method: Method::Rk4,
            dt,
            t_end,
            record_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
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
        if self.record_every == 0 {
            return Err(DlnError::Config("record_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

/// Time-stamped diagnostics captured along a trajectory.
///
/// `balance_residual` and `g_drift` are zero for trajectories that live
/// downstairs, where they carry no information.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub energy: f64,
    pub entropy: f64,
    pub free_energy: f64,
    pub sigma: Vec<f64>,
    pub balance_residual: f64,
    pub g_drift: f64,
    pub det_w: f64,
    /// Squared gradient norm in the geometry the flow descends
    /// (‖grad E‖²_{g^N} downstairs, Σ_p ‖Ẇ_p‖_F² upstairs).
    pub grad_norm_sq: f64,
    /// |dE/dt + ‖grad‖²| with dE/dt from centered differences of recorded
    /// energies; filled for interior records after integration.
    pub decay_residual: Option<f64>,
}

impl TrajectoryRecord {
    /// CSV header for trajectory files: fixed columns, then one singular
    /// value column per dimension.
    pub fn csv_header(d: usize) -> String {
        let mut cols = vec!["t", "E", "S", "F"]
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>();
        for k in 1..=d {
            cols.push(format!("sigma_{k}"));
        }
        cols.extend(
            ["balance_residual", "g_drift", "det_w"]
                .iter()
                .map(|s| s.to_string()),
        );
        cols.join(",")
    }

    pub fn csv_values(&self) -> Vec<f64> {
        let mut vals = vec![self.t, self.energy, self.entropy, self.free_energy];
        vals.extend_from_slice(&self.sigma);
        vals.extend_from_slice(&[self.balance_residual, self.g_drift, self.det_w]);
        vals
    }
}

/// Result of a fixed-step integration. `aborted_at` is set when a non-finite
/// state was encountered; `records` then ends at the last good record.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub aborted_at: Option<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryRecord {
        self.records.last().expect("at least the initial record")
    }
}

/// A state that a fixed-step scheme can move: a point plus directions that
/// can be scaled and added (phase space is flat here).
pub trait FlowState: Clone {
    type Dir;
    /// self + Σ c_i · dir_i.
    fn offset(&self, terms: &[(f64, &Self::Dir)]) -> Self;
    fn all_finite(&self) -> bool;
}

impl FlowState for Matrix {
    type Dir = Matrix;

    fn offset(&self, terms: &[(f64, &Matrix)]) -> Matrix {
        let mut out = self.clone();
        for (c, dir) in terms {
            out += *c * *dir;
        }
        out
    }

    fn all_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

impl FlowState for NetworkState {
    type Dir = TangentStack;

    fn offset(&self, terms: &[(f64, &TangentStack)]) -> NetworkState {
        let mut out = self.clone();
        for (c, dir) in terms {
            out = out.translate(*c, dir);
        }
        out
    }

    fn all_finite(&self) -> bool {
        NetworkState::all_finite(self)
    }
}

/// Fixed-step RK4 (or Euler) integration of ẏ = field(y).
///
/// `observe(t, y, field(y))` is called at step 0, every `record_every`-th
/// step and at the final step. After the sweep, interior records get their
/// energy-decay residual |dE/dt + ‖grad‖²| filled in from centered
/// differences of the recorded energies. Integration stops early if the
/// state leaves the finite range; the last good record is kept and
/// `aborted_at` is set.
pub fn integrate<S, F, O>(field: F, y0: S, cfg: &FlowConfig, mut observe: O) -> Trajectory
where
    S: FlowState,
    F: Fn(&S) -> S::Dir,
    O: FnMut(f64, &S, &S::Dir) -> TrajectoryRecord,
{
    let steps = cfg.steps();
    let dt = cfg.dt;
    let mut records = Vec::new();
    let mut y = y0;
    let mut aborted_at = None;

    for step in 0..=steps {
        let t = step as f64 * dt;
        if !y.all_finite() {
            aborted_at = Some(t);
            break;
        }
        let k1 = field(&y);
        if step % cfg.record_every == 0 || step == steps {
            records.push(observe(t, &y, &k1));
        }
        if step == steps {
            break;
        }
        y = match cfg.method {
            Method::Euler => y.offset(&[(dt, &k1)]),
            Method::Rk4 => {
                let k2 = field(&y.offset(&[(0.5 * dt, &k1)]));
                let k3 = field(&y.offset(&[(0.5 * dt, &k2)]));
                let k4 = field(&y.offset(&[(dt, &k3)]));
                y.offset(&[
                    (dt / 6.0, &k1),
                    (dt / 3.0, &k2),
                    (dt / 3.0, &k3),
                    (dt / 6.0, &k4),
                ])
            }
        };
    }

    fill_decay_residuals(&mut records);
    Trajectory {
        records,
        aborted_at,
    }
}

/// Centered-difference energy rate against the recorded squared gradient
/// norm; the residual of the identity dE/dt = −‖grad‖². O(Δt²) accurate in
/// the record spacing.
pub fn fill_decay_residuals(records: &mut [TrajectoryRecord]) {
    if records.len() < 3 {
        return;
    }
    for i in 1..records.len() - 1 {
        let dt = records[i + 1].t - records[i - 1].t;
        if dt <= 0.0 {
            continue;
        }
        let de_dt = (records[i + 1].energy - records[i - 1].energy) / dt;
        records[i].decay_residual = Some((de_dt + records[i].grad_norm_sq).abs());
    }
}
