//! The state upstairs: weight stacks, the end-to-end projection φ, conserved
//! imbalances, balance residuals, and the two parametrizations of the
//! balanced manifold (sequential polar recursion, and singular-value
//! coordinates W_p = Q_p Λ Q_{p-1}ᵀ).
//!
//! Stacks are stored in depth-descending order (W_N, …, W_1), mirroring the
//! usual notation for the end-to-end product W = W_N ⋯ W_1. All index
//! arithmetic is hidden behind `layer(p)` accessors with 1-based layer p, and
//! serialized documents record the layer index explicitly so files cannot be
//! misread off by one.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::io;
use crate::matops::{self, Matrix, SvdTriple};
use crate::tol;

/// A point of the network phase space: the stack 𝐖 = (W_N, …, W_1).
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    width: usize,
    weights: Vec<Matrix>, // (W_N, ..., W_1)
}

/// A stack of layer matrices (V_N, …, V_1); tangent vectors upstairs and
/// layerwise vector fields both use this shape.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentStack {
    width: usize,
    layers: Vec<Matrix>, // (V_N, ..., V_1)
}

/// The conserved layerwise imbalances (G_{N-1}, …, G_1) with
/// G_p = W_{p+1}ᵀ W_{p+1} − W_p W_pᵀ.
#[derive(Clone, Debug, PartialEq)]
pub struct ImbalanceG {
    width: usize,
    entries: Vec<Matrix>, // (G_{N-1}, ..., G_1)
}

/// Singular-value coordinates (Λ, Q_N, …, Q_0) of the balanced manifold:
/// W_p = Q_p Λ Q_{p-1}ᵀ with Λ positive and descending.
#[derive(Clone, Debug)]
pub struct BalancedCoords {
    lambda: DVector<f64>,
    frames: Vec<Matrix>, // (Q_N, ..., Q_0)
}

/// Initialization modes for random states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Gaussian,
    Balanced,
}

impl NetworkState {
    /// Build from layers in depth-descending order (W_N, …, W_1).
    pub fn new(weights_desc: Vec<Matrix>) -> Result<Self> {
        if weights_desc.is_empty() {
            return Err(DlnError::Dimension("empty weight stack".into()));
        }
        let d = weights_desc[0].nrows();
        for (i, w) in weights_desc.iter().enumerate() {
            if w.nrows() != w.ncols() {
                return Err(DlnError::NotSquare {
                    rows: w.nrows(),
                    cols: w.ncols(),
                });
            }
            if w.nrows() != d {
                return Err(DlnError::Dimension(format!(
                    "layer {} is {}x{} but width is {}",
                    weights_desc.len() - i,
                    w.nrows(),
                    w.ncols(),
                    d
                )));
            }
            if !w.iter().all(|x| x.is_finite()) {
                return Err(DlnError::NonFinite(format!(
                    "weight layer {}",
                    weights_desc.len() - i
                )));
            }
        }
        Ok(Self {
            width: d,
            weights: weights_desc,
        })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// W_p for 1 ≤ p ≤ N.
    pub fn layer(&self, p: usize) -> &Matrix {
        &self.weights[self.depth() - p]
    }

    /// Layers in depth-descending order (W_N, …, W_1).
    pub fn layers_desc(&self) -> &[Matrix] {
        &self.weights
    }

    /// The end-to-end matrix W = W_N W_{N-1} ⋯ W_1.
    pub fn end_to_end(&self) -> Matrix {
        let mut w = self.layer(1).clone();
        for p in 2..=self.depth() {
            w = self.layer(p) * w;
        }
        w
    }

    /// Prefix/suffix partial products, computed once in O(N) multiplies.
    pub fn partial_products(&self) -> PartialProducts {
        let n = self.depth();
        let d = self.width;
        let mut b = Vec::with_capacity(n + 1);
        b.push(Matrix::identity(d, d));
        for p in 1..=n {
            let next = self.layer(p) * &b[p - 1];
            b.push(next);
        }
        let mut a = vec![Matrix::identity(d, d); n + 1];
        for p in (1..=n).rev() {
            a[p - 1] = &a[p] * self.layer(p);
        }
        PartialProducts { a, b }
    }

    /// G_p = W_{p+1}ᵀ W_{p+1} − W_p W_pᵀ, symmetrized to kill roundoff skew.
    pub fn imbalance(&self) -> ImbalanceG {
        let n = self.depth();
        let mut entries = Vec::with_capacity(n.saturating_sub(1));
        for p in (1..n).rev() {
            let g = self.layer(p + 1).transpose() * self.layer(p + 1)
                - self.layer(p) * self.layer(p).transpose();
            entries.push(matops::symmetrize(&g));
        }
        ImbalanceG {
            width: self.width,
            entries,
        }
    }

    /// max_p ‖W_{p+1}ᵀ W_{p+1} − W_p W_pᵀ‖_F; zero exactly on the balanced
    /// variety.
    pub fn balance_residual(&self) -> f64 {
        self.imbalance()
            .entries
            .iter()
            .fold(0.0f64, |acc, g| acc.max(g.norm()))
    }

    /// Frobenius norm of the whole stack.
    pub fn frobenius_norm(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
    }

    /// The stack viewed as a flat vector (a clone).
    pub fn to_stack(&self) -> TangentStack {
        TangentStack {
            width: self.width,
            layers: self.weights.clone(),
        }
    }

    /// self + c · dir, layer by layer.
    pub fn translate(&self, c: f64, dir: &TangentStack) -> NetworkState {
        let layers = self
            .weights
            .iter()
            .zip(dir.layers.iter())
            .map(|(w, v)| w + c * v)
            .collect();
        NetworkState {
            width: self.width,
            weights: layers,
        }
    }

    /// JSON checkpoint with explicit layer indices.
    pub fn to_json(&self) -> Result<String> {
        let doc = StateDoc {
            d: self.width,
            n: self.depth(),
            weights: (1..=self.depth())
                .rev()
                .map(|p| LayerDoc {
                    layer: p,
                    rows: matrix_rows(self.layer(p)),
                })
                .collect(),
        };
        Ok(io::to_json_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: StateDoc =
            serde_json::from_str(text).map_err(|e| DlnError::Config(format!("state json: {e}")))?;
        if doc.weights.len() != doc.n {
            return Err(DlnError::Config(format!(
                "state json lists {} layers but n = {}",
                doc.weights.len(),
                doc.n
            )));
        }
        let mut slots: Vec<Option<Matrix>> = vec![None; doc.n];
        for layer in &doc.weights {
            if layer.layer == 0 || layer.layer > doc.n {
                return Err(DlnError::Config(format!(
                    "layer index {} out of range 1..={}",
                    layer.layer, doc.n
                )));
            }
            let m = rows_matrix(&layer.rows, doc.d)?;
            if slots[layer.layer - 1].replace(m).is_some() {
                return Err(DlnError::Config(format!(
                    "duplicate layer index {}",
                    layer.layer
                )));
            }
        }
        let mut weights = Vec::with_capacity(doc.n);
        for p in (1..=doc.n).rev() {
            weights.push(slots[p - 1].take().expect("all slots filled"));
        }
        NetworkState::new(weights)
    }
}

/// Partial products A_p = W_N ⋯ W_p and B_p = W_p ⋯ W_1 with the empty
/// conventions A_{N+1} = B_0 = I.
pub struct PartialProducts {
    a: Vec<Matrix>, // a[p-1] = A_p for 1 <= p <= N+1
    b: Vec<Matrix>, // b[p] = B_p for 0 <= p <= N
}

impl PartialProducts {
    /// A_p = W_N ⋯ W_p, valid for 1 ≤ p ≤ N+1.
    pub fn prefix(&self, p: usize) -> &Matrix {
        &self.a[p - 1]
    }

    /// B_p = W_p ⋯ W_1, valid for 0 ≤ p ≤ N.
    pub fn suffix(&self, p: usize) -> &Matrix {
        &self.b[p]
    }

    /// The full product W = B_N.
    pub fn end_to_end(&self) -> &Matrix {
        &self.b[self.b.len() - 1]
    }
}

impl TangentStack {
    /// Build from layers in depth-descending order (V_N, …, V_1).
    pub fn new(layers_desc: Vec<Matrix>) -> Self {
        let width = layers_desc.first().map(|m| m.nrows()).unwrap_or(0);
        Self {
            width,
            layers: layers_desc,
        }
    }

    pub fn zeros(d: usize, n: usize) -> Self {
        Self {
            width: d,
            layers: vec![Matrix::zeros(d, d); n],
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// V_p for 1 ≤ p ≤ N.
    pub fn layer(&self, p: usize) -> &Matrix {
        &self.layers[self.depth() - p]
    }

    pub fn set_layer(&mut self, p: usize, m: Matrix) {
        let n = self.depth();
        self.layers[n - p] = m;
    }

    pub fn layers_desc(&self) -> &[Matrix] {
        &self.layers
    }

    /// self += c · rhs.
    pub fn axpy(&mut self, c: f64, rhs: &TangentStack) {
        for (a, b) in self.layers.iter_mut().zip(rhs.layers.iter()) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in self.layers.iter_mut() {
            *a *= c;
        }
    }

    /// Stack Frobenius inner product Σ_p Tr(V_pᵀ U_p).
    pub fn inner(&self, rhs: &TangentStack) -> f64 {
        self.layers
            .iter()
            .zip(rhs.layers.iter())
            .map(|(a, b)| matops::frob_inner(a, b))
            .sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.layers.iter().map(|m| m.norm_squared()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }

    pub fn into_state(self) -> Result<NetworkState> {
        NetworkState::new(self.layers)
    }
}

impl ImbalanceG {
    /// Build from entries in depth-descending order (G_{N-1}, …, G_1).
    /// Entries are symmetrized; a defect beyond tolerance is an error.
    pub fn new(entries_desc: Vec<Matrix>) -> Result<Self> {
        let width = entries_desc.first().map(|m| m.nrows()).unwrap_or(0);
        for g in &entries_desc {
            let skew = (g - g.transpose()).norm();
            if skew > tol::SYMMETRY * (1.0 + g.norm()) {
                return Err(DlnError::Domain(format!(
                    "imbalance entry has symmetry defect {:.3e}",
                    skew
                )));
            }
        }
        Ok(Self {
            width,
            entries: entries_desc.iter().map(matops::symmetrize).collect(),
        })
    }

    pub fn zeros(d: usize, depth: usize) -> Self {
        Self {
            width: d,
            entries: vec![Matrix::zeros(d, d); depth.saturating_sub(1)],
        }
    }

    /// Number of entries, N − 1.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// G_p for 1 ≤ p ≤ N−1.
    pub fn entry(&self, p: usize) -> &Matrix {
        &self.entries[self.entries.len() - p]
    }

    /// Stacked Frobenius norm (Σ_p ‖G_p‖_F²)^{1/2}.
    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|g| g.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Stacked Frobenius distance to another imbalance.
    pub fn distance(&self, other: &ImbalanceG) -> f64 {
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

impl BalancedCoords {
    /// Build from Λ (descending, positive) and frames in depth-descending
    /// order (Q_N, …, Q_0).
    pub fn new(lambda: DVector<f64>, frames_desc: Vec<Matrix>) -> Result<Self> {
        let d = lambda.len();
        if frames_desc.len() < 2 {
            return Err(DlnError::Dimension(
                "coordinates need at least frames Q_1, Q_0".into(),
            ));
        }
        for (i, pair) in lambda.as_slice().windows(2).enumerate() {
            if pair[1] > pair[0] {
                return Err(DlnError::Domain(format!(
                    "lambda must be descending, entry {} = {:.3e} < entry {} = {:.3e}",
                    i,
                    pair[0],
                    i + 1,
                    pair[1]
                )));
            }
        }
        if lambda.iter().any(|&x| !(x > tol::FULL_RANK_MIN)) {
            return Err(DlnError::Domain(format!(
                "lambda entries must exceed {:.1e} (full-rank scope)",
                tol::FULL_RANK_MIN
            )));
        }
        for (i, q) in frames_desc.iter().enumerate() {
            if q.nrows() != d || q.ncols() != d {
                return Err(DlnError::Dimension(format!(
                    "frame {} is {}x{}, expected {}x{}",
                    frames_desc.len() - 1 - i,
                    q.nrows(),
                    q.ncols(),
                    d,
                    d
                )));
            }
            let defect = matops::orthogonality_defect(q);
            if defect > tol::FRAME_ORTHOGONALITY {
                return Err(DlnError::Domain(format!(
                    "frame {} orthogonality defect {:.3e}",
                    frames_desc.len() - 1 - i,
                    defect
                )));
            }
        }
        Ok(Self {
            lambda,
            frames: frames_desc,
        })
    }

    pub fn width(&self) -> usize {
        self.lambda.len()
    }

    /// Depth N; there are N+1 frames Q_0, …, Q_N.
    pub fn depth(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    /// Q_p for 0 ≤ p ≤ N.
    pub fn frame(&self, p: usize) -> &Matrix {
        &self.frames[self.depth() - p]
    }

    /// Smallest relative gap between consecutive Λ entries.
    pub fn min_relative_gap(&self) -> f64 {
        let lammax = self.lambda[0];
        self.lambda
            .as_slice()
            .windows(2)
            .map(|p| (p[0] - p[1]) / lammax)
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether consecutive Λ entries are separated enough for the
    /// singular-value parametrization to be smooth.
    pub fn has_distinct_lambda(&self) -> bool {
        self.min_relative_gap() > tol::DEGENERATE_GAP_REL
    }

    /// The stack W_p = Q_p Λ Q_{p-1}ᵀ.
    pub fn to_state(&self) -> NetworkState {
        let n = self.depth();
        let lam = Matrix::from_diagonal(&self.lambda);
        let mut weights = Vec::with_capacity(n);
        for p in (1..=n).rev() {
            weights.push(self.frame(p) * &lam * self.frame(p - 1).transpose());
        }
        NetworkState {
            width: self.width(),
            weights,
        }
    }

    /// SVD data of the end-to-end matrix: (Q_N, Λᴺ, Q_0).
    pub fn end_to_end_svd(&self) -> SvdTriple {
        let n = self.depth() as i32;
        let sigma = self.lambda.map(|x| x.powi(n));
        SvdTriple {
            q_left: self.frame(self.depth()).clone(),
            sigma,
            q_right: self.frame(0).clone(),
        }
    }

    /// JSON checkpoint with explicit frame indices.
    pub fn to_json(&self) -> Result<String> {
        let doc = CoordsDoc {
            d: self.width(),
            n: self.depth(),
            lambda: self.lambda.as_slice().to_vec(),
            frames: (0..=self.depth())
                .rev()
                .map(|p| FrameDoc {
                    index: p,
                    rows: matrix_rows(self.frame(p)),
                })
                .collect(),
        };
        Ok(io::to_json_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CoordsDoc = serde_json::from_str(text)
            .map_err(|e| DlnError::Config(format!("coords json: {e}")))?;
        if doc.frames.len() != doc.n + 1 {
            return Err(DlnError::Config(format!(
                "coords json lists {} frames but n = {}",
                doc.frames.len(),
                doc.n
            )));
        }
        let mut slots: Vec<Option<Matrix>> = vec![None; doc.n + 1];
        for frame in &doc.frames {
            if frame.index > doc.n {
                return Err(DlnError::Config(format!(
                    "frame index {} out of range 0..={}",
                    frame.index, doc.n
                )));
            }
            let m = rows_matrix(&frame.rows, doc.d)?;
            if slots[frame.index].replace(m).is_some() {
                return Err(DlnError::Config(format!(
                    "duplicate frame index {}",
                    frame.index
                )));
            }
        }
        let mut frames = Vec::with_capacity(doc.n + 1);
        for p in (0..=doc.n).rev() {
            frames.push(slots[p].take().expect("all slots filled"));
        }
        BalancedCoords::new(DVector::from_vec(doc.lambda), frames)
    }
}

/// The singular-value parametrization: builds the stack W_p = Q_p Λ Q_{p-1}ᵀ.
pub fn from_balanced_coords(coords: &BalancedCoords) -> NetworkState {
    coords.to_state()
}

/// The sequential polar parametrization of the variety with imbalance `g`.
///
/// Starting from W_1, each layer is produced by
/// R_p² = W_p W_pᵀ, P_{p+1} = √(R_p² + G_p), W_{p+1} = Q_{p+1} P_{p+1},
/// so the constructed stack satisfies
/// W_{p+1}ᵀ W_{p+1} − W_p W_pᵀ = G_p exactly: its `imbalance` is `g`.
///
/// `frames` supplies the orthogonal factors (Q_2, …, Q_N) in ascending layer
/// order. The recursion fails if R_p² + G_p ever leaves the psd cone.
///
/// The mirrored left-to-right construction (starting from W_N) is this same
/// map applied to the reversed, transposed stack: reversing and transposing
/// sends a stack with imbalance (G_{N-1}, …, G_1) to one with imbalance
/// (−G_1, …, −G_{N-1}), so no separate implementation is needed.
pub fn from_polar_params(g: &ImbalanceG, w1: &Matrix, frames: &[Matrix]) -> Result<NetworkState> {
    let d = w1.nrows();
    if w1.ncols() != d {
        return Err(DlnError::NotSquare {
            rows: w1.nrows(),
            cols: w1.ncols(),
        });
    }
    let n = g.len() + 1;
    if frames.len() != n - 1 {
        return Err(DlnError::Dimension(format!(
            "expected {} frames for depth {}, got {}",
            n - 1,
            n,
            frames.len()
        )));
    }
    let mut layers_asc = vec![w1.clone()];
    for p in 1..n {
        let w_p = &layers_asc[p - 1];
        let r_sq = w_p * w_p.transpose();
        let m = &r_sq + g.entry(p);
        let p_next = psd_sqrt_at_layer(&m, p + 1)?;
        let q_next = &frames[p - 1];
        if q_next.nrows() != d || q_next.ncols() != d {
            return Err(DlnError::Dimension(format!(
                "frame Q_{} is {}x{}",
                p + 1,
                q_next.nrows(),
                q_next.ncols()
            )));
        }
        layers_asc.push(q_next * p_next);
    }
    layers_asc.reverse();
    NetworkState::new(layers_asc)
}

fn psd_sqrt_at_layer(m: &Matrix, layer: usize) -> Result<Matrix> {
    matops::psd_sqrt(m).map_err(|e| match e {
        DlnError::NotPsd { min_eig } => DlnError::PolarRecursion { layer, min_eig },
        other => other,
    })
}

/// A Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// diagonal of R sign-fixed to be nonnegative.
pub fn haar_orthogonal<R: Rng>(d: usize, rng: &mut R) -> Matrix {
    let gauss = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random initial state.
///
/// `Gaussian` fills all entries i.i.d. N(0, scale²). `Balanced` draws a
/// Gaussian end-to-end matrix, takes its ordered SVD, sets Λ = Σ^{1/N},
/// draws the intermediate frames Haar-uniform and assembles the stack with
/// the singular-value parametrization.
pub fn init_random<R: Rng>(
    d: usize,
    n: usize,
    scale: f64,
    mode: InitMode,
    rng: &mut R,
) -> Result<NetworkState> {
    if !(scale > 0.0) {
        return Err(DlnError::Config(format!(
            "init scale must be > 0, got {scale}"
        )));
    }
    if d == 0 || n == 0 {
        return Err(DlnError::Config("d and N must be at least 1".into()));
    }
    match mode {
        InitMode::Gaussian => {
            let weights = (0..n)
                .map(|_| Matrix::from_fn(d, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            NetworkState::new(weights)
        }
        InitMode::Balanced => {
            let coords = random_balanced_coords(d, n, scale, rng)?;
            Ok(coords.to_state())
        }
    }
}

/// Random balanced coordinates with Σ drawn from a Gaussian end-to-end
/// matrix of the given scale. Resamples on (astronomically unlikely)
/// rank-deficient draws.
pub fn random_balanced_coords<R: Rng>(
    d: usize,
    n: usize,
    scale: f64,
    rng: &mut R,
) -> Result<BalancedCoords> {
    for _ in 0..100 {
        let w = Matrix::from_fn(d, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let svd = matops::svd_ordered(&w)?;
        let lambda = svd.sigma.map(|s| s.powf(1.0 / n as f64));
        if lambda[d - 1] <= tol::FULL_RANK_MIN {
            continue;
        }
        let mut frames = Vec::with_capacity(n + 1);
        frames.push(svd.q_left.clone()); // Q_N
        for _ in 1..n {
            frames.push(haar_orthogonal(d, rng));
        }
        frames.push(svd.q_right.clone()); // Q_0
        return BalancedCoords::new(lambda, frames);
    }
    Err(DlnError::Domain(
        "could not draw a full-rank balanced state in 100 attempts".into(),
    ))
}

/// Recover singular-value coordinates from a state near the balanced
/// manifold; also serves as the projection used to re-balance after a
/// stochastic step.
///
/// (Q_1, Λ, Q_0) come from the ordered SVD of W_1; each subsequent frame is
/// the orthogonal polar factor of W_p Q_{p-1}; Λ is then refit as the mean of
/// the rotated layer diagonals, which is the least-squares fit with the
/// frames held fixed.
pub fn coords_from_state(state: &NetworkState) -> Result<BalancedCoords> {
    let n = state.depth();
    let d = state.width();
    let svd1 = matops::svd_ordered(state.layer(1))?;
    let mut frames_asc = Vec::with_capacity(n + 1);
    frames_asc.push(svd1.q_right.clone()); // Q_0
    frames_asc.push(svd1.q_left.clone()); // Q_1
    for p in 2..=n {
        let m = state.layer(p) * &frames_asc[p - 1];
        let polar = matops::polar_left(&m)?;
        frames_asc.push(polar.orthogonal);
    }
    let mut lambda = DVector::zeros(d);
    for p in 1..=n {
        let rotated = frames_asc[p].transpose() * state.layer(p) * &frames_asc[p - 1];
        for k in 0..d {
            lambda[k] += rotated[(k, k)] / n as f64;
        }
    }
    let mut frames_desc = frames_asc;
    frames_desc.reverse();
    BalancedCoords::new(lambda, frames_desc)
}

#[derive(Serialize, Deserialize)]
struct StateDoc {
    d: usize,
    n: usize,
    weights: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    layer: usize,
    rows: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CoordsDoc {
    d: usize,
    n: usize,
    lambda: Vec<f64>,
    frames: Vec<FrameDoc>,
}

#[derive(Serialize, Deserialize)]
struct FrameDoc {
    index: usize,
    rows: Vec<Vec<f64>>,
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_matrix(rows: &[Vec<f64>], d: usize) -> Result<Matrix> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(DlnError::Config(format!(
            "matrix rows do not form a {d}x{d} block"
        )));
    }
    Ok(Matrix::from_fn(d, d, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_state(values: &[f64]) -> NetworkState {
        // values given as (w_N, ..., w_1)
        NetworkState::new(
            values
                .iter()
                .map(|&v| Matrix::from_element(1, 1, v))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn end_to_end_identity_and_scalars() {
        let state = NetworkState::new(vec![Matrix::identity(3, 3); 4]).unwrap();
        assert!((state.end_to_end() - Matrix::identity(3, 3)).norm() < 1e-15);

        let state = scalar_state(&[4.0, 3.0, 2.0]);
        assert!((state.end_to_end()[(0, 0)] - 24.0).abs() < 1e-15);
    }

    #[test]
    fn end_to_end_matches_reassociated_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let state = init_random(3, 4, 1.0, InitMode::Gaussian, &mut rng).unwrap();
        // Reversed association order: ((W_4 W_3) W_2) W_1 vs W_4 (W_3 (W_2 W_1)).
        let left = ((state.layer(4) * state.layer(3)) * state.layer(2)) * state.layer(1);
        let right = state.layer(4) * (state.layer(3) * (state.layer(2) * state.layer(1)));
        assert!((left - &right).norm() <= 1e-13 * right.norm().max(1.0));
        assert!((state.end_to_end() - &right).norm() <= 1e-13 * right.norm().max(1.0));
    }

    #[test]
    fn imbalance_scalar_case() {
        let state = scalar_state(&[1.0, 2.0]);
        let g = state.imbalance();
        assert!((g.entry(1)[(0, 0)] - (-3.0)).abs() < 1e-15);
        assert!((state.balance_residual() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn balanced_coords_produce_balanced_stacks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coords = random_balanced_coords(3, 5, 1.0, &mut rng).unwrap();
        let state = coords.to_state();
        assert!(state.balance_residual() <= 1e-12);
        // φ ∘ z is Q_N Λ^N Q_0ᵀ.
        let expected = coords.end_to_end_svd().reconstruct();
        assert!((state.end_to_end() - expected).norm() <= 1e-11);
    }

    #[test]
    fn identity_coords_give_identity_stack() {
        let coords = BalancedCoords::new(
            DVector::from_element(2, 1.0),
            vec![Matrix::identity(2, 2); 4],
        )
        .unwrap();
        let state = coords.to_state();
        for p in 1..=3 {
            assert!((state.layer(p) - Matrix::identity(2, 2)).norm() < 1e-15);
        }
    }

    #[test]
    fn scalar_coords_with_sign_frames() {
        // d = 1: frames are signs q_p ∈ {±1}; w_p = q_p λ q_{p-1}.
        let lambda = DVector::from_element(1, 0.5);
        let signs = [1.0, -1.0, -1.0, 1.0]; // (q_3, q_2, q_1, q_0)
        let frames = signs
            .iter()
            .map(|&s| Matrix::from_element(1, 1, s))
            .collect();
        let coords = BalancedCoords::new(lambda, frames).unwrap();
        let state = coords.to_state();
        assert!((state.layer(3)[(0, 0)] - 1.0 * 0.5 * (-1.0)).abs() < 1e-15);
        assert!((state.layer(2)[(0, 0)] - (-1.0) * 0.5 * (-1.0)).abs() < 1e-15);
        assert!((state.layer(1)[(0, 0)] - (-1.0) * 0.5 * 1.0).abs() < 1e-15);
        let w = state.end_to_end()[(0, 0)];
        let expected = 1.0 * 0.5f64.powi(3) * 1.0; // q_3 λ³ q_0
        assert!((w - expected).abs() < 1e-15);
    }

    #[test]
    fn polar_params_zero_imbalance_reproduces_balanced_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let coords = random_balanced_coords(2, 4, 1.0, &mut rng).unwrap();
        let state = coords.to_state();
        let g = ImbalanceG::zeros(2, 4);
        let frames: Vec<Matrix> = (2..=4)
            .map(|p| {
                // Orthogonal factor of W_p from its left polar decomposition.
                matops::polar_left(state.layer(p)).unwrap().orthogonal
            })
            .collect();
        let rebuilt = from_polar_params(&g, state.layer(1), &frames).unwrap();
        assert!(rebuilt.balance_residual() <= 1e-10);
        for p in 1..=4 {
            assert!((rebuilt.layer(p) - state.layer(p)).norm() <= 1e-10);
        }
    }

    #[test]
    fn polar_params_scalar_hyperbola() {
        // d = 1: w_{p+1} = v_{p+1} √(w_p² + g_p) traces a conic section.
        let g = ImbalanceG::new(vec![
            Matrix::from_element(1, 1, -3.0), // G_2
            Matrix::from_element(1, 1, 5.0),  // G_1
        ])
        .unwrap();
        let w1 = Matrix::from_element(1, 1, 2.0);
        let frames = vec![
            Matrix::from_element(1, 1, -1.0), // v_2
            Matrix::from_element(1, 1, 1.0),  // v_3
        ];
        let state = from_polar_params(&g, &w1, &frames).unwrap();
        let w2 = state.layer(2)[(0, 0)];
        let w3 = state.layer(3)[(0, 0)];
        assert!((w2 + 3.0).abs() < 1e-14); // v_2 √(4 + 5) = -3
        assert!((w3 - 6.0f64.sqrt()).abs() < 1e-13); // v_3 √(9 - 3)
    }

    #[test]
    fn polar_params_roundtrip_matches_requested_imbalance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let d = 3;
            // W_1 with singular values in [1, 2] keeps every R_p² + G_p
            // comfortably inside the psd cone for the small imbalances below.
            let sv = DVector::from_fn(d, |_, _| rng.random_range(1.0..2.0));
            let w1 = haar_orthogonal(d, &mut rng)
                * Matrix::from_diagonal(&sv)
                * haar_orthogonal(d, &mut rng).transpose();
            // Small negative-definite imbalances.
            let entries: Vec<Matrix> = (0..2)
                .map(|_| {
                    let a =
                        Matrix::from_fn(d, d, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
                    -(&a * a.transpose()) - 0.01 * Matrix::identity(d, d)
                })
                .collect();
            let g = ImbalanceG::new(entries).unwrap();
            let frames: Vec<Matrix> = (0..2).map(|_| haar_orthogonal(d, &mut rng)).collect();
            let state = from_polar_params(&g, &w1, &frames).unwrap();
            assert!(state.imbalance().distance(&g) <= 1e-10);
        }
    }

    #[test]
    fn polar_params_reports_failing_layer() {
        let g = ImbalanceG::new(vec![Matrix::from_element(1, 1, -100.0)]).unwrap();
        let w1 = Matrix::from_element(1, 1, 1.0);
        let frames = vec![Matrix::from_element(1, 1, 1.0)];
        match from_polar_params(&g, &w1, &frames) {
            Err(DlnError::PolarRecursion { layer, .. }) => assert_eq!(layer, 2),
            other => panic!("expected polar recursion failure, got {other:?}"),
        }
    }

    #[test]
    fn reverse_transpose_flips_imbalance() {
        // The mirrored parametrization is this one on the reversed,
        // transposed stack; check the imbalance bookkeeping that makes the
        // identity work.
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let state = init_random(2, 3, 1.0, InitMode::Gaussian, &mut rng).unwrap();
        let g = state.imbalance();
        let reversed: Vec<Matrix> = state
            .layers_desc()
            .iter()
            .rev()
            .map(|w| w.transpose())
            .collect();
        let mirrored = NetworkState::new(reversed).unwrap();
        let g_m = mirrored.imbalance();
        for p in 1..=2 {
            assert!((g_m.entry(p) + g.entry(3 - p)).norm() <= 1e-12);
        }
    }

    #[test]
    fn init_balanced_residual_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let state = init_random(3, 4, 0.8, InitMode::Balanced, &mut rng).unwrap();
        assert!(state.balance_residual() <= 1e-11);

        let mut rng_a = ChaCha8Rng::seed_from_u64(99);
        let mut rng_b = ChaCha8Rng::seed_from_u64(99);
        let a = init_random(2, 3, 0.5, InitMode::Balanced, &mut rng_a).unwrap();
        let b = init_random(2, 3, 0.5, InitMode::Balanced, &mut rng_b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_gaussian_small_scale_has_small_imbalance() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let state = init_random(2, 3, 0.01, InitMode::Gaussian, &mut rng).unwrap();
        assert!(state.imbalance().norm() < 1e-3);
    }

    #[test]
    fn simons_cone_membership_at_depth_two() {
        // For d = 2, N = 2 a balanced state satisfies ‖W_1‖_F² = ‖W_2‖_F².
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let coords = random_balanced_coords(2, 2, 1.0, &mut rng).unwrap();
        let state = coords.to_state();
        let n1 = state.layer(1).norm_squared();
        let n2 = state.layer(2).norm_squared();
        assert!((n1 - n2).abs() <= 1e-12 * n1.max(1.0));
    }

    #[test]
    fn singular_values_coincide_iff_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let balanced = init_random(3, 3, 1.0, InitMode::Balanced, &mut rng).unwrap();
        let sig: Vec<DVector<f64>> = (1..=3)
            .map(|p| matops::svd_ordered(balanced.layer(p)).unwrap().sigma)
            .collect();
        for s in &sig[1..] {
            assert!((s - &sig[0]).norm() <= 1e-10);
        }

        let unbalanced = init_random(3, 3, 1.0, InitMode::Gaussian, &mut rng).unwrap();
        assert!(unbalanced.balance_residual() > 1e-3);
        let sig: Vec<DVector<f64>> = (1..=3)
            .map(|p| matops::svd_ordered(unbalanced.layer(p)).unwrap().sigma)
            .collect();
        let spread = (&sig[1] - &sig[0]).norm() + (&sig[2] - &sig[0]).norm();
        assert!(spread > 1e-3);
    }

    #[test]
    fn coords_recovery_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let coords = random_balanced_coords(3, 4, 1.2, &mut rng).unwrap();
        let state = coords.to_state();
        let recovered = coords_from_state(&state).unwrap();
        let rebuilt = recovered.to_state();
        for p in 1..=4 {
            assert!((rebuilt.layer(p) - state.layer(p)).norm() <= 1e-9);
        }
        assert!((recovered.lambda() - coords.lambda()).norm() <= 1e-10);
    }

    #[test]
    fn state_json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let state = init_random(2, 3, 1.0, InitMode::Gaussian, &mut rng).unwrap();
        let text = state.to_json().unwrap();
        let back = NetworkState::from_json(&text).unwrap();
        assert_eq!(state, back);
    }

    #[test]
    fn coords_json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let coords = random_balanced_coords(2, 3, 1.0, &mut rng).unwrap();
        let text = coords.to_json().unwrap();
        let back = BalancedCoords::from_json(&text).unwrap();
        assert!((back.lambda() - coords.lambda()).norm() == 0.0);
        for p in 0..=3 {
            assert_eq!(back.frame(p), coords.frame(p));
        }
    }

    #[test]
    fn haar_frames_are_orthogonal_and_isotropic() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let d = 3;
        let samples = 2000;
        let mut mean_q = Matrix::zeros(d, d);
        let mut mean_vvt = Matrix::zeros(d, d);
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        for _ in 0..samples {
            let q = haar_orthogonal(d, &mut rng);
            assert!(matops::orthogonality_defect(&q) <= 1e-12);
            mean_q += &q;
            let qv = &q * &v;
            mean_vvt += &qv * qv.transpose();
        }
        mean_q /= samples as f64;
        mean_vvt /= samples as f64;
        // Entries of Q have variance 1/d; the mean of `samples` draws has
        // standard error 1/sqrt(d * samples).
        let se = 1.0 / ((d * samples) as f64).sqrt();
        assert!(mean_q.amax() <= 4.0 * se);
        assert!((mean_vvt - Matrix::identity(d, d) / d as f64).amax() <= 4.0 * se);
    }
}
