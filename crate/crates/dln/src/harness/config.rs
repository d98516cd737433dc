//! Experiment configuration: a flat TOML file with typed sections.
//!
//! Every field has a default; [`ExperimentConfig::resolved`] materializes all
//! of them (including the data-dependent default loss) so that the config
//! echo written next to each run is complete and reruns it exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::flows::{FlowConfig, LossSpec, MaskEntry, Method};
use crate::network::InitMode;
use crate::stochastic::SdeConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Flow,
    Rle,
    Dyson,
    Sphere,
    Complete,
    EntropyMap,
    Audit,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Flow => "flow",
            Kind::Rle => "rle",
            Kind::Dyson => "dyson",
            Kind::Sphere => "sphere",
            Kind::Complete => "complete",
            Kind::EntropyMap => "entropy-map",
            Kind::Audit => "audit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Completion,
    Frobenius,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub kind: LossKind,
    /// 1-based (row, col) indices of observed entries. Empty means the
    /// diagonal pinned to 1 (filled in explicitly on resolution).
    pub mask: Vec<[usize; 2]>,
    pub targets: Vec<f64>,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            kind: LossKind::Completion,
            mask: Vec::new(),
            targets: Vec::new(),
        }
    }
}

impl LossSection {
    pub fn to_loss_spec(&self, d: usize) -> Result<LossSpec> {
        match self.kind {
            LossKind::Frobenius => Ok(LossSpec::FrobeniusQuadratic),
            LossKind::Completion => {
                if self.mask.len() != self.targets.len() {
                    return Err(DlnError::Config(format!(
                        "mask has {} entries but targets has {}",
                        self.mask.len(),
                        self.targets.len()
                    )));
                }
                let entries: Vec<MaskEntry> = self
                    .mask
                    .iter()
                    .zip(self.targets.iter())
                    .map(|(idx, &target)| {
                        if idx[0] == 0 || idx[1] == 0 {
                            return Err(DlnError::Config(
                                "mask indices are 1-based; got a zero".into(),
                            ));
                        }
                        Ok(MaskEntry {
                            row: idx[0] - 1,
                            col: idx[1] - 1,
                            target,
                        })
                    })
                    .collect::<Result<_>>()?;
                let spec = LossSpec::Completion { entries };
                spec.validate(d)?;
                Ok(spec)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    pub mode: InitMode,
    pub scale: f64,
    /// Optional JSON checkpoint to start from instead of a random draw.
    pub from_file: Option<PathBuf>,
}

impl Default for InitSection {
    fn default() -> Self {
        Self {
            mode: InitMode::Balanced,
            scale: 1.0,
            from_file: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowSpace {
    /// Integrate the end-to-end matrix with the reduced field.
    Reduced,
    /// Integrate the full weight stack.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub method: Method,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub space: FlowSpace,
    /// Inverse temperature used only for the free-energy column of the
    /// records; `inf` leaves F = E.
    pub beta: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            dt: 1e-3,
            t_end: 5.0,
            record_every: 10,
            space: FlowSpace::Reduced,
            beta: f64::INFINITY,
        }
    }
}

impl FlowSection {
    pub fn to_flow_config(&self) -> FlowConfig {
        FlowConfig {
            method: self.method,
            dt: self.dt,
            t_end: self.t_end,
            record_every: self.record_every,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdeSpace {
    Down,
    Up,
    /// Exploratory: Langevin dynamics on the variety with the imbalance of
    /// the initial state (any init allowed); tangential noise only, no
    /// gauge/observable splitting. The balance-residual column then tracks
    /// the distance to the zero-imbalance variety.
    Variety,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeSection {
    pub beta: f64,
    pub kappa: f64,
    pub dt: f64,
    pub t_end: f64,
    pub paths: usize,
    pub record_every: usize,
    pub space: SdeSpace,
}

impl Default for SdeSection {
    fn default() -> Self {
        Self {
            beta: 1.0,
            kappa: 1.0,
            dt: 1e-3,
            t_end: 1.0,
            paths: 1,
            record_every: 10,
            space: SdeSpace::Down,
        }
    }
}

impl SdeSection {
    pub fn to_sde_config(&self, seed: u64) -> SdeConfig {
        SdeConfig {
            beta: self.beta,
            kappa: self.kappa,
            dt: self.dt,
            t_end: self.t_end,
            seed,
            paths: self.paths,
            record_every: self.record_every,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DysonMode {
    Particle,
    Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DysonSection {
    pub mode: DysonMode,
    /// Initial particle positions, strictly increasing.
    pub x0: Vec<f64>,
    pub beta: f64,
    pub kappa: f64,
    pub dt: f64,
    pub t_end: f64,
    pub paths: usize,
    pub record_every: usize,
}

impl Default for DysonSection {
    fn default() -> Self {
        Self {
            mode: DysonMode::Particle,
            x0: vec![-1.0, 1.0],
            beta: f64::INFINITY,
            kappa: 1.0,
            dt: 1e-4,
            t_end: 3.0,
            paths: 1,
            record_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphereSection {
    pub dim: usize,
    pub radius: f64,
    pub dt: f64,
    pub t_end: f64,
    pub paths: usize,
    pub record_every: usize,
}

impl Default for SphereSection {
    fn default() -> Self {
        Self {
            dim: 5,
            radius: 1.0,
            dt: 1e-4,
            t_end: 1.0,
            paths: 10_000,
            record_every: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompleteSection {
    pub paths: usize,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    /// A path converged when E < e_tol and |det W| < det_tol at its end.
    pub e_tol: f64,
    pub det_tol: f64,
    /// Relative threshold defining the effective rank.
    pub rank_rel_tol: f64,
    /// Early stop: ‖field‖_F below this for `sustain_steps` consecutive
    /// steps.
    pub field_tol: f64,
    pub sustain_steps: usize,
}

impl Default for CompleteSection {
    fn default() -> Self {
        Self {
            paths: 200,
            dt: 1e-3,
            t_end: 400.0,
            record_every: 100,
            e_tol: 1e-6,
            det_tol: 1e-3,
            rank_rel_tol: 1e-6,
            field_tol: 1e-9,
            sustain_steps: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub steps: usize,
    pub beta: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            sigma_min: 0.2,
            sigma_max: 3.0,
            steps: 40,
            beta: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    /// Base directory; each run creates a fresh subdirectory in it.
    pub out: PathBuf,
    pub loss: LossSection,
    pub init: InitSection,
    pub flow: FlowSection,
    pub sde: SdeSection,
    pub dyson: DysonSection,
    pub sphere: SphereSection,
    pub complete: CompleteSection,
    pub grid: GridSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: Kind::Flow,
            d: 2,
            n: 3,
            seed: 0,
            out: PathBuf::from("runs"),
            loss: LossSection::default(),
            init: InitSection::default(),
            flow: FlowSection::default(),
            sde: SdeSection::default(),
            dyson: DysonSection::default(),
            sphere: SphereSection::default(),
            complete: CompleteSection::default(),
            grid: GridSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Default configuration for a given kind. Most kinds share the global
    /// defaults; the completion ensemble starts from the pilot-calibrated
    /// small initialization where the attraction to the rank-one set is
    /// sharp.
    pub fn default_for_kind(kind: Kind) -> Self {
        let mut cfg = Self::default();
        cfg.kind = kind;
        if kind == Kind::Complete {
            cfg.init.scale = 1e-6;
        }
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DlnError::Config(format!("config parse: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DlnError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| DlnError::Config(format!("config echo: {e}")))
    }

    /// Fills the data-dependent defaults (diagonal completion mask) so the
    /// serialized echo is complete.
    pub fn resolved(&self) -> Result<Self> {
        let mut cfg = self.clone();
        if cfg.loss.kind == LossKind::Completion && cfg.loss.mask.is_empty() {
            cfg.loss.mask = (1..=cfg.d).map(|i| [i, i]).collect();
            cfg.loss.targets = vec![1.0; cfg.d];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss_spec(&self) -> Result<LossSpec> {
        self.loss.to_loss_spec(self.d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 {
            return Err(DlnError::Config("d and n must be at least 1".into()));
        }
        if !(self.init.scale > 0.0) {
            return Err(DlnError::Config("init.scale must be positive".into()));
        }
        match self.kind {
            Kind::Flow => {
                self.loss_spec()?;
                self.flow.to_flow_config().validate()?;
                if !(self.flow.beta > 0.0) {
                    return Err(DlnError::Config("flow.beta must be positive".into()));
                }
            }
            Kind::Rle => {
                self.loss_spec()?;
                self.sde.to_sde_config(self.seed).validate()?;
                if self.sde.space == SdeSpace::Up && self.init.mode != InitMode::Balanced {
                    return Err(DlnError::Config(
                        "rle upstairs needs a balanced initial state (init.mode = \"balanced\")"
                            .into(),
                    ));
                }
            }
            Kind::Dyson => {
                if self.dyson.x0.len() < 2 && self.dyson.mode == DysonMode::Matrix {
                    return Err(DlnError::Config(
                        "dyson.x0 needs at least 2 particles".into(),
                    ));
                }
                if self.dyson.x0.windows(2).any(|p| p[0] >= p[1]) {
                    return Err(DlnError::Config(
                        "dyson.x0 must be strictly increasing".into(),
                    ));
                }
                if !(self.dyson.beta > 0.0) {
                    return Err(DlnError::Config("dyson.beta must be positive".into()));
                }
                if !(self.dyson.dt > 0.0) || !(self.dyson.t_end >= self.dyson.dt) {
                    return Err(DlnError::Config("dyson time grid invalid".into()));
                }
                if self.dyson.paths == 0 || self.dyson.record_every == 0 {
                    return Err(DlnError::Config("dyson paths/record_every invalid".into()));
                }
            }
            Kind::Sphere => {
                if self.sphere.dim == 0 {
                    return Err(DlnError::Config("sphere.dim must be at least 1".into()));
                }
                if !(self.sphere.radius > 0.0) {
                    return Err(DlnError::Config("sphere.radius must be positive".into()));
                }
                if !(self.sphere.dt > 0.0) || !(self.sphere.t_end >= self.sphere.dt) {
                    return Err(DlnError::Config("sphere time grid invalid".into()));
                }
                if self.sphere.paths == 0 || self.sphere.record_every == 0 {
                    return Err(DlnError::Config("sphere paths/record_every invalid".into()));
                }
            }
            Kind::Complete => {
                self.loss_spec()?;
                let c = &self.complete;
                if c.paths == 0 || c.record_every == 0 || c.sustain_steps == 0 {
                    return Err(DlnError::Config(
                        "complete counters must be positive".into(),
                    ));
                }
                if !(c.dt > 0.0) || !(c.t_end >= c.dt) {
                    return Err(DlnError::Config("complete time grid invalid".into()));
                }
            }
            Kind::EntropyMap => {
                if self.d != 2 {
                    return Err(DlnError::Config(
                        "entropy-map tabulates a 2-dimensional sigma grid; set d = 2".into(),
                    ));
                }
                let g = &self.grid;
                if !(g.sigma_min > 0.0) || !(g.sigma_max > g.sigma_min) || g.steps < 2 {
                    return Err(DlnError::Config("grid section invalid".into()));
                }
                if !(g.beta > 0.0) {
                    return Err(DlnError::Config("grid.beta must be positive".into()));
                }
                self.loss_spec()?;
            }
            Kind::Audit => {}
        }
        Ok(())
    }
}
