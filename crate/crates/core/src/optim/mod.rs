//! Update rules behind one step interface.
//!
//! Each rule is available as a free block-level function over raw slices.
//! [`Optimizer`] owns per-block state and routes blocks by [`Role`]: the
//! hybrid methods (Muon, D-Muon, SOAP, MARS) send everything that is not a
//! `matrix` block to AdamW.

pub mod adam;
pub mod mars;
pub mod muon;
pub mod newton_schulz;
pub mod presets;
pub mod prodigy;
pub mod schedule_free;
pub mod sign;
pub mod soap;
pub mod sophia;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::{parse_bool, parse_f64, parse_u64, parse_usize};
use crate::numerics::all_finite;
use crate::schedules::EmaScheduleSpec;

pub use adam::{adamw_step, ademamix_step, adopt_step, AdamHyper, AdamState, AdemamixState, AdoptState};
pub use mars::{mars_step, MarsHyper, MarsState, MarsVariant};
pub use muon::{dmuon_matrix_step, muon_matrix_step, MuonHyper, MuonState};
pub use newton_schulz::{newton_schulz_orthogonalize, NsCoefficients, DEFAULT_NS_ITERS};
pub use prodigy::{prodigy_step, ProdigyHyper, ProdigyOutcome, ProdigyState};
pub use schedule_free::{sfadamw_step, ScheduleFreeHyper, ScheduleFreeState};
pub use sign::{lion_step, signum_step, LionHyper, SignState, SignumHyper};
pub use soap::{soap_step, SoapHyper, SoapState};
pub use sophia::{sophia_refreshes, sophia_step, SophiaHyper, SophiaState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Matrix,
    Vector,
    Scalar,
    Embedding,
    OutputHead,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Matrix => "matrix",
            Role::Vector => "vector",
            Role::Scalar => "scalar",
            Role::Embedding => "embedding",
            Role::OutputHead => "output_head",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub role: Role,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>, role: Role) -> Result<Self> {
        let name = name.into();
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::contract(format!(
                "block '{name}' has shape {shape:?} but {} values",
                values.len()
            )));
        }
        if role == Role::Matrix && shape.len() < 2 {
            return Err(Error::contract(format!(
                "matrix block '{name}' needs at least two dimensions"
            )));
        }
        Ok(Self {
            name,
            shape,
            values,
            role,
        })
    }

    pub fn vector(name: impl Into<String>, values: Vec<f64>) -> Self {
        let n = values.len();
        Self::new(name, vec![n], values, Role::Vector).expect("consistent by construction")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(rows, cols)` with trailing dimensions flattened into the columns.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.split_first() {
            Some((&r, rest)) if !rest.is_empty() => (r, rest.iter().product()),
            _ => (self.values.len(), 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "adamw")]
    AdamW,
    #[serde(rename = "adopt")]
    Adopt,
    #[serde(rename = "ademamix")]
    Ademamix,
    #[serde(rename = "lion")]
    Lion,
    #[serde(rename = "signum")]
    Signum,
    #[serde(rename = "muon")]
    Muon,
    #[serde(rename = "d-muon")]
    DMuon,
    #[serde(rename = "soap")]
    Soap,
    #[serde(rename = "sophia")]
    Sophia,
    #[serde(rename = "sf-adamw")]
    SfAdamW,
    #[serde(rename = "prodigy")]
    Prodigy,
    #[serde(rename = "mars")]
    MarsAdamW,
    #[serde(rename = "mars-lion")]
    MarsLion,
    #[serde(rename = "mars-shampoo")]
    MarsShampoo,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 14] = [
        OptimizerKind::AdamW,
        OptimizerKind::Adopt,
        OptimizerKind::Ademamix,
        OptimizerKind::Lion,
        OptimizerKind::Signum,
        OptimizerKind::Muon,
        OptimizerKind::DMuon,
        OptimizerKind::Soap,
        OptimizerKind::Sophia,
        OptimizerKind::SfAdamW,
        OptimizerKind::Prodigy,
        OptimizerKind::MarsAdamW,
        OptimizerKind::MarsLion,
        OptimizerKind::MarsShampoo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::Adopt => "adopt",
            OptimizerKind::Ademamix => "ademamix",
            OptimizerKind::Lion => "lion",
            OptimizerKind::Signum => "signum",
            OptimizerKind::Muon => "muon",
            OptimizerKind::DMuon => "d-muon",
            OptimizerKind::Soap => "soap",
            OptimizerKind::Sophia => "sophia",
            OptimizerKind::SfAdamW => "sf-adamw",
            OptimizerKind::Prodigy => "prodigy",
            OptimizerKind::MarsAdamW => "mars",
            OptimizerKind::MarsLion => "mars-lion",
            OptimizerKind::MarsShampoo => "mars-shampoo",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.map(Self::name).join(", ")
    }

    pub fn mars_variant(self) -> Option<MarsVariant> {
        match self {
            OptimizerKind::MarsAdamW => Some(MarsVariant::Adamw),
            OptimizerKind::MarsLion => Some(MarsVariant::Lion),
            OptimizerKind::MarsShampoo => Some(MarsVariant::Shampoo),
            _ => None,
        }
    }

    /// Whether the rule ignores gradient magnitudes entirely.
    pub fn is_sign_based(self) -> bool {
        matches!(self, OptimizerKind::Lion | OptimizerKind::Signum)
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let alias = match s.as_str() {
            "mars-adamw" => "mars",
            "dmuon" => "d-muon",
            "sfadamw" | "schedule-free-adamw" => "sf-adamw",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|k| k.name() == alias)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown optimizer '{s}'; valid names: {}",
                    Self::valid_names()
                ))
            })
    }
}

/// Every tunable of every rule. Each rule reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    /// Peak learning rate; for Muon and MARS this is the matrix-path rate.
    pub lr: f64,
    /// Peak rate for blocks the hybrid methods route to AdamW (Muon, MARS).
    pub adam_lr: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub alpha: f64,
    /// `T_α`; `None` means the run length.
    pub alpha_warmup: Option<u64>,
    /// `T_β₃`; `None` means the run length.
    pub beta3_warmup: Option<u64>,
    pub momentum: f64,
    pub nesterov: bool,
    pub dampening: f64,
    pub coupled_weight_decay: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub ns_iters: usize,
    pub ns_a: f64,
    pub ns_b: f64,
    pub ns_c: f64,
    /// D-Muon matrix updates are scaled by `rms_scale·√max(rows, cols)`.
    pub rms_scale: f64,
    /// SOAP basis refresh period; 0 never refreshes.
    pub precond_freq: u64,
    pub max_precond_dim: usize,
    /// SOAP starts from identity bases instead of the first gradient's.
    pub identity_basis: bool,
    pub bias_correction: bool,
    pub rho: f64,
    pub estimator_freq: u64,
    /// Schedule-free internal warmup.
    pub sf_warmup: u64,
    pub d0: f64,
    pub eta: f64,
}

pub const HYPER_KEYS: &[&str] = &[
    "lr",
    "adam_lr",
    "weight_decay",
    "eps",
    "beta1",
    "beta2",
    "beta3",
    "alpha",
    "alpha_warmup",
    "beta3_warmup",
    "momentum",
    "nesterov",
    "dampening",
    "coupled_weight_decay",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "ns_iters",
    "ns_a",
    "ns_b",
    "ns_c",
    "rms_scale",
    "precond_freq",
    "max_precond_dim",
    "identity_basis",
    "bias_correction",
    "rho",
    "estimator_freq",
    "sf_warmup",
    "d0",
    "eta",
];

impl Hyper {
    /// Defaults follow the best large-batch settings of each method.
    pub fn defaults(kind: OptimizerKind) -> Self {
        let ns = NsCoefficients::default();
        let base = Hyper {
            lr: 1e-3,
            adam_lr: 1e-3,
            weight_decay: 0.1,
            eps: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            beta3: 0.999,
            alpha: 8.0,
            alpha_warmup: None,
            beta3_warmup: None,
            momentum: 0.95,
            nesterov: true,
            dampening: 0.0,
            coupled_weight_decay: false,
            adam_beta1: 0.8,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            ns_iters: DEFAULT_NS_ITERS,
            ns_a: ns.a,
            ns_b: ns.b,
            ns_c: ns.c,
            rms_scale: 0.2,
            precond_freq: 10,
            max_precond_dim: 10_000,
            identity_basis: false,
            bias_correction: true,
            rho: 0.04,
            estimator_freq: 10,
            sf_warmup: 0,
            d0: prodigy::DEFAULT_D0,
            eta: 0.025,
        };
        match kind {
            OptimizerKind::AdamW => Hyper { beta1: 0.8, ..base },
            OptimizerKind::Adopt => Hyper { eps: 1e-6, ..base },
            OptimizerKind::Ademamix => base,
            OptimizerKind::Lion => Hyper { beta2: 0.99, ..base },
            OptimizerKind::Signum => base,
            OptimizerKind::Muon => Hyper { lr: 0.01, ..base },
            OptimizerKind::DMuon => Hyper { lr: 2e-3, ..base },
            OptimizerKind::Soap => Hyper { lr: 2e-3, ..base },
            OptimizerKind::Sophia => Hyper { eps: 1e-15, ..base },
            OptimizerKind::SfAdamW => Hyper {
                lr: 2e-3,
                beta2: 0.9999,
                sf_warmup: 8000,
                ..base
            },
            OptimizerKind::Prodigy => Hyper { lr: 1.0, ..base },
            OptimizerKind::MarsAdamW => Hyper {
                lr: 3e-3,
                beta1: 0.95,
                beta2: 0.99,
                ..base
            },
            OptimizerKind::MarsLion => Hyper {
                lr: 1e-4,
                adam_lr: 1e-4,
                beta1: 0.95,
                beta2: 0.99,
                adam_beta1: 0.9,
                adam_beta2: 0.99,
                ..base
            },
            OptimizerKind::MarsShampoo => Hyper {
                lr: 3e-3,
                beta1: 0.95,
                beta2: 0.99,
                adam_beta1: 0.9,
                ..base
            },
        }
    }

    pub fn ns_coeffs(&self) -> NsCoefficients {
        NsCoefficients {
            a: self.ns_a,
            b: self.ns_b,
            c: self.ns_c,
        }
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let opt_u64 = |v: &str| -> Result<Option<u64>> {
            if v.eq_ignore_ascii_case("auto") {
                Ok(None)
            } else {
                parse_u64(key, v).map(Some)
            }
        };
        match key {
            "lr" => self.lr = parse_f64(key, value)?,
            "adam_lr" => self.adam_lr = parse_f64(key, value)?,
            "weight_decay" => self.weight_decay = parse_f64(key, value)?,
            "eps" => self.eps = parse_f64(key, value)?,
            "beta1" => self.beta1 = parse_f64(key, value)?,
            "beta2" => self.beta2 = parse_f64(key, value)?,
            "beta3" => self.beta3 = parse_f64(key, value)?,
            "alpha" => self.alpha = parse_f64(key, value)?,
            "alpha_warmup" => self.alpha_warmup = opt_u64(value)?,
            "beta3_warmup" => self.beta3_warmup = opt_u64(value)?,
            "momentum" => self.momentum = parse_f64(key, value)?,
            "nesterov" => self.nesterov = parse_bool(key, value)?,
            "dampening" => self.dampening = parse_f64(key, value)?,
            "coupled_weight_decay" => self.coupled_weight_decay = parse_bool(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse_f64(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_f64(key, value)?,
            "adam_eps" => self.adam_eps = parse_f64(key, value)?,
            "ns_iters" => self.ns_iters = parse_usize(key, value)?,
            "ns_a" => self.ns_a = parse_f64(key, value)?,
            "ns_b" => self.ns_b = parse_f64(key, value)?,
            "ns_c" => self.ns_c = parse_f64(key, value)?,
            "rms_scale" => self.rms_scale = parse_f64(key, value)?,
            "precond_freq" => self.precond_freq = parse_u64(key, value)?,
            "max_precond_dim" => self.max_precond_dim = parse_usize(key, value)?,
            "identity_basis" => self.identity_basis = parse_bool(key, value)?,
            "bias_correction" => self.bias_correction = parse_bool(key, value)?,
            "rho" => self.rho = parse_f64(key, value)?,
            "estimator_freq" => self.estimator_freq = parse_u64(key, value)?,
            "sf_warmup" => self.sf_warmup = parse_u64(key, value)?,
            "d0" => self.d0 = parse_f64(key, value)?,
            "eta" => self.eta = parse_f64(key, value)?,
            other => {
                return Err(Error::config(format!(
                    "unknown optimizer field '{other}'; known: {}",
                    HYPER_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self, kind: OptimizerKind) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive, got {v}")))
            }
        };
        let beta = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        positive("lr", self.lr)?;
        positive("adam_lr", self.adam_lr)?;
        positive("eps", self.eps)?;
        positive("adam_eps", self.adam_eps)?;
        positive("d0", self.d0)?;
        positive("rho", self.rho)?;
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be nonnegative"));
        }
        beta("beta1", self.beta1)?;
        beta("beta2", self.beta2)?;
        beta("beta3", self.beta3)?;
        beta("adam_beta1", self.adam_beta1)?;
        beta("adam_beta2", self.adam_beta2)?;
        beta("momentum", self.momentum)?;
        if !(0.0..=1.0).contains(&self.dampening) {
            return Err(Error::config("dampening must lie in [0, 1]"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config("alpha must be nonnegative"));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::config("eta must be nonnegative"));
        }
        if !(self.rms_scale.is_finite() && self.rms_scale > 0.0) {
            return Err(Error::config("rms_scale must be positive"));
        }
        if self.ns_iters == 0 {
            return Err(Error::config("ns_iters must be at least 1"));
        }
        if self.estimator_freq == 0 {
            return Err(Error::config("estimator_freq must be at least 1"));
        }
        if self.coupled_weight_decay && kind != OptimizerKind::Signum {
            return Err(Error::config(
                "coupled weight decay is only available for signum",
            ));
        }
        if kind == OptimizerKind::Ademamix && self.beta3 <= 0.0 {
            return Err(Error::config("beta3 must lie in (0, 1)"));
        }
        Ok(())
    }

    fn adam_main(&self, lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            weight_decay: self.weight_decay,
            eps: self.eps,
            beta1: self.beta1,
            beta2: self.beta2,
        }
    }

    fn adam_aux(&self, lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            weight_decay: self.weight_decay,
            eps: self.adam_eps,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
        }
    }

    fn muon(&self, lr: f64) -> MuonHyper {
        MuonHyper {
            lr,
            momentum: self.momentum,
            nesterov: self.nesterov,
            ns_iters: self.ns_iters,
            ns_coeffs: self.ns_coeffs(),
        }
    }
}

/// Per-block optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BlockState {
    Adam(AdamState),
    Adopt(AdoptState),
    Ademamix(AdemamixState),
    Sign(SignState),
    Muon(MuonState),
    Soap(SoapState),
    Sophia(SophiaState),
    ScheduleFree(ScheduleFreeState),
    Mars(MarsState),
    /// Prodigy keeps its buffers in the optimizer-wide state.
    Prodigy,
}

impl BlockState {
    pub fn is_finite(&self) -> bool {
        match self {
            BlockState::Adam(s) => s.is_finite(),
            BlockState::Adopt(s) => s.is_finite(),
            BlockState::Ademamix(s) => s.is_finite(),
            BlockState::Sign(s) => s.is_finite(),
            BlockState::Muon(s) => s.is_finite(),
            BlockState::Soap(s) => s.is_finite(),
            BlockState::Sophia(s) => s.is_finite(),
            BlockState::ScheduleFree(s) => s.is_finite(),
            BlockState::Mars(s) => s.is_finite(),
            BlockState::Prodigy => true,
        }
    }
}

/// Per-step inputs beyond the gradients.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    /// Scheduled learning rate for the main parameter group.
    pub lr: f64,
    /// `lr / γ_max`; scales the peak rate of auxiliary AdamW groups.
    pub lr_factor: f64,
    /// Label-resampled gradients, one per block; Sophia reads them on
    /// estimator refresh steps.
    pub resampled: Option<&'a [Vec<f64>]>,
    pub batch_size: usize,
}

impl<'a> StepContext<'a> {
    pub fn constant(lr: f64) -> Self {
        Self {
            lr,
            lr_factor: 1.0,
            resampled: None,
            batch_size: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub updates: Vec<Vec<f64>>,
    /// `γ_t·d_t` for Prodigy, the scheduled rate otherwise.
    pub effective_lr: f64,
    pub d: Option<f64>,
}

impl StepOutcome {
    pub fn update_norm(&self) -> f64 {
        self.updates
            .iter()
            .flatten()
            .map(|u| u * u)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Optimizer {
    kind: OptimizerKind,
    hyper: Hyper,
    ema: Option<EmaScheduleSpec>,
    states: Vec<BlockState>,
    prodigy: Option<ProdigyState>,
    t: u64,
}

impl Optimizer {
    /// `total_steps` fills the AdEMAMix ramp lengths left as `None`.
    pub fn new(kind: OptimizerKind, hyper: Hyper, blocks: &[ParamBlock], total_steps: u64) -> Result<Self> {
        hyper.validate(kind)?;
        let ema = (kind == OptimizerKind::Ademamix)
            .then(|| {
                let spec = EmaScheduleSpec {
                    alpha: hyper.alpha,
                    beta3: hyper.beta3,
                    beta_start: hyper.beta1,
                    t_alpha: hyper.alpha_warmup.unwrap_or(total_steps),
                    t_beta3: hyper.beta3_warmup.unwrap_or(total_steps),
                };
                spec.validate().map_err(|e| Error::config(e.to_string()))?;
                Ok::<_, Error>(spec)
            })
            .transpose()?;
        let states = blocks.iter().map(|b| Self::initial_state(kind, &hyper, b)).collect();
        let prodigy = (kind == OptimizerKind::Prodigy)
            .then(|| ProdigyState::new(blocks.iter().map(|b| b.values.as_slice()), hyper.d0));
        Ok(Self {
            kind,
            hyper,
            ema,
            states,
            prodigy,
            t: 0,
        })
    }

    fn initial_state(kind: OptimizerKind, h: &Hyper, b: &ParamBlock) -> BlockState {
        let n = b.len();
        let matrix = b.role == Role::Matrix;
        match kind {
            OptimizerKind::AdamW => BlockState::Adam(AdamState::new(n)),
            OptimizerKind::Adopt => BlockState::Adopt(AdoptState::new(n)),
            OptimizerKind::Ademamix => BlockState::Ademamix(AdemamixState::new(n)),
            OptimizerKind::Lion | OptimizerKind::Signum => BlockState::Sign(SignState::new(n)),
            OptimizerKind::Muon | OptimizerKind::DMuon if matrix => BlockState::Muon(MuonState::new(n)),
            OptimizerKind::Soap if matrix => {
                let (r, c) = b.matrix_dims();
                if r.max(c) > h.max_precond_dim {
                    BlockState::Adam(AdamState::new(n))
                } else if h.identity_basis {
                    BlockState::Soap(SoapState::new(r, c).with_identity_bases())
                } else {
                    BlockState::Soap(SoapState::new(r, c))
                }
            }
            OptimizerKind::Sophia => BlockState::Sophia(SophiaState::new(n)),
            OptimizerKind::SfAdamW => BlockState::ScheduleFree(ScheduleFreeState::new(&b.values)),
            OptimizerKind::Prodigy => BlockState::Prodigy,
            OptimizerKind::MarsAdamW | OptimizerKind::MarsLion | OptimizerKind::MarsShampoo if matrix => {
                BlockState::Mars(MarsState::new(n))
            }
            _ => BlockState::Adam(AdamState::new(n)),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn states(&self) -> &[BlockState] {
        &self.states
    }

    pub fn prodigy_state(&self) -> Option<&ProdigyState> {
        self.prodigy.as_ref()
    }

    /// Completed steps.
    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// ADOPT must see one gradient through [`Optimizer::prime`] first.
    pub fn needs_priming(&self) -> bool {
        self.states
            .iter()
            .any(|s| matches!(s, BlockState::Adopt(a) if !a.is_primed()))
    }

    pub fn prime(&mut self, grads: &[Vec<f64>]) -> Result<()> {
        self.check_grads(grads, 0)?;
        for (s, g) in self.states.iter_mut().zip(grads) {
            if let BlockState::Adopt(a) = s {
                a.prime(g);
            }
        }
        Ok(())
    }

    /// Whether the next step consumes label-resampled gradients.
    pub fn wants_resampled_grad(&self) -> bool {
        self.kind == OptimizerKind::Sophia && sophia_refreshes(self.t + 1, self.hyper.estimator_freq)
    }

    /// Parameters to evaluate the model at: the averaged iterate for
    /// schedule-free runs, the current values otherwise.
    pub fn eval_params(&self, blocks: &[ParamBlock]) -> Vec<Vec<f64>> {
        blocks
            .iter()
            .zip(&self.states)
            .map(|(b, s)| match s {
                BlockState::ScheduleFree(sf) => sf.x_avg.clone(),
                _ => b.values.clone(),
            })
            .collect()
    }

    fn check_grads(&self, grads: &[Vec<f64>], step: u64) -> Result<()> {
        if grads.len() != self.states.len() {
            return Err(Error::contract(format!(
                "expected {} gradient blocks, got {}",
                self.states.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if !all_finite(g) {
                return Err(Error::Poisoned {
                    step,
                    what: format!("non-finite gradient in block {i}"),
                });
            }
        }
        Ok(())
    }

    pub fn step(&mut self, blocks: &mut [ParamBlock], grads: &[Vec<f64>], ctx: &StepContext<'_>) -> Result<StepOutcome> {
        let t = self.t + 1;
        self.check_grads(grads, t)?;
        for (b, g) in blocks.iter().zip(grads) {
            if b.len() != g.len() {
                return Err(Error::contract(format!(
                    "gradient for '{}' has {} entries, block has {}",
                    b.name,
                    g.len(),
                    b.len()
                )));
            }
        }
        if blocks.len() != self.states.len() {
            return Err(Error::contract("block count changed since construction"));
        }
        if self.needs_priming() {
            return Err(Error::contract(
                "ADOPT needs its second moment initialized from a first gradient",
            ));
        }
        let resampled = if self.wants_resampled_grad() {
            let r = ctx.resampled.ok_or_else(|| {
                Error::UnsupportedEstimator(
                    "sophia needs label-resampled gradients, which this problem cannot provide".into(),
                )
            })?;
            if r.len() != blocks.len() || r.iter().zip(grads).any(|(a, b)| a.len() != b.len()) {
                return Err(Error::contract("resampled gradients do not match the blocks"));
            }
            if let Some(i) = r.iter().position(|v| !all_finite(v)) {
                return Err(Error::Poisoned {
                    step: t,
                    what: format!("non-finite resampled gradient in block {i}"),
                });
            }
            Some(r)
        } else {
            None
        };

        let outcome = if self.kind == OptimizerKind::Prodigy {
            self.step_prodigy(blocks, grads, ctx)
        } else {
            let mut updates = Vec::with_capacity(blocks.len());
            for (i, (b, g)) in blocks.iter_mut().zip(grads).enumerate() {
                let r = resampled.map(|r| r[i].as_slice());
                updates.push(self.step_block(i, b, g, r, ctx)?);
            }
            StepOutcome {
                updates,
                effective_lr: ctx.lr,
                d: None,
            }
        };
        self.t = t;

        for (b, s) in blocks.iter().zip(&self.states) {
            if !all_finite(&b.values) || !s.is_finite() {
                return Err(Error::Poisoned {
                    step: t,
                    what: format!("non-finite parameters or state in block '{}'", b.name),
                });
            }
        }
        if self.prodigy.as_ref().is_some_and(|p| !p.is_finite()) {
            return Err(Error::Poisoned {
                step: t,
                what: "non-finite Prodigy state".into(),
            });
        }
        Ok(outcome)
    }

    fn step_prodigy(&mut self, blocks: &mut [ParamBlock], grads: &[Vec<f64>], ctx: &StepContext<'_>) -> StepOutcome {
        let h = ProdigyHyper {
            lr: ctx.lr,
            weight_decay: self.hyper.weight_decay,
            eps: self.hyper.eps,
            beta1: self.hyper.beta1,
            beta2: self.hyper.beta2,
            bias_correction: self.hyper.bias_correction,
        };
        let st = self.prodigy.as_mut().expect("prodigy state exists for prodigy");
        let mut xs: Vec<&mut [f64]> = blocks.iter_mut().map(|b| b.values.as_mut_slice()).collect();
        let gs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let out = prodigy_step(&mut xs, &gs, st, &h);
        StepOutcome {
            updates: out.deltas,
            effective_lr: out.effective_lr,
            d: Some(out.d),
        }
    }

    fn step_block(
        &mut self,
        i: usize,
        b: &mut ParamBlock,
        g: &[f64],
        resampled: Option<&[f64]>,
        ctx: &StepContext<'_>,
    ) -> Result<Vec<f64>> {
        let h = &self.hyper;
        let kind = self.kind;
        let (rows, cols) = b.matrix_dims();
        let x = b.values.as_mut_slice();
        let aux_lr = h.adam_lr * ctx.lr_factor;
        match &mut self.states[i] {
            BlockState::Adam(st) => {
                let ah = match kind {
                    OptimizerKind::Muon
                    | OptimizerKind::MarsAdamW
                    | OptimizerKind::MarsLion
                    | OptimizerKind::MarsShampoo => h.adam_aux(aux_lr),
                    OptimizerKind::DMuon => h.adam_aux(ctx.lr),
                    _ => h.adam_main(ctx.lr),
                };
                Ok(adamw_step(x, g, st, &ah))
            }
            BlockState::Adopt(st) => adopt_step(x, g, st, &h.adam_main(ctx.lr)),
            BlockState::Ademamix(st) => {
                let ema = self.ema.as_ref().expect("ademamix schedule exists");
                ademamix_step(x, g, st, &h.adam_main(ctx.lr), ema)
            }
            BlockState::Sign(st) => Ok(if kind == OptimizerKind::Lion {
                let lh = LionHyper {
                    lr: ctx.lr,
                    weight_decay: h.weight_decay,
                    beta1: h.beta1,
                    beta2: h.beta2,
                };
                lion_step(x, g, st, &lh)
            } else {
                let sh = SignumHyper {
                    lr: ctx.lr,
                    weight_decay: h.weight_decay,
                    momentum: h.momentum,
                    dampening: h.dampening,
                    nesterov: h.nesterov,
                    coupled_weight_decay: h.coupled_weight_decay,
                };
                signum_step(x, g, st, &sh)
            }),
            BlockState::Muon(st) => {
                let mh = h.muon(ctx.lr);
                if kind == OptimizerKind::DMuon {
                    dmuon_matrix_step(x, g, st, &mh, h.weight_decay, h.rms_scale, rows, cols)
                } else {
                    muon_matrix_step(x, g, st, &mh, rows, cols)
                }
            }
            BlockState::Soap(st) => {
                let sh = SoapHyper {
                    lr: ctx.lr,
                    weight_decay: h.weight_decay,
                    eps: h.eps,
                    beta1: h.beta1,
                    beta2: h.beta2,
                    precond_freq: h.precond_freq,
                    bias_correction: h.bias_correction,
                };
                soap_step(x, g, st, &sh)
            }
            BlockState::Sophia(st) => {
                let sh = SophiaHyper {
                    lr: ctx.lr,
                    weight_decay: h.weight_decay,
                    eps: h.eps,
                    beta1: h.beta1,
                    beta2: h.beta2,
                    rho: h.rho,
                    estimator_freq: h.estimator_freq,
                };
                Ok(sophia_step(x, g, resampled, ctx.batch_size, st, &sh))
            }
            BlockState::ScheduleFree(st) => {
                let sh = ScheduleFreeHyper {
                    lr: ctx.lr,
                    weight_decay: h.weight_decay,
                    eps: h.eps,
                    beta1: h.beta1,
                    beta2: h.beta2,
                    warmup_steps: h.sf_warmup,
                };
                sfadamw_step(x, g, st, &sh)
            }
            BlockState::Mars(st) => {
                let mh = MarsHyper {
                    variant: kind.mars_variant().expect("mars state only for mars kinds"),
                    lr: ctx.lr,
                    weight_decay: h.weight_decay,
                    eps: h.eps,
                    beta1: h.beta1,
                    beta2: h.beta2,
                    eta: h.eta,
                    ns_iters: h.ns_iters,
                    ns_coeffs: h.ns_coeffs(),
                };
                mars_step(x, g, st, &mh, rows, cols)
            }
            BlockState::Prodigy => unreachable!("prodigy steps all blocks jointly"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn blocks(rng: &mut Rng) -> Vec<ParamBlock> {
        vec![
            ParamBlock::new("w", vec![3, 4], rng.normals(12), Role::Matrix).unwrap(),
            ParamBlock::vector("b", rng.normals(4)),
        ]
    }

    #[test]
    fn names_round_trip() {
        for k in OptimizerKind::ALL {
            assert_eq!(k.name().parse::<OptimizerKind>().unwrap(), k);
        }
        let err = "adamx".parse::<OptimizerKind>().unwrap_err();
        assert!(err.to_string().contains("mars-shampoo"));
    }

    #[test]
    fn matrix_role_needs_two_dimensions() {
        assert!(ParamBlock::new("w", vec![4], vec![0.0; 4], Role::Matrix).is_err());
        assert!(ParamBlock::new("w", vec![2, 2], vec![0.0; 3], Role::Vector).is_err());
        let b = ParamBlock::new("w", vec![2, 3, 4], vec![0.0; 24], Role::Matrix).unwrap();
        assert_eq!(b.matrix_dims(), (2, 12));
    }

    #[test]
    fn hybrid_vector_blocks_follow_adamw() {
        let mut rng = Rng::for_stream(1, 1);
        for kind in [OptimizerKind::Muon, OptimizerKind::DMuon, OptimizerKind::Soap, OptimizerKind::MarsLion] {
            let mut bs = blocks(&mut rng);
            let mut reference = bs[1].values.clone();
            let hyper = Hyper::defaults(kind);
            let mut opt = Optimizer::new(kind, hyper.clone(), &bs, 100).unwrap();
            let mut st = AdamState::new(4);
            let ah = match kind {
                OptimizerKind::Soap => hyper.adam_main(0.01),
                OptimizerKind::DMuon => hyper.adam_aux(0.01),
                _ => hyper.adam_aux(hyper.adam_lr * 0.5),
            };
            for _ in 0..10 {
                let grads = vec![rng.normals(12), rng.normals(4)];
                let ctx = StepContext {
                    lr: 0.01,
                    lr_factor: 0.5,
                    resampled: None,
                    batch_size: 1,
                };
                opt.step(&mut bs, &grads, &ctx).unwrap();
                adamw_step(&mut reference, &grads[1], &mut st, &ah);
            }
            assert_eq!(bs[1].values, reference, "{kind}");
        }
    }

    #[test]
    fn muon_matrix_path_ignores_weight_decay() {
        let run = |wd: f64| {
            let mut rng = Rng::for_stream(2, 2);
            let mut bs = blocks(&mut rng);
            let hyper = Hyper {
                weight_decay: wd,
                ..Hyper::defaults(OptimizerKind::Muon)
            };
            let mut opt = Optimizer::new(OptimizerKind::Muon, hyper, &bs, 10).unwrap();
            for _ in 0..5 {
                let grads = vec![rng.normals(12), rng.normals(4)];
                opt.step(&mut bs, &grads, &StepContext::constant(0.01)).unwrap();
            }
            bs
        };
        let (a, b) = (run(0.0), run(0.5));
        assert_eq!(a[0].values, b[0].values);
        assert_ne!(a[1].values, b[1].values);
    }

    #[test]
    fn poisoned_gradient_is_rejected_before_motion() {
        let mut rng = Rng::for_stream(3, 3);
        let mut bs = blocks(&mut rng);
        let before = bs.clone();
        let mut opt = Optimizer::new(OptimizerKind::AdamW, Hyper::defaults(OptimizerKind::AdamW), &bs, 10).unwrap();
        let grads = vec![vec![f64::NAN; 12], vec![0.0; 4]];
        let err = opt.step(&mut bs, &grads, &StepContext::constant(0.1)).unwrap_err();
        assert!(matches!(err, Error::Poisoned { step: 1, .. }));
        assert_eq!(bs, before);
    }

    #[test]
    fn sophia_without_estimator_is_unsupported() {
        let mut rng = Rng::for_stream(4, 4);
        let mut bs = blocks(&mut rng);
        let mut opt = Optimizer::new(OptimizerKind::Sophia, Hyper::defaults(OptimizerKind::Sophia), &bs, 10).unwrap();
        let grads = vec![rng.normals(12), rng.normals(4)];
        let err = opt.step(&mut bs, &grads, &StepContext::constant(0.1)).unwrap_err();
        assert!(matches!(err, Error::UnsupportedEstimator(_)));
    }

    #[test]
    fn adopt_needs_priming() {
        let mut rng = Rng::for_stream(5, 5);
        let mut bs = blocks(&mut rng);
        let mut opt = Optimizer::new(OptimizerKind::Adopt, Hyper::defaults(OptimizerKind::Adopt), &bs, 10).unwrap();
        let grads = vec![rng.normals(12), rng.normals(4)];
        assert!(opt.step(&mut bs, &grads, &StepContext::constant(0.1)).is_err());
        opt.prime(&grads).unwrap();
        assert!(!opt.needs_priming());
        opt.step(&mut bs, &grads, &StepContext::constant(0.1)).unwrap();
    }

    #[test]
    fn coupled_decay_is_signum_only() {
        let hyper = Hyper {
            coupled_weight_decay: true,
            ..Hyper::defaults(OptimizerKind::AdamW)
        };
        assert!(matches!(hyper.validate(OptimizerKind::AdamW), Err(Error::Config(_))));
        assert!(hyper.validate(OptimizerKind::Signum).is_ok());
    }

    #[test]
    fn state_serializes() {
        let mut rng = Rng::for_stream(6, 6);
        let mut bs = blocks(&mut rng);
        let mut opt = Optimizer::new(OptimizerKind::Soap, Hyper::defaults(OptimizerKind::Soap), &bs, 10).unwrap();
        let grads = vec![rng.normals(12), rng.normals(4)];
        opt.step(&mut bs, &grads, &StepContext::constant(0.01)).unwrap();
        let json = serde_json::to_string(&opt).unwrap();
        let back: Optimizer = serde_json::from_str(&json).unwrap();
        assert_eq!(back.states(), opt.states());
    }
}
