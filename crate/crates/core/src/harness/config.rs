//! Run configuration: layered key-value resolution and the resolved
//! [`RunConfig`].
//!
//! Keys are resolved from three layers, later layers winning: the preset named
//! by `preset`, the config file, then command-line overrides. Bare optimizer
//! field names (`lr`, `beta2`, ...) are shorthand for `optimizer.<field>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kv::{self, parse_bool, parse_f64, parse_u64, parse_usize};
use crate::optim::{presets, Hyper, OptimizerKind, HYPER_KEYS};
use crate::problems::ProblemSpec;
use crate::schedules::{ScheduleFamily, ScheduleSpec};

/// Top-level keys besides the `problem.`, `optimizer.` and `schedule.` groups.
pub const TOP_LEVEL_KEYS: &[&str] = &[
    "preset",
    "steps",
    "seed",
    "log_every",
    "clip",
    "record_timing",
    "coupled_wd_demo",
];

pub const PROBLEM_KEYS: &[&str] = &[
    "kind",
    "seed",
    "dim",
    "condition",
    "noise",
    "batch_size",
    "layout",
    "in_dim",
    "hidden",
    "classes",
    "samples",
];

pub const SCHEDULE_KEYS: &[&str] = &["kind", "warmup", "final_factor", "cooldown_fraction", "halve_for_wsd"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    /// Seed for the synthetic data and start point; `None` uses `seed`.
    pub problem_seed: Option<u64>,
    pub optimizer: OptimizerKind,
    pub hyper: Hyper,
    /// Peak rate is `hyper.lr`, halved when `halve_for_wsd` applies.
    pub schedule: ScheduleSpec,
    /// Halve the peak rate when the schedule is WSD.
    pub halve_for_wsd: bool,
    pub steps: u64,
    /// Global-norm clipping threshold.
    pub clip: Option<f64>,
    /// Seed for batches and noise.
    pub seed: u64,
    pub log_every: u64,
    /// Fill the `step_time_ns` column; off keeps the CSV reproducible.
    pub record_timing: bool,
}

/// Where an assignment came from, for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Preset(String),
    File { line: usize },
    Override,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub key: String,
    pub value: String,
    pub origin: Origin,
}

impl Assignment {
    fn error(&self, message: impl std::fmt::Display) -> Error {
        match &self.origin {
            Origin::File { line } => Error::Parse {
                line: *line,
                message: format!("{}: {message}", self.key),
            },
            Origin::Preset(name) => Error::config(format!("preset {name}, {}: {message}", self.key)),
            Origin::Override => Error::config(format!("--set {}: {message}", self.key)),
        }
    }
}

/// A resolved config with the preset that fed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: RunConfig,
    pub preset: Option<String>,
}

/// Maps shorthand keys to their canonical names.
pub fn normalize_key(key: &str) -> String {
    if key == "optimizer" {
        "optimizer.name".to_string()
    } else if key == "coupled_wd_demo" {
        "optimizer.coupled_weight_decay".to_string()
    } else if HYPER_KEYS.contains(&key) {
        format!("optimizer.{key}")
    } else {
        key.to_string()
    }
}

/// Whether `key` (after normalization) names a config field.
pub fn is_known_key(key: &str) -> bool {
    let key = normalize_key(key);
    if TOP_LEVEL_KEYS.contains(&key.as_str()) {
        return true;
    }
    match key.split_once('.') {
        Some(("problem", k)) => PROBLEM_KEYS.contains(&k),
        Some(("optimizer", k)) => k == "name" || HYPER_KEYS.contains(&k),
        Some(("schedule", k)) => SCHEDULE_KEYS.contains(&k),
        _ => false,
    }
}

/// Reads file text into assignments.
pub fn file_assignments(text: &str) -> Result<Vec<Assignment>> {
    Ok(kv::parse(text)?
        .into_iter()
        .map(|e| Assignment {
            key: normalize_key(&e.key),
            value: e.value,
            origin: Origin::File { line: e.line },
        })
        .collect())
}

/// Reads `KEY=VALUE` overrides into assignments.
pub fn override_assignments<S: AsRef<str>>(overrides: &[S]) -> Result<Vec<Assignment>> {
    overrides
        .iter()
        .map(|s| {
            let (key, value) = kv::parse_assignment(s.as_ref())?;
            Ok(Assignment {
                key: normalize_key(&key),
                value,
                origin: Origin::Override,
            })
        })
        .collect()
}

/// Resolves file text and overrides into a run config.
pub fn resolve<S: AsRef<str>>(file_text: Option<&str>, overrides: &[S]) -> Result<Resolved> {
    let mut layers = match file_text {
        Some(text) => file_assignments(text)?,
        None => Vec::new(),
    };
    layers.extend(override_assignments(overrides)?);
    resolve_assignments(layers)
}

/// Resolves assignments given in increasing precedence.
pub fn resolve_assignments(layers: Vec<Assignment>) -> Result<Resolved> {
    let last = |key: &str| layers.iter().rev().find(|a| a.key == key);
    let preset = match last("preset") {
        None => None,
        Some(a) => Some(lookup_preset(a, last("optimizer.name"))?),
    };
    let mut all: Vec<Assignment> = Vec::new();
    if let Some(p) = &preset {
        let label = format!("{}.{}", p.optimizer.name(), p.tag);
        all.push(Assignment {
            key: "optimizer.name".into(),
            value: p.optimizer.name().into(),
            origin: Origin::Preset(label.clone()),
        });
        all.extend(p.entries.iter().map(|(k, v)| Assignment {
            key: normalize_key(k),
            value: v.clone(),
            origin: Origin::Preset(label.clone()),
        }));
    }
    all.extend(layers.into_iter().filter(|a| a.key != "preset"));
    let config = build(all)?;
    Ok(Resolved {
        config,
        preset: preset.map(|p| format!("{}.{}", p.optimizer.name(), p.tag)),
    })
}

/// `preset` is `optimizer.tag`, or a bare tag for the configured optimizer.
fn lookup_preset(a: &Assignment, name: Option<&Assignment>) -> Result<presets::Preset> {
    let named = name
        .map(|n| n.value.parse::<OptimizerKind>().map_err(|e| n.error(e)))
        .transpose()?;
    let (kind, tag) = match a.value.split_once('.') {
        Some((opt, tag)) => {
            let kind = opt.parse::<OptimizerKind>().map_err(|e| a.error(e))?;
            if let Some(n) = named.filter(|n| *n != kind) {
                return Err(a.error(format!("preset is for {kind} but optimizer.name is {n}")));
            }
            (kind, tag)
        }
        None => {
            let kind = named.ok_or_else(|| a.error("a bare preset tag needs optimizer.name"))?;
            (kind, a.value.as_str())
        }
    };
    presets::find(kind, tag).map_err(|e| a.error(e))
}

/// Last-wins view of the assignments that fields are taken out of.
struct Fields {
    map: BTreeMap<String, Assignment>,
}

impl Fields {
    fn new(all: Vec<Assignment>) -> Self {
        let mut map = BTreeMap::new();
        for a in all {
            map.insert(a.key.clone(), a);
        }
        Self { map }
    }

    fn take(&mut self, key: &str) -> Option<Assignment> {
        self.map.remove(key)
    }

    fn parse<T>(&mut self, key: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(a) => f(key, &a.value).map(Some).map_err(|e| a.error(strip(e))),
        }
    }

    fn finish(self, context: &str) -> Result<()> {
        match self.map.into_values().next() {
            None => Ok(()),
            Some(a) => Err(a.error(format!("unknown or unused key{context}"))),
        }
    }
}

/// The message of a config error, without its kind prefix.
fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn parse_layout(key: &str, value: &str) -> Result<Option<(usize, usize)>> {
    if value.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let (r, c) = value
        .split_once('x')
        .ok_or_else(|| Error::config(format!("{key}: expected ROWSxCOLS or none, got '{value}'")))?;
    Ok(Some((parse_usize(key, r.trim())?, parse_usize(key, c.trim())?)))
}

fn build(all: Vec<Assignment>) -> Result<RunConfig> {
    let mut f = Fields::new(all);

    let name = f
        .take("optimizer.name")
        .ok_or_else(|| Error::config("optimizer.name is required (or a preset)"))?;
    let optimizer = name.value.parse::<OptimizerKind>().map_err(|e| name.error(strip(e)))?;
    let mut hyper = Hyper::defaults(optimizer);
    for key in HYPER_KEYS {
        if let Some(a) = f.take(&format!("optimizer.{key}")) {
            hyper.set(key, &a.value).map_err(|e| a.error(strip(e)))?;
        }
    }
    hyper.validate(optimizer)?;

    let steps = f
        .parse("steps", parse_u64)?
        .ok_or_else(|| Error::config("steps is required"))?;
    if steps == 0 {
        return Err(Error::config("steps must be at least 1"));
    }
    let seed = f.parse("seed", parse_u64)?.unwrap_or(1);
    let log_every = f.parse("log_every", parse_u64)?.unwrap_or(1);
    if log_every == 0 {
        return Err(Error::config("log_every must be at least 1"));
    }
    let clip = f
        .parse("clip", |k, v| {
            if v.eq_ignore_ascii_case("none") {
                Ok(None)
            } else {
                let c = parse_f64(k, v)?;
                if c > 0.0 {
                    Ok(Some(c))
                } else {
                    Err(Error::config("clip threshold must be positive (or none)"))
                }
            }
        })?
        .flatten();
    let record_timing = f.parse("record_timing", parse_bool)?.unwrap_or(false);

    let family = f
        .parse("schedule.kind", |_, v| v.parse::<ScheduleFamily>())?
        .unwrap_or(ScheduleFamily::Constant);
    let warmup = f.parse("schedule.warmup", parse_u64)?.unwrap_or(0);
    let halve_for_wsd = f.parse("schedule.halve_for_wsd", parse_bool)?.unwrap_or(false);
    let peak = if halve_for_wsd && family == ScheduleFamily::Wsd {
        0.5 * hyper.lr
    } else {
        hyper.lr
    };
    let mut schedule = ScheduleSpec::new(family, peak, warmup, steps);
    if let Some(v) = f.parse("schedule.final_factor", parse_f64)? {
        schedule.final_lr_factor = v;
    }
    if let Some(v) = f.parse("schedule.cooldown_fraction", parse_f64)? {
        schedule.wsd_cooldown_fraction = v;
    }
    schedule.validate().map_err(|e| match e {
        Error::Config(m) if schedule.warmup_steps >= steps => {
            Error::config(format!("{m}; set schedule.warmup to a shorter value"))
        }
        other => other,
    })?;

    let kind = f.parse("problem.kind", |_, v| Ok(v.to_ascii_lowercase()))?;
    let problem_seed = f.parse("problem.seed", parse_u64)?;
    let problem = match kind.as_deref().unwrap_or("quadratic") {
        "quadratic" => ProblemSpec::Quadratic {
            dim: f.parse("problem.dim", parse_usize)?.unwrap_or(20),
            condition: f.parse("problem.condition", parse_f64)?.unwrap_or(10.0),
            noise: f.parse("problem.noise", parse_f64)?.unwrap_or(0.0),
            batch_size: f.parse("problem.batch_size", parse_usize)?.unwrap_or(1),
            layout: f.parse("problem.layout", parse_layout)?.flatten(),
        },
        "rosenbrock" => ProblemSpec::Rosenbrock {
            dim: f.parse("problem.dim", parse_usize)?.unwrap_or(2),
        },
        "mlp" => ProblemSpec::Mlp {
            in_dim: f.parse("problem.in_dim", parse_usize)?.unwrap_or(16),
            hidden: f.parse("problem.hidden", parse_usize)?.unwrap_or(32),
            classes: f.parse("problem.classes", parse_usize)?.unwrap_or(4),
            samples: f.parse("problem.samples", parse_usize)?.unwrap_or(512),
            batch_size: f.parse("problem.batch_size", parse_usize)?.unwrap_or(32),
        },
        other => {
            return Err(Error::config(format!(
                "unknown problem kind '{other}' (expected quadratic, rosenbrock, mlp)"
            )))
        }
    };
    f.finish(&format!(" for a {} problem", problem.kind()))?;

    Ok(RunConfig {
        problem,
        problem_seed,
        optimizer,
        hyper,
        schedule,
        halve_for_wsd,
        steps,
        clip,
        seed,
        log_every,
        record_timing,
    })
}

impl RunConfig {
    /// Seed the problem instance is built from.
    pub fn data_seed(&self) -> u64 {
        self.problem_seed.unwrap_or(self.seed)
    }

    pub fn coupled_wd_demo(&self) -> bool {
        self.hyper.coupled_weight_decay
    }

    /// Fully explicit config text; resolving it yields `self` again.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "log_every = {}", self.log_every);
        match self.clip {
            Some(c) => {
                let _ = writeln!(s, "clip = {c:?}");
            }
            None => s.push_str("clip = none\n"),
        }
        let _ = writeln!(s, "record_timing = {}", self.record_timing);

        s.push_str("\n[problem]\n");
        let _ = writeln!(s, "kind = {}", self.problem.kind());
        if let Some(ps) = self.problem_seed {
            let _ = writeln!(s, "seed = {ps}");
        }
        match &self.problem {
            ProblemSpec::Quadratic {
                dim,
                condition,
                noise,
                batch_size,
                layout,
            } => {
                let _ = writeln!(s, "dim = {dim}");
                let _ = writeln!(s, "condition = {condition:?}");
                let _ = writeln!(s, "noise = {noise:?}");
                let _ = writeln!(s, "batch_size = {batch_size}");
                match layout {
                    Some((r, c)) => {
                        let _ = writeln!(s, "layout = {r}x{c}");
                    }
                    None => s.push_str("layout = none\n"),
                }
            }
            ProblemSpec::Rosenbrock { dim } => {
                let _ = writeln!(s, "dim = {dim}");
            }
            ProblemSpec::Mlp {
                in_dim,
                hidden,
                classes,
                samples,
                batch_size,
            } => {
                let _ = writeln!(s, "in_dim = {in_dim}");
                let _ = writeln!(s, "hidden = {hidden}");
                let _ = writeln!(s, "classes = {classes}");
                let _ = writeln!(s, "samples = {samples}");
                let _ = writeln!(s, "batch_size = {batch_size}");
            }
        }

        s.push_str("\n[optimizer]\n");
        let _ = writeln!(s, "name = {}", self.optimizer.name());
        let fields = serde_json::to_value(&self.hyper).expect("hyper serializes");
        for key in HYPER_KEYS {
            let v = &fields[*key];
            let text = match v {
                serde_json::Value::Null => "auto".to_string(),
                serde_json::Value::Number(n) => match n.as_f64() {
                    Some(x) if n.is_f64() => format!("{x:?}"),
                    _ => n.to_string(),
                },
                other => other.to_string(),
            };
            let _ = writeln!(s, "{key} = {text}");
        }

        s.push_str("\n[schedule]\n");
        let _ = writeln!(s, "kind = {}", self.schedule.family);
        let _ = writeln!(s, "warmup = {}", self.schedule.warmup_steps);
        let _ = writeln!(s, "final_factor = {:?}", self.schedule.final_lr_factor);
        let _ = writeln!(s, "cooldown_fraction = {:?}", self.schedule.wsd_cooldown_fraction);
        let _ = writeln!(s, "halve_for_wsd = {}", self.halve_for_wsd);
        s
    }

    /// Resolves this config with further overrides applied on top.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<RunConfig> {
        Ok(resolve(Some(&self.to_kv()), overrides)?.config)
    }

    /// Short stable digest of the resolved config, excluding the seed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.problem_seed = Some(self.data_seed());
        c.seed = 0;
        let digest = Sha256::digest(c.to_kv().as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Reads either a bare config object or a run summary with a `config`
    /// field.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config(format!("invalid JSON: {e}")))?;
        let inner = value.get("config").cloned().unwrap_or(value);
        serde_json::from_value(inner).map_err(|e| Error::config(format!("invalid run config JSON: {e}")))
    }
}
