//! Self-checks: scalar references, gradients, schedules, reductions and
//! regression bands. Each check is deterministic and reports a measured
//! quantity next to its threshold.

pub mod reference;

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::run;
use crate::numerics::{svd_singular_values, Matrix, Rng};
use crate::optim::newton_schulz::{newton_schulz_orthogonalize, NsCoefficients, DEFAULT_NS_ITERS};
use crate::optim::{Hyper, Optimizer, OptimizerKind, ParamBlock, Role, StepContext};
use crate::problems::{finite_difference_gradient, views, BatchKey, ProblemSpec};
use crate::schedules::{EmaScheduleSpec, ScheduleFamily, ScheduleSpec};

pub use reference::Reference;

/// Per-coordinate agreement required between the library and a reference.
pub const ORACLE_TOLERANCE: f64 = 1e-12;
/// Relative gradient error allowed against central differences.
pub const FD_TOLERANCE: f64 = 1e-6;
/// Frozen singular-value band of 5-step Newton-Schulz output on 64×64
/// Gaussian inputs with the default coefficients.
pub const NS_BAND: (f64, f64) = (0.01, 1.21);

/// A deliberate defect applied to the library side of a check, used to
/// confirm that the suite notices it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// AdamW runs with ε multiplied by 10⁴ while its reference keeps the
    /// configured value.
    AdamwEps,
}

impl std::str::FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adamw-eps" => Ok(Fault::AdamwEps),
            other => Err(Error::config(format!("unknown fault '{other}'; known: adamw-eps"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub group: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(group: &'static str, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            group,
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(group: &'static str, name: impl Into<String>, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(group, name, passed, detail),
            Err(e) => Self::new(group, name, false, format!("error: {e}")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One line per check, grouped, with a closing tally.
    pub fn to_text(&self) -> String {
        let width = self.checks.iter().map(|c| c.group.len() + c.name.len() + 1).max().unwrap_or(0);
        let mut s = String::new();
        for c in &self.checks {
            let label = format!("{}/{}", c.group, c.name);
            let mark = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{mark}  {label:<width$}  {}", c.detail);
        }
        let failed = self.failures().count();
        let _ = writeln!(
            s,
            "{} checks, {} passed, {} failed in {:.1}s",
            self.checks.len(),
            self.checks.len() - failed,
            failed,
            self.seconds
        );
        s
    }
}

/// Runs every check.
pub fn run_all(fault: Option<Fault>) -> Report {
    let start = Instant::now();
    let mut checks = Vec::new();
    for v in oracle_variants() {
        let r = scalar_oracle(v.kind, &v.hyper, ORACLE_STEPS, fault);
        checks.push(Check::from_result("scalar-oracle", v.name, r.map(|d| {
            (d <= ORACLE_TOLERANCE, format!("max |Δ| = {d:.3e} (≤ {ORACLE_TOLERANCE:e})"))
        })));
    }
    checks.push(Check::from_result("reduction", "soap-identity-is-adamw", soap_identity(100).map(|d| {
        (d <= ORACLE_TOLERANCE, format!("max |Δ| = {d:.3e} over 100 steps"))
    })));
    for kind in [OptimizerKind::Signum, OptimizerKind::Lion] {
        for c in [0.1, 7.3] {
            let r = sign_scale_invariance(kind, c, 200).map(|same| {
                (same, if same { "bit-identical".to_string() } else { "trajectories differ".to_string() })
            });
            checks.push(Check::from_result("sign-invariance", format!("{}-x{c}", kind.name()), r));
        }
    }
    for (name, spec) in fd_problems() {
        let r = gradient_check(&spec, 3).map(|e| (e <= FD_TOLERANCE, format!("max rel err = {e:.3e}")));
        checks.push(Check::from_result("finite-difference", name, r));
    }
    for (name, r) in schedule_endpoint_checks() {
        checks.push(Check::from_result("schedule", name, r));
    }
    let band = ns_band(50);
    checks.push(Check::from_result("newton-schulz", "singular-value-band", band.map(|(lo, hi)| {
        (
            lo >= NS_BAND.0 && hi <= NS_BAND.1,
            format!("σ ∈ [{lo:.6}, {hi:.6}] vs band [{}, {}]", NS_BAND.0, NS_BAND.1),
        )
    })));
    checks.push(Check::from_result("newton-schulz", "scalar-polynomial", ns_polynomial_oracle(10).map(|e| {
        (e <= 1e-9, format!("max |σ − p⁵(σ)| = {e:.3e}"))
    })));
    checks.push(Check::from_result("prodigy", "d-monotone-and-anchored", prodigy_check().map(|p| {
        (p.passed(), p.to_string())
    })));
    checks.push(Check::from_result("harness", "determinism", determinism_check()));
    Report {
        checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub const ORACLE_STEPS: usize = 200;

pub struct OracleVariant {
    pub name: String,
    pub kind: OptimizerKind,
    pub hyper: Hyper,
}

/// Every rule at its defaults, plus the Signum and SOAP switches. Warmup
/// lengths are shortened so their ramps fall inside the run.
pub fn oracle_variants() -> Vec<OracleVariant> {
    let mut out: Vec<OracleVariant> = OptimizerKind::ALL
        .iter()
        .map(|&kind| {
            let mut hyper = Hyper::defaults(kind);
            hyper.sf_warmup = 50;
            OracleVariant {
                name: kind.name().to_string(),
                kind,
                hyper,
            }
        })
        .collect();
    let mut extra = |name: &str, kind: OptimizerKind, edit: &dyn Fn(&mut Hyper)| {
        let mut hyper = Hyper::defaults(kind);
        edit(&mut hyper);
        out.push(OracleVariant {
            name: name.to_string(),
            kind,
            hyper,
        });
    };
    extra("signum-plain-dampened", OptimizerKind::Signum, &|h| {
        h.nesterov = false;
        h.dampening = h.momentum;
    });
    extra("signum-coupled", OptimizerKind::Signum, &|h| {
        h.coupled_weight_decay = true;
        h.weight_decay = 0.5;
    });
    extra("soap-no-bias-correction", OptimizerKind::Soap, &|h| {
        h.bias_correction = false;
        h.precond_freq = 3;
    });
    extra("ademamix-short-warmups", OptimizerKind::Ademamix, &|h| {
        h.alpha_warmup = Some(40);
        h.beta3_warmup = Some(60);
    });
    out
}

/// A vector block, a wide matrix block and an output head, so every routing
/// path of the hybrid rules is exercised.
fn oracle_blocks(rng: &mut Rng) -> Vec<ParamBlock> {
    vec![
        ParamBlock::new("v", vec![7], rng.normals(7), Role::Vector).expect("valid"),
        ParamBlock::new("w", vec![4, 6], rng.normals(24), Role::Matrix).expect("valid"),
        ParamBlock::new("head", vec![3, 4], rng.normals(12), Role::OutputHead).expect("valid"),
    ]
}

fn random_grads(rng: &mut Rng, blocks: &[ParamBlock]) -> Vec<Vec<f64>> {
    let scale = 10f64.powf(2.0 * rng.uniform() - 1.0);
    blocks
        .iter()
        .map(|b| rng.normals(b.len()).into_iter().map(|g| g * scale).collect())
        .collect()
}

/// Drives the library optimizer and its reference through the same random
/// gradients and rates; returns the largest coordinate gap seen.
pub fn scalar_oracle(kind: OptimizerKind, hyper: &Hyper, steps: usize, fault: Option<Fault>) -> Result<f64> {
    let mut rng = Rng::for_stream(2024, crate::numerics::label_id(kind.name()));
    let mut blocks = oracle_blocks(&mut rng);
    let mut lib_hyper = hyper.clone();
    if fault == Some(Fault::AdamwEps) && kind == OptimizerKind::AdamW {
        lib_hyper.eps *= 1e4;
    }
    let mut opt = Optimizer::new(kind, lib_hyper, &blocks, steps as u64)?;
    let mut reference = Reference::new(kind, hyper, &blocks, steps as u64);
    let mut x: Vec<Vec<f64>> = blocks.iter().map(|b| b.values.clone()).collect();
    let batch_size = 8;
    if opt.needs_priming() {
        let g0 = random_grads(&mut rng, &blocks);
        opt.prime(&g0)?;
        reference.prime(&g0);
    }
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let g = random_grads(&mut rng, &blocks);
        let resampled = random_grads(&mut rng, &blocks);
        let factor = 0.05 + 0.95 * rng.uniform();
        let lr = hyper.lr * factor;
        let ctx = StepContext {
            lr,
            lr_factor: factor,
            resampled: Some(&resampled),
            batch_size,
        };
        opt.step(&mut blocks, &g, &ctx)?;
        reference.step(&mut x, &g, lr, factor, Some(&resampled), batch_size);
        let lib_eval = opt.eval_params(&blocks);
        let ref_eval = reference.eval_params(&x);
        for (pairs_a, pairs_b) in [(&blocks.iter().map(|b| b.values.clone()).collect::<Vec<_>>(), &x), (&lib_eval, &ref_eval)] {
            for (a, b) in pairs_a.iter().zip(pairs_b.iter()) {
                for (u, v) in a.iter().zip(b) {
                    let d = (u - v).abs();
                    if !d.is_finite() {
                        return Ok(f64::INFINITY);
                    }
                    worst = worst.max(d);
                }
            }
        }
    }
    Ok(worst)
}

/// SOAP pinned to identity bases with refreshes off against AdamW with the
/// same betas, on a single matrix block.
pub fn soap_identity(steps: usize) -> Result<f64> {
    let mut rng = Rng::for_stream(7, 7);
    let start = ParamBlock::new("w", vec![5, 3], rng.normals(15), Role::Matrix)?;
    let mut soap_h = Hyper::defaults(OptimizerKind::Soap);
    soap_h.identity_basis = true;
    soap_h.precond_freq = 0;
    let mut adam_h = Hyper::defaults(OptimizerKind::AdamW);
    for h in [&mut adam_h] {
        h.beta1 = soap_h.beta1;
        h.beta2 = soap_h.beta2;
        h.eps = soap_h.eps;
        h.weight_decay = soap_h.weight_decay;
        h.lr = soap_h.lr;
    }
    let mut a_blocks = vec![start.clone()];
    let mut s_blocks = vec![start];
    let mut adam = Optimizer::new(OptimizerKind::AdamW, adam_h, &a_blocks, steps as u64)?;
    let mut soap = Optimizer::new(OptimizerKind::Soap, soap_h.clone(), &s_blocks, steps as u64)?;
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let g = random_grads(&mut rng, &a_blocks);
        let ctx = StepContext::constant(soap_h.lr);
        adam.step(&mut a_blocks, &g, &ctx)?;
        soap.step(&mut s_blocks, &g, &ctx)?;
        for (u, v) in a_blocks[0].values.iter().zip(&s_blocks[0].values) {
            worst = worst.max((u - v).abs());
        }
    }
    Ok(worst)
}

/// Whether a sign-based rule with λ = 0 follows the same trajectory when
/// every gradient is multiplied by `c`.
pub fn sign_scale_invariance(kind: OptimizerKind, c: f64, steps: usize) -> Result<bool> {
    if !kind.is_sign_based() {
        return Err(Error::contract(format!("{} is not sign based", kind.name())));
    }
    let mut rng = Rng::for_stream(11, crate::numerics::label_id(kind.name()));
    let base = oracle_blocks(&mut rng);
    let mut hyper = Hyper::defaults(kind);
    hyper.weight_decay = 0.0;
    hyper.lr = 1e-2;
    let mut a = base.clone();
    let mut b = base;
    let mut oa = Optimizer::new(kind, hyper.clone(), &a, steps as u64)?;
    let mut ob = Optimizer::new(kind, hyper.clone(), &b, steps as u64)?;
    for _ in 0..steps {
        let g = random_grads(&mut rng, &a);
        let gc: Vec<Vec<f64>> = g.iter().map(|v| v.iter().map(|x| x * c).collect()).collect();
        oa.step(&mut a, &g, &StepContext::constant(hyper.lr))?;
        ob.step(&mut b, &gc, &StepContext::constant(hyper.lr))?;
    }
    Ok(a.iter().zip(&b).all(|(x, y)| {
        x.values.iter().zip(&y.values).all(|(u, v)| u.to_bits() == v.to_bits())
    }))
}

/// One small instance of every problem, with noise and a matrix layout where
/// the problem offers them.
pub fn fd_problems() -> Vec<(&'static str, ProblemSpec)> {
    vec![
        ("quadratic", ProblemSpec::quadratic(12, 10.0)),
        (
            "quadratic-noisy-matrix",
            ProblemSpec::Quadratic {
                dim: 12,
                condition: 100.0,
                noise: 1.0,
                batch_size: 4,
                layout: Some((3, 4)),
            },
        ),
        ("rosenbrock", ProblemSpec::Rosenbrock { dim: 6 }),
        ("mlp", ProblemSpec::mlp(5, 6, 3, 40, 8)),
    ]
}

/// Largest per-block relative error `‖fd − g‖ / ‖g‖` over `points` random
/// points. Central differences with h = 1e-5.
pub fn gradient_check(spec: &ProblemSpec, points: u64) -> Result<f64> {
    let problem = spec.build(3)?;
    let init = problem.initial_params();
    let mut rng = Rng::for_stream(5, crate::numerics::label_id(spec.kind()));
    let mut worst: f64 = 0.0;
    for point in 0..points {
        let params: Vec<Vec<f64>> = init
            .iter()
            .map(|b| b.values.iter().map(|v| v + 0.5 * rng.normal()).collect())
            .collect();
        let batch = BatchKey::new(9, point);
        let fd = finite_difference_gradient(problem.as_ref(), &views(&params), batch, 1e-5)?;
        let g = problem.loss_and_grad(&views(&params), batch)?.grads;
        for (a, b) in fd.iter().zip(&g) {
            let diff = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(if norm > 0.0 { diff / norm } else { diff });
        }
    }
    Ok(worst)
}

/// Endpoint and plateau checks for every schedule family and the AdEMAMix
/// ramps.
pub fn schedule_endpoint_checks() -> Vec<(&'static str, Result<(bool, String)>)> {
    let gamma = 3e-3;
    let near = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let cosine = || -> Result<(bool, String)> {
        let s = ScheduleSpec::new(ScheduleFamily::Cosine, gamma, 50, 1000);
        let end = s.lr_at(1000)?;
        let peak = s.lr_at(50)?;
        Ok((near(end, 0.01 * gamma) && peak == gamma, format!("lr(T_w) = {peak:e}, lr(T) = {end:e}")))
    };
    let warmup = || -> Result<(bool, String)> {
        let s = ScheduleSpec::new(ScheduleFamily::Cosine, gamma, 40, 400);
        let mut ok = true;
        for t in 1..=40 {
            ok &= s.lr_at(t)? == gamma * t as f64 / 40.0;
        }
        Ok((ok, "lr(t) = γ·t/T_w for t ≤ T_w".into()))
    };
    let wsd = || -> Result<(bool, String)> {
        let s = ScheduleSpec::new(ScheduleFamily::Wsd, gamma, 10, 1000);
        let start = s.cooldown_start();
        let mut ok = true;
        for t in 10..=(start.floor() as u64) {
            ok &= s.lr_at(t)? == gamma;
        }
        let after = s.lr_at(start.floor() as u64 + 1)?;
        let end = s.lr_at(1000)?;
        Ok((
            ok && after < gamma && near(end, 0.01 * gamma),
            format!("flat through t = {start}, lr(T) = {end:e}"),
        ))
    };
    let linear = || -> Result<(bool, String)> {
        let s = ScheduleSpec::new(ScheduleFamily::Linear, gamma, 0, 500);
        let end = s.lr_at(500)?;
        Ok((near(end, 0.001 * gamma), format!("lr(T) = {end:e}")))
    };
    let ademamix = || -> Result<(bool, String)> {
        let spec = EmaScheduleSpec {
            alpha: 8.0,
            beta3: 0.9999,
            beta_start: 0.9,
            t_alpha: 300,
            t_beta3: 300,
        };
        let b0 = spec.beta3_at(0)?;
        let bt = spec.beta3_at(300)?;
        let a0 = spec.alpha_at(0);
        let at = spec.alpha_at(300);
        Ok((
            near(b0, 0.9) && bt == 0.9999 && a0 == 0.0 && at == 8.0,
            format!("β₃: {b0} → {bt}, α: {a0} → {at}"),
        ))
    };
    vec![
        ("cosine-endpoints", cosine()),
        ("warmup-linear", warmup()),
        ("wsd-plateau-and-end", wsd()),
        ("linear-end", linear()),
        ("ademamix-ramps", ademamix()),
    ]
}

/// Extreme singular values of Newton-Schulz output over `count` Gaussian
/// 64×64 matrices.
pub fn ns_band(count: u64) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..count {
        let g = ns_input(i)?;
        let o = newton_schulz_orthogonalize(&g, DEFAULT_NS_ITERS, NsCoefficients::default())?;
        for s in svd_singular_values(&o) {
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    Ok((lo, hi))
}

fn ns_input(i: u64) -> Result<Matrix> {
    let mut rng = Rng::for_stream(0, i);
    Matrix::new(64, 64, rng.normals(64 * 64))
}

/// The iteration acts on each singular value of `G/‖G‖_F` through the
/// scalar quintic `p(σ) = aσ + bσ³ + cσ⁵`. Returns the largest gap between
/// the sorted singular values of the output and `p⁵` of the input's.
pub fn ns_polynomial_oracle(count: u64) -> Result<f64> {
    let k = NsCoefficients::default();
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let g = ns_input(i)?;
        let norm = g.frobenius_norm();
        let mut predicted: Vec<f64> = svd_singular_values(&g)
            .into_iter()
            .map(|s| {
                let mut x = s / norm;
                for _ in 0..DEFAULT_NS_ITERS {
                    x = k.a * x + k.b * x.powi(3) + k.c * x.powi(5);
                }
                x.abs()
            })
            .collect();
        let o = newton_schulz_orthogonalize(&g, DEFAULT_NS_ITERS, k)?;
        let mut actual = svd_singular_values(&o);
        predicted.sort_by(f64::total_cmp);
        actual.sort_by(f64::total_cmp);
        for (p, a) in predicted.iter().zip(&actual) {
            worst = worst.max((p - a).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProdigyProbe {
    pub d1: f64,
    pub d2: f64,
    pub monotone: bool,
    pub effective_lr_populated: bool,
    pub d_final: f64,
}

impl ProdigyProbe {
    pub fn passed(&self) -> bool {
        self.d1 == crate::optim::prodigy::DEFAULT_D0
            && self.d2 == self.d1
            && self.monotone
            && self.effective_lr_populated
    }
}

impl std::fmt::Display for ProdigyProbe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "d₁ = {:e}, d₂ = {:e}, final d = {:.3e}, monotone = {}, effective lr populated = {}",
            self.d1, self.d2, self.d_final, self.monotone, self.effective_lr_populated
        )
    }
}

/// Prodigy on the default quadratic and on the MLP.
pub fn prodigy_check() -> Result<ProdigyProbe> {
    let mut probe = ProdigyProbe {
        d1: f64::NAN,
        d2: f64::NAN,
        monotone: true,
        effective_lr_populated: true,
        d_final: f64::NAN,
    };
    for (i, problem) in ["quadratic", "mlp"].iter().enumerate() {
        let text = format!(
            "steps = 300\n[problem]\nkind = {problem}\n[optimizer]\nname = prodigy\nlr = 1\n[schedule]\nkind = cosine\nwarmup = 10\n"
        );
        let cfg = crate::harness::resolve(Some(&text), &[] as &[&str])?.config;
        let rec = run(&cfg)?;
        let d: Vec<f64> = rec.rows.iter().map(|r| r.d_t.unwrap_or(f64::NAN)).collect();
        if i == 0 {
            probe.d1 = d[0];
            probe.d2 = d[1];
            probe.d_final = *d.last().expect("rows");
        }
        probe.monotone &= d.windows(2).all(|w| w[1] >= w[0]);
        probe.effective_lr_populated &= rec
            .rows
            .iter()
            .all(|r| r.d_t.is_some() && r.effective_lr.is_finite() && r.effective_lr > 0.0);
    }
    Ok(probe)
}

/// Two runs of the same config produce byte-identical CSV text.
pub fn determinism_check() -> Result<(bool, String)> {
    let cfg = crate::harness::resolve(Some("steps = 200\n[problem]\nkind = mlp\n[optimizer]\nname = soap\n"), &[] as &[&str])?.config;
    let a = run(&cfg)?.to_csv();
    let b = run(&cfg)?.to_csv();
    Ok((a == b, format!("{} bytes", a.len())))
}
