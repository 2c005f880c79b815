//! Learning-rate schedules and the AdEMAMix α / β₃ ramps.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleFamily {
    Constant,
    Cosine,
    Linear,
    Wsd,
}

impl ScheduleFamily {
    /// `γ_end / γ_max` used when none is configured.
    pub fn default_final_factor(self) -> f64 {
        match self {
            ScheduleFamily::Linear => 0.001,
            _ => 0.01,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleFamily::Constant => "constant",
            ScheduleFamily::Cosine => "cosine",
            ScheduleFamily::Linear => "linear",
            ScheduleFamily::Wsd => "wsd",
        }
    }
}

impl fmt::Display for ScheduleFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "constant" | "none" | "no" => Ok(ScheduleFamily::Constant),
            "cosine" | "cos" => Ok(ScheduleFamily::Cosine),
            "linear" => Ok(ScheduleFamily::Linear),
            "wsd" => Ok(ScheduleFamily::Wsd),
            other => Err(Error::config(format!(
                "unknown schedule '{other}' (expected constant, cosine, linear, wsd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub family: ScheduleFamily,
    pub gamma_max: f64,
    /// `γ_end = final_lr_factor · γ_max`
    pub final_lr_factor: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub wsd_cooldown_fraction: f64,
}

impl ScheduleSpec {
    pub fn new(family: ScheduleFamily, gamma_max: f64, warmup_steps: u64, total_steps: u64) -> Self {
        Self {
            family,
            gamma_max,
            final_lr_factor: family.default_final_factor(),
            warmup_steps,
            total_steps,
            wsd_cooldown_fraction: 0.2,
        }
    }

    pub fn constant(gamma_max: f64, total_steps: u64) -> Self {
        Self::new(ScheduleFamily::Constant, gamma_max, 0, total_steps)
    }

    pub fn gamma_end(&self) -> f64 {
        self.final_lr_factor * self.gamma_max
    }

    /// First step of the WSD cooldown phase (the last step at `γ_max`).
    pub fn cooldown_start(&self) -> f64 {
        (1.0 - self.wsd_cooldown_fraction) * self.total_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_max.is_finite() && self.gamma_max > 0.0) {
            return Err(Error::config("schedule peak lr must be positive"));
        }
        if !(0.0..=1.0).contains(&self.final_lr_factor) {
            return Err(Error::config("final lr factor must lie in [0, 1]"));
        }
        if self.total_steps == 0 {
            return Err(Error::config("total steps must be at least 1"));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::config(format!(
                "warmup ({}) must be shorter than the run ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.family == ScheduleFamily::Wsd {
            let f = self.wsd_cooldown_fraction;
            if !(f > 0.0 && f <= 1.0) || f * (self.total_steps as f64) < 1.0 {
                return Err(Error::config(
                    "wsd cooldown fraction must lie in (0, 1] and cover at least one step",
                ));
            }
        }
        Ok(())
    }

    /// Learning rate for step `t` in `1..=T`.
    pub fn lr_at(&self, t: u64) -> Result<f64> {
        lr_at(self, t)
    }
}

pub fn lr_at(spec: &ScheduleSpec, t: u64) -> Result<f64> {
    if t < 1 || t > spec.total_steps {
        return Err(Error::contract(format!(
            "step {t} outside 1..={}",
            spec.total_steps
        )));
    }
    let g_max = spec.gamma_max;
    let g_end = spec.gamma_end();
    let warmup = spec.warmup_steps;
    if warmup > 0 && t <= warmup {
        return Ok(g_max * t as f64 / warmup as f64);
    }
    let span = (spec.total_steps - warmup) as f64;
    let progress = (t - warmup) as f64 / span;
    let lr = match spec.family {
        ScheduleFamily::Constant => g_max,
        ScheduleFamily::Cosine => g_end + 0.5 * (g_max - g_end) * (1.0 + (PI * progress).cos()),
        ScheduleFamily::Linear => g_max + (g_end - g_max) * progress,
        ScheduleFamily::Wsd => {
            let start = spec.cooldown_start();
            let t = t as f64;
            if t <= start {
                g_max
            } else {
                let x = ((t - start) / (spec.total_steps as f64 - start)).min(1.0);
                g_end + (g_max - g_end) * (1.0 - x.sqrt())
            }
        }
    };
    Ok(lr)
}

/// AdEMAMix ramps for the slow-EMA mixing weight α and decay β₃.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaScheduleSpec {
    pub alpha: f64,
    pub beta3: f64,
    pub beta_start: f64,
    pub t_alpha: u64,
    pub t_beta3: u64,
}

impl EmaScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        let open = |b: f64| b > 0.0 && b < 1.0;
        if !open(self.beta3) || !open(self.beta_start) {
            return Err(Error::contract(format!(
                "beta_start ({}) and beta3 ({}) must lie in (0, 1)",
                self.beta_start, self.beta3
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::contract("alpha must be nonnegative"));
        }
        Ok(())
    }

    pub fn alpha_at(&self, t: u64) -> f64 {
        ademamix_alpha_at(self, t)
    }

    pub fn beta3_at(&self, t: u64) -> Result<f64> {
        ademamix_beta3_at(self, t)
    }
}

/// `min(t·α / T_α, α)`
pub fn ademamix_alpha_at(spec: &EmaScheduleSpec, t: u64) -> f64 {
    if spec.t_alpha == 0 {
        return spec.alpha;
    }
    (t as f64 * spec.alpha / spec.t_alpha as f64).min(spec.alpha)
}

/// Log-space interpolation from `β_start` to `β₃` over `T_β₃` steps.
pub fn ademamix_beta3_at(spec: &EmaScheduleSpec, t: u64) -> Result<f64> {
    spec.validate()?;
    if spec.t_beta3 == 0 || t >= spec.t_beta3 {
        return Ok(spec.beta3);
    }
    let frac = t as f64 / spec.t_beta3 as f64;
    let log_start = spec.beta_start.ln();
    let log_end = spec.beta3.ln();
    let denom = (1.0 - frac) * log_end + frac * log_start;
    Ok((log_start * log_end / denom).exp().min(spec.beta3))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(t_total: u64, warmup: u64) -> ScheduleSpec {
        ScheduleSpec::new(ScheduleFamily::Cosine, 1e-3, warmup, t_total)
    }

    #[test]
    fn cosine_endpoints() {
        let s = cosine(1000, 100);
        assert_eq!(s.lr_at(100).unwrap(), 1e-3);
        assert!((s.lr_at(1000).unwrap() - 1e-5).abs() <= 1e-12);
        // Decay midpoint: cos(π/2) = 0.
        let mid = s.lr_at(550).unwrap();
        assert!((mid - (1e-3 + 1e-5) / 2.0).abs() <= 1e-15);
    }

    #[test]
    fn warmup_is_linear_from_zero() {
        let s = cosine(1000, 100);
        for t in 1..=100 {
            assert_eq!(s.lr_at(t).unwrap(), 1e-3 * t as f64 / 100.0);
        }
    }

    #[test]
    fn wsd_shape() {
        let mut s = ScheduleSpec::new(ScheduleFamily::Wsd, 2.0, 10, 100);
        s.final_lr_factor = 0.01;
        assert_eq!(s.lr_at(80).unwrap(), 2.0);
        assert_eq!(s.lr_at(100).unwrap(), 0.02);
        // x = 1/4 into the cooldown: 1 - sqrt(x) = 1/2.
        assert!((s.lr_at(85).unwrap() - (0.02 + 1.98 * 0.5)).abs() < 1e-15);
        let constant = ScheduleSpec::new(ScheduleFamily::Constant, 2.0, 10, 100);
        for t in 1..=80 {
            assert_eq!(s.lr_at(t).unwrap(), constant.lr_at(t).unwrap());
        }
    }

    #[test]
    fn linear_default_factor() {
        let s = ScheduleSpec::new(ScheduleFamily::Linear, 1.0, 0, 10);
        assert!((s.lr_at(10).unwrap() - 0.001).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_step() {
        let s = cosine(10, 2);
        assert!(matches!(s.lr_at(0), Err(Error::Contract(_))));
        assert!(matches!(s.lr_at(11), Err(Error::Contract(_))));
    }

    #[test]
    fn monotone_after_warmup() {
        for family in [ScheduleFamily::Cosine, ScheduleFamily::Linear, ScheduleFamily::Wsd] {
            let s = ScheduleSpec::new(family, 1.0, 20, 400);
            let lrs: Vec<f64> = (20..=400).map(|t| s.lr_at(t).unwrap()).collect();
            assert!(lrs.windows(2).all(|w| w[1] <= w[0]), "{family}");
        }
    }

    #[test]
    fn cosine_continuity_at_warmup_boundary() {
        let s = cosine(500, 50);
        let step = (s.lr_at(50).unwrap() - s.lr_at(51).unwrap()).abs();
        assert!(step <= s.gamma_max / 450.0 * PI);
    }

    fn ema(alpha: f64, t_alpha: u64, beta_start: f64, beta3: f64, t_beta3: u64) -> EmaScheduleSpec {
        EmaScheduleSpec {
            alpha,
            beta3,
            beta_start,
            t_alpha,
            t_beta3,
        }
    }

    #[test]
    fn alpha_ramp() {
        let s = ema(8.0, 128_000, 0.9, 0.9999, 128_000);
        assert_eq!(s.alpha_at(128_000), 8.0);
        assert_eq!(s.alpha_at(64_000), 4.0);
        assert_eq!(s.alpha_at(16_000), 1.0);
        assert_eq!(s.alpha_at(500_000), 8.0);
    }

    #[test]
    fn beta3_endpoints() {
        let s = ema(8.0, 10, 0.9, 0.9999, 10_000);
        assert_eq!(s.beta3_at(10_000).unwrap(), 0.9999);
        let early = ema(8.0, 10, 0.9, 0.9999, 1_000_000_000).beta3_at(1).unwrap();
        assert!((early - 0.9).abs() < 1e-6);
    }

    #[test]
    fn beta3_rejects_out_of_range() {
        assert!(ema(1.0, 1, 1.0, 0.99, 10).beta3_at(1).is_err());
        assert!(ema(1.0, 1, 0.9, 0.0, 10).beta3_at(1).is_err());
    }
}
