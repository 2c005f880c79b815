//! Built-in preset registry.

use crate::error::{Error, Result};
use crate::kv;
use crate::optim::{Hyper, OptimizerKind};

pub const REGISTRY: &str = include_str!("presets.txt");

pub const TAGS: [&str; 2] = ["124m_small", "124m_large"];

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub optimizer: OptimizerKind,
    pub tag: String,
    /// Run-config assignments in file order.
    pub entries: Vec<(String, String)>,
}

impl Preset {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Optimizer defaults overlaid with this preset's `optimizer.*` keys.
    pub fn hyper(&self) -> Result<Hyper> {
        let mut h = Hyper::defaults(self.optimizer);
        for (k, v) in &self.entries {
            if let Some(field) = k.strip_prefix("optimizer.") {
                h.set(field, v)?;
            }
        }
        Ok(h)
    }
}

/// Parses a registry text.
pub fn parse_registry(text: &str) -> Result<Vec<Preset>> {
    let mut out = Vec::new();
    for section in kv::parse_sections(text)? {
        if section.header.is_empty() {
            if let Some(e) = section.entries.first() {
                return Err(Error::Parse {
                    line: e.line,
                    message: "preset entries must follow an [optimizer.tag] header".into(),
                });
            }
            continue;
        }
        let (name, tag) = section.header.split_once('.').ok_or_else(|| Error::Parse {
            line: section.line,
            message: format!("preset header '{}' is not optimizer.tag", section.header),
        })?;
        let optimizer = name.parse::<OptimizerKind>().map_err(|e| Error::Parse {
            line: section.line,
            message: e.to_string(),
        })?;
        out.push(Preset {
            optimizer,
            tag: tag.to_string(),
            entries: section.entries.into_iter().map(|e| (e.key, e.value)).collect(),
        });
    }
    Ok(out)
}

pub fn all() -> Vec<Preset> {
    parse_registry(REGISTRY).expect("built-in preset registry parses")
}

pub fn find(optimizer: OptimizerKind, tag: &str) -> Result<Preset> {
    all()
        .into_iter()
        .find(|p| p.optimizer == optimizer && p.tag == tag)
        .ok_or_else(|| {
            Error::config(format!(
                "no preset '{tag}' for {optimizer}; tags: {}",
                TAGS.join(", ")
            ))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_optimizer_has_both_tags() {
        let presets = all();
        for kind in OptimizerKind::ALL {
            for tag in TAGS {
                let p = find(kind, tag).unwrap();
                let h = p.hyper().unwrap();
                h.validate(kind).unwrap();
            }
        }
        assert_eq!(presets.len(), OptimizerKind::ALL.len() * TAGS.len());
    }

    #[test]
    fn spot_checks() {
        let muon = find(OptimizerKind::Muon, "124m_large").unwrap().hyper().unwrap();
        assert_eq!((muon.ns_a, muon.ns_b, muon.ns_c), (3.4445, -4.7750, 2.0315));
        assert_eq!((muon.lr, muon.adam_lr, muon.momentum), (0.01, 0.001, 0.95));
        let soap = find(OptimizerKind::Soap, "124m_small").unwrap();
        assert_eq!(soap.get("optimizer.precond_freq"), Some("10"));
        assert_eq!(soap.get("optimizer.max_precond_dim"), Some("10000"));
        let sophia = find(OptimizerKind::Sophia, "124m_large").unwrap().hyper().unwrap();
        assert_eq!(sophia.rho, 0.04);
        let mars = find(OptimizerKind::MarsAdamW, "124m_small").unwrap().hyper().unwrap();
        assert_eq!((mars.eta, mars.beta1, mars.beta2), (0.025, 0.95, 0.99));
        let adopt = find(OptimizerKind::Adopt, "124m_large").unwrap().hyper().unwrap();
        assert_eq!(adopt.eps, 1e-6);
        let sf = find(OptimizerKind::SfAdamW, "124m_small").unwrap().hyper().unwrap();
        assert_eq!(sf.beta2, 0.9999);
        let lion = find(OptimizerKind::Lion, "124m_large").unwrap();
        assert_eq!(lion.get("schedule.kind"), Some("linear"));
    }

    #[test]
    fn malformed_registry() {
        assert!(matches!(
            parse_registry("[adamw]\nx = 1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_registry("x = 1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
