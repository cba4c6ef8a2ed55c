//! The experiment configuration document.
//!
//! Configs are TOML files. Top-level keys hold run-wide settings; the
//! `[data]`, `[partition]`, `[federation]` and `[model]` sections hold the
//! component settings. Every key is optional and unknown keys are rejected.
//!
//! ```toml
//! format_version = 1
//! seed = 7
//! metrics = ["top1", "uar"]
//!
//! [partition]
//! alpha = 0.1
//! q = 0.5
//!
//! [federation]
//! algorithm = "partialfl"
//! clients = 20
//! tau = 0.1
//! ```

use std::path::Path;

use partialfl_core::data::{PartitionSpec, SyntheticSpec};
use partialfl_core::federation::{EvalPlan, FederationConfig};
use partialfl_core::metrics::Metric;
use partialfl_core::models::ModelDims;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const SECTIONS: [&str; 4] = ["data", "partition", "federation", "model"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub seed: u64,
    pub metrics: Vec<Metric>,
    /// Evaluate every this many rounds (0: only after the last round).
    pub eval_interval: usize,
    /// Report path stem; the command line `--out` overrides it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub data: SyntheticSpec,
    pub partition: PartitionSpec,
    pub federation: FederationConfig,
    pub model: ModelDims,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            seed: 0,
            metrics: vec![Metric::TopK(1), Metric::Uar],
            eval_interval: 1,
            output: None,
            data: SyntheticSpec::default(),
            partition: PartitionSpec::default(),
            federation: FederationConfig::default(),
            model: ModelDims::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_inner(text, None)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_inner(&text, Some(path))
    }

    fn parse_inner(text: &str, path: Option<&Path>) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            let key = e
                .span()
                .map(|s| key_at(text, s.start))
                .filter(|k| !k.is_empty())
                .unwrap_or_else(|| "<document>".into());
            Error::Config {
                path: path.map(Path::to_path_buf),
                key,
                line,
                message: e.message().trim().to_string(),
            }
        })?;
        cfg.validate().map_err(|e| match e {
            Error::Config { key, message, .. } => Error::Config {
                path: path.map(Path::to_path_buf),
                line: locate_key(text, &key),
                key,
                message,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    /// Checks every component invariant. Errors name the offending key as
    /// `section.key` (or a bare top-level key).
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, message: String| Error::Config {
            path: None,
            key: key.to_string(),
            line: None,
            message,
        };
        if self.format_version != FORMAT_VERSION {
            return Err(err(
                "format_version",
                format!(
                    "unsupported version {} (expected {FORMAT_VERSION})",
                    self.format_version
                ),
            ));
        }
        if self.metrics.is_empty() {
            return Err(err("metrics", "at least one metric is required".into()));
        }
        for m in &self.metrics {
            if let Metric::TopK(k) = m {
                if *k > self.data.num_classes {
                    return Err(err("metrics", format!("{m} needs at least {k} classes")));
                }
            }
        }
        let section = |name: &str, r: partialfl_core::Result<()>| {
            r.map_err(|e| match e {
                partialfl_core::Error::InvalidConfig { key, reason } => err(&format!("{name}.{key}"), reason),
                other => err(name, other.to_string()),
            })
        };
        section("data", self.data.validate())?;
        section("partition", self.partition.validate())?;
        section("federation", self.federation.validate())?;
        section("model", self.model.validate())?;
        if self.federation.clients > self.data.num_samples {
            return Err(err(
                "federation.clients",
                format!(
                    "{} clients for {} samples",
                    self.federation.clients, self.data.num_samples
                ),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn eval_plan(&self) -> EvalPlan {
        EvalPlan {
            metrics: self.metrics.clone(),
            interval: self.eval_interval,
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// The key on the line containing `offset`, qualified by its section
/// (`section.key`) when it sits inside one.
fn key_at(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next().unwrap_or("");
    let Some((key, _)) = line.split_once('=') else {
        return String::new();
    };
    let section = before[..start]
        .lines()
        .rev()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .find_map(|l| l.strip_prefix('[').and_then(|l| l.strip_suffix(']')));
    match section {
        Some(section) => format!("{}.{}", section.trim(), key.trim()),
        None => key.trim().to_string(),
    }
}

/// 1-based line of `section.key` (or top-level `key`) in a TOML document.
pub(crate) fn locate_key(text: &str, dotted: &str) -> Option<usize> {
    let (want_section, want_key) = match dotted.split_once('.') {
        Some((s, k)) => (s, k),
        None => ("", dotted),
    };
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            let k = k.trim();
            // also accept dotted keys at the top level, e.g. `federation.tau = 0.1`
            if (section == want_section && k == want_key) || (section.is_empty() && k == dotted) {
                return Some(i + 1);
            }
        }
    }
    None
}
