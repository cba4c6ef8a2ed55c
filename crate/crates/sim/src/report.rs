//! Report documents and their JSON-lines / CSV renderings.
//!
//! JSON lines: line 1 is a header with the config echo, version, final
//! metrics and wall-clock time; each further line is one round. CSV: one row
//! per round with a fixed column order. Both use LF line endings and `.` as
//! decimal separator. Floats are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use partialfl_core::federation::RoundReport;
use partialfl_core::metrics::{Metric, MetricValue};
use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config::{ExperimentConfig, FORMAT_VERSION};
use crate::{Error, Result};

pub const VERSION: &str = concat!("partialfl ", env!("CARGO_PKG_VERSION"));

pub const CSV_FIXED_COLUMNS: [&str; 10] = [
    "round",
    "algorithm",
    "alpha",
    "q",
    "tau",
    "beta",
    "seed",
    "loss_glob",
    "loss_loc",
    "loss_server",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    JsonLines,
    Csv,
    Both,
}

/// Metric values keyed by metric name, kept in evaluation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricMap(pub Vec<MetricValue>);

impl MetricMap {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.0.iter().find(|m| m.metric == metric).map(|m| m.value)
    }
}

impl Serialize for MetricMap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for m in &self.0 {
            map.serialize_entry(&m.metric.to_string(), &m.value)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for MetricMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Ordered;
        impl<'de> Visitor<'de> for Ordered {
            type Value = MetricMap;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from metric name to value")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<MetricMap, A::Error> {
                let mut out = Vec::new();
                while let Some((metric, value)) = access.next_entry::<Metric, f64>()? {
                    out.push(MetricValue { metric, value });
                }
                Ok(MetricMap(out))
            }
        }
        d.deserialize_map(Ordered)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub participants: Option<Vec<usize>>,
    pub loss_glob: Option<f64>,
    pub loss_loc: Option<f64>,
    pub loss_server: Option<f64>,
    pub metrics: Option<MetricMap>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl From<RoundReport> for RoundRecord {
    fn from(r: RoundReport) -> Self {
        Self {
            round: r.round,
            participants: r.participants,
            loss_glob: r.loss_glob,
            loss_loc: r.loss_loc,
            loss_server: r.loss_server,
            metrics: r.metrics.map(MetricMap),
            warnings: r.warnings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    version: String,
    config: ExperimentConfig,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    grid: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    best: Option<bool>,
    final_metrics: MetricMap,
    wall_clock_secs: f64,
}

/// Everything one run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportDocument {
    pub config: ExperimentConfig,
    pub version: String,
    /// Overrides that produced this run, for sweeps.
    pub grid: BTreeMap<String, String>,
    /// Set on every run of a sweep; `true` for the best by first metric.
    pub best: Option<bool>,
    pub rounds: Vec<RoundRecord>,
    pub final_metrics: MetricMap,
    pub wall_clock_secs: f64,
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl ReportDocument {
    pub fn headline(&self) -> Option<f64> {
        self.final_metrics.0.first().map(|m| m.value)
    }

    pub fn to_json_lines(&self) -> Result<String> {
        let header = Header {
            format_version: FORMAT_VERSION,
            version: self.version.clone(),
            config: self.config.clone(),
            grid: self.grid.clone(),
            best: self.best,
            final_metrics: self.final_metrics.clone(),
            wall_clock_secs: self.wall_clock_secs,
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for r in &self.rounds {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_json_lines(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Header = serde_json::from_str(lines.next().unwrap_or(""))?;
        let rounds = lines
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<RoundRecord>, _>>()?;
        Ok(Self {
            config: header.config,
            version: header.version,
            grid: header.grid,
            best: header.best,
            rounds,
            final_metrics: header.final_metrics,
            wall_clock_secs: header.wall_clock_secs,
        })
    }

    pub fn csv_header(&self) -> Vec<String> {
        CSV_FIXED_COLUMNS
            .iter()
            .map(|c| c.to_string())
            .chain(self.config.metrics.iter().map(Metric::to_string))
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(self.csv_header())?;
        let c = &self.config;
        for r in &self.rounds {
            let mut row = vec![
                r.round.to_string(),
                c.federation.algorithm.name().to_string(),
                fmt_f64(c.partition.concentration),
                fmt_f64(c.partition.shareable_fraction),
                fmt_f64(c.federation.temperature),
                fmt_f64(c.federation.beta),
                c.seed.to_string(),
                fmt_opt(r.loss_glob),
                fmt_opt(r.loss_loc),
                fmt_opt(r.loss_server),
            ];
            for &m in &c.metrics {
                row.push(fmt_opt(r.metrics.as_ref().and_then(|mm| mm.get(m))));
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Writes `<stem>.jsonl` and/or `<stem>.csv`; returns the paths written.
    pub fn write(&self, stem: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
        if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut written = Vec::new();
        let mut emit = |ext: &str, body: String| -> Result<()> {
            let path = with_extension(stem, ext);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        if matches!(format, ReportFormat::JsonLines | ReportFormat::Both) {
            emit("jsonl", self.to_json_lines()?)?;
        }
        if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
            emit("csv", self.to_csv()?)?;
        }
        Ok(written)
    }
}

fn with_extension(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Marks the report with the highest first final metric (first wins ties).
pub fn mark_best(reports: &mut [ReportDocument]) {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in reports.iter().enumerate() {
        if let Some(v) = r.headline() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    for (i, r) in reports.iter_mut().enumerate() {
        r.best = Some(best.is_some_and(|(b, _)| b == i));
    }
}
