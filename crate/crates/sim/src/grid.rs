//! `--grid key=v1,v2,...` sweeps: cartesian products of config overrides.

use std::str::FromStr;

use toml::{Table, Value};

use crate::config::{ExperimentConfig, SECTIONS};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridAxis {
    /// Key as written on the command line (`tau` or `federation.tau`).
    pub key: String,
    pub values: Vec<String>,
}

impl FromStr for GridAxis {
    type Err = Error;

    fn from_str(arg: &str) -> Result<Self> {
        let bad = |why: &str| Error::Grid(arg.to_string(), why.to_string());
        let (key, values) = arg.split_once('=').ok_or_else(|| bad("expected key=v1,v2,..."))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(bad("empty key"));
        }
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(bad("empty value"));
        }
        Ok(Self {
            key: key.to_string(),
            values,
        })
    }
}

/// One point of a sweep: the overrides applied and the resulting config.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub assignments: Vec<(String, String)>,
    pub config: ExperimentConfig,
}

/// Finds `(section, key)` for a possibly unqualified key.
fn resolve(table: &Table, key: &str) -> Option<(Option<String>, String)> {
    if let Some((section, k)) = key.split_once('.') {
        let found = table.get(section)?.as_table()?.contains_key(k);
        return found.then(|| (Some(section.to_string()), k.to_string()));
    }
    let mut hits = Vec::new();
    if table.get(key).is_some_and(|v| !v.is_table()) {
        hits.push((None, key.to_string()));
    }
    for section in SECTIONS {
        if table
            .get(section)
            .and_then(Value::as_table)
            .is_some_and(|t| t.contains_key(key))
        {
            hits.push((Some(section.to_string()), key.to_string()));
        }
    }
    (hits.len() == 1).then(|| hits.remove(0))
}

fn parse_value(raw: &str, current: Option<&Value>) -> Value {
    let parsed = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    match (parsed, current) {
        (Value::Integer(i), Some(Value::Float(_))) => Value::Float(i as f64),
        (v, _) => v,
    }
}

fn with_overrides(base: &Table, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut table = base.clone();
    for (key, raw) in overrides {
        let arg = format!("{key}={raw}");
        let (section, k) =
            resolve(&table, key).ok_or_else(|| Error::Grid(arg.clone(), "unknown or ambiguous key".into()))?;
        let target = match &section {
            Some(s) => table
                .get_mut(s)
                .and_then(Value::as_table_mut)
                .expect("resolved section exists"),
            None => &mut table,
        };
        let value = parse_value(raw, target.get(&k));
        target.insert(k, value);
    }
    let cfg: ExperimentConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Grid(format_overrides(overrides), e.message().trim().to_string()))?;
    cfg.validate()
        .map_err(|e| Error::Grid(format_overrides(overrides), e.to_string()))?;
    Ok(cfg)
}

fn format_overrides(overrides: &[(String, String)]) -> String {
    overrides
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// All combinations of the axes' values, first axis varying slowest. With no
/// axes the result is the base config alone.
pub fn expand(base: &ExperimentConfig, axes: &[GridAxis]) -> Result<Vec<GridPoint>> {
    let table = Table::try_from(base).expect("config always serializes");
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push((axis.key.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }
    combos
        .into_iter()
        .map(|assignments| {
            let config = with_overrides(&table, &assignments)?;
            Ok(GridPoint { assignments, config })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use partialfl_core::federation::Algorithm;

    #[test]
    fn parses_axis() {
        let axis: GridAxis = "tau=0.05, 0.1,0.2".parse().unwrap();
        assert_eq!(axis.key, "tau");
        assert_eq!(axis.values, ["0.05", "0.1", "0.2"]);
        assert!("tau".parse::<GridAxis>().is_err());
        assert!("tau=0.1,".parse::<GridAxis>().is_err());
    }

    #[test]
    fn temperature_sweep() {
        let points = expand(&ExperimentConfig::default(), &["tau=0.05,0.1,0.2".parse().unwrap()]).unwrap();
        let taus: Vec<f64> = points.iter().map(|p| p.config.federation.temperature).collect();
        assert_eq!(taus, [0.05, 0.1, 0.2]);
    }

    #[test]
    fn cartesian_product_and_types() {
        let axes: Vec<GridAxis> = ["algorithm=fedavg,partialfl", "partition.alpha=1,0.1", "seed=3"]
            .iter()
            .map(|a| a.parse().unwrap())
            .collect();
        let points = expand(&ExperimentConfig::default(), &axes).unwrap();
        assert_eq!(points.len(), 4);
        assert_eq!(points[0].config.federation.algorithm, Algorithm::FedAvg);
        assert_eq!(points[0].config.partition.concentration, 1.0);
        assert_eq!(points[1].config.partition.concentration, 0.1);
        assert_eq!(points[2].config.federation.algorithm, Algorithm::PartialFl);
        assert!(points.iter().all(|p| p.config.seed == 3));
        assert_eq!(
            points[3].assignments[1],
            ("partition.alpha".to_string(), "0.1".to_string())
        );
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let base = ExperimentConfig::default();
        for arg in ["nope=1", "tau=-1", "algorithm=sgd", "rounds=1.5"] {
            assert!(expand(&base, &[arg.parse().unwrap()]).is_err(), "{arg}");
        }
    }
}
