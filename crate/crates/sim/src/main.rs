use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use partialfl_sim::config::ExperimentConfig;
use partialfl_sim::dataset::{read_dataset, write_dataset};
use partialfl_sim::grid::{expand, GridAxis};
use partialfl_sim::report::ReportFormat;
use partialfl_sim::runner::{prepare_data, run_grid, RayonExecutor};
use partialfl_sim::{Error, Result};
use serde_json::json;

/// Simulate partially federated learning over synthetic multi-modal data.
#[derive(Debug, Parser)]
#[command(name = "partialfl", version)]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Sweep a key over values, e.g. `--grid tau=0.05,0.1,0.2`. Repeatable;
    /// the sweep is the cartesian product.
    #[arg(long, value_name = "KEY=V1,V2,...")]
    grid: Vec<GridAxis>,
    /// Report path without extension (default: the config's `output`, else
    /// `report`). Sweeps append `-<index>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::JsonLines)]
    format: ReportFormat,
    /// Threads for client training (0: all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Also write the generated dataset (train and test) to this CSV file.
    #[arg(long, value_name = "PATH")]
    export_dataset: Option<PathBuf>,
    /// Train on a dataset CSV instead of generating one.
    #[arg(long, value_name = "PATH", conflicts_with = "export_dataset")]
    dataset: Option<PathBuf>,
}

fn report_error(err: &Error) {
    let value = match err {
        Error::Config {
            path,
            key,
            line,
            message,
        } => json!({
            "status": "error",
            "kind": "config",
            "path": path,
            "key": key,
            "line": line,
            "message": message,
        }),
        other => json!({
            "status": "error",
            "kind": match other {
                Error::Grid(..) => "grid",
                Error::Io { .. } | Error::Csv(_) | Error::Json(_) | Error::Dataset { .. } => "io",
                _ => "simulation",
            },
            "message": other.to_string(),
        }),
    };
    eprintln!("{value}");
}

fn stem_for(base: &Path, index: usize, sweep: bool) -> PathBuf {
    if !sweep {
        return base.to_path_buf();
    }
    let mut s = base.as_os_str().to_owned();
    s.push(format!("-{index}"));
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<()> {
    let mut base = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        base.seed = seed;
    }
    let points = expand(&base, &cli.grid)?;
    let imported = match &cli.dataset {
        Some(path) => Some(read_dataset(path, base.data.num_classes)?),
        None => None,
    };
    if let Some(path) = &cli.export_dataset {
        let data = prepare_data(&base, None)?;
        write_dataset(path, &data.train, &data.test)?;
        println!("wrote dataset {}", path.display());
    }
    let out = cli
        .out
        .clone()
        .or_else(|| base.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("report"));
    let executor = RayonExecutor::new(cli.threads);
    let sweep = points.len() > 1;
    let total = points.len();
    let reports = run_grid(&points, &executor, imported.as_ref(), |i, doc| {
        let overrides: Vec<String> = doc.grid.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let metrics: Vec<String> = doc
            .final_metrics
            .0
            .iter()
            .map(|m| format!("{}={:.4}", m.metric, m.value))
            .collect();
        println!(
            "run {}/{} {} [{}] {:.1}s",
            i + 1,
            total,
            overrides.join(" "),
            metrics.join(" "),
            doc.wall_clock_secs
        );
    })?;
    for (i, doc) in reports.iter().enumerate() {
        for path in doc.write(&stem_for(&out, i, sweep), cli.format)? {
            let mark = if doc.best == Some(true) { " (best)" } else { "" };
            println!("wrote {}{mark}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            report_error(&err);
            ExitCode::FAILURE
        }
    }
}
