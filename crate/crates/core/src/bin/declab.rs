use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use declab::scenario::{
    fit_groups, read_csv, run, summarize, write_outputs, Aggregate, ScenarioConfig, PRESETS,
};
use declab::{DeclabError, Result};

#[derive(Parser)]
#[command(
    name = "declab",
    version,
    about = "Decoupling laboratory: scenario sweeps and exponent fits"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    Median,
    Max,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a preset or a JSON config; writes results.csv and summary.json.
    Run {
        #[arg(long)]
        preset: Option<String>,
        /// Full scenario config; must name the same scenario as --preset if both are given.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Log-log fit of a results CSV, one line of JSON per group.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "N")]
        x: String,
        #[arg(long, default_value = "ratio")]
        y: String,
        /// Comma-separated grouping columns.
        #[arg(long, default_value = "scenario,fit_group,p")]
        group: String,
        #[arg(long, value_enum, default_value = "median")]
        aggregate: AggArg,
    },
    /// Print the JSON config behind a preset.
    Config { preset: String },
    /// List preset names.
    Presets,
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("DECLAB_THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&k| k > 0)
            .map(Some)
            .ok_or_else(|| DeclabError::InvalidParameter(format!("DECLAB_THREADS = {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn load_config(preset: Option<String>, config: Option<PathBuf>) -> Result<ScenarioConfig> {
    match (preset, config) {
        (None, None) => Err(DeclabError::InvalidParameter(
            "give --preset or --config".into(),
        )),
        (Some(p), None) => ScenarioConfig::preset(&p),
        (p, Some(path)) => {
            let cfg = ScenarioConfig::from_json(&fs::read_to_string(&path)?)?;
            if let Some(p) = p {
                if p != cfg.scenario {
                    return Err(DeclabError::InvalidParameter(format!(
                        "--preset {p} but config scenario is {}",
                        cfg.scenario
                    )));
                }
            }
            Ok(cfg)
        }
    }
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run {
            preset,
            config,
            out,
        } => {
            let mut cfg = load_config(preset, config)?;
            if let Some(k) = threads_from_env()? {
                cfg.threads = Some(k);
            }
            let dir = out
                .or_else(|| cfg.out.clone().map(PathBuf::from))
                .ok_or_else(|| {
                    DeclabError::InvalidParameter("no output directory (--out)".into())
                })?;
            let rows = run(&cfg)?;
            let summary = summarize(&cfg, &rows)?;
            write_outputs(&dir, &rows, &summary)?;
            eprintln!("{}: {} rows -> {}", cfg.scenario, rows.len(), dir.display());
        }
        Cmd::Fit {
            input,
            x,
            y,
            group,
            aggregate,
        } => {
            let rows = read_csv(fs::File::open(&input)?)?;
            let keys: Vec<&str> = group
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .collect();
            let agg = match aggregate {
                AggArg::Median => Aggregate::Median,
                AggArg::Max => Aggregate::Max,
            };
            for g in fit_groups(&rows, &x, &y, &keys, agg)? {
                println!(
                    "{}",
                    serde_json::to_string(&g).map_err(|e| DeclabError::Io(e.to_string()))?
                );
            }
        }
        Cmd::Config { preset } => println!("{}", ScenarioConfig::preset(&preset)?.to_json()),
        Cmd::Presets => PRESETS.iter().for_each(|p| println!("{p}")),
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("declab: {e}");
            ExitCode::FAILURE
        }
    }
}
