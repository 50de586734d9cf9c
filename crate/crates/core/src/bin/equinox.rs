//! `equinox` command-line driver.
//!
//! Exit codes: 0 ok, 1 runtime error, 2 invalid configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use equinox_core::config::RunConfig;
use equinox_core::engine::EngineOptions;
use equinox_core::experiment::{
    alphas_or_default, grid_or_default, run_ablation, run_seeds, summary_table, sweep_alpha, write_csv_rows,
    write_json, write_run, aggregate, Aggregate, Summary,
};
use equinox_core::gpu_model::build_profile;
use equinox_core::{Error, PerfParams};

#[derive(Parser)]
#[command(name = "equinox", version, about = "Multi-tenant LLM serving scheduler simulator")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seeds to run, comma separated (overrides the config's `seeds`).
    #[arg(long, global = true, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Simulations to run concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Write the per-request event log as NDJSON.
    #[arg(long, global = true)]
    log: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured policy and predictor for every seed.
    Run,
    /// Run a policy x predictor grid on shared traces.
    Ablation,
    /// Sweep alpha (beta = 1 - alpha) for Equinox.
    SweepAlpha {
        /// Alphas to sweep, comma separated (overrides the config's `alphas`).
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
    },
    /// Build the solo-run GPU profile and write it as CSV.
    Calibrate,
    /// Print the summary table of a previous run, ablation or sweep.
    Summary {
        /// Summary JSON; defaults to the newest known summary in the output directory.
        path: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("invalid config field `--config`: a configuration file is required".into()))?;
    let mut cfg = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e @ Error::Io { .. }) => return Err(Failure::Config(format!("invalid config field `--config`: {e}"))),
        Err(e) => return Err(e.into()),
    };
    if !cli.seed.is_empty() {
        cfg.seeds = cli.seed.clone();
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    s.split('_').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("_")
}

/// Flat CSV view of an aggregate row.
#[derive(Serialize)]
struct CsvRow<'a> {
    label: &'a str,
    policy: &'a str,
    predictor: &'a str,
    max_diff: f64,
    avg_diff: f64,
    var_diff: f64,
    jain_hf: f64,
    jain_ttft_p90: f64,
    throughput: f64,
    mean_util: f64,
    seeds: String,
    trace_hashes: String,
}

impl<'a> From<&'a Aggregate> for CsvRow<'a> {
    fn from(a: &'a Aggregate) -> Self {
        CsvRow {
            label: &a.label,
            policy: &a.policy,
            predictor: &a.predictor,
            max_diff: a.max_diff,
            avg_diff: a.avg_diff,
            var_diff: a.var_diff,
            jain_hf: a.jain_hf,
            jain_ttft_p90: a.jain_ttft_p90,
            throughput: a.throughput,
            mean_util: a.mean_util,
            seeds: a.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
            trace_hashes: a.trace_hashes.join(";"),
        }
    }
}

fn cmd_run(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let runs = run_seeds(&cfg, cli.jobs)?;
    let label = format!("{} + {}", cfg.policy.name(), cfg.predictor.label());
    for r in &runs {
        write_run(&cfg.output_dir.join(format!("seed_{}", r.seed)), &cfg, &label, r, cli.log)?;
    }
    let summary = Summary { command: "run".into(), config: cfg.clone(), rows: vec![aggregate(&label, &runs)], sweep: None };
    write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    print!("{}", summary_table(&summary.rows));
    Ok(())
}

fn cmd_ablation(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let grid = grid_or_default(&cfg);
    let ab = run_ablation(&cfg, &grid, cli.jobs)?;
    for (cell, runs) in grid.iter().zip(&ab.runs) {
        let dir = cfg.output_dir.join(slug(&cell.label));
        for r in runs {
            write_run(&dir.join(format!("seed_{}", r.seed)), &cfg, &cell.label, r, cli.log)?;
        }
    }
    let csv_rows: Vec<CsvRow> = ab.rows.iter().map(CsvRow::from).collect();
    write_csv_rows(&cfg.output_dir.join("ablation.csv"), &csv_rows)?;
    let summary = Summary { command: "ablation".into(), config: cfg.clone(), rows: ab.rows, sweep: None };
    write_json(&cfg.output_dir.join("ablation.json"), &summary)?;
    print!("{}", summary_table(&summary.rows));
    Ok(())
}

fn cmd_sweep(cli: &Cli, alphas: &[f64]) -> CliResult<()> {
    let mut cfg = load_config(cli)?;
    if !alphas.is_empty() {
        cfg.alphas = Some(alphas.to_vec());
        cfg.validate()?;
    }
    let alphas = alphas_or_default(&cfg);
    let sweep = sweep_alpha(&cfg, &alphas, cli.jobs)?;
    #[derive(Serialize)]
    struct Row {
        alpha: f64,
        jain_ttft_p90_norm: f64,
        throughput_norm: f64,
    }
    let rows: Vec<Row> = sweep
        .rows
        .iter()
        .map(|r| Row { alpha: r.alpha, jain_ttft_p90_norm: r.jain_ttft_p90_norm, throughput_norm: r.throughput_norm })
        .collect();
    write_csv_rows(&cfg.output_dir.join("sweep_alpha.csv"), &rows)?;
    let summary = Summary { command: "sweep-alpha".into(), config: cfg.clone(), rows: sweep.cells, sweep: Some(sweep.rows) };
    write_json(&cfg.output_dir.join("sweep_alpha.json"), &summary)?;
    println!("alpha  jain_ttft_p90_norm  throughput_norm");
    for r in &rows {
        println!("{:<6} {:>18.4} {:>16.4}", r.alpha, r.jain_ttft_p90_norm, r.throughput_norm);
    }
    Ok(())
}

fn cmd_calibrate(cli: &Cli) -> CliResult<()> {
    let (perf, engine, out_dir) = if cli.config.is_some() {
        let cfg = load_config(cli)?;
        (cfg.perf, cfg.engine, cfg.output_dir)
    } else {
        (PerfParams::default(), EngineOptions::default(), cli.out.clone().unwrap_or_else(|| PathBuf::from("out")))
    };
    let profile = build_profile(&perf, &engine.profile_bounds, engine.reference_input_tokens)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let path = out_dir.join("profile.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    profile.write_csv(file)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_summary(cli: &Cli, path: Option<&Path>) -> CliResult<()> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            ["ablation.json", "summary.json", "sweep_alpha.json"]
                .iter()
                .map(|f| dir.join(f))
                .filter(|p| p.exists())
                .max_by_key(|p| std::fs::metadata(p).and_then(|m| m.modified()).ok())
                .ok_or_else(|| Failure::Runtime(format!("no summary found in {}", dir.display())))?
        }
    };
    let summary = Summary::load(&path)?;
    print!("{}", summary_table(&summary.rows));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run => cmd_run(&cli),
        Command::Ablation => cmd_ablation(&cli),
        Command::SweepAlpha { alphas } => cmd_sweep(&cli, alphas),
        Command::Calibrate => cmd_calibrate(&cli),
        Command::Summary { path } => cmd_summary(&cli, path.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
