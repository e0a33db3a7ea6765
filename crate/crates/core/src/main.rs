use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use nqi_core::milp::export_mps;
use nqi_core::scenario::{build_point, parse_point, prepare, run_sweep, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "nqi",
    version,
    about = "5QI-to-NQI mapping and NTN slice routing experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full sweep and write the CSV (resumes an interrupted run).
    Run {
        config: PathBuf,
        /// Run a single traffic seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Per-point solver time limit in seconds.
        #[arg(long)]
        time_limit: Option<f64>,
        /// CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Dump the topology as JSON.
    Topo {
        config: PathBuf,
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the model of one sweep point as MPS.
    ExportMps {
        config: PathBuf,
        /// Point as cond=<id>,flows=<n>,w=<w_f>.
        #[arg(long)]
        point: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without running anything.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    Ok(ScenarioConfig::load(path)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            time_limit,
            out,
            workers,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.run.seeds = vec![s];
            }
            if let Some(t) = time_limit {
                cfg.solver.time_limit_s = Some(t);
            }
            if let Some(o) = out {
                cfg.output.csv = o;
                cfg.output.record = None;
            }
            if let Some(w) = workers {
                cfg.run.workers = w;
            }
            cfg.validate()?;
            let record = run_sweep(&cfg, |_| {})?;
            let failed = record
                .points
                .iter()
                .filter(|r| r.status != "optimal")
                .count();
            eprintln!(
                "{} rows written to {}",
                record.points.len(),
                record.csv.display()
            );
            if failed > 0 {
                eprintln!(
                    "{failed} point(s) did not reach proven optimality; see the status column"
                );
            }
        }
        Command::Topo { config, out } => {
            let prepared = prepare(&load(&config)?)?;
            match out {
                Some(path) => {
                    let file = File::create(&path)
                        .with_context(|| format!("cannot create {}", path.display()))?;
                    prepared.topology.write_json(BufWriter::new(file))?;
                }
                None => {
                    let stdout = io::stdout();
                    let mut lock = stdout.lock();
                    prepared.topology.write_json(&mut lock)?;
                    writeln!(lock)?;
                }
            }
        }
        Command::ExportMps {
            config,
            point,
            seed,
            out,
        } => {
            let cfg = load(&config)?;
            let prepared = prepare(&cfg)?;
            let p = parse_point(&prepared, &point, seed.unwrap_or(cfg.run.seeds[0]))?;
            let model = build_point(&prepared, &p)?;
            let path = out.unwrap_or_else(|| {
                PathBuf::from(format!(
                    "{}-cond{}-flows{}-w{}-seed{}.mps",
                    cfg.name,
                    point_label(&prepared, &p),
                    p.flows_per_ue,
                    p.w_f,
                    p.seed
                ))
            });
            export_mps(&model.milp, &path)?;
            eprintln!(
                "wrote {} ({} columns, {} binaries, {} rows)",
                path.display(),
                model.milp.model.num_vars(),
                model.milp.model.num_binaries(),
                model.milp.model.num_rows()
            );
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let prepared = prepare(&cfg)?;
            println!(
                "{}: ok ({} points, config hash {})",
                cfg.name,
                prepared.points().len(),
                prepared.hash
            );
        }
    }
    Ok(())
}

fn point_label(
    prepared: &nqi_core::scenario::Prepared,
    p: &nqi_core::scenario::SweepPoint,
) -> String {
    prepared.condition_label(p).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
