use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cspapi_cli::commands::{cmd_design, cmd_evaluate, cmd_pipeline, cmd_reconstruct, cmd_simulate, Layout};
use cspapi_cli::{CliResult, ExperimentConfig, Preset};

/// Compressed photoacoustic tomography experiments with structured detector selection.
#[derive(Parser)]
#[command(name = "cspapi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search measurement matrices and write them with their SIN profile.
    Design(Common),
    /// Render the phantom and write pressure, means and compressed data.
    Simulate(Common),
    /// Two-step reconstruction for both matrices and the full-array baseline.
    Reconstruct(Common),
    /// Merge run reports into one table.
    Evaluate {
        /// report.json files; defaults to the one in --out.
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// design, simulate, reconstruct and evaluate in sequence.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Relative noise level of the compressed data.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    m0: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_iter: Option<usize>,
    /// Reuse one group design on every diagonal block.
    #[arg(long)]
    share_design: bool,
}

impl Common {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.structure.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        if let Some(preset) = self.preset {
            cfg.phantom.preset = Some(preset);
            cfg.phantom.discs.clear();
        }
        if let Some(noise) = self.noise {
            cfg.noise = noise;
        }
        if let Some(m0) = self.m0 {
            cfg.structure.m0 = m0;
        }
        if let Some(k) = self.k {
            cfg.structure.k = k;
        }
        if let Some(n) = self.n_iter {
            cfg.structure.n_iter = n;
        }
        cfg.structure.share_design |= self.share_design;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Design(c) => cmd_design(&c.resolve()?).map(drop),
        Command::Simulate(c) => cmd_simulate(&c.resolve()?).map(drop),
        Command::Reconstruct(c) => cmd_reconstruct(&c.resolve()?).map(drop),
        Command::Evaluate { reports, out } => {
            let reports = if reports.is_empty() {
                vec![Layout::new(&out).report()]
            } else {
                reports
            };
            cmd_evaluate(&reports, &out).map(drop)
        }
        Command::Pipeline(c) => cmd_pipeline(&c.resolve()?).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors share the generic failure status so 2 stays "design infeasible"
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
