use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use etrmpc_cli::{compare, compare_table, load_config, out_dir, run, validate, Overrides};
use etrmpc_core::Method;

#[derive(Parser)]
#[command(name = "etrmpc", version, about = "Event-triggered robust MPC experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the tightened setup and print its assumption margins.
    Validate(Common),
    /// Simulate the configured method and write trace files.
    Run(Common),
    /// Simulate several methods under one disturbance realization.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', default_value = "CP1,CP2,LP1,LP2,periodic")]
        methods: Vec<Method>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    steps: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, method: self.method, steps: self.steps, out_dir: self.out_dir.clone() }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Validate(c) => {
            let cfg = load_config(&c.config, &c.overrides())?;
            let (_, report) = validate(&cfg)?;
            print!("{report}");
        }
        Cmd::Run(c) => {
            let cfg = load_config(&c.config, &c.overrides())?;
            let dir = out_dir(&cfg);
            let s = run(&cfg, &dir)?;
            let st = &s.statistics;
            println!(
                "{}: {} steps, {} solves, mean inter-event {:.2}, decay violations {}",
                s.method, s.steps, st.solves, st.mean_inter_event, st.decay_violations
            );
            println!("wrote {}", dir.display());
        }
        Cmd::Compare { common, methods } => {
            let cfg = load_config(&common.config, &common.overrides())?;
            let dir = out_dir(&cfg);
            let rows = compare(&cfg, &methods, &dir)?;
            print!("{}", compare_table(&rows));
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}
