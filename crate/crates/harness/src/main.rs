use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mrdino_harness::commands::{
    cmd_build_basis, cmd_compare, cmd_evaluate, cmd_gen_data, cmd_solve_ouu, cmd_train, Backend,
};
use mrdino_harness::{ExperimentConfig, Split};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "mrdino",
    version,
    about = "Derivative-informed surrogates for risk-averse PDE control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON); defaults to the named preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration used when --config is absent: desk or large.
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for sample-parallel stages (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build the KLE and POD bases into a directory.
    BuildBasis {
        #[command(flatten)]
        common: Common,
        /// POD snapshot count.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Generate a dataset of reduced states and reduced control Jacobians.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long, overrides_with = "no_jacobian")]
        jacobian: bool,
        #[arg(long)]
        no_jacobian: bool,
    },
    /// Train a surrogate (MR-DINO when the Jacobian weight is positive).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Train on the first N records.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        jacobian_weight: Option<f64>,
    },
    /// Solve the SAA risk-averse control problem.
    SolveOuu {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "pde")]
        model: Option<PathBuf>,
        #[arg(long)]
        basis: Option<PathBuf>,
        /// Use the PDE instead of a surrogate.
        #[arg(long)]
        pde: bool,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Score a result with the PDE on the evaluation sample set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        /// Evaluation seed (default: the configured one).
        #[arg(long)]
        eval_seed: Option<u64>,
    },
    /// Print a configuration as JSON, a starting point for custom files.
    ShowConfig {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "desk")]
        preset: String,
    },
    /// Tabulate relative optimal cost errors against a reference result.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reference: PathBuf,
        results: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => ExperimentConfig::preset(&self.preset),
        }
    }

    fn init_threads(&self) -> Result<()> {
        if let Some(t) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .context("configuring the thread pool")?;
        }
        Ok(())
    }
}

fn emit<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::init();
    let cli = Cli::parse();
    match cli.command {
        Command::BuildBasis { common, n } => {
            common.init_threads()?;
            emit(&cmd_build_basis(&common.config()?, common.seed, n, &common.out)?)
        }
        Command::GenData {
            common,
            basis,
            n,
            split,
            jacobian,
            no_jacobian,
        } => {
            common.init_threads()?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let with_jacobian = jacobian || !no_jacobian;
            let s = cmd_gen_data(
                &common.config()?,
                &basis,
                common.seed,
                split,
                n,
                with_jacobian,
                &common.out,
            )?;
            log::info!("state {:.3}s, jacobian {:.3}s", s.state_seconds, s.jacobian_seconds);
            emit(&s)
        }
        Command::Train {
            common,
            basis,
            data,
            n,
            jacobian_weight,
        } => {
            common.init_threads()?;
            let s = cmd_train(
                &common.config()?,
                &basis,
                &data,
                common.seed,
                n,
                jacobian_weight,
                &common.out,
            )?;
            emit(&s)
        }
        Command::SolveOuu {
            common,
            model,
            basis,
            pde,
            n,
            beta,
            eps,
        } => {
            common.init_threads()?;
            let backend = match (pde, &model, &basis) {
                (true, _, _) => Backend::Pde,
                (false, Some(model), Some(basis_dir)) => Backend::Surrogate { model, basis_dir },
                _ => bail!("pass --pde, or --model together with --basis"),
            };
            let r = cmd_solve_ouu(&common.config()?, backend, common.seed, n, beta, eps, &common.out)?;
            emit(&r)
        }
        Command::Evaluate {
            common,
            result,
            n,
            eval_seed,
        } => {
            common.init_threads()?;
            emit(&cmd_evaluate(&common.config()?, &result, eval_seed, n, &common.out)?)
        }
        Command::ShowConfig { config, preset } => {
            let c = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::preset(&preset)?,
            };
            emit(&c)
        }
        Command::Compare {
            common,
            reference,
            results,
        } => {
            let cmp = cmd_compare(&reference, &results, &common.out)?;
            print!("{}", cmp.summary_csv());
            Ok(())
        }
    }
}
