//! Argument parsing and command dispatch for the binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_ablate_gating, cmd_gen_data, cmd_sweep, cmd_train, Overrides};
use crate::config::ExperimentConfig;
use crate::gradcheck::{cmd_grad_check, GradCheckConfig, Status};
use crate::{configure_pool, CliResult};

/// Command-line interface of the `ssm-lab` binary.
#[derive(Parser)]
#[command(name = "ssm-lab", version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("SSM_LAB_GIT_DESCRIBE"), ")"), about = "Experiments with a gated selective SSM classifier")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test datasets.
    GenData(Common),
    /// Train `trials` independent runs.
    Train(Common),
    /// Train every trial at every value of the configured sweep.
    Sweep(Common),
    /// Paired gated and ungated runs on shared data.
    AblateGating(Common),
    /// Compare analytic gradients with central finite differences.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Replace the gate gradient by a sign-flipped assembly.
        #[arg(long, hide = true)]
        corrupt_beta: bool,
    },
}

fn load(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    Overrides { seed: common.seed, out: common.out.clone() }.apply(&mut cfg);
    Ok(cfg)
}

/// Executes a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    configure_pool()?;
    match cli.command {
        Command::GenData(c) => {
            let cfg = load(&c)?;
            let (tr, te) = cmd_gen_data(&cfg)?;
            println!("train: {tr}");
            println!("test: {te}");
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Train(c) => {
            let cfg = load(&c)?;
            let recs = cmd_train(&cfg)?;
            for r in &recs {
                println!(
                    "trial {} seed {}: {} after {} iterations, test loss {:e}, test accuracy {}",
                    r.trial, r.seed, r.stop_reason, r.iterations, r.final_test_loss, r.final_test_acc
                );
            }
        }
        Command::Sweep(c) => {
            let cfg = load(&c)?;
            let s = cmd_sweep(&cfg)?;
            for p in &s.points {
                let m = p.mean_epochs.map(|m| format!("{m:.1}")).unwrap_or_else(|| "-".into());
                println!("{} = {}: mean epochs {m}, {}/{} converged", s.parameter, p.value, p.successes, p.trials);
            }
            match s.spearman {
                Some(r) => println!("spearman(value, mean epochs) = {r:.4}"),
                None => println!("spearman(value, mean epochs) undefined"),
            }
        }
        Command::AblateGating(c) => {
            let cfg = load(&c)?;
            let pairs = cmd_ablate_gating(&cfg)?;
            let loss = pairs.iter().filter(|p| p.gated_loss_no_worse()).count();
            let ep = pairs.iter().filter(|p| p.gated_epochs_no_worse()).count();
            println!("gated final test loss <= ungated in {loss}/{} pairs", pairs.len());
            println!("gated epochs <= ungated in {ep}/{} pairs", pairs.len());
        }
        Command::GradCheck { common, corrupt_beta } => {
            let mut cfg = GradCheckConfig::load(&common.config)?;
            if let Some(s) = common.seed {
                cfg.master_seed = s;
            }
            if let Some(o) = common.out {
                cfg.output_dir = o;
            }
            let r = cmd_grad_check(&cfg, corrupt_beta)?;
            println!(
                "{} accepted, {} rejected; max relative error {:e}",
                r.count(Status::Accepted),
                r.count(Status::Rejected),
                r.max_error()
            );
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| crate::CliError::Config(e.to_string()))?;
    run(cli)
}
