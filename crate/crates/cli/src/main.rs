use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slipnet::harness::{self, HarnessError, Split, Suite, SuiteConfig};
use slipnet::SlipState;

#[derive(Parser)]
#[command(name = "slipnet", version, about = "Synthetic slip-detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured trial grids.
    Simulate(Common),
    /// Split the kinematic trials and write the dataset manifest.
    Build(Common),
    /// Train the network on the dataset.
    Train(Common),
    /// Score the trained network on the test split.
    Eval(Common),
    /// Run slip detection over the gravity and disturbance trials.
    Detect(Common),
}

#[derive(Args)]
struct Common {
    /// Suite configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the full-size trial grids.
    #[arg(long)]
    paper_scale: bool,
    /// Overrides the training epoch count.
    #[arg(long)]
    epochs: Option<usize>,
}

impl Common {
    fn suite(&self) -> Result<SuiteConfig, HarnessError> {
        let mut cfg = SuiteConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.paper_scale {
            cfg.paper_scale();
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    harness::init_threads()?;
    match cli.command {
        Command::Simulate(c) => {
            let r = harness::cmd_simulate(&c.suite()?)?;
            println!(
                "simulated {} kinematic, {} gravity, {} disturbance trials",
                r.count(Suite::Kinematic),
                r.count(Suite::Gravity),
                r.count(Suite::Disturbance)
            );
            println!("trial manifest digest {}", r.manifest_digest);
        }
        Command::Build(c) => {
            let r = harness::cmd_build_dataset(&c.suite()?)?;
            let b = r.manifest.balance();
            println!("split,no_slip,incipient,gross");
            for (s, row) in Split::ALL.iter().zip(b) {
                println!("{},{},{},{}", s.name(), row[0], row[1], row[2]);
            }
            println!("dataset manifest digest {}", r.manifest_digest);
        }
        Command::Train(c) => {
            let r = harness::cmd_train(&c.suite()?)?;
            match (r.log.best_epoch, r.log.records.last()) {
                (Some(best), Some(_)) => {
                    let rec = &r.log.records[best - 1];
                    println!(
                        "best epoch {best} of {}: validation accuracy {:.2}%",
                        r.log.records.len(),
                        100.0 * rec.val_acc
                    );
                }
                _ => println!("no epochs run; saved the initial weights"),
            }
            println!("weights digest {}", r.weights_digest);
        }
        Command::Eval(c) => {
            let ev = harness::cmd_eval(&c.suite()?)?;
            println!("test accuracy {:.2}%", 100.0 * ev.accuracy());
            for class in [SlipState::NoSlip, SlipState::Incipient, SlipState::Gross] {
                let pct =
                    |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}%", 100.0 * v));
                println!(
                    "{}: precision {} recall {}",
                    class.name(),
                    pct(ev.precision(class)),
                    pct(ev.recall(class))
                );
            }
        }
        Command::Detect(c) => {
            let s = harness::cmd_detect(&c.suite()?)?;
            print!("{}", s.summary_csv());
            match s.min_lead_ms() {
                Some(v) => println!("minimum lead time {v:.1} ms"),
                None => println!("minimum lead time: none"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
