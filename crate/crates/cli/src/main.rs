use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sscafl::experiment::{
    load_datasets, presets, run_experiment, run_tradeoff_sweep, write_metrics_csv, write_sweep_csv,
    DataSource, RunConfig, SweepAxis,
};
use sscafl::protocol::TransportKind;
use sscafl::schedules::validate_pair;
use sscafl::Error;

#[derive(Parser)]
#[command(name = "sscafl", version, about = "Federated SSCA experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write the per-round metrics CSV.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Final cost and squared norm for each lambda or ubound value.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated lambda values.
        #[arg(
            long,
            value_delimiter = ',',
            conflicts_with = "ubound",
            required_unless_present = "ubound"
        )]
        lambda: Vec<f64>,
        /// Comma-separated ubound values.
        #[arg(long, value_delimiter = ',')]
        ubound: Vec<f64>,
    },
    /// Print the stepsize validity report of a configuration.
    Check {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print a bundled configuration.
    Preset { name: String },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// in-process | tcp
    #[arg(long)]
    transport: Option<String>,
    /// N,P,L,separation,seed
    #[arg(long, conflicts_with_all = ["mnist_images", "mnist_labels"])]
    synthetic: Option<String>,
    #[arg(long, requires = "mnist_labels")]
    mnist_images: Option<PathBuf>,
    #[arg(long, requires = "mnist_images")]
    mnist_labels: Option<PathBuf>,
}

fn read_config(path: &Path) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::parse(&text)
}

fn parse_synthetic(arg: &str) -> Result<DataSource, Error> {
    let parts: Vec<&str> = arg.split(',').map(str::trim).collect();
    let bad = || {
        Error::Config(format!(
            "--synthetic expects N,P,L,separation,seed, got {arg:?}"
        ))
    };
    if parts.len() != 5 {
        return Err(bad());
    }
    Ok(DataSource::Synthetic {
        samples: parts[0].parse().map_err(|_| bad())?,
        inputs: parts[1].parse().map_err(|_| bad())?,
        classes: parts[2].parse().map_err(|_| bad())?,
        separation: parts[3].parse().map_err(|_| bad())?,
        seed: parts[4].parse().map_err(|_| bad())?,
    })
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = read_config(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.round.seed = seed;
        }
        if let Some(t) = &self.transport {
            cfg.transport = t.parse::<TransportKind>()?;
        }
        if let Some(s) = &self.synthetic {
            cfg.data = parse_synthetic(s)?;
        }
        if let (Some(images), Some(labels)) = (&self.mnist_images, &self.mnist_labels) {
            cfg.data = DataSource::Idx {
                train_images: images.clone(),
                train_labels: labels.clone(),
                test_images: None,
                test_labels: None,
            };
        }
        cfg.validate_static()?;
        warn_schedules(&cfg);
        Ok(cfg)
    }

    fn writer(&self) -> Result<Box<dyn Write>, Error> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }
}

fn warn_schedules(cfg: &RunConfig) {
    if cfg.round.algorithm.is_ssca() {
        let report = validate_pair(&cfg.round.rho, &cfg.round.gamma);
        if !report.all_ok() {
            eprintln!("warning: rho/gamma schedules fail the validity check: {report:?}");
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { common } => {
            let cfg = common.resolve()?;
            let data = load_datasets(&cfg.data)?;
            let result = run_experiment(&cfg, &data)?;
            let mut out = common.writer()?;
            write_metrics_csv(&cfg, &result, &mut out)?;
            out.flush()?;
        }
        Command::Sweep {
            common,
            lambda,
            ubound,
        } => {
            let cfg = common.resolve()?;
            let (axis, values) = if lambda.is_empty() {
                (SweepAxis::Ubound, ubound)
            } else {
                (SweepAxis::Lambda, lambda)
            };
            let data = load_datasets(&cfg.data)?;
            let points = run_tradeoff_sweep(&cfg, &data, axis, &values)?;
            let mut out = common.writer()?;
            write_sweep_csv(&cfg, axis, &points, &mut out)?;
            out.flush()?;
        }
        Command::Check { config } => {
            let cfg = match config {
                Some(p) => read_config(&p)?,
                None => RunConfig::default(),
            };
            let r = validate_pair(&cfg.round.rho, &cfg.round.gamma);
            println!("rho = {}", RunConfig::describe_schedule(&cfg.round.rho));
            println!("gamma = {}", RunConfig::describe_schedule(&cfg.round.gamma));
            println!("rho_ok = {}", r.rho_ok);
            println!("gamma_square_summable = {}", r.gamma_square_summable);
            println!("gamma_over_rho_vanishes = {}", r.gamma_over_rho_vanishes);
            println!("all_ok = {}", r.all_ok());
            if cfg.schedule_strict && !r.all_ok() {
                return Err(Error::Config(
                    "schedule.strict is set and the check failed".into(),
                ));
            }
        }
        Command::Preset { name } => {
            print!("{}", presets::preset(&name)?.to_text());
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
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
