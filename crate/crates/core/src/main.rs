use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lora_advsec::attacks::{AttackKind, AttackSpec, Scope, DEFAULT_TARGETS};
use lora_advsec::pipeline::{self, ExperimentConfig, MANIFEST_FILE};
use lora_advsec::{Error, Result};

#[derive(Parser)]
#[command(
    name = "lora-advsec",
    version,
    about = "LoRa signal classifiers under FGSM attack and adversarial training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate legitimate records (or convert raw captures).
    GenData {
        #[command(flatten)]
        common: Common,
        /// Raw interleaved float32 I/Q file, 32 pairs per record; first for Device 1, second for Device 2.
        #[arg(long = "from-raw-f32")]
        from_raw_f32: Vec<PathBuf>,
    },
    /// Spoof rogue records from the legitimate ones.
    Spoof {
        #[command(flatten)]
        common: Common,
    },
    /// Split the dataset and train the classifiers.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep all configured attacks, or append a single point with --psr.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_negative_numbers = true)]
        psr: Option<f64>,
        #[arg(long)]
        scope: Option<Scope>,
        #[arg(long, default_value = "untargeted")]
        kind: AttackKind,
        /// Target labels for Task 1 and Task 2, e.g. 0,0.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<usize>>,
        /// Loss weights, e.g. 0.5,0.5.
        #[arg(long, value_delimiter = ',')]
        gamma: Option<Vec<f64>>,
    },
    /// Adversarially retrain every model and write the defense table.
    Defend {
        #[command(flatten)]
        common: Common,
    },
    /// Regenerate every report from saved artifacts.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Full pipeline.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Print the configuration JSON schema.
    Schema,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pair<T: Copy>(values: Option<Vec<T>>, what: &str) -> Result<Option<[T; 2]>> {
    match values {
        None => Ok(None),
        Some(v) => <[T; 2]>::try_from(v).map(Some).map_err(|_| {
            Error::Config(format!("--{what} takes exactly two comma-separated values"))
        }),
    }
}

fn report(written: &[String], cfg: &ExperimentConfig) {
    for rel in written {
        println!("{}", cfg.out_dir.join(rel).display());
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Schema => {
            print!("{}", pipeline::CONFIG_SCHEMA);
            Ok(())
        }
        Command::GenData {
            common,
            from_raw_f32,
        } => {
            let cfg = load_config(&common)?;
            let written = if from_raw_f32.is_empty() {
                pipeline::stage_gen_data(&cfg)?
            } else {
                pipeline::stage_gen_data_from_raw(&cfg, &from_raw_f32)?
            };
            report(&written, &cfg);
            Ok(())
        }
        Command::Spoof { common } => {
            let cfg = load_config(&common)?;
            report(&pipeline::stage_spoof(&cfg)?, &cfg);
            Ok(())
        }
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            report(&pipeline::stage_train(&cfg)?, &cfg);
            Ok(())
        }
        Command::Attack {
            common,
            psr,
            scope,
            kind,
            targets,
            gamma,
        } => {
            let cfg = load_config(&common)?;
            let written = match psr {
                None => {
                    if scope.is_some() || targets.is_some() || gamma.is_some() {
                        return Err(Error::Config(
                            "--scope, --targets and --gamma need --psr".into(),
                        ));
                    }
                    pipeline::stage_attack(&cfg)?
                }
                Some(psr_db) => {
                    let scope = scope.ok_or_else(|| Error::Config("--psr needs --scope".into()))?;
                    let mut spec = match kind {
                        AttackKind::Untargeted => AttackSpec::untargeted(scope, psr_db),
                        AttackKind::Targeted => AttackSpec::targeted(
                            scope,
                            psr_db,
                            pair(targets.clone(), "targets")?.unwrap_or(DEFAULT_TARGETS),
                        ),
                    };
                    if kind == AttackKind::Untargeted && targets.is_some() {
                        return Err(Error::Config("--targets needs --kind targeted".into()));
                    }
                    if let Some(g) = pair(gamma, "gamma")? {
                        spec.gamma = g;
                    }
                    pipeline::attack_point(&cfg, &spec)?
                }
            };
            report(&written, &cfg);
            Ok(())
        }
        Command::Defend { common } => {
            let cfg = load_config(&common)?;
            report(&pipeline::stage_defend(&cfg)?, &cfg);
            Ok(())
        }
        Command::Report { common } => {
            let cfg = load_config(&common)?;
            report(&pipeline::regenerate_reports(&cfg)?, &cfg);
            Ok(())
        }
        Command::Run { common } => {
            let cfg = load_config(&common)?;
            pipeline::run_pipeline(&cfg)?;
            println!("{}", cfg.out_dir.join(MANIFEST_FILE).display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
