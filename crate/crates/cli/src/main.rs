//! Command-line front end: synthetic dataset generation, training,
//! assimilation, report evaluation, and container inspection.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use romda::dataio::Container;
use romda::harness::{
    emit_report, run_assimilate, run_evaluate, run_train, write_desk_dataset, DeskOptions,
    ExperimentConfig, TrainConfig,
};
use romda::synthtwin::DriverScenario;
use romda::{Error, Result};

#[derive(Parser)]
#[command(name = "romda", version, about = "Reduced-order density assimilation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic desk-scale dataset with ready-to-run configs.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Window length in hours at hourly snapshot cadence.
        #[arg(long, default_value_t = 72)]
        hours: usize,
        /// Driver scenario: quiet, ramp, or storm.
        #[arg(long, default_value = "storm")]
        scenario: String,
        /// Relative half-width of the multiplicative measurement noise.
        #[arg(long, default_value_t = 0.05)]
        rel_err: f64,
        /// Fraction of samples flipped negative to exercise preprocessing.
        #[arg(long, default_value_t = 0.0)]
        negative_fraction: f64,
        /// Filter step in seconds.
        #[arg(long, default_value_t = 60)]
        t2: i64,
        /// Relative perturbation between the trained and the measured system.
        #[arg(long, default_value_t = 0.10)]
        perturb: f64,
        /// Ridge strength for the emitted training config.
        #[arg(long, default_value_t = 2e4)]
        alpha: f64,
        /// Process-noise inflation for the emitted experiment config.
        #[arg(long, default_value_t = 50.0)]
        q_scale: f64,
    },
    /// Fit the latent basis and dynamics model from a training config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the assimilation experiment described by a config and write its
    /// report.
    Assimilate {
        #[arg(long)]
        config: PathBuf,
        /// Override the report directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the preprocessing/noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the spin-up window in seconds.
        #[arg(long)]
        spin_up_s: Option<f64>,
        /// Override the process-noise scale.
        #[arg(long)]
        q_scale: Option<f64>,
        /// Enable innovation gating at this many sigmas.
        #[arg(long)]
        gate_sigma: Option<f64>,
    },
    /// Recompute MAPE from the residual files in a report directory.
    Evaluate {
        #[arg(long)]
        dir: PathBuf,
    },
    /// List the arrays and attributes of an RDX1 container.
    Inspect {
        #[arg(long)]
        file: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            seed,
            hours,
            scenario,
            rel_err,
            negative_fraction,
            t2,
            perturb,
            alpha,
            q_scale,
        } => {
            if hours < 1 {
                return Err(Error::Config("window must cover at least one hour".into()));
            }
            if t2 <= 0 || 3600 % t2 != 0 {
                return Err(Error::Config(format!(
                    "filter step {t2} s must be positive and divide the hourly cadence"
                )));
            }
            if !(0.0..1.0).contains(&negative_fraction) {
                return Err(Error::Config(format!(
                    "negative fraction {negative_fraction} must lie in [0, 1)"
                )));
            }
            if !(rel_err >= 0.0) || rel_err >= 1.0 {
                return Err(Error::Config(format!(
                    "relative error {rel_err} must lie in [0, 1)"
                )));
            }
            if !(alpha > 0.0) || !(q_scale > 0.0) {
                return Err(Error::Config(
                    "alpha and q_scale must be positive".into(),
                ));
            }
            let opts = DeskOptions {
                seed,
                hours,
                scenario: DriverScenario::parse(&scenario)?,
                rel_err,
                negative_fraction,
                t2_s: t2,
                perturb_frac: perturb,
                alpha,
                q_scale,
            };
            let dataset = write_desk_dataset(&out, &opts)?;
            println!("wrote {}", dataset.snapshots.display());
            println!("wrote {}", dataset.drivers.display());
            for track in &dataset.tracks {
                println!("wrote {}", track.display());
            }
            println!("wrote {}", dataset.train_config.display());
            println!("wrote {}", dataset.experiment_config.display());
            Ok(())
        }
        Command::Train { config } => {
            let cfg = TrainConfig::load(&config)?;
            run_train(&cfg)?;
            println!("wrote {}", cfg.out_basis.display());
            println!("wrote {}", cfg.out_model.display());
            Ok(())
        }
        Command::Assimilate {
            config,
            out_dir,
            seed,
            spin_up_s,
            q_scale,
            gate_sigma,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = out_dir {
                cfg.out_dir = dir;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = spin_up_s {
                cfg.spin_up_s = s;
            }
            if let Some(s) = q_scale {
                cfg.q_scale = s;
            }
            if let Some(g) = gate_sigma {
                cfg.gate_sigma = Some(g);
            }
            let output = run_assimilate(&cfg)?;
            emit_report(&output, &cfg.out_dir)?;
            for track in &output.report.tracks {
                println!(
                    "{} ({}): assimilated {} %, open loop {} % over {} points",
                    track.satellite_id,
                    track.role,
                    track
                        .mape_assim
                        .map_or("n/a".to_string(), |v| format!("{v:.3}")),
                    track
                        .mape_open
                        .map_or("n/a".to_string(), |v| format!("{v:.3}")),
                    track.n_eval
                );
            }
            println!("report in {}", cfg.out_dir.display());
            Ok(())
        }
        Command::Evaluate { dir } => {
            for (track, mape_assim, mape_open, n) in run_evaluate(&dir)? {
                println!("{track}: assimilated {mape_assim:.3} %, open loop {mape_open:.3} % over {n} points");
            }
            Ok(())
        }
        Command::Inspect { file } => {
            print!("{}", Container::read(&file)?.describe());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
