use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pfkit::harness::{self, load_config, ExperimentConfig, Preset};
use pfkit::numerics::{ParamStore, Rng};
use pfkit::pf::{run_filter, Proposal};
use pfkit::proposals::{Frame, LearnedProposal, Parametrization, Registry};
use pfkit::ssm::{build_scenario, simulate_truth, ModelSpec, Scenario, Trajectory};
use pfkit::training::train;
use pfkit::{Error, Result};

#[derive(Parser)]
#[command(name = "pfkit", version, about = "Particle filters with designed and learned proposals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory and write it as CSV.
    Simulate(ModelArgs),
    /// Train a learnable proposal on the measurements of a trajectory file.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        /// Trajectory CSV; only its measurement columns are read.
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long, default_value = "mlp")]
        proposal: String,
    },
    /// Run one particle filter and write per-step diagnostics.
    Filter {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long, default_value = "bootstrap")]
        proposal: String,
        /// Checkpoint of a trained proposal (required for learned families).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        particles: usize,
    },
    /// Run a full experiment grid.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild aggregate and plot files from a results directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Experiment config supplying scenario, first N and first T.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Seed of the system and of every random draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    preset: Option<Preset>,
    /// Output file (simulate, filter) or directory (train).
    #[arg(long)]
    out: PathBuf,
}

struct Setup {
    config: ExperimentConfig,
    model: ModelSpec,
    horizon: usize,
}

impl ModelArgs {
    fn setup(&self) -> Result<Setup> {
        let mut config = match (&self.config, self.scenario) {
            (Some(path), _) => load_config(path)?,
            (None, Some(s)) => ExperimentConfig::new(s),
            (None, None) => return Err(Error::Config("either --config or --scenario is required".into())),
        };
        if let Some(s) = self.scenario {
            config.scenario = s;
        }
        if let Some(n) = self.dim {
            config.dims = Some(vec![n]);
            config.measurement_dim = None;
        }
        if let Some(t) = self.horizon {
            config.horizons = Some(vec![t]);
        }
        if let Some(p) = self.preset {
            config.apply_preset(p);
        }
        config.seed = self.seed;
        config.validate()?;
        let n = config.dims()[0];
        let model = build_scenario(config.scenario, n, config.snr_db, self.seed)?;
        Ok(Setup { horizon: config.horizons()[0], config, model })
    }
}

fn read_measurements(path: &Path, model: &ModelSpec) -> Result<Vec<Vec<f64>>> {
    let traj = Trajectory::load(path)?;
    if traj.measurements.first().is_some_and(|y| y.len() != model.m) {
        return Err(Error::Dimension(format!(
            "{} has measurements of length {} but the model has M={}",
            path.display(),
            traj.measurements[0].len(),
            model.m
        )));
    }
    Ok(traj.measurements)
}

fn run(cli: Cli) -> Result<()> {
    let registry = Registry::default();
    match cli.command {
        Command::Simulate(args) => {
            let s = args.setup()?;
            let traj = simulate_truth(&s.model, s.horizon, &mut Rng::derive(args.seed, &[1]))?;
            traj.save(&args.out)?;
            log::info!("wrote {} samples to {}", traj.horizon() + 1, args.out.display());
        }
        Command::Train { model: args, measurements, proposal } => {
            let s = args.setup()?;
            let ys = read_measurements(&measurements, &s.model)?;
            let arch_cfg = s.config.arch();
            let arch = registry.architecture(&proposal, &arch_cfg)?;
            let mut lp =
                LearnedProposal::initialized(arch, &arch_cfg, &s.model, ys.len() - 1, &mut Rng::derive(args.seed, &[4]))?;
            let mut tc = s.config.train.clone();
            tc.seed = args.seed;
            let report = train(&s.model, &ys, &mut lp, &tc)?;
            fs::create_dir_all(&args.out)?;
            lp.params.save(args.out.join("checkpoint.bin"))?;
            report.write_log(fs::File::create(args.out.join("train_log.csv"))?)?;
            log::info!(
                "trained {proposal} for {} epochs in {:.1}s, checksum {:016x}",
                tc.epochs,
                report.wall_clock.as_secs_f64(),
                report.checksum
            );
        }
        Command::Filter { model: args, measurements, proposal, checkpoint, particles } => {
            let s = args.setup()?;
            let ys = read_measurements(&measurements, &s.model)?;
            let p: Box<dyn Proposal> = if registry.is_learned(&proposal)? {
                let path = checkpoint
                    .ok_or_else(|| Error::Config(format!("proposal `{proposal}` needs --checkpoint")))?;
                let params = ParamStore::load(path)?;
                let mode: Parametrization = params.meta("parametrization").unwrap_or("anchored").parse()?;
                let arch = registry.architecture(&proposal, &s.config.arch())?;
                Box::new(LearnedProposal::new(arch, params, Frame::new(&s.model, mode)))
            } else {
                registry.designed(&proposal, &s.model)?
            };
            let out = run_filter(&s.model, p.as_ref(), &ys, particles, s.config.threshold_ratio, &Rng::derive(args.seed, &[3]))?;
            out.write_diagnostics(fs::File::create(&args.out)?)?;
            log::info!("log-likelihood estimate {:.6e}", out.log_likelihood);
        }
        Command::Experiment { config, seed, preset, out } => {
            let mut cfg = load_config(config)?;
            if let Some(p) = preset {
                cfg.apply_preset(p);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            let summary = harness::run_experiment(&cfg)?;
            let failed = summary.rows.iter().filter(|r| r.failed).count();
            log::info!("{} result rows ({failed} failed) in {}", summary.rows.len(), cfg.out.display());
        }
        Command::Report { out } => {
            let aggregates = harness::report(&out)?;
            log::info!("{} aggregate rows in {}", aggregates.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
