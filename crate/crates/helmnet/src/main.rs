use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use helmnet::bench::{self, BenchRow};
use helmnet::checkpoint::{load_network, save_checkpoint};
use helmnet::config::{ExperimentConfig, SlownessSource};
use helmnet::datagen::generate_samples;
use helmnet::training::{retrain, train};
use helmnet::{Dataset, Network, PrecondKind};
use helmnet_core::slw;
use helmnet_nn::{gradient_check, Mode, Tensor4, UNetConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "helmnet", version, about = "U-Net preconditioners for the Helmholtz equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set grid.nx=64`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        Ok(match &self.config {
            Some(p) => ExperimentConfig::load(p, &self.overrides)
                .with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::from_toml_with("", &self.overrides)?,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured slowness models as SLW1 files.
    GenModels {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a training set.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a network on the configured dataset and save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Loss history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Fine-tune a checkpoint on one slowness model.
    Retrain {
        #[command(flatten)]
        common: Common,
        /// Index of the model in the configured source.
        #[arg(long, default_value_t = 0)]
        model: usize,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve with one preconditioner and print the convergence summary.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        model: usize,
        #[arg(long, default_value = "V")]
        precond: PrecondKind,
        /// Per-iteration residual CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run every configured preconditioner and write reports.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        model: usize,
        /// Report directory.
        #[arg(long, default_value = "bench")]
        out: PathBuf,
    },
    /// Check U-Net gradients against finite differences.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Grid side of the test input.
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
    },
}

fn network_for(cfg: &ExperimentConfig, kinds: &[PrecondKind]) -> Result<Option<Network>> {
    if !kinds.iter().any(|k| k.uses_network()) {
        return Ok(None);
    }
    let path = &cfg.network.checkpoint;
    let net = load_network(path, &cfg.unet_config()).with_context(|| format!("loading {}", path.display()))?;
    Ok(Some(net))
}

fn print_rows(rows: &[BenchRow]) {
    print!("{}", bench::summary_csv(rows));
    for r in rows {
        eprintln!(
            "{}: {} of {} columns converged, setup {:.3}s, solve {:.3}s",
            r.precond,
            r.report.converged.iter().filter(|&&c| c).count(),
            r.report.columns(),
            r.setup_seconds,
            r.solve_seconds
        );
    }
}

fn exit_for(rows: &[BenchRow]) -> ExitCode {
    if rows.iter().all(BenchRow::all_converged) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn gen_models(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.slowness.source == SlownessSource::Files {
        bail!("slowness.source = \"files\" reads models; choose a generating source");
    }
    let dir = &cfg.slowness.models_dir;
    fs::create_dir_all(dir)?;
    for m in 0..cfg.slowness.count {
        let k2 = cfg.slowness_model(m)?;
        slw::save(dir.join(format!("model_{m:05}.slw")), k2.values())?;
    }
    eprintln!("wrote {} models to {}", cfg.slowness.count, dir.display());
    Ok(())
}

fn gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let problems = cfg
        .slowness_models()?
        .into_iter()
        .map(|k| cfg.problem(k))
        .collect::<helmnet::Result<Vec<_>>>()?;
    let samples = generate_samples(&problems, &cfg.vcycle_config(), cfg.generation_plan(), cfg.training.seed)?;
    let ds = Dataset::new(problems, samples, cfg.training.seed)?;
    ds.save(&cfg.training.dataset)?;
    eprintln!("wrote {} pairs to {}", ds.len(), cfg.training.dataset.display());
    Ok(())
}

fn run_train(cfg: &ExperimentConfig, history: Option<&Path>) -> Result<()> {
    let ds = Dataset::load(&cfg.training.dataset)
        .with_context(|| format!("loading {}", cfg.training.dataset.display()))?;
    let mut net = Network::new(cfg.network.kind, cfg.unet_config(), cfg.network.seed)?;
    let report = train(&mut net, &ds.problems, &ds.samples, &cfg.train_config())?;
    save_checkpoint(&net, &cfg.network.checkpoint)?;
    if let Some(p) = history {
        report.write_csv(fs::File::create(p)?)?;
    }
    if let Some(reason) = &report.aborted {
        bail!("{reason}; saved the last good weights");
    }
    Ok(())
}

fn grad_check(cfg: &ExperimentConfig, size: usize, batch: usize) -> Result<bool> {
    let ucfg: UNetConfig = cfg.unet_config();
    let net = helmnet_nn::UNet::new(ucfg.clone(), cfg.network.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.network.seed);
    let x = Tensor4::from_fn([batch, ucfg.in_channels, size, size], |_| rng.random_range(-1.0..1.0));
    let t = Tensor4::from_fn([batch, ucfg.out_channels, size, size], |_| rng.random_range(-1.0..1.0));
    let mut inputs = vec![x, t];
    inputs.extend(net.weights().trainable().map(|p| p.value.clone()));
    let rep = gradient_check(
        &inputs,
        |tape, v| {
            let bound = net.weights().bind_vars(v[2..].to_vec());
            let y = net.forward_bound(tape, &bound, v[0], None, Mode::Train)?;
            tape.mse(y, v[1])
        },
        1e-3,
        cfg.network.seed,
    )?;
    let worst = rep.per_input.iter().copied().fold(0.0, f64::max);
    println!("loss,{:e}", rep.loss);
    println!("joint_rel_error,{:e}", rep.max_rel_error);
    println!("worst_tensor_rel_error,{worst:e}");
    Ok(rep.max_rel_error < 5e-3)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenModels { common } => gen_models(&common.load()?)?,
        Command::GenData { common } => gen_data(&common.load()?)?,
        Command::Train { common, history } => run_train(&common.load()?, history.as_deref())?,
        Command::Retrain { common, model, out } => {
            let cfg = common.load()?;
            let mut net = load_network(&cfg.network.checkpoint, &cfg.unet_config())?;
            let problem = cfg.problem(cfg.slowness_model(model)?)?;
            let report = retrain(
                &mut net,
                &problem,
                &cfg.vcycle_config(),
                &cfg.retrain_config(),
                &cfg.train_config(),
                cfg.training.seed,
            )?;
            save_checkpoint(&net, &out)?;
            if let Some(reason) = report.aborted {
                bail!("{reason}; saved the last good weights");
            }
        }
        Command::Solve {
            common,
            model,
            precond,
            csv,
        } => {
            let cfg = common.load()?;
            let net = network_for(&cfg, &[precond])?;
            let problem = cfg.problem(cfg.slowness_model(model)?)?;
            let (nx, ny) = problem.grid().shape();
            let rhs = bench::random_rhs(nx, ny, cfg.krylov.rhs, cfg.krylov.seed);
            let row = bench::solve_with(precond, &problem, net.as_ref(), &cfg, &rhs)?;
            if let Some(p) = csv {
                fs::write(p, bench::residual_csv(&row))?;
            }
            let rows = [row];
            print_rows(&rows);
            return Ok(exit_for(&rows));
        }
        Command::Bench { common, model, out } => {
            let cfg = common.load()?;
            let net = network_for(&cfg, &cfg.krylov.preconditioners)?;
            let problem = cfg.problem(cfg.slowness_model(model)?)?;
            let rows = bench::run_benchmark(&cfg, &problem, net.as_ref())?;
            bench::write_reports(&rows, &out)?;
            print_rows(&rows);
            return Ok(exit_for(&rows));
        }
        Command::GradCheck { common, size, batch } => {
            if !grad_check(&common.load()?, size, batch)? {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
