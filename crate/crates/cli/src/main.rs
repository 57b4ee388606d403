mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gagnar::{Error, IdBase, Result};

use crate::config::{Order, RunConfig, Tau0};

/// Fit grouped network autoregressions with a graph-assisted CRP prior.
#[derive(Parser, Debug)]
#[command(name = "gagnar", version)]
struct Cli {
    /// Run configuration file (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate datasets from a scenario file.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replaces the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replaces the scenario's replicate count.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Run one chain at a fixed h and summarize it.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        h: Option<f64>,
        /// Summarize an existing draw file instead of sampling.
        #[arg(long)]
        from_draws: Option<PathBuf>,
    },
    /// Run one chain per h and keep the LPML maximizer.
    SelectH {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Comma-separated grid, e.g. 0,0.5,1.
        #[arg(long, value_delimiter = ',')]
        h_grid: Option<Vec<f64>>,
    },
    /// One-step-ahead predictions over the test window.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        draws: PathBuf,
    },
    /// Metrics for a fitted chain: ARI and RMSE against a truth, or ReMSPE.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        draws: PathBuf,
        /// `node,group` file with the true memberships.
        #[arg(long)]
        truth_labels: Option<PathBuf>,
        /// `group,sigma2,beta0,...` file with the true group parameters.
        #[arg(long, requires = "truth_labels")]
        truth_params: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    #[arg(long)]
    edges: Option<PathBuf>,
    /// N×T response matrix, no header.
    #[arg(long)]
    responses: Option<PathBuf>,
    /// N×p covariate matrix, no header.
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Numbering of node ids in the edge list.
    #[arg(long, value_parser = parse_id_base)]
    id_base: Option<IdBase>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct SamplerArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    a0: Option<f64>,
    #[arg(long)]
    b0: Option<f64>,
    #[arg(long)]
    sigma0_scale: Option<f64>,
    /// Fill value for every entry of the prior mean.
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    shuffle: bool,
    /// Last training time point (1-based); later columns are the test window.
    #[arg(long)]
    train_end: Option<usize>,
}

fn parse_id_base(s: &str) -> std::result::Result<IdBase, String> {
    match s {
        "0" | "zero" => Ok(IdBase::Zero),
        "1" | "one" => Ok(IdBase::One),
        _ => Err(format!("expected 0 or 1, got `{s}`")),
    }
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let d = &mut cfg.data;
        set(&mut d.edges, &self.edges);
        set(&mut d.responses, &self.responses);
        set(&mut d.covariates, &self.covariates);
        set(&mut d.out_dir, &self.out);
        if let Some(b) = self.id_base {
            d.id_base = b;
        }
    }
}

impl SamplerArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.sampler.seed, &self.seed);
        if let Some(v) = self.iters {
            cfg.sampler.iters = v;
        }
        if let Some(v) = self.burn_in {
            cfg.sampler.burn_in = v;
        }
        if self.shuffle {
            cfg.sampler.visit_order = Order::Shuffled;
        }
        let p = &mut cfg.prior;
        for (slot, v) in [
            (&mut p.alpha, self.alpha),
            (&mut p.a0, self.a0),
            (&mut p.b0, self.b0),
            (&mut p.sigma0_scale, self.sigma0_scale),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        if let Some(t) = self.tau0 {
            p.tau0 = Tau0::Fill(t);
        }
        set(&mut cfg.split.train_end, &self.train_end);
    }
}

fn set<T: Clone>(slot: &mut Option<T>, value: &Option<T>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var("GAGNAR_WORKERS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::validation(format!("GAGNAR_WORKERS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::validation(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_workers()?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let Some(command) = cli.command else {
        if cli.print_config {
            print!("{}", cfg.to_toml());
            return Ok(());
        }
        return Err(Error::validation("no subcommand given; see --help"));
    };
    match command {
        Command::Simulate {
            scenario,
            out,
            seed,
            replicates,
        } => commands::simulate(&scenario, &out, seed, replicates, cli.print_config),
        Command::Fit {
            data,
            sampler,
            h,
            from_draws,
        } => {
            data.apply(&mut cfg);
            sampler.apply(&mut cfg);
            if let Some(h) = h {
                cfg.smoothing.h = h;
            }
            if cli.print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            commands::fit(&cfg, from_draws.as_deref())
        }
        Command::SelectH { data, sampler, h_grid } => {
            data.apply(&mut cfg);
            sampler.apply(&mut cfg);
            if let Some(g) = h_grid {
                cfg.smoothing.h_grid = g;
            }
            if cli.print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            commands::select_h(&cfg)
        }
        Command::Predict { data, sampler, draws } => {
            data.apply(&mut cfg);
            sampler.apply(&mut cfg);
            if cli.print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            commands::predict(&cfg, &draws)
        }
        Command::Evaluate {
            data,
            sampler,
            draws,
            truth_labels,
            truth_params,
        } => {
            data.apply(&mut cfg);
            sampler.apply(&mut cfg);
            if cli.print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            commands::evaluate(&cfg, &draws, truth_labels.as_deref(), truth_params.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
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
