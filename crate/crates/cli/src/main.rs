use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use ucwhittle::domains::{format_dataset, generate_thin, generate_wide};
use ucwhittle::harness::{ergodicity_diagnostic, run_experiment, write_outputs, ExperimentConfig};
use ucwhittle::{whittle_index, Error, RewardTable, TransitionKernel};

const DEFAULT_OUT_DIR: &str = "ucw-out";

#[derive(Parser)]
#[command(name = "ucwhittle", version, about = "Online learning for restless bandits with optimistic Whittle indices")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file.
    config: PathBuf,

    /// Override a config key, e.g. `-o T=2` or `-o experiment.seeds=0..5`.
    #[arg(short = 'o', long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a regret experiment and write its CSV outputs.
    Run {
        #[command(flatten)]
        config: ConfigArgs,

        /// Output directory (falls back to the config, then UCW_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Whittle index of one state of a two-state arm.
    Whittle {
        /// P(bad -> good) when resting.
        #[arg(long)]
        p0_pass: f64,
        /// P(bad -> good) when pulled.
        #[arg(long)]
        p0_act: f64,
        /// P(good -> good) when resting.
        #[arg(long)]
        p1_pass: f64,
        /// P(good -> good) when pulled.
        #[arg(long)]
        p1_act: f64,
        #[arg(long, default_value_t = 0)]
        state: usize,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
    },
    /// Write a synthetic dataset CSV.
    Gen {
        /// `wide` or `thin`.
        domain: String,
        /// Number of arms (rows).
        arms: usize,
        seed: u64,
        output: PathBuf,
    },
    /// Mixing diagnostic for the first seed's instance of a config.
    Diag {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Exit 1: bad config or input. Exit 2: the computation itself failed.
enum Failure {
    Input(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Runtime(m) => m,
        }
    }
}

fn input(e: Error) -> Failure {
    Failure::Input(e.to_string())
}

fn runtime(e: Error) -> Failure {
    match e {
        Error::Config { .. } | Error::InvalidInput(_) | Error::InvalidKernel(_) | Error::Dataset { .. } => {
            Failure::Input(e.to_string())
        }
        _ => Failure::Runtime(e.to_string()),
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    let overrides = args
        .overrides
        .iter()
        .map(|o| {
            o.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Failure::Input(format!("override `{o}` is not KEY=VALUE")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if !args.config.exists() {
        return Err(Failure::Input(format!("config file {} not found", args.config.display())));
    }
    ExperimentConfig::from_file(&args.config, &overrides).map_err(input)
}

fn out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os("UCW_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn run(args: &ConfigArgs, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let dir = out_dir(out, &cfg);
    info!(
        "running {} algorithms x {} seeds, N={} K={} H={} T={}",
        cfg.algorithms.len(),
        cfg.seeds.len(),
        cfg.num_arms,
        cfg.budget,
        cfg.horizon,
        cfg.episodes
    );
    let result = run_experiment(&cfg).map_err(runtime)?;
    write_outputs(&result, &dir).map_err(runtime)?;
    let runtime_of = result.runtime();
    for (alg, secs) in runtime_of {
        let runs = result.records_for(alg).count();
        println!(
            "{:<12} final cumulative regret {:>10.4}  runs {:>3}  mean {:.4}s/run",
            alg.name(),
            result.final_regret(alg),
            runs,
            secs
        );
    }
    println!("wrote {}", dir.display());
    if !result.failures.is_empty() {
        return Err(Failure::Runtime(format!(
            "{} run(s) failed; first: {} seed {}: {}",
            result.failures.len(),
            result.failures[0].algorithm,
            result.failures[0].seed,
            result.failures[0].message
        )));
    }
    Ok(())
}

fn whittle(good: [[f64; 2]; 2], state: usize, gamma: f64) -> Result<(), Failure> {
    let kernel = TransitionKernel::binary(good).map_err(input)?;
    if state >= 2 {
        return Err(Failure::Input(format!("state {state} out of range (0 or 1)")));
    }
    let rewards = RewardTable::state_valued(2, 2);
    let out = whittle_index(&kernel, &rewards, state, gamma, 1e-9, None).map_err(runtime)?;
    println!("{:.4}", out.value);
    Ok(())
}

fn gen(domain: &str, arms: usize, seed: u64, output: &Path) -> Result<(), Failure> {
    let inst = match domain {
        "wide" => generate_wide(arms, 0, seed),
        "thin" => generate_thin(arms, 0, seed),
        other => return Err(Failure::Input(format!("unknown domain `{other}` (wide or thin)"))),
    }
    .map_err(input)?;
    std::fs::write(output, format_dataset(&inst.kernels))
        .map_err(|e| Failure::Runtime(format!("{}: {e}", output.display())))?;
    info!("wrote {arms} rows to {}", output.display());
    Ok(())
}

fn diag(args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let instance = cfg
        .domain
        .instance(cfg.num_arms, cfg.budget, cfg.seeds[0])
        .map_err(input)?;
    let report = ergodicity_diagnostic(&instance, cfg.epsilon_override).map_err(input)?;
    print!("{}", report.render(cfg.horizon));
    if !report.horizon_ok(cfg.horizon) {
        return Err(Failure::Runtime(format!("horizon H = {} does not meet the mixing requirement", cfg.horizon)));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let outcome = match cli.command {
        Command::Run { config, out } => run(&config, out),
        Command::Whittle {
            p0_pass,
            p0_act,
            p1_pass,
            p1_act,
            state,
            gamma,
        } => whittle([[p0_pass, p0_act], [p1_pass, p1_act]], state, gamma),
        Command::Gen {
            domain,
            arms,
            seed,
            output,
        } => gen(&domain, arms, seed, &output),
        Command::Diag { config } => diag(&config),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
