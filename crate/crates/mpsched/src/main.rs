//! Command-line driver: single runs, multi-seed sweeps and the exhaustive
//! action evaluation table.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mpsched::channels::PathSpec;
use mpsched::harness::{run_experiment, run_sweep, ExperimentConfig};
use mpsched::oracle::{action_table, optimal_action};

#[derive(Parser)]
#[command(
    name = "mpsched",
    about = "Multipath redundancy scheduling simulator with an online actor-critic scheduler"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV trace.
    Run(RunArgs),
    /// Print the exhaustive evaluation of all 42 actions for given loss rates.
    Oracle(OracleArgs),
    /// Run the same configuration under several seeds.
    Sweep(SweepArgs),
}

/// Flags shared by `run` and `sweep`; every flag overrides the matching
/// config-file field.
#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated per-path loss probabilities, e.g. 0.01,0.03,0.05.
    #[arg(long)]
    plrs: Option<String>,
    /// Information packets per cycle (multiple of 4).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    cycles_per_interval: Option<usize>,
    #[arg(long)]
    report_interval_s: Option<f64>,
    /// Loss threshold for the positive reward.
    #[arg(long)]
    phi_th: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    return_window: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Target-critic blend factor.
    #[arg(long)]
    alpha: Option<f64>,
    /// Replay buffer capacity.
    #[arg(long)]
    buffer: Option<usize>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    actor_lr: Option<f64>,
    #[arg(long)]
    critic_lr: Option<f64>,
    /// Learning steps per report interval.
    #[arg(long)]
    learn_steps: Option<usize>,
    /// Comma-separated hidden layer sizes, e.g. 64,64.
    #[arg(long)]
    hidden: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Master seed.
    #[arg(long)]
    seed: u64,
    /// Trace output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// Comma-separated per-path loss probabilities.
    #[arg(long)]
    plrs: String,
    #[arg(long, default_value_t = 0.005)]
    phi_th: f64,
    #[arg(long, default_value_t = 100)]
    k: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated seed list.
    #[arg(long)]
    seeds: String,
    /// Directory for the per-seed trace files.
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, String> {
    text.split(',')
        .map(|part| part.trim().parse::<T>().map_err(|_| format!("bad {what} entry: {part}")))
        .collect()
}

fn build_config(args: &ConfigArgs) -> Result<ExperimentConfig, String> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    if let Some(plrs) = &args.plrs {
        let probs: Vec<f64> = parse_list(plrs, "loss probability")?;
        config.paths = probs.into_iter().map(PathSpec::constant).collect();
    }
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(c) = args.cycles_per_interval {
        config.cycles_per_interval = c;
    }
    if let Some(s) = args.report_interval_s {
        config.report_interval_s = s;
    }
    if let Some(p) = args.phi_th {
        config.phi_th = p;
    }
    if let Some(i) = args.iterations {
        config.iterations = i;
    }
    if let Some(w) = args.return_window {
        config.return_window = w;
    }
    if let Some(g) = args.gamma {
        config.agent.gamma = g;
    }
    if let Some(a) = args.alpha {
        config.agent.alpha = a;
    }
    if let Some(b) = args.buffer {
        config.agent.buffer_capacity = b;
    }
    if let Some(m) = args.minibatch {
        config.agent.minibatch = m;
    }
    if let Some(lr) = args.actor_lr {
        config.agent.actor_lr = lr;
    }
    if let Some(lr) = args.critic_lr {
        config.agent.critic_lr = lr;
    }
    if let Some(steps) = args.learn_steps {
        config.agent.learn_steps_per_interval = steps;
    }
    if let Some(hidden) = &args.hidden {
        config.agent.hidden = parse_list(hidden, "hidden size")?;
    }
    Ok(config)
}

fn cmd_run(args: RunArgs) -> Result<(), String> {
    let mut config = build_config(&args.config)?;
    config.seed = args.seed;
    config.out = Some(args.out.clone());
    let result = run_experiment(&config).map_err(|e| e.to_string())?;
    let records = &result.records;
    let last = records.last().expect("at least one iteration");
    let tail = records.iter().rev().take(20.min(records.len())).collect::<Vec<_>>();
    let mean_reward = tail.iter().map(|r| f64::from(r.reward)).sum::<f64>() / tail.len() as f64;
    let mean_f_bar = tail.iter().map(|r| r.f_bar).sum::<f64>() / tail.len() as f64;
    println!("wrote {} ({} iterations)", args.out.display(), records.len());
    println!(
        "final windowed return {:.3}, last-20 mean reward {:.2}, last-20 mean redundancy {:.2}",
        last.windowed_return, mean_reward, mean_f_bar
    );
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), String> {
    let plrs: Vec<f64> = parse_list(&args.plrs, "loss probability")?;
    let rows = action_table(&plrs, args.phi_th, args.k).map_err(|e| e.to_string())?;
    println!("loss rates {:?}, threshold {}, K {}", plrs, args.phi_th, args.k);
    println!(
        "{:>5} {:>5} {:>10} {:>6} {:>12} {:>8} {:>6}",
        "index", "class", "priority", "f_bar", "pred_loss", "feasible", "match"
    );
    for row in &rows {
        println!(
            "{:>5} {:>5} {:>10} {:>6} {:>12.6} {:>8} {:>6}",
            row.action.index(),
            row.action.class().label(),
            row.action.perm_string(),
            row.f_bar,
            row.predicted_loss,
            row.feasible,
            row.ordering_match
        );
    }
    let best = optimal_action(&plrs, args.phi_th, args.k).map_err(|e| e.to_string())?;
    println!(
        "optimal: index {} (class {}, priority {}, f_bar {})",
        best.index(),
        best.class().label(),
        best.perm_string(),
        best.f_bar()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), String> {
    let config = build_config(&args.config)?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    let summaries = run_sweep(&config, &seeds, &args.out_dir).map_err(|e| e.to_string())?;
    for s in &summaries {
        println!(
            "seed {:>4}: final return {:>7.3}, last-20 mean reward {:>5.2}, mean redundancy {:>4.2} -> {}",
            s.seed,
            s.final_windowed_return,
            s.mean_reward_last_20,
            s.mean_f_bar_last_20,
            s.out.display()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
