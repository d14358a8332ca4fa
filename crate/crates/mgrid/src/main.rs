//! Command-line frontend: generate and validate scenario files, train the
//! operator network, evaluate checkpoints, compare pricing mechanisms,
//! search hyperparameters, and summarize finished runs.
//!
//! Every command prints a short machine-greppable summary on success and
//! exits nonzero with a diagnostic on any failure. Commands that produce
//! files leave a run directory with a `run.json` manifest listing every
//! artifact and the hashes needed to audit it later.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use microgrid::config::ScenarioParams;
use microgrid::data_io::{
    load_scenario, save_scenario, scenario_fingerprint, sha256_hex, synth_scenario, write_steps_csv,
    RunRecord, Scenario,
};
use microgrid::env::policy::make_baseline_policy;
use microgrid::env::{rollout_day, Environment};
use microgrid::neural::ActorCriticNet;
use microgrid::trainer::{
    evaluate, quartile_means, train, write_timing_csv, write_train_log_csv, TrainConfig,
};
use microgrid::tuner::{apply_point, default_search_space, run_search, SearchSpace, TunerSettings};

#[derive(Parser)]
#[command(name = "mgrid", version, about = "Microgrid scheduling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario and write it as CSV plus TOML sidecar.
    GenScenario(GenScenarioArgs),
    /// Load a scenario pair and report whether it is internally consistent.
    Validate(ValidateArgs),
    /// Train the operator network and leave a full run directory behind.
    Train(TrainArgs),
    /// Greedily evaluate a trained checkpoint over every scenario day.
    Eval(EvalArgs),
    /// Daily profit of the pricing mechanisms side by side.
    ComparePricing(ComparePricingArgs),
    /// Sequential hyperparameter search over short training runs.
    Tune(TuneArgs),
    /// Recompute the summary of a finished training run from its logs.
    ReplayLog(ReplayLogArgs),
}

#[derive(Args)]
struct GenScenarioArgs {
    /// Master seed; every population draw and series derives from it.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    days: usize,
    /// Output CSV path; the TOML sidecar lands next to it.
    #[arg(long)]
    out: PathBuf,
    /// TOML file overriding scenario parameters (missing fields keep defaults).
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Scenario CSV path (the sidecar is found by extension swap).
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Run directory; created if absent.
    #[arg(long)]
    out_dir: PathBuf,
    /// TOML file of training settings (missing fields keep defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config file's worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the config file's episode budget.
    #[arg(long)]
    episodes: Option<usize>,
    /// Override the config file's training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config file's state encoder (one-hot | integer).
    #[arg(long)]
    encoder: Option<String>,
    /// Seed of the greedy post-training evaluation.
    #[arg(long, default_value_t = 1234)]
    eval_seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Network checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// State encoder the checkpoint was trained with.
    #[arg(long, default_value = "one-hot")]
    encoder: String,
    #[arg(long, default_value_t = 1234)]
    seed: u64,
    /// Energy-grid resolution of the users' dispatch solver.
    #[arg(long, default_value_t = 101)]
    grid_points: usize,
    /// When set, write steps.csv and run.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ComparePricingArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Optional checkpoint adding the learned dynamic mechanism to the table.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "one-hot")]
    encoder: String,
    #[arg(long, default_value_t = 1234)]
    seed: u64,
    #[arg(long, default_value_t = 101)]
    grid_points: usize,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 30)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training episodes spent on each trial.
    #[arg(long, default_value_t = 40)]
    episodes: usize,
    /// TOML file with the search space; defaults to the stock space.
    #[arg(long)]
    space: Option<PathBuf>,
    /// TOML file of base training settings the trials overlay.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayLogArgs {
    /// Directory containing run.json and the logs it lists.
    #[arg(long)]
    run_dir: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenScenario(args) => gen_scenario(args),
        Command::Validate(args) => validate(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::ComparePricing(args) => compare_pricing(args),
        Command::Tune(args) => run_tune(args),
        Command::ReplayLog(args) => replay_log(args),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {what} file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {what} file {}", path.display()))
}

fn load_scenario_arc(path: &Path) -> Result<Arc<Scenario>> {
    Ok(Arc::new(load_scenario(path).with_context(|| {
        format!("loading scenario {}", path.display())
    })?))
}

fn gen_scenario(args: GenScenarioArgs) -> Result<()> {
    let params: ScenarioParams = match &args.params {
        Some(p) => read_toml(p, "scenario parameter")?,
        None => ScenarioParams::default(),
    };
    let scenario = synth_scenario(args.seed, args.days, params)?;
    save_scenario(&scenario, &args.out)
        .with_context(|| format!("writing scenario to {}", args.out.display()))?;
    let fp = scenario_fingerprint(&scenario)?;
    println!(
        "gen-scenario: wrote {} ({} days, {} hours, fleet {}, fingerprint {})",
        args.out.display(),
        scenario.days,
        scenario.hours(),
        scenario.fleet.count(),
        &fp[..12]
    );
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<()> {
    let scenario = load_scenario_arc(&args.scenario)?;
    let fp = scenario_fingerprint(&scenario)?;
    println!(
        "validate: ok {} ({} days, seed {}, fleet {}, residences {}, fingerprint {})",
        args.scenario.display(),
        scenario.days,
        scenario.master_seed,
        scenario.fleet.count(),
        scenario.params.demand.residences,
        &fp[..12]
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let scenario = load_scenario_arc(&args.scenario)?;
    let mut config: TrainConfig = match &args.config {
        Some(p) => read_toml(p, "training config")?,
        None => TrainConfig::default(),
    };
    if let Some(w) = args.workers {
        config.workers = w;
    }
    if let Some(e) = args.episodes {
        config.episodes = e;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(enc) = args.encoder {
        config.encoder = enc;
    }

    let outcome = train(scenario.clone(), &config)?;
    let dir = &args.out_dir;
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating run directory {}", dir.display()))?;

    let mut config_json = serde_json::to_string_pretty(&config)?;
    config_json.push('\n');
    std::fs::write(dir.join("config.json"), &config_json)?;
    let config_sha = sha256_hex(config_json.as_bytes());

    outcome.net.save(&dir.join("checkpoint.json"))?;
    write_train_log_csv(&dir.join("train_log.csv"), &outcome.episodes)?;
    write_timing_csv(&dir.join("timing.csv"), &outcome.timing, outcome.wall_seconds)?;

    let report = evaluate(
        scenario.clone(),
        &outcome.net,
        &config.encoder,
        args.eval_seed,
        config.lower_grid_points,
    )?;
    write_steps_csv(&dir.join("steps.csv"), &report.per_day)?;

    let record = RunRecord {
        run_id: RunRecord::make_id("train", config.seed, &config_sha),
        command: "train".into(),
        config_sha256: config_sha,
        scenario_sha256: scenario_fingerprint(&scenario)?,
        step_log: Some("steps.csv".into()),
        episode_log: Some("train_log.csv".into()),
        artifacts: vec![
            "config.json".into(),
            "checkpoint.json".into(),
            "train_log.csv".into(),
            "timing.csv".into(),
            "steps.csv".into(),
        ],
    };
    record.save(dir)?;

    let (first, last) = quartile_means(&outcome.episodes);
    println!(
        "train: {} episodes on {} workers in {:.1}s (seed {})",
        config.episodes, config.workers, outcome.wall_seconds, config.seed
    );
    println!("train: episode reward first quartile {first:.1}, last quartile {last:.1} cents");
    println!(
        "train: greedy evaluation {:.1} cents/day over {} days (eval seed {})",
        report.mean_profit_cents, scenario.days, args.eval_seed
    );
    println!("train: run record {}", dir.join("run.json").display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let scenario = load_scenario_arc(&args.scenario)?;
    let net = ActorCriticNet::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let report = evaluate(scenario.clone(), &net, &args.encoder, args.seed, args.grid_points)?;

    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating run directory {}", dir.display()))?;
        write_steps_csv(&dir.join("steps.csv"), &report.per_day)?;
        let checkpoint_bytes = std::fs::read(&args.checkpoint)?;
        let config_sha = sha256_hex(&checkpoint_bytes);
        let record = RunRecord {
            run_id: RunRecord::make_id("eval", args.seed, &config_sha),
            command: "eval".into(),
            config_sha256: config_sha,
            scenario_sha256: scenario_fingerprint(&scenario)?,
            step_log: Some("steps.csv".into()),
            episode_log: None,
            artifacts: vec!["steps.csv".into()],
        };
        record.save(dir)?;
    }

    for day in &report.per_day {
        println!("eval: day {} profit {:.1} cents", day.day, day.profit_cents);
    }
    println!(
        "eval: mean {:.1} cents/day over {} days (seed {})",
        report.mean_profit_cents,
        report.per_day.len(),
        args.seed
    );
    Ok(())
}

fn compare_pricing(args: ComparePricingArgs) -> Result<()> {
    let scenario = load_scenario_arc(&args.scenario)?;
    let mut rows: Vec<(String, f64)> = Vec::new();

    if let Some(ckpt) = &args.checkpoint {
        let net = ActorCriticNet::load(ckpt)
            .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
        let report =
            evaluate(scenario.clone(), &net, &args.encoder, args.seed, args.grid_points)?;
        rows.push(("dynamic".into(), report.mean_profit_cents));
    }
    for name in ["tou", "fixed"] {
        let mut policy = make_baseline_policy(name, &scenario.params.pricing)?;
        let mut env = Environment::new(scenario.clone())?;
        env.set_lower_grid_points(args.grid_points);
        let mut rng = microgrid::seeds::stream_rng(args.seed, "baseline");
        let mut total = 0.0;
        for day in 0..scenario.days {
            total += rollout_day(&mut env, policy.as_mut(), day, &mut rng)?.profit_cents;
        }
        rows.push((name.into(), total / scenario.days as f64));
    }

    let fixed = rows.last().expect("fixed row is always present").1;
    for (name, cents) in &rows {
        let ratio = if fixed.abs() > f64::EPSILON { cents / fixed } else { f64::NAN };
        println!("compare-pricing: {name:>8} {cents:>10.1} cents/day  x{ratio:.3} of fixed");
    }
    Ok(())
}

fn run_tune(args: TuneArgs) -> Result<()> {
    let scenario = load_scenario_arc(&args.scenario)?;
    let space: SearchSpace = match &args.space {
        Some(p) => read_toml(p, "search space")?,
        None => default_search_space(),
    };
    let mut base: TrainConfig = match &args.config {
        Some(p) => read_toml(p, "training config")?,
        None => TrainConfig::default(),
    };
    base.episodes = args.episodes;
    base.workers = 1;
    base.seed = args.seed;

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating run directory {}", args.out_dir.display()))?;
    let ledger_path = args.out_dir.join("trials.jsonl");
    let eval_scenario = scenario.clone();
    let objective = |point: &microgrid::tuner::ConfigPoint| {
        let cfg = apply_point(point, &base)?;
        let outcome = train(eval_scenario.clone(), &cfg)?;
        let report = evaluate(
            eval_scenario.clone(),
            &outcome.net,
            &cfg.encoder,
            args.seed,
            cfg.lower_grid_points,
        )?;
        Ok(report.mean_profit_cents)
    };
    let (best, trials) = run_search(
        space,
        TunerSettings::default(),
        args.trials,
        args.seed,
        objective,
        Some(&ledger_path),
    )?;

    let mut best_json = serde_json::to_string_pretty(&best)?;
    best_json.push('\n');
    std::fs::write(args.out_dir.join("best.json"), best_json)?;
    let completed = trials.iter().filter(|t| t.reward.is_some()).count();
    println!(
        "tune: {} trials ({} completed), ledger {}",
        trials.len(),
        completed,
        ledger_path.display()
    );
    match best.reward {
        Some(r) => println!(
            "tune: best trial {} at {:.1} cents/day: {}",
            best.trial_id,
            r,
            serde_json::to_string(&best.point)?
        ),
        None => bail!("every trial failed; see {}", ledger_path.display()),
    }
    Ok(())
}

fn replay_log(args: ReplayLogArgs) -> Result<()> {
    let record = RunRecord::load(&args.run_dir.join("run.json"))
        .with_context(|| format!("reading {}/run.json", args.run_dir.display()))?;

    let config_path = args.run_dir.join("config.json");
    if config_path.exists() {
        let bytes = std::fs::read(&config_path)?;
        if sha256_hex(&bytes) != record.config_sha256 {
            bail!("config.json does not match the hash recorded in run.json");
        }
    }

    println!("replay-log: run {} ({})", record.run_id, record.command);
    if let Some(episode_log) = &record.episode_log {
        let path = args.run_dir.join(episode_log);
        let rewards = read_reward_column(&path)?;
        let n = rewards.len();
        if n == 0 {
            bail!("{} holds no episodes", path.display());
        }
        let q = (n / 4).max(1);
        let first: f64 = rewards[..q].iter().sum::<f64>() / q as f64;
        let last: f64 = rewards[n - q..].iter().sum::<f64>() / q as f64;
        let mean: f64 = rewards.iter().sum::<f64>() / n as f64;
        println!(
            "replay-log: {n} episodes, mean reward {mean:.1} cents, \
             first quartile {first:.1}, last quartile {last:.1}"
        );
    }
    for artifact in &record.artifacts {
        let exists = args.run_dir.join(artifact).exists();
        println!("replay-log: artifact {artifact} {}", if exists { "present" } else { "MISSING" });
    }
    Ok(())
}

/// Pull `reward_cents` out of a train_log.csv.
fn read_reward_column(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading episode log {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("episode log is empty")?;
    let col = header
        .split(',')
        .position(|c| c == "reward_cents")
        .context("episode log has no reward_cents column")?;
    let mut rewards = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let field = line
            .split(',')
            .nth(col)
            .with_context(|| format!("row {} is short", i + 2))?;
        rewards.push(
            field
                .parse::<f64>()
                .with_context(|| format!("row {}: bad reward {field:?}", i + 2))?,
        );
    }
    Ok(rewards)
}
