//! `reflex` command line: run benchmark suites, replay recorded scenes with
//! per-tick debug output, and emit generated scene specs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{ArgAction, Args, Parser, Subcommand};

use reflex::config::RunConfig;
use reflex::kinematics::RobotModel;
use reflex::policy::{make_policy, CHUNK_LEN};
use reflex::sim::{
    aggregate, generate_scenario, run_episode_traced, run_suite, Difficulty, EpisodeReport,
    Family, SceneSpec, SUMMARY_CSV_HEADER,
};
use reflex::{Error, Result};

#[derive(Parser)]
#[command(name = "reflex", version, about = "Reactive goal-proposal benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a suite of episodes and write reports and a summary.
    Run(RunArgs),
    /// Re-run one recorded scene with per-tick debug records.
    Replay(ReplayArgs),
    /// Generate a scene spec and print it as JSON.
    Gen(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario family (SE, SAO, FDO, GB, DGB) or "all".
    #[arg(long)]
    family: Option<String>,
    /// Episodes per family.
    #[arg(long)]
    episodes: Option<u64>,
    /// Base seed; falls back to $REFLEX_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Policy name: interpolator or repulsive.
    #[arg(long)]
    policy: Option<String>,
    /// Enable the goal proposer.
    #[arg(long, action = ArgAction::SetTrue, conflicts_with = "no_dcp_rmp")]
    dcp_rmp: bool,
    /// Disable the goal proposer.
    #[arg(long, action = ArgAction::SetTrue)]
    no_dcp_rmp: bool,
    /// Override one motion-policy parameter, e.g. --set k_p=48.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
    /// Control ticks per second.
    #[arg(long)]
    tick_rate: Option<f64>,
    /// Episode length in ticks.
    #[arg(long)]
    horizon: Option<u64>,
    /// Gaussian jitter on scene points, m.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Write per-episode reports to this JSONL file.
    #[arg(long)]
    reports: Option<PathBuf>,
    /// Write the summary table to this CSV file.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Record per-tick joint positions in each report.
    #[arg(long, action = ArgAction::SetTrue)]
    trajectory: bool,
    /// Worker threads for episode fan-out (1 = serial).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Exit nonzero if any episode faulted.
    #[arg(long, action = ArgAction::SetTrue)]
    strict: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Scene spec JSON file (as produced by `reflex gen`).
    scene: PathBuf,
    /// Policy name: interpolator or repulsive.
    #[arg(long, default_value = "interpolator")]
    policy: String,
    /// Enable the goal proposer.
    #[arg(long, action = ArgAction::SetTrue, conflicts_with = "no_dcp_rmp")]
    dcp_rmp: bool,
    /// Disable the goal proposer (default).
    #[arg(long, action = ArgAction::SetTrue)]
    no_dcp_rmp: bool,
    /// Override one motion-policy parameter, e.g. --set k_p=48.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
    /// Episode length in ticks.
    #[arg(long)]
    horizon: Option<u64>,
    /// Write the trace here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Scenario family (SE, SAO, FDO, GB, DGB).
    #[arg(long)]
    family: String,
    /// Scene seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the spec here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Gen(args) => cmd_gen(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            // Usage-shaped errors (bad names, malformed inputs) exit 2,
            // everything else (I/O) exits 1, matching clap's convention.
            match e {
                Error::InvalidInput(_) | Error::Parse(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn parse_overrides(pairs: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    for pair in pairs {
        let (name, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("--set expects NAME=VALUE, got '{pair}'")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| Error::invalid(format!("--set {name}: '{value}' is not a number")))?;
        map.insert(name.to_string(), value);
    }
    Ok(map)
}

fn resolve_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            RunConfig::from_json_str(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = &args.family {
        cfg.family = v.clone();
    }
    if let Some(v) = args.episodes {
        cfg.episodes = v;
    }
    cfg.seed = match args.seed {
        Some(v) => v,
        None => match std::env::var("REFLEX_SEED") {
            Ok(v) => v
                .parse()
                .map_err(|_| Error::invalid("REFLEX_SEED must be an unsigned integer"))?,
            Err(_) => cfg.seed,
        },
    };
    if let Some(v) = &args.policy {
        cfg.policy = v.clone();
    }
    if args.dcp_rmp {
        cfg.dcp_rmp = true;
    } else if args.no_dcp_rmp {
        cfg.dcp_rmp = false;
    }
    cfg.params.extend(parse_overrides(&args.set)?);
    if let Some(v) = args.tick_rate {
        cfg.tick_rate = v;
    }
    if let Some(v) = args.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = args.noise_sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = &args.reports {
        cfg.reports = Some(v.clone());
    }
    if let Some(v) = &args.summary {
        cfg.summary = Some(v.clone());
    }
    if args.trajectory {
        cfg.log_trajectory = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Write atomically: temp file in the target directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = dir
        .unwrap_or_else(|| Path::new("."))
        .join(format!(".{}.tmp", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let cfg = resolve_config(&args)?;
    let params = cfg.rmp_params()?;
    let sim = cfg.sim_config();
    let model = RobotModel::default_panda();

    if args.jobs > 1 {
        // Per-episode seeding plus seed-sorted collection keeps the output
        // byte-identical regardless of the pool size.
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build_global()
            .ok();
    }

    let mut reports: Vec<EpisodeReport> = Vec::new();
    let mut summaries = Vec::new();
    for family in cfg.families()? {
        let batch = run_suite(
            family,
            cfg.seed,
            cfg.episodes,
            &model,
            &cfg.policy,
            cfg.dcp_rmp,
            &params,
            &Difficulty::default(),
            &sim,
            args.jobs > 1,
        );
        summaries.push(aggregate(&batch)?);
        reports.extend(batch);
    }

    if let Some(path) = &cfg.reports {
        let mut text = String::new();
        for r in &reports {
            text.push_str(&r.to_jsonl());
            text.push('\n');
        }
        write_atomic(path, &text)?;
    }
    if let Some(path) = &cfg.summary {
        let mut text = String::from(SUMMARY_CSV_HEADER);
        text.push('\n');
        for s in &summaries {
            text.push_str(&s.to_csv_row());
            text.push('\n');
        }
        write_atomic(path, &text)?;
    }

    println!(
        "{:<6} {:<13} {:<5} {:>4} {:>7} {:>7} {:>7} {:>10} {:>6}",
        "family", "policy", "dcp", "n", "reach%", "coll%", "succ%", "clearance", "faults"
    );
    for s in &summaries {
        println!(
            "{:<6} {:<13} {:<5} {:>4} {:>7.1} {:>7.1} {:>7.1} {:>10.4} {:>6}",
            s.family.to_string(),
            s.policy,
            if s.dcp_rmp { "on" } else { "off" },
            s.episodes,
            s.reach_rate,
            s.collision_rate,
            s.success_rate,
            s.mean_min_clearance,
            s.faults
        );
    }

    let faults: u64 = summaries.iter().map(|s| s.faults).sum();
    if args.strict && faults > 0 {
        eprintln!("{faults} episode(s) faulted");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(args: ReplayArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.scene)?;
    let spec = SceneSpec::from_json_str(&text)?;
    let model = RobotModel::default_panda();
    let mut params = reflex::rmp::RmpParams::default();
    for (name, value) in parse_overrides(&args.set)? {
        params.set_field(&name, value)?;
    }
    let mut sim = reflex::sim::SimConfig::default();
    if let Some(h) = args.horizon {
        sim.horizon = h;
    }
    let mut policy = make_policy(&args.policy, &model, &params, sim.dt(), CHUNK_LEN)?;

    let mut lines = String::new();
    let report = run_episode_traced(
        &spec,
        &model,
        policy.as_mut(),
        args.dcp_rmp,
        &params,
        &sim,
        |trace| {
            lines.push_str(&serde_json::to_string(trace).expect("trace serializes"));
            lines.push('\n');
        },
    );
    lines.push_str(&report.to_jsonl());
    lines.push('\n');

    match &args.out {
        Some(path) => write_atomic(path, &lines)?,
        None => std::io::stdout().write_all(lines.as_bytes())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(args: GenArgs) -> Result<ExitCode> {
    let family = Family::from_str(&args.family)?;
    let model = RobotModel::default_panda();
    let spec = generate_scenario(family, args.seed, &Difficulty::default(), &model)?;
    let text = spec.to_json_string();
    match &args.out {
        Some(path) => write_atomic(path, &text)?,
        None => println!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}
