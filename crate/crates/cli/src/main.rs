use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use furnibench::catalog::load_furniture;
use furnibench::dataset::{
    episode_stats, read_episode, read_episode_dir, replay_episode, replay_episode_with_seed, write_episode,
    EpisodeHeader, Operator, StatsRow,
};
use furnibench::env::{evaluate_policy, run_episode, Env, EvalMetrics, NullPolicy, Policy, RandomPolicy, RunConfig};
use furnibench::error::Error;
use furnibench::expert::ScriptedExpert;
use furnibench::geometry::yaw_of;
use furnibench::init::{sample_initial_poses, skill_start_state, RandomnessLevel};
use serde_json::json;

#[derive(Parser)]
#[command(name = "furnibench", version, about = "Desk-scale furniture assembly benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a policy over a set of seeds and report success and phase counts.
    Eval(EvalArgs),
    /// Record demonstration episodes from the scripted expert or teleop.
    Collect(CollectArgs),
    /// Re-run the actions of a recorded episode and report divergence.
    Replay(ReplayArgs),
    /// Per-(furniture, level) demo counts, mean length and hours.
    Stats(StatsArgs),
    /// Print sampled initial part poses.
    InitSample(InitSampleArgs),
    /// Serve the websocket teleoperation bridge.
    ServeTeleop(ServeArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Furniture model id [default: one_leg, or the config's value]
    #[arg(long)]
    furniture: Option<String>,
    /// Randomness level: low, med or high [default: low, or the config's value]
    #[arg(long)]
    level: Option<RandomnessLevel>,
    /// Run configuration JSON; flags override its furniture and level
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the fixed evaluation layouts at high randomness
    #[arg(long)]
    eval_mode: bool,
    /// Print the effective configuration as JSON and exit
    #[arg(long)]
    dump_config: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(f) = &self.furniture {
            cfg.furniture = f.clone();
        }
        if let Some(l) = self.level {
            cfg.level = l;
        }
        cfg.eval_mode |= self.eval_mode;
        cfg.validate()?;
        load_furniture(&cfg.furniture)?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Scripted,
    Null,
    Random,
}

fn make_policy(kind: PolicyKind, seed: u64) -> Box<dyn Policy> {
    match kind {
        PolicyKind::Scripted => Box::new(ScriptedExpert::new()),
        PolicyKind::Null => Box::new(NullPolicy),
        PolicyKind::Random => Box::new(RandomPolicy::new(seed)),
    }
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Args, Clone)]
struct SeedArgs {
    /// Number of episodes [default: 10, or the config's seed list]
    #[arg(long)]
    episodes: Option<usize>,
    /// First seed; episodes use consecutive seeds [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

impl SeedArgs {
    fn seeds(&self, cfg: &RunConfig) -> Vec<u64> {
        if self.episodes.is_none() && self.seed.is_none() && !cfg.seeds.is_empty() {
            return cfg.seeds.clone();
        }
        let start = self.seed.unwrap_or(0);
        (0..self.episodes.unwrap_or(10) as u64).map(|i| start + i).collect()
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    seeds: SeedArgs,
    #[arg(long, value_enum, default_value = "scripted")]
    policy: PolicyKind,
    /// Worker threads for episodes
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct CollectArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    seeds: SeedArgs,
    /// Output directory for episode files
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "scripted")]
    policy: PolicyKind,
    /// Collect through the teleop bridge instead of a policy
    #[arg(long)]
    teleop: bool,
    /// Teleop port
    #[arg(long, default_value_t = 8765)]
    port: u16,
    /// Static UI directory for teleop
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Episode file
    path: PathBuf,
    /// Replay from a different seed
    #[arg(long)]
    seed: Option<u64>,
    /// Exit 1 unless the replay is exact
    #[arg(long)]
    strict: bool,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct StatsArgs {
    /// Directory of .jsonl episode files
    dir: PathBuf,
    /// Action frequency for hours [default: taken from the episode headers]
    #[arg(long)]
    frequency: Option<f64>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct InitSampleArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds to sample
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Sample the start state of skill K instead of a full episode
    #[arg(long)]
    skill: Option<usize>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Static UI directory served at /
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    /// Directory for recorded episodes
    #[arg(long, default_value = "recordings")]
    out: PathBuf,
}

/// Failure with an exit code: 2 for usage problems, 1 otherwise.
struct Failure(u8, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::FurnitureNotFound(_) | Error::InvalidConfig(_) | Error::UnknownSkill { .. } => 2,
            _ => 1,
        };
        Failure(code, e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<Error>() {
            Ok(e) => e.into(),
            Err(e) => Failure(1, format!("{e:#}")),
        }
    }
}

type Run = Result<(), Failure>;

fn dump(cfg: &RunConfig) {
    println!("{}", cfg.to_json_pretty());
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn eval(a: EvalArgs) -> Run {
    let cfg = a.run.resolve()?;
    if a.run.dump_config {
        dump(&cfg);
        return Ok(());
    }
    let seeds = a.seeds.seeds(&cfg);
    let kind = a.policy;
    let m = evaluate_policy(&cfg, |s| make_policy(kind, s), &seeds, a.jobs.max(1))?;
    match a.format {
        Format::Json => print_json(&m),
        Format::Text => print_metrics(&m),
    }
    Ok(())
}

fn print_metrics(m: &EvalMetrics) {
    println!("furniture: {}", m.furniture);
    println!("level: {}", m.level);
    println!("episodes: {}", m.episodes);
    println!("success_rate: {:.3}", m.success_rate);
    println!("phases: mean {:.2}, min {}, max {}", m.mean_phases, m.min_phases, m.max_phases);
    println!("mean_length: {:.1}", m.mean_length);
    let causes: Vec<String> = m.causes.iter().map(|(c, n)| format!("{c}={n}")).collect();
    println!("causes: {}", causes.join(", "));
}

fn collect(a: CollectArgs) -> Run {
    let cfg = a.run.resolve()?;
    if a.run.dump_config {
        dump(&cfg);
        return Ok(());
    }
    if a.teleop {
        return serve(cfg, 0, "127.0.0.1", a.port, a.ui_dir, a.out);
    }
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    let operator = match a.policy {
        PolicyKind::Scripted => Operator::Scripted,
        _ => Operator::Policy,
    };
    let mut env = Env::new(cfg.clone())?;
    let mut ok = 0;
    let seeds = a.seeds.seeds(&cfg);
    for &seed in &seeds {
        let mut policy = make_policy(a.policy, seed);
        let out = run_episode(&mut env, policy.as_mut(), seed, true)?;
        let mut header = EpisodeHeader::new(&cfg, seed, operator);
        header.success = out.summary.success;
        header.error_note = out.summary.error_note.clone();
        header.initial_observation = Some(out.initial_observation);
        let path = a.out.join(format!("{}_{}_{:06}.jsonl", cfg.furniture, cfg.level, seed));
        write_episode(&header, &out.records, &path)?;
        ok += out.summary.success as usize;
        println!(
            "{}  steps {}  reward {}  phases {}  {}",
            path.display(),
            out.summary.length,
            out.summary.reward_total,
            out.summary.phases_completed,
            out.summary.cause
        );
    }
    println!("collected {} episodes, {ok} successful", seeds.len());
    Ok(())
}

fn replay(a: ReplayArgs) -> Run {
    let ep = read_episode(&a.path)?;
    let cfg = match &ep.header.config {
        Some(c) => c.clone(),
        None => {
            let mut c = RunConfig {
                furniture: ep.header.furniture_id.clone(),
                level: ep.header.randomness_level,
                ..RunConfig::default()
            };
            c.controller.action_frequency = ep.header.control_frequency_hz;
            c
        }
    };
    let mut env = Env::new(cfg)?;
    let rep = match a.seed {
        Some(s) => replay_episode_with_seed(&mut env, &ep, s)?,
        None => replay_episode(&mut env, &ep)?,
    };
    match a.format {
        Format::Json => print_json(&rep),
        Format::Text => {
            println!("steps_replayed: {}", rep.steps_replayed);
            println!("max_deviation: {:e}", rep.max_deviation);
            match rep.first_divergent_step {
                Some(s) => println!("first_divergent_step: {s}"),
                None => println!("first_divergent_step: none"),
            }
            println!("reward: recorded {} replayed {}", rep.recorded_reward, rep.replayed_reward);
            println!("phase: recorded {} replayed {}", rep.recorded_phase, rep.replayed_phase);
        }
    }
    if a.strict && !rep.is_exact() {
        return Err(Failure(1, "replay diverged".into()));
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Run {
    if !a.dir.is_dir() {
        return Err(Failure(2, format!("not a directory: {}", a.dir.display())));
    }
    let episodes = read_episode_dir(&a.dir)?;
    let freq = match a.frequency {
        Some(f) => f,
        None => {
            let mut fs: Vec<f64> = episodes.iter().map(|e| e.header.control_frequency_hz).collect();
            fs.dedup();
            match fs.as_slice() {
                [] => 10.0,
                [f] => *f,
                _ if fs.iter().all(|f| *f == fs[0]) => fs[0],
                _ => return Err(Failure(2, "episodes disagree on control frequency; pass --frequency".into())),
            }
        }
    };
    let rows = episode_stats(&episodes, freq)?;
    match a.format {
        Format::Json => print_json(&rows),
        Format::Text => print_stats(&rows),
    }
    Ok(())
}

fn print_stats(rows: &[StatsRow]) {
    println!("{:<18} {:<5} {:>6} {:>11} {:>11}", "furniture", "level", "demos", "avg_length", "total_hours");
    for r in rows {
        println!(
            "{:<18} {:<5} {:>6} {:>11.1} {:>11.4}",
            r.furniture, r.level, r.count, r.avg_length, r.total_hours
        );
    }
}

fn init_sample(a: InitSampleArgs) -> Run {
    let cfg = a.run.resolve()?;
    if a.run.dump_config {
        dump(&cfg);
        return Ok(());
    }
    let graph = load_furniture(&cfg.furniture)?;
    let ws = &cfg.world.workspace;
    let mut samples = Vec::new();
    for seed in a.seed..a.seed + a.count as u64 {
        let (poses, ee) = match a.skill {
            Some(k) => {
                let s = skill_start_state(&graph, k, cfg.level, &cfg.init, ws, seed)?;
                (s.part_poses, Some(s.ee_pose))
            }
            None => (sample_initial_poses(&graph, cfg.level, &cfg.init, ws, seed, cfg.eval_mode)?, None),
        };
        samples.push((seed, poses, ee));
    }
    match a.format {
        Format::Json => {
            let v: Vec<_> = samples
                .iter()
                .map(|(seed, poses, ee)| {
                    json!({
                        "seed": seed,
                        "parts": graph.parts.iter().zip(poses).map(|(s, p)| json!({"id": s.id, "pose": p})).collect::<Vec<_>>(),
                        "ee_pose": ee,
                    })
                })
                .collect();
            print_json(&v);
        }
        Format::Text => {
            for (seed, poses, ee) in &samples {
                println!("seed {seed}");
                for (s, p) in graph.parts.iter().zip(poses) {
                    println!(
                        "  {:<16} x {:+.4}  y {:+.4}  z {:.4}  yaw {:+7.2} deg",
                        s.id,
                        p.position.x,
                        p.position.y,
                        p.position.z,
                        yaw_of(&p.orientation).to_degrees()
                    );
                }
                if let Some(e) = ee {
                    println!("  {:<16} x {:+.4}  y {:+.4}  z {:.4}", "ee", e.position.x, e.position.y, e.position.z);
                }
            }
        }
    }
    Ok(())
}

fn serve(cfg: RunConfig, seed: u64, host: &str, port: u16, ui_dir: Option<PathBuf>, out: PathBuf) -> Run {
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| Failure(2, format!("bad address {host}:{port}: {e}")))?;
    if let Some(d) = &ui_dir {
        if !Path::new(d).is_dir() {
            return Err(Failure(2, format!("ui dir not found: {}", d.display())));
        }
    }
    let rt = tokio::runtime::Runtime::new().map_err(Error::from)?;
    rt.block_on(async move {
        let server = furnibench_teleop::start(furnibench_teleop::ServeOptions {
            run: cfg,
            seed,
            out_dir: out,
            ui_dir,
            addr,
        })
        .await?;
        println!("teleop listening on ws://{}/teleop (ctrl-c to stop)", server.addr);
        tokio::signal::ctrl_c().await.map_err(Error::from)?;
        for p in server.shutdown().await? {
            println!("wrote {}", p.display());
        }
        Ok::<(), Failure>(())
    })
}

fn serve_teleop(a: ServeArgs) -> Run {
    let cfg = a.run.resolve()?;
    if a.run.dump_config {
        dump(&cfg);
        return Ok(());
    }
    serve(cfg, a.seed, &a.host, a.port, a.ui_dir, a.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Cmd::Eval(a) => eval(a),
        Cmd::Collect(a) => collect(a),
        Cmd::Replay(a) => replay(a),
        Cmd::Stats(a) => stats(a),
        Cmd::InitSample(a) => init_sample(a),
        Cmd::ServeTeleop(a) => serve_teleop(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
