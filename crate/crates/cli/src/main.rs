//! `coplace`: generate scenes, train the two placement agents, evaluate
//! them and render layouts.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
//! files, incompatible checkpoints), 3 numerical failure during training.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use coplace::agent::{Learner, LearnerKind};
use coplace::env::{self, Mode};
use coplace::eval::{evaluate, render_svg, report_table, EvalOptions, EvalPolicy};
use coplace::scene::{
    generate_scene, load_scene_file, randomize_start, save_scene_file, GeneratorConfig, RoomType, Scene,
};
use coplace::seeding::{self, derive_seed};
use coplace::training::{
    greedy_policies, load_agents, run_episode, CoopConfig, OraclePolicy, RandomPolicy, RunManifest, TrainError,
    Trainer, MANIFEST_FILE,
};

const METRICS_FILE: &str = "metrics.jsonl";
const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Parser)]
#[command(name = "coplace", version, about = "Cooperative two-surface furniture placement")]
struct Cli {
    /// JSON config file (generator config for `gen`, run config otherwise).
    /// Flags override its values, which override the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes, one subdirectory per room type.
    Gen {
        /// Room type; repeat for several, or `all`.
        #[arg(long = "type", value_name = "TYPE", required = true)]
        types: Vec<String>,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both agents on a scene directory.
    Train {
        #[arg(long)]
        scenes: PathBuf,
        /// Run directory: metrics log, effective config and checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Continue from the run directory's checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        learner: Option<LearnerArg>,
        /// Env-step budget.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        episodes: Option<u64>,
    },
    /// Evaluate a policy from random starts and write a report.
    Eval {
        #[arg(long)]
        scenes: PathBuf,
        /// Run directory (or its checkpoint directory) of a trained run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PolicyArg::Dqn)]
        policy: PolicyArg,
        #[arg(long, default_value_t = 40)]
        starts: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Skip the uniform-random baseline.
        #[arg(long)]
        no_baseline: bool,
        /// Directory for report.txt and report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render scenes as SVG, optionally with a rollout trajectory.
    Render {
        /// A scene file or a directory of scenes.
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Roll out this policy and draw its path.
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Start the rollout from a random lattice start instead of the
        /// placement in the file.
        #[arg(long)]
        random_start: bool,
    },
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum PolicyArg {
    Dqn,
    Oracle,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum LearnerArg {
    Dqn,
    Tabular,
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Numerical(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::NonFiniteLoss { .. } => Failure::Numerical(e.into()),
        TrainError::Config(m) => Failure::Usage(m),
        other => Failure::Data(other.into()),
    }
}

fn log(msg: impl AsRef<str>) {
    eprintln!("[coplace] {}", msg.as_ref());
}

fn log_config(what: &str, value: &impl Serialize) {
    log(format!("effective {what}: {}", serde_json::to_string(value).expect("config serializes")));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Data(e) | Failure::Numerical(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen { types, count, out } => cmd_gen(cli.config.as_deref(), cli.seed, &types, count, &out),
        Command::Train { scenes, out, resume, learner, steps, episodes } => {
            cmd_train(cli.config.as_deref(), cli.seed, &scenes, &out, resume, learner, steps, episodes)
        }
        Command::Eval { scenes, checkpoint, policy, starts, threads, no_baseline, out } => cmd_eval(
            cli.config.as_deref(),
            cli.seed,
            &scenes,
            checkpoint.as_deref(),
            policy,
            EvalOptions { n_starts: starts, seed: 0, threads, baseline: !no_baseline },
            &out,
        ),
        Command::Render { scenes, out, policy, checkpoint, random_start } => {
            cmd_render(cli.config.as_deref(), cli.seed, &scenes, &out, policy, checkpoint.as_deref(), random_start)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn parse_types(raw: &[String]) -> Result<Vec<RoomType>, Failure> {
    let mut out = Vec::new();
    for t in raw {
        if t == "all" {
            out.extend(RoomType::ALL);
        } else {
            out.push(t.parse::<RoomType>().map_err(|_| usage(format!("unknown room type `{t}`")))?);
        }
    }
    let mut seen = Vec::new();
    out.retain(|t| {
        let fresh = !seen.contains(t);
        seen.push(*t);
        fresh
    });
    Ok(out)
}

#[derive(Serialize)]
struct GenEntry {
    file: String,
    room_type: RoomType,
    seed: u64,
}

#[derive(Serialize)]
struct GenManifest {
    seed: u64,
    count: usize,
    scenes: Vec<GenEntry>,
}

fn cmd_gen(config: Option<&Path>, seed: Option<u64>, types: &[String], count: usize, out: &Path) -> Result<(), Failure> {
    let seed = seed.unwrap_or(0);
    let custom: Option<GeneratorConfig> = config.map(read_json).transpose()?;
    let types = match &custom {
        Some(c) if types.iter().all(|t| t == c.room_type.as_str()) => vec![c.room_type],
        Some(c) => return Err(usage(format!("--config describes {} rooms; --type must match", c.room_type))),
        None => parse_types(types)?,
    };
    log(format!("seed {seed}, {count} scenes per type"));
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = GenManifest { seed, count, scenes: Vec::new() };
    for t in types {
        let cfg = custom.clone().unwrap_or_else(|| GeneratorConfig::for_room(t));
        log_config(&format!("{t} generator config"), &cfg);
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        let dir = out.join(t.as_str());
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for i in 0..count {
            let scene_seed = derive_seed(seed, &format!("gen/{t}"), i as u64);
            let scene = generate_scene(&cfg, scene_seed).map_err(|e| usage(e.to_string()))?;
            let file = format!("{}/scene-{i:05}.json", t.as_str());
            save_scene_file(&scene, &out.join(&file)).map_err(anyhow::Error::from)?;
            manifest.scenes.push(GenEntry { file, room_type: t, seed: scene_seed });
        }
    }
    let path = out.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    log(format!("wrote {} scenes to {}", manifest.scenes.len(), out.display()));
    Ok(())
}

/// Scene files under `path` (a file or a directory, searched recursively),
/// in path order. `manifest.json` files are skipped.
fn scene_paths(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Failure::Data(anyhow!("{} does not exist", path.display())));
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let p = entry.with_context(|| format!("listing {}", dir.display()))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "json") && p.file_name().is_some_and(|n| n != "manifest.json") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn load_scenes(path: &Path) -> Result<Vec<(PathBuf, Scene)>, Failure> {
    let paths = scene_paths(path)?;
    if paths.is_empty() {
        return Err(Failure::Data(anyhow!("no scene files under {}", path.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let s = load_scene_file(&p).map_err(anyhow::Error::from)?;
            Ok((p, s))
        })
        .collect()
}

fn run_config(config: Option<&Path>) -> Result<CoopConfig, Failure> {
    match config {
        Some(p) => read_json(p),
        None => Ok(CoopConfig::default()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: Option<&Path>,
    seed: Option<u64>,
    scenes: &Path,
    out: &Path,
    resume: bool,
    learner: Option<LearnerArg>,
    steps: Option<u64>,
    episodes: Option<u64>,
) -> Result<(), Failure> {
    let scenes: Vec<Scene> = load_scenes(scenes)?.into_iter().map(|(_, s)| s).collect();
    let ckpt = out.join(CHECKPOINT_DIR);
    let metrics_path = out.join(METRICS_FILE);
    let (mut trainer, metrics_file) = if resume {
        if config.is_some() || seed.is_some() || learner.is_some() {
            return Err(usage("--resume continues the saved run config; drop --config/--seed/--learner"));
        }
        let mut trainer = Trainer::resume(&ckpt, scenes).map_err(train_failure)?;
        let mut cfg = trainer.config().clone();
        apply_budget(&mut cfg, steps, episodes);
        trainer = trainer.with_budget(cfg.max_env_steps, cfg.max_episodes);
        let kept = truncate_metrics(&metrics_path, trainer.episode())?;
        log(format!("resuming at episode {} ({kept} metrics lines kept)", trainer.episode()));
        let file = fs::OpenOptions::new()
            .append(true)
            .open(&metrics_path)
            .with_context(|| format!("opening {}", metrics_path.display()))?;
        (trainer, file)
    } else {
        let mut cfg = run_config(config)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(l) = learner {
            cfg.learner = match l {
                LearnerArg::Dqn => LearnerKind::Dqn,
                LearnerArg::Tabular => LearnerKind::Tabular,
            };
        }
        apply_budget(&mut cfg, steps, episodes);
        let trainer = Trainer::new(cfg, scenes).map_err(train_failure)?;
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let file = fs::File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
        (trainer, file)
    };
    log_config("run config", trainer.config());
    let cfg_path = out.join("config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(trainer.config()).expect("config serializes") + "\n")
        .with_context(|| format!("writing {}", cfg_path.display()))?;

    let mut metrics = BufWriter::new(metrics_file);
    let summary = trainer.run(&mut metrics, Some(&ckpt)).map_err(train_failure)?;
    log(format!(
        "trained {} episodes, {} env steps, recent success rate {:.3}; checkpoint in {}",
        summary.episodes,
        summary.env_steps,
        summary.success_rate,
        ckpt.display()
    ));
    Ok(())
}

fn apply_budget(cfg: &mut CoopConfig, steps: Option<u64>, episodes: Option<u64>) {
    if let Some(s) = steps {
        cfg.max_env_steps = s;
    }
    if episodes.is_some() {
        cfg.max_episodes = episodes;
    }
}

/// Keep only the metrics lines of episodes before `episode`, so a resumed
/// run continues the log without gaps or repeats.
fn truncate_metrics(path: &Path, episode: u64) -> Result<usize, Failure> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut kept = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        let v: serde_json::Value =
            serde_json::from_str(&line).with_context(|| format!("malformed line in {}", path.display()))?;
        if v.get("episode").and_then(|e| e.as_u64()).is_some_and(|e| e < episode) {
            kept.push(line);
        }
    }
    let mut text = kept.join("\n");
    if !kept.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("rewriting {}", path.display()))?;
    Ok(kept.len())
}

fn checkpoint_dir(path: &Path) -> PathBuf {
    if path.join(MANIFEST_FILE).is_file() || !path.join(CHECKPOINT_DIR).is_dir() {
        path.to_path_buf()
    } else {
        path.join(CHECKPOINT_DIR)
    }
}

/// The run config for evaluation: `--config` if given, else the config the
/// checkpoint was trained with, else the defaults.
fn eval_config(config: Option<&Path>, checkpoint: Option<&Path>) -> Result<CoopConfig, Failure> {
    if config.is_some() {
        return run_config(config);
    }
    if let Some(dir) = checkpoint {
        let manifest = checkpoint_dir(dir).join(MANIFEST_FILE);
        if manifest.is_file() {
            let m: RunManifest = read_json(&manifest)?;
            return Ok(m.config);
        }
    }
    Ok(CoopConfig::default())
}

fn load_policy_agents(policy: PolicyArg, checkpoint: Option<&Path>) -> Result<Option<[Learner; 2]>, Failure> {
    match (policy, checkpoint) {
        (PolicyArg::Dqn, None) => Err(usage("--policy dqn needs --checkpoint")),
        (PolicyArg::Dqn, Some(dir)) => {
            let agents = load_agents(&checkpoint_dir(dir)).map_err(|e| Failure::Data(e.into()))?;
            Ok(Some(agents))
        }
        _ => Ok(None),
    }
}

fn cmd_eval(
    config: Option<&Path>,
    seed: Option<u64>,
    scenes: &Path,
    checkpoint: Option<&Path>,
    policy: PolicyArg,
    mut opts: EvalOptions,
    out: &Path,
) -> Result<(), Failure> {
    let cfg = eval_config(config, checkpoint)?;
    cfg.validate().map_err(train_failure)?;
    opts.seed = seed.unwrap_or(0);
    let agents = load_policy_agents(policy, checkpoint)?;
    let scenes: Vec<Scene> = load_scenes(scenes)?.into_iter().map(|(_, s)| s).collect();
    log_config("run config", &cfg);
    log_config("eval options", &opts);
    let which = match (&agents, policy) {
        (Some(a), _) => EvalPolicy::Greedy(a),
        (None, PolicyArg::Oracle) => EvalPolicy::Oracle,
        _ => EvalPolicy::Random,
    };
    let report = evaluate(which, &scenes, &cfg, &opts).map_err(|e| match e {
        coplace::eval::EvalError::Train(t) => train_failure(t),
        coplace::eval::EvalError::NoStarts => usage("--starts must be positive"),
        other => Failure::Data(other.into()),
    })?;
    let table = report_table(&report);
    print!("{table}");
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("report.txt"), &table).with_context(|| format!("writing {}", out.display()))?;
    fs::write(out.join("report.json"), report.to_json()).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn cmd_render(
    config: Option<&Path>,
    seed: Option<u64>,
    scenes: &Path,
    out: &Path,
    policy: Option<PolicyArg>,
    checkpoint: Option<&Path>,
    random_start: bool,
) -> Result<(), Failure> {
    let cfg = eval_config(config, checkpoint)?;
    cfg.validate().map_err(train_failure)?;
    let seed = seed.unwrap_or(0);
    let agents = match policy {
        Some(p) => load_policy_agents(p, checkpoint)?,
        None => None,
    };
    log_config("run config", &cfg);
    log(format!("seed {seed}"));
    let scenes = load_scenes(scenes)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (i, (path, scene)) in scenes.iter().enumerate() {
        let scene = if random_start {
            randomize_start(scene, derive_seed(seed, "render", i as u64), cfg.env.step)
        } else {
            scene.clone()
        };
        let (state, trace) = match policy {
            None => (env::reset(scene.clone(), Mode::Test, &cfg.env).map_err(|e| Failure::Data(e.into()))?, None),
            Some(p) => {
                let mut rng = seeding::stream(seed, "render", i as u64);
                let trace = match (&agents, p) {
                    (Some(a), _) => {
                        let [x, y] = greedy_policies(a, &cfg);
                        run_episode(scene.clone(), &x, &y, &cfg, Mode::Test, &mut rng)
                    }
                    (None, PolicyArg::Oracle) => run_episode(scene.clone(), &OraclePolicy, &OraclePolicy, &cfg, Mode::Test, &mut rng),
                    _ => run_episode(scene.clone(), &RandomPolicy, &RandomPolicy, &cfg, Mode::Test, &mut rng),
                }
                .map_err(train_failure)?;
                let end = trace.records.last().map_or(trace.start.center(), |r| r.center);
                let state = env::reset(scene.with_movable_center(end), Mode::Test, &cfg.env)
                    .map_err(|e| Failure::Data(e.into()))?;
                (state, Some(trace))
            }
        };
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
        let name = format!("{}-{stem}.svg", scene.room_type);
        let target = out.join(name);
        let mut f = BufWriter::new(fs::File::create(&target).with_context(|| format!("creating {}", target.display()))?);
        f.write_all(render_svg(&state, trace.as_ref()).as_bytes())
            .and_then(|_| f.flush())
            .with_context(|| format!("writing {}", target.display()))?;
    }
    log(format!("rendered {} scenes to {}", scenes.len(), out.display()));
    Ok(())
}
