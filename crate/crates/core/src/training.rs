//! The cooperative two-agent loop and checkpointed training runs.
//!
//! Each iteration, agent 1 moves the item on the floor plan, then agent 2
//! observes the intermediate state (its y coordinate already reflects the
//! floor-plan move) and moves it vertically. Agent 1 learns from its own
//! surface reward `R1`; agent 2 learns from `theta2 * R1 + theta3 * R2`.
//!
//! # Metrics log
//!
//! One JSON object per line, one line per training episode:
//!
//! ```text
//! {"episode":0,"scene":17,"env_steps":400,"iterations":200,"epsilon":0.99,
//!  "loss_xy":0.012,"loss_yz":null,"reward_xy":0.41,"reward_yz":0.52,
//!  "iou_xy":0.61,"iou_yz":0.83,"iou3d":0.55,"success":false,"success_rate":0.0}
//! ```
//!
//! `loss_*` is the mean pre-update loss over the episode's gradient steps
//! (`null` when none ran), `reward_*` the mean reward as stored for
//! learning, `success_rate` the fraction of successes over the last
//! [`SUCCESS_WINDOW`] episodes.

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    AgentCheckpoint, AgentConfig, AgentError, Experience, Learner, LearnerKind, Percept,
};
use crate::env::{
    self, action_count, actions, observe, valid_actions, ActionMask, EnvConfig, EnvError, EnvState, Mode, Observation,
    SurfaceId,
};
use crate::geometry::{Axes, Box3, Vec3};
use crate::scene::{randomize_start, Scene};
use crate::seeding::{self, Rng};

pub const SUCCESS_WINDOW: usize = 100;
pub const MANIFEST_FORMAT: &str = "coplace-run";
pub const MANIFEST_VERSION: u32 = 1;

pub const SURFACES: [SurfaceId; 2] = [Axes::XY, Axes::YZ];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("non-finite loss for the {surface:?} agent in episode {episode}")]
    NonFiniteLoss { surface: SurfaceId, episode: u64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no training scenes")]
    NoScenes,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Agent 2's training reward.
pub fn coop_reward(r1: f64, r2: f64, theta2: f64, theta3: f64) -> f64 {
    theta2 * r1 + theta3 * r2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoopConfig {
    /// Step size, success threshold, step limit and the reward scale
    /// `theta1`.
    pub env: EnvConfig,
    pub theta2: f64,
    pub theta3: f64,
    pub learner: LearnerKind,
    pub agent_xy: AgentConfig,
    pub agent_yz: AgentConfig,
    /// Stop after this many episodes, if set.
    pub max_episodes: Option<u64>,
    /// Stop once this many accepted moves (both surfaces) have been made.
    pub max_env_steps: u64,
    /// Gradient steps per agent happen every this many iterations.
    pub update_every: u32,
    /// Write a checkpoint every this many episodes (0: only at the end).
    pub checkpoint_every: u64,
    /// Restrict greedy test-mode choices to moves that stay in the room.
    pub mask_test_actions: bool,
    /// Store every transition as non-terminal, so targets bootstrap through
    /// both success and the step limit. Otherwise the episode end is
    /// terminal and the learners are paid more for circling the goal than
    /// for reaching it.
    pub bootstrap_episode_end: bool,
    /// Draw a fresh lattice start each episode; otherwise start where the
    /// scene file places the movable item.
    pub random_starts: bool,
    pub seed: u64,
}

impl Default for CoopConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            theta2: 0.5,
            theta3: 0.5,
            learner: LearnerKind::Dqn,
            agent_xy: AgentConfig::default(),
            agent_yz: AgentConfig::default(),
            max_episodes: None,
            max_env_steps: 50_000,
            update_every: 1,
            checkpoint_every: 50,
            mask_test_actions: true,
            bootstrap_episode_end: true,
            random_starts: true,
            seed: 0,
        }
    }
}

impl CoopConfig {
    pub fn agent(&self, surface: SurfaceId) -> &AgentConfig {
        match surface {
            Axes::XY => &self.agent_xy,
            Axes::YZ => &self.agent_yz,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        for (name, v) in [("env.theta1", self.env.theta1), ("theta2", self.theta2), ("theta3", self.theta3)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive (got {v})"));
            }
        }
        if !(self.env.success_iou > 0.0 && self.env.success_iou <= 1.0) {
            return bad(format!("env.success_iou must be in (0, 1] (got {})", self.env.success_iou));
        }
        if self.env.max_steps == 0 {
            return bad("env.max_steps must be positive".into());
        }
        match self.env.step {
            crate::scene::StepSize::Lattice(0) => return bad("env.step lattice must be positive".into()),
            crate::scene::StepSize::Fixed(d) if !(d > 0.0 && d.is_finite()) => {
                return bad(format!("env.step must be positive (got {d})"))
            }
            _ => {}
        }
        if self.update_every == 0 {
            return bad("update_every must be positive".into());
        }
        for (name, a) in [("agent_xy", &self.agent_xy), ("agent_yz", &self.agent_yz)] {
            if !(0.0..1.0).contains(&a.gamma) {
                return bad(format!("{name}.gamma must be in [0, 1) (got {})", a.gamma));
            }
            if a.lr.is_nan() || a.lr <= 0.0 || a.batch_size == 0 || a.buffer_capacity == 0 || a.hidden.contains(&0) {
                return bad(format!("{name}: lr, batch_size, buffer_capacity and hidden widths must be positive"));
            }
            let e = a.exploration;
            if !(0.0..=1.0).contains(&e.end) || !(0.0..=1.0).contains(&e.start) || e.start < e.end {
                return bad(format!("{name}.exploration needs 1 >= start >= end >= 0"));
            }
            if !(a.tabular_alpha > 0.0 && a.tabular_alpha <= 1.0) {
                return bad(format!("{name}.tabular_alpha must be in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Chooses an action index on one surface.
pub trait Policy {
    /// `allowed` marks the indices the caller accepts: moves that stay in
    /// the room in train mode, every action in test mode.
    fn choose(&self, state: &EnvState, surface: SurfaceId, allowed: ActionMask, rng: &mut Rng)
        -> Result<usize, TrainError>;
}

pub fn percept(state: &EnvState, surface: SurfaceId) -> Percept {
    Percept {
        obs: observe(state, surface),
        cell: state.lattice_cell(surface),
    }
}

/// Epsilon-greedy on a learner's action values.
pub struct LearnedPolicy<'a> {
    pub learner: &'a Learner,
    pub epsilon: f64,
    /// Also exclude moves that would leave the room.
    pub mask_invalid: bool,
}

impl Policy for LearnedPolicy<'_> {
    fn choose(&self, state: &EnvState, surface: SurfaceId, allowed: ActionMask, rng: &mut Rng) -> Result<usize, TrainError> {
        let mut mask = allowed;
        if self.mask_invalid {
            let valid = valid_actions(state, surface);
            for i in 0..mask.len() {
                mask.set(i, mask.get(i) && valid.get(i));
            }
        }
        Ok(self.learner.act(&percept(state, surface), mask, self.epsilon, rng)?)
    }
}

/// Walks straight to the goal on the lattice: x before y on the floor plan.
/// Once aligned it holds position by pushing into a wall when allowed to.
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn choose(&self, state: &EnvState, surface: SurfaceId, allowed: ActionMask, _rng: &mut Rng) -> Result<usize, TrainError> {
        use crate::env::Action::*;
        let [du, dv] = state.lattice_cell(surface);
        let wanted = match surface {
            Axes::XY if du > 0 => Some(Left),
            Axes::XY if du < 0 => Some(Right),
            Axes::XY if dv > 0 => Some(Below),
            Axes::XY if dv < 0 => Some(Up),
            Axes::YZ if dv > 0 => Some(Down),
            Axes::YZ if dv < 0 => Some(Up),
            _ => None,
        };
        let acts = actions(surface);
        if let Some(a) = wanted {
            let i = acts.iter().position(|x| *x == a).expect("surface action");
            if allowed.get(i) {
                return Ok(i);
            }
        }
        let valid = valid_actions(state, surface);
        let hold = allowed.valid_indices().find(|i| !valid.get(*i));
        hold.or_else(|| allowed.valid_indices().next())
            .ok_or(TrainError::Agent(AgentError::NoValidAction))
    }
}

/// Uniform over the allowed actions.
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn choose(&self, _state: &EnvState, _surface: SurfaceId, allowed: ActionMask, rng: &mut Rng) -> Result<usize, TrainError> {
        let idx: Vec<usize> = allowed.valid_indices().collect();
        if idx.is_empty() {
            return Err(AgentError::NoValidAction.into());
        }
        Ok(idx[rng.gen_range(0..idx.len())])
    }
}

/// One move as recorded in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub surface: SurfaceId,
    pub observation: Observation,
    pub action: env::Action,
    /// Reward as stored for learning (blended for agent 2).
    pub reward: f64,
    /// The surface's own reward.
    pub surface_reward: f64,
    pub accepted: bool,
    pub blocked: bool,
    /// Proposals dropped at the room boundary before this move (train mode).
    pub dropped: u32,
    /// Item center after the move.
    pub center: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub next_state: EnvState,
    /// Floor-plan move then elevation move.
    pub records: [MoveRecord; 2],
    /// What each agent learns from this iteration.
    pub experiences: [Experience; 2],
    pub terminal: bool,
    pub success: bool,
}

fn one_move(
    state: &EnvState,
    surface: SurfaceId,
    policy: &dyn Policy,
    cfg: &CoopConfig,
    rng: &mut Rng,
) -> Result<(env::StepOutcome, usize, Percept, u32), TrainError> {
    let seen = percept(state, surface);
    let mut allowed = match state.mode() {
        Mode::Train => valid_actions(state, surface),
        Mode::Test => ActionMask::all(action_count(surface)),
    };
    let mut dropped = 0;
    loop {
        let a = policy.choose(state, surface, allowed, rng)?;
        if !allowed.get(a) {
            return Err(AgentError::ActionOutOfRange { action: a, actions: allowed.len() }.into());
        }
        let out = env::step(state, surface, actions(surface)[a], &cfg.env)?;
        if out.accepted {
            return Ok((out, a, seen, dropped));
        }
        dropped += 1;
        allowed.set(a, false);
    }
}

/// Agent 1 moves on the floor plan, then agent 2 on the elevation. Terminal
/// is decided after both moves.
pub fn run_coop_iteration(
    state: &EnvState,
    agent_xy: &dyn Policy,
    agent_yz: &dyn Policy,
    cfg: &CoopConfig,
    rng: &mut Rng,
) -> Result<IterationOutcome, TrainError> {
    assert!(
        SURFACES.iter().all(|s| state.step_count(*s) < cfg.env.max_steps),
        "run_coop_iteration called past the step limit"
    );
    let (out1, a1, p1, d1) = one_move(state, Axes::XY, agent_xy, cfg, rng)?;
    let mid = out1.next_state.clone();
    let (out2, a2, p2, d2) = one_move(&mid, Axes::YZ, agent_yz, cfg, rng)?;
    let last = out2.next_state.clone();

    let r1 = out1.reward.expect("accepted move has a reward");
    let r2 = out2.reward.expect("accepted move has a reward");
    let blended = coop_reward(r1, r2, cfg.theta2, cfg.theta3);
    let success = last.is_success(cfg.env.success_iou);
    let terminal = is_terminal(&last, &cfg.env);

    let record = |surface, p: &Percept, a: usize, reward, own, out: &env::StepOutcome, dropped| MoveRecord {
        surface,
        observation: p.obs,
        action: actions(surface)[a],
        reward,
        surface_reward: own,
        accepted: out.accepted,
        blocked: out.blocked,
        dropped,
        center: out.next_state.current().center(),
    };
    let records = [
        record(Axes::XY, &p1, a1, r1, r1, &out1, d1),
        record(Axes::YZ, &p2, a2, blended, r2, &out2, d2),
    ];
    let experience = |surface, from, action, reward| Experience {
        from,
        action,
        reward,
        to: percept(&last, surface),
        next_mask: valid_actions(&last, surface),
        terminal: terminal && !cfg.bootstrap_episode_end,
    };
    let experiences = [experience(Axes::XY, p1, a1, r1), experience(Axes::YZ, p2, a2, blended)];
    Ok(IterationOutcome {
        next_state: last,
        records,
        experiences,
        terminal,
        success,
    })
}

pub fn is_terminal(state: &EnvState, cfg: &EnvConfig) -> bool {
    state.is_success(cfg.success_iou) || SURFACES.iter().any(|s| state.step_count(*s) >= cfg.max_steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub start: Box3,
    pub goal: Box3,
    /// Alternating floor-plan and elevation moves.
    pub records: Vec<MoveRecord>,
    pub iou_xy: f64,
    pub iou_yz: f64,
    pub iou3d: f64,
    pub success: bool,
    /// Accepted moves per surface.
    pub steps: [u32; 2],
    /// The episode was cut short by the training budget.
    #[serde(default)]
    pub truncated: bool,
}

impl EpisodeTrace {
    fn new(start: &EnvState) -> Self {
        let mut t = Self {
            start: start.current(),
            goal: *start.goal(),
            records: Vec::new(),
            iou_xy: 0.0,
            iou_yz: 0.0,
            iou3d: 0.0,
            success: false,
            steps: [0; 2],
            truncated: false,
        };
        t.finish(start, false);
        t
    }

    fn finish(&mut self, state: &EnvState, success: bool) {
        self.iou_xy = state.surface_iou(Axes::XY);
        self.iou_yz = state.surface_iou(Axes::YZ);
        self.iou3d = state.iou3d();
        self.success = success;
        self.steps = [state.step_count(Axes::XY), state.step_count(Axes::YZ)];
    }

    pub fn iterations(&self) -> usize {
        self.records.len() / 2
    }

    /// Item centers on one surface: the start, then after each of that
    /// surface's moves.
    pub fn path(&self, surface: SurfaceId) -> Vec<Vec3> {
        std::iter::once(self.start.center())
            .chain(self.records.iter().filter(|r| r.surface == surface).map(|r| r.center))
            .collect()
    }
}

/// Roll out two fixed policies from the scene's current placement, without
/// learning.
pub fn run_episode(
    scene: impl Into<Arc<Scene>>,
    agent_xy: &dyn Policy,
    agent_yz: &dyn Policy,
    cfg: &CoopConfig,
    mode: Mode,
    rng: &mut Rng,
) -> Result<EpisodeTrace, TrainError> {
    let mut state = env::reset(scene, mode, &cfg.env)?;
    let mut trace = EpisodeTrace::new(&state);
    // at least one iteration, even from the goal
    loop {
        let out = run_coop_iteration(&state, agent_xy, agent_yz, cfg, rng)?;
        trace.records.extend(out.records);
        state = out.next_state;
        trace.finish(&state, out.success);
        if out.terminal {
            break;
        }
    }
    Ok(trace)
}

/// Greedy rollouts of trained agents.
pub fn greedy_policies<'a>(agents: &'a [Learner; 2], cfg: &CoopConfig) -> [LearnedPolicy<'a>; 2] {
    [0, 1].map(|i| LearnedPolicy {
        learner: &agents[i],
        epsilon: 0.0,
        mask_invalid: cfg.mask_test_actions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub episode: u64,
    pub scene: usize,
    pub env_steps: u64,
    pub iterations: u64,
    pub epsilon: f64,
    pub loss_xy: Option<f64>,
    pub loss_yz: Option<f64>,
    pub reward_xy: f64,
    pub reward_yz: f64,
    pub iou_xy: f64,
    pub iou_yz: f64,
    pub iou3d: f64,
    pub success: bool,
    pub success_rate: f64,
}

impl MetricsRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// Everything beyond the agents needed to continue a run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub config: CoopConfig,
    pub scene_count: usize,
    pub episode: u64,
    pub env_steps: u64,
    pub explore_rng: Rng,
    pub sample_rng: [Rng; 2],
    pub recent: VecDeque<bool>,
    pub agent_files: [String; 2],
}

pub const AGENT_FILES: [&str; 2] = ["agent-xy.json", "agent-yz.json"];
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub episodes: u64,
    pub env_steps: u64,
    pub success_rate: f64,
}

/// Owns both agents and the run's random streams.
pub struct Trainer {
    cfg: CoopConfig,
    scenes: Vec<Arc<Scene>>,
    agents: [Learner; 2],
    explore: Rng,
    sample: [Rng; 2],
    episode: u64,
    env_steps: u64,
    recent: VecDeque<bool>,
}

impl Trainer {
    pub fn new(cfg: CoopConfig, scenes: Vec<Scene>) -> Result<Self, TrainError> {
        cfg.validate()?;
        if scenes.is_empty() {
            return Err(TrainError::NoScenes);
        }
        for s in &scenes {
            let v = crate::scene::validate_scene(s);
            if !v.is_empty() {
                return Err(EnvError::InvalidScene(v).into());
            }
        }
        let agents = [0, 1].map(|i| {
            let surface = SURFACES[i];
            let mut init = seeding::stream(cfg.seed, "init", i as u64);
            Learner::new(cfg.learner, cfg.agent(surface).clone(), surface, &mut init)
        });
        Ok(Self {
            explore: seeding::stream(cfg.seed, "explore", 0),
            sample: [0, 1].map(|i| seeding::stream(cfg.seed, "sample", i)),
            scenes: scenes.into_iter().map(Arc::new).collect(),
            agents,
            cfg,
            episode: 0,
            env_steps: 0,
            recent: VecDeque::new(),
        })
    }

    /// Continue a run from a checkpoint directory. The scene set must match
    /// the one the run started with.
    pub fn resume(dir: &Path, scenes: Vec<Scene>) -> Result<Self, TrainError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(TrainError::Checkpoint(format!("unsupported manifest {} v{}", m.format, m.version)));
        }
        if m.scene_count != scenes.len() {
            return Err(TrainError::Checkpoint(format!(
                "run used {} scenes, {} given",
                m.scene_count,
                scenes.len()
            )));
        }
        let mut t = Self::new(m.config, scenes)?;
        for i in 0..2 {
            t.agents[i] = AgentCheckpoint::load(&dir.join(&m.agent_files[i]), SURFACES[i])?.learner;
        }
        t.explore = m.explore_rng;
        t.sample = m.sample_rng;
        t.episode = m.episode;
        t.env_steps = m.env_steps;
        t.recent = m.recent;
        Ok(t)
    }

    pub fn config(&self) -> &CoopConfig {
        &self.cfg
    }

    /// Change the stopping budget, e.g. to extend a resumed run.
    pub fn with_budget(mut self, max_env_steps: u64, max_episodes: Option<u64>) -> Self {
        self.cfg.max_env_steps = max_env_steps;
        self.cfg.max_episodes = max_episodes;
        self
    }

    pub fn agents(&self) -> &[Learner; 2] {
        &self.agents
    }

    pub fn into_agents(self) -> [Learner; 2] {
        self.agents
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.agent_xy.exploration.epsilon(self.env_steps)
    }

    pub fn success_rate(&self) -> f64 {
        if self.recent.is_empty() {
            0.0
        } else {
            self.recent.iter().filter(|s| **s).count() as f64 / self.recent.len() as f64
        }
    }

    pub fn done(&self) -> bool {
        self.env_steps + 2 > self.cfg.max_env_steps || self.cfg.max_episodes.is_some_and(|m| self.episode >= m)
    }

    /// Pick this episode's scene and random start.
    fn episode_scene(&self) -> (usize, Scene) {
        let mut pick = seeding::stream(self.cfg.seed, "start", self.episode);
        let idx = pick.gen_range(0..self.scenes.len());
        let start_seed = pick.gen::<u64>();
        let scene = if self.cfg.random_starts {
            randomize_start(&self.scenes[idx], start_seed, self.cfg.env.step)
        } else {
            (*self.scenes[idx]).clone()
        };
        (idx, scene)
    }

    /// One training episode. Returns its trace and metrics line.
    pub fn train_episode(&mut self) -> Result<(EpisodeTrace, MetricsRecord), TrainError> {
        let (scene_idx, scene) = self.episode_scene();
        let mut state = env::reset(scene, Mode::Train, &self.cfg.env)?;
        let mut trace = EpisodeTrace::new(&state);
        let mut losses: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut rewards = [0.0f64; 2];
        let mut iterations = 0u64;
        let eps_start = self.epsilon();
        loop {
            if self.env_steps + 2 > self.cfg.max_env_steps {
                trace.truncated = true;
                break;
            }
            let out = {
                let eps = [0, 1].map(|i| self.cfg.agent(SURFACES[i]).exploration.epsilon(self.env_steps));
                let p1 = LearnedPolicy { learner: &self.agents[0], epsilon: eps[0], mask_invalid: true };
                let p2 = LearnedPolicy { learner: &self.agents[1], epsilon: eps[1], mask_invalid: true };
                run_coop_iteration(&state, &p1, &p2, &self.cfg, &mut self.explore)?
            };
            self.env_steps += 2;
            iterations += 1;
            for i in 0..2 {
                rewards[i] += out.experiences[i].reward;
                self.agents[i].record(&out.experiences[i]);
            }
            if iterations.is_multiple_of(u64::from(self.cfg.update_every)) {
                for i in 0..2 {
                    match self.agents[i].learn(&mut self.sample[i]) {
                        Ok(Some(l)) => losses[i].push(l),
                        Ok(None) => {}
                        Err(AgentError::NonFiniteLoss { .. }) => {
                            return Err(TrainError::NonFiniteLoss {
                                surface: SURFACES[i],
                                episode: self.episode,
                            })
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            trace.records.extend(out.records);
            state = out.next_state;
            trace.finish(&state, out.success);
            if out.terminal {
                break;
            }
        }
        if self.recent.len() == SUCCESS_WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(trace.success);
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let per_iter = |r: f64| if iterations == 0 { 0.0 } else { r / iterations as f64 };
        let record = MetricsRecord {
            episode: self.episode,
            scene: scene_idx,
            env_steps: self.env_steps,
            iterations,
            epsilon: eps_start,
            loss_xy: mean(&losses[0]),
            loss_yz: mean(&losses[1]),
            reward_xy: per_iter(rewards[0]),
            reward_yz: per_iter(rewards[1]),
            iou_xy: trace.iou_xy,
            iou_yz: trace.iou_yz,
            iou3d: trace.iou3d,
            success: trace.success,
            success_rate: self.success_rate(),
        };
        self.episode += 1;
        Ok((trace, record))
    }

    /// Train until the budget is spent, writing one metrics line per episode
    /// and, if `checkpoint_dir` is set, periodic checkpoints. On error the
    /// most recent checkpoint on disk is left untouched.
    pub fn run(&mut self, metrics: &mut dyn Write, checkpoint_dir: Option<&Path>) -> Result<TrainSummary, TrainError> {
        let metrics_err = |source| TrainError::Io {
            path: "metrics log".into(),
            source,
        };
        while !self.done() {
            let (_, record) = self.train_episode()?;
            writeln!(metrics, "{}", record.to_line()).map_err(metrics_err)?;
            if let Some(dir) = checkpoint_dir {
                if self.cfg.checkpoint_every > 0 && self.episode.is_multiple_of(self.cfg.checkpoint_every) {
                    metrics.flush().map_err(metrics_err)?;
                    self.save_checkpoint(dir)?;
                }
            }
        }
        metrics.flush().map_err(metrics_err)?;
        if let Some(dir) = checkpoint_dir {
            self.save_checkpoint(dir)?;
        }
        Ok(TrainSummary {
            episodes: self.episode,
            env_steps: self.env_steps,
            success_rate: self.success_rate(),
        })
    }

    pub fn manifest(&self) -> RunManifest {
        RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            config: self.cfg.clone(),
            scene_count: self.scenes.len(),
            episode: self.episode,
            env_steps: self.env_steps,
            explore_rng: self.explore.clone(),
            sample_rng: self.sample.clone(),
            recent: self.recent.clone(),
            agent_files: AGENT_FILES.map(String::from),
        }
    }

    /// Agent files first, manifest last, each written to a temporary name
    /// and renamed into place.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for i in 0..2 {
            let ck = AgentCheckpoint::new(SURFACES[i], self.agents[i].clone());
            write_atomic(&dir.join(AGENT_FILES[i]), &ck.to_json())?;
        }
        let text = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), &text)
    }
}

fn write_atomic(path: &Path, text: &str) -> Result<(), TrainError> {
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    std::fs::write(&tmp, text).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Load both agents of a checkpoint directory.
pub fn load_agents(dir: &Path) -> Result<[Learner; 2], TrainError> {
    let a = AgentCheckpoint::load(&dir.join(AGENT_FILES[0]), Axes::XY)?.learner;
    let b = AgentCheckpoint::load(&dir.join(AGENT_FILES[1]), Axes::YZ)?.learner;
    Ok([a, b])
}
